//! The local system in effective-Hamiltonian form.
//!
//! A [`LocalSystem`] stores `H_eff = H_sys - i(gamma/2) a^dag a` together with the
//! coupling operator `a` and the waveguide-induced decay rate `gamma`. Frequencies
//! are absolute (hbar = 1, waveguide group velocity 1).

mod eigen;
mod ordering;

pub use eigen::{eigen_decompose, ladder_chain_amplitude, propagator_element, EigenData};
pub use ordering::{
    enumerate_orderings, enumerate_orderings_with_capacity, Op, OrderingClass,
    MAX_ORDERING_PHOTONS,
};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Finite-dimensional local system coupled to a single-mode waveguide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LocalSystemDoc", try_from = "LocalSystemDoc")]
pub struct LocalSystem {
    dim: usize,
    h_eff: CMatrix,
    a_op: CMatrix,
    gamma: f64,
}

impl LocalSystem {
    /// Builds a user-supplied system and checks its invariants: passive spectrum
    /// and an eigenstate annihilated by `a_op`.
    pub fn new(h_eff: CMatrix, a_op: CMatrix, gamma: f64) -> Result<Self> {
        let sys = Self::from_parts(h_eff, a_op, gamma)?;
        // eigen_decompose validates passivity and the annihilated ground state.
        eigen_decompose(&sys)?;
        Ok(sys)
    }

    pub(crate) fn from_parts(h_eff: CMatrix, a_op: CMatrix, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive and finite, got {gamma}"
            )));
        }
        let dim = h_eff.nrows();
        if dim < 1 || h_eff.ncols() != dim || a_op.nrows() != dim || a_op.ncols() != dim {
            return Err(Error::InvalidParameter(format!(
                "h_eff ({}x{}) and a_op ({}x{}) must be square of equal size",
                h_eff.nrows(),
                h_eff.ncols(),
                a_op.nrows(),
                a_op.ncols()
            )));
        }
        if h_eff.iter().chain(a_op.iter()).any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidParameter("non-finite matrix entry".into()));
        }
        Ok(Self {
            dim,
            h_eff,
            a_op,
            gamma,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h_eff(&self) -> &CMatrix {
        &self.h_eff
    }

    pub fn a_op(&self) -> &CMatrix {
        &self.a_op
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Hermitian part of the dynamics, `H_sys = H_eff + i(gamma/2) a^dag a`.
    pub fn h_sys(&self) -> CMatrix {
        let ada = self.a_op.adjoint() * &self.a_op;
        &self.h_eff + ada * Complex64::new(0.0, 0.5 * self.gamma)
    }

    /// True when `[a, a^dag]` is the identity on every level except the top
    /// (truncation) level. Spin-like or otherwise non-bosonic couplings return false.
    pub fn is_bosonic(&self) -> bool {
        let ad = self.a_op.adjoint();
        let comm = &self.a_op * &ad - &ad * &self.a_op;
        let n = self.dim;
        if n < 2 {
            return false;
        }
        let top = n - 1;
        for i in 0..n {
            for j in 0..n {
                if i == top || j == top {
                    continue;
                }
                let want = if i == j { 1.0 } else { 0.0 };
                if (comm[(i, j)] - want).norm() > 1e-10 {
                    return false;
                }
            }
        }
        true
    }
}

/// Kerr cavity `H_eff = alpha n + (chi/2) n(n-1)` with `alpha = omega_c - i gamma/2`,
/// truncated to Fock levels `0..dim`.
pub fn build_kerr(omega_c: f64, chi: f64, gamma: f64, dim: usize) -> Result<LocalSystem> {
    if dim < 2 {
        return Err(Error::InvalidParameter(format!(
            "Kerr truncation needs dim >= 2, got {dim}"
        )));
    }
    if !(omega_c.is_finite() && chi.is_finite()) {
        return Err(Error::InvalidParameter("omega_c and chi must be finite".into()));
    }
    let alpha = Complex64::new(omega_c, -0.5 * gamma);
    let h_eff = CMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            let n = i as f64;
            alpha * n + Complex64::from(0.5 * chi * n * (n - 1.0))
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let a_op = CMatrix::from_fn(dim, dim, |i, j| {
        if j == i + 1 {
            Complex64::from((j as f64).sqrt())
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    LocalSystem::from_parts(h_eff, a_op, gamma)
}

/// On-disk form: dense matrices as `[re, im]` pairs in row-major order.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LocalSystemDoc {
    dim: usize,
    gamma: f64,
    h_eff: Vec<[f64; 2]>,
    a_op: Vec<[f64; 2]>,
}

fn flatten(m: &CMatrix) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            out.push([z.re, z.im]);
        }
    }
    out
}

fn unflatten(dim: usize, data: &[[f64; 2]], name: &str) -> Result<CMatrix> {
    if data.len() != dim * dim {
        return Err(Error::InvalidParameter(format!(
            "{name}: expected {} entries for dim {dim}, got {}",
            dim * dim,
            data.len()
        )));
    }
    Ok(CMatrix::from_fn(dim, dim, |i, j| {
        let [re, im] = data[i * dim + j];
        Complex64::new(re, im)
    }))
}

impl From<LocalSystem> for LocalSystemDoc {
    fn from(s: LocalSystem) -> Self {
        Self {
            dim: s.dim,
            gamma: s.gamma,
            h_eff: flatten(&s.h_eff),
            a_op: flatten(&s.a_op),
        }
    }
}

impl TryFrom<LocalSystemDoc> for LocalSystem {
    type Error = Error;

    fn try_from(doc: LocalSystemDoc) -> Result<Self> {
        let h = unflatten(doc.dim, &doc.h_eff, "h_eff")?;
        let a = unflatten(doc.dim, &doc.a_op, "a_op")?;
        LocalSystem::new(h, a, doc.gamma)
    }
}

impl LocalSystem {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn kerr_linear_diagonal() {
        let sys = build_kerr(0.0, 0.0, 1.0, 4).unwrap();
        let want = [c(0.0, 0.0), c(0.0, -0.5), c(0.0, -1.0), c(0.0, -1.5)];
        for (n, w) in want.iter().enumerate() {
            assert_eq!(sys.h_eff()[(n, n)], *w);
        }
    }

    #[test]
    fn kerr_with_nonlinearity() {
        let sys = build_kerr(1.0, 0.5, 1.0, 3).unwrap();
        assert_eq!(sys.h_eff()[(0, 0)], c(0.0, 0.0));
        assert_eq!(sys.h_eff()[(1, 1)], c(1.0, -0.5));
        assert_eq!(sys.h_eff()[(2, 2)], c(2.5, -1.0));
    }

    #[test]
    fn kerr_ladder_entries() {
        let sys = build_kerr(0.0, 1.0, 1.0, 3).unwrap();
        let a = sys.a_op();
        assert_eq!(a[(0, 1)], c(1.0, 0.0));
        assert_eq!(a[(1, 2)], c(2f64.sqrt(), 0.0));
        let nonzero = a.iter().filter(|z| z.norm() > 0.0).count();
        assert_eq!(nonzero, 2);
        assert!(sys.is_bosonic());
    }

    #[test]
    fn kerr_rejects_bad_parameters() {
        assert!(build_kerr(0.0, 0.0, 0.0, 3).is_err());
        assert!(build_kerr(0.0, 0.0, -1.0, 3).is_err());
        assert!(build_kerr(0.0, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn h_sys_is_hermitian_for_kerr() {
        let sys = build_kerr(0.3, 0.7, 0.4, 4).unwrap();
        let h = sys.h_sys();
        assert!((&h - h.adjoint()).norm() < 1e-14);
    }

    #[test]
    fn spin_one_ladder_is_not_bosonic() {
        let s = 2f64.sqrt();
        let h3 = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(0.0, 0.0),
            c(0.0, -1.0),
            c(0.0, -1.0),
        ]));
        let a3 = CMatrix::from_fn(3, 3, |i, j| if j == i + 1 { c(s, 0.0) } else { c(0.0, 0.0) });
        let spin = LocalSystem::new(h3, a3, 1.0).unwrap();
        assert!(!spin.is_bosonic());
    }

    #[test]
    fn rejects_active_system() {
        let h = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.5)]);
        let a = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(LocalSystem::new(h, a, 1.0).is_err());
    }

    #[test]
    fn rejects_missing_vacuum() {
        let h = CMatrix::from_row_slice(2, 2, &[c(0.0, -0.1), c(0.0, 0.0), c(0.0, 0.0), c(0.0, -0.5)]);
        let a = CMatrix::from_element(2, 2, c(1.0, 0.0));
        assert!(LocalSystem::new(h, a, 1.0).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let sys = build_kerr(0.123456789012345, 1.0 / 3.0, 0.7, 4).unwrap();
        let text = sys.to_json().unwrap();
        let back = LocalSystem::from_json(&text).unwrap();
        assert_eq!(sys, back);
    }

    #[test]
    fn json_rejects_wrong_length() {
        let text = r#"{"dim":2,"gamma":1.0,"h_eff":[[0,0]],"a_op":[[0,0],[1,0],[0,0],[0,0]]}"#;
        assert!(LocalSystem::from_json(text).is_err());
    }
}
