use nalgebra::{DVector, Schur};
use num_complex::Complex64;

use super::{CMatrix, LocalSystem, Op, OrderingClass};
use crate::error::{Error, Result};

/// Eigenvectors with a condition number above this are treated as defective.
pub const MAX_EIGENVECTOR_CONDITION: f64 = 1e12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Biorthogonal eigen-decomposition of `H_eff`.
///
/// Right eigenvectors are the columns of `right_vectors` (unit norm); left
/// eigenvectors are the columns of `left_vectors`, normalised so that
/// `left^dag right = I`. Eigenpairs are ordered by the basis state that dominates
/// each right eigenvector, ties broken by `(Re E, Im E)`. For a diagonal `H_eff`
/// this is the input basis order.
#[derive(Debug, Clone)]
pub struct EigenData {
    pub energies: Vec<Complex64>,
    pub right_vectors: CMatrix,
    pub left_vectors: CMatrix,
    /// `<m_L| a |n_R>`
    pub a_elements: CMatrix,
    /// `<m_L| a^dag |n_R>`; differs from the adjoint of `a_elements` when the
    /// eigenbasis is not orthonormal.
    pub adag_elements: CMatrix,
    /// Index of the eigenstate annihilated by `a` (the vacuum).
    pub ground: usize,
    pub gamma: f64,
    pub condition: f64,
}

impl EigenData {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// Energy measured from the vacuum energy.
    pub fn relative_energy(&self, n: usize) -> Complex64 {
        self.energies[n] - self.energies[self.ground]
    }

    /// `max |left^dag right - I|`.
    pub fn biorthogonality_residual(&self) -> f64 {
        let prod = self.left_vectors.adjoint() * &self.right_vectors;
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { ONE } else { ZERO };
                worst = worst.max((prod[(i, j)] - want).norm());
            }
        }
        worst
    }

    pub(crate) fn op_elements(&self, op: Op) -> &CMatrix {
        match op {
            Op::Annihilate => &self.a_elements,
            Op::Create => &self.adag_elements,
        }
    }

    /// `exp(-i H_eff t)` in the original basis.
    pub fn propagator_matrix(&self, t: f64) -> Result<CMatrix> {
        check_time(t)?;
        let n = self.dim();
        let phases = DVector::from_iterator(
            n,
            self.energies.iter().map(|e| (Complex64::new(0.0, -1.0) * e * t).exp()),
        );
        let mut scaled = self.right_vectors.clone();
        for j in 0..n {
            for z in scaled.column_mut(j).iter_mut() {
                *z *= phases[j];
            }
        }
        Ok(scaled * self.left_vectors.adjoint())
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!(
            "propagation time must be finite and nonnegative, got {t}"
        )));
    }
    Ok(())
}

fn is_upper_triangular(m: &CMatrix) -> bool {
    (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == ZERO))
}

/// Eigenvectors of an upper-triangular matrix by back substitution.
fn triangular_eigenvectors(t: &CMatrix) -> CMatrix {
    let n = t.nrows();
    let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let tiny = f64::EPSILON * scale;
    let mut v = CMatrix::zeros(n, n);
    for k in 0..n {
        let lambda = t[(k, k)];
        v[(k, k)] = ONE;
        for i in (0..k).rev() {
            let mut acc = ZERO;
            for j in (i + 1)..=k {
                acc += t[(i, j)] * v[(j, k)];
            }
            let mut denom = t[(i, i)] - lambda;
            if denom.norm() < tiny {
                // Degenerate diagonal: perturb, the condition check rejects
                // genuinely defective input afterwards.
                denom = Complex64::new(tiny, 0.0);
            }
            v[(i, k)] = -acc / denom;
        }
    }
    v
}

fn condition_number(m: &CMatrix) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// General (non-Hermitian) eigen-decomposition of `sys.h_eff`.
pub fn eigen_decompose(sys: &LocalSystem) -> Result<EigenData> {
    let h = sys.h_eff();
    let n = sys.dim();
    let (q, t) = if is_upper_triangular(h) {
        (CMatrix::identity(n, n), h.clone())
    } else {
        Schur::new(h.clone()).unpack()
    };
    let mut right = q * triangular_eigenvectors(&t);
    for j in 0..n {
        let norm = right.column(j).norm();
        for z in right.column_mut(j).iter_mut() {
            *z /= norm;
        }
    }
    let energies_raw: Vec<Complex64> = (0..n).map(|k| t[(k, k)]).collect();

    // Deterministic order: dominant basis component, then (Re, Im).
    let dominant = |j: usize| -> usize {
        let col = right.column(j);
        let mut best = 0;
        for i in 1..n {
            if col[i].norm_sqr() > col[best].norm_sqr() * (1.0 + 1e-12) {
                best = i;
            }
        }
        best
    };
    let mut order: Vec<usize> = (0..n).collect();
    let keys: Vec<usize> = (0..n).map(dominant).collect();
    order.sort_by(|&x, &y| {
        keys[x]
            .cmp(&keys[y])
            .then(energies_raw[x].re.total_cmp(&energies_raw[y].re))
            .then(energies_raw[x].im.total_cmp(&energies_raw[y].im))
    });
    let energies: Vec<Complex64> = order.iter().map(|&j| energies_raw[j]).collect();
    let right = CMatrix::from_fn(n, n, |i, j| right[(i, order[j])]);

    let condition = condition_number(&right);
    if !(condition <= MAX_EIGENVECTOR_CONDITION) {
        return Err(Error::NearDefective {
            condition,
            limit: MAX_EIGENVECTOR_CONDITION,
        });
    }
    let inverse = right
        .clone()
        .try_inverse()
        .ok_or(Error::NearDefective {
            condition: f64::INFINITY,
            limit: MAX_EIGENVECTOR_CONDITION,
        })?;
    let left = inverse.adjoint();

    let gamma = sys.gamma();
    let scale = energies.iter().map(|e| e.norm()).fold(1.0f64, f64::max);
    if let Some(e) = energies.iter().find(|e| e.im > 1e-10 * scale) {
        return Err(Error::InvalidParameter(format!(
            "H_eff has a growing mode (eigenvalue {e}); the system must be passive"
        )));
    }

    let a = sys.a_op();
    let a_scale = a.norm().max(1.0);
    let (ground, residual) = (0..n)
        .map(|j| (j, (a * right.column(j)).norm()))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("dim >= 1");
    if residual > 1e-12 * a_scale {
        return Err(Error::InvalidParameter(format!(
            "no eigenstate of H_eff is annihilated by a (best residual {residual:.3e})"
        )));
    }
    if energies[ground].im.abs() > 1e-12 * gamma.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "vacuum energy {} is not real",
            energies[ground]
        )));
    }

    let a_elements = &inverse * a * &right;
    let adag_elements = &inverse * a.adjoint() * &right;

    Ok(EigenData {
        energies,
        right_vectors: right,
        left_vectors: left,
        a_elements,
        adag_elements,
        ground,
        gamma,
        condition,
    })
}

/// `<m| exp(-i H_eff t) |n>` in the original basis, `t >= 0`.
pub fn propagator_element(eig: &EigenData, m: usize, n: usize, t: f64) -> Result<Complex64> {
    check_time(t)?;
    let dim = eig.dim();
    if m >= dim || n >= dim {
        return Err(Error::Domain(format!(
            "index ({m}, {n}) out of range for dim {dim}"
        )));
    }
    let mut acc = ZERO;
    for j in 0..dim {
        let phase = (Complex64::new(0.0, -1.0) * eig.energies[j] * t).exp();
        acc += eig.right_vectors[(m, j)] * phase * eig.left_vectors[(n, j)].conj();
    }
    Ok(acc)
}

/// Vacuum expectation `<0| O_1(t_1) ... O_2N(t_2N) |0>` for effective-Hamiltonian
/// Heisenberg operators, times given in non-increasing order (leftmost latest).
pub fn ladder_chain_amplitude(
    eig: &EigenData,
    ordering: &OrderingClass,
    times: &[f64],
) -> Result<Complex64> {
    let ops = ordering.pattern();
    if times.len() != ops.len() {
        return Err(Error::Domain(format!(
            "ordering has {} operators but {} times were given",
            ops.len(),
            times.len()
        )));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Domain("non-finite time".into()));
    }
    if times.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Domain(
            "times must be in non-increasing order (sort before calling)".into(),
        ));
    }
    let dim = eig.dim();
    let mut state = DVector::<Complex64>::zeros(dim);
    state[eig.ground] = ONE;
    for j in (0..ops.len()).rev() {
        state = eig.op_elements(ops[j]) * state;
        if j > 0 {
            let gap = times[j - 1] - times[j];
            for n in 0..dim {
                state[n] *= (Complex64::new(0.0, -1.0) * eig.relative_energy(n) * gap).exp();
            }
        }
    }
    Ok(state[eig.ground])
}
