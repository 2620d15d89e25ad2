//! Closed-form scattering amplitudes of a Kerr-nonlinear cavity,
//! `H_sys = omega_c a^dag a + (chi/2) a^dag a^dag a a`.
//!
//! All connected amplitudes are densities: the overall `delta(sum p - sum k)` is
//! implied.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::combinatorics::permutations;
use crate::engine::{check_on_shell, generic_direction, NEAR_SINGULAR_OFFSET, NEAR_SINGULAR_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KerrParams {
    pub omega_c: f64,
    pub chi: f64,
    pub gamma: f64,
}

impl KerrParams {
    pub fn new(omega_c: f64, chi: f64, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive and finite, got {gamma}"
            )));
        }
        if !(omega_c.is_finite() && chi.is_finite()) {
            return Err(Error::InvalidParameter("omega_c and chi must be finite".into()));
        }
        Ok(Self {
            omega_c,
            chi,
            gamma,
        })
    }

    /// `alpha = omega_c - i gamma/2`.
    pub fn alpha(&self) -> Complex64 {
        Complex64::new(self.omega_c, -0.5 * self.gamma)
    }

    /// `s_x = -i gamma / (x - alpha)` for any real `x`, including combination
    /// frequencies that are not themselves photon frequencies.
    pub fn s(&self, x: f64) -> Complex64 {
        Complex64::new(0.0, -self.gamma) / (Complex64::from(x) - self.alpha())
    }

    /// `1 / (x - 2 alpha - chi)`: two-photon pole.
    fn d2(&self, x: f64) -> Complex64 {
        1.0 / (Complex64::from(x) - 2.0 * self.alpha() - self.chi)
    }

    /// `1 / (x - 3 alpha - 3 chi)`: three-photon pole.
    fn d3(&self, x: f64) -> Complex64 {
        1.0 / (Complex64::from(x) - 3.0 * self.alpha() - 3.0 * self.chi)
    }
}

/// Full single-photon transmission `1 + s_k`; unit modulus for real `k`.
pub fn single_photon_s(params: &KerrParams, k: f64) -> Complex64 {
    1.0 + params.s(k)
}

pub fn connected_two_photon(params: &KerrParams, p1: f64, p2: f64, k1: f64, k2: f64) -> Result<Complex64> {
    check_on_shell(&[p1, p2], &[k1, k2], params.gamma)?;
    Ok(two_photon_density(params, p1, p2, k1, k2))
}

fn two_photon_density(params: &KerrParams, p1: f64, p2: f64, k1: f64, k2: f64) -> Complex64 {
    -params.chi / (PI * params.gamma) * params.s(p1) * params.s(p2) * (params.s(k1) + params.s(k2))
        * params.d2(k1 + k2)
}

/// Connected three-photon density with its five ordering-type contributions.
///
/// Types, left to right latest to earliest:
/// 1. `a a+ a a+ a a+`, 2. `a a a+ a+ a a+`, 3. `a a+ a a a+ a+`,
/// 4. `a a a+ a a+ a+`, 5. `a a a a+ a+ a+`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreePhotonValue {
    pub value: Complex64,
    /// Absent when the point is near-singular and the value was averaged.
    pub sectors: Option<[Complex64; 5]>,
    pub near_singular: bool,
}

pub fn connected_three_photon(params: &KerrParams, p: [f64; 3], k: [f64; 3]) -> Result<ThreePhotonValue> {
    check_on_shell(&p, &k, params.gamma)?;
    let min_pv = p
        .iter()
        .flat_map(|pi| k.iter().map(move |kj| (pi - kj).abs()))
        .fold(f64::INFINITY, f64::min);
    if min_pv >= NEAR_SINGULAR_TOL * params.gamma {
        let sectors = three_photon_sectors(params, p, k);
        return Ok(ThreePhotonValue {
            value: sectors.iter().sum(),
            sectors: Some(sectors),
            near_singular: false,
        });
    }
    let (dp, dk) = generic_direction(3);
    let eps = NEAR_SINGULAR_OFFSET * params.gamma;
    let shifted = |sign: f64| -> Complex64 {
        let ps = [0, 1, 2].map(|i| p[i] + sign * eps * dp[i]);
        let ks = [0, 1, 2].map(|i| k[i] + sign * eps * dk[i]);
        three_photon_sectors(params, ps, ks).iter().sum()
    };
    Ok(ThreePhotonValue {
        value: 0.5 * (shifted(1.0) + shifted(-1.0)),
        sectors: None,
        near_singular: true,
    })
}

/// Per-type sums over input permutations `P` (outer) and output permutations `Q`
/// (inner), both lexicographic. Principal values are read as plain reciprocals.
pub fn three_photon_sectors(params: &KerrParams, p: [f64; 3], k: [f64; 3]) -> [Complex64; 5] {
    let s = |x: f64| params.s(x);
    let pi2 = PI * PI;
    let mut m = [Complex64::new(0.0, 0.0); 5];
    let perms = permutations(3);
    for pp in &perms {
        let (kp1, kp2, kp3) = (k[pp[0]], k[pp[1]], k[pp[2]]);
        for q in &perms {
            let (pq1, pq2, pq3) = (p[q[0]], p[q[1]], p[q[2]]);
            let common = s(pq1) * s(kp2 + kp3 - pq3) * s(kp3);
            let pv3 = 1.0 / (pq3 - kp3);
            let pv1 = 1.0 / (pq1 - kp1);
            let out_pole = params.d2(pq1 + pq2);
            let in_pole = params.d2(kp2 + kp3);
            m[0] += common * pv3 * pv1 / (4.0 * pi2);
            m[1] += common * pv3 * out_pole / (2.0 * pi2);
            m[2] -= common * pv1 * in_pole / (2.0 * pi2);
            m[3] -= common * out_pole * in_pole / pi2;
            m[4] += Complex64::new(0.0, 3.0 * params.gamma) / (2.0 * pi2)
                * s(pq1)
                * s(kp3)
                * params.d3(kp1 + kp2 + kp3)
                * out_pole
                * in_pole;
        }
    }
    m
}
