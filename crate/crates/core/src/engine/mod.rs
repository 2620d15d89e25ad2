//! Frequency-domain Green functions of the waveguide + local-system problem.
//!
//! Every time-ordered sector of the `2N`-point function becomes, after the
//! Fourier transform, a constant times a product of gap resolvents
//! `i / (F_g - E_g + i0)`, where `F_g` is the net external frequency carried by
//! the operators left of gap `g` and `E_g` the (complex) energy of the
//! intermediate eigenstate. The overall time translation yields
//! `2 pi delta(sum p - sum k)`, which is stripped off. Vacuum gaps have real
//! energy and split into a principal value and a delta; the all-principal-value
//! part is the connected density.

mod distribution;
mod sector;

pub use distribution::{expand_to_distribution, Block, BlockFactor, DistributionTerm, Monomial};
pub use sector::{
    enumerate_sector_terms, enumerate_sector_terms_with_capacity, Gap, SectorTerm,
    MAX_ENGINE_PHOTONS,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{
    eigen_decompose, ladder_chain_amplitude, EigenData, LocalSystem, Op, OrderingClass,
};

/// Principal-value denominators below this (times gamma) are near-singular.
pub const NEAR_SINGULAR_TOL: f64 = 1e-7;
/// Offset (times gamma) used for symmetric averaging around near-singular points.
pub const NEAR_SINGULAR_OFFSET: f64 = 1e-4;

/// On-shell tolerance `|sum p - sum k| <= ON_SHELL_TOL * max(1, gamma)`.
pub const ON_SHELL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyConfig {
    pub p: Vec<f64>,
    pub k: Vec<f64>,
}

impl FrequencyConfig {
    pub fn new(p: Vec<f64>, k: Vec<f64>) -> Result<Self> {
        if p.len() != k.len() || p.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "need equal, nonzero numbers of outputs and inputs (got {} and {})",
                p.len(),
                k.len()
            )));
        }
        if p.iter().chain(&k).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite frequency".into()));
        }
        Ok(Self { p, k })
    }

    pub fn n_photons(&self) -> usize {
        self.p.len()
    }

    pub fn mismatch(&self) -> f64 {
        self.p.iter().sum::<f64>() - self.k.iter().sum::<f64>()
    }

    pub fn check_on_shell(&self, gamma: f64) -> Result<()> {
        check_on_shell(&self.p, &self.k, gamma)
    }
}

pub fn check_on_shell(p: &[f64], k: &[f64], gamma: f64) -> Result<()> {
    let mismatch = p.iter().sum::<f64>() - k.iter().sum::<f64>();
    let tolerance = ON_SHELL_TOL * gamma.max(1.0);
    if !(mismatch.abs() <= tolerance) {
        return Err(Error::OffShell {
            mismatch,
            tolerance,
        });
    }
    Ok(())
}

/// `sum_{i in out_mask} p_i - sum_{j in in_mask} k_j`.
pub fn masked_flow(out_mask: u32, in_mask: u32, p: &[f64], k: &[f64]) -> f64 {
    sector::flow(out_mask, in_mask, p, k)
}

/// A density together with the flag raised when it was obtained by symmetric
/// averaging around a near-singular point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityValue {
    pub value: Complex64,
    pub near_singular: bool,
}

/// Neumaier-compensated complex summation.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    re: (f64, f64),
    im: (f64, f64),
}

fn neumaier(acc: &mut (f64, f64), x: f64) {
    let t = acc.0 + x;
    if acc.0.abs() >= x.abs() {
        acc.1 += (acc.0 - t) + x;
    } else {
        acc.1 += (x - t) + acc.0;
    }
    acc.0 = t;
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, z: Complex64) {
        neumaier(&mut self.re, z.re);
        neumaier(&mut self.im, z.im);
    }

    pub(crate) fn total(&self) -> Complex64 {
        Complex64::new(self.re.0 + self.re.1, self.im.0 + self.im.1)
    }
}

/// Fixed, generic on-shell unit direction used to step off singular manifolds.
pub fn generic_direction(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dp: Vec<f64> = (0..n).map(|i| (1.7 * i as f64 + 0.31).sin()).collect();
    let mut dk: Vec<f64> = (0..n).map(|j| (2.3 * j as f64 + 0.97).cos()).collect();
    let shift = (dp.iter().sum::<f64>() - dk.iter().sum::<f64>()) / n as f64;
    dk.iter_mut().for_each(|x| *x += shift);
    let norm = dp.iter().chain(&dk).map(|x| x * x).sum::<f64>().sqrt();
    dp.iter_mut().chain(dk.iter_mut()).for_each(|x| *x /= norm);
    (dp, dk)
}

/// Engine for a fixed system and photon number; immutable after construction and
/// safe to share across threads.
#[derive(Debug, Clone)]
pub struct ScatteringEngine {
    eig: EigenData,
    n_photons: usize,
    terms: Vec<SectorTerm>,
    /// Distinct flows of real-energy gaps (the principal-value manifolds).
    pv_flows: Vec<(u32, u32)>,
}

impl ScatteringEngine {
    pub fn new(sys: &LocalSystem, n_photons: usize) -> Result<Self> {
        Self::from_eigen(eigen_decompose(sys)?, n_photons)
    }

    pub fn from_eigen(eig: EigenData, n_photons: usize) -> Result<Self> {
        if n_photons == 0 {
            return Err(Error::InvalidParameter("photon number must be positive".into()));
        }
        let terms = enumerate_sector_terms(&eig, n_photons)?;
        let mut pv_flows = Vec::new();
        for t in &terms {
            for (i, g) in t.gaps.iter().enumerate() {
                if !g.real {
                    continue;
                }
                if !g.is_balanced() || g.energy.re.abs() > 1e-12 * g.energy.norm().max(1.0) {
                    return Err(Error::UnsupportedRealEnergy {
                        state: t.chain[i + 1],
                        energy: g.energy.re,
                    });
                }
                pv_flows.push((g.out_mask, g.in_mask));
            }
        }
        pv_flows.sort_unstable();
        pv_flows.dedup();
        Ok(Self {
            eig,
            n_photons,
            terms,
            pv_flows,
        })
    }

    pub fn n_photons(&self) -> usize {
        self.n_photons
    }

    pub fn eigen(&self) -> &EigenData {
        &self.eig
    }

    pub fn terms(&self) -> &[SectorTerm] {
        &self.terms
    }

    pub fn gamma(&self) -> f64 {
        self.eig.gamma
    }

    pub fn distribution(&self) -> Result<Vec<DistributionTerm>> {
        expand_to_distribution(&self.terms)
    }

    /// Smallest principal-value denominator at the point.
    pub fn min_pv_distance(&self, p: &[f64], k: &[f64]) -> f64 {
        self.pv_flows
            .iter()
            .map(|&(o, i)| sector::flow(o, i, p, k).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Sum of all sector terms with every factor read literally; equals the
    /// connected density away from principal-value manifolds.
    pub fn raw_density(&self, p: &[f64], k: &[f64]) -> Complex64 {
        let mut acc = CompensatedSum::default();
        for t in &self.terms {
            acc.add(t.evaluate(p, k));
        }
        acc.total()
    }

    pub fn connected_density(&self, cfg: &FrequencyConfig) -> Result<DensityValue> {
        if cfg.n_photons() != self.n_photons {
            return Err(Error::InvalidParameter(format!(
                "engine built for {} photons, configuration has {}",
                self.n_photons,
                cfg.n_photons()
            )));
        }
        cfg.check_on_shell(self.gamma())?;
        let gamma = self.gamma();
        if self.min_pv_distance(&cfg.p, &cfg.k) >= NEAR_SINGULAR_TOL * gamma {
            return Ok(DensityValue {
                value: self.raw_density(&cfg.p, &cfg.k),
                near_singular: false,
            });
        }
        let (dp, dk) = generic_direction(self.n_photons);
        let eps = NEAR_SINGULAR_OFFSET * gamma;
        let shifted = |sign: f64| {
            let p: Vec<f64> = cfg.p.iter().zip(&dp).map(|(x, d)| x + sign * eps * d).collect();
            let k: Vec<f64> = cfg.k.iter().zip(&dk).map(|(x, d)| x + sign * eps * d).collect();
            self.raw_density(&p, &k)
        };
        Ok(DensityValue {
            value: 0.5 * (shifted(1.0) + shifted(-1.0)),
            near_singular: true,
        })
    }
}

pub fn connected_density(sys: &LocalSystem, cfg: &FrequencyConfig) -> Result<DensityValue> {
    ScatteringEngine::new(sys, cfg.n_photons())?.connected_density(cfg)
}

/// `(-gamma)^N <0| T a(t'_1)..a(t'_N) a^dag(t_1)..a^dag(t_N) |0>` with effective
/// Heisenberg operators. At equal times annihilation operators are placed left.
pub fn green_time_domain(sys: &LocalSystem, t_out: &[f64], t_in: &[f64]) -> Result<Complex64> {
    green_time_domain_eigen(&eigen_decompose(sys)?, t_out, t_in)
}

pub fn green_time_domain_eigen(eig: &EigenData, t_out: &[f64], t_in: &[f64]) -> Result<Complex64> {
    if t_out.len() != t_in.len() || t_out.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "need equal, nonzero numbers of output and input times (got {} and {})",
            t_out.len(),
            t_in.len()
        )));
    }
    let mut ops: Vec<(f64, Op)> = t_out
        .iter()
        .map(|&t| (t, Op::Annihilate))
        .chain(t_in.iter().map(|&t| (t, Op::Create)))
        .collect();
    if ops.iter().any(|(t, _)| !t.is_finite()) {
        return Err(Error::Domain("non-finite time".into()));
    }
    ops.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let pattern: Vec<Op> = ops.iter().map(|x| x.1).collect();
    let Ok(ordering) = OrderingClass::new(pattern) else {
        return Ok(Complex64::new(0.0, 0.0));
    };
    let times: Vec<f64> = ops.iter().map(|x| x.0).collect();
    let amp = ladder_chain_amplitude(eig, &ordering, &times)?;
    Ok(amp * (-eig.gamma).powi(t_out.len() as i32))
}
