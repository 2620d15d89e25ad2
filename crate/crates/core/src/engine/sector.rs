use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::combinatorics::permutations;
use crate::error::{Error, Result};
use crate::system::{enumerate_orderings_with_capacity, EigenData, Op, OrderingClass};

/// Capacity of the general engine.
pub const MAX_ENGINE_PHOTONS: usize = 4;

/// Relative threshold (in units of gamma) below which an imaginary part counts as zero.
pub(crate) const REAL_ENERGY_TOL: f64 = 1e-12;

/// Resolvent factor `i / (F - E + i0)` between two consecutive operators.
///
/// The flow `F = sum_{i in out_mask} p_i - sum_{j in in_mask} k_j` collects the
/// external frequencies carried by the operators to the left of the gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gap {
    pub out_mask: u32,
    pub in_mask: u32,
    /// Energy of the intermediate state relative to the vacuum.
    pub energy: Complex64,
    /// Exactly real energy: the factor splits into `iP/(F - E) + pi delta(F - E)`.
    pub real: bool,
}

impl Gap {
    pub fn flow(&self, p: &[f64], k: &[f64]) -> f64 {
        flow(self.out_mask, self.in_mask, p, k)
    }

    /// `i / (F - E)`, with real energies read as a principal value.
    pub fn factor(&self, p: &[f64], k: &[f64]) -> Complex64 {
        Complex64::i() / (Complex64::from(self.flow(p, k)) - self.energy)
    }

    /// Number of operators left of the gap; a gap with equal counts is balanced.
    pub fn is_balanced(&self) -> bool {
        self.out_mask.count_ones() == self.in_mask.count_ones()
    }
}

/// Frequency flow through a subset of outputs and inputs. A balanced subset and
/// its complement carry opposite flows on shell; both are evaluated through the
/// member without the last output so that the two come out exactly opposite in
/// floating point and their principal values cancel to roundoff.
pub(crate) fn flow(out_mask: u32, in_mask: u32, p: &[f64], k: &[f64]) -> f64 {
    let n = p.len();
    if n > 0 && k.len() == n && out_mask >> (n - 1) & 1 == 1 && out_mask.count_ones() == in_mask.count_ones() {
        let full = (1u32 << n) - 1;
        return -(masked_sum(!out_mask & full, p) - masked_sum(!in_mask & full, k));
    }
    masked_sum(out_mask, p) - masked_sum(in_mask, k)
}

pub(crate) fn masked_sum(mask: u32, x: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, v)| v)
        .sum()
}

/// One (ordering, slot assignment, eigenstate chain) contribution to the
/// frequency-domain Green function.
#[derive(Debug, Clone, Serialize)]
pub struct SectorTerm {
    pub ordering: OrderingClass,
    /// Output index placed on each annihilation slot, left to right.
    pub out_perm: Vec<usize>,
    /// Input index placed on each creation slot, left to right.
    pub in_perm: Vec<usize>,
    /// `2N + 1` eigenstates; `chain[g]` sits right of operator `g - 1`.
    pub chain: Vec<usize>,
    /// Matrix element of each operator between its neighbouring chain states.
    pub elements: Vec<Complex64>,
    pub gamma: f64,
    pub coefficient: Complex64,
    pub gaps: Vec<Gap>,
}

impl SectorTerm {
    pub fn n_photons(&self) -> usize {
        self.out_perm.len()
    }

    /// Smooth density at a generic point: every factor evaluated as written.
    pub fn evaluate(&self, p: &[f64], k: &[f64]) -> Complex64 {
        self.gaps
            .iter()
            .fold(self.coefficient, |acc, g| acc * g.factor(p, k))
    }
}

pub fn enumerate_sector_terms(eig: &EigenData, n_photons: usize) -> Result<Vec<SectorTerm>> {
    enumerate_sector_terms_with_capacity(eig, n_photons, MAX_ENGINE_PHOTONS)
}

pub fn enumerate_sector_terms_with_capacity(
    eig: &EigenData,
    n_photons: usize,
    max_photons: usize,
) -> Result<Vec<SectorTerm>> {
    if n_photons > max_photons {
        return Err(Error::Capacity {
            what: "scattering engine photon number",
            requested: n_photons,
            maximum: max_photons,
        });
    }
    let orderings = enumerate_orderings_with_capacity(n_photons, max_photons)?;
    let n = n_photons;
    let prefactor = Complex64::from((-eig.gamma).powi(n as i32) * (2.0 * PI).powi(1 - n as i32));
    let scale = eig
        .a_elements
        .iter()
        .chain(eig.adag_elements.iter())
        .fold(0.0f64, |m, z| m.max(z.norm()));
    let zero_tol = 1e-13 * scale.max(1.0);
    let perms = permutations(n);

    let mut out = Vec::new();
    for ordering in &orderings {
        let chains = eigen_chains(eig, ordering.pattern(), zero_tol);
        for (chain, amplitude) in &chains {
            for q in &perms {
                for pp in &perms {
                    let gaps = build_gaps(eig, ordering.pattern(), chain, q, pp);
                    let elements = ordering
                        .pattern()
                        .iter()
                        .enumerate()
                        .map(|(j, &op)| eig.op_elements(op)[(chain[j], chain[j + 1])])
                        .collect();
                    out.push(SectorTerm {
                        ordering: ordering.clone(),
                        out_perm: q.clone(),
                        in_perm: pp.clone(),
                        chain: chain.clone(),
                        elements,
                        gamma: eig.gamma,
                        coefficient: prefactor * amplitude,
                        gaps,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Eigenstate chains from vacuum to vacuum with nonzero matrix-element product.
fn eigen_chains(eig: &EigenData, ops: &[Op], zero_tol: f64) -> Vec<(Vec<usize>, Complex64)> {
    let len = ops.len();
    let mut chain = vec![0usize; len + 1];
    chain[len] = eig.ground;
    let mut out = Vec::new();
    walk(eig, ops, zero_tol, len, &mut chain, Complex64::from(1.0), &mut out);
    out
}

// Fills chain[pos - 1] given chain[pos], moving leftwards.
fn walk(
    eig: &EigenData,
    ops: &[Op],
    zero_tol: f64,
    pos: usize,
    chain: &mut Vec<usize>,
    amp: Complex64,
    out: &mut Vec<(Vec<usize>, Complex64)>,
) {
    if pos == 0 {
        if chain[0] == eig.ground {
            out.push((chain.clone(), amp));
        }
        return;
    }
    let elements = eig.op_elements(ops[pos - 1]);
    let right = chain[pos];
    let candidates: Vec<usize> = if pos == 1 {
        vec![eig.ground]
    } else {
        (0..eig.dim()).collect()
    };
    for m in candidates {
        let e = elements[(m, right)];
        if e.norm() > zero_tol {
            chain[pos - 1] = m;
            walk(eig, ops, zero_tol, pos - 1, chain, amp * e, out);
        }
    }
}

fn build_gaps(
    eig: &EigenData,
    ops: &[Op],
    chain: &[usize],
    out_perm: &[usize],
    in_perm: &[usize],
) -> Vec<Gap> {
    let mut gaps = Vec::with_capacity(ops.len() - 1);
    let (mut out_mask, mut in_mask) = (0u32, 0u32);
    let (mut na, mut nc) = (0usize, 0usize);
    for (g, op) in ops.iter().enumerate().take(ops.len() - 1) {
        match op {
            Op::Annihilate => {
                out_mask |= 1 << out_perm[na];
                na += 1;
            }
            Op::Create => {
                in_mask |= 1 << in_perm[nc];
                nc += 1;
            }
        }
        let energy = eig.relative_energy(chain[g + 1]);
        gaps.push(Gap {
            out_mask,
            in_mask,
            energy,
            real: energy.im.abs() < REAL_ENERGY_TOL * eig.gamma,
        });
    }
    gaps
}
