use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use super::sector::{Gap, SectorTerm};
use super::CompensatedSum;
use crate::combinatorics::mask_indices;
use crate::error::{Error, Result};
use crate::system::Op;

/// A group of outputs and inputs tied together by its own conservation delta,
/// `delta(sum_{i in outputs} p_i - sum_{j in inputs} k_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Block {
    pub out_mask: u32,
    pub in_mask: u32,
}

impl Block {
    pub fn outputs(&self) -> Vec<usize> {
        mask_indices(self.out_mask)
    }

    pub fn inputs(&self) -> Vec<usize> {
        mask_indices(self.in_mask)
    }

    pub fn size(&self) -> usize {
        self.out_mask.count_ones() as usize
    }
}

/// Product of gap factors times a constant.
#[derive(Debug, Clone, Serialize)]
pub struct Monomial {
    pub coefficient: Complex64,
    pub gaps: Vec<Gap>,
}

impl Monomial {
    pub fn evaluate(&self, p: &[f64], k: &[f64]) -> Complex64 {
        self.gaps
            .iter()
            .fold(self.coefficient, |acc, g| acc * g.factor(p, k))
    }
}

/// Connected density of one block: the principal-value sum of all sector terms
/// that live on the block's photons.
#[derive(Debug, Clone, Serialize)]
pub struct BlockFactor {
    pub block: Block,
    pub monomials: Vec<Monomial>,
}

impl BlockFactor {
    pub fn density(&self, p: &[f64], k: &[f64]) -> Complex64 {
        let mut acc = CompensatedSum::default();
        for m in &self.monomials {
            acc.add(m.evaluate(p, k));
        }
        acc.total()
    }
}

/// The part of the Green function supported on a fixed set of conservation deltas.
///
/// `blocks` partition the outputs and the inputs; a single block means only the
/// overall delta (the connected part). Size-one blocks are the pairings
/// `delta(p_i - k_j)` of photons that bypass the local system. The density is the
/// product of the blocks' connected densities.
#[derive(Debug, Clone, Serialize)]
pub struct DistributionTerm {
    pub n_photons: usize,
    pub blocks: Vec<Block>,
    /// Always true: the blocks jointly imply the overall delta.
    pub conserves_total: bool,
    pub factors: Vec<BlockFactor>,
}

impl DistributionTerm {
    /// `(output, input)` pairs carrying `delta(p_i - k_j)`.
    pub fn pairings(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .filter(|b| b.size() == 1)
            .map(|b| (b.outputs()[0], b.inputs()[0]))
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        self.blocks.len() == 1
    }

    /// Smooth density; the point must satisfy every block constraint and stay off
    /// principal-value manifolds.
    pub fn density(&self, p: &[f64], k: &[f64]) -> Complex64 {
        self.factors
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, f| acc * f.density(p, k))
    }
}

// Identity of a segment cut out of a sector term: its operators, their global
// frequency labels and its eigenstate chain.
type SegmentKey = (Vec<Op>, Vec<usize>, Vec<usize>, Vec<usize>);

/// Splits every vacuum gap into principal-value and delta branches and groups
/// the result by delta support.
///
/// A delta at a vacuum gap cuts the operator sequence into independent segments,
/// one per block. Summing principal-value products pointwise is exact only for
/// the connected part: products of principal values in overlapping variables
/// hide further delta terms (the Poincare-Bertrand identity). The densities of
/// multi-block supports are therefore built as products of the blocks' connected
/// densities, each the principal-value sum over the distinct segments that live
/// on that block.
pub fn expand_to_distribution(terms: &[SectorTerm]) -> Result<Vec<DistributionTerm>> {
    let Some(first) = terms.first() else {
        return Ok(Vec::new());
    };
    let n = first.n_photons();
    let full = Block {
        out_mask: (1u32 << n) - 1,
        in_mask: (1u32 << n) - 1,
    };
    let mut segments: BTreeMap<Block, BTreeMap<SegmentKey, Monomial>> = BTreeMap::new();
    let mut supports: BTreeMap<Vec<Block>, ()> = BTreeMap::new();
    for term in terms {
        let real: Vec<usize> = term
            .gaps
            .iter()
            .enumerate()
            .filter(|(_, g)| g.real)
            .map(|(i, _)| i)
            .collect();
        for &i in &real {
            let g = &term.gaps[i];
            if !g.is_balanced() || g.energy.re.abs() > 1e-12 * g.energy.norm().max(1.0) {
                return Err(Error::UnsupportedRealEnergy {
                    state: term.chain[i + 1],
                    energy: g.energy.re,
                });
            }
        }
        let ops = term.ordering.pattern();
        let labels = operator_labels(term);
        for subset in 0u32..(1 << real.len()) {
            let cuts: Vec<usize> = mask_indices(subset).iter().map(|&b| real[b]).collect();
            // operator ranges [start, end) of each segment; gap g sits after operator g
            let mut bounds: Vec<usize> = vec![0];
            bounds.extend(cuts.iter().map(|&c| c + 1));
            bounds.push(ops.len());
            let mut blocks = Vec::with_capacity(bounds.len() - 1);
            let mut prefix = Block {
                out_mask: 0,
                in_mask: 0,
            };
            for w in bounds.windows(2) {
                let (start, end) = (w[0], w[1]);
                let end_mask = if end == ops.len() {
                    full
                } else {
                    Block {
                        out_mask: term.gaps[end - 1].out_mask,
                        in_mask: term.gaps[end - 1].in_mask,
                    }
                };
                let block = Block {
                    out_mask: end_mask.out_mask ^ prefix.out_mask,
                    in_mask: end_mask.in_mask ^ prefix.in_mask,
                };
                let m = block.size() as i32;
                let gaps: Vec<Gap> = term.gaps[start..end - 1]
                    .iter()
                    .map(|g| Gap {
                        out_mask: g.out_mask ^ prefix.out_mask,
                        in_mask: g.in_mask ^ prefix.in_mask,
                        ..*g
                    })
                    .collect();
                let amplitude: Complex64 = term.elements[start..end].iter().product();
                let coefficient =
                    amplitude * (-term.gamma).powi(m) * (2.0 * PI).powi(1 - m);
                let key: SegmentKey = (
                    ops[start..end].to_vec(),
                    labels[start..end].iter().filter_map(|l| l.0).collect(),
                    labels[start..end].iter().filter_map(|l| l.1).collect(),
                    term.chain[start..=end].to_vec(),
                );
                segments
                    .entry(block)
                    .or_default()
                    .entry(key)
                    .or_insert(Monomial { coefficient, gaps });
                blocks.push(block);
                prefix = end_mask;
            }
            blocks.sort();
            supports.insert(blocks, ());
        }
    }
    let factor_of = |b: &Block| BlockFactor {
        block: *b,
        monomials: segments[b].values().cloned().collect(),
    };
    Ok(supports
        .into_keys()
        .map(|blocks| DistributionTerm {
            n_photons: n,
            factors: blocks.iter().map(factor_of).collect(),
            blocks,
            conserves_total: true,
        })
        .collect())
}

// (output index, input index) carried by each operator.
fn operator_labels(term: &SectorTerm) -> Vec<(Option<usize>, Option<usize>)> {
    let (mut na, mut nc) = (0, 0);
    term.ordering
        .pattern()
        .iter()
        .map(|op| match op {
            Op::Annihilate => {
                na += 1;
                (Some(term.out_perm[na - 1]), None)
            }
            Op::Create => {
                nc += 1;
                (None, Some(term.in_perm[nc - 1]))
            }
        })
        .collect()
}
