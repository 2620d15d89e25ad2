//! Full N-photon S matrices as sums of delta-supported terms with smooth
//! densities, built two independent ways:
//!
//! * main-result route: Green functions of every order `M <= N` on output/input
//!   subsets, times bare `delta(p - k)` for the photons that bypass the system;
//! * cluster route: set partitions of the photons into connected pieces.
//!
//! Both are grouped by their exact delta support, a set of [`Block`]s.

mod partition;

pub use partition::{distinct_block_assignments, enumerate_partitions, SetPartition, MAX_PARTITION_SIZE};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::combinatorics::{factorial, indices_mask, permutations};
use crate::engine::{Block, DistributionTerm, FrequencyConfig, ScatteringEngine};
use crate::error::{Error, Result};
use crate::kerr::{connected_three_photon, connected_two_photon, single_photon_s, KerrParams};
use crate::system::{eigen_decompose, LocalSystem};

/// Connected density of a block, in the block's local indices.
pub type PieceFn = Arc<dyn Fn(&[f64], &[f64]) -> Complex64 + Send + Sync>;

/// Connected S-matrix densities by block size. Size one is the full
/// single-photon amplitude `1 + s_k` multiplying `delta(p - k)`.
#[derive(Clone, Default)]
pub struct ConnectedPieces {
    pieces: BTreeMap<usize, PieceFn>,
}

impl fmt::Debug for ConnectedPieces {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConnectedPieces")
            .field("sizes", &self.pieces.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl ConnectedPieces {
    pub fn insert(&mut self, size: usize, piece: PieceFn) {
        self.pieces.insert(size, piece);
    }

    pub fn get(&self, size: usize) -> Option<&PieceFn> {
        self.pieces.get(&size)
    }

    /// Pieces of sizes `1..=max_size` from the general engine.
    pub fn from_engine(sys: &LocalSystem, max_size: usize) -> Result<Self> {
        let mut out = Self::default();
        for m in 1..=max_size {
            let eng = Arc::new(ScatteringEngine::new(sys, m)?);
            let piece: PieceFn = if m == 1 {
                Arc::new(move |p: &[f64], _k: &[f64]| 1.0 + eng.raw_density(p, p))
            } else {
                Arc::new(move |p: &[f64], k: &[f64]| {
                    FrequencyConfig::new(p.to_vec(), k.to_vec())
                        .and_then(|cfg| eng.connected_density(&cfg))
                        .map(|d| d.value)
                        .unwrap_or(Complex64::new(f64::NAN, f64::NAN))
                })
            };
            out.insert(m, piece);
        }
        Ok(out)
    }

    /// Kerr closed forms for sizes 1, 2 and 3.
    pub fn kerr(params: KerrParams) -> Self {
        let mut out = Self::default();
        out.insert(1, Arc::new(move |p: &[f64], _k: &[f64]| single_photon_s(&params, p[0])));
        out.insert(
            2,
            Arc::new(move |p: &[f64], k: &[f64]| {
                connected_two_photon(&params, p[0], p[1], k[0], k[1])
                    .unwrap_or(Complex64::new(f64::NAN, f64::NAN))
            }),
        );
        out.insert(
            3,
            Arc::new(move |p: &[f64], k: &[f64]| {
                connected_three_photon(&params, [p[0], p[1], p[2]], [k[0], k[1], k[2]])
                    .map(|v| v.value)
                    .unwrap_or(Complex64::new(f64::NAN, f64::NAN))
            }),
        );
        out
    }
}

#[derive(Clone)]
enum FactorKind {
    Green(Arc<DistributionTerm>),
    Piece(PieceFn),
}

/// One factor of a product, acting on a subset of the global indices.
#[derive(Clone)]
struct Factor {
    kind: FactorKind,
    outputs: Vec<usize>,
    inputs: Vec<usize>,
}

impl Factor {
    fn evaluate(&self, p: &[f64], k: &[f64]) -> Complex64 {
        let lp: Vec<f64> = self.outputs.iter().map(|&i| p[i]).collect();
        let lk: Vec<f64> = self.inputs.iter().map(|&j| k[j]).collect();
        match &self.kind {
            FactorKind::Green(t) => t.density(&lp, &lk),
            FactorKind::Piece(f) => f(&lp, &lk),
        }
    }
}

/// Product of factors; bare deltas contribute density one and appear only in
/// the support.
#[derive(Clone)]
struct Product {
    factors: Vec<Factor>,
}

impl Product {
    fn evaluate(&self, p: &[f64], k: &[f64]) -> Complex64 {
        self.factors
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, f| acc * f.evaluate(p, k))
    }
}

/// Everything supported on one set of blocks.
#[derive(Clone)]
pub struct ExpressionTerm {
    pub blocks: Vec<Block>,
    products: Vec<Product>,
}

impl fmt::Debug for ExpressionTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExpressionTerm")
            .field("support", &support_label(&self.blocks))
            .field("products", &self.products.len())
            .finish()
    }
}

impl ExpressionTerm {
    pub fn density(&self, p: &[f64], k: &[f64]) -> Complex64 {
        self.products.iter().map(|x| x.evaluate(p, k)).sum()
    }

    pub fn n_products(&self) -> usize {
        self.products.len()
    }

    pub fn pairings(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .filter(|b| b.size() == 1)
            .map(|b| (b.outputs()[0], b.inputs()[0]))
            .collect()
    }

    /// Sizes of the blocks, largest first.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.blocks.iter().map(Block::size).collect();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s
    }

    pub fn is_connected(&self) -> bool {
        self.blocks.len() == 1
    }
}

/// Human-readable support, 1-based: `{p1,p2|k1,k2}{p3|k3}`.
pub fn support_label(blocks: &[Block]) -> String {
    let mut s = String::new();
    for b in blocks {
        let outs: Vec<String> = b.outputs().iter().map(|i| format!("p{}", i + 1)).collect();
        let ins: Vec<String> = b.inputs().iter().map(|j| format!("k{}", j + 1)).collect();
        let _ = write!(s, "{{{}|{}}}", outs.join(","), ins.join(","));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Route {
    MainResult,
    Cluster,
}

/// Sampling window for generic points: centre and half-width, plus the rate
/// `gamma` that sets the genericity threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub centre: f64,
    pub half_width: f64,
    pub gamma: f64,
}

impl Window {
    pub fn around(centre: f64, gamma: f64) -> Self {
        Self {
            centre,
            half_width: 3.0 * gamma,
            gamma,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SMatrixExpression {
    pub n_photons: usize,
    pub route: Route,
    pub window: Window,
    terms: Vec<ExpressionTerm>,
}

impl SMatrixExpression {
    fn from_groups(n_photons: usize, route: Route, window: Window, groups: BTreeMap<Vec<Block>, Vec<Product>>) -> Self {
        let terms = groups
            .into_iter()
            .map(|(blocks, products)| ExpressionTerm { blocks, products })
            .collect();
        Self {
            n_photons,
            route,
            window,
            terms,
        }
    }

    pub fn terms(&self) -> &[ExpressionTerm] {
        &self.terms
    }

    pub fn term(&self, blocks: &[Block]) -> Option<&ExpressionTerm> {
        self.terms.iter().find(|t| t.blocks == blocks)
    }

    pub fn supports(&self) -> Vec<Vec<Block>> {
        self.terms.iter().map(|t| t.blocks.clone()).collect()
    }

    /// Number of supports per block-size shape, e.g. `[1,1,1] -> 6`.
    pub fn shape_counts(&self) -> BTreeMap<Vec<usize>, usize> {
        let mut m = BTreeMap::new();
        for t in &self.terms {
            *m.entry(t.block_sizes()).or_insert(0) += 1;
        }
        m
    }

    /// Structured text: one section per support with density samples at seeded
    /// generic points. Numbers carry 17 significant digits.
    pub fn dump(&self, points: usize, seed: u64) -> Result<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# s-matrix expression\nphotons {}\nroute {:?}\nsupports {}",
            self.n_photons,
            self.route,
            self.terms.len()
        );
        let n = self.n_photons;
        let header: Vec<String> = (1..=n)
            .map(|i| format!("p{i}"))
            .chain((1..=n).map(|j| format!("k{j}")))
            .chain(["re".to_string(), "im".to_string()])
            .collect();
        for (idx, t) in self.terms.iter().enumerate() {
            let _ = writeln!(s, "\n[support {}]", idx + 1);
            let _ = writeln!(s, "blocks {}", support_label(&t.blocks));
            let pairs: Vec<String> = t.pairings().iter().map(|(i, j)| format!("p{}=k{}", i + 1, j + 1)).collect();
            let _ = writeln!(s, "pairings {}", if pairs.is_empty() { "-".into() } else { pairs.join(" ") });
            let _ = writeln!(s, "products {}", t.n_products());
            let _ = writeln!(s, "{}", header.join(" "));
            for _ in 0..points {
                let (p, k) = sample_generic(&t.blocks, n, &self.window, &mut rng)?;
                let v = t.density(&p, &k);
                let row: Vec<String> = p.iter().chain(&k).chain([&v.re, &v.im]).map(|x| format!("{x:.16e}")).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        Ok(s)
    }
}

/// Frequency of the state `a^dag |vacuum>`, weighted over eigenstates.
fn single_excitation_frequency(sys: &LocalSystem) -> Result<f64> {
    let eig = eigen_decompose(sys)?;
    let g = eig.ground;
    let (mut num, mut den) = (0.0, 0.0);
    for n in 0..eig.dim() {
        let w = (eig.a_elements[(g, n)] * eig.adag_elements[(n, g)]).norm();
        num += w * eig.relative_energy(n).re;
        den += w;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Photon-number classes `M = 0..=N` of the main-result expansion with the
/// number of (output subset, input subset) pairs and bare-delta pairings in each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MainResultClass {
    pub m: usize,
    pub subset_pairs: usize,
    pub bypass_pairings: usize,
}

pub fn main_result_classes(n: usize) -> Vec<MainResultClass> {
    let binom = |n: usize, k: usize| factorial(n) / (factorial(k) * factorial(n - k));
    (0..=n)
        .map(|m| MainResultClass {
            m,
            subset_pairs: binom(n, m) * binom(n, m),
            bypass_pairings: factorial(n - m),
        })
        .collect()
}

fn subsets_of_size(n: usize, m: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|s| s.count_ones() as usize == m)
        .map(crate::combinatorics::mask_indices)
        .collect()
}

pub fn assemble_main_result_route(sys: &LocalSystem, n: usize) -> Result<SMatrixExpression> {
    if n == 0 {
        return Err(Error::InvalidParameter("photon number must be positive".into()));
    }
    let mut green: Vec<Vec<Arc<DistributionTerm>>> = vec![Vec::new()];
    for m in 1..=n {
        let eng = ScatteringEngine::new(sys, m)?;
        green.push(eng.distribution()?.into_iter().map(Arc::new).collect());
    }
    let mut groups: BTreeMap<Vec<Block>, Vec<Product>> = BTreeMap::new();
    for m in 0..=n {
        for b_set in subsets_of_size(n, m) {
            for d_set in subsets_of_size(n, m) {
                let rest_out: Vec<usize> = (0..n).filter(|i| !b_set.contains(i)).collect();
                let rest_in: Vec<usize> = (0..n).filter(|j| !d_set.contains(j)).collect();
                for perm in permutations(n - m) {
                    let bare: Vec<Block> = rest_out
                        .iter()
                        .zip(&perm)
                        .map(|(&i, &pj)| Block {
                            out_mask: 1 << i,
                            in_mask: 1 << rest_in[pj],
                        })
                        .collect();
                    if m == 0 {
                        let mut blocks = bare.clone();
                        blocks.sort();
                        groups.entry(blocks).or_default().push(Product { factors: Vec::new() });
                        continue;
                    }
                    for term in &green[m] {
                        let mut blocks = bare.clone();
                        for lb in &term.blocks {
                            let outs: Vec<usize> = lb.outputs().iter().map(|&i| b_set[i]).collect();
                            let ins: Vec<usize> = lb.inputs().iter().map(|&j| d_set[j]).collect();
                            blocks.push(Block {
                                out_mask: indices_mask(&outs),
                                in_mask: indices_mask(&ins),
                            });
                        }
                        blocks.sort();
                        groups.entry(blocks).or_default().push(Product {
                            factors: vec![Factor {
                                kind: FactorKind::Green(term.clone()),
                                outputs: b_set.clone(),
                                inputs: d_set.clone(),
                            }],
                        });
                    }
                }
            }
        }
    }
    let window = Window::around(single_excitation_frequency(sys)?, sys.gamma());
    Ok(SMatrixExpression::from_groups(n, Route::MainResult, window, groups))
}

pub fn assemble_cluster_route(pieces: &ConnectedPieces, n: usize, window: Window) -> Result<SMatrixExpression> {
    let mut groups: BTreeMap<Vec<Block>, Vec<Product>> = BTreeMap::new();
    for part in enumerate_partitions(n)? {
        for size in part.blocks().iter().map(Vec::len) {
            if pieces.get(size).is_none() {
                return Err(Error::MissingPiece(size));
            }
        }
        for assignment in distinct_block_assignments(&part) {
            let mut blocks = Vec::new();
            let mut factors = Vec::new();
            for (outs, ins) in part.blocks().iter().zip(&assignment) {
                blocks.push(Block {
                    out_mask: indices_mask(outs),
                    in_mask: indices_mask(ins),
                });
                factors.push(Factor {
                    kind: FactorKind::Piece(pieces.get(outs.len()).expect("checked above").clone()),
                    outputs: outs.clone(),
                    inputs: ins.clone(),
                });
            }
            blocks.sort();
            groups.entry(blocks).or_default().push(Product { factors });
        }
    }
    Ok(SMatrixExpression::from_groups(n, Route::Cluster, window, groups))
}

/// Random point on the support whose balanced subset flows stay at least
/// `1e-3 gamma` from zero unless the block constraints force them to vanish.
pub fn sample_generic(blocks: &[Block], n: usize, window: &Window, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut forced = BTreeSet::new();
    for sel in 0u32..1 << blocks.len() {
        let (mut o, mut i) = (0u32, 0u32);
        for (b, blk) in blocks.iter().enumerate() {
            if sel >> b & 1 == 1 {
                o |= blk.out_mask;
                i |= blk.in_mask;
            }
        }
        forced.insert((o, i));
    }
    let tol = 1e-3 * window.gamma;
    for _ in 0..10_000 {
        let p: Vec<f64> = (0..n)
            .map(|_| window.centre + rng.gen_range(-window.half_width..window.half_width))
            .collect();
        let mut k = vec![0.0; n];
        for blk in blocks {
            let ins = blk.inputs();
            let total: f64 = blk.outputs().iter().map(|&i| p[i]).sum();
            let mut acc = 0.0;
            for &j in &ins[..ins.len() - 1] {
                k[j] = window.centre + rng.gen_range(-window.half_width..window.half_width);
                acc += k[j];
            }
            k[ins[ins.len() - 1]] = total - acc;
        }
        if is_generic(&p, &k, &forced, tol) {
            return Ok((p, k));
        }
    }
    Err(Error::Domain("could not find a generic sample point".into()))
}

fn is_generic(p: &[f64], k: &[f64], forced: &BTreeSet<(u32, u32)>, tol: f64) -> bool {
    let n = p.len();
    for o in 1u32..1 << n {
        for i in 1u32..1 << n {
            if o.count_ones() != i.count_ones() || forced.contains(&(o, i)) {
                continue;
            }
            let flow = crate::engine::masked_flow(o, i, p, k);
            if flow.abs() < tol {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone, Serialize)]
pub struct SupportDeviation {
    pub support: String,
    pub max_relative_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EqualityReport {
    pub structural_match: bool,
    pub only_in_left: Vec<String>,
    pub only_in_right: Vec<String>,
    pub samples: usize,
    pub max_relative_deviation: f64,
    pub per_support: Vec<SupportDeviation>,
}

impl EqualityReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.structural_match && self.max_relative_deviation < tolerance
    }
}

pub fn expressions_equal(x: &SMatrixExpression, y: &SMatrixExpression, samples: usize) -> Result<EqualityReport> {
    expressions_equal_seeded(x, y, samples, 0x5eed)
}

/// Compares supports as sets, then densities on each shared support at `samples`
/// seeded generic points. Deviations are relative to `max(|y|, 1e-6 max|.|)`.
pub fn expressions_equal_seeded(
    x: &SMatrixExpression,
    y: &SMatrixExpression,
    samples: usize,
    seed: u64,
) -> Result<EqualityReport> {
    if x.n_photons != y.n_photons {
        return Err(Error::InvalidParameter(format!(
            "expressions over {} and {} photons",
            x.n_photons, y.n_photons
        )));
    }
    let xs: BTreeSet<Vec<Block>> = x.supports().into_iter().collect();
    let ys: BTreeSet<Vec<Block>> = y.supports().into_iter().collect();
    let only_in_left: Vec<String> = xs.difference(&ys).map(|b| support_label(b)).collect();
    let only_in_right: Vec<String> = ys.difference(&xs).map(|b| support_label(b)).collect();
    let shared: Vec<&Vec<Block>> = xs.intersection(&ys).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for blocks in &shared {
        for _ in 0..samples {
            points.push(((*blocks).clone(), sample_generic(blocks, x.n_photons, &x.window, &mut rng)?));
        }
    }
    let values: Vec<(Complex64, Complex64)> = points
        .par_iter()
        .map(|(blocks, (p, k))| {
            let a = x.term(blocks).expect("shared support").density(p, k);
            let b = y.term(blocks).expect("shared support").density(p, k);
            (a, b)
        })
        .collect();
    let scale = values
        .iter()
        .flat_map(|(a, b)| [a.norm(), b.norm()])
        .fold(0.0f64, f64::max);
    let floor = 1e-6 * scale;
    let mut per_support: Vec<SupportDeviation> = shared
        .iter()
        .map(|b| SupportDeviation {
            support: support_label(b),
            max_relative_deviation: 0.0,
        })
        .collect();
    let mut worst = 0.0f64;
    for (idx, (a, b)) in values.iter().enumerate() {
        let dev = (a - b).norm() / b.norm().max(floor).max(f64::MIN_POSITIVE);
        let dev = if dev.is_nan() { f64::INFINITY } else { dev };
        let slot = &mut per_support[idx / samples.max(1)];
        slot.max_relative_deviation = slot.max_relative_deviation.max(dev);
        worst = worst.max(dev);
    }
    Ok(EqualityReport {
        structural_match: only_in_left.is_empty() && only_in_right.is_empty(),
        only_in_left,
        only_in_right,
        samples,
        max_relative_deviation: worst,
        per_support,
    })
}
