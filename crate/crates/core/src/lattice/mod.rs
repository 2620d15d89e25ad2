//! Brute-force check of the scattering amplitudes: a tight-binding waveguide with
//! the local system side-coupled at its midpoint, propagated in real time.
//!
//! Only the parity-even combination of left and right waves couples to a
//! side-coupled system, and the even channel is a chiral waveguide. Packets are
//! therefore launched as even pairs `(phi(x) + phi(-x)) / sqrt 2`; the
//! right-moving half that emerges on `x > 0` carries the chiral S matrix.
//!
//! Hopping `J = 1/(2a)` gives unit group velocity at the band centre, and the
//! coupling `g = sqrt(gamma J)` gives linewidth `gamma` there. Lattice energies
//! play the role of waveguide frequencies.

mod propagator;

pub use propagator::{Propagator, SparseHermitian};


use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{FrequencyConfig, ScatteringEngine};
use crate::error::{Error, Result};
use crate::system::{CMatrix, LocalSystem};

/// Default cap on the physical basis size: a 400-site chain in the
/// two-excitation sector.
pub const DEFAULT_BASIS_BUDGET: usize = 100_000;

/// Largest tolerated weight on the outermost sites.
pub const REFLECTION_TOL: f64 = 1e-10;

/// Number of intermediate boundary checks per run.
const CHECKPOINTS: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeModel {
    pub n_sites: usize,
    pub spacing: f64,
    pub hopping: f64,
    pub site_coupling: f64,
    pub sys: LocalSystem,
    pub n_excitations: usize,
}

impl LatticeModel {
    /// Chain of `n_sites` covering physical length `length`.
    pub fn new(sys: LocalSystem, n_sites: usize, length: f64, n_excitations: usize) -> Result<Self> {
        if n_sites < 16 {
            return Err(Error::InvalidParameter(format!("need at least 16 sites, got {n_sites}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidParameter(format!("chain length must be positive, got {length}")));
        }
        if !(1..=2).contains(&n_excitations) {
            return Err(Error::InvalidParameter(format!(
                "excitation sector must be 1 or 2, got {n_excitations}"
            )));
        }
        let spacing = length / n_sites as f64;
        let hopping = 0.5 / spacing;
        let site_coupling = (sys.gamma() * hopping).sqrt();
        LocalSectors::new(&sys, n_excitations)?;
        Ok(Self {
            n_sites,
            spacing,
            hopping,
            site_coupling,
            sys,
            n_excitations,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.sys.gamma()
    }

    pub fn coupling_site(&self) -> usize {
        self.n_sites / 2
    }

    pub fn position(&self, site: usize) -> f64 {
        (site as f64 - self.coupling_site() as f64) * self.spacing
    }

    /// `E(q) = -2 J cos(q a)`.
    pub fn band_energy(&self, q: f64) -> f64 {
        -2.0 * self.hopping * (q * self.spacing).cos()
    }

    pub fn group_velocity(&self, q: f64) -> f64 {
        2.0 * self.hopping * self.spacing * (q * self.spacing).sin()
    }

    /// Right-moving momentum with band energy `energy`.
    pub fn momentum(&self, energy: f64) -> Result<f64> {
        let c = -energy / (2.0 * self.hopping);
        if !(c.abs() < 1.0) {
            return Err(Error::Domain(format!(
                "energy {energy} outside the band (-{b}, {b})",
                b = 2.0 * self.hopping
            )));
        }
        Ok(c.acos() / self.spacing)
    }

    /// Decay rate of the local system into the chain at `energy`,
    /// `2 g^2 / sqrt(4 J^2 - E^2)`.
    pub fn linewidth(&self, energy: f64) -> f64 {
        let g = self.site_coupling;
        2.0 * g * g / (4.0 * self.hopping * self.hopping - energy * energy).sqrt()
    }

    /// Exact single-photon transmission of the even channel of the chain,
    /// `1 - i Gamma(E) <0|a (E - H_sys + i Gamma(E)/2 a^dag a)^-1 a^dag|0>`.
    /// The self-energy of a side-coupled site is purely imaginary in the band,
    /// so there is no frequency shift.
    pub fn lattice_s(&self, energy: f64) -> Result<Complex64> {
        let sectors = LocalSectors::new(&self.sys, 1)?;
        let width = self.linewidth(energy);
        sectors.transmission(energy, width)
    }

    /// Size of the excitation sector with a symmetric two-photon part
    /// (`n(n+1)/2` pairs).
    pub fn basis_size(&self) -> Result<usize> {
        let sectors = LocalSectors::new(&self.sys, self.n_excitations)?;
        let n = self.n_sites;
        Ok(match self.n_excitations {
            1 => n + sectors.levels[1].len(),
            _ => n * (n + 1) / 2 + n * sectors.levels[1].len() + sectors.levels[2].len(),
        })
    }
}

/// Local basis states grouped by excitation number (the diagonal of `a^dag a`).
#[derive(Debug, Clone)]
struct LocalSectors {
    levels: Vec<Vec<usize>>,
    vacuum_energy: f64,
    h_sys: CMatrix,
    a_op: CMatrix,
}

impl LocalSectors {
    fn new(sys: &LocalSystem, n_excitations: usize) -> Result<Self> {
        let a = sys.a_op().clone();
        let number = a.adjoint() * &a;
        let dim = sys.dim();
        let mut exc = Vec::with_capacity(dim);
        for i in 0..dim {
            let v = number[(i, i)].re;
            let r = v.round();
            if (v - r).abs() > 1e-9 || number[(i, i)].im.abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "lattice oracle needs integer photon numbers in the local basis; <{i}|a^dag a|{i}> = {v}"
                )));
            }
            exc.push(r as usize);
        }
        let h = sys.h_sys();
        for i in 0..dim {
            for j in 0..dim {
                if i != j && number[(i, j)].norm() > 1e-9 {
                    return Err(Error::Domain("a^dag a is not diagonal in the local basis".into()));
                }
                if exc[i] != exc[j] && h[(i, j)].norm() > 1e-12 {
                    return Err(Error::Domain(format!(
                        "H_sys couples levels {i} and {j} with different photon numbers"
                    )));
                }
                if exc[j] != exc[i] + 1 && a[(i, j)].norm() > 1e-12 {
                    return Err(Error::Domain(format!(
                        "a does not lower the photon number between levels {j} and {i}"
                    )));
                }
            }
        }
        let mut levels = vec![Vec::new(); n_excitations + 1];
        for (i, &e) in exc.iter().enumerate() {
            if e <= n_excitations {
                levels[e].push(i);
            }
        }
        if levels[0].len() != 1 {
            return Err(Error::Domain(format!(
                "expected exactly one local vacuum, found {}",
                levels[0].len()
            )));
        }
        for (m, states) in levels.iter().enumerate().skip(1) {
            if states.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "local truncation has no level with {m} photons; increase dim"
                )));
            }
        }
        let vacuum_energy = h[(levels[0][0], levels[0][0])].re;
        Ok(Self {
            levels,
            vacuum_energy,
            h_sys: h,
            a_op: a,
        })
    }

    fn vacuum(&self) -> usize {
        self.levels[0][0]
    }

    /// `H_sys` relative to the vacuum energy.
    fn h(&self, i: usize, j: usize) -> Complex64 {
        let shift = if i == j { self.vacuum_energy } else { 0.0 };
        self.h_sys[(i, j)] - shift
    }

    /// `<i|a^dag|j>`.
    fn adag(&self, i: usize, j: usize) -> Complex64 {
        self.a_op[(j, i)].conj()
    }

    /// Resolvent restricted to the one-photon levels, where the chain adds
    /// `-i width/2` to every level.
    fn transmission(&self, energy: f64, width: f64) -> Result<Complex64> {
        let ones = &self.levels[1];
        let k = ones.len();
        let m = DMatrix::<Complex64>::from_fn(k, k, |r, s| {
            let diag = if r == s { Complex64::new(energy, 0.5 * width) } else { Complex64::new(0.0, 0.0) };
            diag - self.h(ones[r], ones[s])
        });
        let rhs = DMatrix::<Complex64>::from_fn(k, 1, |r, _| self.adag(ones[r], self.vacuum()));
        let x = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Domain(format!("singular local resolvent at E = {energy}")))?;
        let g: Complex64 = (0..k).map(|r| self.a_op[(self.vacuum(), ones[r])] * x[(r, 0)]).sum();
        Ok(1.0 - Complex64::new(0.0, width) * g)
    }
}

/// Gaussian packet `exp(-(x - start)^2 / (2 sigma^2) + i q0 (x - start))` with
/// `q0` the momentum of band energy `k0`. `start` must be left of the coupling
/// site; `sigma` is a physical length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub k0: f64,
    pub sigma: f64,
    pub start: f64,
}

/// Uniform energy grid on which output amplitudes are extracted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl EnergyGrid {
    pub fn step(&self) -> f64 {
        if self.points < 2 {
            0.0
        } else {
            (self.max - self.min) / (self.points - 1) as f64
        }
    }

    pub fn energies(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.min + i as f64 * self.step()).collect()
    }
}

/// One propagation job. Single-photon runs treat every packet as a separate
/// run (results are stitched together); two-photon runs put one photon in each
/// of exactly two packets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavepacketRun {
    pub packets: Vec<Packet>,
    pub time: f64,
    pub grid: EnergyGrid,
}

impl WavepacketRun {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub energy: f64,
    pub momentum: f64,
    /// Output over input amplitude.
    pub ratio: Complex64,
    /// Exact transmission of the chain.
    pub lattice_exact: Complex64,
    /// Continuum prediction from the scattering engine.
    pub predicted: Complex64,
    /// Input amplitude at this momentum relative to the packet's peak.
    pub packet_weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SinglePhotonSpectrum {
    pub n_sites: usize,
    pub points: Vec<SpectrumPoint>,
    pub norm_drift: f64,
    pub boundary_weight: f64,
}

impl SinglePhotonSpectrum {
    pub fn max_deviation(&self) -> f64 {
        self.points
            .iter()
            .map(|p| (p.ratio - p.predicted).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_lattice_deviation(&self) -> f64 {
        self.points
            .iter()
            .map(|p| (p.ratio - p.lattice_exact).norm())
            .fold(0.0, f64::max)
    }

    /// Delimited table `momentum,energy,re,im,modulus` of the measured ratio.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::InvalidParameter(format!("csv: {e}"));
        w.write_record(["momentum", "energy", "re", "im", "modulus"]).map_err(io)?;
        for p in &self.points {
            w.write_record(&[
                fmt17(p.momentum),
                fmt17(p.energy),
                fmt17(p.ratio.re),
                fmt17(p.ratio.im),
                fmt17(p.ratio.norm()),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidParameter(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub(crate) fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Left half-chain boundary region checked for reflections.
fn boundary_sites(n: usize) -> usize {
    (n / 50).max(4)
}

fn packet_state(model: &LatticeModel, packet: &Packet) -> Result<Vec<Complex64>> {
    if !(packet.sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("packet width must be positive, got {}", packet.sigma)));
    }
    if !(packet.start < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "packet must start left of the coupling site, got x = {}",
            packet.start
        )));
    }
    let q0 = model.momentum(packet.k0)?;
    let amp = |x: f64| {
        let d = x - packet.start;
        Complex64::from_polar((-d * d / (2.0 * packet.sigma * packet.sigma)).exp(), q0 * d)
    };
    let mut e: Vec<Complex64> = (0..model.n_sites)
        .map(|j| {
            let x = model.position(j);
            amp(x) + amp(-x)
        })
        .collect();
    let norm = propagator::norm(&e);
    e.iter_mut().for_each(|z| *z /= norm);
    Ok(e)
}

/// `sum_x exp(-i q x) f(x)` over the given sites.
fn dtft(model: &LatticeModel, sites: &[usize], q: f64, f: impl Fn(usize) -> Complex64) -> Complex64 {
    sites
        .iter()
        .map(|&j| Complex64::from_polar(1.0, -q * model.position(j)) * f(j))
        .sum()
}

fn grid_momenta(model: &LatticeModel, grid: &EnergyGrid) -> Result<Vec<f64>> {
    if grid.points == 0 || !(grid.max >= grid.min) {
        return Err(Error::InvalidParameter("energy grid needs points > 0 and max >= min".into()));
    }
    grid.energies().iter().map(|&e| model.momentum(e)).collect()
}

// Evolves `psi` in checkpoints and fails once the boundary weight exceeds the
// tolerance; returns the largest boundary weight seen.
fn evolve_checked(
    h: &SparseHermitian,
    psi: &mut [Complex64],
    time: f64,
    boundary_weight: impl Fn(&[Complex64]) -> f64,
) -> Result<f64> {
    let prop = Propagator::default();
    let mut worst = boundary_weight(psi);
    for step in 1..=CHECKPOINTS {
        prop.evolve(h, psi, time / CHECKPOINTS as f64);
        let w = boundary_weight(psi);
        worst = worst.max(w);
        if w > REFLECTION_TOL {
            return Err(Error::ReflectionContamination {
                weight: w,
                time: time * step as f64 / CHECKPOINTS as f64,
            });
        }
    }
    Ok(worst)
}

fn single_hamiltonian(model: &LatticeModel, sectors: &LocalSectors) -> SparseHermitian {
    let n = model.n_sites;
    let ones = &sectors.levels[1];
    let local = |r: usize| n + r;
    let j = model.hopping;
    let g = model.site_coupling;
    let x0 = model.coupling_site();
    let mut t = Vec::new();
    for x in 0..n - 1 {
        t.push((x, x + 1, c(-j)));
        t.push((x + 1, x, c(-j)));
    }
    for (r, &lr) in ones.iter().enumerate() {
        for (s, &ls) in ones.iter().enumerate() {
            t.push((local(r), local(s), sectors.h(lr, ls)));
        }
        let amp = g * sectors.adag(lr, sectors.vacuum());
        t.push((local(r), x0, amp));
        t.push((x0, local(r), amp.conj()));
    }
    SparseHermitian::from_triplets(n + ones.len(), t)
}

/// Propagates one parity-even packet per entry of `run.packets` and returns the
/// transmission spectrum on `run.grid`, each grid point taken from the packet
/// with the largest input amplitude there.
pub fn run_single_photon(model: &LatticeModel, run: &WavepacketRun) -> Result<SinglePhotonSpectrum> {
    if model.n_excitations != 1 {
        return Err(Error::InvalidParameter("run_single_photon needs a one-excitation model".into()));
    }
    if run.packets.is_empty() {
        return Err(Error::InvalidParameter("no packets".into()));
    }
    let sectors = LocalSectors::new(&model.sys, 1)?;
    let h = single_hamiltonian(model, &sectors);
    let n = model.n_sites;
    let x0 = model.coupling_site();
    let left: Vec<usize> = (0..x0).collect();
    let right: Vec<usize> = (x0 + 1..n).collect();
    let edge = boundary_sites(n);
    let energies = run.grid.energies();
    let momenta = grid_momenta(model, &run.grid)?;
    let boundary = |psi: &[Complex64]| -> f64 {
        psi[..edge].iter().chain(&psi[n - edge..n]).map(|z| z.norm_sqr()).sum()
    };

    struct Single {
        input: Vec<Complex64>,
        output: Vec<Complex64>,
        peak: f64,
        drift: f64,
        boundary: f64,
    }
    let runs: Vec<Single> = run
        .packets
        .par_iter()
        .map(|packet| -> Result<Single> {
            let e = packet_state(model, packet)?;
            let mut psi = e.clone();
            psi.resize(h.dim(), Complex64::new(0.0, 0.0));
            let worst = evolve_checked(&h, &mut psi, run.time, boundary)?;
            let drift = (propagator::norm(&psi) - 1.0).abs();
            let input: Vec<Complex64> = momenta.iter().map(|&q| dtft(model, &left, q, |j| e[j])).collect();
            let output = momenta.iter().map(|&q| dtft(model, &right, q, |j| psi[j])).collect();
            let q0 = model.momentum(packet.k0)?;
            let peak = dtft(model, &left, q0, |j| e[j]).norm();
            Ok(Single {
                input,
                output,
                peak,
                drift,
                boundary: worst,
            })
        })
        .collect::<Result<_>>()?;

    let engine = ScatteringEngine::new(&model.sys, 1)?;
    let mut points = Vec::with_capacity(energies.len());
    for (i, (&energy, &q)) in energies.iter().zip(&momenta).enumerate() {
        let best = runs
            .iter()
            .max_by(|a, b| (a.input[i].norm() / a.peak).total_cmp(&(b.input[i].norm() / b.peak)))
            .expect("at least one packet");
        let phase = Complex64::from_polar(1.0, -energy * run.time);
        points.push(SpectrumPoint {
            energy,
            momentum: q,
            ratio: best.output[i] / (best.input[i] * phase),
            lattice_exact: model.lattice_s(energy)?,
            predicted: 1.0 + engine.raw_density(&[energy], &[energy]),
            packet_weight: best.input[i].norm() / best.peak,
        });
    }
    Ok(SinglePhotonSpectrum {
        n_sites: n,
        points,
        norm_drift: runs.iter().map(|r| r.drift).fold(0.0, f64::max),
        boundary_weight: runs.iter().map(|r| r.boundary).fold(0.0, f64::max),
    })
}

/// Linewidth that best fits the measured spectrum with the continuum form,
/// by golden-section search on `[lo, hi]`.
pub fn fit_linewidth(model: &LatticeModel, spectrum: &SinglePhotonSpectrum, lo: f64, hi: f64) -> Result<f64> {
    let h_sys = model.sys.h_sys();
    let a = model.sys.a_op().clone();
    let number = a.adjoint() * &a;
    let cost = |gamma: f64| -> Result<f64> {
        let h_eff = &h_sys - &number * Complex64::new(0.0, 0.5 * gamma);
        let engine = ScatteringEngine::new(&LocalSystem::new(h_eff, a.clone(), gamma)?, 1)?;
        Ok(spectrum
            .points
            .iter()
            .map(|p| (p.ratio - 1.0 - engine.raw_density(&[p.energy], &[p.energy])).norm_sqr())
            .sum())
    };
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a_, mut b_) = (lo, hi);
    let mut x1 = b_ - ratio * (b_ - a_);
    let mut x2 = a_ + ratio * (b_ - a_);
    let (mut f1, mut f2) = (cost(x1)?, cost(x2)?);
    while b_ - a_ > 1e-10 * hi.abs().max(1e-300) {
        if f1 < f2 {
            b_ = x2;
            x2 = x1;
            f2 = f1;
            x1 = b_ - ratio * (b_ - a_);
            f1 = cost(x1)?;
        } else {
            a_ = x1;
            x1 = x2;
            f1 = f2;
            x2 = a_ + ratio * (b_ - a_);
            f2 = cost(x2)?;
        }
    }
    Ok(0.5 * (a_ + b_))
}

/// Two-photon output on the energy grid; tables are indexed `[i][j]` for
/// energies `(E_i, E_j)` of the two outgoing photons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoPhotonOutput {
    pub energies: Vec<f64>,
    pub momenta: Vec<f64>,
    /// Right-right output amplitude.
    pub amplitude: Vec<Vec<Complex64>>,
    /// Product of independently transmitted photons.
    pub uncorrelated: Vec<Vec<Complex64>>,
    /// `amplitude - uncorrelated`.
    pub correlated: Vec<Vec<Complex64>>,
    /// Connected density convolved with the input packets.
    pub predicted: Vec<Vec<Complex64>>,
    pub norm_drift: f64,
    pub boundary_weight: f64,
}

fn table_norm(t: &[Vec<Complex64>]) -> f64 {
    t.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

impl TwoPhotonOutput {
    /// `||correlated|| / ||amplitude||` over the grid.
    pub fn correlated_fraction(&self) -> f64 {
        table_norm(&self.correlated) / table_norm(&self.amplitude)
    }

    /// `||correlated - predicted|| / ||predicted||` over the grid.
    pub fn relative_l2_error(&self) -> f64 {
        let diff: Vec<Vec<Complex64>> = self
            .correlated
            .iter()
            .zip(&self.predicted)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        table_norm(&diff) / table_norm(&self.predicted)
    }

    /// `max |A(E1, E2) - A(E2, E1)|` relative to `max |A|`.
    pub fn symmetry_error(&self) -> f64 {
        let m = self.energies.len();
        let peak = self.amplitude.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..i {
                worst = worst.max((self.amplitude[i][j] - self.amplitude[j][i]).norm());
            }
        }
        worst / peak
    }

    /// Delimited table `momentum1,momentum2,energy1,energy2,re,im,modulus` of
    /// the correlated part.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::InvalidParameter(format!("csv: {e}"));
        w.write_record(["momentum1", "momentum2", "energy1", "energy2", "re", "im", "modulus"])
            .map_err(io)?;
        for (i, row) in self.correlated.iter().enumerate() {
            for (j, z) in row.iter().enumerate() {
                w.write_record(&[
                    fmt17(self.momenta[i]),
                    fmt17(self.momenta[j]),
                    fmt17(self.energies[i]),
                    fmt17(self.energies[j]),
                    fmt17(z.re),
                    fmt17(z.im),
                    fmt17(z.norm()),
                ])
                .map_err(io)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidParameter(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

// Two-excitation state layout: a symmetric amplitude psi(x, y) on the full
// n x n grid (norm sum |psi|^2 for the state (1/sqrt 2) sum psi c_x^dag c_y^dag |0>),
// then one photon plus each one-photon local level, then the two-photon levels.
struct TwoLayout {
    n: usize,
    ones: Vec<usize>,
    twos: Vec<usize>,
}

impl TwoLayout {
    fn pair(&self, x: usize, y: usize) -> usize {
        x * self.n + y
    }

    fn single(&self, x: usize, r: usize) -> usize {
        self.n * self.n + x * self.ones.len() + r
    }

    fn double(&self, s: usize) -> usize {
        self.n * self.n + self.n * self.ones.len() + s
    }

    fn dim(&self) -> usize {
        self.double(self.twos.len())
    }
}

fn two_hamiltonian(model: &LatticeModel, sectors: &LocalSectors, lay: &TwoLayout) -> SparseHermitian {
    let n = lay.n;
    let j = c(-model.hopping);
    let g = model.site_coupling;
    let x0 = model.coupling_site();
    let mut t = Vec::with_capacity(4 * n * n + 8 * n);
    for x in 0..n {
        for y in 0..n {
            let here = lay.pair(x, y);
            if x + 1 < n {
                t.push((here, lay.pair(x + 1, y), j));
                t.push((lay.pair(x + 1, y), here, j));
            }
            if y + 1 < n {
                t.push((here, lay.pair(x, y + 1), j));
                t.push((lay.pair(x, y + 1), here, j));
            }
        }
    }
    let vac = sectors.vacuum();
    for (r, &lr) in lay.ones.iter().enumerate() {
        let amp = g / 2f64.sqrt() * sectors.adag(lr, vac);
        for x in 0..n {
            for (s, &ls) in lay.ones.iter().enumerate() {
                t.push((lay.single(x, r), lay.single(x, s), sectors.h(lr, ls)));
            }
            if x + 1 < n {
                t.push((lay.single(x, r), lay.single(x + 1, r), j));
                t.push((lay.single(x + 1, r), lay.single(x, r), j));
            }
            // c_x0 acting on either photon of the pair
            for pair in [lay.pair(x0, x), lay.pair(x, x0)] {
                t.push((lay.single(x, r), pair, amp));
                t.push((pair, lay.single(x, r), amp.conj()));
            }
        }
        for (s, &ls) in lay.twos.iter().enumerate() {
            let amp = g * sectors.adag(ls, lr);
            t.push((lay.double(s), lay.single(x0, r), amp));
            t.push((lay.single(x0, r), lay.double(s), amp.conj()));
        }
    }
    for (s, &ls) in lay.twos.iter().enumerate() {
        for (u, &lu) in lay.twos.iter().enumerate() {
            t.push((lay.double(s), lay.double(u), sectors.h(ls, lu)));
        }
    }
    SparseHermitian::from_triplets(lay.dim(), t)
}

pub fn run_two_photon(model: &LatticeModel, run: &WavepacketRun) -> Result<TwoPhotonOutput> {
    run_two_photon_with_budget(model, run, DEFAULT_BASIS_BUDGET)
}

/// Propagates one photon in each of the two packets and extracts the
/// right-right output amplitude. The correlated part is compared with
/// `(1/2) sqrt(v1 v2) exp(-i E T) int dk S^C(E1, E2; k, E - k) psi_in(k, E - k) / sqrt(v_k v_{E-k})`,
/// the continuum connected density smeared by the input amplitude `psi_in`
/// (lattice Fourier convention).
pub fn run_two_photon_with_budget(model: &LatticeModel, run: &WavepacketRun, budget: usize) -> Result<TwoPhotonOutput> {
    if model.n_excitations != 2 {
        return Err(Error::InvalidParameter("run_two_photon needs a two-excitation model".into()));
    }
    if run.packets.len() != 2 {
        return Err(Error::InvalidParameter(format!(
            "two-photon run needs exactly two packets, got {}",
            run.packets.len()
        )));
    }
    let basis = model.basis_size()?;
    if basis > budget {
        return Err(Error::MemoryBudget { basis, budget });
    }
    let sectors = LocalSectors::new(&model.sys, 2)?;
    let n = model.n_sites;
    let lay = TwoLayout {
        n,
        ones: sectors.levels[1].clone(),
        twos: sectors.levels[2].clone(),
    };
    let h = two_hamiltonian(model, &sectors, &lay);

    let e1 = packet_state(model, &run.packets[0])?;
    let e2 = packet_state(model, &run.packets[1])?;
    let mut psi = vec![Complex64::new(0.0, 0.0); lay.dim()];
    for x in 0..n {
        for y in 0..n {
            psi[lay.pair(x, y)] = e1[x] * e2[y] + e2[x] * e1[y];
        }
    }
    let norm = propagator::norm(&psi);
    psi.iter_mut().for_each(|z| *z /= norm);
    let initial: Vec<Complex64> = psi[..n * n].to_vec();

    let edge = boundary_sites(n);
    let near_edge = |x: usize| x < edge || x >= n - edge;
    let boundary = |psi: &[Complex64]| -> f64 {
        let mut w = 0.0;
        for x in 0..n {
            for y in 0..n {
                if near_edge(x) || near_edge(y) {
                    w += psi[lay.pair(x, y)].norm_sqr();
                }
            }
            for r in 0..lay.ones.len() {
                if near_edge(x) {
                    w += psi[lay.single(x, r)].norm_sqr();
                }
            }
        }
        w
    };
    let worst = evolve_checked(&h, &mut psi, run.time, boundary)?;
    let drift = (propagator::norm(&psi) - 1.0).abs();

    let energies = run.grid.energies();
    let momenta = grid_momenta(model, &run.grid)?;
    let m = energies.len();
    let x0 = model.coupling_site();
    let fourier = |sites: &[usize]| {
        DMatrix::<Complex64>::from_fn(m, sites.len(), |i, s| {
            Complex64::from_polar(1.0, -momenta[i] * model.position(sites[s]))
        })
    };
    let quadrant = |amp: &[Complex64], sites: &[usize]| {
        DMatrix::<Complex64>::from_fn(sites.len(), sites.len(), |a, b| amp[lay.pair(sites[a], sites[b])])
    };
    let left: Vec<usize> = (0..x0).collect();
    let right: Vec<usize> = (x0 + 1..n).collect();
    let (fl, fr) = (fourier(&left), fourier(&right));
    let input = &fl * quadrant(&initial, &left) * fl.transpose();
    let output = &fr * quadrant(&psi, &right) * fr.transpose();

    let phase = |i: usize, j: usize| Complex64::from_polar(1.0, -(energies[i] + energies[j]) * run.time);
    let s_lat: Vec<Complex64> = energies.iter().map(|&e| model.lattice_s(e)).collect::<Result<_>>()?;
    let velocity: Vec<f64> = momenta.iter().map(|&q| model.group_velocity(q)).collect();

    let engine = ScatteringEngine::new(&model.sys, 2)?;
    let de = run.grid.step();
    let rows: Vec<Vec<Complex64>> = (0..m)
        .into_par_iter()
        .map(|i| -> Result<Vec<Complex64>> {
            (0..m)
                .map(|j| {
                    let total = i + j;
                    let lo = total.saturating_sub(m - 1);
                    let hi = total.min(m - 1);
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in lo..=hi {
                        let l = total - k;
                        let weight = if (k == lo || k == hi) && lo != hi { 0.5 } else { 1.0 };
                        let cfg = FrequencyConfig::new(vec![energies[i], energies[j]], vec![energies[k], energies[l]])?;
                        let sc = engine.connected_density(&cfg)?.value;
                        acc += weight * sc * input[(k, l)] / (velocity[k] * velocity[l]).sqrt();
                    }
                    Ok(0.5 * (velocity[i] * velocity[j]).sqrt() * de * acc * phase(i, j))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let table = |f: &dyn Fn(usize, usize) -> Complex64| -> Vec<Vec<Complex64>> {
        (0..m).map(|i| (0..m).map(|j| f(i, j)).collect()).collect()
    };
    let amplitude = table(&|i, j| output[(i, j)]);
    let uncorrelated = table(&|i, j| s_lat[i] * s_lat[j] * input[(i, j)] * phase(i, j));
    let correlated = table(&|i, j| amplitude[i][j] - uncorrelated[i][j]);
    Ok(TwoPhotonOutput {
        energies,
        momenta,
        amplitude,
        uncorrelated,
        correlated,
        predicted: rows,
        norm_drift: drift,
        boundary_weight: worst,
    })
}
