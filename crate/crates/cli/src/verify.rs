//! Named self-check suites with a structured-text report.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wgqed::assembly::{
    assemble_cluster_route, assemble_main_result_route, expressions_equal_seeded, main_result_classes,
    ConnectedPieces, SMatrixExpression, Window,
};
use wgqed::engine::{FrequencyConfig, ScatteringEngine};
use wgqed::kerr::{connected_three_photon, connected_two_photon, single_photon_s, KerrParams};
use wgqed::system::{build_kerr, enumerate_orderings, LocalSystem};

use crate::config::{FileConfig, Format, IoArgs, LoadedSystem, SystemArgs, SystemSource};
use crate::output::{emit, json, short};
use crate::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Unitarity,
    ClosedForm,
    Routes,
    PvCancellation,
    ChiInfinity,
    Counts,
    All,
}

impl Suite {
    fn expand(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![
                Suite::Unitarity,
                Suite::ClosedForm,
                Suite::Routes,
                Suite::PvCancellation,
                Suite::ChiInfinity,
                Suite::Counts,
            ],
            s => vec![s],
        }
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, value_enum)]
    pub suite: Option<Suite>,
    /// Largest photon number exercised by the route suite.
    #[arg(long)]
    pub n: Option<usize>,
    /// Sampled points per check (suite-specific default when absent).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub max_deviation: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    fn deviation(name: impl Into<String>, max_deviation: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: max_deviation < tolerance,
            max_deviation,
            tolerance,
            detail,
        }
    }
}

#[derive(Serialize)]
struct Report {
    system: String,
    checks: Vec<Check>,
    passed: usize,
    failed: usize,
}

struct Ctx {
    loaded: LoadedSystem,
    n: usize,
    samples: Option<usize>,
    seed: u64,
}

impl Ctx {
    fn kerr(&self) -> Option<KerrParams> {
        self.loaded.kerr
    }

    /// Inline Kerr cavities are rebuilt with enough levels for `n` photons.
    fn system_for(&self, n: usize) -> Result<LocalSystem> {
        match self.kerr() {
            Some(k) => Ok(build_kerr(k.omega_c, k.chi, k.gamma, n + 1)?),
            None => Ok(self.loaded.sys.clone()),
        }
    }

    fn rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

pub fn run(args: VerifyArgs) -> Result<Outcome> {
    let file = FileConfig::load(args.io.config.as_deref(), "verify")?;
    let suite = match (args.suite, &file.suite) {
        (Some(s), _) => s,
        (None, Some(name)) => Suite::from_str(name, true).map_err(|e| anyhow::anyhow!("suite '{name}': {e}"))?,
        (None, None) => Suite::All,
    };
    let n = args.n.or(file.n).unwrap_or(3);
    if !(1..=4).contains(&n) {
        bail!("--n must be between 1 and 4, got {n}");
    }
    let samples = args.samples.or(file.samples);
    if samples == Some(0) {
        bail!("--samples must be positive");
    }
    let format = args.io.format.or(file.format).unwrap_or(Format::Human);
    let output = args.io.output.or(file.output.clone());
    let source = SystemSource::resolve(&args.system, &file)?;
    let loaded = match source {
        Some(s) => s.load(n + 1)?,
        None => SystemSource::Kerr {
            params: KerrParams::new(0.0, 1.0, 1.0)?,
            dim: None,
        }
        .load(n + 1)?,
    };
    let ctx = Ctx {
        loaded,
        n,
        samples,
        seed: args.seed.or(file.seed).unwrap_or(0x5eed),
    };

    let mut checks = Vec::new();
    for s in suite.expand() {
        let explicit = suite != Suite::All;
        let needs_kerr = matches!(s, Suite::ClosedForm | Suite::ChiInfinity);
        if needs_kerr && ctx.kerr().is_none() {
            if explicit {
                bail!("suite {s:?} compares against Kerr closed forms; give --kerr");
            }
            continue;
        }
        match s {
            Suite::Unitarity => checks.extend(unitarity(&ctx)?),
            Suite::ClosedForm => checks.extend(closed_form(&ctx)?),
            Suite::Routes => checks.extend(routes(&ctx)?),
            Suite::PvCancellation => checks.extend(pv_cancellation(&ctx)?),
            Suite::ChiInfinity => checks.extend(chi_infinity(&ctx)?),
            Suite::Counts => checks.extend(counts()?),
            Suite::All => unreachable!(),
        }
    }

    let passed = checks.iter().filter(|c| c.passed).count();
    let report = Report {
        system: ctx.loaded.description.clone(),
        failed: checks.len() - passed,
        passed,
        checks,
    };
    let text = match format {
        Format::Json => json(&report)?,
        Format::Human | Format::Csv => {
            let mut s = format!("# verify\nsystem {}\n", report.system);
            for c in &report.checks {
                let _ = write!(
                    s,
                    "check {}: {} max_deviation={} tolerance={}",
                    c.name,
                    if c.passed { "PASS" } else { "FAIL" },
                    short(c.max_deviation),
                    short(c.tolerance)
                );
                if !c.detail.is_empty() {
                    let _ = write!(s, " ({})", c.detail);
                }
                s.push('\n');
            }
            let _ = writeln!(s, "summary: {} passed, {} failed", report.passed, report.failed);
            s
        }
    };
    emit(output.as_deref(), &text)?;
    Ok(if report.failed == 0 {
        Outcome::Success
    } else {
        Outcome::ChecksFailed
    })
}

fn unitarity(ctx: &Ctx) -> Result<Vec<Check>> {
    let sys = ctx.system_for(1)?;
    let eng = ScatteringEngine::new(&sys, 1)?;
    let gamma = eng.gamma();
    let centre = ctx.kerr().map_or(0.0, |k| k.omega_c);
    let count = ctx.samples.unwrap_or(10_000);
    let mut worst = 0.0f64;
    for i in 0..count {
        let k = centre - 50.0 * gamma + 100.0 * gamma * i as f64 / (count.max(2) - 1) as f64;
        let s = 1.0 + eng.raw_density(&[k], &[k]);
        worst = worst.max((s.norm() - 1.0).abs());
    }
    let mut checks = vec![Check::deviation(
        "unitarity.modulus",
        worst,
        1e-12,
        format!("{count} frequencies over +-50 gamma"),
    )];
    if let Some(kp) = ctx.kerr() {
        let engine = 1.0 + eng.raw_density(&[kp.omega_c], &[kp.omega_c]);
        let closed = single_photon_s(&kp, kp.omega_c);
        let dev = (engine + 1.0).norm().max((closed + 1.0).norm());
        checks.push(Check::deviation("unitarity.resonance", dev, 1e-12, "S(omega_c) = -1".into()));
    }
    Ok(checks)
}

/// Random on-shell point with every `|p_i - k_j| >= min_gap`.
pub fn generic_point(rng: &mut ChaCha8Rng, n: usize, centre: f64, spread: f64, min_gap: f64) -> (Vec<f64>, Vec<f64>) {
    loop {
        let p: Vec<f64> = (0..n).map(|_| centre + rng.gen_range(-spread..spread)).collect();
        let mut k: Vec<f64> = (0..n).map(|_| centre + rng.gen_range(-spread..spread)).collect();
        k[n - 1] = p.iter().sum::<f64>() - k[..n - 1].iter().sum::<f64>();
        let near = p.iter().any(|pi| k.iter().any(|kj| (pi - kj).abs() < min_gap));
        if !near {
            return (p, k);
        }
    }
}

fn relative(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn closed_form(ctx: &Ctx) -> Result<Vec<Check>> {
    let kp = ctx.kerr().context("closed forms need a Kerr cavity")?;
    let count = ctx.samples.unwrap_or(50);
    let mut checks = Vec::new();
    for n in [2usize, 3] {
        let eng = ScatteringEngine::new(&ctx.system_for(n)?, n)?;
        let mut rng = ctx.rng(n as u64);
        let mut worst = 0.0f64;
        for _ in 0..count {
            let (p, k) = generic_point(&mut rng, n, kp.omega_c, 3.0 * kp.gamma, 1e-3 * kp.gamma);
            let want = if n == 2 {
                connected_two_photon(&kp, p[0], p[1], k[0], k[1])?
            } else {
                connected_three_photon(&kp, [p[0], p[1], p[2]], [k[0], k[1], k[2]])?.value
            };
            let got = eng.connected_density(&FrequencyConfig::new(p, k)?)?.value;
            // chi = 0 makes both sides vanish: compare absolutely then
            worst = worst.max(if want.norm() == 0.0 { got.norm() } else { relative(got, want) });
        }
        checks.push(Check::deviation(
            format!("closed-form.n{n}"),
            worst,
            1e-8,
            format!("{count} generic points"),
        ));
    }
    Ok(checks)
}

fn routes(ctx: &Ctx) -> Result<Vec<Check>> {
    let count = ctx.samples.unwrap_or(20);
    let mut checks = Vec::new();
    for n in 1..=ctx.n {
        let sys = ctx.system_for(n)?;
        let main = assemble_main_result_route(&sys, n)?;
        let mut compare = |label: &str, cluster: SMatrixExpression| -> Result<()> {
            let r = expressions_equal_seeded(&main, &cluster, count, ctx.seed)?;
            let mut detail = format!("{} supports, {count} points each", main.terms().len());
            if !r.structural_match {
                detail = format!(
                    "support mismatch: only main {:?}, only cluster {:?}",
                    r.only_in_left, r.only_in_right
                );
            }
            let dev = if r.structural_match { r.max_relative_deviation } else { f64::INFINITY };
            checks.push(Check::deviation(format!("routes.{label}.n{n}"), dev, 1e-8, detail));
            Ok(())
        };
        let engine_pieces = ConnectedPieces::from_engine(&sys, n)?;
        compare("engine-pieces", assemble_cluster_route(&engine_pieces, n, main.window)?)?;
        if let Some(kp) = ctx.kerr() {
            if n <= 3 {
                compare("kerr-pieces", assemble_cluster_route(&ConnectedPieces::kerr(kp), n, main.window)?)?;
            }
        }
    }
    Ok(checks)
}

/// Approach lines `p_i = k_j + eps` for the principal-value check: five per
/// photon number, cycling through the pairs `(i, j)` with fresh base points.
fn pv_lines(n: usize) -> Vec<(usize, usize)> {
    match n {
        2 => vec![(0, 0), (0, 1), (1, 0), (1, 1), (0, 0)],
        _ => vec![(0, 0), (0, 1), (1, 2), (2, 0), (2, 2)],
    }
}

fn pv_cancellation(ctx: &Ctx) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for n in [2usize, 3] {
        let eng = ScatteringEngine::new(&ctx.system_for(n)?, n)?;
        let gamma = eng.gamma();
        let centre = ctx.kerr().map_or(0.0, |k| k.omega_c);
        let mut rng = ctx.rng(100 + n as u64);
        for (line, (i, j)) in pv_lines(n).into_iter().enumerate() {
            let fix = (j + 1) % n;
            // base point exactly on p_i = k_j, all other flows well away from zero
            let (p0, k0) = loop {
                let p: Vec<f64> = (0..n).map(|_| centre + rng.gen_range(-1.5..1.5) * gamma).collect();
                let mut k: Vec<f64> = (0..n).map(|_| centre + rng.gen_range(-1.5..1.5) * gamma).collect();
                k[j] = p[i];
                k[fix] = 0.0;
                k[fix] = p.iter().sum::<f64>() - k.iter().sum::<f64>();
                let others = (0..n)
                    .flat_map(|a| (0..n).map(move |b| (a, b)))
                    .filter(|&ab| ab != (i, j))
                    .map(|(a, b)| (p[a] - k[b]).abs())
                    .fold(f64::INFINITY, f64::min);
                if n == 2 || others > 0.1 * gamma {
                    // for two photons p_i = k_j forces the complementary pair as well
                    if n == 2 && (p[1 - i] - k[1 - j]).abs() > 1e-12 * gamma {
                        continue;
                    }
                    if n == 2 && (p[i] - k[1 - j]).abs() < 0.1 * gamma {
                        continue;
                    }
                    break (p, k);
                }
            };
            let mut sums = Vec::new();
            let mut largest_term = Vec::new();
            for e in 1..=5 {
                let eps = 10f64.powi(-e) * gamma;
                let mut p = p0.clone();
                let mut k = k0.clone();
                p[i] += eps;
                k[fix] += eps;
                sums.push(eng.raw_density(&p, &k));
                largest_term.push(eng.terms().iter().map(|t| t.evaluate(&p, &k).norm()).fold(0.0, f64::max));
            }
            let diffs: Vec<f64> = sums.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
            let cauchy = diffs.windows(2).all(|w| w[1] < w[0]);
            let last = diffs[diffs.len() - 1] / sums[4].norm().max(1e-300);
            // growth exponent of the largest single term over the last decade
            let growth = (largest_term[4] / largest_term[3]).log10();
            let mut c = Check::deviation(
                format!("pv-cancellation.n{n}.line{}", line + 1),
                last,
                1e-3,
                format!(
                    "p{}=k{}: |sum| {} at eps=1e-5, largest term grows as eps^-{}",
                    i + 1,
                    j + 1,
                    short(sums[4].norm()),
                    short(growth)
                ),
            );
            c.passed &= cauchy && sums.iter().all(|v| v.norm().is_finite()) && growth > 0.9;
            checks.push(c);
        }
    }
    Ok(checks)
}

fn chi_infinity(ctx: &Ctx) -> Result<Vec<Check>> {
    let base = ctx.kerr().context("the strong-nonlinearity limit needs a Kerr cavity")?;
    let kp = KerrParams::new(base.omega_c, 1e6 * base.gamma, base.gamma)?;
    let eng = ScatteringEngine::new(&build_kerr(kp.omega_c, kp.chi, kp.gamma, 4)?, 3)?;
    let count = ctx.samples.unwrap_or(20);
    let mut rng = ctx.rng(7);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let (p, k) = generic_point(&mut rng, 3, kp.omega_c, 3.0 * kp.gamma, 1e-2 * kp.gamma);
        let m1 = connected_three_photon(&kp, [p[0], p[1], p[2]], [k[0], k[1], k[2]])?
            .sectors
            .context("generic point flagged near-singular")?[0];
        let got = eng.connected_density(&FrequencyConfig::new(p, k)?)?.value;
        worst = worst.max(relative(got, m1));
    }
    Ok(vec![Check::deviation(
        "chi-infinity.n3",
        worst,
        1e-3,
        format!("chi = 1e6 gamma, {count} points against the first ordering type"),
    )])
}

fn counts() -> Result<Vec<Check>> {
    let exact = |name: &str, got: Vec<usize>, want: Vec<usize>| Check {
        name: name.into(),
        passed: got == want,
        max_deviation: got.iter().zip(&want).map(|(a, b)| a.abs_diff(*b)).max().unwrap_or(0) as f64
            + got.len().abs_diff(want.len()) as f64,
        tolerance: 0.5,
        detail: format!("{got:?} vs {want:?}"),
    };
    let orderings: Vec<usize> = (1..=3)
        .map(|n| enumerate_orderings(n).map(|v| v.len()))
        .collect::<wgqed::Result<_>>()?;
    let params = KerrParams::new(0.0, 1.0, 1.0)?;
    let cluster = assemble_cluster_route(&ConnectedPieces::kerr(params), 3, Window::around(0.0, 1.0))?;
    let shapes = cluster.shape_counts();
    let groups = [vec![1, 1, 1], vec![2, 1], vec![3]]
        .iter()
        .map(|s| shapes.get(s).copied().unwrap_or(0))
        .collect();
    Ok(vec![
        exact("counts.orderings", orderings, vec![1, 2, 5]),
        exact("counts.cluster-n3", groups, vec![6, 9, 1]),
        exact("counts.main-classes-n5", vec![main_result_classes(5).len()], vec![6]),
    ])
}
