use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use num_complex::Complex64;
use serde::Serialize;
use wgqed::assembly::{assemble_main_result_route, support_label};
use wgqed::engine::{
    generic_direction, masked_flow, Block, FrequencyConfig, ScatteringEngine, NEAR_SINGULAR_OFFSET, ON_SHELL_TOL,
};

use crate::config::{FileConfig, Format, IoArgs, SystemArgs, SystemSource};
use crate::output::{csv_table, emit, full, json, short, short_complex, JsonComplex};
use crate::Outcome;

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Photon number (defaults to the number of output frequencies).
    #[arg(long)]
    pub n: Option<usize>,
    /// Output frequencies, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub p: Option<Vec<f64>>,
    /// Input frequencies, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub k: Option<Vec<f64>>,
    /// Also evaluate every support of the full S-matrix expression.
    #[arg(long)]
    pub full: bool,
    /// Write the resolved local system as JSON.
    #[arg(long, value_name = "PATH")]
    pub save_system: Option<PathBuf>,
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(Serialize)]
struct TermReport {
    support: String,
    pairings: Vec<[usize; 2]>,
    on_support: bool,
    density: Option<JsonComplex>,
}

#[derive(Serialize)]
struct EvalReport {
    system: String,
    photons: usize,
    p: Vec<f64>,
    k: Vec<f64>,
    connected: JsonComplex,
    near_singular: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    transmission: Option<JsonComplex>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    terms: Vec<TermReport>,
}

pub fn run(args: EvalArgs) -> Result<Outcome> {
    let file = FileConfig::load(args.io.config.as_deref(), "eval")?;
    let source = SystemSource::resolve_required(&args.system, &file)?;
    let p = args.p.or(file.p).context("missing --p")?;
    let k = args.k.or(file.k).context("missing --k")?;
    let n = args.n.or(file.n).unwrap_or(p.len());
    if p.len() != n || k.len() != n {
        bail!("--n {n} needs {n} output and {n} input frequencies, got {} and {}", p.len(), k.len());
    }
    let full_report = args.full || file.full.unwrap_or(false);
    let format = args.io.format.or(file.format).unwrap_or(Format::Human);
    let output = args.io.output.or(file.output.clone());

    let loaded = source.load(n + 1)?;
    if let Some(path) = &args.save_system {
        std::fs::write(path, loaded.sys.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    }
    let engine = ScatteringEngine::new(&loaded.sys, n)?;
    let cfg = FrequencyConfig::new(p.clone(), k.clone())?;
    let connected = engine.connected_density(&cfg)?;
    let transmission = (n == 1).then(|| 1.0 + connected.value);

    let mut terms = Vec::new();
    if full_report {
        let expr = assemble_main_result_route(&loaded.sys, n)?;
        let scale = p.iter().chain(&k).fold(1.0f64, |m, x| m.max(x.abs()));
        for t in expr.terms() {
            let on_support = t
                .blocks
                .iter()
                .all(|b| masked_flow(b.out_mask, b.in_mask, &p, &k).abs() <= ON_SHELL_TOL * scale);
            terms.push(TermReport {
                support: support_label(&t.blocks),
                pairings: t.pairings().iter().map(|&(i, j)| [i + 1, j + 1]).collect(),
                on_support,
                density: on_support.then(|| {
                    let direct = t.density(&p, &k);
                    let smooth = t.blocks.iter().all(|b| b.size() == 1);
                    if (connected.near_singular && !smooth) || !direct.is_finite() {
                        averaged(&t.blocks, |p, k| t.density(p, k), &p, &k, engine.gamma()).into()
                    } else {
                        direct.into()
                    }
                }),
            });
        }
    }

    let report = EvalReport {
        system: loaded.description,
        photons: n,
        p,
        k,
        connected: connected.value.into(),
        near_singular: connected.near_singular,
        transmission: transmission.map(Into::into),
        terms,
    };
    let text = match format {
        Format::Json => json(&report)?,
        Format::Csv => eval_csv(&report)?,
        Format::Human => eval_human(&report, connected.value, transmission),
    };
    emit(output.as_deref(), &text)?;
    Ok(Outcome::Success)
}

/// Symmetric average at `+-1e-4 gamma` along a direction that keeps every
/// block's conservation law, so the point stays on the support.
fn averaged(blocks: &[Block], f: impl Fn(&[f64], &[f64]) -> Complex64, p: &[f64], k: &[f64], gamma: f64) -> Complex64 {
    let mut dp = vec![0.0; p.len()];
    let mut dk = vec![0.0; k.len()];
    for b in blocks {
        let (bp, bk) = generic_direction(b.size());
        for (slot, &i) in b.outputs().iter().enumerate() {
            dp[i] = bp[slot];
        }
        for (slot, &j) in b.inputs().iter().enumerate() {
            dk[j] = bk[slot];
        }
    }
    let eps = NEAR_SINGULAR_OFFSET * gamma;
    let at = |sign: f64| {
        let ps: Vec<f64> = p.iter().zip(&dp).map(|(x, d)| x + sign * eps * d).collect();
        let ks: Vec<f64> = k.iter().zip(&dk).map(|(x, d)| x + sign * eps * d).collect();
        f(&ps, &ks)
    };
    0.5 * (at(1.0) + at(-1.0))
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| short(*x)).collect::<Vec<_>>().join(", ")
}

fn eval_human(r: &EvalReport, connected: Complex64, transmission: Option<Complex64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "system       {}", r.system);
    let _ = writeln!(s, "photons      {}", r.photons);
    let _ = writeln!(s, "p            {}", list(&r.p));
    let _ = writeln!(s, "k            {}", list(&r.k));
    let _ = writeln!(
        s,
        "connected    {}   |.| = {}",
        short_complex(connected),
        short(connected.norm())
    );
    if let Some(t) = transmission {
        let _ = writeln!(s, "transmission {}   |.| = {}", short_complex(t), short(t.norm()));
    }
    if r.near_singular {
        let _ = writeln!(s, "note         on a principal-value manifold; symmetric average of neighbouring points");
    }
    if !r.terms.is_empty() {
        let _ = writeln!(s, "\nsupports     {}", r.terms.len());
        for t in &r.terms {
            let pairs = if t.pairings.is_empty() {
                "-".to_string()
            } else {
                t.pairings
                    .iter()
                    .map(|[i, j]| format!("p{i}=k{j}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let value = match &t.density {
                Some(d) => format!(
                    "{}   |.| = {}",
                    short_complex(Complex64::new(d.re, d.im)),
                    short(d.abs)
                ),
                None => "off support".to_string(),
            };
            let _ = writeln!(s, "  {:<28} {:<16} {value}", t.support, pairs);
        }
    }
    s
}

fn eval_csv(r: &EvalReport) -> Result<String> {
    let header: Vec<String> = ["quantity", "support", "on_support", "re", "im", "abs"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let row = |q: &str, support: &str, on: bool, z: Option<&JsonComplex>| -> Vec<String> {
        let mut v = vec![q.to_string(), support.to_string(), on.to_string()];
        match z {
            Some(z) => v.extend([full(z.re), full(z.im), full(z.abs)]),
            None => v.extend([String::new(), String::new(), String::new()]),
        }
        v
    };
    let mut rows = vec![row("connected", "", true, Some(&r.connected))];
    if let Some(t) = &r.transmission {
        rows.push(row("transmission", "", true, Some(t)));
    }
    for t in &r.terms {
        rows.push(row("term", &t.support, t.on_support, t.density.as_ref()));
    }
    csv_table(&header, &rows)
}
