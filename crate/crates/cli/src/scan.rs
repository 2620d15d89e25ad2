use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use wgqed::engine::{FrequencyConfig, ScatteringEngine};

use crate::config::{FileConfig, Format, GridSpec, IoArgs, SystemArgs, SystemSource};
use crate::output::{csv_table, emit, full, json, short};
use crate::Outcome;

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long)]
    pub n: Option<usize>,
    /// Total detuning grid `min:max:count`; each photon carries total/N.
    #[arg(long, value_name = "GRID", allow_hyphen_values = true)]
    pub total: Option<String>,
    /// Fixed offsets added to the equal split of the outputs (must sum to 0).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub relative_p: Option<Vec<f64>>,
    /// Fixed offsets added to the equal split of the inputs (must sum to 0).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub relative_k: Option<Vec<f64>>,
    #[command(flatten)]
    pub io: IoArgs,
}

#[derive(Serialize)]
struct Row {
    total: f64,
    p: Vec<f64>,
    k: Vec<f64>,
    re: f64,
    im: f64,
    abs: f64,
}

fn offsets(given: Option<Vec<f64>>, n: usize, flag: &str) -> Result<Vec<f64>> {
    let v = given.unwrap_or_else(|| vec![0.0; n]);
    if v.len() != n {
        bail!("{flag} needs {n} values, got {}", v.len());
    }
    let sum: f64 = v.iter().sum();
    let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    if sum.abs() > 1e-12 * scale {
        bail!("{flag} offsets must sum to zero (sum = {sum:e})");
    }
    Ok(v)
}

pub fn run(args: ScanArgs) -> Result<Outcome> {
    let file = FileConfig::load(args.io.config.as_deref(), "scan")?;
    let source = SystemSource::resolve_required(&args.system, &file)?;
    let n = args.n.or(file.n).context("missing --n")?;
    let grid = GridSpec::parse(&args.total.or(file.total).context("missing --total min:max:count")?)?;
    let rp = offsets(args.relative_p.or(file.relative_p), n, "--relative-p")?;
    let rk = offsets(args.relative_k.or(file.relative_k), n, "--relative-k")?;
    let format = args.io.format.or(file.format).unwrap_or(Format::Csv);
    let output = args.io.output.or(file.output.clone());

    let loaded = source.load(n + 1)?;
    let engine = ScatteringEngine::new(&loaded.sys, n)?;

    let rows: Vec<Row> = grid
        .values()
        .into_par_iter()
        .map(|total| -> Result<Row> {
            let share = total / n as f64;
            let p: Vec<f64> = rp.iter().map(|r| share + r).collect();
            let k: Vec<f64> = rk.iter().map(|r| share + r).collect();
            let mut v = engine.connected_density(&FrequencyConfig::new(p.clone(), k.clone())?)?.value;
            // one photon: report the transmission itself
            if n == 1 {
                v += 1.0;
            }
            Ok(Row {
                total,
                p,
                k,
                re: v.re,
                im: v.im,
                abs: v.norm(),
            })
        })
        .collect::<Result<_>>()?;

    let text = match format {
        Format::Json => json(&rows)?,
        Format::Csv => {
            let header: Vec<String> = std::iter::once("total".to_string())
                .chain((1..=n).map(|i| format!("p{i}")))
                .chain((1..=n).map(|j| format!("k{j}")))
                .chain(["re", "im", "abs"].map(String::from))
                .collect();
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    std::iter::once(r.total)
                        .chain(r.p.iter().copied())
                        .chain(r.k.iter().copied())
                        .chain([r.re, r.im, r.abs])
                        .map(full)
                        .collect()
                })
                .collect();
            csv_table(&header, &body)?
        }
        Format::Human => {
            let mut s = format!("{:>12} {:>12} {:>12} {:>12}\n", "total", "re", "im", "abs");
            for r in &rows {
                s += &format!(
                    "{:>12} {:>12} {:>12} {:>12}\n",
                    short(r.total),
                    short(r.re),
                    short(r.im),
                    short(r.abs)
                );
            }
            s
        }
    };
    emit(output.as_deref(), &text)?;
    Ok(Outcome::Success)
}
