//! Flag groups, config files and system resolution shared by the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;
use wgqed::kerr::KerrParams;
use wgqed::system::{build_kerr, LocalSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Human,
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SystemArgs {
    /// Inline Kerr cavity `wc=..,chi=..,gamma=..[,dim=..]`.
    #[arg(long, value_name = "PARAMS", allow_hyphen_values = true)]
    pub kerr: Option<String>,
    /// Serialized local system (JSON).
    #[arg(long, value_name = "PATH")]
    pub system: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct IoArgs {
    /// JSON file supplying defaults for any flag; command-line flags win.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Write the table or report here instead of stdout.
    #[arg(long, short, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

/// Any subset of the command-line flags, read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<String>,
    pub kerr: Option<String>,
    pub system: Option<PathBuf>,
    pub n: Option<usize>,
    pub p: Option<Vec<f64>>,
    pub k: Option<Vec<f64>>,
    pub full: Option<bool>,
    pub total: Option<String>,
    pub relative_p: Option<Vec<f64>>,
    pub relative_k: Option<Vec<f64>>,
    pub suite: Option<String>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub photons: Option<usize>,
    pub sites: Option<usize>,
    pub length: Option<f64>,
    pub time: Option<f64>,
    pub sigma: Option<f64>,
    pub start: Option<f64>,
    pub k0: Option<Vec<f64>>,
    pub grid: Option<String>,
    pub budget: Option<usize>,
    pub report: Option<PathBuf>,
    pub format: Option<Format>,
    pub output: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>, mode: &str) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(m) = &cfg.mode {
            if m != mode {
                bail!("config file is for mode '{m}', not '{mode}'");
            }
        }
        Ok(cfg)
    }
}

pub struct LoadedSystem {
    pub sys: LocalSystem,
    pub kerr: Option<KerrParams>,
    pub description: String,
}

pub enum SystemSource {
    Kerr { params: KerrParams, dim: Option<usize> },
    File(PathBuf),
}

impl SystemSource {
    /// Flags override the config file, but an inline Kerr cavity and a system
    /// file from different sources conflict.
    pub fn resolve(cli: &SystemArgs, file: &FileConfig) -> Result<Option<Self>> {
        if cli.kerr.is_some() && cli.system.is_some() {
            bail!("--kerr and --system are mutually exclusive");
        }
        let kerr = cli.kerr.clone().or_else(|| file.kerr.clone());
        let system = cli.system.clone().or_else(|| file.system.clone());
        match (kerr, system) {
            (Some(_), Some(_)) => bail!("inline Kerr parameters conflict with a system file (one from the config file)"),
            (Some(k), None) => {
                let (params, dim) = parse_kerr(&k)?;
                Ok(Some(Self::Kerr { params, dim }))
            }
            (None, Some(path)) => Ok(Some(Self::File(path))),
            (None, None) => Ok(None),
        }
    }

    pub fn resolve_required(cli: &SystemArgs, file: &FileConfig) -> Result<Self> {
        Self::resolve(cli, file)?.context("no local system given; use --kerr or --system")
    }

    /// `default_dim` applies to inline Kerr cavities without `dim=`.
    pub fn load(&self, default_dim: usize) -> Result<LoadedSystem> {
        match self {
            Self::Kerr { params, dim } => {
                let dim = dim.unwrap_or(default_dim);
                Ok(LoadedSystem {
                    sys: build_kerr(params.omega_c, params.chi, params.gamma, dim)?,
                    kerr: Some(*params),
                    description: format!(
                        "kerr omega_c={} chi={} gamma={} dim={dim}",
                        params.omega_c, params.chi, params.gamma
                    ),
                })
            }
            Self::File(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading system {}", path.display()))?;
                Ok(LoadedSystem {
                    sys: LocalSystem::from_json(&text)?,
                    kerr: None,
                    description: format!("file {}", path.display()),
                })
            }
        }
    }
}

pub fn parse_kerr(text: &str) -> Result<(KerrParams, Option<usize>)> {
    let (mut wc, mut chi, mut gamma, mut dim) = (None, None, None, None);
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = item
            .split_once('=')
            .with_context(|| format!("Kerr parameter '{item}' is not key=value"))?;
        let number = || -> Result<f64> {
            value
                .trim()
                .parse::<f64>()
                .with_context(|| format!("Kerr parameter {key}: '{value}' is not a number"))
        };
        match key.trim() {
            "wc" | "omega_c" => wc = Some(number()?),
            "chi" => chi = Some(number()?),
            "gamma" => gamma = Some(number()?),
            "dim" => {
                dim = Some(
                    value
                        .trim()
                        .parse::<usize>()
                        .with_context(|| format!("Kerr dim '{value}' is not a positive integer"))?,
                )
            }
            other => bail!("unknown Kerr parameter '{other}' (expected wc, chi, gamma, dim)"),
        }
    }
    let params = KerrParams::new(
        wc.context("Kerr parameters need wc")?,
        chi.context("Kerr parameters need chi")?,
        gamma.context("Kerr parameters need gamma")?,
    )?;
    Ok((params, dim))
}

/// `min:max:count` with `count > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            bail!("grid '{text}' must be min:max:count");
        }
        let min: f64 = parts[0].trim().parse().with_context(|| format!("grid minimum '{}'", parts[0]))?;
        let max: f64 = parts[1].trim().parse().with_context(|| format!("grid maximum '{}'", parts[1]))?;
        let count: usize = parts[2].trim().parse().with_context(|| format!("grid count '{}'", parts[2]))?;
        if count == 0 {
            bail!("grid '{text}' has no points; count must be positive");
        }
        if !(min.is_finite() && max.is_finite()) || max < min {
            bail!("grid '{text}' needs finite min <= max");
        }
        Ok(Self { min, max, count })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.min + i as f64 * step).collect()
    }
}
