use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use num_complex::Complex64;
use serde::Serialize;

/// 17 significant digits: lossless for doubles.
pub fn full(x: f64) -> String {
    format!("{x:.16e}")
}

/// 6 significant digits, plain notation for moderate magnitudes.
pub fn short(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

pub fn short_complex(z: Complex64) -> String {
    let sign = if z.im < 0.0 { '-' } else { '+' };
    format!("{} {sign} {}i", short(z.re), short(z.im.abs()))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct JsonComplex {
    pub re: f64,
    pub im: f64,
    pub abs: f64,
}

impl From<Complex64> for JsonComplex {
    fn from(z: Complex64) -> Self {
        Self {
            re: z.re,
            im: z.im,
            abs: z.norm(),
        }
    }
}

/// Comma-separated table with a header row and LF terminators.
pub fn csv_table(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(String::from_utf8(w.into_inner().context("flushing table")?)?)
}

pub fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}
