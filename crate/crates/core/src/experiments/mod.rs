//! Reproducible experiment drivers behind the command-line tool.
//!
//! Each driver returns its rows; the `write_*` helpers emit CSV with a comment
//! header recording the command line, seed and tool version.

pub mod continuity;
pub mod duality_check;
pub mod lqg;
pub mod mixture;
pub mod plot;
pub mod toy;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use continuity::{continuity_scan, ContinuityConfig, ContinuityRow};
pub use duality_check::{run_duality_check, DualityCheckConfig, DualityRow};
pub use lqg::{run_lqg_pca, LqgConfig, LqgReport};
pub use mixture::{run_mixture_scaling, MixtureScalingConfig, MixtureScalingReport};
pub use plot::{emit_svg, plot_csv, PlotSpec, Series};
pub use toy::{run_train_toy, RunSummary, TrainToyConfig};

/// Version string written into every output header.
pub const TOOL_VERSION: &str = concat!("dualgan ", env!("CARGO_PKG_VERSION"));

/// Provenance recorded at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputHeader {
    pub command: String,
    pub seed: u64,
}

impl OutputHeader {
    pub fn new(command: impl Into<String>, seed: u64) -> Self {
        OutputHeader {
            command: command.into(),
            seed,
        }
    }

    /// `#`-prefixed lines for CSV files.
    pub fn csv_lines(&self) -> String {
        format!(
            "# command: {}\n# seed: {}\n# version: {}\n",
            self.command, self.seed, TOOL_VERSION
        )
    }

    /// An XML comment for SVG files.
    pub fn svg_comment(&self) -> String {
        let clean = |s: &str| s.replace("--", "- -");
        format!(
            "<!-- command: {} | seed: {} | version: {} -->\n",
            clean(&self.command),
            self.seed,
            TOOL_VERSION
        )
    }
}

/// Writes a header, a column line and the rows.
pub fn write_csv(
    path: &Path,
    header: &OutputHeader,
    columns: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = fs::File::create(path)?;
    out.write_all(header.csv_lines().as_bytes())?;
    writeln!(out, "{}", columns.join(","))?;
    for r in rows {
        if r.len() != columns.len() {
            return Err(Error::Invariant(format!(
                "row has {} cells for {} columns",
                r.len(),
                columns.len()
            )));
        }
        writeln!(out, "{}", r.join(","))?;
    }
    Ok(())
}

/// Writes `body` after the header of `header`'s kind (CSV lines or SVG comment).
pub fn write_with_header(path: &Path, header_text: &str, body: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = fs::File::create(path)?;
    out.write_all(header_text.as_bytes())?;
    out.write_all(body)?;
    Ok(())
}

/// Shortest round-tripping decimal; `nan` for missing values.
pub fn num(v: f64) -> String {
    crate::neuralgan::train::fmt_num(v)
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// input is constant or shorter than two.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
