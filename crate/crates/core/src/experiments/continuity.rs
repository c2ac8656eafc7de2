//! JS against the hybrid divergences along a one-parameter generator family.

use serde::{Deserialize, Serialize};

use super::{linspace, num, write_csv, OutputHeader};
use crate::dist::{pushforward, FiniteDistribution, GeneratorFamily, Support, SupportPoint};
use crate::error::{Error, Result};
use crate::fdiv::{js_divergence, FGenerator};
use crate::hybrid::{hybrid_primal, HybridSpec, DEFAULT_TOL};
use crate::transport::{wasserstein, CostFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuityConfig {
    /// `shift` (`z + theta`) or `scale` (`theta z`).
    pub family: String,
    /// Atoms of the uniform noise law, one-dimensional.
    pub noise: Vec<f64>,
    /// Atoms of the uniform reference distribution `Q`.
    pub reference: Vec<f64>,
    pub theta_min: f64,
    pub theta_max: f64,
    pub points: usize,
    /// Frank-Wolfe tolerance for the hybrid divergences.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ContinuityConfig {
    fn default() -> Self {
        ContinuityConfig {
            family: "shift".into(),
            noise: vec![0.0],
            reference: vec![0.0],
            theta_min: -1.0,
            theta_max: 1.0,
            points: 21,
            tol: DEFAULT_TOL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityRow {
    pub theta: f64,
    /// JS in bits.
    pub js: f64,
    pub djsw1: f64,
    pub djsw2: f64,
    pub w1: f64,
    /// W1 between this law and the previous grid point's; zero on the first row.
    pub step_w1: f64,
    /// Solver failure for any cell of this row; failed cells are `NaN`.
    pub error: Option<String>,
}

fn uniform_line(xs: &[f64]) -> Result<FiniteDistribution> {
    if xs.is_empty() {
        return Err(Error::Parse("atom lists must be nonempty".into()));
    }
    FiniteDistribution::normalized(
        xs.iter().map(|&x| SupportPoint::scalar(x)).collect(),
        vec![1.0; xs.len()],
    )
}

fn family(cfg: &ContinuityConfig) -> Result<GeneratorFamily> {
    let noise = uniform_line(&cfg.noise)?;
    let bound = cfg.theta_min.abs().max(cfg.theta_max.abs());
    match cfg.family.as_str() {
        "shift" => Ok(GeneratorFamily::shift(noise, bound)),
        "scale" => Ok(GeneratorFamily::scale(noise, bound)),
        other => Err(Error::Parse(format!(
            "unknown family {other:?}; expected shift or scale"
        ))),
    }
}

/// One row per grid point. Both hybrid divergences use a single candidate
/// support, the union of every pushforward on the grid and `Q`.
pub fn continuity_scan(cfg: &ContinuityConfig) -> Result<Vec<ContinuityRow>> {
    if cfg.points == 0 || !(cfg.theta_min <= cfg.theta_max) {
        return Err(Error::Parse("the theta grid must be nonempty".into()));
    }
    let fam = family(cfg)?;
    let q = uniform_line(&cfg.reference)?;
    let grid = linspace(cfg.theta_min, cfg.theta_max, cfg.points);
    let laws = grid
        .iter()
        .map(|&t| pushforward(&fam, &[t]))
        .collect::<Result<Vec<FiniteDistribution>>>()?;
    let mut parts: Vec<&Support> = laws.iter().map(|d| d.support()).collect();
    parts.push(q.support());
    let candidate = Support::union(&parts)?;
    let w1_spec = HybridSpec::new(FGenerator::Js, CostFunction::Norm)
        .with_candidate(candidate.clone())
        .with_tol(cfg.tol);
    let w2_spec = HybridSpec::new(FGenerator::Js, CostFunction::NormSquared)
        .with_candidate(candidate)
        .with_tol(cfg.tol);
    Ok(grid
        .iter()
        .zip(&laws)
        .enumerate()
        .map(|(i, (&theta, p))| {
            let mut errors = Vec::new();
            let mut cell = |name: &str, r: Result<f64>| match r {
                Ok(v) => v,
                Err(e) => {
                    errors.push(format!("{name}: {e}"));
                    f64::NAN
                }
            };
            let js = cell("js", js_divergence(p, &q));
            let djsw1 = cell("djsw1", hybrid_primal(p, &q, &w1_spec).map(|r| r.value));
            let djsw2 = cell("djsw2", hybrid_primal(p, &q, &w2_spec).map(|r| r.value));
            let w1 = cell("w1", wasserstein(p, &q, 1));
            let step_w1 = if i == 0 {
                0.0
            } else {
                cell("step", wasserstein(&laws[i - 1], p, 1))
            };
            ContinuityRow {
                theta,
                js,
                djsw1,
                djsw2,
                w1,
                step_w1,
                error: (!errors.is_empty()).then(|| errors.join("; ")),
            }
        })
        .collect())
}

/// Largest excess of an adjacent `djsw1` jump over the W1 distance between
/// the two generated laws; `NaN` cells count as infinite excess.
pub fn max_jump_excess(rows: &[ContinuityRow]) -> f64 {
    rows.windows(2)
        .map(|w| {
            let e = (w[1].djsw1 - w[0].djsw1).abs() - w[1].step_w1;
            if e.is_nan() {
                f64::INFINITY
            } else {
                e
            }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Writes `theta,js,djsw1,djsw2,w1`; failures are listed as trailing comments.
pub fn write_continuity_csv(
    path: &std::path::Path,
    header: &OutputHeader,
    rows: &[ContinuityRow],
) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.theta),
                num(r.js),
                num(r.djsw1),
                num(r.djsw2),
                num(r.w1),
            ]
        })
        .collect();
    write_csv(
        path,
        header,
        &["theta", "js", "djsw1", "djsw2", "w1"],
        &body,
    )?;
    let failures: Vec<String> = rows
        .iter()
        .filter_map(|r| {
            r.error
                .as_ref()
                .map(|e| format!("# error at theta={}: {e}\n", num(r.theta)))
        })
        .collect();
    if !failures.is_empty() {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new().append(true).open(path)?;
        f.write_all(failures.concat().as_bytes())?;
    }
    Ok(())
}
