//! Linear generator fitted to a discretized Gaussian under squared W2.
//!
//! Noise is an `r`-dimensional standard normal and data is `N(0, Sigma)`, both
//! placed on product quantile grids. The generator `G(z) = A z` is fitted by
//! preconditioned descent on `W2^2`, using the optimal plan as an envelope
//! gradient; its column space is then compared with the top-`r` eigenspace.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{num, write_csv, OutputHeader};
use crate::dist::RandomSource;
use crate::error::{Error, Result};
use crate::transport::network_simplex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqgConfig {
    pub dim: usize,
    /// Row-major `dim x dim` covariance; empty means the identity.
    pub covariance: Vec<f64>,
    pub r: usize,
    /// Target atom count of each grid; each axis gets `round(atoms^(1/d))` quantiles.
    pub grid_atoms: usize,
    pub steps: usize,
    /// Step multiplier; `1` moves to the least-squares fit of the current plan.
    pub lr: f64,
    /// Relative objective decrease below which the fit stops.
    pub tol: f64,
    /// Independent random starts; the lowest final objective is kept.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for LqgConfig {
    fn default() -> Self {
        LqgConfig {
            dim: 2,
            covariance: vec![4.0, 0.0, 0.0, 1.0],
            r: 1,
            grid_atoms: 64,
            steps: 200,
            lr: 1.0,
            tol: 1e-10,
            restarts: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqgReport {
    /// Row-major `dim x r` generator matrix.
    pub a: Vec<f64>,
    /// `W2^2` after each step of the best start, from its initial matrix.
    pub history: Vec<f64>,
    pub objective: f64,
    /// Cosine of the largest principal angle to the top-`r` eigenspace.
    pub alignment: f64,
    pub eigenvalues: Vec<f64>,
    pub converged: bool,
}

/// Product grid of standard normal quantiles at `(i + 1/2)/k`, uniform weights.
pub fn quantile_grid(d: usize, atoms: usize) -> Vec<Vec<f64>> {
    let k = ((atoms as f64).powf(1.0 / d as f64).round() as usize).max(1);
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let axis: Vec<f64> = (0..k)
        .map(|i| std.inverse_cdf((i as f64 + 0.5) / k as f64))
        .collect();
    let mut pts = vec![Vec::with_capacity(d)];
    for _ in 0..d {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    pts
}

fn covariance(cfg: &LqgConfig) -> Result<DMatrix<f64>> {
    let d = cfg.dim;
    if d == 0 || cfg.r == 0 || cfg.r > d {
        return Err(Error::Parse(format!(
            "need 1 <= r <= dim, got r = {} and dim = {d}",
            cfg.r
        )));
    }
    if cfg.grid_atoms == 0 || cfg.restarts == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Parse(
            "grid_atoms, restarts and lr must be positive".into(),
        ));
    }
    if cfg.covariance.is_empty() {
        return Ok(DMatrix::identity(d, d));
    }
    if cfg.covariance.len() != d * d {
        return Err(Error::Parse(format!("covariance needs {} entries", d * d)));
    }
    let s = DMatrix::from_row_slice(d, d, &cfg.covariance);
    if (&s - s.transpose()).amax() > 1e-12 * (1.0 + s.amax()) {
        return Err(Error::Parse("covariance must be symmetric".into()));
    }
    Ok(s)
}

struct Problem {
    z: DMatrix<f64>,
    x: DMatrix<f64>,
    a_w: Vec<f64>,
    b_w: Vec<f64>,
    cz_inv: DMatrix<f64>,
}

impl Problem {
    /// `W2^2` at `a` and its envelope gradient.
    fn eval(&self, a: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let y = a * &self.z;
        let (n, m) = (self.z.ncols(), self.x.ncols());
        let mut cost = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                cost.push((y.column(i) - self.x.column(j)).norm_squared());
            }
        }
        let sol = network_simplex(&self.a_w, &self.b_w, &cost)?;
        let mut grad = DMatrix::zeros(a.nrows(), a.ncols());
        for i in 0..n {
            for j in 0..m {
                let p = sol.flow[i * m + j];
                if p > 0.0 {
                    grad +=
                        2.0 * p * (y.column(i) - self.x.column(j)) * self.z.column(i).transpose();
                }
            }
        }
        Ok((sol.value, grad))
    }
}

/// Smallest singular value of `U^T Q`, for orthonormal bases `U` and `Q`.
pub fn subspace_alignment(a: &DMatrix<f64>, top: &DMatrix<f64>) -> f64 {
    let q = a.clone().qr().q();
    let m = top.transpose() * q.columns(0, a.ncols());
    m.singular_values().min().clamp(0.0, 1.0)
}

/// Descent from `a`; returns the matrix, its objective, the history and
/// whether the decrease fell below tolerance within the step budget.
fn descend(
    problem: &Problem,
    mut a: DMatrix<f64>,
    cfg: &LqgConfig,
) -> Result<(DMatrix<f64>, f64, Vec<f64>, bool)> {
    let (mut value, mut grad) = problem.eval(&a)?;
    let mut history = vec![value];
    let mut converged = false;
    for _ in 0..cfg.steps {
        let next = &a - cfg.lr * 0.5 * &grad * &problem.cz_inv;
        let (v, g) = problem.eval(&next)?;
        let decrease = value - v;
        if !(decrease > cfg.tol * (1.0 + value)) {
            if v <= value {
                a = next;
                value = v;
                history.push(v);
            }
            converged = true;
            break;
        }
        a = next;
        value = v;
        grad = g;
        history.push(v);
    }
    Ok((a, value, history, converged))
}

pub fn run_lqg_pca(cfg: &LqgConfig) -> Result<LqgReport> {
    let sigma = covariance(cfg)?;
    let (d, r) = (cfg.dim, cfg.r);
    let eig = SymmetricEigen::new(sigma.clone());
    if eig
        .eigenvalues
        .iter()
        .any(|&l| l < -1e-12 * (1.0 + sigma.amax()))
    {
        return Err(Error::Parse(
            "covariance must be positive semidefinite".into(),
        ));
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let top = DMatrix::from_fn(d, r, |row, c| eig.eigenvectors[(row, order[c])]);
    let root = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();

    let zs = quantile_grid(r, cfg.grid_atoms);
    let xs = quantile_grid(d, cfg.grid_atoms);
    let z = DMatrix::from_fn(r, zs.len(), |i, j| zs[j][i]);
    let x = &root * DMatrix::from_fn(d, xs.len(), |i, j| xs[j][i]);
    let cz = &z * z.transpose() / zs.len() as f64;
    let cz_inv = cz
        .try_inverse()
        .ok_or_else(|| Error::Domain("noise grid is degenerate".into()))?;
    let problem = Problem {
        a_w: vec![1.0 / zs.len() as f64; zs.len()],
        b_w: vec![1.0 / xs.len() as f64; xs.len()],
        z,
        x,
        cz_inv,
    };

    let mut best: Option<(DMatrix<f64>, f64, Vec<f64>, bool)> = None;
    for start in 0..cfg.restarts {
        let mut rng = RandomSource::stream(cfg.seed, start as u64);
        let init = DMatrix::from_fn(d, r, |_, _| 0.5 * rng.normal());
        let fit = descend(&problem, init, cfg)?;
        if best.as_ref().is_none_or(|b| fit.1 < b.1) {
            best = Some(fit);
        }
    }
    let (a, value, history, converged) = best.expect("at least one restart");
    Ok(LqgReport {
        a: (0..d)
            .flat_map(|i| (0..r).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)])
            .collect(),
        alignment: subspace_alignment(&a, &top),
        objective: value,
        history,
        eigenvalues,
        converged,
    })
}

/// Writes `step,w2sq` followed by `# alignment:` and `# converged:` lines.
pub fn write_lqg_csv(
    path: &std::path::Path,
    header: &OutputHeader,
    report: &LqgReport,
) -> Result<()> {
    let body: Vec<Vec<String>> = report
        .history
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i.to_string(), num(*v)])
        .collect();
    write_csv(path, header, &["step", "w2sq"], &body)?;
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().append(true).open(path)?;
    writeln!(f, "# alignment: {}", num(report.alignment))?;
    writeln!(f, "# converged: {}", report.converged)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_grid_is_symmetric() {
        let g = quantile_grid(1, 64);
        assert_eq!(g.len(), 64);
        assert!((g[0][0] + g[63][0]).abs() < 1e-12);
        assert_eq!(quantile_grid(2, 64).len(), 64);
    }

    #[test]
    fn anisotropic_fit_finds_the_top_direction() {
        let rep = run_lqg_pca(&LqgConfig::default()).unwrap();
        assert!(rep.alignment >= 0.99, "{rep:?}");
        assert!(rep.history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn full_rank_generator_matches_the_data() {
        let rep = run_lqg_pca(&LqgConfig {
            r: 2,
            ..LqgConfig::default()
        })
        .unwrap();
        assert!(rep.objective <= 1e-2, "{rep:?}");
    }

    #[test]
    fn isotropic_objective_is_flat_across_directions() {
        let vals: Vec<f64> = (0..5)
            .map(|seed| {
                run_lqg_pca(&LqgConfig {
                    covariance: Vec::new(),
                    seed,
                    ..LqgConfig::default()
                })
                .unwrap()
                .objective
            })
            .collect();
        let (lo, hi) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        assert!(hi - lo <= 0.02 * hi, "{vals:?}");
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let bad = [
            LqgConfig {
                r: 3,
                ..LqgConfig::default()
            },
            LqgConfig {
                covariance: vec![1.0, 2.0, 0.0, 1.0],
                ..LqgConfig::default()
            },
            LqgConfig {
                covariance: vec![1.0, 0.0, 0.0, -1.0],
                ..LqgConfig::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(run_lqg_pca(&cfg), Err(Error::Parse(_))));
        }
    }
}
