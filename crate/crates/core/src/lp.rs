//! Dense two-phase simplex for small linear programs.
//!
//! Used as an independent oracle for transport and for the moment and
//! Lipschitz-constrained programs of the duality checks. Problem sizes here are
//! a few hundred variables at most.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// `opt c.x` subject to rows `a.x (rel) b`; variables are `>= 0` unless marked free.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    sense: Sense,
    objective: Vec<f64>,
    free: Vec<bool>,
    rows: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(self) -> Result<(Vec<f64>, f64)> {
        match self {
            LpOutcome::Optimal { x, value } => Ok((x, value)),
            LpOutcome::Infeasible => Err(Error::Infeasible("linear program".into())),
            LpOutcome::Unbounded => Err(Error::Unbounded("linear program".into())),
        }
    }
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;

impl LinearProgram {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            sense,
            objective,
            free: vec![false; n],
            rows: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn set_free(&mut self, j: usize) {
        self.free[j] = true;
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.n_vars(), "row length");
        self.rows.push((coeffs, rel, rhs));
    }

    /// Adds a row given as sparse `(index, coefficient)` pairs.
    pub fn add_sparse_row(&mut self, entries: &[(usize, f64)], rel: Relation, rhs: f64) {
        let mut row = vec![0.0; self.n_vars()];
        for &(j, a) in entries {
            row[j] += a;
        }
        self.add_row(row, rel, rhs);
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        let n = self.n_vars();
        // Column layout: original (x+ ), then x- for free vars, then slacks, then artificials.
        let free_idx: Vec<usize> = (0..n).filter(|&j| self.free[j]).collect();
        let n_struct = n + free_idx.len();
        let m = self.rows.len();
        let n_slack = self.rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_cols = n_struct + n_slack + m;
        let width = n_cols + 1;

        let mut t = vec![0.0; (m + 1) * width];
        let mut basis = vec![0usize; m];
        let mut slack_col = n_struct;
        for (i, (coeffs, rel, rhs)) in self.rows.iter().enumerate() {
            let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
            let row = &mut t[i * width..(i + 1) * width];
            for j in 0..n {
                row[j] = sign * coeffs[j];
            }
            for (k, &j) in free_idx.iter().enumerate() {
                row[n + k] = -sign * coeffs[j];
            }
            row[n_cols] = sign * rhs;
            let rel = match (rel, sign < 0.0) {
                (Relation::Le, true) => Relation::Ge,
                (Relation::Ge, true) => Relation::Le,
                (r, _) => *r,
            };
            match rel {
                Relation::Le => {
                    row[slack_col] = 1.0;
                    slack_col += 1;
                }
                Relation::Ge => {
                    row[slack_col] = -1.0;
                    slack_col += 1;
                }
                Relation::Eq => {}
            }
            row[n_struct + n_slack + i] = 1.0;
            basis[i] = n_struct + n_slack + i;
        }

        let art_start = n_struct + n_slack;
        // Phase one: minimise the sum of artificials.
        let mut cost1 = vec![0.0; n_cols];
        for c in cost1.iter_mut().skip(art_start) {
            *c = 1.0;
        }
        let mut tab = Tableau {
            t,
            m,
            width,
            basis,
            allowed: n_cols,
        };
        tab.set_objective(&cost1);
        tab.run()?;
        let infeas = -tab.t[m * width + n_cols];
        let scale = 1.0 + self.rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
        if infeas > 1e-8 * scale {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive artificials out of the basis where possible.
        for i in 0..m {
            if tab.basis[i] >= art_start {
                if let Some(j) = (0..art_start).find(|&j| tab.t[i * width + j].abs() > 1e-9) {
                    tab.pivot(i, j);
                }
            }
        }

        // Phase two on the structural and slack columns.
        let mut cost2 = vec![0.0; n_cols];
        let sgn = match self.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        for j in 0..n {
            cost2[j] = sgn * self.objective[j];
        }
        for (k, &j) in free_idx.iter().enumerate() {
            cost2[n + k] = -sgn * self.objective[j];
        }
        tab.allowed = art_start;
        tab.set_objective(&cost2);
        if tab.run()? {
            return Ok(LpOutcome::Unbounded);
        }
        let mut y = vec![0.0; n_cols];
        for i in 0..m {
            y[tab.basis[i]] = tab.t[i * width + n_cols];
        }
        let mut x: Vec<f64> = y[..n].to_vec();
        for (k, &j) in free_idx.iter().enumerate() {
            x[j] -= y[n + k];
        }
        let value: f64 = x.iter().zip(&self.objective).map(|(a, b)| a * b).sum();
        Ok(LpOutcome::Optimal { x, value })
    }
}

struct Tableau {
    t: Vec<f64>,
    m: usize,
    width: usize,
    basis: Vec<usize>,
    /// Columns at or beyond this index may not enter.
    allowed: usize,
}

impl Tableau {
    fn set_objective(&mut self, cost: &[f64]) {
        let (m, w) = (self.m, self.width);
        for j in 0..w {
            self.t[m * w + j] = if j < cost.len() { cost[j] } else { 0.0 };
        }
        for i in 0..m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for j in 0..w {
                    self.t[m * w + j] -= cb * self.t[i * w + j];
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let piv = self.t[r * w + c];
        for j in 0..w {
            self.t[r * w + j] /= piv;
        }
        for i in 0..=self.m {
            if i == r {
                continue;
            }
            let factor = self.t[i * w + c];
            if factor != 0.0 {
                for j in 0..w {
                    self.t[i * w + j] -= factor * self.t[r * w + j];
                }
            }
        }
        self.basis[r] = c;
    }

    /// Runs simplex iterations; returns `true` if unbounded.
    fn run(&mut self) -> Result<bool> {
        let (m, w) = (self.m, self.width);
        let rhs = w - 1;
        let mut degenerate = 0usize;
        let max_iter = 50_000 + 100 * (m + w);
        for _ in 0..max_iter {
            let obj = &self.t[m * w..(m + 1) * w];
            let bland = degenerate > 50;
            let mut enter = None;
            let mut best = -COST_TOL;
            for (j, &rc) in obj.iter().enumerate().take(self.allowed) {
                if rc < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(c) = enter else {
                return Ok(false);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[i * w + c];
                if a > PIVOT_TOL {
                    let ratio = self.t[i * w + rhs] / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((k, r)) => {
                            if ratio < r - 1e-14
                                || (ratio <= r + 1e-14 && self.basis[i] < self.basis[k])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, ratio)) = leave else {
                return Ok(true);
            };
            degenerate = if ratio.abs() < 1e-14 {
                degenerate + 1
            } else {
                0
            };
            self.pivot(r, c);
        }
        Err(Error::NotConverged {
            iterations: max_iter,
            detail: "simplex iteration limit".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> 36 at (2, 6)
        let mut lp = LinearProgram::new(Sense::Maximize, vec![3.0, 5.0]);
        lp.add_row(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.add_row(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.add_row(vec![3.0, 2.0], Relation::Le, 18.0);
        let (x, v) = lp.solve().unwrap().optimal().unwrap();
        assert!((v - 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_free_variables() {
        // min |z| style: min a + b with x - y = -3 expressed via free x
        let mut lp = LinearProgram::new(Sense::Minimize, vec![0.0, 1.0]);
        lp.set_free(0);
        lp.add_row(vec![1.0, 0.0], Relation::Eq, -3.0);
        lp.add_row(vec![1.0, 1.0], Relation::Ge, 0.0);
        lp.add_row(vec![-1.0, 1.0], Relation::Ge, 0.0);
        let (x, v) = lp.solve().unwrap().optimal().unwrap();
        assert!((x[0] + 3.0).abs() < 1e-9);
        assert!((v - 3.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(Sense::Minimize, vec![1.0]);
        lp.add_row(vec![1.0], Relation::Ge, 2.0);
        lp.add_row(vec![1.0], Relation::Le, 1.0);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Infeasible);
        let mut lp = LinearProgram::new(Sense::Maximize, vec![1.0]);
        lp.add_row(vec![1.0], Relation::Ge, 2.0);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Unbounded);
    }
}
