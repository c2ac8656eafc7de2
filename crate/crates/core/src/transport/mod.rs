//! Optimal transport between finite distributions, c-transforms and the
//! Kantorovich dual.
//!
//! Costs are symmetric in their two arguments; the c-transform is
//! `D^c(y) = max_x D(x) - c(x, y)` with `x` ranging over the witness support.

mod simplex;

use std::sync::Arc;

pub use simplex::{network_simplex, TransportSolution};

use crate::dist::{expectation, Coupling, FiniteDistribution, Support, SupportPoint, Witness};
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Relation, Sense};

pub type CostFn = Arc<dyn Fn(&SupportPoint, &SupportPoint) -> f64 + Send + Sync>;

/// Ground cost on `R^k x R^k`.
#[derive(Clone)]
pub enum CostFunction {
    /// `||x - y||`.
    Norm,
    /// `||x - y||^2`.
    NormSquared,
    /// `m * 1{x != y}`.
    Indicator(f64),
    /// `L * ||x - y||`.
    ScaledNorm(f64),
    /// Arbitrary symmetric cost.
    Custom(CostFn),
}

impl std::fmt::Debug for CostFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CostFunction::Norm => write!(f, "Norm"),
            CostFunction::NormSquared => write!(f, "NormSquared"),
            CostFunction::Indicator(m) => write!(f, "Indicator({m})"),
            CostFunction::ScaledNorm(l) => write!(f, "ScaledNorm({l})"),
            CostFunction::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl CostFunction {
    pub fn eval(&self, x: &SupportPoint, y: &SupportPoint) -> f64 {
        match self {
            CostFunction::Norm => x.dist(y),
            CostFunction::NormSquared => x.dist_sq(y),
            CostFunction::Indicator(m) => {
                if x.coincides(y) {
                    0.0
                } else {
                    *m
                }
            }
            CostFunction::ScaledNorm(l) => l * x.dist(y),
            CostFunction::Custom(c) => c(x, y),
        }
    }

    /// Cost given by a table over one support; pairs outside it cost `+inf`.
    pub fn table(support: Support, values: Vec<f64>) -> Result<Self> {
        let k = support.len();
        if values.len() != k * k {
            return Err(Error::Invariant(
                "cost table must be square over its support".into(),
            ));
        }
        Ok(CostFunction::Custom(Arc::new(move |x, y| {
            match (support.index_of(x), support.index_of(y)) {
                (Some(i), Some(j)) => values[i * k + j],
                _ => f64::INFINITY,
            }
        })))
    }

    /// Row-major matrix `c(rows[i], cols[j])`.
    pub fn matrix(&self, rows: &Support, cols: &Support) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for x in rows.points() {
            for y in cols.points() {
                out.push(self.eval(x, y));
            }
        }
        out
    }
}

/// Optimal plan, value and dual certificate.
#[derive(Debug, Clone)]
pub struct OtResult {
    pub value: f64,
    pub plan: Coupling,
    /// `E_P[D] - E_Q[D^c]` at the returned potential.
    pub dual_value: f64,
    /// Kantorovich potential on the support of `P`.
    pub dual_potential: Witness,
}

/// `OT_c(P, Q)` by network simplex, falling back to the dense LP if the
/// simplex hits its iteration limit.
pub fn ot_primal(
    p: &FiniteDistribution,
    q: &FiniteDistribution,
    c: &CostFunction,
) -> Result<OtResult> {
    if p.dim() != q.dim() {
        return Err(Error::Domain("dimension mismatch".into()));
    }
    let cost = c.matrix(p.support(), q.support());
    let (flow, u) = match network_simplex(p.weights(), q.weights(), &cost) {
        Ok(s) => (s.flow, s.u),
        Err(Error::NotConverged { .. }) => ot_lp_solve(p.weights(), q.weights(), &cost)?,
        Err(e) => return Err(e),
    };
    let value = flow.iter().zip(&cost).map(|(x, c)| x * c).sum();
    let plan = Coupling::new(p.support().clone(), q.support().clone(), flow)?;
    let dual_potential = Witness::new(Arc::new(p.support().clone()), u)?;
    let dual_value = kantorovich_value(&dual_potential, p, q, c)?;
    Ok(OtResult {
        value,
        plan,
        dual_value,
        dual_potential,
    })
}

/// Transport LP solved by the dense simplex; returns the plan and row potentials.
fn ot_lp_solve(a: &[f64], b: &[f64], cost: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, m) = (a.len(), b.len());
    let mut lp = LinearProgram::new(Sense::Minimize, cost.to_vec());
    for (i, &ai) in a.iter().enumerate() {
        lp.add_sparse_row(
            &(0..m).map(|j| (i * m + j, 1.0)).collect::<Vec<_>>(),
            Relation::Eq,
            ai,
        );
    }
    for (j, &bj) in b.iter().enumerate() {
        lp.add_sparse_row(
            &(0..n).map(|i| (i * m + j, 1.0)).collect::<Vec<_>>(),
            Relation::Eq,
            bj,
        );
    }
    let (flow, _) = lp.solve()?.optimal()?;
    // Recover row potentials from the dual LP.
    let mut dual = LinearProgram::new(Sense::Maximize, a.iter().chain(b.iter()).copied().collect());
    for k in 0..n + m {
        dual.set_free(k);
    }
    for i in 0..n {
        for j in 0..m {
            dual.add_sparse_row(&[(i, 1.0), (n + j, 1.0)], Relation::Le, cost[i * m + j]);
        }
    }
    let (uv, _) = dual.solve()?.optimal()?;
    Ok((flow, uv[..n].to_vec()))
}

/// `OT_c(P, Q)` from the dense LP alone; an independent check on [`ot_primal`].
pub fn ot_lp(p: &FiniteDistribution, q: &FiniteDistribution, c: &CostFunction) -> Result<f64> {
    let cost = c.matrix(p.support(), q.support());
    let (flow, _) = ot_lp_solve(p.weights(), q.weights(), &cost)?;
    Ok(flow.iter().zip(&cost).map(|(x, c)| x * c).sum())
}

/// `W_1` (order 1) or `W_2` (order 2).
pub fn wasserstein(p: &FiniteDistribution, q: &FiniteDistribution, order: u32) -> Result<f64> {
    match order {
        1 => Ok(ot_primal(p, q, &CostFunction::Norm)?.value),
        2 => Ok(ot_primal(p, q, &CostFunction::NormSquared)?
            .value
            .max(0.0)
            .sqrt()),
        _ => Err(Error::Domain(format!(
            "unsupported Wasserstein order {order}"
        ))),
    }
}

/// `D^c(y) = max_x D(x) - c(x, y)` for `y` in `to`.
pub fn c_transform(d: &Witness, c: &CostFunction, to: &Support) -> Witness {
    let from = d.support().points();
    let values = to
        .points()
        .iter()
        .map(|y| {
            from.iter()
                .zip(d.values())
                .map(|(x, &dx)| dx - c.eval(x, y))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Witness::new(Arc::new(to.clone()), values).expect("lengths match")
}

/// `E_P[D] - E_Q[D^c]`, a lower bound on `OT_c(P, Q)` for any `D` on the support of `P`.
pub fn kantorovich_value(
    d: &Witness,
    p: &FiniteDistribution,
    q: &FiniteDistribution,
    c: &CostFunction,
) -> Result<f64> {
    let dc = c_transform(d, c, q.support());
    Ok(expectation(p, d)? - expectation(q, &dc)?)
}

/// Conjugate of `Q -> OT_c(P, Q)` at `D`, with `Q` on the witness support: `E_P[D^c]`.
pub fn ot_conjugate(p: &FiniteDistribution, d: &Witness, c: &CostFunction) -> Result<f64> {
    let dc = c_transform(d, c, p.support());
    expectation(p, &dc)
}

/// Total variation `1/2 sum |p - q|`.
pub fn tv_distance(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    let (pw, qw) = crate::fdiv::align(p, q)?;
    Ok(0.5 * pw.iter().zip(&qw).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Transport cost under `m * 1{x != y}` next to `m * TV`.
pub fn indicator_tv_check(
    p: &FiniteDistribution,
    q: &FiniteDistribution,
    m: f64,
) -> Result<(f64, f64)> {
    let ot = ot_primal(p, q, &CostFunction::Indicator(m))?.value;
    Ok((ot, m * tv_distance(p, q)?))
}

/// Largest `L`-Lipschitz minorant: `min_y D(y) + L ||x - y||`.
pub fn mcshane_regularize(d: &Witness, l: f64) -> Witness {
    let pts = d.support().points();
    let values = pts
        .iter()
        .map(|x| {
            pts.iter()
                .zip(d.values())
                .map(|(y, &dy)| dy + l * x.dist(y))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Witness::new(d.support().clone(), values).expect("lengths match")
}

/// Smallest `L` with `|D(x) - D(y)| <= L ||x - y||` on the witness support.
pub fn lipschitz_constant(d: &Witness) -> f64 {
    let pts = d.support().points();
    let vals = d.values();
    let mut l: f64 = 0.0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            l = l.max((vals[i] - vals[j]).abs() / pts[i].dist(&pts[j]));
        }
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdiv::brute_force_conjugate;
    use proptest::prelude::*;

    fn line(xs: &[f64], ws: &[f64]) -> FiniteDistribution {
        FiniteDistribution::normalized(
            xs.iter().map(|&x| SupportPoint::scalar(x)).collect(),
            ws.to_vec(),
        )
        .unwrap()
    }

    /// W1 on the line from the quantile formula: integral of |F_P - F_Q|.
    fn w1_by_cdf(p: &FiniteDistribution, q: &FiniteDistribution) -> f64 {
        let mut xs: Vec<f64> = p
            .points()
            .iter()
            .chain(q.points())
            .map(|s| s.0[0])
            .collect();
        xs.sort_by(f64::total_cmp);
        let cdf = |d: &FiniteDistribution, t: f64| -> f64 {
            d.points()
                .iter()
                .zip(d.weights())
                .filter(|(s, _)| s.0[0] <= t)
                .map(|(_, w)| w)
                .sum()
        };
        xs.windows(2)
            .map(|w| (cdf(p, w[0]) - cdf(q, w[0])).abs() * (w[1] - w[0]))
            .sum()
    }

    #[test]
    fn shifted_diracs() {
        let p = FiniteDistribution::dirac(0.0);
        let q = FiniteDistribution::dirac(0.3);
        assert!((wasserstein(&p, &q, 1).unwrap() - 0.3).abs() < 1e-15);
        assert!((wasserstein(&p, &q, 2).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn identical_distributions_cost_nothing() {
        let p = line(&[0.0, 1.0, 2.5], &[0.2, 0.5, 0.3]);
        let r = ot_primal(&p, &p, &CostFunction::NormSquared).unwrap();
        assert!(r.value.abs() < 1e-15);
    }

    #[test]
    fn ot_conjugate_zero_example() {
        let s = Arc::new(Support::from_scalars(&[0.0, 1.0]).unwrap());
        let d = Witness::new(s, vec![0.0, 0.4]).unwrap();
        let p = FiniteDistribution::dirac(0.0);
        assert!(ot_conjugate(&p, &d, &CostFunction::Norm).unwrap().abs() < 1e-15);
    }

    #[test]
    fn ot_conjugate_matches_grid() {
        let s = Arc::new(Support::from_scalars(&[0.0, 0.5, 1.3]).unwrap());
        let p = line(&[0.0, 1.3], &[0.3, 0.7]);
        for vals in [
            vec![0.1, 0.9, -0.2],
            vec![1.0, 0.0, 2.0],
            vec![0.0, 0.0, 0.0],
        ] {
            let d = Witness::new(s.clone(), vals).unwrap();
            for c in [
                CostFunction::Norm,
                CostFunction::NormSquared,
                CostFunction::Indicator(0.7),
            ] {
                let exact = ot_conjugate(&p, &d, &c).unwrap();
                let grid =
                    brute_force_conjugate(&p, &d, |a, b| Ok(ot_primal(a, b, &c)?.value), 200)
                        .unwrap();
                assert!((exact - grid).abs() < 1e-9, "{c:?}: {exact} vs {grid}");
            }
        }
    }

    #[test]
    fn mcshane_is_lipschitz_minorant() {
        let s = Arc::new(Support::from_scalars(&[0.0, 0.1, 0.5, 2.0]).unwrap());
        let d = Witness::new(s, vec![0.0, 1.0, -0.3, 0.2]).unwrap();
        let r = mcshane_regularize(&d, 1.0);
        assert!(lipschitz_constant(&r) <= 1.0 + 1e-12);
        for (a, b) in r.values().iter().zip(d.values()) {
            assert!(a <= b);
        }
        // Already 1-Lipschitz functions are fixed points.
        assert_eq!(mcshane_regularize(&r, 1.0), r);
    }

    #[test]
    fn custom_table_cost() {
        let s = Support::from_scalars(&[0.0, 1.0]).unwrap();
        let c = CostFunction::table(s, vec![0.0, 2.0, 2.0, 0.0]).unwrap();
        let p = FiniteDistribution::dirac(0.0);
        let q = FiniteDistribution::dirac(1.0);
        assert_eq!(ot_primal(&p, &q, &c).unwrap().value, 2.0);
    }

    proptest! {
        #[test]
        fn strong_duality_and_marginals(
            xs in prop::collection::vec(-2.0f64..2.0, 1..8),
            ys in prop::collection::vec(-2.0f64..2.0, 1..8),
            seed in prop::collection::vec(0.01f64..1.0, 16),
        ) {
            let p = line(&xs, &seed[..xs.len()]);
            let q = line(&ys, &seed[8..8 + ys.len()]);
            for c in [CostFunction::Norm, CostFunction::NormSquared, CostFunction::Indicator(1.0)] {
                let r = ot_primal(&p, &q, &c).unwrap();
                prop_assert!((r.value - r.dual_value).abs() <= 1e-9 * (1.0 + r.value.abs()));
                r.plan.check_marginals(&p, &q).unwrap();
                prop_assert!(r.plan.mass().iter().all(|&m| m >= 0.0));
                let lp = ot_lp(&p, &q, &c).unwrap();
                prop_assert!((r.value - lp).abs() <= 1e-8 * (1.0 + lp.abs()));
            }
            let w1 = wasserstein(&p, &q, 1).unwrap();
            prop_assert!((w1 - w1_by_cdf(&p, &q)).abs() < 1e-10);
            let (ot, tv) = indicator_tv_check(&p, &q, 2.5).unwrap();
            prop_assert!((ot - tv).abs() < 1e-10);
        }

        #[test]
        fn metric_axioms(
            xs in prop::collection::vec(-2.0f64..2.0, 1..5),
            ys in prop::collection::vec(-2.0f64..2.0, 1..5),
            zs in prop::collection::vec(-2.0f64..2.0, 1..5),
        ) {
            let p = line(&xs, &vec![1.0; xs.len()]);
            let q = line(&ys, &vec![1.0; ys.len()]);
            let r = line(&zs, &vec![1.0; zs.len()]);
            for order in [1, 2] {
                let pq = wasserstein(&p, &q, order).unwrap();
                let qp = wasserstein(&q, &p, order).unwrap();
                let qr = wasserstein(&q, &r, order).unwrap();
                let pr = wasserstein(&p, &r, order).unwrap();
                prop_assert!((pq - qp).abs() < 1e-10);
                prop_assert!(pr <= pq + qr + 1e-10);
            }
        }

        #[test]
        fn kantorovich_value_is_a_lower_bound(
            vals in prop::collection::vec(-3.0f64..3.0, 3),
        ) {
            let p = line(&[0.0, 0.4, 1.0], &[0.2, 0.3, 0.5]);
            let q = line(&[0.1, 0.9], &[0.6, 0.4]);
            let d = Witness::new(Arc::new(p.support().clone()), vals).unwrap();
            for c in [CostFunction::Norm, CostFunction::NormSquared] {
                let ot = ot_primal(&p, &q, &c).unwrap().value;
                prop_assert!(kantorovich_value(&d, &p, &q, &c).unwrap() <= ot + 1e-12);
            }
        }
    }
}
