//! Hybrid divergences `d_{f,c}(P1, P2) = inf_Q OT_c(P1, Q) + d_f(Q, P2)`,
//! with `Q` restricted to a finite candidate support.
//!
//! The primal is solved over couplings `M` (rows: atoms of `P1`, columns:
//! candidate atoms) by Frank-Wolfe with exact line search plus per-row pairwise
//! transfers. For symmetric `f` the dual `sup_D E_P1[D] - E_P2[f*(D^c)]` gives
//! a certified lower bound.

use std::sync::Arc;

use crate::ascent::{CTransformProblem, Head, Tail};
use crate::dist::{
    pushforward, Coupling, FiniteDistribution, GeneratorFamily, Support, SupportPoint, Witness,
};
use crate::error::{Error, Result};
use crate::fdiv::{fdiv_term, simplex_grid, FGenerator};
use crate::transport::{ot_primal, CostFunction};

/// Default Frank-Wolfe gap tolerance.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Largest candidate support accepted by [`hybrid_brute`].
pub const HYBRID_BRUTE_MAX_ATOMS: usize = 3;
/// Mixing weight toward uniform used when evaluating the gradient.
pub const GRADIENT_SMOOTHING: f64 = 1e-9;

/// Which slot of `d_f` the intermediate distribution occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdivOrder {
    /// `d_f(Q, P2)`, the defining order.
    QFirst,
    /// `d_f(P2, Q)`.
    QSecond,
}

/// Problem description for a hybrid divergence.
#[derive(Debug, Clone)]
pub struct HybridSpec {
    pub f: FGenerator,
    pub cost: CostFunction,
    /// Support of the intermediate `Q`; defaults to the union of both supports.
    pub candidate: Option<Support>,
    pub order: FdivOrder,
    pub tol: f64,
    pub max_iter: usize,
}

impl HybridSpec {
    pub fn new(f: FGenerator, cost: CostFunction) -> Self {
        HybridSpec {
            f,
            cost,
            candidate: None,
            order: FdivOrder::QFirst,
            tol: DEFAULT_TOL,
            max_iter: 200_000,
        }
    }

    pub fn with_candidate(mut self, s: Support) -> Self {
        self.candidate = Some(s);
        self
    }

    pub fn with_order(mut self, order: FdivOrder) -> Self {
        self.order = order;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Candidate support, which must contain both supports.
    pub fn candidate_for(
        &self,
        p1: &FiniteDistribution,
        p2: &FiniteDistribution,
    ) -> Result<Support> {
        let union = Support::union(&[p1.support(), p2.support()])?;
        match &self.candidate {
            None => Ok(union),
            Some(c) => {
                if !c.contains_all(&union) {
                    return Err(Error::Domain(
                        "candidate support must contain both supports".into(),
                    ));
                }
                Ok(c.clone())
            }
        }
    }
}

/// Primal solution with optional dual certificate.
#[derive(Debug, Clone)]
pub struct HybridResult {
    pub value: f64,
    pub fw_gap: f64,
    pub transport_plan: Coupling,
    pub intermediate: FiniteDistribution,
    pub dual_lower_bound: Option<f64>,
    pub dual_witness: Option<Witness>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each outer iteration.
    pub history: Vec<f64>,
}

/// Column terms of the divergence part, as functions of the column mass.
struct Columns {
    f: FGenerator,
    order: FdivOrder,
    p2: Vec<f64>,
}

impl Columns {
    fn term(&self, j: usize, q: f64) -> f64 {
        match self.order {
            FdivOrder::QFirst => fdiv_term(self.f, q, self.p2[j]),
            FdivOrder::QSecond => fdiv_term(self.f, self.p2[j], q),
        }
    }

    /// Exact partial derivative in `q`.
    fn slope(&self, j: usize, q: f64) -> f64 {
        let p = self.p2[j];
        match self.order {
            FdivOrder::QFirst => {
                if p == 0.0 {
                    self.f.f_at_zero()
                } else if q <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    self.f.perspective_slope(p / q)
                }
            }
            FdivOrder::QSecond => {
                if p == 0.0 {
                    self.f.slope_at_infinity()
                } else {
                    self.f.f_prime(q.max(0.0) / p)
                }
            }
        }
    }

    /// Columns that may carry mass at finite cost.
    fn admissible(&self, j: usize) -> bool {
        self.slope(j, 1.0).is_finite()
    }

    fn value(&self, q: &[f64]) -> f64 {
        q.iter().enumerate().map(|(j, &v)| self.term(j, v)).sum()
    }
}

struct Primal<'a> {
    cols: Columns,
    cost: Vec<f64>,
    p1: &'a [f64],
    n: usize,
    k: usize,
}

impl Primal<'_> {
    fn objective(&self, m: &[f64], q: &[f64]) -> f64 {
        let t: f64 = m
            .iter()
            .zip(&self.cost)
            .map(|(a, c)| if *a > 0.0 { a * c } else { 0.0 })
            .sum();
        t + self.cols.value(q)
    }

    fn smoothed_gradient(&self, q: &[f64]) -> Vec<f64> {
        let k = self.k as f64;
        (0..self.k)
            .map(|j| {
                if self.cols.admissible(j) {
                    let qs = (1.0 - GRADIENT_SMOOTHING) * q[j] + GRADIENT_SMOOTHING / k;
                    self.cols.slope(j, qs)
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }

    /// Per-row argmin of `c_ij + g_j` and the Frank-Wolfe gap.
    fn vertex_and_gap(&self, m: &[f64], g: &[f64]) -> (Vec<usize>, f64) {
        let k = self.k;
        let mut gap = 0.0;
        let mut best = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let row = &self.cost[i * k..(i + 1) * k];
            let mut bj = 0;
            let mut bv = f64::INFINITY;
            for j in 0..k {
                let v = row[j] + g[j];
                if v < bv {
                    bv = v;
                    bj = j;
                }
            }
            best.push(bj);
            for j in 0..k {
                let mass = m[i * k + j];
                if mass > 0.0 {
                    gap += mass * (row[j] + g[j] - bv);
                }
            }
        }
        (best, gap)
    }
}

/// Bisection for the root of a non-decreasing function on `[0, hi]`.
fn line_root(phi: impl Fn(f64) -> f64, hi: f64) -> f64 {
    let positive = |v: f64| v.is_nan() || v > 0.0;
    if positive(phi(0.0)) || phi(0.0) == 0.0 {
        return 0.0;
    }
    if !positive(phi(hi)) {
        return hi;
    }
    let (mut lo, mut up) = (0.0, hi);
    for _ in 0..100 {
        let mid = 0.5 * (lo + up);
        if mid <= lo || mid >= up {
            break;
        }
        if positive(phi(mid)) {
            up = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Frank-Wolfe solve of the primal.
pub fn hybrid_primal(
    p1: &FiniteDistribution,
    p2: &FiniteDistribution,
    spec: &HybridSpec,
) -> Result<HybridResult> {
    let cand = spec.candidate_for(p1, p2)?;
    let k = cand.len();
    let n = p1.len();
    let p2w = p2.weights_on(&cand)?;
    let cols = Columns {
        f: spec.f,
        order: spec.order,
        p2: p2w.clone(),
    };
    let cost = spec.cost.matrix(p1.support(), &cand);
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain(
            "cost is not finite on the candidate support".into(),
        ));
    }
    let pr = Primal {
        cols,
        cost,
        p1: p1.weights(),
        n,
        k,
    };

    // Start from the better of "Q = P1 moved to the cheapest admissible column"
    // and the product coupling P1 x P2 (Q = P2).
    let mut m_a = vec![0.0; n * k];
    for i in 0..n {
        let j = (0..k)
            .filter(|&j| pr.cols.admissible(j))
            .min_by(|&a, &b| pr.cost[i * k + a].total_cmp(&pr.cost[i * k + b]))
            .ok_or_else(|| Error::Infeasible("no admissible candidate atom".into()))?;
        m_a[i * k + j] = pr.p1[i];
    }
    let mut m_b = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            m_b[i * k + j] = pr.p1[i] * p2w[j];
        }
    }
    let fa = pr.objective(&m_a, &col_sums(&m_a, n, k));
    let fb = pr.objective(&m_b, &col_sums(&m_b, n, k));
    let mut m = if fa <= fb { m_a } else { m_b };
    let mut q = col_sums(&m, n, k);

    let mut gap = f64::INFINITY;
    let mut history = vec![pr.objective(&m, &q)];
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..spec.max_iter {
        iterations = it;
        if it % 64 == 0 {
            q = col_sums(&m, n, k);
        }
        let g = pr.smoothed_gradient(&q);
        let (vert, gp) = pr.vertex_and_gap(&m, &g);
        gap = gp;
        if gap <= spec.tol {
            converged = true;
            break;
        }

        // Frank-Wolfe step toward the vertex, exact line search.
        let mut qs = vec![0.0; k];
        let mut lin = 0.0;
        for i in 0..n {
            qs[vert[i]] += pr.p1[i];
            lin += pr.p1[i] * pr.cost[i * k + vert[i]];
        }
        let cur_lin: f64 = m.iter().zip(&pr.cost).map(|(a, c)| a * c).sum();
        let dq: Vec<f64> = qs.iter().zip(&q).map(|(a, b)| a - b).collect();
        let dlin = lin - cur_lin;
        let gamma = line_root(
            |t| {
                let mut d = dlin;
                for j in 0..k {
                    if dq[j] != 0.0 {
                        d += dq[j] * pr.cols.slope(j, q[j] + t * dq[j]);
                    }
                }
                d
            },
            1.0,
        );
        if gamma > 0.0 {
            for v in m.iter_mut() {
                *v *= 1.0 - gamma;
            }
            for i in 0..n {
                m[i * k + vert[i]] += gamma * pr.p1[i];
            }
            for j in 0..k {
                q[j] += gamma * dq[j];
            }
        }

        // Pairwise transfers within each row.
        for i in 0..n {
            let g = pr.smoothed_gradient(&q);
            let row = &pr.cost[i * k..(i + 1) * k];
            let s = (0..k)
                .min_by(|&a, &b| (row[a] + g[a]).total_cmp(&(row[b] + g[b])))
                .expect("non-empty");
            let a = (0..k)
                .filter(|&j| m[i * k + j] > 0.0)
                .max_by(|&x, &y| (row[x] + g[x]).total_cmp(&(row[y] + g[y])));
            let Some(a) = a else { continue };
            if a == s || row[a] + g[a] - row[s] - g[s] <= 0.0 {
                continue;
            }
            let dmax = m[i * k + a];
            let (qa, qsj) = (q[a], q[s]);
            let delta = line_root(
                |d| {
                    row[s] - row[a] + pr.cols.slope(s, qsj + d)
                        - pr.cols.slope(a, (qa - d).max(0.0))
                },
                dmax,
            );
            if delta > 0.0 {
                m[i * k + a] -= delta;
                if m[i * k + a] < 1e-300 {
                    m[i * k + a] = 0.0;
                }
                m[i * k + s] += delta;
                q[a] -= delta;
                q[s] += delta;
            }
        }
        history.push(pr.objective(&m, &q));
    }
    let q = col_sums(&m, n, k);
    let value = pr.objective(&m, &q);
    if !converged {
        let g = pr.smoothed_gradient(&q);
        gap = pr.vertex_and_gap(&m, &g).1;
        converged = gap <= spec.tol;
    }
    Ok(HybridResult {
        value,
        fw_gap: gap,
        transport_plan: Coupling::new(p1.support().clone(), cand.clone(), m)?,
        intermediate: FiniteDistribution::normalized(cand.points().to_vec(), q)?,
        dual_lower_bound: None,
        dual_witness: None,
        iterations,
        converged,
        history,
    })
}

fn col_sums(m: &[f64], n: usize, k: usize) -> Vec<f64> {
    let mut q = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            q[j] += m[i * k + j];
        }
    }
    q
}

/// Dual certificate `E_P1[D] - d*_{P2}(D^c)` at a c-concave `D` on the candidate support.
#[derive(Debug, Clone)]
pub struct HybridDual {
    pub value: f64,
    pub witness: Witness,
}

/// Maximises the dual over c-concave witnesses on the candidate support.
///
/// Requires a symmetric generator in the defining order, or any generator with
/// [`FdivOrder::QSecond`].
pub fn hybrid_dual(
    p1: &FiniteDistribution,
    p2: &FiniteDistribution,
    spec: &HybridSpec,
) -> Result<HybridDual> {
    if spec.order == FdivOrder::QFirst && !spec.f.is_symmetric() {
        return Err(Error::Domain(format!(
            "dual certificate needs a symmetric generator, got {}",
            spec.f.name()
        )));
    }
    let cand = spec.candidate_for(p1, p2)?;
    let k = cand.len();
    let problem = CTransformProblem {
        cost: spec.cost.matrix(&cand, &cand),
        k,
        w: p1.weights_on(&cand)?,
        head: Head::Identity,
        tail: Tail::Conjugate {
            f: spec.f,
            p: p2.weights_on(&cand)?,
        },
    };
    let sol = problem.solve(vec![0.0; k], 4000);
    Ok(HybridDual {
        value: sol.value,
        witness: Witness::new(Arc::new(cand), sol.a)?,
    })
}

/// Dual witness read off a primal point: `g = grad d_f(Q)` and `D(x) = min_y g(y) + c(x, y)`.
///
/// Any witness gives a lower bound; at a primal optimum this one closes the gap.
pub fn hybrid_dual_from_primal(
    p1: &FiniteDistribution,
    p2: &FiniteDistribution,
    spec: &HybridSpec,
    primal: &HybridResult,
) -> Result<HybridDual> {
    if spec.order == FdivOrder::QFirst && !spec.f.is_symmetric() {
        return Err(Error::Domain(format!(
            "dual certificate needs a symmetric generator, got {}",
            spec.f.name()
        )));
    }
    let cand = spec.candidate_for(p1, p2)?;
    let k = cand.len();
    let p2w = p2.weights_on(&cand)?;
    let q = primal.intermediate.weights_on(&cand)?;
    let cols = Columns {
        f: spec.f,
        order: spec.order,
        p2: p2w.clone(),
    };
    let g: Vec<f64> = (0..k)
        .map(|j| {
            if cols.admissible(j) {
                let qs = (1.0 - GRADIENT_SMOOTHING) * q[j] + GRADIENT_SMOOTHING / k as f64;
                cols.slope(j, qs)
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let problem = CTransformProblem {
        cost: spec.cost.matrix(&cand, &cand),
        k,
        w: p1.weights_on(&cand)?,
        head: Head::Identity,
        tail: Tail::Conjugate { f: spec.f, p: p2w },
    };
    let a = problem.transform_back(&g);
    Ok(HybridDual {
        value: problem.objective(&a),
        witness: Witness::new(Arc::new(cand), a)?,
    })
}

/// Primal value with gap, plus the dual bound when the generator allows it.
pub fn hybrid_divergence(
    p1: &FiniteDistribution,
    p2: &FiniteDistribution,
    spec: &HybridSpec,
) -> Result<HybridResult> {
    let mut r = hybrid_primal(p1, p2, spec)?;
    if spec.order == FdivOrder::QSecond || spec.f.is_symmetric() {
        let d = hybrid_dual(p1, p2, spec)?;
        r.dual_lower_bound = Some(d.value);
        r.dual_witness = Some(d.witness);
    }
    Ok(r)
}

/// Grid search over `Q` on a candidate support of at most three atoms.
pub fn hybrid_brute(
    p1: &FiniteDistribution,
    p2: &FiniteDistribution,
    spec: &HybridSpec,
    resolution: usize,
) -> Result<f64> {
    let cand = spec.candidate_for(p1, p2)?;
    if cand.len() > HYBRID_BRUTE_MAX_ATOMS {
        return Err(Error::Domain(format!(
            "grid search limited to {HYBRID_BRUTE_MAX_ATOMS} atoms, got {}",
            cand.len()
        )));
    }
    let p2w = p2.weights_on(&cand)?;
    let cols = Columns {
        f: spec.f,
        order: spec.order,
        p2: p2w,
    };
    let mut best = f64::INFINITY;
    let mut err = None;
    simplex_grid(cand.len(), resolution, |c| {
        if err.is_some() {
            return;
        }
        let w: Vec<f64> = c.iter().map(|&v| v as f64 / resolution as f64).collect();
        let div = cols.value(&w);
        if !div.is_finite() {
            return;
        }
        let q = match FiniteDistribution::normalized(cand.points().to_vec(), w) {
            Ok(q) => q,
            Err(e) => {
                err = Some(e);
                return;
            }
        };
        match ot_primal(p1, &q, &spec.cost) {
            Ok(r) => best = best.min(r.value + div),
            Err(e) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(best),
    }
}

/// `|d(P0, P2) - d(P1, P2)|` against `W1(P0, P1)`, both on one candidate support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Checks the W1 continuity modulus of `P -> d_{f,c1}(P, P2)`.
pub fn continuity_modulus_check(
    p0: &FiniteDistribution,
    p1: &FiniteDistribution,
    p2: &FiniteDistribution,
    spec: &HybridSpec,
) -> Result<ContinuityCheck> {
    let spec = with_shared_candidate(spec, &[p0, p1, p2])?;
    let a = hybrid_primal(p0, p2, &spec)?;
    let b = hybrid_primal(p1, p2, &spec)?;
    let lhs = (a.value - b.value).abs();
    let rhs = crate::transport::wasserstein(p0, p1, 1)?;
    let slack = a.fw_gap.max(0.0) + b.fw_gap.max(0.0) + 2.0 * spec.tol;
    Ok(ContinuityCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + slack,
    })
}

fn with_shared_candidate(spec: &HybridSpec, parts: &[&FiniteDistribution]) -> Result<HybridSpec> {
    let mut supports: Vec<&Support> = parts.iter().map(|d| d.support()).collect();
    if let Some(c) = &spec.candidate {
        supports.push(c);
    }
    let cand = Support::union(&supports)?;
    Ok(spec.clone().with_candidate(cand))
}

/// Outcome of the W2 continuity bound for a generator family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2BoundCheck {
    pub lhs: f64,
    /// `E_Z[ | ||G_t||^2 - ||G_t'||^2 | + 2 R ||G_t' - G_t|| ]`.
    pub rhs: f64,
    /// `2 (T + R) L ||t - t'||`.
    pub coarse: f64,
    pub holds: bool,
}

/// Checks `|d_{f,c2}(P_t, Q) - d_{f,c2}(P_t', Q)|` against the expectation bound.
///
/// `R` bounds the norm of the candidate support, which holds `Q`, both pushforwards
/// and any extra atoms in `spec.candidate`.
pub fn w2_continuity_bound_check(
    family: &GeneratorFamily,
    theta: &[f64],
    theta_prime: &[f64],
    q: &FiniteDistribution,
    spec: &HybridSpec,
) -> Result<W2BoundCheck> {
    let pa = pushforward(family, theta)?;
    let pb = pushforward(family, theta_prime)?;
    let spec = with_shared_candidate(spec, &[&pa, &pb, q])?;
    let cand = spec.candidate.clone().expect("set above");
    let a = hybrid_primal(&pa, q, &spec)?;
    let b = hybrid_primal(&pb, q, &spec)?;
    let lhs = (a.value - b.value).abs();
    let r = cand.radius();
    let mut rhs = 0.0;
    let mut t_max: f64 = 0.0;
    for (z, &w) in family.noise.points().iter().zip(family.noise.weights()) {
        let ga: SupportPoint = family.apply(theta, z);
        let gb: SupportPoint = family.apply(theta_prime, z);
        rhs += w * ((ga.norm().powi(2) - gb.norm().powi(2)).abs() + 2.0 * r * ga.dist(&gb));
        t_max = t_max.max(ga.norm()).max(gb.norm());
    }
    let dtheta: f64 = theta
        .iter()
        .zip(theta_prime)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let coarse = 2.0 * (t_max + r) * family.lipschitz * dtheta;
    let slack = a.fw_gap.max(0.0) + b.fw_gap.max(0.0) + 2.0 * spec.tol;
    Ok(W2BoundCheck {
        lhs,
        rhs,
        coarse,
        holds: lhs <= rhs + slack && rhs <= coarse + 1e-12,
    })
}
