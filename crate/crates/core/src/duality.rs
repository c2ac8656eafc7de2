//! Discriminator classes and numerical checks of the min-max identities.
//!
//! Every check solves both sides independently: the discriminator side as a
//! maximisation over the class, the distribution side as a minimisation over an
//! intermediate `Q` on the merged support of the two inputs.

use std::f64::consts::LN_2;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::ascent::{bfgs_maximize, BfgsOptions, CTransformProblem, Head, Tail};
use crate::dist::{expectation, FiniteDistribution, Support, SupportPoint, Witness};
use crate::error::{Error, Result};
use crate::fdiv::{conjugate_aligned, f_divergence, fdiv_term, FGenerator};
use crate::hybrid::{hybrid_primal, FdivOrder, HybridSpec};
use crate::lp::{LinearProgram, LpOutcome, Relation, Sense};
use crate::transport::{lipschitz_constant, ot_primal, wasserstein, CostFunction};

/// Tolerance for moment equality in [`class_penalty`].
pub const MOMENT_TOL: f64 = 1e-10;
/// Values above this count as an unbounded maximisation.
pub const UNBOUNDED_VALUE: f64 = 1e8;

/// The set of discriminators a maximisation ranges over.
#[derive(Debug, Clone)]
pub enum FunctionClass {
    /// Every function on the support.
    AllFunctions,
    /// `{sum_j a_j phi_j (+ a_0)}`.
    LinearSpan {
        features: Vec<Witness>,
        include_constant: bool,
    },
    /// `L`-Lipschitz functions under the Euclidean metric.
    LipschitzBall(f64),
    /// `{D : f* o D is L-Lipschitz}`.
    ComposedLipschitz { f: FGenerator, l: f64 },
}

impl FunctionClass {
    /// The class holding only the zero function.
    pub fn zero() -> Self {
        FunctionClass::LinearSpan {
            features: Vec::new(),
            include_constant: false,
        }
    }

    /// Polynomial moments up to `degree` plus constants.
    pub fn polynomial(support: &Support, degree: usize) -> Self {
        FunctionClass::LinearSpan {
            features: polynomial_features(support, degree),
            include_constant: true,
        }
    }

    pub fn name(&self) -> String {
        match self {
            FunctionClass::AllFunctions => "all".into(),
            FunctionClass::LinearSpan {
                features,
                include_constant,
            } => format!(
                "span[{}{}]",
                features.len(),
                if *include_constant { "+1" } else { "" }
            ),
            FunctionClass::LipschitzBall(l) => format!("lip:{l}"),
            FunctionClass::ComposedLipschitz { f, l } => format!("composed-lip:{}:{l}", f.name()),
        }
    }

    /// Membership of a witness, up to `1e-9` slack.
    pub fn contains(&self, d: &Witness) -> Result<bool> {
        match self {
            FunctionClass::AllFunctions => Ok(true),
            FunctionClass::LinearSpan {
                features,
                include_constant,
            } => {
                let rows = span_rows(features, *include_constant, d.support())?;
                if rows.is_empty() {
                    return Ok(d.values().iter().all(|v| v.abs() <= 1e-9));
                }
                let k = d.support().len();
                let a = DMatrix::from_fn(k, rows.len(), |i, j| rows[j][i]);
                let b = DVector::from_column_slice(d.values());
                let svd = a.clone().svd(true, true);
                let x = svd
                    .solve(&b, 1e-12)
                    .map_err(|e| Error::Invariant(format!("least squares: {e}")))?;
                Ok((a * x - b).amax() <= 1e-9)
            }
            FunctionClass::LipschitzBall(l) => Ok(lipschitz_constant(d) <= l + 1e-9),
            FunctionClass::ComposedLipschitz { f, l } => {
                if d.values().iter().any(|&v| !f.in_conj_domain(v)) {
                    return Ok(false);
                }
                Ok(lipschitz_constant(&d.map(|v| f.conj(v))) <= l + 1e-9)
            }
        }
    }
}

/// Monomials of total degree `1..=degree` in the coordinates, evaluated on `support`.
pub fn polynomial_features(support: &Support, degree: usize) -> Vec<Witness> {
    let dim = support.dim();
    let shared = Arc::new(support.clone());
    let mut out = Vec::new();
    let mut exps = vec![0usize; dim];
    fn rec(pos: usize, left: usize, exps: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == exps.len() {
            out.push(exps.clone());
            return;
        }
        for e in (0..=left).rev() {
            exps[pos] = e;
            rec(pos + 1, left - e, exps, out);
        }
        exps[pos] = 0;
    }
    for deg in 1..=degree {
        let mut all = Vec::new();
        rec(0, deg, &mut exps, &mut all);
        for e in all.into_iter().filter(|e| e.iter().sum::<usize>() == deg) {
            out.push(Witness::from_fn(shared.clone(), move |x| {
                x.coords()
                    .iter()
                    .zip(&e)
                    .map(|(c, &k)| c.powi(k as i32))
                    .product()
            }));
        }
    }
    out
}

/// Divergence on the distribution side of an identity.
#[derive(Debug, Clone)]
pub enum Divergence {
    F(FGenerator),
    Ot(CostFunction),
}

impl Divergence {
    pub fn eval(&self, p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
        match self {
            Divergence::F(f) => f_divergence(p, q, *f),
            Divergence::Ot(c) => Ok(ot_primal(p, q, c)?.value),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Divergence::F(f) => f.name().to_string(),
            Divergence::Ot(c) => format!("ot:{c:?}"),
        }
    }
}

/// Both sides of an identity and their signed difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs - rhs`; zero when both sides are the same infinity.
    pub gap: f64,
}

impl IdentityCheck {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        let gap = if lhs.is_infinite() && lhs == rhs {
            0.0
        } else {
            lhs - rhs
        };
        IdentityCheck { lhs, rhs, gap }
    }

    /// `|gap| <= tol * (1 + |rhs|)`.
    pub fn within(&self, tol: f64) -> bool {
        let scale = if self.rhs.is_finite() {
            self.rhs.abs()
        } else {
            0.0
        };
        self.gap.abs() <= tol * (1.0 + scale)
    }
}

struct Merged {
    support: Arc<Support>,
    p1: Vec<f64>,
    px: Vec<f64>,
}

fn merged(p1: &FiniteDistribution, px: &FiniteDistribution) -> Result<Merged> {
    let support = Support::union(&[p1.support(), px.support()])?;
    Ok(Merged {
        p1: p1.weights_on(&support)?,
        px: px.weights_on(&support)?,
        support: Arc::new(support),
    })
}

/// Rows of the span (features, then the constant) evaluated on `support`.
fn span_rows(
    features: &[Witness],
    include_constant: bool,
    support: &Support,
) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::with_capacity(features.len() + 1);
    for (j, phi) in features.iter().enumerate() {
        let row = support
            .points()
            .iter()
            .map(|x| {
                phi.value_at(x).ok_or_else(|| {
                    Error::Domain(format!("feature {j} undefined at {:?}", x.coords()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if include_constant {
        rows.push(vec![1.0; support.len()]);
    }
    Ok(rows)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `max_{D in F} E_PX[D] - E_Q[D]`.
pub fn class_penalty(
    q: &FiniteDistribution,
    px: &FiniteDistribution,
    class: &FunctionClass,
) -> Result<f64> {
    let m = merged(q, px)?;
    match class {
        FunctionClass::AllFunctions => {
            let same =
                m.p1.iter()
                    .zip(&m.px)
                    .all(|(a, b)| (a - b).abs() <= MOMENT_TOL);
            Ok(if same { 0.0 } else { f64::INFINITY })
        }
        FunctionClass::LinearSpan {
            features,
            include_constant,
        } => {
            let rows = span_rows(features, *include_constant, &m.support)?;
            let same = rows
                .iter()
                .all(|r| (dot(r, &m.p1) - dot(r, &m.px)).abs() <= MOMENT_TOL);
            Ok(if same { 0.0 } else { f64::INFINITY })
        }
        FunctionClass::LipschitzBall(l) => Ok(l * wasserstein(px, q, 1)?),
        FunctionClass::ComposedLipschitz { .. } => Err(Error::Domain(
            "penalty of the composed-Lipschitz class is not available; use theorem6_check".into(),
        )),
    }
}

/// `max_{D in F} E_PX[D] - d*_{P1}(D)`.
pub fn theorem1_lhs(
    p1: &FiniteDistribution,
    px: &FiniteDistribution,
    class: &FunctionClass,
    d: &Divergence,
) -> Result<f64> {
    if let FunctionClass::ComposedLipschitz { .. } = class {
        return Err(Error::Domain(
            "the composed-Lipschitz class is not closed under constants; use theorem6_check".into(),
        ));
    }
    match d {
        Divergence::F(f) => fdiv_lhs(p1, px, class, *f),
        Divergence::Ot(c) => ot_lhs(p1, px, class, c),
    }
}

fn fdiv_lhs(
    p1: &FiniteDistribution,
    px: &FiniteDistribution,
    class: &FunctionClass,
    f: FGenerator,
) -> Result<f64> {
    let m = merged(p1, px)?;
    let k = m.support.len();
    let outside = (0..k).any(|i| m.p1[i] == 0.0 && m.px[i] > 0.0);
    match class {
        FunctionClass::AllFunctions | FunctionClass::LipschitzBall(_) => {
            if outside
                && !f.slope_at_infinity().is_finite()
                && matches!(class, FunctionClass::AllFunctions)
            {
                return Ok(f64::INFINITY);
            }
            let cost = match class {
                FunctionClass::LipschitzBall(l) => {
                    CostFunction::ScaledNorm(*l).matrix(&m.support, &m.support)
                }
                _ => {
                    let mut c = vec![f64::INFINITY; k * k];
                    for i in 0..k {
                        c[i * k + i] = 0.0;
                    }
                    c
                }
            };
            let problem = CTransformProblem {
                cost,
                k,
                w: m.px.clone(),
                head: Head::Identity,
                tail: Tail::Conjugate { f, p: m.p1.clone() },
            };
            Ok(problem.solve(vec![0.0; k], 4000).value)
        }
        FunctionClass::LinearSpan {
            features,
            include_constant,
        } => {
            let rows = span_rows(features, *include_constant, &m.support)?;
            let eval = |a: &[f64]| -> Option<(f64, Vec<f64>)> {
                let mut dv = vec![0.0; k];
                for (r, &c) in rows.iter().zip(a) {
                    for x in 0..k {
                        dv[x] += c * r[x];
                    }
                }
                let s = conjugate_aligned(f, &m.p1, &dv).ok()?;
                let v = dot(&m.px, &dv) - s.value;
                let g: Vec<f64> = rows
                    .iter()
                    .map(|r| (0..k).map(|x| r[x] * (m.px[x] - s.q[x])).sum())
                    .collect();
                v.is_finite().then_some((v, g))
            };
            let r = bfgs_maximize(eval, vec![0.0; rows.len()], BfgsOptions::default());
            Ok(if r.unbounded { f64::INFINITY } else { r.value })
        }
        FunctionClass::ComposedLipschitz { .. } => unreachable!("rejected above"),
    }
}

/// Linear expression of `D(x)` in the LP variables of the class.
fn ot_lhs(
    p1: &FiniteDistribution,
    px: &FiniteDistribution,
    class: &FunctionClass,
    c: &CostFunction,
) -> Result<f64> {
    let m = merged(p1, px)?;
    let k = m.support.len();
    let pts = m.support.points();
    let y_pts = p1.points();
    let n1 = y_pts.len();
    let (n_d, d_expr): (usize, Vec<Vec<(usize, f64)>>) = match class {
        FunctionClass::AllFunctions | FunctionClass::LipschitzBall(_) => {
            (k, (0..k).map(|x| vec![(x, 1.0)]).collect())
        }
        FunctionClass::LinearSpan {
            features,
            include_constant,
        } => {
            let rows = span_rows(features, *include_constant, &m.support)?;
            let expr = (0..k)
                .map(|x| rows.iter().enumerate().map(|(j, r)| (j, r[x])).collect())
                .collect();
            (rows.len(), expr)
        }
        FunctionClass::ComposedLipschitz { .. } => unreachable!("rejected by caller"),
    };
    let mut obj = vec![0.0; n_d + n1];
    for x in 0..k {
        for &(j, a) in &d_expr[x] {
            obj[j] += m.px[x] * a;
        }
    }
    for (y, &w) in p1.weights().iter().enumerate() {
        obj[n_d + y] = -w;
    }
    let mut lp = LinearProgram::new(Sense::Maximize, obj);
    for j in 0..n_d + n1 {
        lp.set_free(j);
    }
    // g_y >= D(x) - c(x, y)
    for x in 0..k {
        for (y, yp) in y_pts.iter().enumerate() {
            let mut row: Vec<(usize, f64)> = d_expr[x].iter().map(|&(j, a)| (j, -a)).collect();
            row.push((n_d + y, 1.0));
            lp.add_sparse_row(&row, Relation::Ge, -c.eval(&pts[x], yp));
        }
    }
    if let FunctionClass::LipschitzBall(l) = class {
        for x in 0..k {
            for z in 0..k {
                if x != z {
                    lp.add_sparse_row(
                        &[(x, 1.0), (z, -1.0)],
                        Relation::Le,
                        l * pts[x].dist(&pts[z]),
                    );
                }
            }
        }
    }
    match lp.solve()? {
        LpOutcome::Optimal { value, .. } => Ok(value),
        LpOutcome::Unbounded => Ok(f64::INFINITY),
        LpOutcome::Infeasible => Err(Error::Infeasible("discriminator program".into())),
    }
}

/// `min_Q d(P1, Q) + class_penalty(Q, PX)` over `Q` on the merged support.
pub fn theorem1_rhs(
    p1: &FiniteDistribution,
    px: &FiniteDistribution,
    class: &FunctionClass,
    d: &Divergence,
) -> Result<f64> {
    let m = merged(p1, px)?;
    match (d, class) {
        (_, FunctionClass::ComposedLipschitz { .. }) => Err(Error::Domain(
            "the composed-Lipschitz class is not closed under constants; use theorem6_check".into(),
        )),
        (Divergence::F(f), FunctionClass::AllFunctions) => f_divergence(p1, px, *f),
        // Total mass is always constrained, so the constant makes no difference here.
        (Divergence::F(f), FunctionClass::LinearSpan { features, .. }) => {
            match moment_match_projection(p1, px, features, *f) {
                Ok(r) => Ok(r.value),
                Err(Error::Infeasible(_)) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        }
        (Divergence::F(f), FunctionClass::LipschitzBall(l)) => {
            let spec = HybridSpec::new(*f, CostFunction::ScaledNorm(*l))
                .with_candidate((*m.support).clone())
                .with_order(FdivOrder::QSecond);
            Ok(hybrid_primal(px, p1, &spec)?.value)
        }
        (Divergence::Ot(c), FunctionClass::AllFunctions) => Ok(ot_primal(p1, px, c)?.value),
        (
            Divergence::Ot(c),
            FunctionClass::LinearSpan {
                features,
                include_constant,
            },
        ) => {
            let rows = span_rows(features, *include_constant, &m.support)?;
            let k = m.support.len();
            let n1 = p1.len();
            let cost = c.matrix(p1.support(), &m.support);
            let mut lp = LinearProgram::new(Sense::Minimize, cost);
            for i in 0..n1 {
                let row: Vec<(usize, f64)> = (0..k).map(|j| (i * k + j, 1.0)).collect();
                lp.add_sparse_row(&row, Relation::Eq, p1.weights()[i]);
            }
            for r in &rows {
                let entries: Vec<(usize, f64)> = (0..n1)
                    .flat_map(|i| (0..k).map(move |j| (i * k + j, r[j])))
                    .collect();
                lp.add_sparse_row(&entries, Relation::Eq, dot(r, &m.px));
            }
            match lp.solve()? {
                LpOutcome::Optimal { value, .. } => Ok(value),
                LpOutcome::Infeasible => Ok(f64::INFINITY),
                LpOutcome::Unbounded => Err(Error::Invariant("transport program unbounded".into())),
            }
        }
        (Divergence::Ot(c), FunctionClass::LipschitzBall(l)) => {
            let k = m.support.len();
            let (n1, nx) = (p1.len(), px.len());
            let c1 = c.matrix(p1.support(), &m.support);
            let cx = CostFunction::ScaledNorm(*l).matrix(px.support(), &m.support);
            let mut lp = LinearProgram::new(Sense::Minimize, c1.into_iter().chain(cx).collect());
            let off = n1 * k;
            for i in 0..n1 {
                let row: Vec<(usize, f64)> = (0..k).map(|j| (i * k + j, 1.0)).collect();
                lp.add_sparse_row(&row, Relation::Eq, p1.weights()[i]);
            }
            for i in 0..nx {
                let row: Vec<(usize, f64)> = (0..k).map(|j| (off + i * k + j, 1.0)).collect();
                lp.add_sparse_row(&row, Relation::Eq, px.weights()[i]);
            }
            for j in 0..k {
                let mut row: Vec<(usize, f64)> = (0..n1).map(|i| (i * k + j, 1.0)).collect();
                row.extend((0..nx).map(|i| (off + i * k + j, -1.0)));
                lp.add_sparse_row(&row, Relation::Eq, 0.0);
            }
            Ok(lp.solve()?.optimal()?.1)
        }
    }
}

/// Both sides of the class identity.
pub fn theorem1_check(
    p1: &FiniteDistribution,
    px: &FiniteDistribution,
    class: &FunctionClass,
    d: &Divergence,
) -> Result<IdentityCheck> {
    Ok(IdentityCheck::new(
        theorem1_lhs(p1, px, class, d)?,
        theorem1_rhs(p1, px, class, d)?,
    ))
}

/// Minimiser of `d_f(P1, Q)` under moment constraints.
#[derive(Debug, Clone)]
pub struct MomentProjection {
    pub value: f64,
    pub q: FiniteDistribution,
    /// `max_j |E_Q[phi_j] - E_PX[phi_j]|`.
    pub residual: f64,
}

/// `min d_f(P1, Q)` subject to `E_Q[phi_j] = E_PX[phi_j]` for every feature.
///
/// `Q` lives on the merged support, restricted to the support of `P1` when
/// `f` charges infinite slope there. Accelerated projected gradient with a
/// Dykstra projection onto `{q >= 0} ∩ {A q = m}`.
pub fn moment_match_projection(
    p1: &FiniteDistribution,
    px: &FiniteDistribution,
    features: &[Witness],
    f: FGenerator,
) -> Result<MomentProjection> {
    let m = merged(p1, px)?;
    let adm: Vec<usize> = (0..m.support.len())
        .filter(|&i| m.p1[i] > 0.0 || f.slope_at_infinity().is_finite())
        .collect();
    let n = adm.len();
    let all_rows = span_rows(features, true, &m.support)?;
    let targets: Vec<f64> = all_rows.iter().map(|r| dot(r, &m.px)).collect();
    let rows: Vec<Vec<f64>> = all_rows
        .iter()
        .map(|r| adm.iter().map(|&i| r[i]).collect())
        .collect();

    // P1 already matches: the minimum 0 is attained at Q = P1.
    let own = all_rows
        .iter()
        .zip(&targets)
        .map(|(r, t)| (dot(r, &m.p1) - t).abs())
        .fold(0.0, f64::max);
    if own <= MOMENT_TOL {
        return Ok(MomentProjection {
            value: 0.0,
            q: p1.clone(),
            residual: own,
        });
    }

    let mut lp = LinearProgram::new(Sense::Minimize, vec![0.0; n]);
    for (r, &t) in rows.iter().zip(&targets) {
        lp.add_row(r.clone(), Relation::Eq, t);
    }
    if matches!(lp.solve()?, LpOutcome::Infeasible) {
        return Err(Error::Infeasible(
            "moment constraints have no solution on the admissible support".into(),
        ));
    }

    let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    let pinv = a
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Invariant(format!("pseudo-inverse: {e}")))?;
    let tv = DVector::from_column_slice(&targets);
    let affine = |x: &[f64]| -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        let r = &a * &xv - &tv;
        (xv - &pinv * r).iter().copied().collect()
    };
    let project = |z: &[f64]| -> Vec<f64> {
        let mut x = z.to_vec();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for _ in 0..100_000 {
            let xp: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
            let y = affine(&xp);
            for i in 0..n {
                p[i] = xp[i] - y[i];
            }
            let yq: Vec<f64> = y.iter().zip(&q).map(|(a, b)| a + b).collect();
            let xn: Vec<f64> = yq.iter().map(|v| v.max(0.0)).collect();
            for i in 0..n {
                q[i] = yq[i] - xn[i];
            }
            let moved = xn
                .iter()
                .zip(&x)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            let apart = xn
                .iter()
                .zip(&y)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            x = xn;
            if moved <= 1e-16 && apart <= 1e-13 {
                break;
            }
        }
        x
    };

    let pw: Vec<f64> = adm.iter().map(|&i| m.p1[i]).collect();
    let obj = |q: &[f64]| -> f64 {
        q.iter()
            .zip(&pw)
            .map(|(&qi, &pi)| fdiv_term(f, pi, qi))
            .sum()
    };
    let grad = |q: &[f64]| -> Vec<f64> {
        q.iter()
            .zip(&pw)
            .map(|(&qi, &pi)| {
                if pi == 0.0 {
                    f.slope_at_infinity()
                } else {
                    let qs = (1.0 - 1e-12) * qi.max(0.0) + 1e-12 / n as f64;
                    f.f_prime(qs / pi)
                }
            })
            .collect()
    };

    let mut x = project(&pw);
    let mut fx = obj(&x);
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut lip = 1.0_f64;
    let mut still = 0;
    for _ in 0..20_000 {
        let g = grad(&y);
        let fy = obj(&y);
        let mut accepted = None;
        for _ in 0..200 {
            let step: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - b / lip).collect();
            let xn = project(&step);
            let fxn = obj(&xn);
            let d: Vec<f64> = xn.iter().zip(&y).map(|(a, b)| a - b).collect();
            let bound = fy + dot(&g, &d) + 0.5 * lip * dot(&d, &d);
            if fxn.is_finite() && fxn <= bound + 1e-15 * (1.0 + fy.abs()) {
                accepted = Some((xn, fxn));
                break;
            }
            lip *= 2.0;
        }
        let Some((xn, fxn)) = accepted else { break };
        if fxn > fx {
            // Restart momentum from the last iterate.
            y = x.clone();
            t = 1.0;
            continue;
        }
        let moved = xn
            .iter()
            .zip(&x)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = xn
            .iter()
            .zip(&x)
            .map(|(a, b)| a + (t - 1.0) / tn * (a - b))
            .collect();
        t = tn;
        let improved = fx - fxn;
        x = xn;
        fx = fxn;
        lip *= 0.9;
        still = if moved <= 1e-13 && improved <= 1e-15 {
            still + 1
        } else {
            0
        };
        if still >= 10 {
            break;
        }
    }

    let residual = all_rows[..features.len()]
        .iter()
        .zip(&targets)
        .map(|(r, &t)| (adm.iter().zip(&x).map(|(&i, &q)| r[i] * q).sum::<f64>() - t).abs())
        .fold(0.0_f64, f64::max);
    let mut full = vec![0.0; m.support.len()];
    for (&i, &q) in adm.iter().zip(&x) {
        full[i] = q.max(0.0);
    }
    let q = FiniteDistribution::normalized(m.support.points().to_vec(), full)?;
    Ok(MomentProjection {
        value: fx,
        q,
        residual,
    })
}

/// Objective and gradient of the f-GAN dual over a linear span with constants.
///
/// Coefficients are `[a_1..a_m, a_0]`. `None` outside the domain of `f*` on the
/// support of `P1`, or at or above the slope at infinity elsewhere.
pub fn fgan_dual_objective(
    p1: &FiniteDistribution,
    px: &FiniteDistribution,
    features: &[Witness],
    f: FGenerator,
    coeffs: &[f64],
) -> Result<Option<(f64, Vec<f64>)>> {
    let m = merged(p1, px)?;
    let rows = span_rows(features, true, &m.support)?;
    if coeffs.len() != rows.len() {
        return Err(Error::Domain(format!(
            "expected {} coefficients",
            rows.len()
        )));
    }
    Ok(fgan_eval(&rows, &m, f, coeffs, 0.0))
}

/// With `mu > 0`, adds `mu ln(f'(inf) - D)` at atoms outside the support of `P1`.
fn fgan_eval(
    rows: &[Vec<f64>],
    m: &Merged,
    f: FGenerator,
    a: &[f64],
    mu: f64,
) -> Option<(f64, Vec<f64>)> {
    let k = m.support.len();
    let mut dv = vec![0.0; k];
    for (r, &c) in rows.iter().zip(a) {
        for x in 0..k {
            dv[x] += c * r[x];
        }
    }
    let hi = f.slope_at_infinity();
    let mut v = 0.0;
    let mut slope = vec![0.0; k];
    for x in 0..k {
        if m.p1[x] > 0.0 {
            if !f.in_conj_domain(dv[x]) {
                return None;
            }
            v += m.px[x] * dv[x] - m.p1[x] * f.conj(dv[x]);
            slope[x] = m.px[x] - m.p1[x] * f.conj_deriv(dv[x]);
        } else {
            if dv[x] >= hi {
                return None;
            }
            v += m.px[x] * dv[x];
            slope[x] = m.px[x];
            if mu > 0.0 {
                v += mu * (hi - dv[x]).ln();
                slope[x] -= mu / (hi - dv[x]);
            }
        }
    }
    let g: Vec<f64> = rows.iter().map(|r| dot(r, &slope)).collect();
    (v.is_finite() && g.iter().all(|x| x.is_finite())).then_some((v, g))
}

/// `max_a E_PX[D_a] - E_P1[f*(D_a)]` over `D_a = sum_j a_j phi_j + a_0`.
///
/// Returns `+inf` when the ascent is unbounded, which happens exactly when the
/// moment constraints of the primal are infeasible.
pub fn fgan_dual_linear_span(
    p1: &FiniteDistribution,
    px: &FiniteDistribution,
    features: &[Witness],
    f: FGenerator,
) -> Result<f64> {
    let m = merged(p1, px)?;
    let rows = span_rows(features, true, &m.support)?;
    let constrained = f.slope_at_infinity().is_finite() && m.p1.contains(&0.0);
    if !constrained {
        let r = bfgs_maximize(
            |a| fgan_eval(&rows, &m, f, a, 0.0),
            vec![0.0; rows.len()],
            BfgsOptions::default(),
        );
        return Ok(if r.unbounded || r.value > UNBOUNDED_VALUE {
            f64::INFINITY
        } else {
            r.value
        });
    }
    // D <= f'(inf) off the support of P1 is typically active at the optimum, so
    // follow a log-barrier path from the interior. The ascent is bounded here:
    // Q = PX always satisfies the moment constraints.
    let mut a = vec![0.0; rows.len()];
    let mut mu = 1e-1;
    while mu >= 1e-13 {
        a = bfgs_maximize(
            |a| fgan_eval(&rows, &m, f, a, mu),
            a,
            BfgsOptions::default(),
        )
        .x;
        mu *= 0.1;
    }
    fgan_eval(&rows, &m, f, &a, 0.0)
        .map(|(v, _)| v)
        .ok_or_else(|| Error::Invariant("barrier path left the dual domain".into()))
}

/// `max_{D L-Lipschitz} E_PX[D] - E_P1[D^c]` as a linear program.
pub fn otgan_dual(
    p1: &FiniteDistribution,
    px: &FiniteDistribution,
    l: f64,
    c: &CostFunction,
) -> Result<f64> {
    ot_lhs(p1, px, &FunctionClass::LipschitzBall(l), c)
}

/// The f-GAN objective over `{D : f* o D is L-Lipschitz}` against `d_{f, L c1}(P1, PX)`.
pub fn theorem6_check(
    p1: &FiniteDistribution,
    px: &FiniteDistribution,
    f: FGenerator,
    l: f64,
) -> Result<IdentityCheck> {
    if !f.is_symmetric() {
        return Err(Error::Domain(format!("{} is not symmetric", f.name())));
    }
    let m = merged(p1, px)?;
    let k = m.support.len();
    let problem = CTransformProblem {
        cost: CostFunction::ScaledNorm(l).matrix(&m.support, &m.support),
        k,
        w: m.px.clone(),
        head: Head::InverseConj(f),
        tail: Tail::Linear(m.p1.clone()),
    };
    let sol = problem.solve(vec![f.conj(0.0); k], 4000);
    // E = f* o D is the transformed vector; read D back and evaluate the objective literally.
    let e = Witness::new(m.support.clone(), sol.transformed.clone())?;
    debug_assert!(lipschitz_constant(&e) <= l + 1e-9);
    let d = e.map(|v| f.conj_inverse(v));
    let lhs = fgan_objective(px, p1, &d, f)?;
    let spec = HybridSpec::new(f, CostFunction::ScaledNorm(l)).with_candidate((*m.support).clone());
    let rhs = hybrid_primal(p1, px, &spec)?.value;
    Ok(IdentityCheck::new(lhs, rhs))
}

/// The perturbed f-GAN objective against `d_{f,W2}(P1, PX)`.
///
/// The inner minimum over perturbations `u` runs over `grid`, with `x + u`
/// snapped to the nearest atom of the merged support. `None` uses every pairwise
/// difference of merged atoms, on which snapping is exact.
pub fn theorem8_check(
    p1: &FiniteDistribution,
    px: &FiniteDistribution,
    f: FGenerator,
    grid: Option<&[SupportPoint]>,
) -> Result<IdentityCheck> {
    let m = merged(p1, px)?;
    let k = m.support.len();
    let pts = m.support.points();
    let problem = CTransformProblem {
        cost: CostFunction::NormSquared.matrix(&m.support, &m.support),
        k,
        w: m.px.clone(),
        head: Head::InverseConj(f),
        tail: Tail::Linear(m.p1.clone()),
    };
    let sol = problem.solve(vec![f.conj(0.0); k], 4000);
    let d: Vec<f64> = sol.a.iter().map(|&e| f.conj_inverse(e)).collect();

    let default_grid: Vec<SupportPoint>;
    let grid = match grid {
        Some(g) => g,
        None => {
            default_grid = pts
                .iter()
                .flat_map(|x| {
                    pts.iter().map(move |y| {
                        SupportPoint::new(
                            y.coords()
                                .iter()
                                .zip(x.coords())
                                .map(|(a, b)| a - b)
                                .collect(),
                        )
                    })
                })
                .collect();
            &default_grid
        }
    };
    let snap = |z: &SupportPoint| -> usize {
        (0..k)
            .min_by(|&a, &b| pts[a].dist_sq(z).total_cmp(&pts[b].dist_sq(z)))
            .expect("non-empty support")
    };
    let mut lhs: f64 = (0..k)
        .filter(|&x| m.px[x] > 0.0)
        .map(|x| m.px[x] * d[x])
        .sum();
    for x in 0..k {
        if m.p1[x] == 0.0 {
            continue;
        }
        let inner = grid
            .iter()
            .map(|u| {
                let moved = SupportPoint::new(
                    pts[x]
                        .coords()
                        .iter()
                        .zip(u.coords())
                        .map(|(a, b)| a + b)
                        .collect(),
                );
                -f.conj(d[snap(&moved)]) + u.norm().powi(2)
            })
            .fold(f64::INFINITY, f64::min);
        lhs += m.p1[x] * inner;
    }
    let spec = HybridSpec::new(f, CostFunction::NormSquared).with_candidate((*m.support).clone());
    let rhs = hybrid_primal(p1, px, &spec)?.value;
    Ok(IdentityCheck::new(lhs, rhs))
}

/// `E_PX[D] - E_P1[f*(D)]`.
pub fn fgan_objective(
    px: &FiniteDistribution,
    p1: &FiniteDistribution,
    d: &Witness,
    f: FGenerator,
) -> Result<f64> {
    Ok(expectation(px, d)? - expectation(p1, &d.map(|v| f.conj(v)))?)
}

/// Multiplier relating the f-GAN objective with `f_JS` to the vanilla objective.
pub const VANILLA_SCALE: f64 = 0.5;
/// Offset relating the f-GAN objective with `f_JS` to the vanilla objective.
pub const VANILLA_SHIFT: f64 = LN_2;

/// `log(1 + e^s)` without overflow.
pub fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Discriminator `D = (log 2 - softplus(s)) / 2` fed to `f*_JS` for logit `s`.
pub fn js_discriminator(s: f64) -> f64 {
    0.5 * (LN_2 - softplus(s))
}

/// `E_PX[log 1/(1+e^s)] + E_P1[log e^s/(1+e^s)]`.
///
/// At `D = js_discriminator(s)` the f-GAN objective with `f_JS` equals
/// `VANILLA_SCALE * vanilla + VANILLA_SHIFT`.
pub fn vanilla_objective(
    px: &FiniteDistribution,
    p1: &FiniteDistribution,
    logits: &Witness,
) -> Result<f64> {
    Ok(-expectation(px, &logits.map(softplus))? - expectation(p1, &logits.map(|s| softplus(-s)))?)
}

/// JS divergence in bits implied by a vanilla objective value.
pub fn js_bits_from_vanilla(v: f64) -> f64 {
    (v + 2.0 * LN_2) / (2.0 * LN_2)
}
