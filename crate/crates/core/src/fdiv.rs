//! f-divergences `d_f(P, Q) = sum_x p(x) f(q(x) / p(x))`, their convex
//! conjugates, and the conjugate of `Q -> d_f(P, Q)` evaluated at a witness.
//!
//! The argument order is fixed: with `f(t) = t log t`, `d_f(P, Q)` is `KL(Q || P)`.

use std::f64::consts::LN_2;

use crate::dist::{FiniteDistribution, Support, SupportPoint, Witness};
use crate::error::{Error, Result};

/// Tolerance on `E_P[f*'(D + lambda)] - 1` at the returned multiplier.
pub const LAMBDA_TOL: f64 = 1e-10;

/// A convex generator with `f(1) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FGenerator {
    /// `f(t) = t log t`.
    Kl,
    /// `f(t) = t/2 log t - (t+1)/2 log((t+1)/2)`.
    Js,
    /// `f(t) = (sqrt t - 1)^2`.
    SqHellinger,
}

impl FGenerator {
    pub const ALL: [FGenerator; 3] = [FGenerator::Kl, FGenerator::Js, FGenerator::SqHellinger];

    pub fn name(self) -> &'static str {
        match self {
            FGenerator::Kl => "kl",
            FGenerator::Js => "js",
            FGenerator::SqHellinger => "sqhellinger",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "kl" => Ok(FGenerator::Kl),
            "js" => Ok(FGenerator::Js),
            "sqhellinger" => Ok(FGenerator::SqHellinger),
            other => Err(Error::Domain(format!("unknown f-divergence {other:?}"))),
        }
    }

    /// `d_f(P, Q) = d_f(Q, P)` for all `P, Q`.
    pub fn is_symmetric(self) -> bool {
        !matches!(self, FGenerator::Kl)
    }

    pub fn f(self, t: f64) -> f64 {
        if t < 0.0 {
            return f64::INFINITY;
        }
        match self {
            FGenerator::Kl => xlogx(t),
            FGenerator::Js => 0.5 * (xlogx(t) - (t + 1.0) * ((t + 1.0) / 2.0).ln()),
            FGenerator::SqHellinger => (t.sqrt() - 1.0).powi(2),
        }
    }

    pub fn f_prime(self, t: f64) -> f64 {
        match self {
            FGenerator::Kl => t.ln() + 1.0,
            FGenerator::Js => 0.5 * (2.0 * t / (t + 1.0)).ln(),
            FGenerator::SqHellinger => 1.0 - 1.0 / t.sqrt(),
        }
    }

    /// `f(t) - t f'(t)`, the derivative of the perspective `q f(p/q)` in `q`.
    pub fn perspective_slope(self, t: f64) -> f64 {
        match self {
            FGenerator::Kl => -t,
            FGenerator::Js => -0.5 * ((t + 1.0) / 2.0).ln(),
            FGenerator::SqHellinger => 1.0 - t.sqrt(),
        }
    }

    /// `lim_{t -> 0+} f(t)`.
    pub fn f_at_zero(self) -> f64 {
        match self {
            FGenerator::Kl => 0.0,
            FGenerator::Js => 0.5 * LN_2,
            FGenerator::SqHellinger => 1.0,
        }
    }

    /// `lim_{t -> inf} f(t) / t`.
    pub fn slope_at_infinity(self) -> f64 {
        match self {
            FGenerator::Kl => f64::INFINITY,
            FGenerator::Js => 0.5 * LN_2,
            FGenerator::SqHellinger => 1.0,
        }
    }

    /// Supremum of the (open) effective domain of `f*`.
    pub fn conj_sup(self) -> f64 {
        self.slope_at_infinity()
    }

    /// Infimum of `f*`, equal to `-f(0+)`.
    pub fn conj_inf(self) -> f64 {
        -self.f_at_zero()
    }

    pub fn in_conj_domain(self, u: f64) -> bool {
        u < self.conj_sup()
    }

    /// `f*(u) = sup_{t >= 0} u t - f(t)`; `+inf` outside the domain.
    pub fn conj(self, u: f64) -> f64 {
        if !self.in_conj_domain(u) {
            return f64::INFINITY;
        }
        match self {
            FGenerator::Kl => (u - 1.0).exp(),
            FGenerator::Js => -0.5 * (2.0 - (2.0 * u).exp()).ln(),
            FGenerator::SqHellinger => u / (1.0 - u),
        }
    }

    /// Derivative of `f*`; it is the maximising `t` in the conjugate.
    pub fn conj_deriv(self, u: f64) -> f64 {
        if !self.in_conj_domain(u) {
            return f64::INFINITY;
        }
        match self {
            FGenerator::Kl => (u - 1.0).exp(),
            FGenerator::Js => {
                let e = (2.0 * u).exp();
                e / (2.0 - e)
            }
            FGenerator::SqHellinger => 1.0 / (1.0 - u).powi(2),
        }
    }

    /// Inverse of `f*` on `(conj_inf, inf)`.
    pub fn conj_inverse(self, e: f64) -> f64 {
        if e <= self.conj_inf() {
            return f64::NEG_INFINITY;
        }
        match self {
            FGenerator::Kl => 1.0 + e.ln(),
            FGenerator::Js => 0.5 * (2.0 - (-2.0 * e).exp()).ln(),
            FGenerator::SqHellinger => e / (1.0 + e),
        }
    }

    /// `f*(u)` by direct one-dimensional maximisation of `u t - f(t)`.
    pub fn conj_numeric(self, u: f64) -> f64 {
        if u >= self.slope_at_infinity() {
            return f64::INFINITY;
        }
        // u - f'(t) is decreasing in t; bisect on log t.
        let (mut lo, mut hi) = (-700.0_f64, 700.0_f64);
        if u - self.f_prime(lo.exp()) <= 0.0 {
            return -self.f_at_zero();
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if u - self.f_prime(mid.exp()) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = (0.5 * (lo + hi)).exp();
        u * t - self.f(t)
    }
}

fn xlogx(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * t.ln()
    }
}

/// One atom's contribution to `d_f(P, Q)` with the zero-mass conventions.
pub fn fdiv_term(f: FGenerator, p: f64, q: f64) -> f64 {
    match (p > 0.0, q > 0.0) {
        (true, true) => p * f.f(q / p),
        (true, false) => p * f.f_at_zero(),
        (false, true) => q * f.slope_at_infinity(),
        (false, false) => 0.0,
    }
}

/// `d_f` for weight vectors aligned on a common support.
pub fn fdiv_aligned(f: FGenerator, p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| fdiv_term(f, a, b)).sum()
}

/// `d_f(P, Q)`; atoms are aligned by coordinates.
pub fn f_divergence(p: &FiniteDistribution, q: &FiniteDistribution, f: FGenerator) -> Result<f64> {
    let (pw, qw) = align(p, q)?;
    Ok(fdiv_aligned(f, &pw, &qw))
}

/// Weights of `p` and `q` on the union of their supports.
pub fn align(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<(Vec<f64>, Vec<f64>)> {
    if p.dim() != q.dim() {
        return Err(Error::Domain(format!(
            "dimension mismatch: {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    let s = Support::union(&[p.support(), q.support()])?;
    Ok((p.weights_on(&s)?, q.weights_on(&s)?))
}

/// Jensen-Shannon divergence in bits.
pub fn js_divergence(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    let (pw, qw) = align(p, q)?;
    let mut nats = 0.0;
    for (&a, &b) in pw.iter().zip(&qw) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            nats += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            nats += 0.5 * b * (b / m).ln();
        }
    }
    Ok(nats / LN_2)
}

/// Solution of the conjugate problem `sup_Q E_Q[D] - d_f(P, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateSolution {
    pub value: f64,
    /// Multiplier actually used (the unconstrained root, or the cap).
    pub lambda: f64,
    /// Maximising `Q`, aligned with the witness values.
    pub q: Vec<f64>,
}

/// Root of `sum_x p_x f*'(v_x + lambda) = 1` over atoms with `p_x > 0`.
pub fn lambda0_aligned(f: FGenerator, p: &[f64], v: &[f64]) -> Result<f64> {
    let active: Vec<(f64, f64)> = p
        .iter()
        .zip(v)
        .filter(|(&w, _)| w > 0.0)
        .map(|(&w, &x)| (w, x))
        .collect();
    if active.is_empty() {
        return Err(Error::Invariant("distribution has no mass".into()));
    }
    if active.iter().any(|(_, x)| !x.is_finite()) {
        return Err(Error::Domain("witness has non-finite values".into()));
    }
    let g = |lam: f64| -> f64 {
        active
            .iter()
            .map(|&(w, x)| w * f.conj_deriv(x + lam))
            .sum::<f64>()
            - 1.0
    };
    let vmax = active.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
    let lam_max = f.conj_sup() - vmax;

    // Upper end of the bracket: g(hi) >= 0.
    let mut hi;
    if lam_max.is_finite() {
        let mut delta = 1.0;
        hi = lam_max - delta;
        let mut found = false;
        for _ in 0..1100 {
            hi = lam_max - delta;
            if hi >= lam_max {
                break;
            }
            if g(hi) >= 0.0 {
                found = true;
                break;
            }
            delta *= 0.5;
        }
        if !found {
            return Err(Error::Infeasible("no multiplier reaches unit mass".into()));
        }
    } else {
        let mut step = 1.0;
        hi = 0.0;
        let mut found = false;
        for _ in 0..1100 {
            if g(hi) >= 0.0 {
                found = true;
                break;
            }
            hi += step;
            step *= 2.0;
        }
        if !found {
            return Err(Error::Infeasible("no multiplier reaches unit mass".into()));
        }
    }
    // Lower end: g(lo) <= 0.
    let mut lo = hi.min(0.0) - 1.0;
    let mut step = 1.0;
    let mut found = false;
    for _ in 0..1100 {
        if g(lo) <= 0.0 {
            found = true;
            break;
        }
        step *= 2.0;
        lo -= step;
    }
    if !found {
        return Err(Error::Infeasible("no multiplier brackets unit mass".into()));
    }

    let (mut best, mut best_err) = (hi, g(hi).abs());
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm.abs() < best_err {
            best = mid;
            best_err = gm.abs();
        }
        if gm.abs() <= 1e-13 {
            break;
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if g(lo).abs() < best_err {
        best = lo;
        best_err = g(lo).abs();
    }
    let collapsed = (hi - lo) <= 4.0 * f64::EPSILON * hi.abs().max(lo.abs()).max(1.0);
    if best_err > LAMBDA_TOL && !collapsed {
        return Err(Error::NotConverged {
            iterations: 400,
            detail: format!("multiplier residual {best_err}"),
        });
    }
    Ok(best)
}

/// `sup_Q E_Q[v] - d_f(P, Q)` over `Q` on the support carrying `v`.
///
/// Atoms where `p` is zero may receive mass at cost `slope_at_infinity` per
/// unit, which caps the multiplier at `slope_at_infinity - max v` over them.
pub fn conjugate_aligned(f: FGenerator, p: &[f64], v: &[f64]) -> Result<ConjugateSolution> {
    if p.len() != v.len() {
        return Err(Error::Invariant(
            "weights and values differ in length".into(),
        ));
    }
    // Constant `v = c`: `Q = P` attains `c` exactly.
    if let Some(&c) = v.first() {
        if v.iter().all(|&x| x == c) && c.is_finite() {
            return Ok(ConjugateSolution {
                value: c,
                lambda: f.f_prime(1.0) - c,
                q: p.to_vec(),
            });
        }
    }
    let lam0 = lambda0_aligned(f, p, v)?;
    let mut lam = lam0;
    let mut extra: Option<usize> = None;
    if f.slope_at_infinity().is_finite() {
        for (i, (&w, &x)) in p.iter().zip(v).enumerate() {
            if w == 0.0 && extra.is_none_or(|j| x > v[j]) {
                extra = Some(i);
            }
        }
        if let Some(j) = extra {
            let cap = f.slope_at_infinity() - v[j];
            if cap < lam {
                lam = cap;
            } else {
                extra = None;
            }
        }
    }
    let mut value = -lam;
    let mut q = vec![0.0; p.len()];
    let mut mass = 0.0;
    for (i, (&w, &x)) in p.iter().zip(v).enumerate() {
        if w > 0.0 {
            value += w * f.conj(x + lam);
            q[i] = w * f.conj_deriv(x + lam);
            mass += q[i];
        }
    }
    if let Some(j) = extra {
        q[j] = (1.0 - mass).max(0.0);
    }
    Ok(ConjugateSolution {
        value,
        lambda: lam,
        q,
    })
}

/// Multiplier `lambda0` with `E_P[f*'(D + lambda0)] = 1`.
pub fn lambda0_solve(p: &FiniteDistribution, d: &Witness, f: FGenerator) -> Result<f64> {
    let pw = p.weights_on(d.support())?;
    lambda0_aligned(f, &pw, d.values())
}

/// Conjugate of `Q -> d_f(P, Q)` at `D`, with `Q` ranging over the witness support.
pub fn fdiv_conjugate(p: &FiniteDistribution, d: &Witness, f: FGenerator) -> Result<f64> {
    let pw = p.weights_on(d.support())?;
    Ok(conjugate_aligned(f, &pw, d.values())?.value)
}

/// Calls `visit` with every vector of `n` non-negative integers summing to `resolution`.
pub fn simplex_grid(n: usize, resolution: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            visit(cur);
            return;
        }
        for k in 0..=left {
            cur[pos] = k;
            rec(pos + 1, left - k, cur, visit);
        }
    }
    if n == 0 {
        return;
    }
    let mut cur = vec![0; n];
    rec(0, resolution, &mut cur, &mut visit);
}

/// Largest support size accepted by the grid searches.
pub const BRUTE_MAX_ATOMS: usize = 4;

/// `max_Q E_Q[D] - div(P, Q)` over a simplex grid of `Q` on the witness support.
pub fn brute_force_conjugate(
    p: &FiniteDistribution,
    d: &Witness,
    div: impl Fn(&FiniteDistribution, &FiniteDistribution) -> Result<f64>,
    resolution: usize,
) -> Result<f64> {
    let pts: Vec<SupportPoint> = d.support().points().to_vec();
    if pts.len() > BRUTE_MAX_ATOMS {
        return Err(Error::Domain(format!(
            "grid search limited to {BRUTE_MAX_ATOMS} atoms, got {}",
            pts.len()
        )));
    }
    let mut best = f64::NEG_INFINITY;
    let mut err = None;
    simplex_grid(pts.len(), resolution, |k| {
        if err.is_some() {
            return;
        }
        let w: Vec<f64> = k.iter().map(|&c| c as f64 / resolution as f64).collect();
        let gain: f64 = w.iter().zip(d.values()).map(|(a, b)| a * b).sum();
        let q = match FiniteDistribution::normalized(pts.clone(), w) {
            Ok(q) => q,
            Err(e) => {
                err = Some(e);
                return;
            }
        };
        match div(p, &q) {
            Ok(v) if v.is_finite() => best = best.max(gain - v),
            Ok(_) => {}
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(best)
}
