//! Concave maximisation routines shared by the dual solvers.
//!
//! [`bfgs_maximize`] handles smooth objectives in a few coordinates.
//! [`CTransformProblem`] handles objectives of the form
//! `sum_x w_x h(a_x) - R(T a)` where `T a(y) = max_x a_x - c(x, y)` is a
//! c-transform over a finite support. The max is smoothed by log-sum-exp at a
//! decreasing temperature; every reported value uses the exact transform.

use crate::fdiv::{conjugate_aligned, FGenerator};

/// Outcome of a maximisation run.
#[derive(Debug, Clone)]
pub struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub unbounded: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Values above this are reported as unbounded.
    pub value_cap: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 5000,
            grad_tol: 1e-10,
            value_cap: 1e8,
        }
    }
}

/// Maximises a smooth concave function. `eval` returns `None` outside the domain.
pub fn bfgs_maximize(
    eval: impl Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
    x0: Vec<f64>,
    opts: BfgsOptions,
) -> AscentResult {
    let n = x0.len();
    let mut x = x0;
    let Some((mut fx, mut gx)) = eval(&x) else {
        return AscentResult {
            x,
            value: f64::NEG_INFINITY,
            iterations: 0,
            converged: false,
            unbounded: false,
        };
    };
    // Inverse Hessian approximation of -f.
    let mut h = identity(n);
    let mut stall = 0;
    for it in 0..opts.max_iter {
        if fx > opts.value_cap || x.iter().any(|v| v.abs() > 1e12) {
            return AscentResult {
                x,
                value: fx,
                iterations: it,
                converged: false,
                unbounded: true,
            };
        }
        let gnorm = gx.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if gnorm <= opts.grad_tol {
            return AscentResult {
                x,
                value: fx,
                iterations: it,
                converged: true,
                unbounded: false,
            };
        }
        let mut dir = matvec(&h, &gx);
        let mut slope: f64 = dot(&dir, &gx);
        if slope <= 0.0 || !slope.is_finite() {
            h = identity(n);
            dir = gx.clone();
            slope = dot(&gx, &gx);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            if let Some((fn_, gn)) = eval(&xn) {
                if fn_.is_finite() && fn_ >= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            step *= 0.5;
        }
        // Extrapolate while the directional slope barely drops (near-linear objective).
        if let Some((xa, fa, ga)) = accepted.take() {
            let mut cur = (xa, fa, ga);
            if step == 1.0 {
                let mut st = 1.0;
                while dot(&cur.2, &dir) >= 0.9 * slope && cur.1 <= opts.value_cap && st < 1e12 {
                    st *= 2.0;
                    let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + st * d).collect();
                    match eval(&xn) {
                        Some((f2, g2)) if f2.is_finite() && f2 > cur.1 => cur = (xn, f2, g2),
                        _ => break,
                    }
                }
            }
            accepted = Some(cur);
        }
        let Some((xn, fn_, gn)) = accepted else {
            // No ascent along the quasi-Newton direction: retry once along the gradient.
            if h != identity(n) {
                h = identity(n);
                continue;
            }
            return AscentResult {
                x,
                value: fx,
                iterations: it,
                converged: gnorm <= 1e-6,
                unbounded: false,
            };
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        // Curvature pair for -f.
        let y: Vec<f64> = gx.iter().zip(&gn).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            let hy = matvec(&h, &y);
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] +=
                        (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        if fn_ - fx <= 1e-15 * fx.abs().max(1.0) {
            stall += 1;
        } else {
            stall = 0;
        }
        x = xn;
        fx = fn_;
        gx = gn;
        if stall > 20 {
            return AscentResult {
                x,
                value: fx,
                iterations: it,
                converged: true,
                unbounded: false,
            };
        }
    }
    AscentResult {
        x,
        value: fx,
        iterations: opts.max_iter,
        converged: false,
        unbounded: false,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-coordinate concave term `h` in the objective.
#[derive(Debug, Clone, Copy)]
pub enum Head {
    /// `h(a) = a`.
    Identity,
    /// `h(a) = (f*)^{-1}(a)`, defined for `a > inf f*`.
    InverseConj(FGenerator),
}

impl Head {
    fn value(self, a: f64) -> f64 {
        match self {
            Head::Identity => a,
            Head::InverseConj(f) => f.conj_inverse(a),
        }
    }

    fn deriv(self, a: f64) -> f64 {
        match self {
            Head::Identity => 1.0,
            Head::InverseConj(f) => 1.0 / f.conj_deriv(f.conj_inverse(a)),
        }
    }
}

/// Convex non-decreasing functional `R` applied to the transformed vector.
#[derive(Debug, Clone)]
pub enum Tail {
    /// `R(g) = sum_y p_y g_y`.
    Linear(Vec<f64>),
    /// `R(g) = sup_Q E_Q[g] - d_f(P, Q)`.
    Conjugate { f: FGenerator, p: Vec<f64> },
}

impl Tail {
    /// Value and gradient (a probability vector).
    fn eval(&self, g: &[f64]) -> Option<(f64, Vec<f64>)> {
        match self {
            Tail::Linear(p) => Some((dot(p, g), p.clone())),
            Tail::Conjugate { f, p } => {
                let s = conjugate_aligned(*f, p, g).ok()?;
                Some((s.value, s.q))
            }
        }
    }

    /// Like [`Tail::eval`], with the max over zero-weight atoms in the conjugate
    /// replaced by a log-sum-exp at temperature `tau`.
    fn eval_smooth(&self, g: &[f64], tau: f64) -> Option<(f64, Vec<f64>)> {
        let Tail::Conjugate { f, p } = self else {
            return self.eval(g);
        };
        let zeros: Vec<usize> = (0..p.len()).filter(|&i| p[i] == 0.0).collect();
        if zeros.len() < 2 || !f.slope_at_infinity().is_finite() {
            return self.eval(g);
        }
        let mx = zeros
            .iter()
            .map(|&i| g[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = zeros.iter().map(|&i| ((g[i] - mx) / tau).exp()).sum();
        let mut pw: Vec<f64> = Vec::with_capacity(p.len() - zeros.len() + 1);
        let mut gv = Vec::with_capacity(pw.capacity());
        for i in 0..p.len() {
            if p[i] > 0.0 {
                pw.push(p[i]);
                gv.push(g[i]);
            }
        }
        pw.push(0.0);
        gv.push(mx + tau * z.ln());
        let s = conjugate_aligned(*f, &pw, &gv).ok()?;
        let rest = s.q[pw.len() - 1];
        let mut q = vec![0.0; p.len()];
        let mut k = 0;
        for i in 0..p.len() {
            if p[i] > 0.0 {
                q[i] = s.q[k];
                k += 1;
            } else {
                q[i] = rest * ((g[i] - mx) / tau).exp() / z;
            }
        }
        Some((s.value, q))
    }

    fn weights(&self) -> &[f64] {
        match self {
            Tail::Linear(p) => p,
            Tail::Conjugate { p, .. } => p,
        }
    }

    /// Whether `T a(y)` matters at `y`.
    fn needs(&self, y: usize) -> bool {
        match self {
            Tail::Linear(p) => p[y] > 0.0,
            Tail::Conjugate { .. } => true,
        }
    }
}

/// `max_a sum_x w_x h(a_x) - R(T a)` over vectors on a support of size `k`.
#[derive(Debug, Clone)]
pub struct CTransformProblem {
    /// `cost[x * k + y] = c(x, y)`.
    pub cost: Vec<f64>,
    pub k: usize,
    pub w: Vec<f64>,
    pub head: Head,
    pub tail: Tail,
}

/// Result of [`CTransformProblem::solve`].
#[derive(Debug, Clone)]
pub struct CTransformSolution {
    /// Maximiser after double c-transform restoration.
    pub a: Vec<f64>,
    /// `T a`.
    pub transformed: Vec<f64>,
    /// Exact objective at `a`.
    pub value: f64,
    pub iterations: usize,
}

impl CTransformProblem {
    /// Exact c-transform `T a(y) = max_x a_x - c(x, y)`.
    pub fn transform(&self, a: &[f64]) -> Vec<f64> {
        let k = self.k;
        (0..k)
            .map(|y| {
                (0..k)
                    .map(|x| a[x] - self.cost[x * k + y])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    /// Conjugate transform `g -> min_y g_y + c(x, y)`.
    pub fn transform_back(&self, g: &[f64]) -> Vec<f64> {
        let k = self.k;
        (0..k)
            .map(|x| {
                (0..k)
                    .map(|y| g[y] + self.cost[x * k + y])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    /// Exact objective.
    pub fn objective(&self, a: &[f64]) -> f64 {
        let g = self.transform(a);
        let head: f64 = self
            .w
            .iter()
            .zip(a)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, &x)| w * self.head.value(x))
            .sum();
        match self.tail.eval(&g) {
            Some((r, _)) if head.is_finite() => head - r,
            _ => f64::NEG_INFINITY,
        }
    }

    /// Replaces `a` by `T^- T a`, which keeps `T a` and can only raise `a`.
    pub fn restore(&self, a: &[f64]) -> Vec<f64> {
        self.transform_back(&self.transform(a))
    }

    /// Smoothed objective and gradient at temperature `tau`.
    fn smooth(&self, a: &[f64], tau: f64) -> Option<(f64, Vec<f64>)> {
        let k = self.k;
        let mut head = 0.0;
        let mut grad = vec![0.0; k];
        for x in 0..k {
            if self.w[x] > 0.0 {
                let h = self.head.value(a[x]);
                if !h.is_finite() {
                    return None;
                }
                head += self.w[x] * h;
                grad[x] = self.w[x] * self.head.deriv(a[x]);
            }
        }
        let mut g = vec![0.0; k];
        let mut soft = vec![0.0; k * k];
        for y in 0..k {
            if !self.tail.needs(y) {
                continue;
            }
            let mx = (0..k)
                .map(|x| a[x] - self.cost[x * k + y])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in 0..k {
                let e = ((a[x] - self.cost[x * k + y] - mx) / tau).exp();
                soft[y * k + x] = e;
                z += e;
            }
            for x in 0..k {
                soft[y * k + x] /= z;
            }
            g[y] = mx + tau * z.ln();
        }
        // Linear tails only see the atoms they weight; the others get a harmless value.
        let (r, q) = self.tail.eval_smooth(&g, tau)?;
        for y in 0..k {
            if q[y] != 0.0 {
                for x in 0..k {
                    grad[x] -= q[y] * soft[y * k + x];
                }
            }
        }
        let v = head - r;
        if v.is_finite() && grad.iter().all(|v| v.is_finite()) {
            Some((v, grad))
        } else {
            None
        }
    }

    /// Smoothed objective in the transformed variable: `a = softmin_y g_y + c(x, y)`.
    fn smooth_back(&self, g: &[f64], tau: f64) -> Option<(f64, Vec<f64>)> {
        let k = self.k;
        let (r, q) = self.tail.eval_smooth(g, tau)?;
        let mut grad: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut head = 0.0;
        let mut pi = vec![0.0; k];
        for x in 0..k {
            if self.w[x] <= 0.0 {
                continue;
            }
            let mn = (0..k)
                .map(|y| g[y] + self.cost[x * k + y])
                .fold(f64::INFINITY, f64::min);
            let mut z = 0.0;
            for y in 0..k {
                pi[y] = (-(g[y] + self.cost[x * k + y] - mn) / tau).exp();
                z += pi[y];
            }
            let a = mn - tau * z.ln();
            let h = self.head.value(a);
            if !h.is_finite() {
                return None;
            }
            head += self.w[x] * h;
            let d = self.w[x] * self.head.deriv(a) / z;
            for y in 0..k {
                grad[y] += d * pi[y];
            }
        }
        let v = head - r;
        if v.is_finite() && grad.iter().all(|v| v.is_finite()) {
            Some((v, grad))
        } else {
            None
        }
    }

    /// Continuation over temperatures from `scale` down to `1e-6 * scale`,
    /// accelerated gradient ascent at each temperature.
    pub fn solve(&self, a0: Vec<f64>, max_iter_per_stage: usize) -> CTransformSolution {
        let k = self.k;
        let scale = self.cost.iter().fold(
            0.0_f64,
            |m, c| if c.is_finite() { m.max(c.abs()) } else { m },
        );
        let scale = if scale < 1e-3 { 1.0 } else { scale };
        let mut a = a0;
        let mut best_a = self.restore(&a);
        let mut best = self.objective(&best_a);
        let mut total = 0;
        let temps = [
            1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6,
        ];
        for &t in &temps {
            let tau = t * scale;
            let (next, iters) = Self::accelerated(
                |v| self.smooth(v, tau),
                a.clone(),
                max_iter_per_stage,
                1.0 / tau,
            );
            total += iters;
            a = self.restore(&next);
            let v = self.objective(&a);
            if v > best {
                best = v;
                best_a = a.clone();
            } else {
                a = best_a.clone();
            }
        }
        // Second pass over the transformed potential `g`, where `a = T^- g`.
        let mut g = self.transform(&best_a);
        for y in 0..k {
            if !g[y].is_finite() {
                g[y] = 0.0;
            }
        }
        for &t in &temps {
            let tau = t * scale;
            let (next, iters) = Self::accelerated(
                |v| self.smooth_back(v, tau),
                g.clone(),
                max_iter_per_stage,
                1.0 / tau,
            );
            total += iters;
            let cand = self.transform_back(&next);
            let v = self.objective(&cand);
            if v > best {
                best = v;
                best_a = cand;
                g = next;
            }
        }
        CTransformSolution {
            transformed: self.transform(&best_a),
            a: best_a,
            value: best,
            iterations: total,
        }
    }

    fn accelerated(
        smooth: impl Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
        a0: Vec<f64>,
        max_iter: usize,
        lip0: f64,
    ) -> (Vec<f64>, usize) {
        let Some((mut fx, _)) = smooth(&a0) else {
            return (a0, 0);
        };
        let mut x = a0.clone();
        let mut y = a0;
        let Some((mut fy, mut gy)) = smooth(&y) else {
            return (x, 0);
        };
        let mut lip = lip0;
        let mut t = 1.0_f64;
        let mut last_check = fx;
        for it in 0..max_iter {
            let gn2 = dot(&gy, &gy);
            if gn2.sqrt() <= 1e-12 {
                return (x, it);
            }
            let mut accepted = None;
            for _ in 0..60 {
                let xn: Vec<f64> = y.iter().zip(&gy).map(|(a, g)| a + g / lip).collect();
                if let Some((fn_, _)) = smooth(&xn) {
                    if fn_ >= fy + 0.5 * gn2 / lip - 1e-14 * fy.abs().max(1.0) {
                        accepted = Some((xn, fn_));
                        break;
                    }
                }
                lip *= 2.0;
            }
            let Some((xn, fn_)) = accepted else {
                return (x, it);
            };
            if fn_ < fx {
                // Momentum overshoot: restart from the last accepted point.
                t = 1.0;
                y = x.clone();
                match smooth(&y) {
                    Some((f, g)) => {
                        fy = f;
                        gy = g;
                    }
                    None => return (x, it),
                }
                continue;
            }
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / tn;
            let yn: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
            x = xn;
            fx = fn_;
            t = tn;
            match smooth(&yn) {
                Some((f, g)) => {
                    y = yn;
                    fy = f;
                    gy = g;
                }
                None => {
                    y = x.clone();
                    t = 1.0;
                    let (f, g) = smooth(&y).expect("accepted point is feasible");
                    fy = f;
                    gy = g;
                }
            }
            lip *= 0.9;
            if it % 200 == 199 {
                if fx - last_check <= 1e-12 * (1.0 + fx.abs()) {
                    return (x, it);
                }
                last_check = fx;
            }
        }
        (x, max_iter)
    }

    pub fn weights(&self) -> &[f64] {
        self.tail.weights()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bfgs_on_quadratic() {
        let r = bfgs_maximize(
            |x| {
                let v = -(x[0] - 1.0).powi(2) - 3.0 * (x[1] + 2.0).powi(2);
                Some((v, vec![-2.0 * (x[0] - 1.0), -6.0 * (x[1] + 2.0)]))
            },
            vec![0.0, 0.0],
            BfgsOptions::default(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn bfgs_reports_unbounded() {
        let r = bfgs_maximize(
            |x| Some((x[0], vec![1.0])),
            vec![0.0],
            BfgsOptions::default(),
        );
        assert!(r.unbounded);
    }

    #[test]
    fn linear_tail_recovers_w1_on_two_points() {
        // max_a a_1 * 1 - (T a)_0 with c = |x - y| on {0, 0.3}: W1(delta_0.3, delta_0) = 0.3.
        let p = CTransformProblem {
            cost: vec![0.0, 0.3, 0.3, 0.0],
            k: 2,
            w: vec![0.0, 1.0],
            head: Head::Identity,
            tail: Tail::Linear(vec![1.0, 0.0]),
        };
        let s = p.solve(vec![0.0, 0.0], 2000);
        assert!((s.value - 0.3).abs() < 1e-9, "{}", s.value);
    }
}
