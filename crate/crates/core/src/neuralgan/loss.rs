//! GAN objectives with exact gradients.
//!
//! Every objective has the form
//! `J = mean_real A(s(x)) - mean_fake [B(s(x~ + u)) - c |u|^2]`
//! where `s` is the raw discriminator network output, `u` the WRM perturbation
//! (zero except for `fgan-wrm`) and `A`, `B` scalar heads chosen per loss. The
//! discriminator ascends `J` (minus the gradient penalty for `w1gan`); the
//! generator descends `J`.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::mlp::MlpParams;
use crate::dist::RandomSource;
use crate::error::{Error, Result};
use crate::fdiv::FGenerator;

/// Distance kept from the edge of the domain of `f*` by the clamped head.
pub const CONJ_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Logistic-loss GAN with logits `s`.
    VanillaSigmoid,
    /// `E[D(X)] - E[f*(D(G(Z)))]`.
    Fgan(FGenerator),
    /// `E[D(X)] - E[D(G(Z))]` with a gradient penalty.
    W1gan,
    /// f-GAN over `{D : f* o D 1-Lipschitz}`, enforced by spectral normalization.
    FganLipschitz(FGenerator),
    /// f-GAN with an adversarial input perturbation on the generated samples.
    FganWrm(FGenerator),
}

impl LossKind {
    pub fn name(&self) -> String {
        match self {
            LossKind::VanillaSigmoid => "vanilla-sigmoid".into(),
            LossKind::Fgan(f) => format!("fgan:{}", f.name()),
            LossKind::W1gan => "w1gan".into(),
            LossKind::FganLipschitz(f) => format!("fgan-lipschitz:{}", f.name()),
            LossKind::FganWrm(f) => format!("fgan-wrm:{}", f.name()),
        }
    }

    /// All five heads with `f_JS` where a generator is needed.
    pub fn all_js() -> [LossKind; 5] {
        [
            LossKind::VanillaSigmoid,
            LossKind::Fgan(FGenerator::Js),
            LossKind::W1gan,
            LossKind::FganLipschitz(FGenerator::Js),
            LossKind::FganWrm(FGenerator::Js),
        ]
    }

    pub fn uses_spectral_norm(&self) -> bool {
        matches!(self, LossKind::FganLipschitz(_))
    }

    pub fn uses_gradient_penalty(&self) -> bool {
        matches!(self, LossKind::W1gan)
    }

    pub fn uses_wrm(&self) -> bool {
        matches!(self, LossKind::FganWrm(_))
    }

    /// Estimate rescaled to bits for the JS-based heads; other heads pass through.
    ///
    /// The vanilla objective `V` maps to `(V + 2 log 2) / (2 log 2)`; the f-GAN
    /// heads with `f_JS` are in nats and divide by `log 2`.
    pub fn adjusted_estimate(&self, raw: f64) -> f64 {
        match self {
            LossKind::VanillaSigmoid => (raw + 2.0 * LN_2) / (2.0 * LN_2),
            LossKind::Fgan(FGenerator::Js)
            | LossKind::FganLipschitz(FGenerator::Js)
            | LossKind::FganWrm(FGenerator::Js) => raw / LN_2,
            _ => raw,
        }
    }

    /// `(A(s), A'(s))`, the real-sample head.
    pub fn real_head(&self, s: f64) -> (f64, f64) {
        match *self {
            LossKind::VanillaSigmoid => (-softplus(s), -sigmoid(s)),
            LossKind::W1gan => (s, 1.0),
            LossKind::Fgan(f) | LossKind::FganWrm(f) => fgan_output(f, s),
            LossKind::FganLipschitz(f) => lipschitz_real(f, s),
        }
    }

    /// `(B(s), B'(s))`, the generated-sample head.
    pub fn fake_head(&self, s: f64) -> (f64, f64) {
        match *self {
            LossKind::VanillaSigmoid => (softplus(-s), -sigmoid(-s)),
            LossKind::W1gan => (s, 1.0),
            LossKind::Fgan(f) | LossKind::FganWrm(f) => conj_of_output(f, s),
            LossKind::FganLipschitz(f) => (f.conj_inf() + softplus(s), sigmoid(s)),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let gen = |a: Option<&str>| -> Result<FGenerator> {
            FGenerator::from_name(a.ok_or_else(|| {
                Error::Parse(format!("{s:?} needs an f-divergence, e.g. {head}:js"))
            })?)
        };
        match head {
            "vanilla-sigmoid" | "vanilla" if arg.is_none() => Ok(LossKind::VanillaSigmoid),
            "w1gan" if arg.is_none() => Ok(LossKind::W1gan),
            "fgan" => Ok(LossKind::Fgan(gen(arg)?)),
            "fgan-lipschitz" => Ok(LossKind::FganLipschitz(gen(arg)?)),
            "fgan-wrm" => Ok(LossKind::FganWrm(gen(arg)?)),
            _ => Err(Error::Parse(format!("unknown loss kind {s:?}"))),
        }
    }
}

impl Serialize for LossKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for LossKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Discriminator value `D(s)` fed to `f*` and its derivative.
///
/// `f_JS` uses `D = (log 2 - softplus(s)) / 2`, which stays inside the domain
/// of `f*_JS` for every `s`. Other generators clamp `s` below the edge of the
/// domain by [`CONJ_MARGIN`].
pub fn fgan_output(f: FGenerator, s: f64) -> (f64, f64) {
    match f {
        FGenerator::Js => (0.5 * (LN_2 - softplus(s)), -0.5 * sigmoid(s)),
        _ => {
            let cap = f.conj_sup() - CONJ_MARGIN;
            if s < cap {
                (s, 1.0)
            } else {
                (cap, 0.0)
            }
        }
    }
}

/// `f*(D(s))` and its derivative in `s`.
pub fn conj_of_output(f: FGenerator, s: f64) -> (f64, f64) {
    match f {
        FGenerator::Js => (0.5 * (softplus(-s) - LN_2), -0.5 * sigmoid(-s)),
        _ => {
            let (d, dd) = fgan_output(f, s);
            (f.conj(d), f.conj_deriv(d) * dd)
        }
    }
}

/// `D = (f*)^{-1}(E)` with `E = inf f* + softplus(s)`, written to stay accurate
/// as `E` approaches the bottom of the range of `f*`.
fn lipschitz_real(f: FGenerator, s: f64) -> (f64, f64) {
    let sp = softplus(s);
    let sg = sigmoid(s);
    match f {
        FGenerator::Kl => (1.0 + sp.ln(), sg / sp),
        FGenerator::Js => (
            0.5 * LN_2 + 0.5 * (-(-2.0 * sp).exp_m1()).ln(),
            sg / (2.0 * sp).exp_m1(),
        ),
        FGenerator::SqHellinger => ((sp - 1.0) / sp, sg / (sp * sp)),
    }
}

/// Samples held fixed while differentiating: WRM perturbations and penalty interpolates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frozen {
    /// One perturbation per generated sample; empty means none.
    pub perturbations: Vec<Vec<f64>>,
    /// Points where the gradient penalty is evaluated; empty means none.
    pub interpolates: Vec<Vec<f64>>,
}

/// Scalar weights of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadParams {
    pub gp_weight: f64,
    /// Coefficient of `|u|^2` in the perturbation cost.
    pub wrm_coeff: f64,
}

impl Default for HeadParams {
    fn default() -> Self {
        HeadParams {
            gp_weight: 10.0,
            wrm_coeff: 1.0,
        }
    }
}

fn check_batches(
    disc: &MlpParams,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    frozen: &Frozen,
) -> Result<()> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    if disc.output_dim() != 1 {
        return Err(Error::Domain(
            "the discriminator must have one output".into(),
        ));
    }
    let d = disc.input_dim();
    let bad = real
        .iter()
        .chain(fake)
        .chain(&frozen.perturbations)
        .chain(&frozen.interpolates)
        .any(|x| x.len() != d);
    if bad {
        return Err(Error::Domain(format!(
            "sample dimension differs from discriminator input {d}"
        )));
    }
    if !frozen.perturbations.is_empty() && frozen.perturbations.len() != fake.len() {
        return Err(Error::Domain(
            "one perturbation per generated sample is required".into(),
        ));
    }
    Ok(())
}

fn perturbed(x: &[f64], frozen: &Frozen, j: usize) -> (Vec<f64>, f64) {
    match frozen.perturbations.get(j) {
        Some(u) => (
            x.iter().zip(u).map(|(a, b)| a + b).collect(),
            u.iter().map(|v| v * v).sum(),
        ),
        None => (x.to_vec(), 0.0),
    }
}

/// `J` with real samples weighted by `real_w` (uniform when `None`).
pub fn objective_weighted(
    kind: LossKind,
    disc: &MlpParams,
    real: &[Vec<f64>],
    real_w: Option<&[f64]>,
    fake: &[Vec<f64>],
    frozen: &Frozen,
    hp: HeadParams,
) -> Result<f64> {
    check_batches(disc, real, fake, frozen)?;
    let nr = real.len() as f64;
    let mut v = 0.0;
    for (i, x) in real.iter().enumerate() {
        let w = real_w.map_or(1.0 / nr, |w| w[i]);
        v += w * kind.real_head(disc.tape(x).output()[0]).0;
    }
    let nf = fake.len() as f64;
    for (j, x) in fake.iter().enumerate() {
        let (xp, u2) = perturbed(x, frozen, j);
        v -= (kind.fake_head(disc.tape(&xp).output()[0]).0 - hp.wrm_coeff * u2) / nf;
    }
    Ok(v)
}

/// `J` with uniform weights.
pub fn objective(
    kind: LossKind,
    disc: &MlpParams,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    frozen: &Frozen,
    hp: HeadParams,
) -> Result<f64> {
    objective_weighted(kind, disc, real, None, fake, frozen, hp)
}

/// `(disc_loss, gen_loss)`: the discriminator minimises `-(J - gp_weight * GP)`,
/// the generator minimises `J`.
pub fn gan_loss(
    kind: LossKind,
    disc: &MlpParams,
    fake: &[Vec<f64>],
    real: &[Vec<f64>],
    frozen: &Frozen,
    hp: HeadParams,
) -> Result<(f64, f64)> {
    let j = objective(kind, disc, real, fake, frozen, hp)?;
    let gp = if kind.uses_gradient_penalty() {
        penalty_at(disc, &frozen.interpolates)?
    } else {
        0.0
    };
    Ok((-(j - hp.gp_weight * gp), j))
}

/// Discriminator loss and its gradient in the discriminator parameters.
pub fn disc_gradient(
    kind: LossKind,
    disc: &MlpParams,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    frozen: &Frozen,
    hp: HeadParams,
) -> Result<(f64, Vec<f64>)> {
    check_batches(disc, real, fake, frozen)?;
    let mut grad = vec![0.0; disc.n_params()];
    let mut j = 0.0;
    let nr = real.len() as f64;
    for x in real {
        let tape = disc.tape(x);
        let (a, da) = kind.real_head(tape.output()[0]);
        j += a / nr;
        disc.backward(&tape, &[-da / nr], &mut grad);
    }
    let nf = fake.len() as f64;
    for (k, x) in fake.iter().enumerate() {
        let (xp, u2) = perturbed(x, frozen, k);
        let tape = disc.tape(&xp);
        let (b, db) = kind.fake_head(tape.output()[0]);
        j -= (b - hp.wrm_coeff * u2) / nf;
        disc.backward(&tape, &[db / nf], &mut grad);
    }
    let mut loss = -j;
    if kind.uses_gradient_penalty() && !frozen.interpolates.is_empty() {
        let gp = penalty_with_grad(disc, &frozen.interpolates, hp.gp_weight, &mut grad);
        loss += hp.gp_weight * gp;
    }
    Ok((loss, grad))
}

/// `J` and `dJ/dx~` for every generated sample, perturbations held fixed.
pub fn fake_gradient(
    kind: LossKind,
    disc: &MlpParams,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    frozen: &Frozen,
    hp: HeadParams,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_batches(disc, real, fake, frozen)?;
    let nr = real.len() as f64;
    let mut j: f64 = real
        .iter()
        .map(|x| kind.real_head(disc.tape(x).output()[0]).0 / nr)
        .sum();
    let nf = fake.len() as f64;
    let mut scratch = vec![0.0; disc.n_params()];
    let mut grads = Vec::with_capacity(fake.len());
    for (k, x) in fake.iter().enumerate() {
        let (xp, u2) = perturbed(x, frozen, k);
        let tape = disc.tape(&xp);
        let (b, db) = kind.fake_head(tape.output()[0]);
        j -= (b - hp.wrm_coeff * u2) / nf;
        grads.push(disc.backward(&tape, &[-db / nf], &mut scratch));
    }
    Ok((j, grads))
}

/// Pulls per-sample output gradients back to generator parameters.
pub fn generator_gradient(gen: &MlpParams, noise: &[Vec<f64>], dfake: &[Vec<f64>]) -> Vec<f64> {
    let mut grad = vec![0.0; gen.n_params()];
    for (z, d) in noise.iter().zip(dfake) {
        gen.backward(&gen.tape(z), d, &mut grad);
    }
    grad
}

/// `eps x_real + (1 - eps) x_fake` with `eps` uniform, pairing samples cyclically.
pub fn interpolates(real: &[Vec<f64>], fake: &[Vec<f64>], rng: &mut RandomSource) -> Vec<Vec<f64>> {
    let n = real.len().max(fake.len());
    (0..n)
        .map(|i| {
            let (r, f) = (&real[i % real.len()], &fake[i % fake.len()]);
            let e = rng.uniform();
            r.iter()
                .zip(f)
                .map(|(a, b)| e * a + (1.0 - e) * b)
                .collect()
        })
        .collect()
}

/// `mean (|grad_x s(x)| - 1)^2` over `points`.
pub fn penalty_at(disc: &MlpParams, points: &[Vec<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Ok(0.0);
    }
    if points.iter().any(|x| x.len() != disc.input_dim()) || disc.output_dim() != 1 {
        return Err(Error::Domain(
            "penalty points do not match the discriminator".into(),
        ));
    }
    Ok(points
        .iter()
        .map(|x| {
            let (_, g) = disc.input_gradient(x);
            (g.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).powi(2)
        })
        .sum::<f64>()
        / points.len() as f64)
}

/// Penalty on fresh interpolates between the two batches.
pub fn gradient_penalty(
    disc: &MlpParams,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    rng: &mut RandomSource,
) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    penalty_at(disc, &interpolates(real, fake, rng))
}

/// Returns the penalty and accumulates `weight * dGP/dparams` into `grad`.
fn penalty_with_grad(disc: &MlpParams, points: &[Vec<f64>], weight: f64, grad: &mut [f64]) -> f64 {
    let k = points.len() as f64;
    let mut gp = 0.0;
    for x in points {
        let tape = disc.tape(x);
        let mut scratch = vec![0.0; disc.n_params()];
        let g = disc.backward(&tape, &[1.0], &mut scratch);
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        gp += (n - 1.0).powi(2) / k;
        if n > 0.0 {
            let coef = weight * 2.0 * (n - 1.0) / (n * k);
            let gbar: Vec<f64> = g.iter().map(|v| coef * v).collect();
            disc.input_gradient_backward(&tape, &gbar, grad);
        }
    }
    gp
}

/// Outcome of the inner perturbation problem at one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WrmSolution {
    pub u: Vec<f64>,
    /// `-f*(D(x + u)) + c |u|^2` at the returned `u`.
    pub value: f64,
    /// The same at `u = 0`.
    pub value_at_zero: f64,
    pub steps: usize,
}

/// `min_u -f*(D(x + u)) + coeff |u|^2` by backtracking gradient descent from `u = 0`.
///
/// `D` is the f-GAN head applied to the network output. Steps that leave the
/// domain of `f*` or fail the sufficient-decrease test are shrunk; the best
/// iterate is returned, so `value <= value_at_zero` always.
pub fn wrm_inner_solve(
    disc: &MlpParams,
    f: FGenerator,
    x: &[f64],
    steps: usize,
    step_size: f64,
    coeff: f64,
) -> Result<WrmSolution> {
    if steps == 0 {
        return Err(Error::Domain("at least one inner step is required".into()));
    }
    if x.len() != disc.input_dim() || disc.output_dim() != 1 {
        return Err(Error::Domain(
            "sample does not match the discriminator".into(),
        ));
    }
    let phi = |u: &[f64]| -> (f64, Vec<f64>) {
        let xp: Vec<f64> = x.iter().zip(u).map(|(a, b)| a + b).collect();
        let (s, gs) = disc.input_gradient(&xp);
        let (b, db) = conj_of_output(f, s);
        let v = -b + coeff * u.iter().map(|v| v * v).sum::<f64>();
        let g = gs
            .iter()
            .zip(u)
            .map(|(g, ui)| -db * g + 2.0 * coeff * ui)
            .collect();
        (v, g)
    };
    let mut u = vec![0.0; x.len()];
    let (v0, mut g) = phi(&u);
    let mut v = v0;
    let mut taken = 0;
    for _ in 0..steps {
        let gg: f64 = g.iter().map(|a| a * a).sum();
        if gg == 0.0 || !gg.is_finite() {
            break;
        }
        let mut eta = step_size;
        let mut next = None;
        for _ in 0..40 {
            let cand: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a - eta * b).collect();
            let (vc, gc) = phi(&cand);
            if vc.is_finite() && vc <= v - 1e-4 * eta * gg {
                next = Some((cand, vc, gc));
                break;
            }
            eta *= 0.5;
        }
        let Some((cand, vc, gc)) = next else { break };
        u = cand;
        v = vc;
        g = gc;
        taken += 1;
    }
    Ok(WrmSolution {
        u,
        value: v,
        value_at_zero: v0,
        steps: taken,
    })
}

/// Solves the inner problem at every generated sample.
pub fn wrm_perturbations(
    disc: &MlpParams,
    f: FGenerator,
    fake: &[Vec<f64>],
    steps: usize,
    step_size: f64,
    coeff: f64,
) -> Result<Vec<WrmSolution>> {
    fake.iter()
        .map(|x| wrm_inner_solve(disc, f, x, steps, step_size, coeff))
        .collect()
}
