//! Uniform mixtures of sampled discriminators approximating a convex combination.

use super::mlp::{Layer, MlpParams};
use crate::dist::RandomSource;
use crate::error::{Error, Result};

/// `x -> (1/m) sum_i f_i(x)`.
#[derive(Debug, Clone)]
pub struct MixtureDiscriminator {
    members: Vec<MlpParams>,
}

impl MixtureDiscriminator {
    pub fn new(members: Vec<MlpParams>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Invariant("a mixture needs a member".into()))?;
        let (i, o) = (first.input_dim(), first.output_dim());
        if o != 1
            || members
                .iter()
                .any(|m| m.input_dim() != i || m.output_dim() != 1)
        {
            return Err(Error::Invariant(
                "members must share input width and have one output".into(),
            ));
        }
        Ok(MixtureDiscriminator { members })
    }

    pub fn members(&self) -> &[MlpParams] {
        &self.members
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for m in &self.members {
            s += m.eval(x)?;
        }
        Ok(s / self.members.len() as f64)
    }
}

/// Empirical bound `M = max |f_i|` and Lipschitz constant `L` over a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberBounds {
    pub m_bound: f64,
    pub lipschitz: f64,
}

/// Grid maximum of `|f_i|` and largest pairwise difference quotient.
pub fn member_bounds(members: &[MlpParams], grid: &[Vec<f64>]) -> Result<MemberBounds> {
    let mut m_bound: f64 = 0.0;
    let mut lip: f64 = 0.0;
    for f in members {
        let vals = grid
            .iter()
            .map(|x| f.eval(x))
            .collect::<Result<Vec<f64>>>()?;
        m_bound = vals.iter().fold(m_bound, |a, v| a.max(v.abs()));
        for i in 0..grid.len() {
            for j in i + 1..grid.len() {
                let d = grid[i]
                    .iter()
                    .zip(&grid[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if d > 0.0 {
                    lip = lip.max((vals[i] - vals[j]).abs() / d);
                }
            }
        }
    }
    Ok(MemberBounds {
        m_bound,
        lipschitz: lip,
    })
}

/// `M^2 k log(L R / eps) / eps^2`, the member count the covering argument asks for,
/// with unit constant.
pub fn predicted_members(b: MemberBounds, dim: usize, radius: f64, eps: f64) -> f64 {
    let log = (b.lipschitz * radius / eps).ln().max(1.0);
    b.m_bound.powi(2) * dim as f64 * log / (eps * eps)
}

fn check_alpha(members: &[MlpParams], alpha: &[f64]) -> Result<()> {
    if members.is_empty() || members.len() != alpha.len() {
        return Err(Error::Invariant(
            "one mixing weight per member is required".into(),
        ));
    }
    let s: f64 = alpha.iter().sum();
    if alpha.iter().any(|&a| !(a >= 0.0)) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::Invariant(
            "mixing weights must be a probability vector".into(),
        ));
    }
    Ok(())
}

/// Draws `m` members i.i.d. from `alpha` and returns the grid supremum of
/// `|uniform mixture - sum_i alpha_i f_i|`.
pub fn mixture_approx_error(
    members: &[MlpParams],
    alpha: &[f64],
    m: usize,
    grid: &[Vec<f64>],
    rng: &mut RandomSource,
) -> Result<f64> {
    check_alpha(members, alpha)?;
    if m == 0 {
        return Err(Error::Domain("m must be positive".into()));
    }
    let table = grid
        .iter()
        .map(|x| {
            members
                .iter()
                .map(|f| f.eval(x))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(sup_error(&table, alpha, &draw_counts(alpha, m, rng), m))
}

fn draw_counts(alpha: &[f64], m: usize, rng: &mut RandomSource) -> Vec<usize> {
    let mut counts = vec![0usize; alpha.len()];
    for _ in 0..m {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut pick = alpha.len() - 1;
        for (i, &a) in alpha.iter().enumerate() {
            acc += a;
            if u < acc {
                pick = i;
                break;
            }
        }
        counts[pick] += 1;
    }
    counts
}

fn sup_error(table: &[Vec<f64>], alpha: &[f64], counts: &[usize], m: usize) -> f64 {
    table
        .iter()
        .map(|row| {
            let target: f64 = row.iter().zip(alpha).map(|(v, a)| v * a).sum();
            let mix: f64 = row
                .iter()
                .zip(counts)
                .map(|(v, &c)| v * (c as f64 / m as f64))
                .sum();
            (mix - target).abs()
        })
        .fold(0.0, f64::max)
}

/// Quartiles of the sup-error at one `m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub m: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Repeats [`mixture_approx_error`] `reps` times per `m`. Stream `i` of `seed`
/// serves the `i`-th entry of `ms`.
pub fn mixture_scaling(
    members: &[MlpParams],
    alpha: &[f64],
    ms: &[usize],
    reps: usize,
    grid: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<ScalingRow>> {
    check_alpha(members, alpha)?;
    if reps == 0 || ms.contains(&0) {
        return Err(Error::Domain(
            "repetitions and member counts must be positive".into(),
        ));
    }
    let table = grid
        .iter()
        .map(|x| {
            members
                .iter()
                .map(|f| f.eval(x))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    ms.iter()
        .enumerate()
        .map(|(i, &m)| {
            let mut rng = RandomSource::stream(seed, i as u64);
            let mut errs: Vec<f64> = (0..reps)
                .map(|_| sup_error(&table, alpha, &draw_counts(alpha, m, &mut rng), m))
                .collect();
            errs.sort_by(f64::total_cmp);
            Ok(ScalingRow {
                m,
                median: quantile(&errs, 0.5),
                q25: quantile(&errs, 0.25),
                q75: quantile(&errs, 0.75),
            })
        })
        .collect()
}

/// Least-squares slope of `log median` against `log m`; `None` if any median is zero.
pub fn loglog_slope(rows: &[ScalingRow]) -> Option<f64> {
    if rows.len() < 2 || rows.iter().any(|r| !(r.median > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.m as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// A one-input network returning the constant `c`.
pub fn constant_member(dim: usize, c: f64) -> MlpParams {
    MlpParams::from_layers(
        vec![Layer::new(1, dim, vec![0.0; dim], vec![c]).expect("consistent shape")],
        super::mlp::Activation::Tanh,
    )
    .expect("finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralgan::mlp::Activation;

    fn grid1() -> Vec<Vec<f64>> {
        (0..=20).map(|i| vec![-1.0 + 0.1 * i as f64]).collect()
    }

    #[test]
    fn mixture_is_the_arithmetic_mean() {
        let mut rng = RandomSource::new(2);
        let members: Vec<MlpParams> = (0..5)
            .map(|_| MlpParams::new(&[2, 4, 1], Activation::Tanh, &mut rng).unwrap())
            .collect();
        let mix = MixtureDiscriminator::new(members.clone()).unwrap();
        let x = [0.3, -0.2];
        let mean = members.iter().map(|m| m.eval(&x).unwrap()).sum::<f64>() / 5.0;
        assert!((mix.eval(&x).unwrap() - mean).abs() <= 1e-12);
        assert!(MixtureDiscriminator::new(vec![]).is_err());
    }

    #[test]
    fn single_member_and_degenerate_weights_are_exact() {
        let mut rng = RandomSource::new(3);
        let a = MlpParams::new(&[1, 4, 1], Activation::Tanh, &mut rng).unwrap();
        let b = MlpParams::new(&[1, 4, 1], Activation::Tanh, &mut rng).unwrap();
        for m in [1, 7, 64] {
            assert_eq!(
                mixture_approx_error(std::slice::from_ref(&a), &[1.0], m, &grid1(), &mut rng)
                    .unwrap(),
                0.0
            );
            assert_eq!(
                mixture_approx_error(&[a.clone(), b.clone()], &[0.0, 1.0], m, &grid1(), &mut rng)
                    .unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn two_constants_follow_the_binomial() {
        let members = [constant_member(1, 0.0), constant_member(1, 1.0)];
        let mut rng = RandomSource::new(8);
        let e = mixture_approx_error(&members, &[0.5, 0.5], 10, &grid1(), &mut rng).unwrap();
        // |k/10 - 1/2| for some integer k.
        let k = 10.0 * (0.5 - e);
        assert!(
            (k - k.round()).abs() < 1e-12
                || (10.0 * (0.5 + e) - (10.0 * (0.5 + e)).round()).abs() < 1e-12
        );
        let rows = mixture_scaling(
            &members,
            &[0.5, 0.5],
            &[16, 64, 256, 1024],
            200,
            &[vec![0.0]],
            0,
        )
        .unwrap();
        let slope = loglog_slope(&rows).unwrap();
        assert!((-0.65..=-0.35).contains(&slope), "{slope}");
    }

    #[test]
    fn quantiles_interpolate() {
        let d = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&d, 0.5), 3.0);
        assert_eq!(quantile(&d, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    #[test]
    fn bounds_are_measured() {
        let lin = MlpParams::from_layers(
            vec![Layer::new(1, 1, vec![2.0], vec![0.5]).unwrap()],
            Activation::Tanh,
        )
        .unwrap();
        let b = member_bounds(&[lin], &grid1()).unwrap();
        assert!((b.m_bound - 2.5).abs() < 1e-12 && (b.lipschitz - 2.0).abs() < 1e-9);
        assert!(predicted_members(b, 1, 1.0, 0.1) > 0.0);
    }
}
