//! Sup-error of sampled uniform mixtures against a weighted mixture.

use serde::{Deserialize, Serialize};

use super::{linspace, num, write_csv, OutputHeader};
use crate::dist::RandomSource;
use crate::error::{Error, Result};
use crate::neuralgan::mixture::{constant_member, loglog_slope, mixture_scaling, ScalingRow};
use crate::neuralgan::{Activation, MlpParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureScalingConfig {
    /// `two-constant`, `single`, or `mlp:<n>` for `n` random one-input networks.
    pub family: String,
    pub ms: Vec<usize>,
    pub repetitions: usize,
    /// Points of the evaluation grid on `[-1, 1]`.
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for MixtureScalingConfig {
    fn default() -> Self {
        MixtureScalingConfig {
            family: "two-constant".into(),
            ms: vec![16, 64, 256, 1024],
            repetitions: 200,
            grid_points: 33,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Log-log slope of the median; `None` when some median is zero.
    pub slope: Option<f64>,
}

/// Members and mixing weights for a family name.
pub fn family_members(family: &str, seed: u64) -> Result<(Vec<MlpParams>, Vec<f64>)> {
    match family {
        "two-constant" => Ok((
            vec![constant_member(1, 0.0), constant_member(1, 1.0)],
            vec![0.5, 0.5],
        )),
        "single" => {
            let mut rng = RandomSource::stream(seed, u64::MAX);
            Ok((
                vec![MlpParams::new(&[1, 8, 1], Activation::Tanh, &mut rng)?],
                vec![1.0],
            ))
        }
        _ => {
            let n: usize = family
                .strip_prefix("mlp:")
                .and_then(|n| n.parse().ok())
                .filter(|&n| n > 0)
                .ok_or_else(|| {
                    Error::Parse(format!(
                        "unknown family {family:?}; expected two-constant, single or mlp:<n>"
                    ))
                })?;
            let mut rng = RandomSource::stream(seed, u64::MAX);
            let members = (0..n)
                .map(|_| MlpParams::new(&[1, 8, 1], Activation::Tanh, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let raw: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.1, 1.0)).collect();
            let s: f64 = raw.iter().sum();
            Ok((members, raw.iter().map(|a| a / s).collect()))
        }
    }
}

pub fn run_mixture_scaling(cfg: &MixtureScalingConfig) -> Result<MixtureScalingReport> {
    if cfg.ms.is_empty() || cfg.ms.contains(&0) || cfg.repetitions == 0 || cfg.grid_points == 0 {
        return Err(Error::Parse(
            "m list, repetitions and grid must be nonempty and positive".into(),
        ));
    }
    let (members, alpha) = family_members(&cfg.family, cfg.seed)?;
    let grid: Vec<Vec<f64>> = linspace(-1.0, 1.0, cfg.grid_points)
        .into_iter()
        .map(|x| vec![x])
        .collect();
    let rows = mixture_scaling(&members, &alpha, &cfg.ms, cfg.repetitions, &grid, cfg.seed)?;
    let slope = loglog_slope(&rows);
    Ok(MixtureScalingReport { rows, slope })
}

/// Writes `m,median_err,q25,q75` followed by a `# slope:` line.
pub fn write_mixture_csv(
    path: &std::path::Path,
    header: &OutputHeader,
    report: &MixtureScalingReport,
) -> Result<()> {
    let body: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| vec![r.m.to_string(), num(r.median), num(r.q25), num(r.q75)])
        .collect();
    write_csv(path, header, &["m", "median_err", "q25", "q75"], &body)?;
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().append(true).open(path)?;
    writeln!(f, "# slope: {}", slope_text(report.slope))?;
    Ok(())
}

pub fn slope_text(slope: Option<f64>) -> String {
    slope.map_or_else(|| "undefined".into(), num)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(family: &str, ms: Vec<usize>) -> MixtureScalingReport {
        run_mixture_scaling(&MixtureScalingConfig {
            family: family.into(),
            ms,
            ..MixtureScalingConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn single_member_is_exact_and_slope_undefined() {
        let r = run("single", vec![16, 64]);
        assert!(r.rows.iter().all(|row| row.median == 0.0 && row.q75 == 0.0));
        assert_eq!(r.slope, None);
        assert_eq!(slope_text(r.slope), "undefined");
    }

    #[test]
    fn two_constants_decay_at_the_square_root_rate() {
        let s = run("two-constant", vec![16, 64, 256, 1024]).slope.unwrap();
        assert!((-0.65..=-0.35).contains(&s), "{s}");
    }

    #[test]
    fn mlp_family_error_decreases() {
        let r = run("mlp:8", vec![16, 64, 256]);
        let med: Vec<f64> = r.rows.iter().map(|row| row.median).collect();
        assert!(med[0] > med[1] && med[1] > med[2], "{med:?}");
    }

    #[test]
    fn unknown_family_is_rejected() {
        for f in ["mlp:0", "mlp:x", "three"] {
            let cfg = MixtureScalingConfig {
                family: f.into(),
                ..MixtureScalingConfig::default()
            };
            assert!(matches!(run_mixture_scaling(&cfg), Err(Error::Parse(_))));
        }
    }
}
