//! Toy GAN training runs compared across loss heads.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plot::{emit_svg, PlotSpec, Series};
use super::{num, spearman, write_csv, write_with_header, OutputHeader};
use crate::dist::{FiniteDistribution, RandomSource};
use crate::error::{Error, Result};
use crate::neuralgan::{train, DataSource, LossKind, TrainConfig, TrainLog};

/// Relative band around one bit counted as saturated.
pub const SATURATION_BAND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainToyConfig {
    /// `ring8` (eight Gaussians on a circle) or `delta` (point mass at 0 against
    /// a constant generator started at `delta_start`).
    pub dataset: String,
    pub delta_start: f64,
    pub losses: Vec<LossKind>,
    /// Shared settings; `loss_kind` is replaced per run.
    pub train: TrainConfig,
}

impl Default for TrainToyConfig {
    fn default() -> Self {
        TrainToyConfig {
            dataset: "ring8".into(),
            delta_start: 1.0,
            losses: vec![LossKind::FganLipschitz(crate::fdiv::FGenerator::Js)],
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub loss_kind: LossKind,
    /// Rank correlation of the estimate with the iteration, leaving out the
    /// untrained discriminator at iteration 0.
    pub spearman: Option<f64>,
    pub final_estimate: f64,
    /// Vanilla runs: share of logged adjusted estimates within 5% of one bit.
    pub saturation_fraction: Option<f64>,
}

fn setup(cfg: &TrainToyConfig) -> Result<(DataSource, FiniteDistribution, TrainConfig)> {
    let base = cfg.train.clone();
    match cfg.dataset.as_str() {
        "ring8" => {
            let data = DataSource::ring8();
            let mut rng = RandomSource::stream(base.seed, 100);
            let val = data.validation(base.validation_size, &mut rng)?;
            Ok((data, val, base))
        }
        "delta" => {
            let target = FiniteDistribution::dirac(0.0);
            let train = TrainConfig {
                noise_dim: 0,
                gen_hidden: Vec::new(),
                gen_init: Some(vec![cfg.delta_start]),
                ..base
            };
            Ok((DataSource::Finite(target.clone()), target, train))
        }
        other => Err(Error::Parse(format!(
            "unknown dataset {other:?}; expected ring8 or delta"
        ))),
    }
}

pub fn summarize(log: &TrainLog) -> RunSummary {
    let later: Vec<_> = log.records.iter().filter(|r| r.iter > 0).collect();
    let iters: Vec<f64> = later.iter().map(|r| r.iter as f64).collect();
    let est: Vec<f64> = later.iter().map(|r| r.divergence_estimate_val).collect();
    let saturation_fraction = (log.loss_kind == LossKind::VanillaSigmoid).then(|| {
        let hits = log
            .records
            .iter()
            .filter(|r| (r.divergence_estimate_adjusted - 1.0).abs() <= SATURATION_BAND)
            .count();
        hits as f64 / log.records.len() as f64
    });
    RunSummary {
        loss_kind: log.loss_kind,
        spearman: spearman(&iters, &est),
        final_estimate: log
            .records
            .last()
            .map_or(f64::NAN, |r| r.divergence_estimate_val),
        saturation_fraction,
    }
}

/// Trains one run per loss head on the same data and seed.
pub fn run_train_toy(cfg: &TrainToyConfig) -> Result<Vec<(TrainLog, RunSummary)>> {
    if cfg.losses.is_empty() {
        return Err(Error::Parse("at least one loss kind is required".into()));
    }
    let (data, val, base) = setup(cfg)?;
    base.validate().map_err(|e| Error::Parse(e.to_string()))?;
    cfg.losses
        .iter()
        .map(|&kind| {
            let log = train(
                &TrainConfig {
                    loss_kind: kind,
                    ..base.clone()
                },
                &data,
                &val,
            )?;
            let summary = summarize(&log);
            Ok((log, summary))
        })
        .collect()
}

fn file_stem(kind: LossKind) -> String {
    kind.to_string().replace([':', '-'], "_")
}

/// Writes per-run CSVs, the estimate overlay and `summary.csv`; returns the paths.
pub fn write_train_toy(
    out: &Path,
    header: &OutputHeader,
    runs: &[(TrainLog, RunSummary)],
) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    let mut series = Vec::new();
    for (log, _) in runs {
        let stem = file_stem(log.loss_kind);
        let mut raw = Vec::new();
        log.write_csv(&mut raw)?;
        let p = out.join(format!("train_{stem}.csv"));
        write_with_header(&p, &header.csv_lines(), &raw)?;
        paths.push(p);
        let mut adj = Vec::new();
        log.write_adjusted_csv(&mut adj)?;
        let p = out.join(format!("train_{stem}_adjusted.csv"));
        write_with_header(&p, &header.csv_lines(), &adj)?;
        paths.push(p);
        series.push(Series {
            name: log.loss_kind.to_string(),
            points: log
                .records
                .iter()
                .map(|r| (r.iter as f64, r.divergence_estimate_val))
                .collect(),
        });
    }
    let svg = emit_svg(
        &series,
        &PlotSpec {
            title: "validation divergence estimate".into(),
            x_label: "iteration".into(),
            y_label: "estimate".into(),
            ..PlotSpec::default()
        },
    );
    let p = out.join("divergence_estimates.svg");
    write_with_header(
        &p,
        "",
        format!("{}{}", header.svg_comment(), svg).as_bytes(),
    )?;
    paths.push(p);
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|(_, s)| {
            vec![
                s.loss_kind.to_string(),
                s.spearman.map_or_else(|| "undefined".into(), num),
                num(s.final_estimate),
                s.saturation_fraction.map_or_else(|| "".into(), num),
            ]
        })
        .collect();
    let p = out.join("summary.csv");
    write_csv(
        &p,
        header,
        &[
            "loss_kind",
            "spearman",
            "final_estimate",
            "saturation_fraction",
        ],
        &rows,
    )?;
    paths.push(p);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdiv::FGenerator;
    use crate::neuralgan::OptimizerKind;

    fn delta(kind: LossKind, iterations: usize) -> TrainToyConfig {
        TrainToyConfig {
            dataset: "delta".into(),
            losses: vec![kind],
            train: TrainConfig {
                iterations,
                disc_hidden: vec![16],
                batch_size: 16,
                log_every: 10,
                ..TrainConfig::default()
            },
            ..TrainToyConfig::default()
        }
    }

    #[test]
    fn zero_iterations_plot_a_single_point() {
        let runs = run_train_toy(&delta(LossKind::W1gan, 0)).unwrap();
        assert_eq!(runs[0].0.records.len(), 1);
        assert_eq!(runs[0].1.spearman, None);
        let dir = std::env::temp_dir().join(format!("dualgan-toy-{}", std::process::id()));
        let paths = write_train_toy(&dir, &OutputHeader::new("test", 0), &runs).unwrap();
        let svg = std::fs::read_to_string(
            paths
                .iter()
                .find(|p| p.extension().unwrap() == "svg")
                .unwrap(),
        )
        .unwrap();
        assert!(svg.starts_with("<!-- command: test"));
        assert_eq!(svg.matches("<circle").count(), 1);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn vanilla_saturates_on_separated_deltas() {
        let mut cfg = delta(LossKind::VanillaSigmoid, 300);
        cfg.train.disc_lr = 0.05;
        cfg.train.gen_lr = 1e-3;
        cfg.train.optimizer = OptimizerKind::Adam {
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        };
        let runs = run_train_toy(&cfg).unwrap();
        let frac = runs[0].1.saturation_fraction.unwrap();
        assert!(
            frac >= 0.8,
            "{frac} {:?}",
            runs[0]
                .0
                .records
                .iter()
                .map(|r| r.divergence_estimate_adjusted)
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = delta(LossKind::FganLipschitz(FGenerator::Js), 30);
        let a = run_train_toy(&cfg).unwrap();
        let b = run_train_toy(&cfg).unwrap();
        let csv = |log: &TrainLog| {
            let mut v = Vec::new();
            log.write_csv(&mut v).unwrap();
            v
        };
        assert_eq!(csv(&a[0].0), csv(&b[0].0));
        assert_eq!(a[0].1, b[0].1);
    }

    #[test]
    fn unknown_dataset_is_rejected() {
        let cfg = TrainToyConfig {
            dataset: "mnist".into(),
            ..TrainToyConfig::default()
        };
        assert!(matches!(run_train_toy(&cfg), Err(Error::Parse(_))));
    }
}
