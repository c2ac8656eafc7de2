//! `dualgan`: divergence computations and reproducible experiment drivers.
//!
//! Exit status is 0 when every check holds, 1 on a tolerance violation or
//! solver failure, and 2 on a usage or configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use dualgan::dist::{read_distribution_csv, read_points_csv};
use dualgan::experiments::continuity::{max_jump_excess, write_continuity_csv};
use dualgan::experiments::duality_check::write_duality_csv;
use dualgan::experiments::lqg::write_lqg_csv;
use dualgan::experiments::mixture::{slope_text, write_mixture_csv};
use dualgan::experiments::toy::write_train_toy;
use dualgan::experiments::{
    continuity_scan, emit_svg, num, run_duality_check, run_lqg_pca, run_mixture_scaling,
    run_train_toy, write_csv, write_with_header, ContinuityConfig, DualityCheckConfig, LqgConfig,
    MixtureScalingConfig, OutputHeader, PlotSpec, Series, TrainToyConfig,
};
use dualgan::fdiv::{f_divergence, js_divergence, FGenerator};
use dualgan::hybrid::{hybrid_divergence, HybridSpec};
use dualgan::neuralgan::LossKind;
use dualgan::transport::{ot_primal, tv_distance, CostFunction};
use dualgan::{Error, FiniteDistribution, Support};

#[derive(Parser)]
#[command(
    name = "dualgan",
    version,
    about = "Divergences, duality checks and toy GAN experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one divergence between two distribution CSV files.
    Divergence(DivergenceArgs),
    /// Check a duality identity on random instances.
    DualityCheck(DualityArgs),
    /// Scan JS and the hybrid divergences along a generator family.
    ContinuityScan(ContinuityArgs),
    /// Train toy GANs with several loss heads.
    TrainToy(TrainToyArgs),
    /// Sup-error of sampled mixtures against the number of members.
    MixtureScaling(MixtureArgs),
    /// Fit a linear generator to a Gaussian under W2 and compare with PCA.
    LqgPca(LqgArgs),
}

#[derive(Args)]
struct Common {
    /// JSON configuration; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DivergenceConfig {
    kind: String,
    p: Option<PathBuf>,
    q: Option<PathBuf>,
    tol: f64,
    candidate_grid: Option<PathBuf>,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        DivergenceConfig {
            kind: "w1".into(),
            p: None,
            q: None,
            tol: dualgan::hybrid::DEFAULT_TOL,
            candidate_grid: None,
        }
    }
}

#[derive(Args)]
struct DivergenceArgs {
    #[command(flatten)]
    common: Common,
    /// w1, w2, tv, js, kl, sqhellinger, or hyb-<js|sh|sqhellinger|kl>-<w1|w2>.
    #[arg(long)]
    kind: Option<String>,
    /// First distribution (`w,x1,...,xk`).
    #[arg(long)]
    p: Option<PathBuf>,
    /// Second distribution.
    #[arg(long)]
    q: Option<PathBuf>,
    /// Frank-Wolfe tolerance for hybrid kinds.
    #[arg(long)]
    tol: Option<f64>,
    /// Candidate support for the intermediate law (`x1,...,xk`).
    #[arg(long)]
    candidate_grid: Option<PathBuf>,
}

#[derive(Args)]
struct DualityArgs {
    #[command(flatten)]
    common: Common,
    /// js, kl, sqhellinger, w1, w2, hyb-<f>-w1 or hyb-<f>-w2.
    #[arg(long)]
    divergence: Option<String>,
    /// zero, all, span:<degree> or lip:<L>.
    #[arg(long)]
    class: Option<String>,
    /// Random instances to check.
    #[arg(long)]
    trials: Option<usize>,
    /// Atoms per random instance.
    #[arg(long)]
    atoms: Option<usize>,
    /// Gap tolerance, scaled by `1 + |rhs|`.
    #[arg(long)]
    tol: Option<f64>,
    /// Base seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ContinuityArgs {
    #[command(flatten)]
    common: Common,
    /// shift or scale.
    #[arg(long)]
    family: Option<String>,
    /// Noise atoms, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    noise: Option<Vec<f64>>,
    /// Reference atoms, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    reference: Option<Vec<f64>>,
    /// Lower end of the parameter grid.
    #[arg(long, allow_hyphen_values = true)]
    theta_min: Option<f64>,
    /// Upper end of the parameter grid.
    #[arg(long, allow_hyphen_values = true)]
    theta_max: Option<f64>,
    /// Number of grid points.
    #[arg(long)]
    points: Option<usize>,
    /// Frank-Wolfe tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Base seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainToyArgs {
    #[command(flatten)]
    common: Common,
    /// ring8 or delta.
    #[arg(long)]
    dataset: Option<String>,
    /// Loss heads, comma separated (vanilla-sigmoid, fgan:js, w1gan, fgan-lipschitz:js, fgan-wrm:js).
    #[arg(long, value_delimiter = ',')]
    loss: Option<Vec<LossKind>>,
    /// Generator updates per run.
    #[arg(long)]
    iterations: Option<usize>,
    /// Log every this many generator updates.
    #[arg(long)]
    log_every: Option<usize>,
    /// Base seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MixtureArgs {
    #[command(flatten)]
    common: Common,
    /// two-constant, single or mlp:<n>.
    #[arg(long)]
    family: Option<String>,
    /// Member counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    /// Draws per member count.
    #[arg(long)]
    repetitions: Option<usize>,
    /// Base seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LqgArgs {
    #[command(flatten)]
    common: Common,
    /// Data dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Row-major covariance, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    covariance: Option<Vec<f64>>,
    /// Noise dimension.
    #[arg(long)]
    r: Option<usize>,
    /// Target atom count of each quantile grid.
    #[arg(long)]
    grid_atoms: Option<usize>,
    /// Base seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Fail with status 1 when the alignment is below this value.
    #[arg(long)]
    min_alignment: Option<f64>,
}

/// Outcome of a subcommand that ran to completion.
enum Outcome {
    Pass,
    Violation(String),
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Error> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// The invocation as typed, with the program name normalised.
fn command_line() -> String {
    std::iter::once("dualgan".to_string())
        .chain(std::env::args().skip(1))
        .collect::<Vec<_>>()
        .join(" ")
}

fn read_dist(path: Option<&Path>, name: &str) -> Result<FiniteDistribution, Error> {
    let p = path.ok_or_else(|| usage(format!("--{name} is required")))?;
    let f = fs::File::open(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    read_distribution_csv(f)
}

fn read_points(path: &Path) -> Result<Support, Error> {
    let f = fs::File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    read_points_csv(f)
}

fn hybrid_kind(kind: &str) -> Option<(&str, CostFunction)> {
    let rest = kind.strip_prefix("hyb-")?;
    if let Some(f) = rest.strip_suffix("-w1") {
        Some((f, CostFunction::Norm))
    } else {
        rest.strip_suffix("-w2")
            .map(|f| (f, CostFunction::NormSquared))
    }
}

fn run_divergence(a: DivergenceArgs) -> Result<Outcome, Error> {
    let mut cfg: DivergenceConfig = load(a.common.config.as_deref())?;
    set(&mut cfg.kind, a.kind);
    set(&mut cfg.tol, a.tol);
    cfg.p = a.p.or(cfg.p);
    cfg.q = a.q.or(cfg.q);
    cfg.candidate_grid = a.candidate_grid.or(cfg.candidate_grid);
    let p = read_dist(cfg.p.as_deref(), "p")?;
    let q = read_dist(cfg.q.as_deref(), "q")?;
    let header = OutputHeader::new(command_line(), 0);
    let out = &a.common.out;

    let plan_rows = |plan: &dualgan::Coupling| -> Vec<Vec<String>> {
        let (n, m) = (plan.rows().len(), plan.cols().len());
        (0..n)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .filter(|&(i, j)| plan.get(i, j) > 0.0)
            .map(|(i, j)| vec![i.to_string(), j.to_string(), num(plan.get(i, j))])
            .collect()
    };
    let mut row = vec![cfg.kind.clone()];
    let kind = cfg.kind.as_str();
    match kind {
        "w1" | "w2" => {
            let cost = if kind == "w1" {
                CostFunction::Norm
            } else {
                CostFunction::NormSquared
            };
            let r = ot_primal(&p, &q, &cost)?;
            let value = if kind == "w1" {
                r.value
            } else {
                r.value.max(0.0).sqrt()
            };
            println!("value={}", num(value));
            write_csv(
                &out.join("plan.csv"),
                &header,
                &["i", "j", "mass"],
                &plan_rows(&r.plan),
            )?;
            row.extend([num(value), String::new(), String::new()]);
        }
        "tv" | "js" | "kl" | "sqhellinger" => {
            let value = match kind {
                "tv" => tv_distance(&p, &q)?,
                "js" => js_divergence(&p, &q)?,
                other => f_divergence(&p, &q, FGenerator::from_name(other)?)?,
            };
            println!("value={}", num(value));
            row.extend([num(value), String::new(), String::new()]);
        }
        _ => {
            let (fname, cost) =
                hybrid_kind(kind).ok_or_else(|| usage(format!("unknown kind {kind:?}")))?;
            let f = if fname == "sh" {
                FGenerator::SqHellinger
            } else {
                FGenerator::from_name(fname).map_err(|e| usage(e.to_string()))?
            };
            let mut spec = HybridSpec::new(f, cost).with_tol(cfg.tol);
            if let Some(g) = &cfg.candidate_grid {
                let union = Support::union(&[p.support(), q.support(), &read_points(g)?])?;
                spec = spec.with_candidate(union);
            }
            let r = hybrid_divergence(&p, &q, &spec)?;
            let dual = r.dual_lower_bound.map_or_else(String::new, num);
            println!("value={}", num(r.value));
            println!("fw_gap={}", num(r.fw_gap));
            println!(
                "dual_lower_bound={}",
                if dual.is_empty() {
                    "unavailable"
                } else {
                    &dual
                }
            );
            write_csv(
                &out.join("plan.csv"),
                &header,
                &["i", "j", "mass"],
                &plan_rows(&r.transport_plan),
            )?;
            row.extend([num(r.value), num(r.fw_gap), dual]);
        }
    }
    write_csv(
        &out.join("divergence.csv"),
        &header,
        &["kind", "value", "fw_gap", "dual_lower_bound"],
        &[row],
    )?;
    Ok(Outcome::Pass)
}

fn run_duality(a: DualityArgs) -> Result<Outcome, Error> {
    let mut cfg: DualityCheckConfig = load(a.common.config.as_deref())?;
    set(&mut cfg.divergence, a.divergence);
    set(&mut cfg.class, a.class);
    set(&mut cfg.trials, a.trials);
    set(&mut cfg.atoms, a.atoms);
    set(&mut cfg.tol, a.tol);
    set(&mut cfg.seed, a.seed);
    let rows = run_duality_check(&cfg)?;
    let header = OutputHeader::new(command_line(), cfg.seed);
    write_duality_csv(&a.common.out.join("duality_check.csv"), &header, &rows)?;
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "trial {}: {}",
            r.trial,
            r.error.as_deref().unwrap_or_default()
        );
    }
    let bad = rows.iter().filter(|r| !r.within).count();
    let worst = rows.iter().map(|r| r.gap.abs()).fold(0.0, f64::max);
    println!(
        "{} of {} trials within tolerance; max |gap| = {}",
        rows.len() - bad,
        rows.len(),
        num(worst)
    );
    Ok(if bad == 0 {
        Outcome::Pass
    } else {
        Outcome::Violation(format!("{bad} trials outside tolerance {}", num(cfg.tol)))
    })
}

fn run_continuity(a: ContinuityArgs) -> Result<Outcome, Error> {
    let mut cfg: ContinuityConfig = load(a.common.config.as_deref())?;
    set(&mut cfg.family, a.family);
    set(&mut cfg.noise, a.noise);
    set(&mut cfg.reference, a.reference);
    set(&mut cfg.theta_min, a.theta_min);
    set(&mut cfg.theta_max, a.theta_max);
    set(&mut cfg.points, a.points);
    set(&mut cfg.tol, a.tol);
    set(&mut cfg.seed, a.seed);
    let rows = continuity_scan(&cfg)?;
    let header = OutputHeader::new(command_line(), cfg.seed);
    let out = &a.common.out;
    write_continuity_csv(&out.join("continuity.csv"), &header, &rows)?;
    let series = |name: &str, get: fn(&dualgan::experiments::ContinuityRow) -> f64| Series {
        name: name.into(),
        points: rows.iter().map(|r| (r.theta, get(r))).collect(),
    };
    let svg = emit_svg(
        &[
            series("js (bits)", |r| r.js),
            series("djsw1", |r| r.djsw1),
            series("djsw2", |r| r.djsw2),
            series("w1", |r| r.w1),
        ],
        &PlotSpec {
            title: format!("{} family", cfg.family),
            x_label: "theta".into(),
            y_label: "divergence".into(),
            ..PlotSpec::default()
        },
    );
    write_with_header(
        &out.join("continuity.svg"),
        &header.svg_comment(),
        svg.as_bytes(),
    )?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    let excess = max_jump_excess(&rows);
    println!("max adjacent djsw1 jump excess = {}", num(excess));
    Ok(if failed > 0 {
        Outcome::Violation(format!("{failed} grid points had solver failures"))
    } else if excess > 2.0 * cfg.tol {
        Outcome::Violation(format!(
            "adjacent jump exceeds the step distance by {}",
            num(excess)
        ))
    } else {
        Outcome::Pass
    })
}

fn run_toy(a: TrainToyArgs) -> Result<Outcome, Error> {
    let mut cfg: TrainToyConfig = load(a.common.config.as_deref())?;
    set(&mut cfg.dataset, a.dataset);
    set(&mut cfg.losses, a.loss);
    set(&mut cfg.train.iterations, a.iterations);
    set(&mut cfg.train.log_every, a.log_every);
    set(&mut cfg.train.seed, a.seed);
    let runs = run_train_toy(&cfg)?;
    let header = OutputHeader::new(command_line(), cfg.train.seed);
    write_train_toy(&a.common.out, &header, &runs)?;
    for (_, s) in &runs {
        let sat = s
            .saturation_fraction
            .map_or_else(String::new, |f| format!(" saturated={}", num(f)));
        println!(
            "{} spearman={} final={}{sat}",
            s.loss_kind,
            s.spearman.map_or_else(|| "undefined".into(), num),
            num(s.final_estimate)
        );
    }
    Ok(Outcome::Pass)
}

fn run_mixture(a: MixtureArgs) -> Result<Outcome, Error> {
    let mut cfg: MixtureScalingConfig = load(a.common.config.as_deref())?;
    set(&mut cfg.family, a.family);
    set(&mut cfg.ms, a.m);
    set(&mut cfg.repetitions, a.repetitions);
    set(&mut cfg.seed, a.seed);
    let report = run_mixture_scaling(&cfg)?;
    let header = OutputHeader::new(command_line(), cfg.seed);
    let out = &a.common.out;
    write_mixture_csv(&out.join("mixture_scaling.csv"), &header, &report)?;
    let svg = emit_svg(
        &[Series {
            name: "log10 median".into(),
            points: report
                .rows
                .iter()
                .map(|r| ((r.m as f64).log10(), r.median.log10()))
                .collect(),
        }],
        &PlotSpec {
            title: format!("{} mixture error", cfg.family),
            x_label: "log10 m".into(),
            y_label: "log10 sup-error".into(),
            scatter: true,
            ..PlotSpec::default()
        },
    );
    write_with_header(
        &out.join("mixture_scaling.svg"),
        &header.svg_comment(),
        svg.as_bytes(),
    )?;
    println!("slope={}", slope_text(report.slope));
    Ok(Outcome::Pass)
}

fn run_lqg(a: LqgArgs) -> Result<Outcome, Error> {
    let mut cfg: LqgConfig = load(a.common.config.as_deref())?;
    set(&mut cfg.dim, a.dim);
    let explicit_cov = a.covariance.is_some();
    set(&mut cfg.covariance, a.covariance);
    set(&mut cfg.r, a.r);
    set(&mut cfg.grid_atoms, a.grid_atoms);
    set(&mut cfg.seed, a.seed);
    // A new dimension without a matching covariance falls back to the identity.
    if a.dim.is_some() && !explicit_cov && cfg.covariance.len() != cfg.dim * cfg.dim {
        cfg.covariance = Vec::new();
    }
    let report = run_lqg_pca(&cfg)?;
    let header = OutputHeader::new(command_line(), cfg.seed);
    write_lqg_csv(&a.common.out.join("lqg_pca.csv"), &header, &report)?;
    println!("alignment={}", num(report.alignment));
    println!("w2sq={}", num(report.objective));
    if !report.converged {
        println!("optimizer stalled before reaching tolerance");
    }
    Ok(match a.min_alignment {
        Some(t) if !(report.alignment >= t) => {
            Outcome::Violation(format!("alignment {} below {t}", num(report.alignment)))
        }
        _ => Outcome::Pass,
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse(_) | Error::Invariant(_) | Error::Domain(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Divergence(a) => run_divergence(a),
        Command::DualityCheck(a) => run_duality(a),
        Command::ContinuityScan(a) => run_continuity(a),
        Command::TrainToy(a) => run_toy(a),
        Command::MixtureScaling(a) => run_mixture(a),
        Command::LqgPca(a) => run_lqg(a),
    };
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Violation(msg)) => {
            eprintln!("tolerance violation: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
