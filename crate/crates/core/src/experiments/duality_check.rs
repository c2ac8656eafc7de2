//! Batch driver for the duality identities on random line instances.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{num, write_csv, OutputHeader};
use crate::dist::{FiniteDistribution, RandomSource, SupportPoint};
use crate::duality::{
    theorem1_check, theorem6_check, theorem8_check, Divergence, FunctionClass, IdentityCheck,
};
use crate::error::{Error, Result};
use crate::fdiv::FGenerator;
use crate::transport::CostFunction;

/// Discriminator class: `zero`, `all`, `span:<degree>` or `lip:<L>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassSpec {
    Zero,
    All,
    Span(usize),
    Lip(f64),
}

impl FromStr for ClassSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Parse(format!(
                "bad class {s:?}; expected zero, all, span:<degree> or lip:<L>"
            ))
        };
        match s {
            "zero" => return Ok(ClassSpec::Zero),
            "all" => return Ok(ClassSpec::All),
            _ => {}
        }
        let (head, arg) = s.split_once(':').ok_or_else(bad)?;
        match head {
            "span" => Ok(ClassSpec::Span(arg.parse().map_err(|_| bad())?)),
            "lip" => {
                let l: f64 = arg.parse().map_err(|_| bad())?;
                if !(l > 0.0 && l.is_finite()) {
                    return Err(bad());
                }
                Ok(ClassSpec::Lip(l))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ClassSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassSpec::Zero => write!(f, "zero"),
            ClassSpec::All => write!(f, "all"),
            ClassSpec::Span(d) => write!(f, "span:{d}"),
            ClassSpec::Lip(l) => write!(f, "lip:{l}"),
        }
    }
}

/// Divergence side: an f-divergence, `w1`/`w2`, or a hybrid `hyb-<f>-w1`/`hyb-<f>-w2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DivSpec {
    F(FGenerator),
    W1,
    W2,
    HybW1(FGenerator),
    HybW2(FGenerator),
}

fn generator(name: &str) -> Result<FGenerator> {
    match name {
        "sh" => Ok(FGenerator::SqHellinger),
        other => FGenerator::from_name(other).map_err(|e| Error::Parse(e.to_string())),
    }
}

impl FromStr for DivSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w1" => return Ok(DivSpec::W1),
            "w2" => return Ok(DivSpec::W2),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("hyb-") {
            if let Some(f) = rest.strip_suffix("-w1") {
                return Ok(DivSpec::HybW1(generator(f)?));
            }
            if let Some(f) = rest.strip_suffix("-w2") {
                return Ok(DivSpec::HybW2(generator(f)?));
            }
            return Err(Error::Parse(format!("bad hybrid divergence {s:?}")));
        }
        Ok(DivSpec::F(generator(s)?))
    }
}

impl fmt::Display for DivSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DivSpec::F(g) => write!(f, "{}", g.name()),
            DivSpec::W1 => write!(f, "w1"),
            DivSpec::W2 => write!(f, "w2"),
            DivSpec::HybW1(g) => write!(f, "hyb-{}-w1", g.name()),
            DivSpec::HybW2(g) => write!(f, "hyb-{}-w2", g.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualityCheckConfig {
    pub divergence: String,
    pub class: String,
    pub trials: usize,
    /// Atoms of the shared support of each instance.
    pub atoms: usize,
    /// Relative tolerance: `|gap| <= tol (1 + |rhs|)`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for DualityCheckConfig {
    fn default() -> Self {
        DualityCheckConfig {
            divergence: "js".into(),
            class: "all".into(),
            trials: 20,
            atoms: 4,
            tol: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityRow {
    pub trial: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub within: bool,
    pub error: Option<String>,
}

/// Two random distributions sharing `atoms` points of `[-1, 1]`.
pub fn random_line_instance(
    atoms: usize,
    rng: &mut RandomSource,
) -> Result<(FiniteDistribution, FiniteDistribution)> {
    let mut xs: Vec<f64> = (0..atoms).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    xs.sort_by(f64::total_cmp);
    let pts: Vec<SupportPoint> = xs.iter().map(|&x| SupportPoint::scalar(x)).collect();
    let mut weights = || {
        (0..atoms)
            .map(|_| rng.uniform_range(0.05, 1.0))
            .collect::<Vec<f64>>()
    };
    let (a, b) = (weights(), weights());
    Ok((
        FiniteDistribution::normalized(pts.clone(), a)?,
        FiniteDistribution::normalized(pts, b)?,
    ))
}

fn check(
    div: DivSpec,
    class: ClassSpec,
    p1: &FiniteDistribution,
    px: &FiniteDistribution,
) -> Result<IdentityCheck> {
    let class_of = |class: ClassSpec| match class {
        ClassSpec::Zero => FunctionClass::zero(),
        ClassSpec::All => FunctionClass::AllFunctions,
        ClassSpec::Span(d) => {
            let support =
                crate::dist::Support::union(&[p1.support(), px.support()]).expect("same dimension");
            FunctionClass::polynomial(&support, d)
        }
        ClassSpec::Lip(l) => FunctionClass::LipschitzBall(l),
    };
    match div {
        DivSpec::F(f) => theorem1_check(p1, px, &class_of(class), &Divergence::F(f)),
        DivSpec::W1 => theorem1_check(
            p1,
            px,
            &class_of(class),
            &Divergence::Ot(CostFunction::Norm),
        ),
        DivSpec::W2 => theorem1_check(
            p1,
            px,
            &class_of(class),
            &Divergence::Ot(CostFunction::NormSquared),
        ),
        DivSpec::HybW1(f) => match class {
            ClassSpec::Lip(l) => theorem6_check(p1, px, f, l),
            _ => Err(Error::Parse("hybrid W1 checks need a lip:<L> class".into())),
        },
        DivSpec::HybW2(f) => match class {
            ClassSpec::All => theorem8_check(p1, px, f, None),
            _ => Err(Error::Parse(
                "hybrid W2 checks run over all functions; use --class all".into(),
            )),
        },
    }
}

/// One row per trial. Configuration errors are returned; per-trial solver
/// failures are recorded in the row and count as violations.
pub fn run_duality_check(cfg: &DualityCheckConfig) -> Result<Vec<DualityRow>> {
    let div: DivSpec = cfg.divergence.parse()?;
    let class: ClassSpec = cfg.class.parse()?;
    if cfg.atoms < 2 {
        return Err(Error::Parse("instances need at least two atoms".into()));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::Parse("tolerance must be positive".into()));
    }
    let fits = match div {
        DivSpec::HybW1(_) => matches!(class, ClassSpec::Lip(_)),
        DivSpec::HybW2(_) => class == ClassSpec::All,
        _ => true,
    };
    if !fits {
        return Err(Error::Parse(format!(
            "class {class} does not apply to {div}"
        )));
    }
    (0..cfg.trials)
        .map(|trial| {
            let mut rng = RandomSource::stream(cfg.seed, trial as u64);
            let (p1, px) = random_line_instance(cfg.atoms, &mut rng)?;
            Ok(match check(div, class, &p1, &px) {
                Ok(c) => DualityRow {
                    trial,
                    lhs: c.lhs,
                    rhs: c.rhs,
                    gap: c.gap,
                    within: c.within(cfg.tol),
                    error: None,
                },
                Err(e) => DualityRow {
                    trial,
                    lhs: f64::NAN,
                    rhs: f64::NAN,
                    gap: f64::NAN,
                    within: false,
                    error: Some(e.to_string()),
                },
            })
        })
        .collect()
}

/// Writes `trial,lhs,rhs,gap,within`.
pub fn write_duality_csv(
    path: &std::path::Path,
    header: &OutputHeader,
    rows: &[DualityRow],
) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.trial.to_string(),
                num(r.lhs),
                num(r.rhs),
                num(r.gap),
                r.within.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        header,
        &["trial", "lhs", "rhs", "gap", "within"],
        &body,
    )
}
