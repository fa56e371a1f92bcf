//! Black-box objectives and evaluation bookkeeping. Everything is minimized.

pub mod benchmarks;
pub mod external;
pub mod metrics;
pub mod mlp;
pub mod runlog;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::space::{Configuration, SearchSpace};

pub use external::{ExternalObjective, Request, Response, ResponseStatus, DEFAULT_TIMEOUT};
pub use metrics::{metrics, Metrics};
pub use mlp::{eval_mlp_synth, mlp_synth_space, MlpConfig, REFERENCE_CONFIG, REFERENCE_ERROR};

pub const BUILTINS: [&str; 5] = ["sphere", "branin", "hartmann6", "rastrigin", "mlp_synth"];

/// Result of one true evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ok(f64),
    Failed(String),
}

pub trait Objective {
    fn evaluate(&mut self, config: &Configuration) -> Outcome;
}

/// Adapts a closure into an [`Objective`].
pub struct FnObjective<F>(pub F);

impl<F: FnMut(&Configuration) -> Outcome> Objective for FnObjective<F> {
    fn evaluate(&mut self, config: &Configuration) -> Outcome {
        (self.0)(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub index: usize,
    pub unit: Vec<f64>,
    pub raw: Vec<f64>,
    pub value: Option<f64>,
    pub status: Status,
    pub wall_ms: f64,
    pub generation: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl EvaluationRecord {
    /// Objective value if the evaluation succeeded.
    pub fn ok_value(&self) -> Option<f64> {
        match self.status {
            Status::Ok => self.value,
            Status::Failed => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectiveSpec {
    Builtin { name: String },
    External { command: String, timeout_ms: u64 },
}

impl ObjectiveSpec {
    /// `cmd:<command line>` selects an external worker, anything else a builtin.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("cmd:") {
            if cmd.trim().is_empty() {
                return Err(arg("external objective needs a command after `cmd:`"));
            }
            return Ok(ObjectiveSpec::External {
                command: cmd.to_string(),
                timeout_ms: DEFAULT_TIMEOUT.as_millis() as u64,
            });
        }
        if !BUILTINS.contains(&s) {
            return Err(arg(format!(
                "unknown objective `{s}` (expected one of {} or cmd:<command>)",
                BUILTINS.join(", ")
            )));
        }
        Ok(ObjectiveSpec::Builtin { name: s.to_string() })
    }

    pub fn with_timeout(self, timeout: Duration) -> Self {
        match self {
            ObjectiveSpec::External { command, .. } => ObjectiveSpec::External {
                command,
                timeout_ms: timeout.as_millis() as u64,
            },
            b => b,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ObjectiveSpec::Builtin { name } => name.clone(),
            ObjectiveSpec::External { command, .. } => format!("cmd:{command}"),
        }
    }

    pub fn build(&self, space: &SearchSpace) -> Result<Box<dyn Objective>> {
        match self {
            ObjectiveSpec::Builtin { name } => Ok(Box::new(Builtin::new(name, space.dim())?)),
            ObjectiveSpec::External { command, timeout_ms } => Ok(Box::new(ExternalObjective::spawn(
                command,
                space.clone(),
                Duration::from_millis(*timeout_ms),
            )?)),
        }
    }
}

fn check_dim(name: &str, dim: usize) -> Result<()> {
    let want = match name {
        "branin" => Some(2),
        "hartmann6" => Some(6),
        "mlp_synth" => Some(5),
        "sphere" | "rastrigin" => None,
        _ => return Err(arg(format!("unknown builtin objective `{name}`"))),
    };
    match want {
        Some(w) if w != dim => Err(arg(format!("`{name}` is {w}-dimensional, got {dim}"))),
        _ if dim == 0 => Err(arg("objective dimension must be ≥ 1")),
        _ => Ok(()),
    }
}

/// Evaluate a builtin at a unit-cube point. The synthetic classifier is
/// mapped through its canonical space and trained on the default data seed.
pub fn eval_builtin(name: &str, unit: &[f64]) -> Result<Outcome> {
    check_dim(name, unit.len())?;
    if unit.iter().any(|u| !(0.0..=1.0).contains(u)) {
        return Err(arg("builtin objectives take points in the unit cube"));
    }
    Ok(match name {
        "sphere" => Outcome::Ok(benchmarks::sphere(unit)),
        "branin" => Outcome::Ok(benchmarks::branin(unit)),
        "hartmann6" => Outcome::Ok(benchmarks::hartmann6(unit)),
        "rastrigin" => Outcome::Ok(benchmarks::rastrigin(unit)),
        _ => {
            let raw = mlp_synth_space().denormalize(unit)?;
            eval_mlp_synth(&raw, mlp::DATA_SEED)?
        }
    })
}

/// A registered in-process objective.
#[derive(Debug, Clone)]
pub struct Builtin {
    name: String,
    seed: u64,
}

impl Builtin {
    pub fn new(name: &str, dim: usize) -> Result<Self> {
        check_dim(name, dim)?;
        Ok(Builtin {
            name: name.to_string(),
            seed: mlp::DATA_SEED,
        })
    }

    /// Use a different dataset for `mlp_synth`.
    pub fn with_data_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

impl Objective for Builtin {
    fn evaluate(&mut self, config: &Configuration) -> Outcome {
        // mlp_synth reads raw values so user space files may narrow its ranges
        let res = if self.name == "mlp_synth" {
            eval_mlp_synth(&config.raw, self.seed)
        } else {
            eval_builtin(&self.name, &config.unit)
        };
        res.unwrap_or_else(|e| Outcome::Failed(e.to_string()))
    }
}
