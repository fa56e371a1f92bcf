//! The outer optimization loop and its baselines.
//!
//! A run evaluates an LHS design of `n0` points, then spends the rest of the
//! budget one evaluation per generation: (re)fit the surrogate, pick parents
//! by grid selection, mutate, score offspring on the surrogate, evaluate the
//! winner and move the anchor to the incumbent.
//!
//! Every random draw is keyed by `(seed, generation)`, so a run can be
//! resumed from its history alone and continues exactly as if it had never
//! stopped.

use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionKind, AcquisitionSpec, DEFAULT_UCB_WEIGHT};
use crate::error::{arg, Result};
use crate::es::{self, EsConfig, Parent};
use crate::exec::Exec;
use crate::fanova;
use crate::gp::{self, FitOptions, GpModel, KernelKind, KernelParams, Targets};
use crate::objective::{EvaluationRecord, Objective, Outcome, Status};
use crate::rng::{self, Purpose};
use crate::space::{lhs_unit, Configuration, SearchSpace};

/// Grid resolution of the per-generation importance estimate.
pub const IMPORTANCE_GRID: usize = 20;
/// Re-mutation attempts before a duplicate proposal is replaced.
pub const DEDUP_ATTEMPTS: usize = 10;
pub const DEDUP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Houses,
    GpStationary,
    Random,
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "houses" => Ok(Strategy::Houses),
            "gp" | "gp_stationary" => Ok(Strategy::GpStationary),
            "random" => Ok(Strategy::Random),
            _ => Err(format!("unknown strategy `{s}` (expected houses, gp or random)")),
        }
    }
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Houses => "houses",
            Strategy::GpStationary => "gp",
            Strategy::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n0: usize,
    pub budget: usize,
    pub strategy: Strategy,
    /// Surrogate kernel of the `houses` strategy; `gp_stationary` always
    /// uses the ARD kernel.
    pub kernel: KernelKind,
    pub acquisition: AcquisitionKind,
    pub ucb_w: f64,
    pub es: EsConfig,
    pub seed: u64,
    /// Hyperparameters are re-optimized every this many generations and
    /// reused (with the current anchor) in between.
    pub refit_every: usize,
    pub fit_starts: usize,
}

impl RunConfig {
    pub fn default_n0(dim: usize) -> usize {
        (2 * dim).max(10)
    }

    /// Defaults for a `dim`-dimensional space. `n0` is capped at the budget.
    pub fn new(dim: usize, budget: usize, strategy: Strategy, seed: u64) -> Self {
        RunConfig {
            n0: Self::default_n0(dim).min(budget).max(2),
            budget,
            strategy,
            kernel: KernelKind::Houses,
            acquisition: AcquisitionKind::Ucb,
            ucb_w: DEFAULT_UCB_WEIGHT,
            es: EsConfig::default(),
            seed,
            refit_every: 5,
            fit_starts: 8,
        }
    }

    /// Kernel actually used by the surrogate.
    pub fn surrogate_kernel(&self) -> KernelKind {
        match self.strategy {
            Strategy::GpStationary => KernelKind::ArdSe,
            _ => self.kernel,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n0 < 2 {
            return Err(arg(format!("n0 must be ≥ 2, got {}", self.n0)));
        }
        if self.budget < self.n0 {
            return Err(arg(format!("budget {} is smaller than n0 {}", self.budget, self.n0)));
        }
        if self.refit_every == 0 || self.fit_starts == 0 {
            return Err(arg("refit_every and fit_starts must be ≥ 1"));
        }
        AcquisitionSpec::new(self.acquisition, self.ucb_w, 0.0)?;
        self.es.validate(dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub config: Configuration,
    pub value: f64,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub history: Vec<EvaluationRecord>,
    pub best: Option<Incumbent>,
    pub anchor: Option<Vec<f64>>,
    pub generation: usize,
    /// Most recently fitted kernel hyperparameters.
    pub params: Option<KernelParams>,
}

impl RunState {
    fn new() -> Self {
        RunState {
            history: Vec::new(),
            best: None,
            anchor: None,
            generation: 0,
            params: None,
        }
    }

    /// Best value after each evaluation; `+∞` until the first success.
    pub fn best_trace(&self) -> Vec<f64> {
        best_trace(&self.history)
    }

    fn push(&mut self, record: EvaluationRecord) {
        if let Some(v) = record.ok_value() {
            if self.best.as_ref().map_or(true, |b| v < b.value) {
                self.best = Some(Incumbent {
                    config: Configuration {
                        unit: record.unit.clone(),
                        raw: record.raw.clone(),
                    },
                    value: v,
                    index: record.index,
                });
            }
        }
        self.history.push(record);
    }
}

pub fn best_trace(history: &[EvaluationRecord]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    history
        .iter()
        .map(|r| {
            if let Some(v) = r.ok_value() {
                best = best.min(v);
            }
            best
        })
        .collect()
}

/// Unit vector of the incumbent; ties go to the earliest evaluation.
pub fn update_anchor(history: &[EvaluationRecord]) -> Option<Vec<f64>> {
    let mut best: Option<(&EvaluationRecord, f64)> = None;
    for r in history {
        if let Some(v) = r.ok_value() {
            if best.map_or(true, |(_, b)| v < b) {
                best = Some((r, v));
            }
        }
    }
    best.map(|(r, _)| r.unit.clone())
}

/// Callback receiving every record as soon as it exists (e.g. a run log).
pub type Sink<'a> = dyn FnMut(&EvaluationRecord) -> Result<()> + 'a;

pub fn run(space: &SearchSpace, objective: &mut dyn Objective, config: &RunConfig) -> Result<RunState> {
    run_from(space, objective, config, Vec::new(), &mut |_| Ok(()), Exec::default())
}

pub fn run_random(space: &SearchSpace, objective: &mut dyn Objective, budget: usize, seed: u64) -> Result<RunState> {
    let mut config = RunConfig::new(space.dim(), budget.max(2), Strategy::Random, seed);
    config.budget = budget;
    config.n0 = budget.min(config.n0);
    run_from(space, objective, &config, Vec::new(), &mut |_| Ok(()), Exec::default())
}

fn random_point(dim: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, Purpose::Random, index);
    (0..dim).map(|_| rng.gen()).collect()
}

/// Continue a run whose first `history.len()` evaluations already happened.
/// An empty history starts a fresh run.
pub fn run_from(
    space: &SearchSpace,
    objective: &mut dyn Objective,
    config: &RunConfig,
    history: Vec<EvaluationRecord>,
    sink: &mut Sink<'_>,
    exec: Exec,
) -> Result<RunState> {
    let dim = space.dim();
    if config.strategy == Strategy::Random {
        if config.budget == 0 {
            return Err(arg("budget must be ≥ 1"));
        }
    } else {
        config.validate(dim)?;
    }
    if history.len() > config.budget {
        return Err(arg(format!(
            "history has {} records but the budget is {}",
            history.len(),
            config.budget
        )));
    }
    let mut state = RunState::new();
    let resumed = history.len();
    for r in history {
        state.push(r);
    }
    let driver = Driver {
        space,
        config,
        exec,
        kind: config.surrogate_kernel(),
    };
    // rebuild the hyperparameter chain the original run went through
    if config.strategy != Strategy::Random && resumed > config.n0 {
        for g in 0..resumed - config.n0 {
            if g % config.refit_every == 0 {
                let prefix = &state.history[..config.n0 + g];
                state.params = driver.refit(prefix, state.params.clone(), g)?;
            }
        }
    }
    state.generation = resumed.saturating_sub(config.n0);
    state.anchor = update_anchor(&state.history);

    let initial = if config.strategy == Strategy::Random {
        Vec::new()
    } else {
        lhs_unit(dim, config.n0, config.seed)?
    };
    while state.history.len() < config.budget {
        let index = state.history.len();
        let (unit, generation) = if config.strategy == Strategy::Random {
            (random_point(dim, config.seed, index as u64), 0)
        } else if index < config.n0 {
            (initial[index].clone(), 0)
        } else {
            let g = index - config.n0;
            if g % config.refit_every == 0 {
                state.params = driver.refit(&state.history, state.params.clone(), g)?;
            }
            (driver.propose(&state, g)?, g + 1)
        };
        let record = evaluate(space, objective, unit, index, generation)?;
        sink(&record)?;
        state.push(record);
        state.generation = state.history.len().saturating_sub(config.n0);
        state.anchor = update_anchor(&state.history);
    }
    Ok(state)
}

fn evaluate(
    space: &SearchSpace,
    objective: &mut dyn Objective,
    unit: Vec<f64>,
    index: usize,
    generation: usize,
) -> Result<EvaluationRecord> {
    let config = space.configuration(unit)?;
    let start = Instant::now();
    let outcome = objective.evaluate(&config);
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let (value, status, reason) = match outcome {
        Outcome::Ok(v) if v.is_finite() => (Some(v), Status::Ok, None),
        Outcome::Ok(v) => (None, Status::Failed, Some(format!("non-finite objective {v}"))),
        Outcome::Failed(r) => (None, Status::Failed, Some(r)),
    };
    Ok(EvaluationRecord {
        index,
        unit: config.unit,
        raw: config.raw,
        value,
        status,
        wall_ms,
        generation,
        reason,
    })
}

fn training_set(history: &[EvaluationRecord]) -> (Vec<Vec<f64>>, Vec<f64>) {
    history
        .iter()
        .filter_map(|r| r.ok_value().map(|v| (r.unit.clone(), v)))
        .unzip()
}

struct Driver<'a> {
    space: &'a SearchSpace,
    config: &'a RunConfig,
    exec: Exec,
    kind: KernelKind,
}

impl Driver<'_> {
    fn anchor_for(&self, history: &[EvaluationRecord]) -> Option<Vec<f64>> {
        if self.kind.needs_anchor() {
            update_anchor(history)
        } else {
            None
        }
    }

    fn refit(
        &self,
        history: &[EvaluationRecord],
        warm: Option<KernelParams>,
        g: usize,
    ) -> Result<Option<KernelParams>> {
        let (x, y) = training_set(history);
        if x.len() < 2 {
            return Ok(warm);
        }
        let opts = FitOptions {
            starts: self.config.fit_starts,
            warm_start: warm.clone(),
            targets: Targets::Standardized,
            seed: self.config.seed,
            stream: g as u64,
            ..FitOptions::default()
        };
        match gp::fit_with(x, y, self.kind, self.anchor_for(history), &opts) {
            Ok(model) => Ok(Some(model.params().clone())),
            Err(e) => {
                log::warn!("generation {g}: surrogate fit failed ({e}); keeping previous hyperparameters");
                Ok(warm)
            }
        }
    }

    fn model(&self, history: &[EvaluationRecord], params: &KernelParams) -> Option<GpModel> {
        let (x, y) = training_set(history);
        if x.len() < 2 {
            return None;
        }
        GpModel::new(x, y, params.clone(), self.anchor_for(history), Targets::Standardized).ok()
    }

    fn propose(&self, state: &RunState, g: usize) -> Result<Vec<f64>> {
        let dim = self.space.dim();
        let seed = self.config.seed;
        let model = state.params.as_ref().and_then(|p| self.model(&state.history, p));
        let Some(model) = model else {
            // nothing to model yet (e.g. every evaluation failed)
            return Ok(self.dedup(random_point(dim, seed, g as u64 + (1 << 32)), state, g));
        };
        let importance = if model.len() >= 2 * dim {
            fanova::gp_importance(&model, IMPORTANCE_GRID)
                .map(|r| r.importances)
                .unwrap_or_else(|_| vec![1.0 / dim as f64; dim])
        } else {
            vec![1.0 / dim as f64; dim]
        };
        let parents: Vec<Parent> = model
            .train_x()
            .iter()
            .zip(model.train_y())
            .map(|(u, &v)| Parent { unit: u.clone(), value: v })
            .collect();
        let parents = es::grid_select(&parents, self.config.es.grids)?;
        let f_best = model.train_y().iter().copied().fold(f64::INFINITY, f64::min);
        let spec = AcquisitionSpec::new(self.config.acquisition, self.config.ucb_w, f_best)?;
        let proposal = es::propose(
            &model,
            &spec,
            &parents,
            &importance,
            &self.config.es,
            seed,
            g as u64,
            self.exec,
        )?;
        let probs = es::mutation_probabilities(&importance, &self.config.es);
        Ok(self.dedup_with(proposal.point, state, g, &probs))
    }

    fn dedup(&self, point: Vec<f64>, state: &RunState, g: usize) -> Vec<f64> {
        let probs = vec![1.0; point.len()];
        self.dedup_with(point, state, g, &probs)
    }

    fn dedup_with(&self, mut point: Vec<f64>, state: &RunState, g: usize, probs: &[f64]) -> Vec<f64> {
        let seen = |p: &[f64]| {
            state
                .history
                .iter()
                .any(|r| r.unit.iter().zip(p).all(|(a, b)| (a - b).abs() <= DEDUP_TOLERANCE))
        };
        if !seen(&point) {
            return point;
        }
        let mut rng = rng::stream(self.config.seed, Purpose::Dedup, g as u64);
        for _ in 0..DEDUP_ATTEMPTS {
            point = es::polynomial_mutation(&point, probs, self.config.es.eta, &mut rng);
            if !seen(&point) {
                return point;
            }
        }
        (0..point.len()).map(|_| rng.gen()).collect()
    }
}
