//! `houses` command line: `optimize`, `compare` and `importance`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::acquisition::{AcquisitionKind, DEFAULT_UCB_WEIGHT};
use crate::error::{Error, Result};
use crate::es::EsConfig;
use crate::exec::Exec;
use crate::fanova::{self, ImportanceReport, DEFAULT_GRID_SIZE, DEFAULT_MC_SAMPLES};
use crate::gp::{self, KernelKind};
use crate::objective::runlog::{log_replay, LogHeader, RunLog};
use crate::objective::{mlp_synth_space, ObjectiveSpec};
use crate::optimizer::{self, best_trace, update_anchor, RunConfig, RunState, Strategy};
use crate::space::SearchSpace;

#[derive(Debug, Parser)]
#[command(name = "houses", version, about = "Hyperparameter optimization with a non-stationary GP surrogate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one optimization and write its run log and summary.
    Optimize(OptimizeArgs),
    /// Run several strategies over repeated seeds and write convergence CSVs.
    Compare(CompareArgs),
    /// Fit a surrogate to a run log and write importance and marginal CSVs.
    Importance(ImportanceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Ard,
    Houses,
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Ard => KernelKind::ArdSe,
            KernelArg::Houses => KernelKind::Houses,
        }
    }
}

fn parse_objective(s: &str) -> std::result::Result<ObjectiveSpec, String> {
    ObjectiveSpec::parse(s).map_err(|e| e.to_string())
}

fn existing_file(s: &str) -> std::result::Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.is_file() {
        Ok(p)
    } else {
        Err(format!("no such file `{s}`"))
    }
}

/// Options shared by `optimize` and `compare`.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Search space TOML file (`[[param]]` tables). Optional for builtins
    /// with a fixed dimension.
    #[arg(long, value_parser = existing_file)]
    pub space: Option<PathBuf>,
    /// Builtin name (sphere, branin, hartmann6, rastrigin, mlp_synth) or
    /// `cmd:<command line>` for an external worker.
    #[arg(long, value_parser = parse_objective)]
    pub objective: ObjectiveSpec,
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    #[arg(long, value_enum, default_value_t = KernelArg::Houses)]
    pub kernel: KernelArg,
    #[arg(long, default_value = "ucb")]
    pub acq: AcquisitionKind,
    #[arg(long = "ucb-w", default_value_t = DEFAULT_UCB_WEIGHT)]
    pub ucb_w: f64,
    /// Initial design size; defaults to max(10, 2·D).
    #[arg(long)]
    pub n0: Option<usize>,
    #[arg(long = "es-grids", default_value_t = 5)]
    pub es_grids: usize,
    #[arg(long = "es-offspring", default_value_t = 10)]
    pub es_offspring: usize,
    /// Base mutation rate; defaults to 1/D.
    #[arg(long = "es-pm")]
    pub es_pm: Option<f64>,
    #[arg(long = "es-eta", default_value_t = 20.0)]
    pub es_eta: f64,
    /// Re-optimize surrogate hyperparameters every this many generations.
    #[arg(long = "refit-every", default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub refit_every: u64,
    /// Per-evaluation timeout for external objectives, in seconds.
    #[arg(long, default_value_t = 600.0)]
    pub timeout: f64,
    #[arg(long, env = "HOUSES_LOG_DIR", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value = "houses")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Continue from an existing run log in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of seeds per strategy.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// First seed; seeds run from here upward.
    #[arg(long = "seed", default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "houses,gp,random")]
    pub strategies: Vec<Strategy>,
}

#[derive(Debug, Clone, Args)]
pub struct ImportanceArgs {
    #[arg(long, value_parser = existing_file)]
    pub log: PathBuf,
    #[arg(long, env = "HOUSES_LOG_DIR", default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    pub grid: usize,
    #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let res = match cli.command {
        Command::Optimize(a) => cmd_optimize(&a).map(|_| ()),
        Command::Compare(a) => cmd_compare(&a).map(|_| ()),
        Command::Importance(a) => cmd_importance(&a).map(|_| ()),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

impl CommonArgs {
    fn load_space(&self) -> Result<SearchSpace> {
        if let Some(p) = &self.space {
            return SearchSpace::load(p);
        }
        match &self.objective {
            ObjectiveSpec::Builtin { name } if name == "branin" => SearchSpace::unit_cube(2),
            ObjectiveSpec::Builtin { name } if name == "hartmann6" => SearchSpace::unit_cube(6),
            ObjectiveSpec::Builtin { name } if name == "mlp_synth" => Ok(mlp_synth_space()),
            _ => Err(Error::Argument(format!(
                "--space is required for objective `{}`",
                self.objective.label()
            ))),
        }
    }

    fn objective_spec(&self) -> ObjectiveSpec {
        self.objective
            .clone()
            .with_timeout(Duration::from_secs_f64(self.timeout.max(0.001)))
    }

    fn run_config(&self, dim: usize, strategy: Strategy, seed: u64) -> RunConfig {
        let mut cfg = RunConfig::new(dim, self.budget, strategy, seed);
        if let Some(n0) = self.n0 {
            cfg.n0 = n0;
        }
        cfg.kernel = self.kernel.into();
        cfg.acquisition = self.acq;
        cfg.ucb_w = self.ucb_w;
        cfg.refit_every = self.refit_every as usize;
        cfg.es = EsConfig {
            grids: self.es_grids,
            offspring: self.es_offspring,
            mutation_rate: self.es_pm,
            eta: self.es_eta,
            ..EsConfig::default()
        };
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub objective: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub budget: usize,
    pub evaluations: usize,
    pub failed: usize,
    pub best_index: Option<usize>,
    pub best_value: Option<f64>,
    pub best_raw: Option<BTreeMap<String, f64>>,
    pub best_unit: Option<Vec<f64>>,
}

fn summarize(space: &SearchSpace, objective: &str, cfg: &RunConfig, state: &RunState) -> Summary {
    let best = state.best.as_ref();
    Summary {
        objective: objective.to_string(),
        strategy: cfg.strategy,
        seed: cfg.seed,
        budget: cfg.budget,
        evaluations: state.history.len(),
        failed: state.history.iter().filter(|r| r.ok_value().is_none()).count(),
        best_index: best.map(|b| b.index),
        best_value: best.map(|b| b.value),
        best_raw: best.map(|b| space.names().map(String::from).zip(b.config.raw.iter().copied()).collect()),
        best_unit: best.map(|b| b.config.unit.clone()),
    }
}

/// Run (or resume) one optimization writing its log to `log_path`.
fn optimize_to(
    space: &SearchSpace,
    spec: &ObjectiveSpec,
    cfg: &RunConfig,
    log_path: &Path,
    resume: bool,
    exec: Exec,
) -> Result<RunState> {
    let header = LogHeader::new(&spec.label(), space, cfg);
    let replay = if resume && log_path.is_file() {
        log_replay(log_path)?
    } else {
        None
    };
    let (mut log, history) = match replay {
        Some(r) => {
            if r.header != header {
                return Err(Error::Data(format!(
                    "{} was written with a different space, objective or configuration",
                    log_path.display()
                )));
            }
            (RunLog::resume(log_path, &r)?, r.records)
        }
        None => (RunLog::create(log_path, &header)?, Vec::new()),
    };
    let mut objective = spec.build(space)?;
    optimizer::run_from(
        space,
        objective.as_mut(),
        cfg,
        history,
        &mut |r| log.log_append(r),
        exec,
    )
}

pub fn cmd_optimize(args: &OptimizeArgs) -> Result<Summary> {
    let c = &args.common;
    let space = c.load_space()?;
    let cfg = c.run_config(space.dim(), args.strategy, args.seed);
    if cfg.strategy != Strategy::Random {
        cfg.validate(space.dim())?;
    }
    std::fs::create_dir_all(&c.out)?;
    let spec = c.objective_spec();
    let state = optimize_to(&space, &spec, &cfg, &c.out.join("run.jsonl"), args.resume, Exec::default())?;
    let summary = summarize(&space, &spec.label(), &cfg, &state);
    std::fs::write(c.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    match (&summary.best_value, &summary.best_raw) {
        (Some(v), Some(raw)) => {
            println!("best value {v} at evaluation {}", summary.best_index.unwrap_or(0));
            for (name, x) in raw {
                println!("  {name} = {x}");
            }
        }
        _ => println!("no successful evaluation in {} attempts", summary.evaluations),
    }
    Ok(summary)
}

/// Best-so-far traces of every (strategy, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub budget: usize,
    pub traces: Vec<(Strategy, u64, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub strategy: String,
    pub seed: u64,
    pub eval_index: usize,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub eval_index: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || v[lo] == v[hi] {
        v[lo]
    } else {
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    }
}

impl CompareReport {
    pub fn strategies(&self) -> Vec<Strategy> {
        let mut out: Vec<Strategy> = Vec::new();
        for (s, _, _) in &self.traces {
            if !out.contains(s) {
                out.push(*s);
            }
        }
        out
    }

    pub fn trace_rows(&self) -> Vec<TraceRow> {
        self.traces
            .iter()
            .flat_map(|(s, seed, t)| {
                t.iter().enumerate().map(move |(i, &v)| TraceRow {
                    strategy: s.label().to_string(),
                    seed: *seed,
                    eval_index: i,
                    best_so_far: v,
                })
            })
            .collect()
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for s in self.strategies() {
            let cells: Vec<&Vec<f64>> = self.traces.iter().filter(|t| t.0 == s).map(|t| &t.2).collect();
            for i in 0..self.budget {
                let at: Vec<f64> = cells.iter().map(|t| t[i]).collect();
                rows.push(SummaryRow {
                    strategy: s.label().to_string(),
                    eval_index: i,
                    median: quantile(&at, 0.5),
                    q25: quantile(&at, 0.25),
                    q75: quantile(&at, 0.75),
                });
            }
        }
        rows
    }

    /// Final value of each seed for a strategy, in seed order.
    pub fn finals(&self, strategy: Strategy) -> Vec<(u64, f64)> {
        self.traces
            .iter()
            .filter(|t| t.0 == strategy)
            .map(|t| (t.1, *t.2.last().unwrap_or(&f64::INFINITY)))
            .collect()
    }

    /// Per-seed wins, ties and losses of `a` against `b` on final values.
    pub fn head_to_head(&self, a: Strategy, b: Strategy) -> (usize, usize, usize) {
        let fb: BTreeMap<u64, f64> = self.finals(b).into_iter().collect();
        let mut out = (0, 0, 0);
        for (seed, va) in self.finals(a) {
            if let Some(&vb) = fb.get(&seed) {
                match va.total_cmp(&vb) {
                    std::cmp::Ordering::Less => out.0 += 1,
                    std::cmp::Ordering::Equal => out.1 += 1,
                    std::cmp::Ordering::Greater => out.2 += 1,
                }
            }
        }
        out
    }

    pub fn win_loss_table(&self) -> String {
        let strategies = self.strategies();
        let mut s = String::from("strategy         median final\n");
        for &st in &strategies {
            let finals: Vec<f64> = self.finals(st).into_iter().map(|x| x.1).collect();
            s += &format!("{:<16} {:.6}\n", st.label(), quantile(&finals, 0.5));
        }
        s += "\nhead to head (wins/ties/losses of row against column)\n";
        s += &format!("{:<10}", "");
        for &b in &strategies {
            s += &format!("{:>12}", b.label());
        }
        s += "\n";
        for &a in &strategies {
            s += &format!("{:<10}", a.label());
            for &b in &strategies {
                if a == b {
                    s += &format!("{:>12}", "-");
                } else {
                    let (w, t, l) = self.head_to_head(a, b);
                    s += &format!("{:>12}", format!("{w}/{t}/{l}"));
                }
            }
            s += "\n";
        }
        s
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn cmd_compare(args: &CompareArgs) -> Result<CompareReport> {
    let c = &args.common;
    let space = c.load_space()?;
    if args.seeds == 0 || args.strategies.is_empty() {
        return Err(Error::Argument("need at least one seed and one strategy".into()));
    }
    let spec = c.objective_spec();
    let runs_dir = c.out.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    let cells: Vec<(Strategy, u64)> = args
        .strategies
        .iter()
        .flat_map(|&s| (args.first_seed..args.first_seed + args.seeds).map(move |seed| (s, seed)))
        .collect();
    for &(s, seed) in &cells {
        let cfg = c.run_config(space.dim(), s, seed);
        if s != Strategy::Random {
            cfg.validate(space.dim())?;
        }
    }
    let traces = Exec::default().map_slice(&cells, |&(s, seed)| -> Result<(Strategy, u64, Vec<f64>)> {
        let cfg = c.run_config(space.dim(), s, seed);
        let log = runs_dir.join(format!("{}_seed{seed}.jsonl", s.label()));
        let state = optimize_to(&space, &spec, &cfg, &log, false, Exec::Sequential)?;
        Ok((s, seed, state.best_trace()))
    });
    let report = CompareReport {
        budget: c.budget,
        traces: traces.into_iter().collect::<Result<Vec<_>>>()?,
    };
    write_csv(&c.out.join("traces.csv"), &report.trace_rows())?;
    write_csv(&c.out.join("summary.csv"), &report.summary_rows())?;
    let table = report.win_loss_table();
    std::fs::write(c.out.join("win_loss.txt"), &table)?;
    print!("{table}");
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub dimension: usize,
    pub name: String,
    pub variance: f64,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub grid_value: f64,
    pub marginal: f64,
}

/// Importance of each parameter under a surrogate fitted to a run log.
pub fn log_importance(path: &Path, grid: usize, samples: usize, seed: u64) -> Result<(SearchSpace, ImportanceReport)> {
    let replay = log_replay(path)?
        .ok_or_else(|| Error::Data(format!("{} is empty", path.display())))?;
    let space = replay.header.space.clone();
    let dim = space.dim();
    let (x, y): (Vec<Vec<f64>>, Vec<f64>) = replay
        .records
        .iter()
        .filter_map(|r| r.ok_value().map(|v| (r.unit.clone(), v)))
        .unzip();
    if x.len() < 2 * dim {
        return Err(Error::Data(format!(
            "importance needs at least {} successful evaluations, the log has {}",
            2 * dim,
            x.len()
        )));
    }
    let kind = replay.header.config.surrogate_kernel();
    let anchor = if kind.needs_anchor() {
        update_anchor(&replay.records)
    } else {
        None
    };
    let model = gp::fit(x, y, kind, anchor, seed)?;
    let predictor = |u: &[f64]| model.predict_mean(u).unwrap_or(f64::NAN);
    let report = fanova::importance(&predictor, dim, grid, samples, seed)?;
    Ok((space, report))
}

pub fn cmd_importance(args: &ImportanceArgs) -> Result<ImportanceReport> {
    let (space, report) = log_importance(&args.log, args.grid, args.samples, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    let names: Vec<String> = space.names().map(String::from).collect();
    let rows: Vec<ImportanceRow> = (0..space.dim())
        .map(|d| ImportanceRow {
            dimension: d,
            name: names[d].clone(),
            variance: report.variances[d],
            importance: report.importances[d],
        })
        .collect();
    write_csv(&args.out.join("importance.csv"), &rows)?;
    for curve in &report.curves {
        let rows: Vec<MarginalRow> = curve
            .grid
            .iter()
            .zip(&curve.values)
            .map(|(&g, &m)| MarginalRow {
                grid_value: g,
                marginal: m,
            })
            .collect();
        write_csv(&args.out.join(format!("marginal_{}.csv", names[curve.dimension])), &rows)?;
    }
    for r in &rows {
        println!("{:<20} {:.4}", r.name, r.importance);
    }
    Ok(report)
}

/// Best-so-far trace of a run log.
pub fn log_trace(path: &Path) -> Result<Vec<f64>> {
    Ok(log_replay(path)?.map(|r| best_trace(&r.records)).unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&[f64::INFINITY, 1.0, f64::INFINITY], 0.5), f64::INFINITY);
    }

    #[test]
    fn parsing_defaults() {
        let cli = Cli::try_parse_from(["houses", "optimize", "--objective", "branin"]).unwrap();
        let Command::Optimize(a) = cli.command else { panic!() };
        assert_eq!(a.common.budget, 200);
        assert_eq!(a.strategy, Strategy::Houses);
        assert_eq!(a.common.kernel, KernelArg::Houses);
        assert_eq!(a.common.acq, AcquisitionKind::Ucb);
        let err = Cli::try_parse_from(["houses", "optimize", "--objective", "mnist"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("--objective"));
    }

    #[test]
    fn head_to_head_counts() {
        let r = CompareReport {
            budget: 2,
            traces: vec![
                (Strategy::Houses, 0, vec![2.0, 1.0]),
                (Strategy::Houses, 1, vec![2.0, 2.0]),
                (Strategy::Random, 0, vec![3.0, 1.5]),
                (Strategy::Random, 1, vec![2.0, 2.0]),
            ],
        };
        assert_eq!(r.head_to_head(Strategy::Houses, Strategy::Random), (1, 1, 0));
        assert_eq!(r.summary_rows().len(), 4);
        assert!(r.win_loss_table().contains("1/1/0"));
    }
}
