use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use houses_core::cli::{read_csv, ImportanceRow, SummaryRow, TraceRow};
use houses_core::objective::runlog::{LogHeader, RunLog};
use houses_core::objective::{FnObjective, Outcome};
use houses_core::optimizer::{run_from, RunConfig, Strategy};
use houses_core::space::{Configuration, SearchSpace};

fn houses(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_houses"))
        .args(args)
        .env_remove("HOUSES_LOG_DIR")
        .output()
        .expect("binary runs")
}

fn spaces() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../spaces")
}

fn space_file(name: &str) -> String {
    spaces().join(format!("{name}.toml")).display().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn optimize_writes_log_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let o = houses(&[
        "optimize", "--space", &space_file("sphere"), "--objective", "sphere",
        "--budget", "30", "--seed", "7", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(out.join("run.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 31);
    assert!(String::from_utf8_lossy(&o.stdout).contains("x1 = "));

    // same flags, same summary
    let out2 = dir.path().join("b");
    let o2 = houses(&[
        "optimize", "--space", &space_file("sphere"), "--objective", "sphere",
        "--budget", "30", "--seed", "7", "--out", s(&out2),
    ]);
    assert!(o2.status.success());
    assert_eq!(
        std::fs::read(out.join("summary.json")).unwrap(),
        std::fs::read(out2.join("summary.json")).unwrap()
    );
}

#[test]
fn usage_errors_exit_2() {
    let o = houses(&["optimize", "--objective", "mnist", "--budget", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--objective"));
    let o = houses(&["importance", "--log", "/definitely/not/here.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    let o = houses(&["optimize", "--objective", "sphere", "--strategy", "hord"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    // sphere has no default dimension
    let o = houses(&["optimize", "--objective", "sphere", "--budget", "5", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    // branin is two-dimensional
    let o = houses(&[
        "optimize", "--space", &space_file("sphere"), "--objective", "branin",
        "--budget", "12", "--out", s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn log_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_houses"))
        .args(["optimize", "--objective", "branin", "--budget", "12", "--strategy", "random"])
        .env("HOUSES_LOG_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("run.jsonl").is_file());
    assert!(dir.path().join("summary.json").is_file());
}

#[test]
fn resume_after_interruption_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    let args = |out: &Path, budget: &str| {
        houses(&[
            "optimize", "--space", &space_file("sphere"), "--objective", "sphere",
            "--budget", budget, "--seed", "3", "--out", s(out), "--resume",
        ])
    };
    assert!(args(&full, "40").status.success());
    assert!(args(&part, "40").status.success());
    // simulate a crash after 25 evaluations, mid-write of the 26th
    let text = std::fs::read_to_string(part.join("run.jsonl")).unwrap();
    let mut kept: String = text.lines().take(26).map(|l| format!("{l}\n")).collect();
    kept.push_str("{\"index\":25,\"unit\":[0.1");
    std::fs::write(part.join("run.jsonl"), kept).unwrap();
    let o = args(&part, "40");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let strip = |p: &Path| -> Vec<serde_json::Value> {
        std::fs::read_to_string(p.join("run.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                if let Some(o) = v.as_object_mut() {
                    o.remove("wall_ms");
                }
                v
            })
            .collect()
    };
    assert_eq!(strip(&full), strip(&part));
    assert_eq!(
        std::fs::read(full.join("summary.json")).unwrap(),
        std::fs::read(part.join("summary.json")).unwrap()
    );
}

#[test]
fn resume_rejects_a_different_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["optimize", "--objective", "branin", "--budget", "15", "--out", s(dir.path()), "--resume"];
    assert!(houses(&base).status.success());
    let mut other = base.to_vec();
    other.extend(["--seed", "9"]);
    assert_eq!(houses(&other).status.code(), Some(1));
}

#[test]
fn compare_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &Path| {
        houses(&[
            "compare", "--space", &space_file("sphere"), "--objective", "sphere", "--budget", "20",
            "--seeds", "3", "--strategies", "houses,random", "--out", s(out),
        ])
    };
    let a = dir.path().join("a");
    let o = run(&a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("head to head"));

    let rows: Vec<TraceRow> = read_csv(&a.join("traces.csv")).unwrap();
    assert_eq!(rows.len(), 120);
    for w in rows.windows(2) {
        if w[0].strategy == w[1].strategy && w[0].seed == w[1].seed {
            assert!(w[1].best_so_far <= w[0].best_so_far);
            assert_eq!(w[1].eval_index, w[0].eval_index + 1);
        }
    }
    let summary: Vec<SummaryRow> = read_csv(&a.join("summary.csv")).unwrap();
    assert_eq!(summary.len(), 40);
    for w in summary.windows(2) {
        if w[0].strategy == w[1].strategy {
            assert!(w[1].median <= w[0].median);
        }
        assert!(w[0].q25 <= w[0].median && w[0].median <= w[0].q75);
    }

    // CSVs parse back losslessly
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).unwrap();
    }
    assert_eq!(w.into_inner().unwrap(), std::fs::read(a.join("traces.csv")).unwrap());

    let b = dir.path().join("b");
    assert!(run(&b).status.success());
    for f in ["traces.csv", "summary.csv", "win_loss.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

fn importances(out: &Path) -> Vec<f64> {
    let rows: Vec<ImportanceRow> = read_csv(&out.join("importance.csv")).unwrap();
    rows.iter().map(|r| r.importance).collect()
}

#[test]
fn importance_of_sphere_log_is_near_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let o = houses(&[
        "optimize", "--space", &space_file("sphere"), "--objective", "sphere", "--budget", "60",
        "--strategy", "random", "--seed", "1", "--out", s(&run_dir),
    ]);
    assert!(o.status.success());
    let out = dir.path().join("imp");
    let o = houses(&["importance", "--log", s(&run_dir.join("run.jsonl")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let imp = importances(&out);
    assert_eq!(imp.len(), 3);
    assert!(imp.iter().all(|i| (i - 1.0 / 3.0).abs() <= 0.15), "{imp:?}");
    let marginal: Vec<houses_core::cli::MarginalRow> = read_csv(&out.join("marginal_x2.csv")).unwrap();
    assert_eq!(marginal.len(), 20);
}

fn write_log(path: &Path, space: &SearchSpace, budget: usize, f: fn(&[f64]) -> f64) {
    let cfg = RunConfig::new(space.dim(), budget, Strategy::Random, 5);
    let mut log = RunLog::create(path, &LogHeader::new("custom", space, &cfg)).unwrap();
    let mut obj = FnObjective(|c: &Configuration| Outcome::Ok(f(&c.unit)));
    run_from(space, &mut obj, &cfg, Vec::new(), &mut |r| log.log_append(r), Default::default()).unwrap();
}

#[test]
fn importance_finds_the_dominant_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let space = SearchSpace::unit_cube(3).unwrap();
    let log = dir.path().join("x1.jsonl");
    write_log(&log, &space, 40, |u| u[0]);
    let out = dir.path().join("imp");
    let o = houses(&["importance", "--log", s(&log), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(importances(&out)[0] >= 0.8);
}

#[test]
fn importance_needs_enough_records() {
    let dir = tempfile::tempdir().unwrap();
    let space = SearchSpace::unit_cube(4).unwrap();
    let log = dir.path().join("short.jsonl");
    write_log(&log, &space, 7, |u| u[0]);
    let o = houses(&["importance", "--log", s(&log), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 8"));
}
