use std::time::Duration;

use houses_core::objective::{ExternalObjective, Status};
use houses_core::optimizer::{run, RunConfig, Strategy};
use houses_core::space::SearchSpace;

// Answers with (x1 - 0.3)^2 computed by awk, but reports an error for every
// third request; ids are echoed back.
const WORKER: &str = r#"n=0; while read -r l; do
  n=$((n+1))
  id=$(echo "$l" | sed 's/.*"id":\([0-9]*\).*/\1/')
  x=$(echo "$l" | sed 's/.*"x1":\([-0-9.eE]*\).*/\1/')
  if [ $((n % 3)) -eq 0 ]; then
    echo "{\"id\":$id,\"status\":\"error\",\"message\":\"flaky\"}"
  else
    v=$(awk -v x="$x" 'BEGIN { printf "%.17g", (x - 0.3) * (x - 0.3) }')
    echo "{\"id\":$id,\"status\":\"ok\",\"objective\":$v}"
  fi
done"#;

#[test]
fn optimizer_survives_worker_errors_to_full_budget() {
    let space = SearchSpace::unit_cube(2).unwrap();
    let mut obj = ExternalObjective::spawn(WORKER, space.clone(), Duration::from_secs(20)).unwrap();
    let cfg = RunConfig::new(2, 24, Strategy::Houses, 1);
    let state = run(&space, &mut obj, &cfg).unwrap();
    assert_eq!(state.history.len(), 24);
    let failed = state.history.iter().filter(|r| r.status == Status::Failed).count();
    assert_eq!(failed, 8);
    assert!(state.history.iter().filter(|r| r.status == Status::Failed).all(|r| r.reason.as_deref() == Some("flaky")));
    for r in state.history.iter().filter(|r| r.status == Status::Ok) {
        assert!((r.value.unwrap() - (r.raw[0] - 0.3).powi(2)).abs() < 1e-12);
    }
}

#[test]
fn timeouts_are_recorded_as_failures() {
    let space = SearchSpace::unit_cube(1).unwrap();
    let mut obj = ExternalObjective::spawn("read -r l; exec sleep 30", space.clone(), Duration::from_millis(100)).unwrap();
    let cfg = RunConfig::new(1, 3, Strategy::Random, 0);
    let state = run(&space, &mut obj, &cfg).unwrap();
    assert_eq!(state.history.len(), 3);
    assert!(state.history.iter().all(|r| r.reason.as_deref().is_some_and(|m| m.contains("timeout"))));
}
