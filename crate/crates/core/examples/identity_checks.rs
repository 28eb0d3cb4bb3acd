//! Exact algebraic identities on a simulated dataset.

use costnpv::simulator::{simulate_cohort, ScenarioSpec};
use costnpv::study::run_checks;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/illness_death.json");
    let spec: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let cohort = simulate_cohort(&spec)?;
    let procs = cohort.observed_processes();
    let report = run_checks(&cohort.histories, Some(&procs), spec.r, spec.tau)?;
    for c in &report.checks {
        let mark = if c.passed { "ok" } else { "FAILED" };
        println!("{:<26} {:>10.2e} <= {:<8.0e} {mark}", c.name, c.max_error, c.tolerance);
    }
    Ok(())
}
