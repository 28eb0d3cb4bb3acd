//! Cost-increment estimator of a discounted mean total, computed directly
//! and through its dual representation.

use costnpv::cost_estimators::{strawderman_npv, StrawdermanForm};
use costnpv::simulator::{oracle_npv_marginal, simulate_cohort, OracleOptions, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/illness_death.json");
    let spec: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let cohort = simulate_cohort(&spec)?;
    let obs = cohort.observations();
    let procs = cohort.observed_processes();
    let direct = strawderman_npv(&procs, &obs, spec.r, spec.tau, StrawdermanForm::Direct)?;
    let dual = strawderman_npv(&procs, &obs, spec.r, spec.tau, StrawdermanForm::Dual)?;
    let truth = oracle_npv_marginal(&spec, spec.r, OracleOptions::default())?;
    println!("direct: {direct:.4}");
    println!("dual:   {dual:.4}  (difference {:e})", (direct - dual).abs());
    println!("truth:  {truth:.4}");
    Ok(())
}
