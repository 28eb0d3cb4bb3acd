//! Interval-partitioned estimator of the undiscounted mean total cost on
//! coarse and fine grids.

use costnpv::cost_estimators::lin_interval_npv;
use costnpv::simulator::{oracle_lin_bias, oracle_npv_marginal, simulate_cohort, OracleOptions, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/illness_death.json");
    let spec: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let cohort = simulate_cohort(&spec)?;
    let obs = cohort.observations();
    let truth = oracle_npv_marginal(&spec, 0.0, OracleOptions::default())?;
    for grid in [vec![0.0, spec.tau], spec.grid.clone().unwrap_or_else(|| vec![0.0, 1.0, 2.0, 3.0, 4.0, spec.tau])] {
        let panels = cohort.panels(&grid)?;
        let est = lin_interval_npv(&panels, &obs)?;
        println!("{} intervals: {est:.2}", grid.len() - 1);
    }
    let bias = oracle_lin_bias(&spec, 200_000, 1)?;
    println!("true mean total {truth:.2}; limit on the scenario grid {:.2} ± {:.2}", truth - bias.mean, bias.se);
    Ok(())
}
