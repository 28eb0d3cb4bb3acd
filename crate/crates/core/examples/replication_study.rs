//! A small replication study: bias of each estimator against the oracle.

use costnpv::study::{run_study, StudyConfig, StudyEstimator};
use costnpv::simulator::ScenarioSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/illness_death.json");
    let mut scenario: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    scenario.n = 500;
    let config = StudyConfig {
        scenario,
        replicates: 20,
        estimators: vec![StudyEstimator::BangTsiatis, StudyEstimator::Strawderman, StudyEstimator::NpvProfile],
        oracle_draws: 100_000,
    };
    let out = run_study(&config)?;
    println!("{:<14} {:>11} {:>11} {:>9} {:>7}", "estimator", "target", "mean", "bias", "z");
    for p in &out.summary.parameters {
        println!(
            "{:<14} {:>11.2} {:>11.2} {:>9.2} {:>7.2}",
            p.estimator, p.target, p.mean, p.bias, p.bias_z
        );
    }
    Ok(())
}
