//! Simulating a cohort from a scenario and comparing its complete-data mean
//! with the exact and Monte Carlo NPV.

use costnpv::simulator::{monte_carlo_npv, oracle_npv_marginal, simulate_cohort, OracleOptions, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/illness_death.json");
    let spec: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let cohort = simulate_cohort(&spec)?;
    let censored = cohort.observations().iter().filter(|o| !o.event).count();
    println!("{} subjects, {censored} censored before {}", cohort.len(), spec.tau);
    let exact = oracle_npv_marginal(&spec, spec.r, OracleOptions::default())?;
    let mc = monte_carlo_npv(&spec, spec.r, 100_000, 99)?;
    println!("exact NPV:         {exact:.3}");
    println!("Monte Carlo NPV:   {:.3} ± {:.3}", mc.mean, mc.se);
    println!("complete-data mean {:.3}", cohort.full_mean(spec.r));
    Ok(())
}
