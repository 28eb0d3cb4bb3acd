//! Nelson–Aalen intensities and Aalen–Johansen transition probabilities for
//! a simulated illness-death cohort.

use costnpv::event_history::counting_processes;
use costnpv::markov::{aalen_johansen, nelson_aalen};
use costnpv::simulator::{simulate_cohort, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/illness_death.json");
    let spec: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let cohort = simulate_cohort(&spec)?;
    let cp = counting_processes(&cohort.histories)?;
    let a = nelson_aalen(&cp)?;
    for ((h, j), f) in a.iter() {
        println!("A_{h}{j}({}) = {:.4}", spec.tau, f.eval(spec.tau));
    }
    let path = aalen_johansen(&a, &[0.0, spec.tau])?;
    let p = path.at(spec.tau);
    println!("P(0, {}):", spec.tau);
    for i in 0..p.nrows() {
        let row: Vec<String> = (0..p.ncols()).map(|j| format!("{:.4}", p[(i, j)])).collect();
        println!("  {}", row.join("  "));
    }
    println!("max row-sum error: {:e}", path.max_row_sum_error());
    Ok(())
}
