//! Quality-adjusted and plain discounted life expectancy from a fitted
//! multistate model; with unit weights on the living states the former
//! reduces to the latter.

use costnpv::npv::{discounted_life_expectancy, qaly, InitialDistribution, MarkovFit, QualityWeights};
use costnpv::simulator::{simulate_cohort, ScenarioSpec};
use costnpv::survival::kaplan_meier_obs;
use costnpv::survival::Observation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/illness_death.json");
    let spec: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let cohort = simulate_cohort(&spec)?;
    let states = cohort.state_space.as_ref();
    let markov = MarkovFit::nonparametric(&cohort.histories)?;
    let init = InitialDistribution::point(3, 0);

    let weighted = QualityWeights::constant(states, &[1.0, 0.6, 0.0])?;
    let alive = QualityWeights::constant(states, &[1.0, 1.0, 0.0])?;
    let q = qaly(&weighted, &markov.path, &init, spec.r, spec.tau)?;
    let le = qaly(&alive, &markov.path, &init, spec.r, spec.tau)?;

    let obs: Vec<Observation> = cohort
        .histories
        .iter()
        .map(|h| {
            let (t, e) = h.survival_observation();
            Observation::new(t, e)
        })
        .collect();
    let km = kaplan_meier_obs(&obs)?;
    let le_km = discounted_life_expectancy(&km.survival, spec.r, spec.tau);
    println!("QALY with ill weight 0.6: {q:.6}");
    println!("discounted LE, multistate: {le:.6}");
    println!("discounted LE, KM:         {le_km:.6}");
    Ok(())
}
