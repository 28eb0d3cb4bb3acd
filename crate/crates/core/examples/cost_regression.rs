//! Censoring-weighted GLS and GEE fits of a single transition cost on a
//! baseline covariate.

use costnpv::design::{DesignFormula, RecordKind, Term};
use costnpv::regression::{
    fit_feasible_gls, fit_weighted_gee, fit_weighted_gls, ipc_weights, single_transition_cost_data, GeeOptions, Link,
    OmegaSpec, ReFit, WeightConvention,
};
use costnpv::simulator::{simulate_cohort, ScenarioSpec};
use costnpv::survival::CensoringModel;

fn show(name: &str, fit: &ReFit) {
    let se = fit.standard_errors();
    let cells: Vec<String> = fit
        .labels
        .iter()
        .zip(fit.beta.iter().zip(&se))
        .map(|(l, (b, s))| format!("{l} = {b:.2} ({s:.2})"))
        .collect();
    println!("{name:<14} {}", cells.join(", "));
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/single_transition_wls.json");
    let spec: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let cohort = simulate_cohort(&spec)?;
    let formula = DesignFormula::new(vec![Term::intercept(), Term::covariate("x")]);
    let kind = RecordKind::transition(0, 1);
    let data = single_transition_cost_data(
        &cohort.histories,
        kind,
        &formula,
        spec.tau,
        WeightConvention::TransitionObserved,
        None,
    )?;
    let g = CensoringModel::fit(&cohort.histories, None)?;
    let w = ipc_weights(&data, &g, spec.tau)?;
    show("WLS", &fit_weighted_gls(&data, &w, &OmegaSpec::Identity)?);
    show("feasible GLS", &fit_feasible_gls(&data, &w)?);
    show("GEE log link", &fit_weighted_gee(&data, &w, Link::Log, &OmegaSpec::Identity, GeeOptions::default())?);
    println!("true coefficients: intercept = 1000, x = 500");
    Ok(())
}
