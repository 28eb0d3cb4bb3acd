//! Multistate plug-in NPV: Aalen–Johansen probabilities, censoring-weighted
//! transition cost means and exposure-weighted sojourn rates, compared with
//! the scenario's exact value.

use costnpv::design::{DesignFormula, RecordKind, Term};
use costnpv::npv::{npv_profile, CovariateProfile, InitialDistribution, MarkovFit, SojournRateModel, TransitionCostModel};
use costnpv::regression::{fit_weighted_gls, ipc_weights, transition_cost_data, OmegaSpec};
use costnpv::simulator::{oracle_npv, simulate_cohort, OracleOptions, ScenarioSpec};
use costnpv::survival::CensoringModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/illness_death.json");
    let spec: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let cohort = simulate_cohort(&spec)?;

    let markov = MarkovFit::nonparametric(&cohort.histories)?;
    let kinds = [(0, 1), (0, 2), (1, 2)].map(|(h, j)| RecordKind::transition(h, j));
    let formula = DesignFormula::new(kinds.iter().map(|k| Term::dummy(*k)).collect());
    let data = transition_cost_data(&cohort.histories, &formula, None)?;
    let g = CensoringModel::fit(&cohort.histories, None)?;
    let w = ipc_weights(&data, &g, spec.tau)?;
    let costs = TransitionCostModel::new(formula, fit_weighted_gls(&data, &w, &OmegaSpec::Identity)?)?;
    let grid = vec![0.0, 2.0, spec.tau];
    let rates = SojournRateModel::from_sojourns(&cohort.sojourn_records(&grid), grid)?;
    let init = InitialDistribution::point(3, 0);

    let report = npv_profile(&CovariateProfile::baseline(), &init, &markov, Some(&costs), &rates, spec.r, spec.tau)?;
    let z = Default::default();
    let truth = oracle_npv(&spec, &z, 0, spec.r, OracleOptions::default())?;
    println!("{:<12} {:>12} {:>12}", "stream", "estimate", "truth");
    let u = &report.unconditional;
    for (name, est, tru) in [
        ("transition", u.transition, truth.transition),
        ("sojourn", u.sojourn, truth.sojourn),
        ("total", u.total, truth.total),
    ] {
        println!("{name:<12} {est:>12.2} {tru:>12.2}");
    }
    report.write_csv(std::io::stdout())?;
    Ok(())
}
