//! Inverse-probability-of-censoring mean of discounted total costs, in its
//! weighted and survival-weighted forms.

use costnpv::cost_estimators::{bang_tsiatis_npv, BtForm};
use costnpv::simulator::{oracle_npv_marginal, simulate_cohort, OracleOptions, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/illness_death.json");
    let spec: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let cohort = simulate_cohort(&spec)?;
    let totals = cohort.discounted_totals(spec.r);
    let ipcw = bang_tsiatis_npv(&totals, 0.0, spec.tau, BtForm::Ipcw)?;
    let sw = bang_tsiatis_npv(&totals, 0.0, spec.tau, BtForm::SurvivalWeighted)?;
    let truth = oracle_npv_marginal(&spec, spec.r, OracleOptions::default())?;
    let complete = totals.iter().filter(|c| c.event).count();
    println!("{complete} of {} totals complete", totals.len());
    println!("IPCW form:              {ipcw:.4}");
    println!("survival-weighted form: {sw:.4}");
    println!("difference:             {:e}", (ipcw - sw).abs());
    println!("true NPV:               {truth:.4}");
    Ok(())
}
