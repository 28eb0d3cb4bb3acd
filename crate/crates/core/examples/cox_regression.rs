//! Shared-covariate Cox model over all transitions of a simulated cohort.

use costnpv::cox::{fit_cox, CoxOptions, CoxSpec};
use costnpv::design::{DesignFormula, Term};
use costnpv::simulator::{simulate_cohort, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/cox_recovery.json");
    let spec: ScenarioSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let cohort = simulate_cohort(&spec)?;
    let formula = DesignFormula::new(vec![Term::covariate("x1"), Term::covariate("x2")]);
    let fit = fit_cox(&cohort.histories, &CoxSpec::new(formula), CoxOptions::default())?;
    let se = fit.standard_errors()?;
    let truth = &spec.intensities[0].beta;
    for (k, name) in ["x1", "x2"].iter().enumerate() {
        println!("{name}: {:.4} (se {:.4}), true {}", fit.beta[k], se[k], truth[*name]);
    }
    println!("{} events, {} Newton iterations, loglik {:.3}", fit.n_events, fit.iterations, fit.loglik);
    Ok(())
}
