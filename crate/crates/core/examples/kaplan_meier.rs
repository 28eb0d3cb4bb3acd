//! Kaplan–Meier survival, its censoring counterpart and the discounted
//! restricted mean on a small hand-built sample.

use costnpv::npv::discounted_life_expectancy;
use costnpv::survival::{censoring_km, kaplan_meier_obs, Observation};

fn main() -> costnpv::Result<()> {
    let obs = vec![
        Observation::new(1.0, true),
        Observation::new(1.5, false),
        Observation::new(2.0, true),
        Observation::new(2.0, false),
        Observation::new(3.5, true),
        Observation::new(4.0, false),
    ];
    let km = kaplan_meier_obs(&obs)?;
    let g = censoring_km(&obs)?;
    println!("{:>6} {:>10} {:>8}", "time", "S(t)", "at risk");
    for (&t, &s) in km.survival.jump_times().iter().zip(km.survival.values()) {
        println!("{t:>6.2} {s:>10.6} {:>8}", km.at_risk_at(t));
    }
    println!("censoring survival at 3: {:.6}", g.eval(3.0));
    for r in [0.0, 0.03, 0.1] {
        let le = discounted_life_expectancy(&km.survival, r, 4.0);
        println!("restricted mean to 4 at r = {r}: {le:.6}");
    }
    Ok(())
}
