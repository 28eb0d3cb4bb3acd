//! Product-limit estimation of the event-time survival `S` and of the
//! censoring survival `G`.
//!
//! Tie convention: at a time shared by an event and a censoring the event
//! comes first. For `Ŝ` the censored subject is still in the risk set at
//! that time; for `Ĝ` (roles reversed) the subject with the event has
//! already left it. With this convention `Ŝ(t-) Ĝ(t-) = Y(t) / n` holds at
//! every observed time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_history::EventHistory;
use crate::stepfn::StepFunction;

/// Observed follow-up of one subject: `min(T, U)` and whether `T` was seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub event: bool,
}

impl Observation {
    pub fn new(time: f64, event: bool) -> Self {
        Self { time, event }
    }

    /// From latent event and censoring times; `T = U` counts as observed.
    pub fn from_times(event_time: f64, censor_time: f64) -> Self {
        Self {
            time: event_time.min(censor_time),
            event: event_time <= censor_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalFit {
    /// `Ŝ` (or `Ĝ`): starts at 1, nonincreasing.
    pub survival: StepFunction,
    /// Right-continuous count `#{i : time_i > t}`; its left limit is the
    /// risk-set size `Y(t) = #{i : time_i ≥ t}`.
    pub at_risk: StepFunction,
    pub n: usize,
    pub strata_key: Option<String>,
}

impl SurvivalFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.survival.eval(t)
    }

    pub fn left_limit(&self, t: f64) -> f64 {
        self.survival.left_limit(t)
    }

    /// `Y(t)`.
    pub fn at_risk_at(&self, t: f64) -> f64 {
        self.at_risk.left_limit(t)
    }

    pub fn jump_times(&self) -> &[f64] {
        self.survival.jump_times()
    }
}

fn validate(obs: &[Observation]) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(o) = obs.iter().find(|o| !(o.time >= 0.0) || o.time.is_nan()) {
        return Err(Error::InvalidInput(format!(
            "observed time {} must be nonnegative",
            o.time
        )));
    }
    Ok(())
}

/// Distinct times with (events, censorings, risk set) in increasing order.
struct TimeTable {
    times: Vec<f64>,
    events: Vec<f64>,
    censored: Vec<f64>,
    at_risk: Vec<f64>,
}

fn tabulate(obs: &[Observation]) -> TimeTable {
    let mut sorted: Vec<Observation> = obs.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let n = sorted.len();
    let mut table = TimeTable {
        times: Vec::new(),
        events: Vec::new(),
        censored: Vec::new(),
        at_risk: Vec::new(),
    };
    let mut i = 0;
    while i < n {
        let t = sorted[i].time;
        let risk = (n - i) as f64;
        let (mut d, mut c) = (0.0, 0.0);
        while i < n && sorted[i].time == t {
            if sorted[i].event {
                d += 1.0;
            } else {
                c += 1.0;
            }
            i += 1;
        }
        table.times.push(t);
        table.events.push(d);
        table.censored.push(c);
        table.at_risk.push(risk);
    }
    table
}

fn at_risk_function(table: &TimeTable, n: usize) -> StepFunction {
    StepFunction::from_increments(
        n as f64,
        table
            .times
            .iter()
            .zip(table.events.iter().zip(&table.censored))
            .map(|(&t, (&d, &c))| (t, -(d + c))),
    )
}

/// Kaplan–Meier estimate `Ŝ(t) = Π_{t_j ≤ t} (1 - d_j / Y(t_j))`.
pub fn kaplan_meier(times: &[f64], event_flags: &[bool]) -> Result<SurvivalFit> {
    if times.len() != event_flags.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            actual: event_flags.len(),
        });
    }
    let obs: Vec<Observation> = times
        .iter()
        .zip(event_flags)
        .map(|(&t, &e)| Observation::new(t, e))
        .collect();
    kaplan_meier_obs(&obs)
}

pub fn kaplan_meier_obs(obs: &[Observation]) -> Result<SurvivalFit> {
    validate(obs)?;
    let table = tabulate(obs);
    let mut s = 1.0;
    let mut jt = Vec::new();
    let mut vals = Vec::new();
    for k in 0..table.times.len() {
        if table.events[k] > 0.0 {
            s *= 1.0 - table.events[k] / table.at_risk[k];
            jt.push(table.times[k]);
            vals.push(s);
        }
    }
    Ok(SurvivalFit {
        survival: StepFunction::new(1.0, jt, vals)?,
        at_risk: at_risk_function(&table, obs.len()),
        n: obs.len(),
        strata_key: None,
    })
}

/// Product-limit estimate of the censoring survival `Ĝ` from the same
/// observations, with censoring as the event. Subjects whose event falls at
/// a censoring time leave the censoring risk set first.
pub fn censoring_km(obs: &[Observation]) -> Result<SurvivalFit> {
    validate(obs)?;
    let table = tabulate(obs);
    let mut g = 1.0;
    let mut jt = Vec::new();
    let mut vals = Vec::new();
    for k in 0..table.times.len() {
        let c = table.censored[k];
        if c > 0.0 {
            let risk = table.at_risk[k] - table.events[k];
            g *= 1.0 - c / risk;
            jt.push(table.times[k]);
            vals.push(g);
        }
    }
    Ok(SurvivalFit {
        survival: StepFunction::new(1.0, jt, vals)?,
        at_risk: at_risk_function(&table, obs.len()),
        n: obs.len(),
        strata_key: None,
    })
}

/// Censoring survival per stratum, fitted to multi-state histories.
///
/// Each subject contributes `min(T, U, τ)` with `T` the absorption time;
/// the censoring "event" is `U < T` with `U ≤ τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringModel {
    pub strata_covariate: Option<String>,
    pub fits: BTreeMap<String, SurvivalFit>,
}

/// Stratum label for a covariate value.
pub fn stratum_label(value: f64) -> String {
    format!("{value}")
}

pub const ALL_STRATUM: &str = "all";

impl CensoringModel {
    pub fn fit(histories: &[EventHistory], strata: Option<&str>) -> Result<Self> {
        Self::fit_with_levels(histories, strata, None)
    }

    /// As [`CensoringModel::fit`], but every level in `levels` must occur.
    pub fn fit_with_levels(
        histories: &[EventHistory],
        strata: Option<&str>,
        levels: Option<&[String]>,
    ) -> Result<Self> {
        if histories.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut groups: BTreeMap<String, Vec<Observation>> = BTreeMap::new();
        for h in histories {
            let key = subject_stratum(h, strata)?;
            groups.entry(key).or_default().push(censoring_observation(h));
        }
        if let Some(levels) = levels {
            for l in levels {
                if !groups.contains_key(l) {
                    return Err(Error::EmptyStratum(l.clone()));
                }
            }
        }
        let mut fits = BTreeMap::new();
        for (key, obs) in groups {
            let mut fit = censoring_km(&obs)?;
            fit.strata_key = Some(key.clone());
            fits.insert(key, fit);
        }
        Ok(Self {
            strata_covariate: strata.map(str::to_string),
            fits,
        })
    }

    /// Unstratified model from single-transition observations.
    pub fn from_observations(obs: &[Observation]) -> Result<Self> {
        let mut fit = censoring_km(obs)?;
        fit.strata_key = Some(ALL_STRATUM.into());
        Ok(Self {
            strata_covariate: None,
            fits: [(ALL_STRATUM.to_string(), fit)].into_iter().collect(),
        })
    }

    pub fn stratum(&self, key: &str) -> Result<&SurvivalFit> {
        self.fits
            .get(key)
            .ok_or_else(|| Error::EmptyStratum(key.to_string()))
    }

    /// `Ĝ(t-)` in the stratum; zero is an error.
    pub fn left_limit(&self, key: &str, t: f64) -> Result<f64> {
        let g = self.stratum(key)?.left_limit(t);
        if g <= 0.0 {
            return Err(Error::ZeroCensoringSurvival {
                time: t,
                stratum: key.to_string(),
            });
        }
        Ok(g)
    }
}

pub fn subject_stratum(h: &EventHistory, strata: Option<&str>) -> Result<String> {
    match strata {
        None => Ok(ALL_STRATUM.to_string()),
        Some(name) => h
            .covariates
            .baseline(name)
            .map(stratum_label)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string())),
    }
}

/// `(min(T, U, τ), censoring observed)` where the flag is the event for `Ĝ`.
/// Encoded as an [`Observation`] whose `event` is the *survival* event, so it
/// can be passed straight to [`censoring_km`].
pub fn censoring_observation(h: &EventHistory) -> Observation {
    let (time, absorbed) = h.survival_observation();
    // not absorbed and not censored before τ: follow-up ends administratively
    // at τ, which is neither an absorption nor a censoring on (0, τ)
    Observation::new(time, absorbed || (h.censor_time() > h.horizon() && time >= h.horizon()))
}

/// Follow-up for a total-cost estimator restricted to `(0, τ]`: the cost is
/// complete at absorption before `τ`, or once follow-up reaches `τ`.
pub fn cost_observation(h: &EventHistory, tau: f64) -> Observation {
    let (time, absorbed) = h.survival_observation();
    if absorbed && time <= tau {
        return Observation::new(time, true);
    }
    let end = h.observation_end();
    if end >= tau {
        Observation::new(tau, true)
    } else {
        // administrative end of the data before τ counts as complete
        Observation::new(end, h.censor_time() > h.horizon() && end >= h.horizon())
    }
}

/// `Ĝ` per stratum for a set of histories.
pub fn censoring_survival(
    histories: &[EventHistory],
    strata: Option<&str>,
) -> Result<BTreeMap<String, SurvivalFit>> {
    Ok(CensoringModel::fit(histories, strata)?.fits)
}
