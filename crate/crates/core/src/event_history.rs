//! Multi-state paths under right censoring and their aggregation into
//! counting and at-risk processes.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::design::CovariateLookup;
use crate::error::{Error, Result};
use crate::stepfn::StepFunction;

/// Finite state space `{0, …, m}` split into transient and absorbing states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    labels: Vec<String>,
    absorbing: BTreeSet<usize>,
}

impl StateSpace {
    pub fn new(labels: Vec<String>, absorbing: impl IntoIterator<Item = usize>) -> Result<Self> {
        let absorbing: BTreeSet<usize> = absorbing.into_iter().collect();
        if labels.len() < 2 {
            return Err(Error::InvalidStateSpace("need at least two states".into()));
        }
        if absorbing.is_empty() {
            return Err(Error::InvalidStateSpace("no absorbing state".into()));
        }
        if let Some(&bad) = absorbing.iter().find(|&&s| s >= labels.len()) {
            return Err(Error::InvalidStateSpace(format!(
                "absorbing state {bad} out of range"
            )));
        }
        if absorbing.len() == labels.len() {
            return Err(Error::InvalidStateSpace("no transient state".into()));
        }
        Ok(Self { labels, absorbing })
    }

    /// `alive -> dead`.
    pub fn two_state() -> Self {
        Self::new(vec!["alive".into(), "dead".into()], [1]).expect("valid")
    }

    /// `healthy -> ill -> dead` with direct `healthy -> dead`.
    pub fn illness_death() -> Self {
        Self::new(vec!["healthy".into(), "ill".into(), "dead".into()], [2]).expect("valid")
    }

    pub fn n_states(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, state: usize) -> &str {
        &self.labels[state]
    }

    pub fn is_absorbing(&self, state: usize) -> bool {
        self.absorbing.contains(&state)
    }

    pub fn absorbing(&self) -> impl Iterator<Item = usize> + '_ {
        self.absorbing.iter().copied()
    }

    pub fn transient(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.labels.len()).filter(|s| !self.absorbing.contains(s))
    }

    pub fn contains(&self, state: usize) -> bool {
        state < self.labels.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub time: f64,
    pub from_state: usize,
    pub to_state: usize,
    pub cost: f64,
}

/// Named covariates, each a piecewise-constant function of time. Fixed
/// covariates are constant step functions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    values: BTreeMap<String, StepFunction>,
}

impl Covariates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fixed<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            values: pairs
                .into_iter()
                .map(|(k, v)| (k.into(), StepFunction::constant(v)))
                .collect(),
        }
    }

    pub fn insert_fixed(&mut self, name: impl Into<String>, value: f64) {
        self.values.insert(name.into(), StepFunction::constant(value));
    }

    pub fn insert_path(&mut self, name: impl Into<String>, path: StepFunction) {
        self.values.insert(name.into(), path);
    }

    /// Value used by a model at `t`: the left limit `z(t-)`, so the covariate
    /// is predictable with respect to events at `t`.
    pub fn value(&self, name: &str, t: f64) -> Option<f64> {
        self.values.get(name).map(|f| f.left_limit(t))
    }

    /// Value at time zero, for covariates used as fixed stratifiers.
    pub fn baseline(&self, name: &str) -> Option<f64> {
        self.values.get(name).map(|f| f.eval(0.0))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Whether every covariate is constant in time.
    pub fn is_time_fixed(&self) -> bool {
        self.values.values().all(|f| f.is_constant_on(f64::NEG_INFINITY, f64::INFINITY))
    }

    /// Baseline values as a plain map.
    pub fn baseline_map(&self) -> BTreeMap<String, f64> {
        self.values
            .iter()
            .map(|(k, v)| (k.clone(), v.eval(0.0)))
            .collect()
    }
}

impl CovariateLookup for Covariates {
    fn covariate(&self, name: &str, t: f64) -> Option<f64> {
        self.value(name, t)
    }
}

/// One subject's validated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventHistory {
    pub subject_id: String,
    pub initial_state: usize,
    pub covariates: Covariates,
    events: Vec<TransitionEvent>,
    /// Censoring time `U`; `+inf` when uncensored.
    censor_time: f64,
    horizon: f64,
    state_space: Arc<StateSpace>,
}

/// A maximal period spent in one state while under observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spell {
    pub state: usize,
    pub entry: f64,
    pub exit: f64,
    /// Destination when the spell ended with an observed transition.
    pub exit_to: Option<usize>,
}

impl Spell {
    /// `Y(t) = 1` on `(entry, exit]`.
    pub fn at_risk(&self, t: f64) -> bool {
        self.entry < t && t <= self.exit
    }
}

impl EventHistory {
    /// Validates and assembles a history. Nothing is truncated: events past the
    /// end of observation are rejected.
    pub fn new(
        subject_id: impl Into<String>,
        state_space: Arc<StateSpace>,
        initial_state: usize,
        events: Vec<TransitionEvent>,
        censor_time: Option<f64>,
        horizon: f64,
        covariates: Covariates,
    ) -> Result<Self> {
        let subject = subject_id.into();
        let invalid = |reason: String| Error::InvalidHistory {
            subject: subject.clone(),
            reason,
        };
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon {horizon} must be positive and finite")));
        }
        let censor_time = censor_time.unwrap_or(f64::INFINITY);
        if censor_time.is_nan() || censor_time <= 0.0 {
            return Err(invalid(format!("censor time {censor_time} must be positive")));
        }
        if !state_space.contains(initial_state) {
            return Err(invalid(format!("initial state {initial_state} out of range")));
        }
        let end = censor_time.min(horizon);
        let mut current = initial_state;
        let mut last = 0.0;
        for ev in &events {
            if !ev.time.is_finite() || ev.time <= 0.0 {
                return Err(invalid(format!("event time {} must be positive and finite", ev.time)));
            }
            if !state_space.contains(ev.from_state) || !state_space.contains(ev.to_state) {
                return Err(invalid(format!(
                    "transition {}->{} references an unknown state",
                    ev.from_state, ev.to_state
                )));
            }
            if ev.from_state == ev.to_state {
                return Err(invalid(format!("self-transition in state {}", ev.from_state)));
            }
            if !(ev.cost >= 0.0 && ev.cost.is_finite()) {
                return Err(invalid(format!("cost {} at t={} must be nonnegative", ev.cost, ev.time)));
            }
            if ev.time <= last {
                return Err(Error::NonMonotoneTimes {
                    subject,
                    time: ev.time,
                });
            }
            if state_space.is_absorbing(current) {
                return Err(Error::TransitionFromAbsorbing {
                    subject,
                    time: ev.time,
                    state: current,
                });
            }
            if ev.from_state != current {
                return Err(Error::BrokenChain {
                    subject,
                    time: ev.time,
                    from: ev.from_state,
                    current,
                });
            }
            if ev.time > end {
                return Err(Error::EventAfterCensoring {
                    subject,
                    time: ev.time,
                    end,
                });
            }
            current = ev.to_state;
            last = ev.time;
        }
        Ok(Self {
            subject_id: subject,
            initial_state,
            covariates,
            events,
            censor_time,
            horizon,
            state_space,
        })
    }

    pub fn events(&self) -> &[TransitionEvent] {
        &self.events
    }

    pub fn censor_time(&self) -> f64 {
        self.censor_time
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn state_space(&self) -> &Arc<StateSpace> {
        &self.state_space
    }

    /// `min(U, τ)`.
    pub fn observation_end(&self) -> f64 {
        self.censor_time.min(self.horizon)
    }

    pub fn final_state(&self) -> usize {
        self.events.last().map_or(self.initial_state, |e| e.to_state)
    }

    /// Time of entry into an absorbing state, when observed.
    pub fn absorption_time(&self) -> Option<f64> {
        self.events
            .last()
            .filter(|e| self.state_space.is_absorbing(e.to_state))
            .map(|e| e.time)
    }

    /// `X(t)`, meaningful for `t` up to the end of observation.
    pub fn state_at(&self, t: f64) -> usize {
        let idx = self.events.partition_point(|e| e.time <= t);
        if idx == 0 {
            self.initial_state
        } else {
            self.events[idx - 1].to_state
        }
    }

    /// `X(t-)`.
    pub fn state_before(&self, t: f64) -> usize {
        let idx = self.events.partition_point(|e| e.time < t);
        if idx == 0 {
            self.initial_state
        } else {
            self.events[idx - 1].to_state
        }
    }

    /// `Y_h(t) = [X(t-) = h, U ≥ t]`, restricted to `t ≤ τ`.
    pub fn at_risk(&self, h: usize, t: f64) -> bool {
        t > 0.0 && t <= self.observation_end() && self.state_before(t) == h
    }

    /// Spells in occupied states, in time order. The last spell ends at the
    /// end of observation (or absorption time for absorbing final states,
    /// which then has zero length and is omitted).
    pub fn spells(&self) -> Vec<Spell> {
        let end = self.observation_end();
        let mut out = Vec::with_capacity(self.events.len() + 1);
        let mut state = self.initial_state;
        let mut entry = 0.0;
        for ev in &self.events {
            out.push(Spell {
                state,
                entry,
                exit: ev.time,
                exit_to: Some(ev.to_state),
            });
            state = ev.to_state;
            entry = ev.time;
        }
        if !self.state_space.is_absorbing(state) || entry < end {
            out.push(Spell {
                state,
                entry,
                exit: end,
                exit_to: None,
            });
        }
        out
    }

    /// The subject's observed time and whether absorption was observed:
    /// `(min(T, U, τ), [T ≤ U ∧ τ])`.
    pub fn survival_observation(&self) -> (f64, bool) {
        match self.absorption_time() {
            Some(t) => (t, true),
            None => (self.observation_end(), false),
        }
    }
}

/// Unvalidated row of `events.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub subject_id: String,
    pub time: f64,
    pub from_state: usize,
    pub to_state: usize,
    pub cost: f64,
}

/// Unvalidated row of `subjects.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub subject_id: String,
    pub initial_state: usize,
    pub censor_time: Option<f64>,
    pub covariates: BTreeMap<String, f64>,
}

/// Builds a validated history from parsed rows. Rows are taken in the given
/// order; out-of-order rows are an error, not something to sort away.
pub fn build_event_history(
    subject: &SubjectRow,
    rows: &[EventRow],
    state_space: Arc<StateSpace>,
    horizon: f64,
) -> Result<EventHistory> {
    let events = rows
        .iter()
        .map(|r| TransitionEvent {
            time: r.time,
            from_state: r.from_state,
            to_state: r.to_state,
            cost: r.cost,
        })
        .collect();
    EventHistory::new(
        subject.subject_id.clone(),
        state_space,
        subject.initial_state,
        events,
        subject.censor_time,
        horizon,
        Covariates::fixed(subject.covariates.iter().map(|(k, v)| (k.clone(), *v))),
    )
}

/// Aggregated `N_hj(t)` and `Y_h(t)` over a sample.
///
/// Each `y_h` is stored as the right-continuous occupancy count
/// `R_h(t) = #{i : X_i(t) = h, U_i ∧ τ > t}`; the at-risk count
/// `Y_h(t) = #{i : X_i(t-) = h, U_i ≥ t}` is its left limit, available
/// through [`CountingProcesses::at_risk`].
#[derive(Debug, Clone, PartialEq)]
pub struct CountingProcesses {
    pub n_states: usize,
    pub n_hj: BTreeMap<(usize, usize), StepFunction>,
    pub y_h: BTreeMap<usize, StepFunction>,
    pub n_subjects: usize,
    pub horizon: f64,
}

impl CountingProcesses {
    pub fn at_risk(&self, h: usize, t: f64) -> f64 {
        self.y_h.get(&h).map_or(0.0, |f| f.left_limit(t))
    }

    pub fn n(&self, h: usize, j: usize) -> Option<&StepFunction> {
        self.n_hj.get(&(h, j))
    }

    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.n_hj.keys().copied()
    }
}

fn check_common(histories: &[EventHistory]) -> Result<(Arc<StateSpace>, f64)> {
    let first = histories.first().ok_or(Error::EmptySample)?;
    let ss = first.state_space().clone();
    let tau = first.horizon();
    for h in histories {
        if h.horizon() != tau || (!Arc::ptr_eq(h.state_space(), &ss) && **h.state_space() != *ss)
        {
            return Err(Error::MixedStateSpaces);
        }
    }
    Ok((ss, tau))
}

pub fn counting_processes(histories: &[EventHistory]) -> Result<CountingProcesses> {
    let (ss, tau) = check_common(histories)?;
    let m = ss.n_states();
    let mut n_inc: BTreeMap<(usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    let mut initial = vec![0.0; m];
    let mut occ_inc: Vec<Vec<(f64, f64)>> = vec![Vec::new(); m];
    for hist in histories {
        initial[hist.initial_state] += 1.0;
        let end = hist.observation_end();
        let mut state = hist.initial_state;
        for ev in hist.events() {
            n_inc
                .entry((ev.from_state, ev.to_state))
                .or_default()
                .push((ev.time, 1.0));
            occ_inc[ev.from_state].push((ev.time, -1.0));
            occ_inc[ev.to_state].push((ev.time, 1.0));
            state = ev.to_state;
        }
        if end.is_finite() {
            occ_inc[state].push((end, -1.0));
        }
    }
    let n_hj = n_inc
        .into_iter()
        .map(|(k, inc)| (k, StepFunction::from_increments(0.0, inc)))
        .collect();
    let y_h = occ_inc
        .into_iter()
        .enumerate()
        .map(|(h, inc)| (h, StepFunction::from_increments(initial[h], inc)))
        .collect();
    Ok(CountingProcesses {
        n_states: m,
        n_hj,
        y_h,
        n_subjects: histories.len(),
        horizon: tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_state_history(id: &str, event: Option<f64>, censor: Option<f64>) -> EventHistory {
        let ss = Arc::new(StateSpace::two_state());
        let events = event
            .map(|t| {
                vec![TransitionEvent {
                    time: t,
                    from_state: 0,
                    to_state: 1,
                    cost: 0.0,
                }]
            })
            .unwrap_or_default();
        EventHistory::new(id, ss, 0, events, censor, 10.0, Covariates::new()).unwrap()
    }

    fn row(t: f64, from: usize, to: usize, cost: f64) -> EventRow {
        EventRow {
            subject_id: "a".into(),
            time: t,
            from_state: from,
            to_state: to,
            cost,
        }
    }

    fn subject(censor: Option<f64>) -> SubjectRow {
        SubjectRow {
            subject_id: "a".into(),
            initial_state: 0,
            censor_time: censor,
            covariates: BTreeMap::new(),
        }
    }

    #[test]
    fn minimal_history_builds() {
        let ss = Arc::new(StateSpace::illness_death());
        let h = build_event_history(&subject(None), &[row(1.0, 0, 1, 50.0)], ss, 5.0).unwrap();
        assert_eq!(h.events().len(), 1);
        assert_eq!(h.censor_time(), f64::INFINITY);
        assert_eq!(h.state_at(1.0), 1);
        assert_eq!(h.state_before(1.0), 0);
    }

    #[test]
    fn unordered_rows_rejected() {
        let ss = Arc::new(StateSpace::illness_death());
        let err = build_event_history(
            &subject(None),
            &[row(2.0, 0, 1, 0.0), row(1.0, 1, 2, 0.0)],
            ss,
            5.0,
        )
        .unwrap_err();
        assert_eq!(err.invariant(), "NonMonotoneTimes");
    }

    #[test]
    fn chain_violations_rejected() {
        let ss = Arc::new(StateSpace::illness_death());
        let err = build_event_history(
            &subject(None),
            &[row(1.0, 0, 2, 0.0), row(2.0, 1, 2, 0.0)],
            ss.clone(),
            5.0,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::BrokenChain { .. } | Error::TransitionFromAbsorbing { .. }
        ));
        let err = build_event_history(&subject(None), &[row(1.0, 1, 2, 0.0)], ss, 5.0)
            .unwrap_err();
        assert_eq!(err.invariant(), "BrokenChain");
    }

    #[test]
    fn events_after_censoring_or_horizon_rejected() {
        let ss = Arc::new(StateSpace::illness_death());
        let err = build_event_history(&subject(Some(1.5)), &[row(2.0, 0, 1, 0.0)], ss.clone(), 5.0)
            .unwrap_err();
        assert_eq!(err.invariant(), "EventAfterCensoring");
        let err = build_event_history(&subject(None), &[row(6.0, 0, 1, 0.0)], ss.clone(), 5.0)
            .unwrap_err();
        assert_eq!(err.invariant(), "EventAfterCensoring");
        // an event exactly at U is observed
        assert!(build_event_history(&subject(Some(2.0)), &[row(2.0, 0, 1, 0.0)], ss, 5.0).is_ok());
    }

    #[test]
    fn state_space_validation() {
        assert!(StateSpace::new(vec!["a".into(), "b".into()], []).is_err());
        assert!(StateSpace::new(vec!["a".into(), "b".into()], [0, 1]).is_err());
        assert!(StateSpace::new(vec!["a".into(), "b".into()], [2]).is_err());
        let ss = StateSpace::illness_death();
        assert_eq!(ss.transient().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn counting_three_uncensored() {
        let hs: Vec<_> = [1.0, 2.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &t)| two_state_history(&i.to_string(), Some(t), None))
            .collect();
        let cp = counting_processes(&hs).unwrap();
        let n01 = cp.n(0, 1).unwrap();
        assert_eq!(n01.jump_times(), &[1.0, 2.0, 3.0]);
        assert_eq!(n01.values(), &[1.0, 2.0, 3.0]);
        assert_eq!(cp.at_risk(0, 1.0), 3.0);
        assert_eq!(cp.at_risk(0, 2.0), 2.0);
        assert_eq!(cp.at_risk(0, 3.0), 1.0);
        assert_eq!(cp.at_risk(0, 3.5), 0.0);
    }

    #[test]
    fn counting_censored_only() {
        let hs = vec![two_state_history("a", None, Some(1.5))];
        let cp = counting_processes(&hs).unwrap();
        assert!(cp.n_hj.is_empty());
        assert_eq!(cp.at_risk(0, 1.0), 1.0);
        assert_eq!(cp.at_risk(0, 1.5), 1.0);
        assert_eq!(cp.at_risk(0, 1.6), 0.0);
    }

    #[test]
    fn counting_tied_events() {
        let hs = vec![
            two_state_history("a", Some(2.0), None),
            two_state_history("b", Some(2.0), None),
            two_state_history("c", Some(3.0), None),
        ];
        let cp = counting_processes(&hs).unwrap();
        assert_eq!(cp.n(0, 1).unwrap().jump_at(2.0), 2.0);
    }

    #[test]
    fn mixed_state_spaces_rejected() {
        let a = two_state_history("a", Some(1.0), None);
        let ss = Arc::new(StateSpace::illness_death());
        let b = EventHistory::new("b", ss, 0, vec![], None, 10.0, Covariates::new()).unwrap();
        assert_eq!(
            counting_processes(&[a, b]).unwrap_err().invariant(),
            "MixedStateSpaces"
        );
    }

    fn arb_histories() -> impl Strategy<Value = Vec<EventHistory>> {
        let ss = Arc::new(StateSpace::illness_death());
        prop::collection::vec(
            (
                prop::collection::vec((1u32..40, 0usize..3), 0..3),
                prop::option::of(1u32..40),
                0usize..2,
            ),
            1..25,
        )
        .prop_map(move |subjects| {
            subjects
                .into_iter()
                .enumerate()
                .map(|(i, (steps, censor, init))| {
                    // integer-valued times on a coarse grid to force ties
                    let u = censor.map(|c| c as f64 * 0.25);
                    let end = u.unwrap_or(f64::INFINITY).min(10.0);
                    let mut state = init;
                    let mut t = 0.0;
                    let mut evs = Vec::new();
                    for (dt, to) in steps {
                        if state == 2 {
                            break;
                        }
                        let next = t + dt as f64 * 0.25;
                        if next > end || to == state {
                            continue;
                        }
                        evs.push(TransitionEvent { time: next, from_state: state, to_state: to, cost: 1.0 });
                        state = to;
                        t = next;
                    }
                    EventHistory::new(i.to_string(), ss.clone(), init, evs, u, 10.0, Covariates::new()).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn at_risk_matches_brute_force(hs in arb_histories()) {
            let cp = counting_processes(&hs).unwrap();
            let mut total_events = 0.0;
            for (_, n) in &cp.n_hj {
                total_events += n.final_value();
            }
            let observed: usize = hs.iter().map(|h| h.events().len()).sum();
            prop_assert_eq!(total_events, observed as f64);
            for k in 0..90 {
                let t = k as f64 * 0.125;
                let mut sum = 0.0;
                for h in 0..3 {
                    let brute = hs.iter().filter(|x| x.at_risk(h, t)).count() as f64;
                    let y = if t == 0.0 { cp.y_h[&h].initial_value() } else { cp.at_risk(h, t) };
                    if t > 0.0 {
                        prop_assert_eq!(y, brute, "state {} t {}", h, t);
                    }
                    sum += y;
                }
                prop_assert!(sum <= hs.len() as f64);
            }
        }

        #[test]
        fn permutation_invariant(hs in arb_histories(), seed in 0u64..1000) {
            let cp = counting_processes(&hs).unwrap();
            let mut perm = hs.clone();
            let n = perm.len();
            for i in (1..n).rev() {
                let j = ((seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64)) % (i as u64 + 1)) as usize;
                perm.swap(i, j);
            }
            let cp2 = counting_processes(&perm).unwrap();
            prop_assert_eq!(cp, cp2);
        }
    }
}
