//! Net present value of transition and sojourn cost streams, quality
//! adjusted life years and discounted life expectancy, assembled from fitted
//! intensity and cost models for a covariate profile.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cost_estimators::CostProcess;
use crate::cox::CoxFit;
use crate::design::{DesignFormula, RecordKind};
use crate::error::{Error, Result};
use crate::event_history::{counting_processes, EventHistory, StateSpace};
use crate::markov::{aalen_johansen, nelson_aalen, CumulativeIntensityMatrix, TransitionMatrixPath};
use crate::regression::{fit_weighted_gls, CostRegressionData, OmegaSpec, ReFit, SubjectRecords};
use crate::stepfn::{discounted_lebesgue_integral, StepFunction};

/// Fixed covariate values defining the subpopulation of interest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateProfile {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub z: BTreeMap<String, f64>,
}

impl CovariateProfile {
    pub fn new(name: impl Into<String>, z: BTreeMap<String, f64>) -> Self {
        Self { name: name.into(), z }
    }

    pub fn baseline() -> Self {
        Self::new("baseline", BTreeMap::new())
    }
}

/// Transition-cost mean model: the design recipe and its fitted coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCostModel {
    pub formula: DesignFormula,
    pub fit: ReFit,
}

impl TransitionCostModel {
    pub fn new(formula: DesignFormula, fit: ReFit) -> Result<Self> {
        if formula.len() != fit.beta.len() {
            return Err(Error::DimensionMismatch {
                expected: fit.beta.len(),
                actual: formula.len(),
            });
        }
        Ok(Self { formula, fit })
    }

    pub fn covers(&self, h: usize, j: usize) -> bool {
        self.formula.covers(RecordKind::transition(h, j))
    }
}

/// `ĉ_hj(t|z) = h^{-1}(x'_hj0(t) β̂)`.
pub fn predict_mean_cost(
    profile: &CovariateProfile,
    model: &TransitionCostModel,
    transition: (usize, usize),
    t: f64,
) -> Result<f64> {
    let (h, j) = transition;
    if !model.covers(h, j) {
        return Err(Error::MissingCostModel { from: h, to: j });
    }
    let row = model.formula.row(RecordKind::transition(h, j), t, &profile.z)?;
    if row.len() != model.fit.beta.len() {
        return Err(Error::DimensionMismatch {
            expected: model.fit.beta.len(),
            actual: row.len(),
        });
    }
    let eta: f64 = row.iter().zip(model.fit.beta.iter()).map(|(x, b)| x * b).sum();
    Ok(model.fit.link.mean(eta))
}

/// `π_i(0|z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDistribution {
    probs: Vec<f64>,
}

impl InitialDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "initial distribution {probs:?} is not a probability vector"
            )));
        }
        Ok(Self { probs })
    }

    pub fn point(n_states: usize, state: usize) -> Self {
        let mut probs = vec![0.0; n_states];
        probs[state] = 1.0;
        Self { probs }
    }

    /// Empirical initial-state frequencies, optionally among subjects whose
    /// baseline value of `stratum.0` equals `stratum.1`.
    pub fn empirical(histories: &[EventHistory], stratum: Option<(&str, f64)>) -> Result<Self> {
        let first = histories.first().ok_or(Error::EmptySample)?;
        let n_states = first.state_space().n_states();
        let mut counts = vec![0usize; n_states];
        for h in histories {
            if let Some((name, value)) = stratum {
                let v = h
                    .covariates
                    .baseline(name)
                    .ok_or_else(|| Error::UnknownCovariate(name.to_string()))?;
                if v != value {
                    continue;
                }
            }
            counts[h.initial_state] += 1;
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyStratum(format!("{stratum:?}")));
        }
        Ok(Self {
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// `q(h, t) ∈ [0, 1]`, zero on absorbing states.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityWeights {
    weights: Vec<StepFunction>,
}

impl QualityWeights {
    pub fn new(states: &StateSpace, mut weights: BTreeMap<usize, StepFunction>) -> Result<Self> {
        let mut out = Vec::with_capacity(states.n_states());
        for h in 0..states.n_states() {
            let q = weights.remove(&h).unwrap_or_else(|| StepFunction::constant(0.0));
            let in_range = |v: f64| (0.0..=1.0).contains(&v);
            if !in_range(q.initial_value()) || !q.values().iter().copied().all(in_range) {
                return Err(Error::InvalidInput(format!("quality weight of state {h} leaves [0, 1]")));
            }
            out.push(if states.is_absorbing(h) {
                StepFunction::constant(0.0)
            } else {
                q
            });
        }
        if let Some(h) = weights.keys().next() {
            return Err(Error::InvalidInput(format!("quality weight for unknown state {h}")));
        }
        Ok(Self { weights: out })
    }

    pub fn constant(states: &StateSpace, q: &[f64]) -> Result<Self> {
        Self::new(
            states,
            q.iter().enumerate().map(|(h, &v)| (h, StepFunction::constant(v))).collect(),
        )
    }

    pub fn get(&self, h: usize) -> &StepFunction {
        &self.weights[h]
    }
}

/// Observed cost of one sojourn (or the observed part of it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SojournRecord {
    pub subject_id: String,
    pub state: usize,
    pub entry: f64,
    pub exit: f64,
    pub cost: f64,
}

/// Accrued cost over each transient spell, with spells cut at the `cuts`
/// that fall inside them so every piece carries its own accrual.
pub fn sojourn_records(histories: &[EventHistory], processes: &[CostProcess], cuts: &[f64]) -> Vec<SojournRecord> {
    let mut out = Vec::new();
    for (h, p) in histories.iter().zip(processes) {
        for s in h.spells() {
            if h.state_space().is_absorbing(s.state) || s.exit <= s.entry {
                continue;
            }
            let mut ends: Vec<f64> = cuts.iter().copied().filter(|&c| c > s.entry && c < s.exit).collect();
            ends.sort_by(f64::total_cmp);
            ends.dedup();
            ends.push(s.exit);
            let mut lo = s.entry;
            for hi in ends {
                out.push(SojournRecord {
                    subject_id: h.subject_id.clone(),
                    state: s.state,
                    entry: lo,
                    exit: hi,
                    cost: discounted_lebesgue_integral(p.rate(), 0.0, lo, hi),
                });
                lo = hi;
            }
        }
    }
    out
}

/// Expected cost-accrual rate `b_h(t|z)` while in state `h`.
#[derive(Debug, Clone, PartialEq)]
pub enum SojournRateModel {
    /// No sojourn costs.
    Zero,
    /// `b_h(t) = rates[h][k]` on `[grid[k], grid[k+1])`, zero outside the grid.
    PiecewiseConstant { grid: Vec<f64>, rates: BTreeMap<usize, Vec<f64>> },
    /// `b_h(t|z) = exp(x'β̂)` with the design at the right end of each grid
    /// interval; no retransformation correction.
    LogRate { formula: DesignFormula, fit: ReFit, grid: Vec<f64> },
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidInput("grid must be finite and strictly increasing with at least two points".into()));
    }
    Ok(())
}

impl SojournRateModel {
    pub fn piecewise(grid: Vec<f64>, rates: BTreeMap<usize, Vec<f64>>) -> Result<Self> {
        validate_grid(&grid)?;
        for (h, r) in &rates {
            if r.len() != grid.len() - 1 {
                return Err(Error::DimensionMismatch {
                    expected: grid.len() - 1,
                    actual: r.len(),
                });
            }
            if r.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
                return Err(Error::InvalidInput(format!("sojourn rates of state {h} must be finite and nonnegative")));
            }
        }
        Ok(Self::PiecewiseConstant { grid, rates })
    }

    /// Exposure estimator: cost spread uniformly over each sojourn, divided
    /// by time at risk in each grid interval.
    pub fn from_sojourns(records: &[SojournRecord], grid: Vec<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        let k = grid.len() - 1;
        let mut cost: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut exposure: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for rec in records {
            if !(rec.exit >= rec.entry) || !(rec.cost >= 0.0) {
                return Err(Error::InvalidInput(format!("bad sojourn record for {}", rec.subject_id)));
            }
            let len = rec.exit - rec.entry;
            if len == 0.0 {
                continue;
            }
            let c = cost.entry(rec.state).or_insert_with(|| vec![0.0; k]);
            let e = exposure.entry(rec.state).or_insert_with(|| vec![0.0; k]);
            for g in 0..k {
                let overlap = rec.exit.min(grid[g + 1]) - rec.entry.max(grid[g]);
                if overlap > 0.0 {
                    c[g] += rec.cost * overlap / len;
                    e[g] += overlap;
                }
            }
        }
        let rates = cost
            .into_iter()
            .map(|(h, c)| {
                let e = &exposure[&h];
                (h, c.iter().zip(e).map(|(c, e)| if *e > 0.0 { c / e } else { 0.0 }).collect())
            })
            .collect();
        Self::piecewise(grid, rates)
    }

    /// Least squares of `log(cost / duration)` on the sojourn design, evaluated
    /// at each sojourn's exit time.
    pub fn fit_log_rate(
        records: &[SojournRecord],
        histories: &[EventHistory],
        formula: DesignFormula,
        grid: Vec<f64>,
    ) -> Result<Self> {
        validate_grid(&grid)?;
        let by_id: BTreeMap<&str, &EventHistory> = histories.iter().map(|h| (h.subject_id.as_str(), h)).collect();
        let mut subjects = Vec::new();
        let mut skipped = 0usize;
        for rec in records {
            let len = rec.exit - rec.entry;
            if !(len > 0.0 && rec.cost > 0.0) {
                skipped += 1;
                continue;
            }
            let h = by_id
                .get(rec.subject_id.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("sojourn record for unknown subject {}", rec.subject_id)))?;
            let kind = RecordKind::sojourn(rec.state);
            let row = formula.row(kind, rec.exit, &h.covariates)?;
            subjects.push(SubjectRecords {
                subject_id: rec.subject_id.clone(),
                y: vec![(rec.cost / len).ln()],
                x: nalgebra::DMatrix::from_row_slice(1, row.len(), &row),
                t: vec![rec.exit],
                s: vec![true],
                stratum: String::new(),
                kinds: vec![Some(kind)],
            });
        }
        if skipped > 0 {
            log::warn!("{skipped} sojourn records with zero cost or duration left out of the log-rate fit");
        }
        let weights = vec![vec![1.0]; subjects.len()];
        let data = CostRegressionData::new(formula.labels(), subjects)?;
        let fit = fit_weighted_gls(&data, &weights, &OmegaSpec::Identity)?;
        Ok(Self::LogRate { formula, fit, grid })
    }

    /// `t ↦ b_h(t|z)` as a step function.
    pub fn rate(&self, h: usize, profile: &CovariateProfile) -> Result<StepFunction> {
        match self {
            SojournRateModel::Zero => Ok(StepFunction::constant(0.0)),
            SojournRateModel::PiecewiseConstant { grid, rates } => match rates.get(&h) {
                None => Ok(StepFunction::constant(0.0)),
                Some(b) => interval_step(grid, b),
            },
            SojournRateModel::LogRate { formula, fit, grid } => {
                let kind = RecordKind::sojourn(h);
                if !formula.covers(kind) {
                    return Ok(StepFunction::constant(0.0));
                }
                let mut b = Vec::with_capacity(grid.len() - 1);
                for &end in &grid[1..] {
                    let row = formula.row(kind, end, &profile.z)?;
                    if row.len() != fit.beta.len() {
                        return Err(Error::DimensionMismatch {
                            expected: fit.beta.len(),
                            actual: row.len(),
                        });
                    }
                    let eta: f64 = row.iter().zip(fit.beta.iter()).map(|(x, b)| x * b).sum();
                    b.push(eta.exp());
                }
                interval_step(grid, &b)
            }
        }
    }
}

fn interval_step(grid: &[f64], b: &[f64]) -> Result<StepFunction> {
    let mut values = b.to_vec();
    values.push(0.0);
    StepFunction::new(0.0, grid.to_vec(), values)
}

/// `Â(·|z)` and `P̂(0,·|z)` for one profile.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovFit {
    pub intensities: CumulativeIntensityMatrix,
    pub path: TransitionMatrixPath,
}

impl MarkovFit {
    pub fn new(intensities: CumulativeIntensityMatrix, horizon: f64) -> Result<Self> {
        let path = aalen_johansen(&intensities, &[horizon])?;
        Ok(Self { intensities, path })
    }

    /// Nelson–Aalen and Aalen–Johansen without covariates.
    pub fn nonparametric(histories: &[EventHistory]) -> Result<Self> {
        let cp = counting_processes(histories)?;
        Self::new(nelson_aalen(&cp)?, cp.horizon)
    }

    pub fn from_cox(fit: &CoxFit, profile: &CovariateProfile, horizon: f64) -> Result<Self> {
        let (intensities, path) = fit.predict_profile(&profile.z, horizon)?;
        Ok(Self { intensities, path })
    }

    pub fn n_states(&self) -> usize {
        self.intensities.n_states()
    }
}

/// One initial state's NPV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpvComponents {
    pub initial_state: Option<usize>,
    pub transition: f64,
    pub sojourn: f64,
    pub total: f64,
}

impl NpvComponents {
    fn new(initial_state: Option<usize>, transition: f64, sojourn: f64) -> Self {
        Self {
            initial_state,
            transition,
            sojourn,
            total: transition + sojourn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpvReport {
    pub profile: CovariateProfile,
    pub r: f64,
    pub tau: f64,
    pub initial_distribution: Vec<f64>,
    pub conditional: Vec<NpvComponents>,
    pub unconditional: NpvComponents,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qaly: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discounted_life_expectancy: Option<f64>,
}

impl NpvReport {
    /// Flat rows `(profile, initial_state, stream, value)`; the unconditional
    /// rows use an empty initial state.
    pub fn csv_rows(&self) -> Vec<(String, String, &'static str, f64)> {
        let mut rows = Vec::new();
        for c in self.conditional.iter().chain(std::iter::once(&self.unconditional)) {
            let state = c.initial_state.map(|s| s.to_string()).unwrap_or_default();
            for (stream, v) in [("transition", c.transition), ("sojourn", c.sojourn), ("total", c.total)] {
                rows.push((self.profile.name.clone(), state.clone(), stream, v));
            }
        }
        for (stream, v) in [("qaly", self.qaly), ("discounted_life_expectancy", self.discounted_life_expectancy)] {
            if let Some(v) = v {
                rows.push((self.profile.name.clone(), String::new(), stream, v));
            }
        }
        rows
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["profile", "initial_state", "stream", "value"])?;
        for (p, s, stream, v) in self.csv_rows() {
            w.write_record([p, s, stream.to_string(), format!("{v:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Transition stream from initial state `i`:
/// `Σ_{h≠j} Σ_{t ≤ τ} e^{-rt} ĉ_hj(t|z) P̂_ih(0,t-) ΔÂ_hj(t)`.
pub fn transition_stream(
    markov: &MarkovFit,
    costs: Option<&TransitionCostModel>,
    profile: &CovariateProfile,
    i: usize,
    r: f64,
    tau: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (&(h, j), a) in markov.intensities.iter() {
        let jumps: Vec<f64> = a.jump_times().iter().copied().filter(|&t| t > 0.0 && t <= tau).collect();
        if jumps.is_empty() {
            continue;
        }
        let model = match costs {
            Some(m) if m.covers(h, j) => m,
            _ => return Err(Error::MissingCostModel { from: h, to: j }),
        };
        for t in jumps {
            let p = markov.path.before(t)[(i, h)];
            if p == 0.0 {
                continue;
            }
            let c = predict_mean_cost(profile, model, (h, j), t)?;
            total += (-r * t).exp() * c * p * markov.intensities.increment(h, j, t);
        }
    }
    Ok(total)
}

/// Sojourn stream from initial state `i`: `Σ_h ∫_0^τ e^{-rt} b_h(t|z) P̂_ih(0,t) dt`.
pub fn sojourn_stream(
    markov: &MarkovFit,
    rates: &SojournRateModel,
    profile: &CovariateProfile,
    i: usize,
    r: f64,
    tau: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for h in 0..markov.n_states() {
        let b = rates.rate(h, profile)?;
        if b.initial_value() == 0.0 && b.values().iter().all(|v| *v == 0.0) {
            continue;
        }
        let f = markov.path.element(i, h).combine(&b, |p, b| p * b);
        total += discounted_lebesgue_integral(&f, r, 0.0, tau);
    }
    Ok(total)
}

/// Conditional NPV for every initial state and the mixture over `π(0|z)`.
pub fn npv_profile(
    profile: &CovariateProfile,
    initial: &InitialDistribution,
    markov: &MarkovFit,
    costs: Option<&TransitionCostModel>,
    rates: &SojournRateModel,
    r: f64,
    tau: f64,
) -> Result<NpvReport> {
    check_discounting(r, tau)?;
    let n = markov.n_states();
    if initial.probs().len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: initial.probs().len(),
        });
    }
    let mut conditional = Vec::with_capacity(n);
    let (mut ut, mut us) = (0.0, 0.0);
    for i in 0..n {
        let t = transition_stream(markov, costs, profile, i, r, tau)?;
        let s = sojourn_stream(markov, rates, profile, i, r, tau)?;
        let pi = initial.probs()[i];
        ut += pi * t;
        us += pi * s;
        conditional.push(NpvComponents::new(Some(i), t, s));
    }
    Ok(NpvReport {
        profile: profile.clone(),
        r,
        tau,
        initial_distribution: initial.probs().to_vec(),
        conditional,
        unconditional: NpvComponents::new(None, ut, us),
        qaly: None,
        discounted_life_expectancy: None,
    })
}

fn check_discounting(r: f64, tau: f64) -> Result<()> {
    if !(r >= 0.0 && r.is_finite()) || !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("need r >= 0 and tau > 0, got r = {r}, tau = {tau}")));
    }
    Ok(())
}

/// `β̂' Σ_{t ≤ τ} e^{-rt} x_0(t) (-ΔŜ(t|z_0))`.
pub fn npv_single_transition_cov(
    survival: &StepFunction,
    beta: &DVector<f64>,
    x0: &dyn Fn(f64) -> Vec<f64>,
    r: f64,
    tau: f64,
) -> Result<f64> {
    check_discounting(r, tau)?;
    let mut total = 0.0;
    let mut any = false;
    for (t, d) in survival.jumps_in(0.0, tau) {
        if d == 0.0 {
            continue;
        }
        any = true;
        let x = x0(t);
        if x.len() != beta.len() {
            return Err(Error::DimensionMismatch {
                expected: beta.len(),
                actual: x.len(),
            });
        }
        let c: f64 = x.iter().zip(beta.iter()).map(|(x, b)| x * b).sum();
        total += (-r * t).exp() * c * (-d);
    }
    if !any {
        return Err(Error::NoJumps(tau));
    }
    Ok(total)
}

/// `∫_0^t e^{-ru} Ŝ(u) du`.
pub fn discounted_life_expectancy(survival: &StepFunction, r: f64, t: f64) -> f64 {
    discounted_lebesgue_integral(survival, r, 0.0, t)
}

/// `Σ_j b_j {LE(a_j) - LE(a_{j-1})}` over the grid.
pub fn piecewise_sojourn_npv(survival: &StepFunction, grid: &[f64], rates: &[f64], r: f64) -> Result<f64> {
    validate_grid(grid)?;
    if rates.len() != grid.len() - 1 {
        return Err(Error::DimensionMismatch {
            expected: grid.len() - 1,
            actual: rates.len(),
        });
    }
    Ok(grid
        .windows(2)
        .zip(rates)
        .map(|(w, b)| b * (discounted_life_expectancy(survival, r, w[1]) - discounted_life_expectancy(survival, r, w[0])))
        .sum())
}

/// `Σ_i π_i Σ_h ∫_0^τ e^{-rt} q(h,t) P̂_ih(0,t) dt`.
pub fn qaly(
    weights: &QualityWeights,
    path: &TransitionMatrixPath,
    initial: &InitialDistribution,
    r: f64,
    tau: f64,
) -> Result<f64> {
    check_discounting(r, tau)?;
    let n = path.n_states();
    if initial.probs().len() != n || weights.weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: initial.probs().len(),
        });
    }
    let mut total = 0.0;
    for (i, &pi) in initial.probs().iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        for h in 0..n {
            let q = weights.get(h);
            if q.initial_value() == 0.0 && q.values().iter().all(|v| *v == 0.0) {
                continue;
            }
            let f = path.element(i, h).combine(q, |p, q| p * q);
            total += pi * discounted_lebesgue_integral(&f, r, 0.0, tau);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_estimators::{bang_tsiatis_npv, BtForm, CensoredCost};
    use crate::design::Term;
    use crate::event_history::{Covariates, TransitionEvent};
    use crate::regression::{ipc_weights, single_transition_flag, Link, WeightConvention};
    use crate::survival::{kaplan_meier_obs, CensoringModel, Observation};
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn fit_with(beta: Vec<f64>, link: Link) -> ReFit {
        let p = beta.len();
        ReFit {
            labels: (0..p).map(|k| k.to_string()).collect(),
            beta: DVector::from_vec(beta),
            link,
            sigma_u2: 1.0,
            sigma_a2: 0.0,
            sandwich: DMatrix::zeros(p, p),
            n_used: 0,
            iterations: 0,
            estimating_norm: 0.0,
        }
    }

    fn two_state_histories(data: &[(f64, bool, f64)]) -> Vec<EventHistory> {
        let ss = Arc::new(StateSpace::two_state());
        data.iter()
            .enumerate()
            .map(|(k, &(t, event, cost))| {
                let events = if event {
                    vec![TransitionEvent {
                        time: t,
                        from_state: 0,
                        to_state: 1,
                        cost,
                    }]
                } else {
                    vec![]
                };
                let censor = if event { None } else { Some(t) };
                EventHistory::new(k.to_string(), ss.clone(), 0, events, censor, 10.0, Covariates::new()).unwrap()
            })
            .collect()
    }

    #[test]
    fn mean_cost_predictions() {
        let formula = DesignFormula::new(vec![Term::intercept(), Term::time(1)]);
        let m = TransitionCostModel::new(formula.clone(), fit_with(vec![2.0, 3.0], Link::Identity)).unwrap();
        assert_eq!(predict_mean_cost(&CovariateProfile::baseline(), &m, (0, 1), 4.0).unwrap(), 14.0);
        let m = TransitionCostModel::new(formula.clone(), fit_with(vec![0.0, 0.0], Link::Log)).unwrap();
        assert_eq!(predict_mean_cost(&CovariateProfile::baseline(), &m, (0, 1), 4.0).unwrap(), 1.0);
        let err = TransitionCostModel::new(formula, fit_with(vec![1.0], Link::Identity)).unwrap_err();
        assert_eq!(err.invariant(), "DimensionMismatch");
    }

    #[test]
    fn two_state_transition_stream_is_cumulative_incidence() {
        let hs = two_state_histories(&[(1.0, true, 0.0), (2.0, false, 0.0), (3.0, true, 0.0)]);
        let mk = MarkovFit::nonparametric(&hs).unwrap();
        let c = TransitionCostModel::new(
            DesignFormula::new(vec![Term::intercept()]),
            fit_with(vec![7.0], Link::Identity),
        )
        .unwrap();
        let rep = npv_profile(
            &CovariateProfile::baseline(),
            &InitialDistribution::point(2, 0),
            &mk,
            Some(&c),
            &SojournRateModel::Zero,
            0.0,
            5.0,
        )
        .unwrap();
        // KM: 1 · 2/3 · 0 so 1 - Ŝ(5) = 1
        assert!((rep.conditional[0].transition - 7.0).abs() < 1e-14);
        assert_eq!(rep.unconditional.total, rep.unconditional.transition + rep.unconditional.sojourn);
        let rep = npv_profile(
            &CovariateProfile::baseline(),
            &InitialDistribution::point(2, 0),
            &mk,
            Some(&c),
            &SojournRateModel::Zero,
            0.0,
            2.5,
        )
        .unwrap();
        assert!((rep.conditional[0].transition - 7.0 / 3.0).abs() < 1e-14);
        let err = npv_profile(
            &CovariateProfile::baseline(),
            &InitialDistribution::point(2, 0),
            &mk,
            None,
            &SojournRateModel::Zero,
            0.0,
            5.0,
        )
        .unwrap_err();
        assert_eq!(err.invariant(), "MissingCostModel");
    }

    #[test]
    fn unit_sojourn_rate_gives_restricted_mean() {
        let hs = two_state_histories(&[(1.0, true, 0.0), (2.0, false, 0.0), (3.0, true, 0.0)]);
        let mk = MarkovFit::nonparametric(&hs).unwrap();
        let rates = SojournRateModel::piecewise(vec![0.0, 10.0], [(0, vec![1.0])].into()).unwrap();
        let zero = TransitionCostModel::new(
            DesignFormula::new(vec![Term::intercept()]),
            fit_with(vec![0.0], Link::Identity),
        )
        .unwrap();
        let rep = npv_profile(
            &CovariateProfile::baseline(),
            &InitialDistribution::point(2, 0),
            &mk,
            Some(&zero),
            &rates,
            0.0,
            5.0,
        )
        .unwrap();
        // Ŝ = 1 on [0,1), 2/3 on [1,3), 0 after
        assert!((rep.conditional[0].sojourn - (1.0 + 4.0 / 3.0)).abs() < 1e-14);
        assert_eq!(rep.conditional[0].transition, 0.0);
    }

    #[test]
    fn life_expectancy_values() {
        assert_eq!(discounted_life_expectancy(&StepFunction::constant(1.0), 0.0, 7.0), 7.0);
        let n = 20000;
        let times: Vec<f64> = (1..=n).map(|k| k as f64 / n as f64).collect();
        let vals: Vec<f64> = times.iter().map(|t| (-t).exp()).collect();
        let s = StepFunction::new(1.0, times, vals).unwrap();
        let le = discounted_life_expectancy(&s, 1.0, 1.0);
        assert!((le - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-4);
    }

    #[test]
    fn illness_death_qaly_matches_two_term_oracle() {
        let ss = Arc::new(StateSpace::illness_death());
        let ev = |t, f, to| TransitionEvent {
            time: t,
            from_state: f,
            to_state: to,
            cost: 0.0,
        };
        let hs = vec![
            EventHistory::new("a", ss.clone(), 0, vec![ev(1.0, 0, 1), ev(3.0, 1, 2)], None, 6.0, Covariates::new()).unwrap(),
            EventHistory::new("b", ss.clone(), 0, vec![ev(2.0, 0, 2)], None, 6.0, Covariates::new()).unwrap(),
            EventHistory::new("c", ss.clone(), 0, vec![], Some(4.0), 6.0, Covariates::new()).unwrap(),
        ];
        let mk = MarkovFit::nonparametric(&hs).unwrap();
        let w = QualityWeights::constant(&ss, &[1.0, 0.5, 1.0]).unwrap();
        let q = qaly(&w, &mk.path, &InitialDistribution::point(3, 0), 0.0, 5.0).unwrap();
        // P00: 1 on [0,1), 2/3 on [1,2), 1/3 on [2,∞); P01: 1/3 on [1,3), 0 after
        let oracle = (1.0 + 2.0 / 3.0 + 3.0 / 3.0) + 0.5 * (2.0 / 3.0);
        assert!((q - oracle).abs() < 1e-14);
        let none = QualityWeights::constant(&ss, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(qaly(&none, &mk.path, &InitialDistribution::point(3, 0), 0.0, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn saturated_single_transition_equals_bang_tsiatis() {
        let raw = [(1.0, true, 100.0), (2.0, true, 300.0), (1.5, false, 0.0), (2.0, true, 50.0), (3.0, false, 0.0)];
        let obs: Vec<Observation> = raw.iter().map(|&(t, e, _)| Observation::new(t, e)).collect();
        let tau = 5.0;
        let r = 0.03;
        let times = [1.0, 2.0];
        let x0 = |t: f64| times.iter().map(|&u| if t == u { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        let g = CensoringModel::from_observations(&obs).unwrap();
        let subjects: Vec<SubjectRecords> = raw
            .iter()
            .enumerate()
            .map(|(k, &(t, e, c))| {
                let (s, tt) = single_transition_flag(t, e, tau, WeightConvention::TransitionObserved);
                let x = x0(tt);
                SubjectRecords {
                    subject_id: k.to_string(),
                    y: vec![c],
                    x: DMatrix::from_row_slice(1, 2, &x),
                    t: vec![tt],
                    s: vec![s],
                    stratum: "all".into(),
                    kinds: vec![None],
                }
            })
            .collect();
        let data = CostRegressionData::new(vec!["t1".into(), "t2".into()], subjects).unwrap();
        let w = ipc_weights(&data, &g, tau).unwrap();
        let fit = fit_weighted_gls(&data, &w, &OmegaSpec::Identity).unwrap();
        let km = kaplan_meier_obs(&obs).unwrap();
        let npv = npv_single_transition_cov(&km.survival, &fit.beta, &x0, r, tau).unwrap();
        let costs: Vec<CensoredCost> = raw
            .iter()
            .map(|&(t, e, c)| CensoredCost {
                time: t,
                event: e,
                cost: c,
            })
            .collect();
        let bt = bang_tsiatis_npv(&costs, r, tau, BtForm::Ipcw).unwrap();
        assert!((npv - bt).abs() < 1e-10, "{npv} vs {bt}");
        let flat = StepFunction::constant(1.0);
        let err = npv_single_transition_cov(&flat, &fit.beta, &x0, r, tau).unwrap_err();
        assert_eq!(err.invariant(), "NoJumps");
    }

    #[test]
    fn exposure_rates() {
        let recs = vec![
            SojournRecord {
                subject_id: "a".into(),
                state: 0,
                entry: 0.0,
                exit: 2.0,
                cost: 4.0,
            },
            SojournRecord {
                subject_id: "b".into(),
                state: 0,
                entry: 0.0,
                exit: 1.0,
                cost: 1.0,
            },
        ];
        let m = SojournRateModel::from_sojourns(&recs, vec![0.0, 1.0, 3.0]).unwrap();
        let SojournRateModel::PiecewiseConstant { rates, .. } = &m else { unreachable!() };
        assert_eq!(rates[&0], vec![1.5, 2.0]);
        let b = m.rate(0, &CovariateProfile::baseline()).unwrap();
        assert_eq!((b.eval(0.5), b.eval(2.0), b.eval(3.0)), (1.5, 2.0, 0.0));
    }

    proptest! {
        #[test]
        fn npv_monotone_and_piecewise_identity(
            data in prop::collection::vec((0.1f64..8.0, any::<bool>(), 0.0f64..100.0), 3..30),
            b in prop::collection::vec(0.0f64..5.0, 3),
            r in 0.0f64..0.2,
        ) {
            let hs = two_state_histories(&data);
            let Ok(mk) = MarkovFit::nonparametric(&hs) else { return Ok(()); };
            let grid = vec![0.0, 2.0, 5.0, 8.0];
            let rates = SojournRateModel::piecewise(grid.clone(), [(0, b.clone())].into()).unwrap();
            let c = TransitionCostModel::new(
                DesignFormula::new(vec![Term::intercept(), Term::time(1)]),
                fit_with(vec![10.0, 2.0], Link::Identity),
            ).unwrap();
            let prof = CovariateProfile::baseline();
            let init = InitialDistribution::point(2, 0);
            let npv = |r: f64, tau: f64| npv_profile(&prof, &init, &mk, Some(&c), &rates, r, tau).unwrap().unconditional.total;
            prop_assert!(npv(r + 0.05, 8.0) <= npv(r, 8.0) + 1e-12);
            prop_assert!(npv(r, 4.0) <= npv(r, 8.0) + 1e-12);
            let s = mk.path.element(0, 0);
            let pw = piecewise_sojourn_npv(&s, &grid, &b, r).unwrap();
            let rep = npv_profile(&prof, &init, &mk, Some(&c), &rates, r, 8.0).unwrap();
            prop_assert!((rep.conditional[0].sojourn - pw).abs() <= 1e-10 * pw.abs().max(1.0));
            let ss = StateSpace::two_state();
            let q = qaly(&QualityWeights::constant(&ss, &[1.0, 1.0]).unwrap(), &mk.path, &init, r, 8.0).unwrap();
            prop_assert!((q - discounted_life_expectancy(&s, r, 8.0)).abs() <= 1e-12 * q.max(1.0));
        }
    }
}
