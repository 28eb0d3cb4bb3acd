//! Ground-truth generator: censored multistate cohorts from piecewise-constant
//! intensities with log-linear covariate effects, plus high-accuracy oracles
//! for the true NPV and for the bias term of the interval cost estimator.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_estimators::{CensoredCost, CostPanel, CostProcess};
use crate::error::{Error, Result};
use crate::event_history::{Covariates, EventHistory, StateSpace, TransitionEvent};
use crate::markov::{product_integral_parametric, ParametricIntensities, ProductIntegralOptions};
use crate::npv::SojournRecord;
use crate::stepfn::StepFunction;
use crate::survival::Observation;

/// Piecewise-constant function of time: `values[k]` on
/// `[breakpoints[k], breakpoints[k+1])`, the last value continuing forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstant {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn constant(value: f64) -> Self {
        Self {
            breakpoints: vec![0.0],
            values: vec![value],
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let b = &self.breakpoints;
        if b.is_empty() || b[0] != 0.0 || b.len() != self.values.len() {
            return Err(Error::InvalidSpec(format!(
                "{what}: breakpoints must start at 0 and match the values in length"
            )));
        }
        if b.windows(2).any(|w| !(w[1] > w[0])) || b.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec(format!("{what}: breakpoints must increase strictly")));
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidSpec(format!("{what}: values must be finite and nonnegative")));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        self.values[idx.saturating_sub(1)]
    }

    /// First breakpoint strictly after `t`.
    fn next_break(&self, t: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        self.breakpoints.get(idx).copied().unwrap_or(f64::INFINITY)
    }
}

fn linear_predictor(beta: &BTreeMap<String, f64>, z: &BTreeMap<String, f64>) -> Result<f64> {
    beta.iter()
        .map(|(name, b)| {
            z.get(name)
                .map(|v| b * v)
                .ok_or_else(|| Error::UnknownCovariate(name.clone()))
        })
        .sum()
}

/// `α_hj(t|z) = α_hj0(t) exp(β'z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityLaw {
    pub from: usize,
    pub to: usize,
    pub baseline: PiecewiseConstant,
    #[serde(default)]
    pub beta: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostNoise {
    None,
    /// Multiplicative `exp(σ(z) ε - σ(z)²/2)`, `ε ~ N(0,1)`, so the mean is
    /// unchanged.
    Lognormal { sigma: f64 },
}

/// Mean transition cost `c_hj(t|z) = intercept + slope·t + β'z` and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCostLaw {
    pub from: usize,
    pub to: usize,
    pub intercept: f64,
    #[serde(default)]
    pub slope: f64,
    #[serde(default)]
    pub beta: BTreeMap<String, f64>,
    pub noise: CostNoise,
    /// Log-scale heteroskedasticity: `σ(z) = σ · exp(Σ γ_k z_k)`.
    #[serde(default)]
    pub sigma_beta: BTreeMap<String, f64>,
}

impl TransitionCostLaw {
    pub fn mean(&self, t: f64, z: &BTreeMap<String, f64>) -> Result<f64> {
        let c = self.intercept + self.slope * t + linear_predictor(&self.beta, z)?;
        if !(c >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "mean cost of {}->{} is negative ({c}) at t={t}",
                self.from, self.to
            )));
        }
        Ok(c)
    }

    fn sigma(&self, z: &BTreeMap<String, f64>) -> Result<f64> {
        match self.noise {
            CostNoise::None => Ok(0.0),
            CostNoise::Lognormal { sigma } => Ok(sigma * linear_predictor(&self.sigma_beta, z)?.exp()),
        }
    }
}

/// Cost accrual rate `B(t, h)` while in state `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SojournLaw {
    pub state: usize,
    pub rate: PiecewiseConstant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateLaw {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    Fixed { value: f64 },
}

impl CovariateLaw {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            CovariateLaw::Bernoulli { p } => (0.0..=1.0).contains(&p),
            CovariateLaw::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            CovariateLaw::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            CovariateLaw::Fixed { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("covariate {name}: bad law parameters")))
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            CovariateLaw::Bernoulli { p } => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            CovariateLaw::Normal { mean, sd } => {
                let e: f64 = StandardNormal.sample(rng);
                mean + sd * e
            }
            CovariateLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            CovariateLaw::Fixed { value } => value,
        }
    }

    /// Support points and probabilities when the law is discrete.
    fn support(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            CovariateLaw::Bernoulli { p } => Some(vec![(0.0, 1.0 - p), (1.0, p)]),
            CovariateLaw::Fixed { value } => Some(vec![(value, 1.0)]),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub law: CovariateLaw,
}

/// Law of the censoring time `U`, independent of everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CensoringLaw {
    None,
    Uniform { lo: f64, hi: f64 },
    Exponential { rate: f64 },
    /// Point masses; the remaining probability is `U = ∞`.
    Atoms { times: Vec<f64>, probs: Vec<f64> },
}

impl CensoringLaw {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            CensoringLaw::None => true,
            CensoringLaw::Uniform { lo, hi } => *lo >= 0.0 && lo < hi && hi.is_finite(),
            CensoringLaw::Exponential { rate } => *rate > 0.0 && rate.is_finite(),
            CensoringLaw::Atoms { times, probs } => {
                times.len() == probs.len()
                    && times.iter().all(|t| *t > 0.0 && t.is_finite())
                    && probs.iter().all(|p| *p >= 0.0)
                    && probs.iter().sum::<f64>() <= 1.0 + 1e-12
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("bad censoring law {self:?}")))
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            CensoringLaw::None => f64::INFINITY,
            CensoringLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            CensoringLaw::Exponential { rate } => {
                let e: f64 = Exp1.sample(rng);
                e / rate
            }
            CensoringLaw::Atoms { times, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (t, p) in times.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *t;
                    }
                }
                f64::INFINITY
            }
        }
    }

    /// `P(U > t)`.
    pub fn survival(&self, t: f64) -> f64 {
        match self {
            CensoringLaw::None => 1.0,
            CensoringLaw::Uniform { lo, hi } => ((hi - t) / (hi - lo)).clamp(0.0, 1.0),
            CensoringLaw::Exponential { rate } => (-rate * t.max(0.0)).exp(),
            CensoringLaw::Atoms { times, probs } => {
                1.0 - times.iter().zip(probs).filter(|(u, _)| **u <= t).map(|(_, p)| p).sum::<f64>()
            }
        }
    }
}

fn default_effect_sd() -> f64 {
    0.0
}

/// Fully specified generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub states: Vec<String>,
    pub absorbing: Vec<usize>,
    /// Initial-state probabilities; defaults to a point mass on state 0.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
    pub intensities: Vec<IntensityLaw>,
    #[serde(default)]
    pub transition_costs: Vec<TransitionCostLaw>,
    #[serde(default)]
    pub sojourn_costs: Vec<SojournLaw>,
    /// Log-scale sd of a unit-mean multiplicative subject effect on accrual.
    #[serde(default = "default_effect_sd")]
    pub sojourn_effect_sd: f64,
    pub censoring: CensoringLaw,
    pub r: f64,
    pub tau: f64,
    /// Interval grid `0 = a_0 < … < a_G = τ`; defaults to `[0, τ]`.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    pub n: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn state_space(&self) -> Result<StateSpace> {
        StateSpace::new(self.states.clone(), self.absorbing.iter().copied())
            .map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn grid(&self) -> Vec<f64> {
        self.grid.clone().unwrap_or_else(|| vec![0.0, self.tau])
    }

    pub fn initial_distribution(&self) -> Vec<f64> {
        self.initial.clone().unwrap_or_else(|| {
            let mut p = vec![0.0; self.n_states()];
            p[0] = 1.0;
            p
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ss = self.state_space()?;
        let n = ss.n_states();
        if self.n == 0 {
            return Err(Error::InvalidSpec("n must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) || !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidSpec("need tau > 0 and r >= 0".into()));
        }
        let p = self.initial_distribution();
        if p.len() != n || p.iter().any(|x| !(*x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec("initial distribution is not a probability vector".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &self.covariates {
            c.law.validate(&c.name)?;
            if !names.insert(c.name.as_str()) {
                return Err(Error::InvalidSpec(format!("covariate {} declared twice", c.name)));
            }
        }
        let known = |beta: &BTreeMap<String, f64>, what: &str| -> Result<()> {
            match beta.keys().find(|k| !names.contains(k.as_str())) {
                Some(k) => Err(Error::InvalidSpec(format!("{what} uses undeclared covariate {k}"))),
                None => Ok(()),
            }
        };
        let mut seen = std::collections::BTreeSet::new();
        for law in &self.intensities {
            let what = format!("intensity {}->{}", law.from, law.to);
            if law.from >= n || law.to >= n || law.from == law.to || ss.is_absorbing(law.from) {
                return Err(Error::InvalidSpec(format!("{what}: bad states")));
            }
            if !seen.insert((law.from, law.to)) {
                return Err(Error::InvalidSpec(format!("{what} declared twice")));
            }
            law.baseline.validate(&what)?;
            known(&law.beta, &what)?;
        }
        for law in &self.transition_costs {
            let what = format!("transition cost {}->{}", law.from, law.to);
            if !seen.contains(&(law.from, law.to)) {
                return Err(Error::InvalidSpec(format!("{what} has no intensity")));
            }
            if let CostNoise::Lognormal { sigma } = law.noise {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidSpec(format!("{what}: sigma must be nonnegative")));
                }
            }
            if !law.intercept.is_finite() || !law.slope.is_finite() {
                return Err(Error::InvalidSpec(format!("{what}: coefficients must be finite")));
            }
            known(&law.beta, &what)?;
            known(&law.sigma_beta, &what)?;
        }
        for law in &self.sojourn_costs {
            if law.state >= n {
                return Err(Error::InvalidSpec(format!("sojourn cost for unknown state {}", law.state)));
            }
            law.rate.validate(&format!("sojourn rate of state {}", law.state))?;
        }
        if !(self.sojourn_effect_sd >= 0.0 && self.sojourn_effect_sd.is_finite()) {
            return Err(Error::InvalidSpec("sojourn_effect_sd must be nonnegative".into()));
        }
        self.censoring.validate()?;
        let g = self.grid();
        if g.len() < 2 || g[0] != 0.0 || (g[g.len() - 1] - self.tau).abs() > 0.0 || g.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSpec("grid must run strictly from 0 to tau".into()));
        }
        Ok(())
    }

    fn cost_law(&self, h: usize, j: usize) -> Option<&TransitionCostLaw> {
        self.transition_costs.iter().find(|l| l.from == h && l.to == j)
    }

    fn sojourn_rate(&self, h: usize, t: f64) -> f64 {
        self.sojourn_costs
            .iter()
            .filter(|l| l.state == h)
            .map(|l| l.rate.eval(t))
            .sum()
    }

    /// `α(·|z)` as callable intensities, with every breakpoint registered.
    pub fn parametric_intensities(&self, z: &BTreeMap<String, f64>) -> Result<ParametricIntensities> {
        let mut alpha = ParametricIntensities::new(self.n_states());
        for law in &self.intensities {
            let scale = linear_predictor(&law.beta, z)?.exp();
            let base = law.baseline.clone();
            alpha = alpha.with(law.from, law.to, move |t| scale * base.eval(t));
        }
        alpha.breakpoints = self.breakpoints();
        Ok(alpha)
    }

    /// Union of all intensity and accrual breakpoints.
    fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .intensities
            .iter()
            .flat_map(|l| l.baseline.breakpoints.iter().copied())
            .chain(self.sojourn_costs.iter().flat_map(|l| l.rate.breakpoints.iter().copied()))
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// Joint support of the covariates when every law is discrete.
    pub fn covariate_support(&self) -> Option<Vec<(BTreeMap<String, f64>, f64)>> {
        let mut out = vec![(BTreeMap::new(), 1.0)];
        for c in &self.covariates {
            let pts = c.law.support()?;
            out = out
                .into_iter()
                .flat_map(|(z, p)| {
                    pts.iter().filter(|(_, q)| *q > 0.0).map(move |&(v, q)| {
                        let mut z = z.clone();
                        z.insert(c.name.clone(), v);
                        (z, p * q)
                    })
                })
                .collect();
        }
        Some(out)
    }
}

/// Everything drawn for one subject, before censoring is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSubject {
    pub z: BTreeMap<String, f64>,
    pub initial_state: usize,
    /// All transitions in `(0, τ]`.
    pub events: Vec<TransitionEvent>,
    /// Absorption time if it falls in `(0, τ]`.
    pub absorption: Option<f64>,
    pub censor_time: f64,
    pub effect: f64,
}

impl LatentSubject {
    /// `T ∧ τ`.
    pub fn end(&self, tau: f64) -> f64 {
        self.absorption.unwrap_or(tau)
    }

    /// Whether `T ∧ τ ≤ U`.
    pub fn complete(&self, tau: f64) -> bool {
        self.end(tau) <= self.censor_time
    }

    /// `(min(T ∧ τ, U), [T ∧ τ ≤ U])`.
    pub fn observation(&self, tau: f64) -> Observation {
        Observation::from_times(self.end(tau), self.censor_time)
    }
}

/// Per-subject RNG: ChaCha8 keyed by the master seed, one stream per index.
pub fn subject_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Seed of replicate `k` derived from a master seed.
pub fn replicate_seed(master: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(k.wrapping_add(1) << 32);
    rng.next_u64()
}

/// One subject by sequential competing-exponential sampling within the
/// constancy segments of the exit intensities.
pub fn draw_subject<R: Rng>(spec: &ScenarioSpec, states: &StateSpace, rng: &mut R) -> Result<LatentSubject> {
    let mut z = BTreeMap::new();
    for c in &spec.covariates {
        z.insert(c.name.clone(), c.law.draw(rng));
    }
    let init = spec.initial_distribution();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut state = init.len() - 1;
    for (k, p) in init.iter().enumerate() {
        acc += p;
        if u < acc {
            state = k;
            break;
        }
    }
    let initial_state = state;
    let effect = if spec.sojourn_effect_sd > 0.0 {
        let e: f64 = StandardNormal.sample(rng);
        let s = spec.sojourn_effect_sd;
        (s * e - 0.5 * s * s).exp()
    } else {
        1.0
    };
    let mut events = Vec::new();
    let mut absorption = None;
    let mut t = 0.0;
    while !states.is_absorbing(state) && t < spec.tau {
        let exits: Vec<(usize, &IntensityLaw, f64)> = spec
            .intensities
            .iter()
            .filter(|l| l.from == state)
            .map(|l| Ok((l.to, l, linear_predictor(&l.beta, &z)?.exp())))
            .collect::<Result<_>>()?;
        let next_break = exits.iter().map(|(_, l, _)| l.baseline.next_break(t)).fold(f64::INFINITY, f64::min);
        let rates: Vec<f64> = exits.iter().map(|(_, l, s)| s * l.baseline.eval(t)).collect();
        let total: f64 = rates.iter().sum();
        if total <= 0.0 {
            if next_break.is_finite() {
                t = next_break;
                continue;
            }
            break;
        }
        let e: f64 = Exp1.sample(rng);
        let cand = t + e / total;
        if cand >= next_break {
            t = next_break;
            continue;
        }
        if cand > spec.tau {
            break;
        }
        let pick = rng.random::<f64>() * total;
        let mut k = 0;
        let mut run = rates[0];
        while run <= pick && k + 1 < rates.len() {
            k += 1;
            run += rates[k];
        }
        let to = exits[k].0;
        let cost = match spec.cost_law(state, to) {
            None => 0.0,
            Some(law) => {
                let mean = law.mean(cand, &z)?;
                let sigma = law.sigma(&z)?;
                if sigma > 0.0 {
                    let e: f64 = StandardNormal.sample(rng);
                    mean * (sigma * e - 0.5 * sigma * sigma).exp()
                } else {
                    mean
                }
            }
        };
        events.push(TransitionEvent {
            time: cand,
            from_state: state,
            to_state: to,
            cost,
        });
        state = to;
        t = cand;
        if states.is_absorbing(state) {
            absorption = Some(t);
        }
    }
    let censor_time = spec.censoring.draw(rng);
    Ok(LatentSubject {
        z,
        initial_state,
        events,
        absorption,
        censor_time,
        effect,
    })
}

/// Full (uncensored) cost history of a subject on `(0, T ∧ τ]`.
pub fn cost_process(spec: &ScenarioSpec, subject: &LatentSubject, id: &str) -> Result<CostProcess> {
    let end = subject.end(spec.tau);
    let atoms: Vec<(f64, f64)> = subject.events.iter().map(|e| (e.time, e.cost)).collect();
    let mut bps = spec.breakpoints();
    bps.extend(subject.events.iter().map(|e| e.time));
    bps.push(end);
    bps.retain(|&b| b <= end);
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let mut times = Vec::with_capacity(bps.len());
    let mut values = Vec::with_capacity(bps.len());
    let mut ev = 0;
    let mut state = subject.initial_state;
    for &b in &bps {
        while ev < subject.events.len() && subject.events[ev].time <= b {
            state = subject.events[ev].to_state;
            ev += 1;
        }
        let v = if b >= end { 0.0 } else { subject.effect * spec.sojourn_rate(state, b) };
        if values.last() != Some(&v) || times.is_empty() {
            times.push(b);
            values.push(v);
        }
    }
    let rate = StepFunction::new(0.0, times, values)?;
    CostProcess::new(id, atoms, rate, 0.0)
}

/// A simulated cohort with its latent truth.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub state_space: Arc<StateSpace>,
    pub tau: f64,
    pub grid: Vec<f64>,
    pub latent: Vec<LatentSubject>,
    /// Histories as observed under censoring.
    pub histories: Vec<EventHistory>,
    /// Uncensored cost histories on `(0, T ∧ τ]`.
    pub processes: Vec<CostProcess>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latent.is_empty()
    }

    /// `(min(T ∧ τ, U), [T ∧ τ ≤ U])` per subject, `T` the absorption time.
    pub fn observations(&self) -> Vec<Observation> {
        self.latent.iter().map(|s| s.observation(self.tau)).collect()
    }

    /// Cost histories cut at the end of follow-up.
    pub fn observed_processes(&self) -> Vec<CostProcess> {
        self.processes
            .iter()
            .zip(self.observations())
            .map(|(p, o)| p.truncated(o.time))
            .collect()
    }

    /// Total discounted cost per subject as a single censored cost. The
    /// discounting is already applied, so pair with `r = 0` in the
    /// single-transition estimator.
    pub fn discounted_totals(&self, r: f64) -> Vec<CensoredCost> {
        self.processes
            .iter()
            .zip(self.observations())
            .map(|(p, o)| {
                if o.event {
                    CensoredCost::observed(o.time, p.discounted(r, o.time) + p.initial_cost)
                } else {
                    CensoredCost::censored(o.time)
                }
            })
            .collect()
    }

    pub fn panels(&self, grid: &[f64]) -> Result<Vec<CostPanel>> {
        self.processes
            .iter()
            .zip(self.observations())
            .map(|(p, o)| CostPanel::from_process(p, grid, o))
            .collect()
    }

    /// Observed sojourns and the accrual within them, cut at `cuts`.
    pub fn sojourn_records(&self, cuts: &[f64]) -> Vec<SojournRecord> {
        crate::npv::sojourn_records(&self.histories, &self.processes, cuts)
    }

    /// Empirical mean of the uncensored discounted totals.
    pub fn full_mean(&self, r: f64) -> f64 {
        self.processes
            .iter()
            .zip(&self.latent)
            .map(|(p, s)| p.discounted(r, s.end(self.tau)))
            .sum::<f64>()
            / self.len() as f64
    }
}

/// Draws `spec.n` subjects with the given seed.
pub fn simulate_cohort_seeded(spec: &ScenarioSpec, seed: u64) -> Result<Cohort> {
    spec.validate()?;
    let ss = Arc::new(spec.state_space()?);
    let mut latent = Vec::with_capacity(spec.n);
    let mut histories = Vec::with_capacity(spec.n);
    let mut processes = Vec::with_capacity(spec.n);
    let width = (spec.n.max(1) as f64).log10() as usize + 1;
    for i in 0..spec.n {
        let mut rng = subject_rng(seed, i as u64);
        let subject = draw_subject(spec, &ss, &mut rng)?;
        let id = format!("s{i:0width$}");
        let end = spec.tau.min(subject.censor_time);
        let observed: Vec<TransitionEvent> = subject.events.iter().filter(|e| e.time <= end).cloned().collect();
        let censor = (subject.censor_time < spec.tau).then_some(subject.censor_time);
        let covs = Covariates::fixed(subject.z.iter().map(|(k, v)| (k.clone(), *v)));
        histories.push(EventHistory::new(
            id.clone(),
            ss.clone(),
            subject.initial_state,
            observed,
            censor,
            spec.tau,
            covs,
        )?);
        processes.push(cost_process(spec, &subject, &id)?);
        latent.push(subject);
    }
    Ok(Cohort {
        state_space: ss,
        tau: spec.tau,
        grid: spec.grid(),
        latent,
        histories,
        processes,
    })
}

pub fn simulate_cohort(spec: &ScenarioSpec) -> Result<Cohort> {
    simulate_cohort_seeded(spec, spec.seed)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` from the eigen-decomposition
/// of the Jacobi matrix.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = j.symmetric_eigen();
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], 2.0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Options for the NPV oracle.
#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub relative_tolerance: f64,
    pub max_levels: u32,
    pub product_integral: ProductIntegralOptions,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            relative_tolerance: 1e-7,
            max_levels: 12,
            product_integral: ProductIntegralOptions::default(),
        }
    }
}

/// True `NPV(z, i)` split into transition and sojourn streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleNpv {
    pub transition: f64,
    pub sojourn: f64,
    pub total: f64,
    pub levels: u32,
}

/// `Σ ∫ e^{-rt} c_hj(t|z) P_ih(0,t|z) α_hj(t|z) dt + Σ ∫ e^{-rt} b_h(t) P_ih(0,t|z) dt`
/// over `(0, τ]`, by composite Gauss–Legendre between breakpoints with panel
/// doubling.
pub fn oracle_npv(spec: &ScenarioSpec, z: &BTreeMap<String, f64>, i: usize, r: f64, options: OracleOptions) -> Result<OracleNpv> {
    let alpha = spec.parametric_intensities(z)?;
    let mut segs: Vec<f64> = spec.breakpoints().into_iter().filter(|&b| b > 0.0 && b < spec.tau).collect();
    segs.insert(0, 0.0);
    segs.push(spec.tau);
    let gl = gauss_legendre(8);
    let evaluate = |panels: usize| -> Result<(f64, f64)> {
        let mut nodes = Vec::new();
        for w in segs.windows(2) {
            let h = (w[1] - w[0]) / panels as f64;
            for p in 0..panels {
                let lo = w[0] + p as f64 * h;
                for &(x, wt) in &gl {
                    nodes.push((lo + 0.5 * h * (x + 1.0), 0.5 * h * wt));
                }
            }
        }
        let times: Vec<f64> = nodes.iter().map(|n| n.0).collect();
        let path = product_integral_parametric(&alpha, &times, options.product_integral)?;
        let (mut tr, mut so) = (0.0, 0.0);
        for &(t, wt) in &nodes {
            let p = path.at(t);
            let disc = (-r * t).exp();
            for law in &spec.intensities {
                let pih = p[(i, law.from)];
                if pih == 0.0 {
                    continue;
                }
                let c = match spec.cost_law(law.from, law.to) {
                    Some(c) => c.mean(t, z)?,
                    None => 0.0,
                };
                let a = (alpha.alpha[&(law.from, law.to)])(t);
                tr += wt * disc * c * pih * a;
            }
            for h in 0..spec.n_states() {
                let b = spec.sojourn_rate(h, t);
                if b != 0.0 {
                    so += wt * disc * b * p[(i, h)];
                }
            }
        }
        Ok((tr, so))
    };
    let mut panels = 1;
    let mut prev = evaluate(panels)?;
    for level in 1..=options.max_levels {
        panels *= 2;
        let next = evaluate(panels)?;
        let (a, b) = (prev.0 + prev.1, next.0 + next.1);
        prev = next;
        if (a - b).abs() <= options.relative_tolerance * b.abs() {
            return Ok(OracleNpv {
                transition: prev.0,
                sojourn: prev.1,
                total: prev.0 + prev.1,
                levels: level,
            });
        }
    }
    Err(Error::NoConvergence(format!(
        "oracle quadrature did not settle to {} after {} levels",
        options.relative_tolerance, options.max_levels
    )))
}

/// `Σ_z P(z) Σ_i π_i NPV(z, i)` for discrete covariate laws.
pub fn oracle_npv_marginal(spec: &ScenarioSpec, r: f64, options: OracleOptions) -> Result<f64> {
    let support = spec.covariate_support().ok_or_else(|| {
        Error::InvalidSpec("the marginal oracle needs discrete covariate laws".into())
    })?;
    let pi = spec.initial_distribution();
    let mut total = 0.0;
    for (z, pz) in support {
        for (i, &p) in pi.iter().enumerate() {
            if p > 0.0 {
                total += pz * p * oracle_npv(spec, &z, i, r, options)?.total;
            }
        }
    }
    Ok(total)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub draws: usize,
}

const MC_CHUNK: usize = 8192;

/// Monte Carlo mean of `f` over fresh latent subjects; chunk sums are reduced
/// in index order so the result does not depend on the thread count.
pub fn monte_carlo<F>(spec: &ScenarioSpec, draws: usize, seed: u64, f: F) -> Result<McEstimate>
where
    F: Fn(&LatentSubject, &CostProcess) -> f64 + Sync,
{
    spec.validate()?;
    let ss = spec.state_space()?;
    let chunks = draws.div_ceil(MC_CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<(f64, f64)> {
            let (mut s, mut s2) = (0.0, 0.0);
            for i in c * MC_CHUNK..((c + 1) * MC_CHUNK).min(draws) {
                let mut rng = subject_rng(seed, i as u64);
                let subj = draw_subject(spec, &ss, &mut rng)?;
                let proc = cost_process(spec, &subj, "")?;
                let v = f(&subj, &proc);
                s += v;
                s2 += v * v;
            }
            Ok((s, s2))
        })
        .collect::<Result<_>>()?;
    let (s, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = draws as f64;
    let mean = s / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        mean,
        se: (var / n).sqrt(),
        draws,
    })
}

/// `E* = Σ_g E{(V(a_g) - V(U)) [a_{g-1} < U ≤ T ∧ a_g] | U > a_{g-1}}`:
/// expected cost lost to censoring inside the interval where it happens,
/// each term conditioned on the subject still being under observation at the
/// interval start. Subjects censored exactly at `a_{g-1}` are outside interval
/// `g`'s risk set and lose nothing.
pub fn oracle_lin_bias(spec: &ScenarioSpec, draws: usize, seed: u64) -> Result<McEstimate> {
    let grid = spec.grid();
    monte_carlo(spec, draws, seed, |s, p| {
        let u = s.censor_time;
        if !(u <= spec.tau) || u <= 0.0 || u > s.end(spec.tau) {
            return 0.0;
        }
        let g = grid.partition_point(|&a| a < u).clamp(1, grid.len() - 1);
        let at_risk = spec.censoring.survival(grid[g - 1]);
        (p.accumulated(grid[g]) - p.accumulated(u)) / at_risk
    })
}

/// `E V(T ∧ τ)` discounted at `r`, by Monte Carlo.
pub fn monte_carlo_npv(spec: &ScenarioSpec, r: f64, draws: usize, seed: u64) -> Result<McEstimate> {
    monte_carlo(spec, draws, seed, |s, p| p.discounted(r, s.end(spec.tau)))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn illness_death(a: f64, b: f64, c: f64) -> ScenarioSpec {
        ScenarioSpec {
            states: vec!["well".into(), "ill".into(), "dead".into()],
            absorbing: vec![2],
            initial: None,
            covariates: vec![],
            intensities: vec![
                IntensityLaw { from: 0, to: 1, baseline: PiecewiseConstant::constant(a), beta: BTreeMap::new() },
                IntensityLaw { from: 0, to: 2, baseline: PiecewiseConstant::constant(b), beta: BTreeMap::new() },
                IntensityLaw { from: 1, to: 2, baseline: PiecewiseConstant::constant(c), beta: BTreeMap::new() },
            ],
            transition_costs: vec![],
            sojourn_costs: vec![],
            sojourn_effect_sd: 0.0,
            censoring: CensoringLaw::None,
            r: 0.0,
            tau: 5.0,
            grid: None,
            n: 10,
            seed: 1,
        }
    }

    fn cost(from: usize, to: usize, c: f64) -> TransitionCostLaw {
        TransitionCostLaw {
            from,
            to,
            intercept: c,
            slope: 0.0,
            beta: BTreeMap::new(),
            noise: CostNoise::None,
            sigma_beta: BTreeMap::new(),
        }
    }

    fn two_state(rate: f64) -> ScenarioSpec {
        ScenarioSpec {
            states: vec!["alive".into(), "dead".into()],
            absorbing: vec![1],
            intensities: vec![IntensityLaw { from: 0, to: 1, baseline: PiecewiseConstant::constant(rate), beta: BTreeMap::new() }],
            ..illness_death(0.0, 0.0, 0.0)
        }
    }

    #[test]
    fn oracle_closed_forms() {
        let mut s = two_state(1.0);
        s.tau = 1.0;
        s.sojourn_costs = vec![SojournLaw { state: 0, rate: PiecewiseConstant::constant(1.0) }];
        let o = oracle_npv(&s, &BTreeMap::new(), 0, 0.0, OracleOptions::default()).unwrap();
        assert!((o.total - (1.0 - (-1.0f64).exp())).abs() < 1e-10);
        let mut s = two_state(1.0);
        s.tau = 50.0;
        s.transition_costs = vec![cost(0, 1, 100.0)];
        let o = oracle_npv(&s, &BTreeMap::new(), 0, 0.0, OracleOptions::default()).unwrap();
        assert!((o.total - 100.0 * (1.0 - (-50.0f64).exp())).abs() < 1e-6);
    }

    #[test]
    fn oracle_illness_death_two_exponentials() {
        let (a, b, c) = (0.3, 0.1, 0.5);
        let (r, tau) = (0.04, 4.0);
        let mut s = illness_death(a, b, c);
        s.tau = tau;
        s.transition_costs = vec![cost(0, 1, 1000.0), cost(0, 2, 300.0), cost(1, 2, 500.0)];
        s.sojourn_costs = vec![
            SojournLaw { state: 0, rate: PiecewiseConstant::constant(10.0) },
            SojournLaw { state: 1, rate: PiecewiseConstant::constant(200.0) },
        ];
        let o = oracle_npv(&s, &BTreeMap::new(), 0, r, OracleOptions::default()).unwrap();
        // ∫_0^τ e^{-kt} dt
        let ik = |k: f64| (1.0 - (-k * tau).exp()) / k;
        let ab = a + b;
        let int_p00 = ik(r + ab);
        let int_p01 = a / (ab - c) * (ik(r + c) - ik(r + ab));
        let expect = 1000.0 * a * int_p00 + 300.0 * b * int_p00 + 500.0 * c * int_p01 + 10.0 * int_p00 + 200.0 * int_p01;
        assert!((o.total - expect).abs() < 1e-6 * expect, "{} vs {expect}", o.total);
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let gl = gauss_legendre(8);
        let sum: f64 = gl.iter().map(|(x, w)| w * x.powi(14)).sum();
        assert!((sum - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn zero_intensities_and_determinism() {
        let mut s = illness_death(0.0, 0.0, 0.0);
        s.sojourn_costs = vec![SojournLaw { state: 0, rate: PiecewiseConstant::constant(2.0) }];
        let c = simulate_cohort(&s).unwrap();
        assert!(c.histories.iter().all(|h| h.events().is_empty()));
        assert!(c.processes.iter().all(|p| p.atoms().is_empty() && p.accumulated(5.0) == 10.0));
        let mut s = illness_death(0.3, 0.1, 0.5);
        s.censoring = CensoringLaw::Uniform { lo: 0.0, hi: 8.0 };
        s.transition_costs = vec![TransitionCostLaw { noise: CostNoise::Lognormal { sigma: 0.5 }, ..cost(0, 1, 100.0) }];
        let a = simulate_cohort(&s).unwrap();
        let b = simulate_cohort(&s).unwrap();
        assert_eq!(a.latent, b.latent);
        assert_eq!(a.histories, b.histories);
        let mut s = two_state(1.0);
        s.censoring = CensoringLaw::None;
        let c = simulate_cohort(&s).unwrap();
        assert!(c.observations().iter().all(|o| o.event));
    }

    #[test]
    fn censoring_law_survival() {
        let u = CensoringLaw::Uniform { lo: 0.0, hi: 10.0 };
        assert_eq!(u.survival(4.0), 0.6);
        let a = CensoringLaw::Atoms { times: vec![1.0, 2.0], probs: vec![0.25, 0.25] };
        assert_eq!((a.survival(0.5), a.survival(1.0), a.survival(3.0)), (1.0, 0.75, 0.5));
    }

    #[test]
    fn lin_bias_vanishes_without_interior_censoring() {
        let mut s = two_state(0.2);
        s.sojourn_costs = vec![SojournLaw { state: 0, rate: PiecewiseConstant::constant(1.0) }];
        s.grid = Some(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let none = oracle_lin_bias(&s, 20000, 3).unwrap();
        assert_eq!(none.mean, 0.0);
        s.censoring = CensoringLaw::Atoms { times: vec![1.0, 2.0, 3.0], probs: vec![0.2, 0.2, 0.2] };
        let atoms = oracle_lin_bias(&s, 20000, 3).unwrap();
        assert_eq!(atoms.mean, 0.0);
    }

    #[test]
    fn lin_bias_uniform_single_interval_hand_integral() {
        // alive forever, unit accrual, U ~ U(0, 2), one interval (0, 1]:
        // E* = E[(1 - U) [U ≤ 1]] = ∫_0^1 (1 - u) / 2 du = 1/4
        let mut s = two_state(0.0);
        s.tau = 1.0;
        s.sojourn_costs = vec![SojournLaw { state: 0, rate: PiecewiseConstant::constant(1.0) }];
        s.censoring = CensoringLaw::Uniform { lo: 0.0, hi: 2.0 };
        let e = oracle_lin_bias(&s, 200_000, 11).unwrap();
        assert!((e.mean - 0.25).abs() < 4.0 * e.se, "{e:?}");
    }

    #[test]
    fn mc_invariant_to_thread_count() {
        let mut s = illness_death(0.3, 0.1, 0.5);
        s.sojourn_costs = vec![SojournLaw { state: 1, rate: PiecewiseConstant::constant(3.0) }];
        s.censoring = CensoringLaw::Exponential { rate: 0.2 };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| oracle_lin_bias(&s, 30000, 5).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
