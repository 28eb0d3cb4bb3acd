//! Monte Carlo replication studies against the simulator's oracles, and the
//! exact identity checks run on a single dataset.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_estimators::{
    bang_tsiatis_npv, lin_interval_npv, strawderman_npv, BtForm, CensoredCost, CostProcess, StrawdermanForm,
};
use crate::cox::{fit_cox, CoxOptions, CoxSpec};
use crate::design::{DesignFormula, Factor, RecordKind, Term};
use crate::error::{Error, Result};
use crate::event_history::{counting_processes, EventHistory};
use crate::markov::{aalen_johansen, nelson_aalen};
use crate::npv::{npv_profile, CovariateProfile, InitialDistribution, MarkovFit, SojournRateModel, TransitionCostModel};
use crate::regression::{
    fit_weighted_gls, ipc_weights, single_transition_cost_data, transition_cost_data, CostRegressionData, OmegaSpec,
    WeightConvention,
};
use crate::simulator::{
    oracle_lin_bias, oracle_npv_marginal, replicate_seed, simulate_cohort_seeded, Cohort, McEstimate,
    OracleOptions, ScenarioSpec,
};
use crate::survival::{censoring_km, cost_observation, kaplan_meier_obs, CensoringModel, Observation};

/// Estimators a study can replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyEstimator {
    /// IPCW mean of the discounted total cost.
    BangTsiatis,
    Strawderman,
    /// Nonparametric multistate plug-in with fitted cost models.
    NpvProfile,
    /// Undiscounted interval estimator, compared with its biased limit.
    Lin,
    /// Shared covariate effects on all intensities.
    Cox,
    /// Weighted least squares for a single transition cost.
    Wls,
}

impl StudyEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            StudyEstimator::BangTsiatis => "bang_tsiatis",
            StudyEstimator::Strawderman => "strawderman",
            StudyEstimator::NpvProfile => "npv_profile",
            StudyEstimator::Lin => "lin",
            StudyEstimator::Cox => "cox",
            StudyEstimator::Wls => "wls",
        }
    }
}

fn default_oracle_draws() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: ScenarioSpec,
    pub replicates: usize,
    pub estimators: Vec<StudyEstimator>,
    /// Monte Carlo draws for the interval-estimator bias term.
    #[serde(default = "default_oracle_draws")]
    pub oracle_draws: usize,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.replicates < 2 {
            return Err(Error::InvalidSpec("a study needs at least two replicates".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidSpec("no estimators selected".into()));
        }
        for e in &self.estimators {
            match e {
                StudyEstimator::Cox => {
                    cox_truth(&self.scenario)?;
                }
                StudyEstimator::Wls => {
                    wls_design(&self.scenario)?;
                }
                StudyEstimator::NpvProfile | StudyEstimator::BangTsiatis | StudyEstimator::Strawderman => {
                    if self.scenario.covariate_support().is_none() {
                        return Err(Error::InvalidSpec(format!(
                            "{} is compared with a marginal oracle that needs discrete covariates",
                            e.name()
                        )));
                    }
                    if *e == StudyEstimator::NpvProfile && has_covariate_effects(&self.scenario) {
                        return Err(Error::InvalidSpec(
                            "npv_profile in a study fits no covariates; remove covariate effects".into(),
                        ));
                    }
                }
                StudyEstimator::Lin => {}
            }
        }
        Ok(())
    }
}

fn has_covariate_effects(s: &ScenarioSpec) -> bool {
    s.intensities.iter().any(|l| l.beta.values().any(|b| *b != 0.0))
        || s.transition_costs.iter().any(|l| l.beta.values().any(|b| *b != 0.0))
}

/// Common `β` of every intensity, ordered by covariate name.
fn cox_truth(s: &ScenarioSpec) -> Result<Vec<(String, f64)>> {
    let first = s
        .intensities
        .first()
        .ok_or_else(|| Error::InvalidSpec("no intensities".into()))?;
    if first.beta.is_empty() || s.intensities.iter().any(|l| l.beta != first.beta) {
        return Err(Error::InvalidSpec(
            "cox recovery needs the same nonempty covariate effects on every intensity".into(),
        ));
    }
    Ok(first.beta.iter().map(|(k, v)| (k.clone(), *v)).collect())
}

/// Design and true coefficients for the single transition-cost law.
fn wls_design(s: &ScenarioSpec) -> Result<(RecordKind, DesignFormula, Vec<f64>)> {
    let [law] = s.transition_costs.as_slice() else {
        return Err(Error::InvalidSpec("wls needs exactly one transition cost law".into()));
    };
    if s.intensities.len() != 1 {
        return Err(Error::InvalidSpec("wls needs a single-transition scenario".into()));
    }
    let kind = RecordKind::transition(law.from, law.to);
    let mut terms = vec![Term::intercept()];
    let mut truth = vec![law.intercept];
    for (name, b) in &law.beta {
        terms.push(Term::covariate(name));
        truth.push(*b);
    }
    if law.slope != 0.0 {
        terms.push(Term::time(1));
        truth.push(law.slope);
    }
    Ok((kind, DesignFormula::new(terms), truth))
}

/// One estimate from one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub replicate: usize,
    pub estimator: String,
    pub parameter: String,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub error: Option<String>,
}

/// True values the estimators are compared with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOracle {
    pub npv: Option<f64>,
    pub expected_total_undiscounted: Option<f64>,
    pub lin_bias: Option<McEstimate>,
    pub lin_limit: Option<f64>,
    pub coefficients: BTreeMap<String, Vec<(String, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub estimator: String,
    pub parameter: String,
    pub target: f64,
    /// Monte Carlo error of the target itself (zero for exact oracles).
    pub target_se: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: f64,
    pub sd: f64,
    /// `sd / sqrt(n_ok)`.
    pub se_mean: f64,
    pub bias: f64,
    /// `|bias| / sqrt(se_mean² + target_se²)`.
    pub bias_z: f64,
    pub bias_within_3se: bool,
    /// Share of replicates whose nominal 95% interval covers the target.
    pub coverage_95: Option<f64>,
    /// Share of replicates within three standard errors of the target.
    pub within_3se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub config: StudyConfig,
    pub oracle: StudyOracle,
    pub parameters: Vec<ParameterSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub summary: StudySummary,
    pub replicates: Vec<ReplicateEstimate>,
}

/// Oracle values needed by the selected estimators.
pub fn study_oracle(config: &StudyConfig) -> Result<StudyOracle> {
    let s = &config.scenario;
    let has = |e: StudyEstimator| config.estimators.contains(&e);
    let npv = if has(StudyEstimator::BangTsiatis) || has(StudyEstimator::Strawderman) || has(StudyEstimator::NpvProfile) {
        Some(oracle_npv_marginal(s, s.r, OracleOptions::default())?)
    } else {
        None
    };
    let (total, lin_bias, lin_limit) = if has(StudyEstimator::Lin) {
        let total = oracle_npv_marginal(s, 0.0, OracleOptions::default())?;
        let bias = oracle_lin_bias(s, config.oracle_draws, replicate_seed(s.seed, u32::MAX as u64))?;
        (Some(total), Some(bias), Some(total - bias.mean))
    } else {
        (None, None, None)
    };
    let mut coefficients = BTreeMap::new();
    if has(StudyEstimator::Cox) {
        coefficients.insert("cox".to_string(), cox_truth(s)?);
    }
    if has(StudyEstimator::Wls) {
        let (_, formula, truth) = wls_design(s)?;
        coefficients.insert("wls".to_string(), formula.labels().into_iter().zip(truth).collect());
    }
    Ok(StudyOracle {
        npv,
        expected_total_undiscounted: total,
        lin_bias,
        lin_limit,
        coefficients,
    })
}

fn estimate_row(replicate: usize, estimator: StudyEstimator, parameter: &str, value: Result<(f64, Option<f64>)>) -> ReplicateEstimate {
    let (estimate, se, error) = match value {
        Ok((v, se)) => (Some(v), se, None),
        Err(e) => (None, None, Some(e.invariant().to_string())),
    };
    ReplicateEstimate {
        replicate,
        estimator: estimator.name().to_string(),
        parameter: parameter.to_string(),
        estimate,
        se,
        error,
    }
}

/// Multistate plug-in NPV: Nelson–Aalen/Aalen–Johansen, IPC-weighted
/// transition-cost regression on type dummies, exposure-based accrual rates.
pub fn plug_in_npv(spec: &ScenarioSpec, cohort: &Cohort) -> Result<f64> {
    let markov = MarkovFit::nonparametric(&cohort.histories)?;
    let mut terms = Vec::new();
    for law in &spec.intensities {
        let kind = RecordKind::transition(law.from, law.to);
        terms.push(Term::dummy(kind));
        if spec.transition_costs.iter().any(|c| c.from == law.from && c.to == law.to && c.slope != 0.0) {
            terms.push(Term::dummy(kind).times(Factor::Time(1)));
        }
    }
    let formula = DesignFormula::new(terms);
    let data = transition_cost_data(&cohort.histories, &formula, None)?;
    let costs = if data.n_records() == 0 {
        None
    } else {
        let g = CensoringModel::fit(&cohort.histories, None)?;
        let w = ipc_weights(&data, &g, spec.tau)?;
        Some(TransitionCostModel::new(formula, fit_weighted_gls(&data, &w, &OmegaSpec::Identity)?)?)
    };
    let mut grid: Vec<f64> = spec
        .sojourn_costs
        .iter()
        .flat_map(|l| l.rate.breakpoints.iter().copied())
        .filter(|&b| b < spec.tau)
        .chain([0.0, spec.tau])
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let rates = SojournRateModel::from_sojourns(&cohort.sojourn_records(&grid), grid)?;
    let init = InitialDistribution::empirical(&cohort.histories, None)?;
    let report = npv_profile(&CovariateProfile::baseline(), &init, &markov, costs.as_ref(), &rates, spec.r, spec.tau)?;
    Ok(report.unconditional.total)
}

/// One-record-per-subject regression data for the single transition cost.
pub fn single_transition_data(
    spec: &ScenarioSpec,
    histories: &[EventHistory],
    convention: WeightConvention,
) -> Result<(CostRegressionData, Vec<Vec<f64>>)> {
    let (kind, formula, _) = wls_design(spec)?;
    let data = single_transition_cost_data(histories, kind, &formula, spec.tau, convention, None)?;
    let g = CensoringModel::fit(histories, None)?;
    let w = ipc_weights(&data, &g, spec.tau)?;
    Ok((data, w))
}

fn run_replicate(config: &StudyConfig, k: usize) -> Result<Vec<ReplicateEstimate>> {
    let spec = &config.scenario;
    let cohort = simulate_cohort_seeded(spec, replicate_seed(spec.seed, k as u64))?;
    let obs = cohort.observations();
    let mut out = Vec::new();
    for &e in &config.estimators {
        match e {
            StudyEstimator::BangTsiatis => {
                // costs arrive discounted
                let v = bang_tsiatis_npv(&cohort.discounted_totals(spec.r), 0.0, spec.tau, BtForm::Ipcw);
                out.push(estimate_row(k, e, "npv", v.map(|v| (v, None))));
            }
            StudyEstimator::Strawderman => {
                let v = strawderman_npv(&cohort.observed_processes(), &obs, spec.r, spec.tau, StrawdermanForm::Direct);
                out.push(estimate_row(k, e, "npv", v.map(|v| (v, None))));
            }
            StudyEstimator::NpvProfile => {
                out.push(estimate_row(k, e, "npv", plug_in_npv(spec, &cohort).map(|v| (v, None))));
            }
            StudyEstimator::Lin => {
                let v = cohort.panels(&cohort.grid).and_then(|p| lin_interval_npv(&p, &obs));
                out.push(estimate_row(k, e, "total_undiscounted", v.map(|v| (v, None))));
            }
            StudyEstimator::Cox => {
                let truth = cox_truth(spec)?;
                let formula = DesignFormula::new(truth.iter().map(|(n, _)| Term::covariate(n)).collect());
                let fit = fit_cox(&cohort.histories, &CoxSpec::new(formula), CoxOptions::default())
                    .and_then(|f| Ok((f.standard_errors()?, f)));
                for (c, (name, _)) in truth.iter().enumerate() {
                    let v = match &fit {
                        Ok((se, f)) => Ok((f.beta[c], Some(se[c]))),
                        Err(err) => Err(clone_error(err)),
                    };
                    out.push(estimate_row(k, e, name, v));
                }
            }
            StudyEstimator::Wls => {
                let (_, formula, _) = wls_design(spec)?;
                let fit = single_transition_data(spec, &cohort.histories, WeightConvention::TransitionObserved)
                    .and_then(|(d, w)| fit_weighted_gls(&d, &w, &OmegaSpec::Identity));
                for (c, label) in formula.labels().iter().enumerate() {
                    let v = match &fit {
                        Ok(f) => Ok((f.beta[c], Some(f.standard_errors()[c]))),
                        Err(err) => Err(clone_error(err)),
                    };
                    out.push(estimate_row(k, e, label, v));
                }
            }
        }
    }
    Ok(out)
}

/// Errors are not `Clone`; replicate rows only keep the invariant name.
fn clone_error(e: &Error) -> Error {
    Error::NoConvergence(e.invariant().to_string())
}

fn summarize(config: &StudyConfig, oracle: &StudyOracle, rows: &[ReplicateEstimate]) -> Vec<ParameterSummary> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.estimator.clone(), r.parameter.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut out = Vec::with_capacity(keys.len());
    for (estimator, parameter) in keys {
        let (target, target_se) = match estimator.as_str() {
            "lin" => (
                oracle.lin_limit.unwrap_or(f64::NAN),
                oracle.lin_bias.map_or(0.0, |b| b.se),
            ),
            "cox" | "wls" => (
                oracle.coefficients[&estimator]
                    .iter()
                    .find(|(n, _)| *n == parameter)
                    .map_or(f64::NAN, |(_, v)| *v),
                0.0,
            ),
            _ => (oracle.npv.unwrap_or(f64::NAN), 0.0),
        };
        let mine: Vec<&ReplicateEstimate> = rows
            .iter()
            .filter(|r| r.estimator == estimator && r.parameter == parameter)
            .collect();
        let ok: Vec<(f64, Option<f64>)> = mine.iter().filter_map(|r| r.estimate.map(|v| (v, r.se))).collect();
        let n = ok.len() as f64;
        let mean = ok.iter().map(|v| v.0).sum::<f64>() / n;
        let sd = (ok.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let se_mean = sd / n.sqrt();
        let bias = mean - target;
        let bias_z = bias.abs() / (se_mean * se_mean + target_se * target_se).sqrt();
        let with_se: Vec<(f64, f64)> = ok.iter().filter_map(|&(v, se)| se.map(|s| (v, s))).collect();
        let share = |k: f64| {
            (!with_se.is_empty()).then(|| {
                with_se.iter().filter(|(v, s)| (v - target).abs() <= k * s).count() as f64 / with_se.len() as f64
            })
        };
        out.push(ParameterSummary {
            estimator,
            parameter,
            target,
            target_se,
            n_ok: ok.len(),
            n_failed: mine.len() - ok.len(),
            mean,
            sd,
            se_mean,
            bias,
            bias_z,
            bias_within_3se: bias_z < 3.0,
            coverage_95: share(1.959963984540054),
            within_3se: share(3.0),
        });
    }
    let _ = config;
    out
}

/// Runs `config.replicates` independent cohorts in parallel; results are
/// collected in replicate order so the output is schedule-independent.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutput> {
    config.validate()?;
    let oracle = study_oracle(config)?;
    let per: Vec<Vec<ReplicateEstimate>> = (0..config.replicates)
        .into_par_iter()
        .map(|k| run_replicate(config, k))
        .collect::<Result<_>>()?;
    let replicates: Vec<ReplicateEstimate> = per.into_iter().flatten().collect();
    let parameters = summarize(config, &oracle, &replicates);
    Ok(StudyOutput {
        summary: StudySummary {
            config: config.clone(),
            oracle,
            parameters,
        },
        replicates,
    })
}

/// One exact identity evaluated on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckResult {
    fn new(name: &str, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_error,
            tolerance,
            passed: max_error <= tolerance,
            note: None,
        }
    }

    fn skipped(name: &str, note: &str) -> Self {
        Self {
            name: name.into(),
            max_error: 0.0,
            tolerance: 0.0,
            passed: true,
            note: Some(note.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// `max_t |Ŝ(t-) Ĝ(t-) - Y(t)/n|` over the observed times.
pub fn km_duality_error(obs: &[Observation]) -> Result<f64> {
    let s = kaplan_meier_obs(obs)?;
    let g = censoring_km(obs)?;
    let n = obs.len() as f64;
    Ok(obs
        .iter()
        .map(|o| {
            let y = obs.iter().filter(|p| p.time >= o.time).count() as f64;
            (s.left_limit(o.time) * g.left_limit(o.time) - y / n).abs()
        })
        .fold(0.0, f64::max))
}

/// Ordinary least squares on the stacked observed records, solved by SVD.
pub fn ols(data: &CostRegressionData) -> Result<DVector<f64>> {
    let rows: Vec<(Vec<f64>, f64)> = data
        .subjects
        .iter()
        .flat_map(|s| {
            (0..s.len())
                .filter(|&g| s.s[g])
                .map(|g| (s.x.row(g).iter().copied().collect::<Vec<_>>(), s.y[g]))
                .collect::<Vec<_>>()
        })
        .collect();
    let p = data.p();
    let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i].0[j]);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let svd = x.svd(true, true);
    if svd.rank(1e-12 * svd.singular_values.max()) < p {
        return Err(Error::SingularDesign);
    }
    svd.solve(&y, 1e-12).map_err(|_| Error::SingularDesign)
}

/// Exact identities on one dataset: the two IPCW forms, `Ŝ Ĝ = Y/n`,
/// the Strawderman duality, Aalen–Johansen row sums and the GLS/OLS
/// reduction for transition costs.
pub fn run_checks(histories: &[EventHistory], processes: Option<&[CostProcess]>, r: f64, tau: f64) -> Result<CheckReport> {
    let obs: Vec<Observation> = histories.iter().map(|h| cost_observation(h, tau)).collect();
    let owned: Vec<CostProcess>;
    let procs = match processes {
        Some(p) => p,
        None => {
            owned = histories
                .iter()
                .map(|h| CostProcess::from_atoms(h.subject_id.clone(), h.events().iter().map(|e| (e.time, e.cost)).collect()))
                .collect::<Result<_>>()?;
            &owned
        }
    };
    let mut checks = Vec::new();
    let costs: Vec<CensoredCost> = procs
        .iter()
        .zip(&obs)
        .map(|(p, o)| {
            if o.event {
                CensoredCost::observed(o.time, p.discounted(r, o.time.min(tau)) + p.initial_cost)
            } else {
                CensoredCost::censored(o.time)
            }
        })
        .collect();
    let a = bang_tsiatis_npv(&costs, 0.0, tau, BtForm::Ipcw)?;
    let b = bang_tsiatis_npv(&costs, 0.0, tau, BtForm::SurvivalWeighted)?;
    checks.push(CheckResult::new("ipcw_forms_agree", relative(a, b), 1e-10));
    checks.push(CheckResult::new("km_censoring_duality", km_duality_error(&obs)?, 1e-12));
    let truncated: Vec<CostProcess> = procs.iter().zip(&obs).map(|(p, o)| p.truncated(o.time)).collect();
    let d = strawderman_npv(&truncated, &obs, r, tau, StrawdermanForm::Direct)?;
    let u = strawderman_npv(&truncated, &obs, r, tau, StrawdermanForm::Dual)?;
    checks.push(CheckResult::new("strawderman_duality", relative(d, u), 1e-10));
    let cp = counting_processes(histories)?;
    match nelson_aalen(&cp).and_then(|a| aalen_johansen(&a, &[cp.horizon])) {
        Ok(path) => checks.push(CheckResult::new("aalen_johansen_row_sums", path.max_row_sum_error(), 1e-12)),
        Err(e) => return Err(e),
    }
    let mut kinds: Vec<RecordKind> = histories
        .iter()
        .flat_map(|h| h.events().iter().map(|e| RecordKind::transition(e.from_state, e.to_state)))
        .collect();
    kinds.sort();
    kinds.dedup();
    if kinds.is_empty() {
        checks.push(CheckResult::skipped("gls_reduces_to_ols", "no observed transitions"));
    } else {
        let data = transition_cost_data(histories, &DesignFormula::dummies(&kinds), None)?;
        let w: Vec<Vec<f64>> = data.subjects.iter().map(|s| vec![1.0; s.len()]).collect();
        let gls = fit_weighted_gls(&data, &w, &OmegaSpec::RandomEffects { sigma_u2: 2.5, sigma_a2: 0.0 })?;
        let reference = ols(&data)?;
        let err = gls
            .beta
            .iter()
            .zip(reference.iter())
            .map(|(a, b)| relative(*a, *b))
            .fold(0.0, f64::max);
        checks.push(CheckResult::new("gls_reduces_to_ols", err, 1e-10));
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(CheckReport { checks, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{CensoringLaw, CostNoise, IntensityLaw, PiecewiseConstant, SojournLaw, TransitionCostLaw};

    fn scenario() -> ScenarioSpec {
        let law = |from, to, rate| IntensityLaw {
            from,
            to,
            baseline: PiecewiseConstant::constant(rate),
            beta: BTreeMap::new(),
        };
        let cost = |from, to, c| TransitionCostLaw {
            from,
            to,
            intercept: c,
            slope: 0.0,
            beta: BTreeMap::new(),
            noise: CostNoise::Lognormal { sigma: 0.5 },
            sigma_beta: BTreeMap::new(),
        };
        ScenarioSpec {
            states: vec!["well".into(), "ill".into(), "dead".into()],
            absorbing: vec![2],
            initial: None,
            covariates: vec![],
            intensities: vec![law(0, 1, 0.3), law(0, 2, 0.1), law(1, 2, 0.4)],
            transition_costs: vec![cost(0, 1, 1000.0), cost(1, 2, 500.0), cost(0, 2, 200.0)],
            sojourn_costs: vec![SojournLaw {
                state: 1,
                rate: PiecewiseConstant {
                    breakpoints: vec![0.0, 2.0],
                    values: vec![100.0, 50.0],
                },
            }],
            sojourn_effect_sd: 0.3,
            censoring: CensoringLaw::Uniform { lo: 0.0, hi: 8.0 },
            r: 0.03,
            tau: 4.0,
            grid: Some(vec![0.0, 1.0, 2.0, 3.0, 4.0]),
            n: 150,
            seed: 9,
        }
    }

    #[test]
    fn checks_pass_on_simulated_data() {
        let s = scenario();
        let c = simulate_cohort_seeded(&s, 4).unwrap();
        let rep = run_checks(&c.histories, Some(&c.processes), s.r, s.tau).unwrap();
        assert!(rep.passed, "{rep:?}");
        let rep = run_checks(&c.histories, None, s.r, s.tau).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn small_study_is_schedule_independent() {
        let config = StudyConfig {
            scenario: ScenarioSpec { n: 60, ..scenario() },
            replicates: 6,
            estimators: vec![StudyEstimator::BangTsiatis, StudyEstimator::Strawderman, StudyEstimator::NpvProfile, StudyEstimator::Lin],
            oracle_draws: 20000,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_study(&config).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(serde_json::to_string(&a.summary).unwrap(), serde_json::to_string(&b.summary).unwrap());
        assert_eq!(a.replicates, b.replicates);
        assert_eq!(a.summary.parameters.len(), 4);
        assert!(a.summary.parameters.iter().all(|p| p.n_failed == 0));
    }

    #[test]
    fn uncensored_estimators_equal_full_mean() {
        let mut s = scenario();
        s.censoring = CensoringLaw::None;
        let c = simulate_cohort_seeded(&s, 2).unwrap();
        let full = c.full_mean(s.r);
        let bt = bang_tsiatis_npv(&c.discounted_totals(s.r), 0.0, s.tau, BtForm::Ipcw).unwrap();
        let st = strawderman_npv(&c.observed_processes(), &c.observations(), s.r, s.tau, StrawdermanForm::Direct).unwrap();
        assert!((bt - full).abs() < 1e-10 * full);
        assert!((st - full).abs() < 1e-10 * full);
    }
}
