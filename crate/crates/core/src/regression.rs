//! Inverse-probability-of-censoring weighted cost regression: the weighted
//! estimating equation with a general link, the random-effects GLS estimator,
//! moment estimates of the variance components, and sandwich variances.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{DesignFormula, RecordKind};
use crate::error::{Error, Result};
use crate::event_history::EventHistory;
use crate::linalg::{checked_inverse, symmetrize};
use crate::survival::{subject_stratum, CensoringModel};

/// Cost records of one subject in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecords {
    pub subject_id: String,
    /// Costs; entries of unobserved rows are ignored.
    pub y: Vec<f64>,
    /// `n_i × p` design.
    pub x: DMatrix<f64>,
    /// Record end times `t_ig`.
    pub t: Vec<f64>,
    /// Observability flags `s_ig`; once false, false for the rest.
    pub s: Vec<bool>,
    /// Censoring stratum of the subject.
    pub stratum: String,
    pub kinds: Vec<Option<RecordKind>>,
}

impl SubjectRecords {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Rows up to and including the last observed one.
    fn n_observed(&self) -> usize {
        self.s.iter().filter(|&&s| s).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRegressionData {
    pub labels: Vec<String>,
    pub subjects: Vec<SubjectRecords>,
}

impl CostRegressionData {
    pub fn new(labels: Vec<String>, subjects: Vec<SubjectRecords>) -> Result<Self> {
        let p = labels.len();
        for s in &subjects {
            let n = s.y.len();
            if s.x.nrows() != n || s.t.len() != n || s.s.len() != n || s.kinds.len() != n {
                return Err(Error::InvalidInput(format!(
                    "records of {} have inconsistent lengths",
                    s.subject_id
                )));
            }
            if s.x.ncols() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    actual: s.x.ncols(),
                });
            }
            if s.t.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::NonMonotoneTimes {
                    subject: s.subject_id.clone(),
                    time: s.t.windows(2).find(|w| w[1] < w[0]).map_or(0.0, |w| w[1]),
                });
            }
            if s.s.windows(2).any(|w| !w[0] && w[1]) {
                return Err(Error::InvalidInput(format!(
                    "records of {} are observed after an unobserved one",
                    s.subject_id
                )));
            }
            if s.y.iter().zip(&s.s).any(|(y, &obs)| obs && !y.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "observed cost of {} is not finite",
                    s.subject_id
                )));
            }
        }
        Ok(Self { labels, subjects })
    }

    pub fn p(&self) -> usize {
        self.labels.len()
    }

    pub fn n_records(&self) -> usize {
        self.subjects.iter().map(SubjectRecords::len).sum()
    }

    /// Duplicate every subject (used to check `1/n` scaling).
    pub fn replicated(&self, times: usize) -> Self {
        let mut subjects = Vec::with_capacity(self.subjects.len() * times);
        for k in 0..times {
            subjects.extend(self.subjects.iter().cloned().map(|mut s| {
                s.subject_id = format!("{}#{k}", s.subject_id);
                s
            }));
        }
        Self {
            labels: self.labels.clone(),
            subjects,
        }
    }
}

/// One row of `cost-records.csv`, before the design is attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub subject_id: String,
    pub seq: usize,
    pub t_end: f64,
    pub cost: Option<f64>,
    pub observed: bool,
    #[serde(default)]
    pub kind: Option<RecordKind>,
}

/// Attaches design rows from `formula` to grouped records.
pub fn design_records(
    records: &[CostRecord],
    histories: &[EventHistory],
    formula: &DesignFormula,
    strata: Option<&str>,
) -> Result<CostRegressionData> {
    let by_id: BTreeMap<&str, &EventHistory> = histories.iter().map(|h| (h.subject_id.as_str(), h)).collect();
    let mut grouped: BTreeMap<&str, Vec<&CostRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.subject_id.as_str()).or_default().push(r);
    }
    let mut subjects = Vec::with_capacity(grouped.len());
    for h in histories {
        let Some(rows) = grouped.get_mut(h.subject_id.as_str()) else {
            continue;
        };
        rows.sort_by_key(|r| r.seq);
        let p = formula.len();
        let mut x = DMatrix::zeros(rows.len(), p);
        for (g, r) in rows.iter().enumerate() {
            let kind = r.kind.ok_or_else(|| {
                Error::InvalidInput(format!("record {} of {} lacks a record kind", r.seq, r.subject_id))
            })?;
            let row = formula.row(kind, r.t_end, &h.covariates)?;
            for (c, v) in row.into_iter().enumerate() {
                x[(g, c)] = v;
            }
        }
        subjects.push(SubjectRecords {
            subject_id: h.subject_id.clone(),
            y: rows.iter().map(|r| r.cost.unwrap_or(0.0)).collect(),
            x,
            t: rows.iter().map(|r| r.t_end).collect(),
            s: rows.iter().map(|r| r.observed && r.cost.is_some()).collect(),
            stratum: subject_stratum(h, strata)?,
            kinds: rows.iter().map(|r| r.kind).collect(),
        });
    }
    if let Some(id) = grouped.keys().find(|id| !by_id.contains_key(*id)) {
        return Err(Error::InvalidInput(format!("cost records for unknown subject {id}")));
    }
    CostRegressionData::new(formula.labels(), subjects)
}

/// Records for every observed transition (all observed by construction).
pub fn transition_records(histories: &[EventHistory]) -> Vec<CostRecord> {
    histories
        .iter()
        .flat_map(|h| {
            h.events().iter().enumerate().map(move |(k, e)| CostRecord {
                subject_id: h.subject_id.clone(),
                seq: k,
                t_end: e.time,
                cost: Some(e.cost),
                observed: true,
                kind: Some(RecordKind::transition(e.from_state, e.to_state)),
            })
        })
        .collect()
}

/// Transition-cost regression data straight from histories.
pub fn transition_cost_data(
    histories: &[EventHistory],
    formula: &DesignFormula,
    strata: Option<&str>,
) -> Result<CostRegressionData> {
    design_records(&transition_records(histories), histories, formula, strata)
}

/// Which censoring indicator defines an observed single-transition cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightConvention {
    /// `s = [U ∧ τ ≥ T]`: the cost is realized at `T` only if `T ≤ τ`.
    TransitionObserved,
    /// `s* = [U ≥ T ∧ τ]`, weight `s* / G(T ∧ τ -)`: costs run through
    /// `T ∧ τ`, so follow-up reaching `τ` counts as complete.
    LinTruncated,
}

/// `s` and record time for one single-transition subject with follow-up
/// `time = min(T, U)`, `event = [T ≤ U]`.
pub fn single_transition_flag(time: f64, event: bool, tau: f64, convention: WeightConvention) -> (bool, f64) {
    match convention {
        WeightConvention::TransitionObserved => (event && time <= tau, time.min(tau)),
        WeightConvention::LinTruncated => (event || time >= tau, time.min(tau)),
    }
}

/// One record per subject for the transition `kind`: `y` is that
/// transition's cost, `s` and the record time follow `convention`, and the
/// design is evaluated at the record time.
pub fn single_transition_cost_data(
    histories: &[EventHistory],
    kind: RecordKind,
    formula: &DesignFormula,
    tau: f64,
    convention: WeightConvention,
    strata: Option<&str>,
) -> Result<CostRegressionData> {
    let RecordKind::Transition { from, to } = kind else {
        return Err(Error::InvalidInput("single-transition data needs a transition kind".into()));
    };
    let mut subjects = Vec::with_capacity(histories.len());
    for h in histories {
        let (time, event) = h.survival_observation();
        let (s, t) = single_transition_flag(time, event, tau, convention);
        let y = h
            .events()
            .iter()
            .find(|e| e.from_state == from && e.to_state == to)
            .map_or(0.0, |e| e.cost);
        let row = formula.row(kind, t, &h.covariates)?;
        subjects.push(SubjectRecords {
            subject_id: h.subject_id.clone(),
            y: vec![y],
            x: DMatrix::from_row_slice(1, row.len(), &row),
            t: vec![t],
            s: vec![s],
            stratum: subject_stratum(h, strata)?,
            kinds: vec![Some(kind)],
        });
    }
    CostRegressionData::new(formula.labels(), subjects)
}

/// `w_ig = s_ig / Ĝ(t_ig ∧ τ - | stratum)`.
pub fn ipc_weights(data: &CostRegressionData, censoring: &CensoringModel, tau: f64) -> Result<Vec<Vec<f64>>> {
    data.subjects
        .iter()
        .map(|s| {
            s.t.iter()
                .zip(&s.s)
                .map(|(&t, &obs)| {
                    if obs {
                        Ok(1.0 / censoring.left_limit(&s.stratum, t.min(tau))?)
                    } else {
                        Ok(0.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Working covariance `Ω_i` of a subject's records.
#[derive(Debug, Clone, PartialEq)]
pub enum OmegaSpec {
    Identity,
    /// `σ_u² I + σ_a² J`.
    RandomEffects { sigma_u2: f64, sigma_a2: f64 },
    /// One matrix per subject, at least as large as its record count.
    User(Vec<DMatrix<f64>>),
}

impl OmegaSpec {
    fn components(&self) -> (f64, f64) {
        match self {
            OmegaSpec::RandomEffects { sigma_u2, sigma_a2 } => (*sigma_u2, *sigma_a2),
            _ => (1.0, 0.0),
        }
    }

    pub fn matrix(&self, subject: usize, n: usize) -> Result<DMatrix<f64>> {
        match self {
            OmegaSpec::Identity => Ok(DMatrix::identity(n, n)),
            OmegaSpec::RandomEffects { sigma_u2, sigma_a2 } => {
                if !(*sigma_u2 > 0.0) || !(*sigma_a2 >= 0.0) {
                    return Err(Error::NonPositiveDefiniteOmega(format!(
                        "sigma_u2 = {sigma_u2}, sigma_a2 = {sigma_a2}"
                    )));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| if i == j { sigma_u2 + sigma_a2 } else { *sigma_a2 }))
            }
            OmegaSpec::User(ms) => {
                let m = ms.get(subject).ok_or_else(|| {
                    Error::NonPositiveDefiniteOmega(format!("no matrix for subject {subject}"))
                })?;
                if m.nrows() < n || m.ncols() < n {
                    return Err(Error::NonPositiveDefiniteOmega(format!(
                        "matrix for subject {subject} is smaller than {n}"
                    )));
                }
                Ok(m.view((0, 0), (n, n)).into_owned())
            }
        }
    }
}

/// `M_i = w_i^{1/2} L_i^{-1}` restricted to the observed rows.
#[derive(Debug, Clone)]
struct Transformed {
    m: DMatrix<f64>,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

fn transform(data: &CostRegressionData, weights: &[Vec<f64>], omega: &OmegaSpec) -> Result<Vec<Transformed>> {
    if weights.len() != data.subjects.len() {
        return Err(Error::DimensionMismatch {
            expected: data.subjects.len(),
            actual: weights.len(),
        });
    }
    let mut out = Vec::with_capacity(data.subjects.len());
    for (i, (s, w)) in data.subjects.iter().zip(weights).enumerate() {
        if w.len() != s.len() {
            return Err(Error::DimensionMismatch {
                expected: s.len(),
                actual: w.len(),
            });
        }
        if w.iter().zip(&s.s).any(|(&w, &obs)| !(w >= 0.0 && w.is_finite()) || (!obs && w != 0.0)) {
            return Err(Error::InvalidInput(format!(
                "weights of {} must be finite, nonnegative and zero on unobserved rows",
                s.subject_id
            )));
        }
        // trailing unobserved rows are annihilated by w^{1/2} and do not
        // enter earlier rows of the lower-triangular L^{-1}
        let n = s.n_observed();
        if n == 0 {
            continue;
        }
        let omega_i = omega.matrix(i, n)?;
        let chol = omega_i.clone().cholesky().ok_or_else(|| {
            Error::NonPositiveDefiniteOmega(format!("Omega of {} is not positive definite", s.subject_id))
        })?;
        let l = chol.l();
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::NonPositiveDefiniteOmega(s.subject_id.clone()))?;
        let mut m = l_inv;
        for g in 0..n {
            let sw = w[g].sqrt();
            for c in 0..n {
                m[(g, c)] *= sw;
            }
        }
        out.push(Transformed {
            m,
            x: s.x.rows(0, n).into_owned(),
            y: DVector::from_iterator(n, s.y[..n].iter().copied()),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Identity,
    Log,
    Custom,
}

/// Link `h` with `h(μ) = x'β`.
#[derive(Debug, Clone, Copy)]
pub enum Link {
    Identity,
    Log,
    /// Only the inverse link `μ = h^{-1}(η)` is needed; its derivative is
    /// taken numerically.
    Custom { inverse: fn(f64) -> f64 },
}

impl Link {
    pub fn kind(&self) -> LinkKind {
        match self {
            Link::Identity => LinkKind::Identity,
            Link::Log => LinkKind::Log,
            Link::Custom { .. } => LinkKind::Custom,
        }
    }

    pub fn mean(&self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Log => eta.exp(),
            Link::Custom { inverse } => inverse(eta),
        }
    }

    /// `dμ/dη = (dh/dμ)^{-1}`.
    pub fn derivative(&self, eta: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Log => eta.exp(),
            Link::Custom { inverse } => {
                let h = f64::EPSILON.cbrt() * eta.abs().max(1.0);
                (inverse(eta + h) - inverse(eta - h)) / (2.0 * h)
            }
        }
    }
}

impl PartialEq for Link {
    fn eq(&self, other: &Self) -> bool {
        self.kind() == other.kind()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReFit {
    pub labels: Vec<String>,
    pub beta: DVector<f64>,
    pub link: Link,
    pub sigma_u2: f64,
    pub sigma_a2: f64,
    /// `Â^{-1} B̂ Â^{-1} / n`.
    pub sandwich: DMatrix<f64>,
    pub n_used: usize,
    pub iterations: usize,
    /// Max-norm of the estimating function at `β̂`, relative to its scale.
    pub estimating_norm: f64,
}

impl ReFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.sandwich.nrows()).map(|i| self.sandwich[(i, i)].max(0.0).sqrt()).collect()
    }
}

fn n_used(weights: &[Vec<f64>]) -> usize {
    weights.iter().filter(|w| w.iter().any(|&v| v > 0.0)).count()
}

/// `β̂_w = (Σ X̃'X̃)^{-1} Σ X̃'Ỹ` with `X̃ = w^{1/2} L^{-1} X`.
pub fn fit_weighted_gls(data: &CostRegressionData, weights: &[Vec<f64>], omega: &OmegaSpec) -> Result<ReFit> {
    let tr = transform(data, weights, omega)?;
    let p = data.p();
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for t in &tr {
        let xt = &t.m * &t.x;
        let yt = &t.m * &t.y;
        xtx += xt.transpose() * &xt;
        xty += xt.transpose() * yt;
    }
    if n_used(weights) == 0 {
        return Err(Error::EmptySample);
    }
    symmetrize(&mut xtx);
    let inv = checked_inverse(&xtx).ok_or(Error::SingularDesign)?;
    let beta = &inv * &xty;
    let sandwich = sandwich_variance(data, weights, omega, Link::Identity, &beta)?;
    let (sigma_u2, sigma_a2) = omega.components();
    let norm = estimating_norm(&tr, Link::Identity, &beta);
    Ok(ReFit {
        labels: data.labels.clone(),
        beta,
        link: Link::Identity,
        sigma_u2,
        sigma_a2,
        sandwich,
        n_used: n_used(weights),
        iterations: 1,
        estimating_norm: norm,
    })
}

/// Method-of-moments `(σ̂_u², σ̂_a²)` from weighted residuals on observed rows.
///
/// `σ̂_u² + σ̂_a²` is the weighted mean squared residual; `σ̂_a²` is the
/// weighted mean of within-subject residual cross-products over observed
/// pairs (weight of the later row), truncated at zero. `σ̂_u²` is floored at
/// `1e-8 · max(total, 1)`.
pub fn estimate_variance_components(
    data: &CostRegressionData,
    weights: &[Vec<f64>],
    beta: &DVector<f64>,
) -> Result<(f64, f64)> {
    let mut sq = 0.0;
    let mut wsum = 0.0;
    let mut cross = 0.0;
    let mut csum = 0.0;
    for (s, w) in data.subjects.iter().zip(weights) {
        let n = s.n_observed();
        let resid: Vec<f64> = (0..n)
            .map(|g| s.y[g] - s.x.row(g).iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        for g in 0..n {
            sq += w[g] * resid[g] * resid[g];
            wsum += w[g];
            for k in 0..g {
                cross += w[g] * resid[g] * resid[k];
                csum += w[g];
            }
        }
    }
    if wsum == 0.0 {
        return Err(Error::EmptySample);
    }
    let total = sq / wsum;
    let sigma_a2 = if csum > 0.0 {
        (cross / csum).max(0.0)
    } else {
        log::warn!("no subject has two observed records; sigma_a2 set to 0");
        0.0
    };
    let floor = 1e-8 * total.max(1.0);
    Ok(((total - sigma_a2).max(floor), sigma_a2))
}

/// Weighted OLS, moment estimates of the variance components, then GLS with
/// the estimated random-effects `Ω`.
pub fn fit_feasible_gls(data: &CostRegressionData, weights: &[Vec<f64>]) -> Result<ReFit> {
    let first = fit_weighted_gls(data, weights, &OmegaSpec::Identity)?;
    let (sigma_u2, sigma_a2) = estimate_variance_components(data, weights, &first.beta)?;
    fit_weighted_gls(data, weights, &OmegaSpec::RandomEffects { sigma_u2, sigma_a2 })
}

#[derive(Debug, Clone, Copy)]
pub struct GeeOptions {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for GeeOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iter: 200,
        }
    }
}

fn linear(x: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    x * beta
}

/// `Σ D_i' M_i' M_i (Y_i - μ_i)`, its scale, and `q̃ = Σ ‖M_i (Y_i - μ_i)‖²`.
fn estimating_function(tr: &[Transformed], link: Link, beta: &DVector<f64>) -> (DVector<f64>, f64, f64) {
    let p = beta.len();
    let mut u = DVector::zeros(p);
    let mut scale = DVector::zeros(p);
    let mut q = 0.0;
    for t in tr {
        let eta = linear(&t.x, beta);
        let mu = eta.map(|e| link.mean(e));
        let d0 = eta.map(|e| link.derivative(e));
        let mut d = t.x.clone();
        for g in 0..d.nrows() {
            for c in 0..p {
                d[(g, c)] *= d0[g];
            }
        }
        let dt = &t.m * &d;
        let r = &t.m * (&t.y - &mu);
        q += r.norm_squared();
        u += dt.transpose() * &r;
        scale += (dt.transpose() * (&t.m * &t.y)).abs();
    }
    (u, scale.amax().max(1.0), q)
}

fn estimating_norm(tr: &[Transformed], link: Link, beta: &DVector<f64>) -> f64 {
    let (u, scale, _) = estimating_function(tr, link, beta);
    u.amax() / scale
}

/// Solves the weighted estimating equation by damped Gauss–Newton steps on
/// `q̃(β) = Σ ‖w^{1/2} L^{-1} (Y - μ(β))‖²`, whose gradient it is.
pub fn fit_weighted_gee(
    data: &CostRegressionData,
    weights: &[Vec<f64>],
    link: Link,
    omega: &OmegaSpec,
    options: GeeOptions,
) -> Result<ReFit> {
    if n_used(weights) == 0 {
        return Err(Error::EmptySample);
    }
    let tr = transform(data, weights, omega)?;
    let p = data.p();
    let mut beta = match link {
        Link::Identity => DVector::zeros(p),
        _ => initial_beta(data, weights, link)?,
    };
    let mut iterations = 0;
    loop {
        let (u, scale, q) = estimating_function(&tr, link, &beta);
        let mut dtd = DMatrix::zeros(p, p);
        for t in &tr {
            let eta = linear(&t.x, &beta);
            let mut d = t.x.clone();
            for g in 0..d.nrows() {
                let d0 = link.derivative(eta[g]);
                for c in 0..p {
                    d[(g, c)] *= d0;
                }
            }
            let dt = &t.m * &d;
            dtd += dt.transpose() * &dt;
        }
        symmetrize(&mut dtd);
        let inv = checked_inverse(&dtd).ok_or(Error::SingularWorkingMatrix)?;
        let step = &inv * &u;
        if u.amax() / scale < options.tolerance || step.amax() <= options.tolerance * (1.0 + beta.amax()) {
            let sandwich = sandwich_variance(data, weights, omega, link, &beta)?;
            let (sigma_u2, sigma_a2) = omega.components();
            return Ok(ReFit {
                labels: data.labels.clone(),
                estimating_norm: u.amax() / scale,
                beta,
                link,
                sigma_u2,
                sigma_a2,
                sandwich,
                n_used: n_used(weights),
                iterations,
            });
        }
        if iterations >= options.max_iter {
            return Err(Error::NoConvergence(format!(
                "estimating equation norm {:e} after {} iterations",
                u.amax() / scale,
                iterations
            )));
        }
        let mut factor = 1.0;
        let mut next = &beta + &step;
        for _ in 0..50 {
            let (_, _, qn) = estimating_function(&tr, link, &next);
            if qn.is_finite() && qn <= q {
                break;
            }
            factor *= 0.5;
            next = &beta + &step * factor;
        }
        beta = next;
        iterations += 1;
    }
}

/// Start for nonlinear links: the link of the weighted mean in the intercept
/// direction when available, zero otherwise.
fn initial_beta(data: &CostRegressionData, weights: &[Vec<f64>], link: Link) -> Result<DVector<f64>> {
    let p = data.p();
    let mut beta = DVector::zeros(p);
    let (mut sy, mut sw) = (0.0, 0.0);
    for (s, w) in data.subjects.iter().zip(weights) {
        for g in 0..s.n_observed() {
            sy += w[g] * s.y[g];
            sw += w[g];
        }
    }
    if sw == 0.0 {
        return Err(Error::EmptySample);
    }
    let mean = sy / sw;
    // columns that are identically one on observed rows act as intercepts
    let intercept = (0..p).find(|&c| {
        data.subjects
            .iter()
            .all(|s| (0..s.n_observed()).all(|g| s.x[(g, c)] == 1.0))
    });
    if let (Some(c), Link::Log) = (intercept, link) {
        if mean > 0.0 {
            beta[c] = mean.ln();
        }
    }
    Ok(beta)
}

/// `(Σ A_i)^{-1} (Σ S_i S_i') (Σ A_i)^{-T}` at `β`, i.e. `Â^{-1} B̂ Â^{-1} / n`
/// with sample-average plug-ins.
pub fn sandwich_variance(
    data: &CostRegressionData,
    weights: &[Vec<f64>],
    omega: &OmegaSpec,
    link: Link,
    beta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let tr = transform(data, weights, omega)?;
    let p = beta.len();
    let mut a = DMatrix::zeros(p, p);
    let mut b = DMatrix::zeros(p, p);
    for t in &tr {
        let eta = linear(&t.x, beta);
        let mu = eta.map(|e| link.mean(e));
        let mut d = t.x.clone();
        for g in 0..d.nrows() {
            let d0 = link.derivative(eta[g]);
            for c in 0..p {
                d[(g, c)] *= d0;
            }
        }
        let dt = &t.m * &d;
        let r = &t.m * (&t.y - &mu);
        let si = dt.transpose() * &r;
        b += &si * si.transpose();
        a += dt.transpose() * &dt;
        if let Link::Log = link {
            // derivative of D_i' through μ: X' diag(μ ∘ q) X, q = M'M(Y - μ)
            let q = t.m.transpose() * &r;
            let mut xq = t.x.clone();
            for g in 0..xq.nrows() {
                for c in 0..p {
                    xq[(g, c)] *= mu[g] * q[g];
                }
            }
            a -= t.x.transpose() * xq;
        }
    }
    if let Link::Custom { .. } = link {
        a = numeric_jacobian(&tr, link, beta);
    }
    let a_inv = checked_inverse(&a).ok_or(Error::SingularA)?;
    let mut v = &a_inv * b * a_inv.transpose();
    symmetrize(&mut v);
    Ok(v)
}

/// `-∂/∂β' Σ S_i` by central differences.
fn numeric_jacobian(tr: &[Transformed], link: Link, beta: &DVector<f64>) -> DMatrix<f64> {
    let p = beta.len();
    let mut jac = DMatrix::zeros(p, p);
    for c in 0..p {
        let h = f64::EPSILON.cbrt() * beta[c].abs().max(1.0);
        let mut up = beta.clone();
        up[c] += h;
        let mut dn = beta.clone();
        dn[c] -= h;
        let diff = (estimating_function(tr, link, &up).0 - estimating_function(tr, link, &dn).0) / (2.0 * h);
        for r in 0..p {
            jac[(r, c)] = -diff[r];
        }
    }
    jac
}
