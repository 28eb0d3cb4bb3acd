//! Multiplicative intensity regression `α_hj(t|z) = α_hj0(t) exp(β' z_hj(t))`
//! with one shared coefficient vector, fitted by Breslow partial likelihood.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::design::{CovariateLookup, DesignFormula, RecordKind};
use crate::error::{Error, Result};
use crate::event_history::{counting_processes, EventHistory};
use crate::linalg::{spd_inverse, spd_solve};
use crate::markov::{aalen_johansen, CumulativeIntensityMatrix, TransitionMatrixPath};
use crate::stepfn::StepFunction;

/// How each transition type turns subject covariates into `z_hj(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxSpec {
    pub formula: DesignFormula,
}

impl CoxSpec {
    pub fn new(formula: DesignFormula) -> Self {
        Self { formula }
    }

    pub fn dim(&self) -> usize {
        self.formula.len()
    }

    pub fn row(&self, from: usize, to: usize, t: f64, covs: &dyn CovariateLookup) -> Result<Vec<f64>> {
        self.formula.row(RecordKind::transition(from, to), t, covs)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CoxOptions {
    /// Convergence threshold on the max-norm of the score, per event.
    pub tolerance: f64,
    pub max_iter: usize,
    /// `‖β‖` beyond which the likelihood is declared monotone.
    pub beta_bound: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iter: 100,
            beta_bound: 50.0,
        }
    }
}

/// Event time of one transition type with its events and risk set, as row
/// indices into the type's design rows.
#[derive(Debug, Clone)]
struct RiskSetAt {
    time: f64,
    events: Vec<usize>,
    risk: Vec<usize>,
}

#[derive(Debug, Clone)]
struct TypeTable {
    from: usize,
    to: usize,
    rows: Vec<Vec<f64>>,
    sets: Vec<RiskSetAt>,
}

/// Precomputed Breslow partial likelihood for a sample and a specification.
#[derive(Debug, Clone)]
pub struct PartialLikelihood {
    p: usize,
    n_states: usize,
    tables: Vec<TypeTable>,
    n_events: usize,
}

/// Log partial likelihood with its gradient and negative Hessian.
#[derive(Debug, Clone)]
pub struct LikelihoodValue {
    pub loglik: f64,
    pub score: DVector<f64>,
    pub information: DMatrix<f64>,
}

impl PartialLikelihood {
    pub fn new(histories: &[EventHistory], spec: &CoxSpec) -> Result<Self> {
        let cp = counting_processes(histories)?;
        let p = spec.dim();
        let fixed = !spec.formula.uses_time() && histories.iter().all(|h| h.covariates.is_time_fixed());
        let mut tables = Vec::new();
        let mut n_events = 0;
        for ((h, j), n) in &cp.n_hj {
            let (h, j) = (*h, *j);
            let times: Vec<f64> = n.jumps().filter(|&(_, d)| d > 0.0).map(|(t, _)| t).collect();
            if times.is_empty() {
                continue;
            }
            let mut table = TypeTable {
                from: h,
                to: j,
                rows: Vec::new(),
                sets: Vec::with_capacity(times.len()),
            };
            // subject rows computed once when nothing depends on time
            let subject_rows: Option<Vec<Vec<f64>>> = if fixed {
                Some(
                    histories
                        .iter()
                        .map(|hist| spec.row(h, j, 0.0, &hist.covariates))
                        .collect::<Result<_>>()?,
                )
            } else {
                None
            };
            if let Some(rows) = subject_rows {
                table.rows = rows;
            }
            for &t in &times {
                let mut set = RiskSetAt {
                    time: t,
                    events: Vec::new(),
                    risk: Vec::new(),
                };
                for (i, hist) in histories.iter().enumerate() {
                    if !hist.at_risk(h, t) {
                        continue;
                    }
                    let idx = if fixed {
                        i
                    } else {
                        table.rows.push(spec.row(h, j, t, &hist.covariates)?);
                        table.rows.len() - 1
                    };
                    set.risk.push(idx);
                    if hist
                        .events()
                        .iter()
                        .any(|e| e.time == t && e.from_state == h && e.to_state == j)
                    {
                        set.events.push(idx);
                    }
                }
                if set.events.is_empty() || set.risk.is_empty() {
                    return Err(Error::JumpWithEmptyRiskSet { from: h, to: j, time: t });
                }
                n_events += set.events.len();
                table.sets.push(set);
            }
            tables.push(table);
        }
        if n_events == 0 {
            return Err(Error::NoEvents);
        }
        Ok(Self {
            p,
            n_states: cp.n_states,
            tables,
            n_events,
        })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    fn linear_predictors(&self, table: &TypeTable, beta: &DVector<f64>) -> Vec<f64> {
        table
            .rows
            .iter()
            .map(|r| r.iter().zip(beta.iter()).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn loglik(&self, beta: &DVector<f64>) -> f64 {
        let mut ll = 0.0;
        for table in &self.tables {
            let eta = self.linear_predictors(table, beta);
            for set in &table.sets {
                let shift = set.risk.iter().map(|&l| eta[l]).fold(f64::NEG_INFINITY, f64::max);
                let s0: f64 = set.risk.iter().map(|&l| (eta[l] - shift).exp()).sum();
                let d = set.events.len() as f64;
                ll += set.events.iter().map(|&e| eta[e]).sum::<f64>() - d * (shift + s0.ln());
            }
        }
        ll
    }

    pub fn evaluate(&self, beta: &DVector<f64>) -> LikelihoodValue {
        let p = self.p;
        let mut ll = 0.0;
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for table in &self.tables {
            let eta = self.linear_predictors(table, beta);
            for set in &table.sets {
                let shift = set.risk.iter().map(|&l| eta[l]).fold(f64::NEG_INFINITY, f64::max);
                let mut s0 = 0.0;
                let mut s1 = vec![0.0; p];
                let mut s2 = vec![0.0; p * p];
                for &l in &set.risk {
                    let w = (eta[l] - shift).exp();
                    let z = &table.rows[l];
                    s0 += w;
                    for a in 0..p {
                        s1[a] += w * z[a];
                        for b in 0..=a {
                            s2[a * p + b] += w * z[a] * z[b];
                        }
                    }
                }
                let d = set.events.len() as f64;
                ll += set.events.iter().map(|&e| eta[e]).sum::<f64>() - d * (shift + s0.ln());
                for &e in &set.events {
                    for a in 0..p {
                        score[a] += table.rows[e][a];
                    }
                }
                for a in 0..p {
                    let ma = s1[a] / s0;
                    score[a] -= d * ma;
                    for b in 0..=a {
                        let v = d * (s2[a * p + b] / s0 - ma * s1[b] / s0);
                        info[(a, b)] += v;
                        if a != b {
                            info[(b, a)] += v;
                        }
                    }
                }
            }
        }
        LikelihoodValue {
            loglik: ll,
            score,
            information: info,
        }
    }

    /// Breslow `ΔÂ_hj0(t) = ΔN_hj(t) / Σ_{l at risk} exp(β' z_hj,l(t))`.
    pub fn breslow(&self, beta: &DVector<f64>) -> BTreeMap<(usize, usize), Vec<(f64, f64)>> {
        let mut out = BTreeMap::new();
        for table in &self.tables {
            let eta = self.linear_predictors(table, beta);
            let inc = table
                .sets
                .iter()
                .map(|set| {
                    let s0: f64 = set.risk.iter().map(|&l| eta[l].exp()).sum();
                    (set.time, set.events.len() as f64 / s0)
                })
                .collect();
            out.insert((table.from, table.to), inc);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CoxFit {
    pub spec: CoxSpec,
    pub n_states: usize,
    pub beta: DVector<f64>,
    /// Breslow increments per transition type.
    pub baseline_increments: BTreeMap<(usize, usize), Vec<(f64, f64)>>,
    pub loglik: f64,
    /// Log partial likelihood after each accepted step, starting at `β = 0`.
    pub loglik_path: Vec<f64>,
    pub information: DMatrix<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub n_events: usize,
}

impl CoxFit {
    /// Cumulative baselines `Â_hj0` as step functions.
    pub fn baselines(&self) -> BTreeMap<(usize, usize), StepFunction> {
        self.baseline_increments
            .iter()
            .map(|(&k, inc)| (k, StepFunction::from_increments(0.0, inc.iter().copied())))
            .collect()
    }

    /// Model-based standard errors `sqrt(diag(I(β̂)^{-1}))`.
    pub fn standard_errors(&self) -> Result<Vec<f64>> {
        let inv = spd_inverse(&self.information).ok_or(Error::SingularInformation)?;
        Ok((0..inv.nrows()).map(|i| inv[(i, i)].sqrt()).collect())
    }

    pub fn labels(&self) -> Vec<String> {
        self.spec.formula.labels()
    }

    /// `Â(·|z)` and `P̂(0,·|z)` for a fixed covariate profile, on the baseline
    /// jump times plus `horizon`.
    pub fn predict_profile(
        &self,
        z: &dyn CovariateLookup,
        horizon: f64,
    ) -> Result<(CumulativeIntensityMatrix, TransitionMatrixPath)> {
        let mut inc = BTreeMap::new();
        for (&(h, j), base) in &self.baseline_increments {
            let mut v = Vec::with_capacity(base.len());
            for &(t, d) in base.iter().filter(|(t, _)| *t <= horizon) {
                let row = self.spec.row(h, j, t, z)?;
                let eta: f64 = row.iter().zip(self.beta.iter()).map(|(a, b)| a * b).sum();
                v.push((t, if eta == 0.0 { d } else { d * eta.exp() }));
            }
            inc.insert((h, j), v);
        }
        let a = CumulativeIntensityMatrix::from_increments(self.n_states, inc)?;
        let p = aalen_johansen(&a, &[horizon])?;
        Ok((a, p))
    }
}

/// Maximizes the Breslow log partial likelihood by damped Newton steps from
/// `β = 0`.
pub fn fit_cox(histories: &[EventHistory], spec: &CoxSpec, options: CoxOptions) -> Result<CoxFit> {
    let pl = PartialLikelihood::new(histories, spec)?;
    let p = pl.dim();
    let mut beta = DVector::zeros(p);
    let mut value = pl.evaluate(&beta);
    let mut path = vec![value.loglik];
    let mut step_norms: Vec<f64> = Vec::new();
    // steps that stay large while the likelihood flattens mean β̂ runs off
    // to infinity
    let diverging = |norms: &[f64], beta: &DVector<f64>| {
        norms.len() >= 4
            && norms[norms.len() - 4..].windows(2).all(|w| w[1] >= 0.5 * w[0])
            && norms.last().is_some_and(|&s| s > 0.1)
            || beta.norm() > options.beta_bound
    };
    let monotone = |beta: &DVector<f64>| Error::MonotoneLikelihood {
        norm: beta.norm(),
        bound: options.beta_bound,
    };
    let tolerance = options.tolerance * pl.n_events().max(1) as f64;
    for iter in 0..options.max_iter {
        let grad = value.score.amax();
        let step = spd_solve(&value.information, &value.score);
        let step = match step {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ if diverging(&step_norms, &beta) => return Err(monotone(&beta)),
            _ if grad < tolerance => return Ok(finish(spec, &pl, beta, value, path, iter)),
            _ => return Err(Error::SingularInformation),
        };
        let decrement = value.score.dot(&step);
        if grad < tolerance && step.amax() < 1e-6
            || step.amax() < 1e-12 * (1.0 + beta.amax())
            || decrement <= 1e-10 * (1.0 + value.loglik.abs()) && step.amax() < 1e-4 * (1.0 + beta.amax())
        {
            return Ok(finish(spec, &pl, beta, value, path, iter));
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &beta + &step * scale;
            let ll = pl.loglik(&cand);
            if ll >= value.loglik {
                accepted = Some(cand);
                break;
            }
            scale *= 0.5;
        }
        let Some(next) = accepted else {
            if diverging(&step_norms, &beta) {
                return Err(monotone(&beta));
            }
            // no ascent possible along the Newton direction: at a maximum up
            // to rounding
            if grad < tolerance.sqrt() {
                return Ok(finish(spec, &pl, beta, value, path, iter));
            }
            return Err(Error::NoConvergence(format!(
                "step halving failed at iteration {iter} with score norm {grad:e}"
            )));
        };
        step_norms.push((&next - &beta).norm());
        beta = next;
        if beta.norm() > options.beta_bound {
            return Err(monotone(&beta));
        }
        value = pl.evaluate(&beta);
        path.push(value.loglik);
    }
    Err(Error::NoConvergence(format!(
        "Newton iterations exceeded {} (score norm {:e})",
        options.max_iter,
        value.score.amax()
    )))
}

fn finish(
    spec: &CoxSpec,
    pl: &PartialLikelihood,
    beta: DVector<f64>,
    value: LikelihoodValue,
    path: Vec<f64>,
    iterations: usize,
) -> CoxFit {
    CoxFit {
        spec: spec.clone(),
        n_states: pl.n_states,
        baseline_increments: pl.breslow(&beta),
        beta,
        loglik: value.loglik,
        loglik_path: path,
        gradient_norm: value.score.amax(),
        information: value.information,
        iterations,
        n_events: pl.n_events,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Term;
    use crate::event_history::{Covariates, StateSpace, TransitionEvent};
    use crate::markov::nelson_aalen;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn two_state(data: &[(f64, bool, f64)]) -> Vec<EventHistory> {
        let ss = Arc::new(StateSpace::two_state());
        data.iter()
            .enumerate()
            .map(|(i, &(t, ev, x))| {
                let (evs, u) = if ev {
                    (vec![TransitionEvent { time: t, from_state: 0, to_state: 1, cost: 0.0 }], None)
                } else {
                    (vec![], Some(t))
                };
                EventHistory::new(i.to_string(), ss.clone(), 0, evs, u, 10.0, Covariates::fixed([("x", x)]))
                    .unwrap()
            })
            .collect()
    }

    fn x_spec() -> CoxSpec {
        CoxSpec::new(DesignFormula::new(vec![Term::covariate("x")]))
    }

    #[test]
    fn four_subject_fit_matches_grid_search() {
        // events at 1<2<3<4 with x = 1,0,1,0
        let hs = two_state(&[(1.0, true, 1.0), (2.0, true, 0.0), (3.0, true, 1.0), (4.0, true, 0.0)]);
        let fit = fit_cox(&hs, &x_spec(), CoxOptions::default()).unwrap();
        // independent log partial likelihood written out term by term
        let lpl = |b: f64| {
            let e = b.exp();
            (b - (2.0 * e + 2.0).ln()) + (0.0 - (e + 2.0).ln()) + (b - (e + 1.0).ln()) + (0.0 - 1.0f64.ln())
        };
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if lpl(m1) < lpl(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        assert!((fit.beta[0] - 0.5 * (lo + hi)).abs() < 1e-6);
        assert!((fit.loglik - lpl(fit.beta[0])).abs() < 1e-12);
        assert!(fit.gradient_norm < 1e-9);
        assert!(fit.loglik_path.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn zero_covariates_collapse_to_nelson_aalen() {
        let hs = two_state(&[(1.0, true, 0.0), (2.0, false, 0.0), (2.5, true, 0.0), (3.0, true, 0.0)]);
        let fit = fit_cox(&hs, &x_spec(), CoxOptions::default()).unwrap();
        assert_eq!(fit.beta[0], 0.0);
        let na = nelson_aalen(&counting_processes(&hs).unwrap()).unwrap();
        assert_eq!(&fit.baselines()[&(0, 1)], na.get(0, 1).unwrap());
        let z: BTreeMap<String, f64> = [("x".to_string(), 0.0)].into_iter().collect();
        let (a, _) = fit.predict_profile(&z, 10.0).unwrap();
        assert_eq!(a.get(0, 1), na.get(0, 1));
    }

    #[test]
    fn monotone_likelihood_detected() {
        // every event happens in the x=1 group while x=0 subjects are at risk
        let hs = two_state(&[(1.0, true, 1.0), (2.0, true, 1.0), (3.0, false, 0.0), (4.0, false, 0.0)]);
        let err = fit_cox(&hs, &x_spec(), CoxOptions::default()).unwrap_err();
        assert_eq!(err.invariant(), "MonotoneLikelihood");
    }

    #[test]
    fn no_events_is_an_error() {
        let hs = two_state(&[(1.0, false, 1.0), (2.0, false, 0.0)]);
        assert_eq!(fit_cox(&hs, &x_spec(), CoxOptions::default()).unwrap_err().invariant(), "NoEvents");
    }

    #[test]
    fn prediction_scales_increments_by_exp_beta() {
        let hs = two_state(&[(1.0, true, 1.0), (2.0, true, 0.0), (3.0, true, 1.0), (4.0, true, 0.0), (5.0, true, 0.5)]);
        let fit = fit_cox(&hs, &x_spec(), CoxOptions::default()).unwrap();
        let z1: BTreeMap<String, f64> = [("x".to_string(), 0.1)].into_iter().collect();
        let z2: BTreeMap<String, f64> = [("x".to_string(), 0.2)].into_iter().collect();
        let (a1, p1) = fit.predict_profile(&z1, 4.5).unwrap();
        let (a2, _) = fit.predict_profile(&z2, 4.5).unwrap();
        for t in [1.0, 2.0, 3.0, 4.0] {
            let ratio = a2.increment(0, 1, t) / a1.increment(0, 1, t);
            // doubling z from 0.1 to 0.2 multiplies by exp(0.1 β)
            assert!((ratio - (0.1 * fit.beta[0]).exp()).abs() < 1e-12);
        }
        assert!(p1.max_row_sum_error() < 1e-12);
    }

    proptest! {
        #[test]
        fn score_matches_finite_differences(
            data in prop::collection::vec((1u32..50, any::<bool>(), -1.0f64..1.0, -1.0f64..1.0), 5..25),
            b0 in -1.0f64..1.0, b1 in -1.0f64..1.0,
        ) {
            let ss = Arc::new(StateSpace::illness_death());
            let hs: Vec<EventHistory> = data.iter().enumerate().map(|(i, &(t, ill, x, w))| {
                let t = t as f64 * 0.1;
                let to = if ill { 1 } else { 2 };
                let evs = vec![TransitionEvent { time: t, from_state: 0, to_state: to, cost: 0.0 }];
                EventHistory::new(i.to_string(), ss.clone(), 0, evs, None, 10.0,
                    Covariates::fixed([("x", x), ("w", w)])).unwrap()
            }).collect();
            let spec = CoxSpec::new(DesignFormula::new(vec![
                Term::covariate("x"),
                Term::covariate("w").only(vec![RecordKind::transition(0, 1)]),
            ]));
            let pl = PartialLikelihood::new(&hs, &spec).unwrap();
            let beta = DVector::from_vec(vec![b0, b1]);
            let v = pl.evaluate(&beta);
            prop_assert!((v.loglik - pl.loglik(&beta)).abs() < 1e-10);
            for k in 0..2 {
                let h = 1e-5;
                let mut up = beta.clone();
                up[k] += h;
                let mut dn = beta.clone();
                dn[k] -= h;
                let fd = (pl.loglik(&up) - pl.loglik(&dn)) / (2.0 * h);
                prop_assert!((fd - v.score[k]).abs() <= 1e-6 * v.score[k].abs().max(1.0));
            }
            let eig = v.information.clone().symmetric_eigen();
            prop_assert!(eig.eigenvalues.iter().all(|&e| e > -1e-10));
        }
    }
}
