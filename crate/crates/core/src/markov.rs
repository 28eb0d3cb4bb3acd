//! Nelson–Aalen cumulative intensities, the Aalen–Johansen product-integral,
//! and a product-integral evaluator for parametric intensities.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::event_history::CountingProcesses;
use crate::linalg::max_abs_diff;
use crate::stepfn::{merge_sorted, StepFunction};

/// Off-diagonal cumulative intensities `Â_hj`, plus the total exit
/// intensity `Â_h· = Σ_j Â_hj` per origin state (so `Â_hh = -Â_h·`).
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeIntensityMatrix {
    n_states: usize,
    a_hj: BTreeMap<(usize, usize), StepFunction>,
    increments: BTreeMap<(usize, usize), Increments>,
    exits: BTreeMap<usize, Increments>,
}

/// Jump sizes kept as computed, not recovered by differencing cumulative
/// values.
#[derive(Debug, Clone, Default, PartialEq)]
struct Increments {
    times: Vec<f64>,
    sizes: Vec<f64>,
}

impl Increments {
    fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = Increments::default();
        for (t, d) in pairs {
            if out.times.last() == Some(&t) {
                *out.sizes.last_mut().unwrap() += d;
            } else {
                out.times.push(t);
                out.sizes.push(d);
            }
        }
        out
    }

    fn at(&self, t: f64) -> f64 {
        match self.times.binary_search_by(|u| u.total_cmp(&t)) {
            Ok(i) => self.sizes[i],
            Err(_) => 0.0,
        }
    }

    fn cumulative(&self) -> StepFunction {
        StepFunction::from_increments(0.0, self.times.iter().copied().zip(self.sizes.iter().copied()))
    }
}

impl CumulativeIntensityMatrix {
    /// Validates that every `Â_hj` starts at zero and is nondecreasing.
    pub fn new(n_states: usize, a_hj: BTreeMap<(usize, usize), StepFunction>) -> Result<Self> {
        for (&(h, j), a) in &a_hj {
            if h == j || h >= n_states || j >= n_states {
                return Err(Error::InvalidInput(format!("bad transition {h}->{j}")));
            }
            if a.initial_value() != 0.0 || !a.is_nondecreasing() {
                return Err(Error::InvalidInput(format!(
                    "cumulative intensity {h}->{j} must start at 0 and be nondecreasing"
                )));
            }
        }
        let increments: BTreeMap<_, _> = a_hj
            .iter()
            .map(|(&k, a)| (k, Increments::from_pairs(a.jumps().collect())))
            .collect();
        Ok(Self::assemble(n_states, increments))
    }

    /// From raw `(time, ΔÂ_hj)` increments; the diagonal uses the sum of the
    /// given increments at each time.
    pub fn from_increments(
        n_states: usize,
        increments: BTreeMap<(usize, usize), Vec<(f64, f64)>>,
    ) -> Result<Self> {
        for (&(h, j), inc) in &increments {
            if h == j || h >= n_states || j >= n_states {
                return Err(Error::InvalidInput(format!("bad transition {h}->{j}")));
            }
            if inc.iter().any(|&(t, d)| !(d >= 0.0) || !t.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "increments of {h}->{j} must be nonnegative at finite times"
                )));
            }
        }
        Ok(Self::assemble(
            n_states,
            increments
                .into_iter()
                .map(|(k, v)| (k, Increments::from_pairs(v)))
                .collect(),
        ))
    }

    fn assemble(n_states: usize, increments: BTreeMap<(usize, usize), Increments>) -> Self {
        let mut by_origin: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for (&(h, _), inc) in &increments {
            by_origin
                .entry(h)
                .or_default()
                .extend(inc.times.iter().copied().zip(inc.sizes.iter().copied()));
        }
        let exits = by_origin
            .into_iter()
            .map(|(h, pairs)| (h, Increments::from_pairs(pairs)))
            .collect();
        let a_hj = increments.iter().map(|(&k, inc)| (k, inc.cumulative())).collect();
        Self {
            n_states,
            a_hj,
            increments,
            exits,
        }
    }

    pub fn zero(n_states: usize) -> Self {
        Self::assemble(n_states, BTreeMap::new())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn get(&self, h: usize, j: usize) -> Option<&StepFunction> {
        self.a_hj.get(&(h, j))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &StepFunction)> {
        self.a_hj.iter()
    }

    /// `ΔÂ_hj(t)` exactly as estimated.
    pub fn increment(&self, h: usize, j: usize, t: f64) -> f64 {
        self.increments.get(&(h, j)).map_or(0.0, |inc| inc.at(t))
    }

    /// Sorted union of all jump times.
    pub fn jump_times(&self) -> Vec<f64> {
        self.exits
            .values()
            .fold(Vec::new(), |acc, inc| merge_sorted(&acc, &inc.times))
    }

    /// `I + ΔÂ(t)`.
    pub fn factor(&self, t: f64) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.n_states, self.n_states);
        for (&(h, j), inc) in &self.increments {
            let d = inc.at(t);
            if d != 0.0 {
                m[(h, j)] = d;
            }
        }
        for (&h, inc) in &self.exits {
            let d = inc.at(t);
            if d != 0.0 {
                m[(h, h)] = 1.0 - d;
            }
        }
        m
    }

    fn checked_factor(&self, t: f64) -> Result<DMatrix<f64>> {
        let m = self.factor(t);
        for row in 0..self.n_states {
            if (0..self.n_states).any(|c| m[(row, c)] < 0.0) {
                return Err(Error::InvalidFactor { time: t, row });
            }
        }
        Ok(m)
    }
}

/// `ΔÂ_hj(t) = ΔN_hj(t) / Y_h(t)` at every jump of `N_hj`.
pub fn nelson_aalen(cp: &CountingProcesses) -> Result<CumulativeIntensityMatrix> {
    let mut increments = BTreeMap::new();
    for (&(h, j), n) in &cp.n_hj {
        let mut pairs = Vec::with_capacity(n.len());
        for (t, dn) in n.jumps() {
            if dn == 0.0 {
                continue;
            }
            let y = cp.at_risk(h, t);
            if y <= 0.0 {
                return Err(Error::JumpWithEmptyRiskSet {
                    from: h,
                    to: j,
                    time: t,
                });
            }
            pairs.push((t, dn / y));
        }
        increments.insert((h, j), Increments::from_pairs(pairs));
    }
    let mut a = CumulativeIntensityMatrix::assemble(cp.n_states, increments);
    // exit increments from the pooled count so that 1 - ΔÂ_h· is exactly
    // (Y - d) / Y
    for (&h, inc) in a.exits.iter_mut() {
        for (k, &t) in inc.times.iter().enumerate() {
            let d: f64 = cp
                .n_hj
                .iter()
                .filter(|((from, _), _)| *from == h)
                .map(|(_, n)| n.jump_at(t))
                .sum();
            inc.sizes[k] = d / cp.at_risk(h, t);
        }
    }
    Ok(a)
}

/// `P̂(0, t)` at a sorted set of times, right-continuous in `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrixPath {
    times: Vec<f64>,
    matrices: Vec<DMatrix<f64>>,
}

impl TransitionMatrixPath {
    pub fn identity(n_states: usize) -> Self {
        Self {
            times: vec![0.0],
            matrices: vec![DMatrix::identity(n_states, n_states)],
        }
    }

    pub fn n_states(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// `P̂(0, t)`.
    pub fn at(&self, t: f64) -> &DMatrix<f64> {
        let idx = self.times.partition_point(|&u| u <= t);
        &self.matrices[idx.saturating_sub(1)]
    }

    /// `P̂(0, t-)`: excludes the factor at `t`.
    pub fn before(&self, t: f64) -> &DMatrix<f64> {
        let idx = self.times.partition_point(|&u| u < t);
        &self.matrices[idx.saturating_sub(1)]
    }

    /// `t ↦ P̂_ij(0, t)` as a step function.
    pub fn element(&self, i: usize, j: usize) -> StepFunction {
        let init = if i == j { 1.0 } else { 0.0 };
        let mut jt = Vec::new();
        let mut vals = Vec::new();
        for (t, m) in self.times.iter().zip(&self.matrices).skip(1) {
            jt.push(*t);
            vals.push(m[(i, j)]);
        }
        StepFunction::new(init, jt, vals).expect("path times are increasing")
    }

    /// Largest deviation of a row sum from 1 over the whole path.
    pub fn max_row_sum_error(&self) -> f64 {
        self.matrices
            .iter()
            .flat_map(|m| m.row_iter().map(|r| (r.sum() - 1.0).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

/// `P̂(0, t) = Π_{u ≤ t} (I + ΔÂ(u))` evaluated on the union of jump times and
/// the requested `times`.
pub fn aalen_johansen(a: &CumulativeIntensityMatrix, times: &[f64]) -> Result<TransitionMatrixPath> {
    let jumps = a.jump_times();
    let mut extra: Vec<f64> = times.iter().copied().filter(|t| *t > 0.0).collect();
    extra.sort_by(f64::total_cmp);
    let grid = merge_sorted(&jumps, &extra);
    let n = a.n_states();
    let mut p = DMatrix::identity(n, n);
    let mut path = TransitionMatrixPath::identity(n);
    let mut jump_idx = 0;
    for &t in &grid {
        if t <= 0.0 {
            continue;
        }
        if jump_idx < jumps.len() && jumps[jump_idx] == t {
            p = &p * a.checked_factor(t)?;
            jump_idx += 1;
        }
        path.times.push(t);
        path.matrices.push(p.clone());
    }
    Ok(path)
}

/// `P̂(s, t) = Π_{s < u ≤ t} (I + ΔÂ(u))`.
pub fn aalen_johansen_between(
    a: &CumulativeIntensityMatrix,
    s: f64,
    t: f64,
) -> Result<DMatrix<f64>> {
    let n = a.n_states();
    let mut p = DMatrix::identity(n, n);
    for u in a.jump_times().into_iter().filter(|&u| u > s && u <= t) {
        p = &p * a.checked_factor(u)?;
    }
    Ok(p)
}

pub type IntensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Transition intensities given as functions of time, with optional
/// breakpoints where they may be discontinuous.
#[derive(Clone)]
pub struct ParametricIntensities {
    pub n_states: usize,
    pub alpha: BTreeMap<(usize, usize), IntensityFn>,
    pub breakpoints: Vec<f64>,
}

impl std::fmt::Debug for ParametricIntensities {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParametricIntensities")
            .field("n_states", &self.n_states)
            .field("transitions", &self.alpha.keys().collect::<Vec<_>>())
            .field("breakpoints", &self.breakpoints)
            .finish()
    }
}

impl ParametricIntensities {
    pub fn new(n_states: usize) -> Self {
        Self {
            n_states,
            alpha: BTreeMap::new(),
            breakpoints: Vec::new(),
        }
    }

    pub fn with(mut self, h: usize, j: usize, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.alpha.insert((h, j), Arc::new(f));
        self
    }

    pub fn constant(n_states: usize, rates: &[((usize, usize), f64)]) -> Self {
        rates
            .iter()
            .fold(Self::new(n_states), |acc, &((h, j), r)| acc.with(h, j, move |_| r))
    }

    /// Generator `α(t)` with `α_hh = -Σ_j α_hj`.
    pub fn generator(&self, t: f64) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.n_states, self.n_states);
        for (&(h, j), f) in &self.alpha {
            let v = f(t);
            q[(h, j)] += v;
            q[(h, h)] -= v;
        }
        q
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProductIntegralOptions {
    /// Max-norm change between successive refinements at which to stop.
    pub tolerance: f64,
    /// Substeps per base interval on the first pass.
    pub initial_steps: usize,
    pub max_refinements: u32,
}

impl Default for ProductIntegralOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            initial_steps: 4,
            max_refinements: 16,
        }
    }
}

/// `P(0, t) = Π_{0<u≤t} (I + α(u) du)` on a fine grid, refined by step
/// halving until successive refinements agree to `options.tolerance`.
///
/// Each substep uses the exact factor `exp(α(u_mid) Δu)`; the base grid
/// contains every breakpoint and every requested time, so for
/// piecewise-constant intensities the first pass is already exact.
pub fn product_integral_parametric(
    alpha: &ParametricIntensities,
    times: &[f64],
    options: ProductIntegralOptions,
) -> Result<TransitionMatrixPath> {
    let mut eval: Vec<f64> = times.iter().copied().filter(|t| *t > 0.0).collect();
    eval.sort_by(f64::total_cmp);
    eval.dedup();
    if eval.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("evaluation times must be finite".into()));
    }
    let end = eval.last().copied().unwrap_or(0.0);
    let mut bps: Vec<f64> = alpha
        .breakpoints
        .iter()
        .copied()
        .filter(|&b| b > 0.0 && b < end)
        .collect();
    bps.sort_by(f64::total_cmp);
    let base = merge_sorted(&merge_sorted(&[0.0], &bps), &eval);

    let evaluate = |steps: usize| -> Vec<DMatrix<f64>> {
        let n = alpha.n_states;
        let mut p = DMatrix::identity(n, n);
        let mut out = Vec::with_capacity(eval.len());
        let mut e = 0;
        for w in base.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let h = (hi - lo) / steps as f64;
            for k in 0..steps {
                let mid = lo + (k as f64 + 0.5) * h;
                p = &p * (alpha.generator(mid) * h).exp();
            }
            while e < eval.len() && eval[e] == hi {
                out.push(p.clone());
                e += 1;
            }
        }
        out
    };

    let mut steps = options.initial_steps.max(1);
    let mut prev = evaluate(steps);
    for _ in 0..options.max_refinements {
        steps *= 2;
        let next = evaluate(steps);
        let diff = prev
            .iter()
            .zip(&next)
            .map(|(a, b)| max_abs_diff(a, b))
            .fold(0.0, f64::max);
        prev = next;
        if diff < options.tolerance {
            let mut path = TransitionMatrixPath::identity(alpha.n_states);
            path.times.extend(eval.iter().copied());
            path.matrices.extend(prev);
            return Ok(path);
        }
    }
    Err(Error::NoConvergence(format!(
        "product integral did not reach tolerance {} after {} refinements",
        options.tolerance, options.max_refinements
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_history::{counting_processes, Covariates, EventHistory, StateSpace, TransitionEvent};
    use crate::survival::kaplan_meier;
    use proptest::prelude::*;

    fn two_state(times: &[(f64, bool)]) -> Vec<EventHistory> {
        let ss = Arc::new(StateSpace::two_state());
        times
            .iter()
            .enumerate()
            .map(|(i, &(t, ev))| {
                let (evs, u) = if ev {
                    (vec![TransitionEvent { time: t, from_state: 0, to_state: 1, cost: 0.0 }], None)
                } else {
                    (vec![], Some(t))
                };
                EventHistory::new(i.to_string(), ss.clone(), 0, evs, u, 10.0, Covariates::new()).unwrap()
            })
            .collect()
    }

    #[test]
    fn nelson_aalen_increments() {
        let hs = two_state(&[(1.0, true), (2.0, true), (3.0, true)]);
        let a = nelson_aalen(&counting_processes(&hs).unwrap()).unwrap();
        let a01 = a.get(0, 1).unwrap();
        let d: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|&t| a.increment(0, 1, t)).collect();
        assert_eq!(d, vec![1.0 / 3.0, 0.5, 1.0]);
        assert!((a01.eval(3.0) - 11.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn nelson_aalen_ties_and_censored_only() {
        let hs = two_state(&[(2.0, true), (2.0, true), (3.0, false), (4.0, true)]);
        let a = nelson_aalen(&counting_processes(&hs).unwrap()).unwrap();
        assert_eq!(a.increment(0, 1, 2.0), 0.5);
        let hs = two_state(&[(2.0, false), (3.0, false)]);
        let a = nelson_aalen(&counting_processes(&hs).unwrap()).unwrap();
        assert!(a.jump_times().is_empty());
        let p = aalen_johansen(&a, &[1.0, 5.0]).unwrap();
        assert_eq!(p.at(5.0), &DMatrix::identity(2, 2));
    }

    #[test]
    fn two_state_aalen_johansen_is_kaplan_meier() {
        let data = [(1.0, true), (2.0, true), (3.0, true)];
        let hs = two_state(&data);
        let a = nelson_aalen(&counting_processes(&hs).unwrap()).unwrap();
        let p = aalen_johansen(&a, &[]).unwrap();
        let km = kaplan_meier(&[1.0, 2.0, 3.0], &[true, true, true]).unwrap();
        for &t in &[0.5, 1.0, 1.5, 2.0, 3.0, 4.0] {
            assert_eq!(p.at(t)[(0, 0)], km.eval(t));
            assert!((1.0 - p.at(t)[(0, 1)] - km.eval(t)).abs() < 1e-15);
        }
        // hand expansion (1-1/3)(1-1/2)(1-1)
        assert_eq!(p.at(3.0)[(0, 0)], 0.0);
    }

    #[test]
    fn illness_death_hand_product() {
        let mut a = BTreeMap::new();
        a.insert((0, 1), StepFunction::new(0.0, vec![1.0], vec![0.5]).unwrap());
        a.insert((1, 2), StepFunction::new(0.0, vec![2.0], vec![1.0]).unwrap());
        let a = CumulativeIntensityMatrix::new(3, a).unwrap();
        let p = aalen_johansen(&a, &[3.0]).unwrap();
        assert_eq!(p.at(1.5)[(0, 1)], 0.5);
        assert_eq!(p.at(2.0)[(0, 2)], 0.5);
        assert_eq!(p.before(2.0)[(0, 2)], 0.0);
        assert_eq!(p.at(0.0), &DMatrix::identity(3, 3));
    }

    #[test]
    fn invalid_factor_detected() {
        let mut a = BTreeMap::new();
        a.insert((0, 1), StepFunction::new(0.0, vec![1.0], vec![0.7]).unwrap());
        a.insert((0, 2), StepFunction::new(0.0, vec![1.0], vec![0.7]).unwrap());
        let a = CumulativeIntensityMatrix::new(3, a).unwrap();
        assert_eq!(aalen_johansen(&a, &[]).unwrap_err().invariant(), "InvalidFactor");
    }

    #[test]
    fn parametric_exponential() {
        let alpha = ParametricIntensities::constant(2, &[((0, 1), 1.0)]);
        let p = product_integral_parametric(&alpha, &[1.0], Default::default()).unwrap();
        assert!((p.at(1.0)[(0, 0)] - (-1.0f64).exp()).abs() < 1e-8);
        let zero = ParametricIntensities::new(3);
        let p = product_integral_parametric(&zero, &[0.5, 2.0], Default::default()).unwrap();
        assert_eq!(p.at(2.0), &DMatrix::identity(3, 3));
    }

    #[test]
    fn parametric_constant_generator_matches_matrix_exponential() {
        let alpha = ParametricIntensities::constant(3, &[((0, 1), 0.4), ((0, 2), 0.1), ((1, 2), 0.7)]);
        let p = product_integral_parametric(&alpha, &[0.5, 2.0, 3.3], Default::default()).unwrap();
        for &t in &[0.5, 2.0, 3.3] {
            let oracle = (alpha.generator(0.0) * t).exp();
            assert!(max_abs_diff(p.at(t), &oracle) < 1e-8);
        }
    }

    #[test]
    fn parametric_smooth_intensity_converges() {
        // α(t) = 2t: P00(0,t) = exp(-t²)
        let alpha = ParametricIntensities::new(2).with(0, 1, |t| 2.0 * t);
        let p = product_integral_parametric(&alpha, &[1.0, 1.5], Default::default()).unwrap();
        assert!((p.at(1.5)[(0, 0)] - (-2.25f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn parametric_refinement_limit() {
        let alpha = ParametricIntensities::new(2).with(0, 1, |t| 3.0 * t * t);
        let opts = ProductIntegralOptions { tolerance: 1e-30, initial_steps: 1, max_refinements: 2 };
        let err = product_integral_parametric(&alpha, &[1.0], opts).unwrap_err();
        assert_eq!(err.invariant(), "NoConvergence");
    }

    fn arb_illness_death() -> impl Strategy<Value = Vec<EventHistory>> {
        let ss = Arc::new(StateSpace::illness_death());
        prop::collection::vec((1u32..30, 1u32..30, 0u8..3, prop::option::of(1u32..40)), 2..40).prop_map(
            move |rows| {
                rows.into_iter()
                    .enumerate()
                    .map(|(i, (a, b, kind, c))| {
                        let t1 = a as f64 * 0.3;
                        let t2 = t1 + b as f64 * 0.3;
                        let u = c.map(|c| c as f64 * 0.3);
                        let end = u.unwrap_or(f64::INFINITY).min(20.0);
                        let mut evs = Vec::new();
                        match kind {
                            0 if t1 <= end => evs.push(TransitionEvent { time: t1, from_state: 0, to_state: 2, cost: 0.0 }),
                            1 | 2 if t1 <= end => {
                                evs.push(TransitionEvent { time: t1, from_state: 0, to_state: 1, cost: 0.0 });
                                if kind == 2 && t2 <= end {
                                    evs.push(TransitionEvent { time: t2, from_state: 1, to_state: 2, cost: 0.0 });
                                }
                            }
                            _ => {}
                        }
                        EventHistory::new(i.to_string(), ss.clone(), 0, evs, u, 20.0, Covariates::new()).unwrap()
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn aalen_johansen_rows_and_chapman_kolmogorov(hs in arb_illness_death(), s in 0.0f64..10.0) {
            let a = nelson_aalen(&counting_processes(&hs).unwrap()).unwrap();
            let p = aalen_johansen(&a, &[s, 20.0]).unwrap();
            prop_assert!(p.max_row_sum_error() < 1e-12);
            for m in p.matrices() {
                prop_assert!(m.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
                prop_assert_eq!(m[(2, 2)], 1.0);
                prop_assert_eq!(m[(2, 0)], 0.0);
            }
            let pst = aalen_johansen_between(&a, s, 20.0).unwrap();
            let composed = p.at(s) * &pst;
            prop_assert!(max_abs_diff(&composed, p.at(20.0)) < 1e-13);
        }
    }
}
