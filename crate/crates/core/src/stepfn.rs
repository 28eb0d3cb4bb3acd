//! Right-continuous step functions and the integrals every estimator is built from.
//!
//! All integrals are taken over semi-open windows `(a, b]`. Stieltjes integrals
//! pick up the jumps of the integrator inside the window; Lebesgue integrals of
//! a step function against `e^{-rt} dt` are evaluated exactly interval by
//! interval, so no quadrature error enters downstream tolerances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant, right-continuous function on the real line.
///
/// `f(t)` is the value after the last jump `<= t`, or `initial_value` before
/// the first jump. Jump times are strictly increasing; a "jump" may have size
/// zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    jump_times: Vec<f64>,
    values: Vec<f64>,
    initial_value: f64,
}

impl StepFunction {
    pub fn new(initial_value: f64, jump_times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if jump_times.len() != values.len() {
            return Err(Error::InvalidStepFunction(format!(
                "{} jump times but {} values",
                jump_times.len(),
                values.len()
            )));
        }
        if jump_times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidStepFunction("non-finite jump time".into()));
        }
        if jump_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidStepFunction(
                "jump times must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            jump_times,
            values,
            initial_value,
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            jump_times: Vec::new(),
            values: Vec::new(),
            initial_value: value,
        }
    }

    /// Cumulative sum of `(time, delta)` increments added to `initial_value`.
    ///
    /// Increments at equal times are merged (exact float equality). Input order
    /// does not matter: the increments at one time are summed in a canonical
    /// order so permuted inputs give bit-identical results.
    pub fn from_increments<I>(initial_value: f64, increments: I) -> Self
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut inc: Vec<(f64, f64)> = increments.into_iter().collect();
        inc.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut jump_times = Vec::new();
        let mut values = Vec::new();
        let mut current = initial_value;
        let mut i = 0;
        while i < inc.len() {
            let t = inc[i].0;
            let mut delta = 0.0;
            while i < inc.len() && inc[i].0 == t {
                delta += inc[i].1;
                i += 1;
            }
            current += delta;
            jump_times.push(t);
            values.push(current);
        }
        Self {
            jump_times,
            values,
            initial_value,
        }
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial_value(&self) -> f64 {
        self.initial_value
    }

    pub fn len(&self) -> usize {
        self.jump_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }

    /// Value after the last jump.
    pub fn final_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(self.initial_value)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|&u| u <= t);
        if idx == 0 {
            self.initial_value
        } else {
            self.values[idx - 1]
        }
    }

    /// Left limit `f(t-)`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|&u| u < t);
        if idx == 0 {
            self.initial_value
        } else {
            self.values[idx - 1]
        }
    }

    /// `f(t) - f(t-)`.
    pub fn jump_at(&self, t: f64) -> f64 {
        match self.jump_times.binary_search_by(|u| u.total_cmp(&t)) {
            Ok(i) => self.values[i] - self.value_before_index(i),
            Err(_) => 0.0,
        }
    }

    fn value_before_index(&self, i: usize) -> f64 {
        if i == 0 {
            self.initial_value
        } else {
            self.values[i - 1]
        }
    }

    /// `(time, delta)` for every recorded jump, in time order.
    pub fn jumps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.jump_times
            .iter()
            .enumerate()
            .map(move |(i, &t)| (t, self.values[i] - self.value_before_index(i)))
    }

    /// Jumps restricted to the window `(a, b]`.
    pub fn jumps_in(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let lo = self.jump_times.partition_point(|&u| u <= a);
        let hi = self.jump_times.partition_point(|&u| u <= b);
        (lo..hi.max(lo)).map(move |i| {
            (
                self.jump_times[i],
                self.values[i] - self.value_before_index(i),
            )
        })
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> StepFunction {
        StepFunction {
            jump_times: self.jump_times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            initial_value: f(self.initial_value),
        }
    }

    /// Pointwise combination on the union of both jump sets.
    pub fn combine<F: Fn(f64, f64) -> f64>(&self, other: &StepFunction, f: F) -> StepFunction {
        let times = merge_sorted(&self.jump_times, &other.jump_times);
        let values = times
            .iter()
            .map(|&t| f(self.eval(t), other.eval(t)))
            .collect();
        StepFunction {
            jump_times: times,
            values,
            initial_value: f(self.initial_value, other.initial_value),
        }
    }

    pub fn scale(&self, c: f64) -> StepFunction {
        self.map(|v| v * c)
    }

    /// The same function with its domain cut at `end`: equal to `f` on
    /// `(-inf, end)` and to `value_after` from `end` on.
    pub fn truncate(&self, end: f64, value_after: f64) -> StepFunction {
        let keep = self.jump_times.partition_point(|&u| u < end);
        let mut jump_times = self.jump_times[..keep].to_vec();
        let mut values = self.values[..keep].to_vec();
        if end.is_finite() {
            jump_times.push(end);
            values.push(value_after);
        }
        StepFunction {
            jump_times,
            values,
            initial_value: self.initial_value,
        }
    }

    /// True when `f` has no non-zero jump inside `(a, b]`.
    pub fn is_constant_on(&self, a: f64, b: f64) -> bool {
        self.jumps_in(a, b).all(|(_, d)| d == 0.0)
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.jumps().all(|(_, d)| d >= 0.0)
    }
}

/// Sorted union of two sorted slices without duplicates.
pub(crate) fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = if j >= b.len() || (i < a.len() && a[i] <= b[j]) {
            let v = a[i];
            i += 1;
            v
        } else {
            let v = b[j];
            j += 1;
            v
        };
        if out.last() != Some(&next) {
            out.push(next);
        }
    }
    out
}

/// `sum over jumps u of f in (a, b] of g(u) * Δf(u)`.
pub fn stieltjes_integral<G: Fn(f64) -> f64>(g: G, f: &StepFunction, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    f.jumps_in(a, b).map(|(u, d)| g(u) * d).sum()
}

/// `∫_lo^hi e^{-r t} dt`, exact. `r = 0` is its own branch.
pub fn discount_integral(r: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if r == 0.0 {
        hi - lo
    } else {
        // e^{-r lo} (1 - e^{-r (hi - lo)}) / r, written with exp_m1 for small r
        (-r * lo).exp() * (-(-r * (hi - lo)).exp_m1()) / r
    }
}

/// `∫_(a, b] e^{-r t} f(t) dt` for a step function `f`, summed exactly over
/// its constancy intervals.
pub fn discounted_lebesgue_integral(f: &StepFunction, r: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let times = f.jump_times();
    let mut idx = times.partition_point(|&u| u <= a);
    let mut lo = a;
    let mut value = f.eval(a);
    let mut total = 0.0;
    while idx < times.len() && times[idx] < b {
        let hi = times[idx];
        if value != 0.0 {
            total += value * discount_integral(r, lo, hi);
        }
        lo = hi;
        value = f.values()[idx];
        idx += 1;
    }
    if value != 0.0 {
        total += value * discount_integral(r, lo, b);
    }
    total
}

/// Precomputed primitive `F(t) = ∫_0^t e^{-r u} f(u) du` of a step function,
/// evaluable in `O(log n)`.
#[derive(Debug, Clone)]
pub struct DiscountedPrimitive {
    f: StepFunction,
    r: f64,
    origin: f64,
    cumulative: Vec<f64>,
}

impl DiscountedPrimitive {
    pub fn new(f: StepFunction, r: f64, origin: f64) -> Self {
        let mut cumulative = Vec::with_capacity(f.len());
        let mut acc = 0.0;
        let mut lo = origin;
        let mut value = f.eval(origin);
        for (i, &t) in f.jump_times().iter().enumerate() {
            if t <= origin {
                cumulative.push(0.0);
                continue;
            }
            acc += value * discount_integral(r, lo, t);
            cumulative.push(acc);
            lo = t;
            value = f.values()[i];
        }
        Self {
            f,
            r,
            origin,
            cumulative,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= self.origin {
            return 0.0;
        }
        let idx = self.f.jump_times().partition_point(|&u| u <= t);
        let (base, lo) = if idx == 0 || self.f.jump_times()[idx - 1] <= self.origin {
            (0.0, self.origin)
        } else {
            (self.cumulative[idx - 1], self.f.jump_times()[idx - 1])
        };
        let lo = lo.max(self.origin);
        base + self.f.eval(lo) * discount_integral(self.r, lo, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sf(init: f64, pts: &[(f64, f64)]) -> StepFunction {
        StepFunction::new(
            init,
            pts.iter().map(|p| p.0).collect(),
            pts.iter().map(|p| p.1).collect(),
        )
        .unwrap()
    }

    #[test]
    fn eval_and_left_limit() {
        let f = sf(0.0, &[(1.0, 1.0), (3.0, 3.0)]);
        assert_eq!(f.eval(0.5), 0.0);
        assert_eq!(f.eval(1.0), 1.0);
        assert_eq!(f.left_limit(1.0), 0.0);
        assert_eq!(f.left_limit(3.0), 1.0);
        assert_eq!(f.eval(10.0), 3.0);
        assert_eq!(f.jump_at(3.0), 2.0);
        assert_eq!(f.jump_at(2.0), 0.0);
    }

    #[test]
    fn rejects_unsorted_jumps() {
        assert!(StepFunction::new(0.0, vec![2.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(StepFunction::new(0.0, vec![1.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(StepFunction::new(0.0, vec![1.0], vec![]).is_err());
    }

    #[test]
    fn increments_merge_ties() {
        let f = StepFunction::from_increments(0.0, vec![(2.0, 1.0), (1.0, 1.0), (2.0, 1.0)]);
        assert_eq!(f.jump_times(), &[1.0, 2.0]);
        assert_eq!(f.values(), &[1.0, 3.0]);
    }

    #[test]
    fn stieltjes_examples() {
        let f = sf(0.0, &[(1.0, 1.0), (3.0, 3.0)]);
        assert_eq!(stieltjes_integral(|_| 1.0, &f, 0.0, 5.0), 3.0);
        let r = 0.0;
        assert_eq!(stieltjes_integral(|t| (-r * t).exp(), &f, 0.0, 5.0), 3.0);
        let g = sf(0.0, &[(2.0, 1.0)]);
        assert_eq!(stieltjes_integral(|t| t, &g, 2.0, 3.0), 0.0);
        assert_eq!(stieltjes_integral(|t| t, &g, 1.0, 2.0), 2.0);
        assert_eq!(stieltjes_integral(|t| t, &g, 3.0, 1.0), 0.0);
    }

    #[test]
    fn lebesgue_examples() {
        let one = StepFunction::constant(1.0);
        assert_eq!(discounted_lebesgue_integral(&one, 0.0, 0.0, 2.0), 2.0);
        let v = discounted_lebesgue_integral(&one, 1.0, 0.0, 1.0);
        assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((v - 0.632121).abs() < 1e-6);
        let f = sf(2.0, &[(1.0, 0.0)]);
        assert_eq!(discounted_lebesgue_integral(&f, 0.0, 0.0, 5.0), 2.0);
    }

    #[test]
    fn primitive_matches_direct_integral() {
        let f = sf(1.0, &[(0.5, 2.0), (1.5, 0.5), (4.0, 3.0)]);
        let p = DiscountedPrimitive::new(f.clone(), 0.3, 0.0);
        for &t in &[0.0, 0.2, 0.5, 1.0, 1.5, 3.9, 4.0, 7.0] {
            let direct = discounted_lebesgue_integral(&f, 0.3, 0.0, t);
            assert!((p.eval(t) - direct).abs() < 1e-14, "t={t}");
        }
    }

    /// Adaptive Simpson on a smooth integrand; used piecewise between jumps.
    fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        let m = 0.5 * (a + b);
        let whole = simpson(f, a, b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            adaptive_simpson(f, a, m, tol / 2.0, depth - 1)
                + adaptive_simpson(f, m, b, tol / 2.0, depth - 1)
        }
    }

    fn quadrature_oracle(f: &StepFunction, r: f64, a: f64, b: f64) -> f64 {
        let mut cuts = vec![a];
        cuts.extend(f.jump_times().iter().copied().filter(|&t| t > a && t < b));
        cuts.push(b);
        cuts.windows(2)
            .map(|w| {
                let level = f.eval(0.5 * (w[0] + w[1]));
                adaptive_simpson(&|t: f64| level * (-r * t).exp(), w[0], w[1], 1e-14, 40)
            })
            .sum()
    }

    fn arb_step() -> impl Strategy<Value = StepFunction> {
        (
            -5.0f64..5.0,
            prop::collection::vec((0.01f64..10.0, -5.0f64..5.0), 0..12),
        )
            .prop_map(|(init, pts)| StepFunction::from_increments(init, pts))
    }

    proptest! {
        #[test]
        fn lebesgue_matches_quadrature(f in arb_step(), r in 0.0f64..2.0, b in 0.1f64..12.0) {
            let exact = discounted_lebesgue_integral(&f, r, 0.0, b);
            let quad = quadrature_oracle(&f, r, 0.0, b);
            prop_assert!((exact - quad).abs() < 1e-10, "exact {exact} quad {quad}");
        }

        #[test]
        fn integrals_are_additive(f in arb_step(), r in 0.0f64..1.0, m in 0.0f64..6.0, b in 6.0f64..12.0) {
            let whole = discounted_lebesgue_integral(&f, r, 0.0, b);
            let split = discounted_lebesgue_integral(&f, r, 0.0, m) + discounted_lebesgue_integral(&f, r, m, b);
            prop_assert!((whole - split).abs() < 1e-11);
            let g = |t: f64| (-r * t).exp();
            let s_whole = stieltjes_integral(g, &f, 0.0, b);
            let s_split = stieltjes_integral(g, &f, 0.0, m) + stieltjes_integral(g, &f, m, b);
            prop_assert!((s_whole - s_split).abs() < 1e-11);
        }
    }
}
