//! Nonparametric NPV estimators for censored costs: a single transition cost,
//! a sojourn with an observed accumulating cost history, and a sojourn whose
//! cost is recorded only on a fixed grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stepfn::{discounted_lebesgue_integral, DiscountedPrimitive, StepFunction};
use crate::survival::{censoring_km, kaplan_meier_obs, Observation, SurvivalFit};

/// One subject of a single-transition sample: `min(T, U)`, whether `T` was
/// observed, and the transition cost `y` (ignored when unobserved).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoredCost {
    pub time: f64,
    pub event: bool,
    pub cost: f64,
}

impl CensoredCost {
    pub fn observed(time: f64, cost: f64) -> Self {
        Self { time, event: true, cost }
    }

    pub fn censored(time: f64) -> Self {
        Self { time, event: false, cost: 0.0 }
    }

    fn observation(&self) -> Observation {
        Observation::new(self.time, self.event)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BtForm {
    /// `n^{-1} Σ e^{-rT} y [T ≤ U ∧ τ] / Ĝ(T-)`.
    Ipcw,
    /// `Σ e^{-rT} y Ŝ(T-) / Y_0(T)` over observed events, grouped by
    /// distinct time with mean cost and multiplicity.
    SurvivalWeighted,
}

/// Discounted mean of a cost incurred at a single transition time.
pub fn bang_tsiatis_npv(data: &[CensoredCost], r: f64, tau: f64, form: BtForm) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(d) = data.iter().find(|d| d.event && !(d.cost >= 0.0)) {
        return Err(Error::InvalidInput(format!("cost {} must be nonnegative", d.cost)));
    }
    let obs: Vec<Observation> = data.iter().map(CensoredCost::observation).collect();
    let n = data.len() as f64;
    match form {
        BtForm::Ipcw => {
            let g = censoring_km(&obs)?;
            let mut total = 0.0;
            for d in data.iter().filter(|d| d.event && d.time <= tau) {
                let gt = g.left_limit(d.time);
                if gt <= 0.0 {
                    return Err(Error::ZeroCensoringSurvival {
                        time: d.time,
                        stratum: crate::survival::ALL_STRATUM.into(),
                    });
                }
                total += (-r * d.time).exp() * d.cost / gt;
            }
            Ok(total / n)
        }
        BtForm::SurvivalWeighted => {
            let s = kaplan_meier_obs(&obs)?;
            let mut events: Vec<&CensoredCost> = data.iter().filter(|d| d.event && d.time <= tau).collect();
            events.sort_by(|a, b| a.time.total_cmp(&b.time));
            let mut total = 0.0;
            let mut k = 0;
            while k < events.len() {
                let t = events[k].time;
                let start = k;
                let mut sum = 0.0;
                while k < events.len() && events[k].time == t {
                    sum += events[k].cost;
                    k += 1;
                }
                let d = (k - start) as f64;
                let mean = sum / d;
                total += (-r * t).exp() * d * mean * s.left_limit(t) / s.at_risk_at(t);
            }
            Ok(total)
        }
    }
}

/// Accumulated cost `V(t)`: point masses plus a piecewise-constant accrual
/// rate, with a separate cost at time zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostProcess {
    pub subject_id: String,
    /// `(time, amount)` point masses at positive times, sorted.
    atoms: Vec<(f64, f64)>,
    /// Accrual rate per unit time.
    rate: StepFunction,
    pub initial_cost: f64,
}

impl CostProcess {
    pub fn new(
        subject_id: impl Into<String>,
        mut atoms: Vec<(f64, f64)>,
        rate: StepFunction,
        initial_cost: f64,
    ) -> Result<Self> {
        let id = subject_id.into();
        if atoms.iter().any(|&(t, v)| !(t > 0.0 && t.is_finite()) || !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "cost atoms of {id} need positive finite times and nonnegative amounts"
            )));
        }
        if rate.initial_value() < 0.0 || rate.values().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidInput(format!("accrual rate of {id} must be nonnegative")));
        }
        if !(initial_cost >= 0.0) {
            return Err(Error::InvalidInput(format!("initial cost of {id} must be nonnegative")));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            subject_id: id,
            atoms,
            rate,
            initial_cost,
        })
    }

    /// Only point masses.
    pub fn from_atoms(subject_id: impl Into<String>, atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(subject_id, atoms, StepFunction::constant(0.0), 0.0)
    }

    pub fn zero(subject_id: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.into(),
            atoms: Vec::new(),
            rate: StepFunction::constant(0.0),
            initial_cost: 0.0,
        }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn rate(&self) -> &StepFunction {
        &self.rate
    }

    /// No accrual after `end`: atoms past `end` are dropped, the rate is zero
    /// from `end` on.
    pub fn truncated(&self, end: f64) -> Self {
        Self {
            subject_id: self.subject_id.clone(),
            atoms: self.atoms.iter().copied().filter(|a| a.0 <= end).collect(),
            rate: self.rate.truncate(end, 0.0),
            initial_cost: self.initial_cost,
        }
    }

    /// `∫_(0, t] e^{-ru} dV(u)`, excluding the time-zero cost.
    pub fn discounted(&self, r: f64, t: f64) -> f64 {
        let atoms: f64 = self
            .atoms
            .iter()
            .take_while(|a| a.0 <= t)
            .map(|&(u, v)| (-r * u).exp() * v)
            .sum();
        atoms + discounted_lebesgue_integral(&self.rate, r, 0.0, t)
    }

    /// `V(t) - V(0)`.
    pub fn accumulated(&self, t: f64) -> f64 {
        self.discounted(0.0, t)
    }

    /// Sum of two processes of the same subject.
    pub fn plus(&self, other: &CostProcess) -> CostProcess {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().copied());
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        CostProcess {
            subject_id: self.subject_id.clone(),
            atoms,
            rate: self.rate.combine(&other.rate, |a, b| a + b),
            initial_cost: self.initial_cost + other.initial_cost,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrawdermanForm {
    /// `Σ_i ∫ Ŝ(t-) Y_i(t) Y_0(t)^{-1} e^{-rt} dV_i(t)`.
    Direct,
    /// `Σ m̂(T_i) Ŝ(T_i-) / Y_0(T_i) [T_i ≤ U_i ∧ τ] + m̂(τ) Ŝ(τ)`.
    Dual,
}

/// Pieces shared by both forms: the survival fit and the estimated
/// discounted mean cost rate `m̂`.
struct MeanCost {
    km: SurvivalFit,
    /// Jumps of `m̂` from point masses: `(t, Σ e^{-rt} ΔV_i(t) / Y_0(t))`.
    atoms: Vec<(f64, f64)>,
    /// Continuous part of `dm̂`: `Σ_i rate_i Y_i / Y_0`.
    density: StepFunction,
    initial: f64,
}

fn mean_cost(processes: &[CostProcess], obs: &[Observation], r: f64, tau: f64) -> Result<MeanCost> {
    if processes.is_empty() {
        return Err(Error::EmptySample);
    }
    if processes.len() != obs.len() {
        return Err(Error::DimensionMismatch {
            expected: obs.len(),
            actual: processes.len(),
        });
    }
    let km = kaplan_meier_obs(obs)?;
    let mut atom_inc = Vec::new();
    let mut rate_inc = Vec::new();
    let mut rate_init = 0.0;
    for (p, o) in processes.iter().zip(obs) {
        // Y_i(t) = [T_i ∧ U_i ≥ t]
        let end = o.time.min(tau);
        for &(t, v) in p.atoms.iter().filter(|a| a.0 <= end) {
            if v == 0.0 {
                continue;
            }
            let y0 = km.at_risk_at(t);
            if y0 <= 0.0 {
                return Err(Error::EmptyRiskSetAtAccrual(t));
            }
            atom_inc.push((t, (-r * t).exp() * v / y0));
        }
        let rate = p.rate.truncate(end, 0.0);
        rate_init += rate.initial_value();
        rate_inc.extend(rate.jumps());
    }
    let rate_sum = StepFunction::from_increments(rate_init, rate_inc);
    // 1 / Y_0 on open intervals between observed times; R is right-continuous
    // and equals Y_0 away from its jumps
    let inv_risk = km.at_risk.map(|y| if y > 0.0 { 1.0 / y } else { 0.0 });
    let density = rate_sum.combine(&inv_risk, |a, b| a * b);
    let initial = processes.iter().map(|p| p.initial_cost).sum::<f64>() / processes.len() as f64;
    atom_inc.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(MeanCost {
        km,
        atoms: atom_inc,
        density,
        initial,
    })
}

/// NPV of a single sojourn's accumulating cost, with discounting folded into
/// the cost increments. The time-zero cost `n^{-1} Σ m_i(0)` is added.
pub fn strawderman_npv(
    processes: &[CostProcess],
    obs: &[Observation],
    r: f64,
    tau: f64,
    form: StrawdermanForm,
) -> Result<f64> {
    let m = mean_cost(processes, obs, r, tau)?;
    let shared = m
        .atoms
        .iter()
        .filter(|a| m.km.survival.jump_at(a.0) != 0.0)
        .count();
    if shared > 0 && form == StrawdermanForm::Dual {
        log::warn!("{shared} cost jumps coincide with survival jumps; the direct form is authoritative");
    }
    let value = match form {
        StrawdermanForm::Direct => {
            let atoms: f64 = m.atoms.iter().map(|&(t, d)| m.km.left_limit(t) * d).sum();
            // Ŝ(t-) = Ŝ(t) off a null set
            let integrand = m.density.combine(&m.km.survival, |a, b| a * b);
            atoms + discounted_lebesgue_integral(&integrand, r, 0.0, tau)
        }
        StrawdermanForm::Dual => {
            let prim = DiscountedPrimitive::new(m.density.clone(), r, 0.0);
            let atom_cum = StepFunction::from_increments(0.0, m.atoms.iter().copied());
            let m_hat = |t: f64| atom_cum.eval(t) + prim.eval(t);
            let mut total = 0.0;
            for &t in m.km.survival.jump_times() {
                if t > tau {
                    break;
                }
                // Ŝ(t-) d_t / Y_0(t) = -ΔŜ(t)
                total += m_hat(t) * -m.km.survival.jump_at(t);
            }
            total + m_hat(tau) * m.km.eval(tau)
        }
    };
    Ok(value + m.initial)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelStatus {
    /// The full interval increment is known.
    Observed,
    /// Censored inside the interval; only `V(U) - V(a_{g-1})` is known.
    Partial,
    /// Follow-up ended before the interval.
    Unobserved,
}

/// Interval cost records of one subject on a grid `0 = a_0 < … < a_G = τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPanel {
    pub subject_id: String,
    pub grid: Vec<f64>,
    /// `Ṽ_ig`, one per interval.
    pub increments: Vec<f64>,
    pub status: Vec<PanelStatus>,
}

impl CostPanel {
    pub fn new(
        subject_id: impl Into<String>,
        grid: Vec<f64>,
        increments: Vec<f64>,
        status: Vec<PanelStatus>,
    ) -> Result<Self> {
        let id = subject_id.into();
        if grid.len() < 2 || grid[0] != 0.0 || grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(format!(
                "grid of {id} must start at 0 and increase strictly"
            )));
        }
        let g = grid.len() - 1;
        if increments.len() != g || status.len() != g {
            return Err(Error::DimensionMismatch {
                expected: g,
                actual: increments.len().min(status.len()),
            });
        }
        if increments.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidInput(format!("increments of {id} must be nonnegative")));
        }
        Ok(Self {
            subject_id: id,
            grid,
            increments,
            status,
        })
    }

    /// Grid records implied by an accumulating cost history and its
    /// follow-up `obs` (`V` is assumed flat after the event time).
    pub fn from_process(process: &CostProcess, grid: &[f64], obs: Observation) -> Result<Self> {
        let mut inc = Vec::with_capacity(grid.len().saturating_sub(1));
        let mut status = Vec::with_capacity(inc.capacity());
        for w in grid.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if obs.time <= lo {
                inc.push(0.0);
                status.push(if obs.event { PanelStatus::Observed } else { PanelStatus::Unobserved });
            } else if obs.time >= hi || obs.event {
                let end = hi.min(obs.time);
                inc.push(process.accumulated(end) - process.accumulated(lo));
                status.push(PanelStatus::Observed);
            } else {
                inc.push(process.accumulated(obs.time) - process.accumulated(lo));
                status.push(PanelStatus::Partial);
            }
        }
        Self::new(process.subject_id.clone(), grid.to_vec(), inc, status)
    }
}

/// `Σ_g Ŝ(a_{g-1}-) Y_0(a_{g-1})^{-1} Σ_i Y_i(a_{g-1}) Ṽ_ig`, undiscounted.
///
/// `Y_i(a) = [T_i ≥ a]` for subjects with an observed event and `[U_i > a]`
/// for censored ones: a subject censored exactly at a grid point carries no
/// cost information about the following interval and is left out of it.
pub fn lin_interval_npv(panels: &[CostPanel], obs: &[Observation]) -> Result<f64> {
    let first = panels.first().ok_or(Error::EmptySample)?;
    if panels.len() != obs.len() {
        return Err(Error::DimensionMismatch {
            expected: obs.len(),
            actual: panels.len(),
        });
    }
    if panels.iter().any(|p| p.grid != first.grid) {
        return Err(Error::GridMismatch);
    }
    let km = kaplan_meier_obs(obs)?;
    let at_risk = |o: &Observation, a: f64| if o.event { o.time >= a } else { o.time > a };
    let mut total = 0.0;
    for (g, &a) in first.grid[..first.grid.len() - 1].iter().enumerate() {
        let mut y0 = 0.0;
        let mut sum = 0.0;
        for (p, o) in panels.iter().zip(obs) {
            if at_risk(o, a) {
                y0 += 1.0;
                sum += p.increments[g];
            }
        }
        if y0 == 0.0 {
            if panels.iter().any(|p| p.increments[g] > 0.0) {
                return Err(Error::EmptyRiskSetAtInterval(a));
            }
            continue;
        }
        total += km.left_limit(a) * sum / y0;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bang_tsiatis_hand_values() {
        let d = [CensoredCost::observed(1.0, 100.0), CensoredCost::observed(2.0, 200.0)];
        assert_eq!(bang_tsiatis_npv(&d, 0.0, 5.0, BtForm::Ipcw).unwrap(), 150.0);
        let d = [
            CensoredCost::observed(1.0, 100.0),
            CensoredCost::observed(2.0, 300.0),
            CensoredCost::censored(1.5),
        ];
        let ipcw = bang_tsiatis_npv(&d, 0.0, 5.0, BtForm::Ipcw).unwrap();
        assert!((ipcw - (100.0 + 300.0 / 0.5) / 3.0).abs() < 1e-12);
        let sw = bang_tsiatis_npv(&d, 0.0, 5.0, BtForm::SurvivalWeighted).unwrap();
        assert!((sw - ipcw).abs() < 1e-12);
    }

    #[test]
    fn bang_tsiatis_tied_times_use_group_means() {
        let d = [
            CensoredCost::observed(1.0, 100.0),
            CensoredCost::observed(1.0, 200.0),
            CensoredCost::censored(1.0),
            CensoredCost::observed(2.0, 50.0),
        ];
        // Ĝ(1-) = 1, Ĝ(2-) = 1 - 1/2; Ŝ(1-) = 1, Ŝ(2-) = 1/2, Y(1) = 4, Y(2) = 1
        let expected = (300.0 + 50.0 / 0.5) / 4.0;
        for form in [BtForm::Ipcw, BtForm::SurvivalWeighted] {
            let v = bang_tsiatis_npv(&d, 0.0, 5.0, form).unwrap();
            assert!((v - expected).abs() < 1e-12, "{form:?}");
        }
    }

    #[test]
    fn strawderman_collapses_to_sample_mean() {
        let p = vec![
            CostProcess::from_atoms("a", vec![(0.5, 4.0), (1.0, 6.0)]).unwrap(),
            CostProcess::from_atoms("b", vec![(1.5, 20.0)]).unwrap(),
        ];
        let obs = [Observation::new(1.0, true), Observation::new(2.0, true)];
        for form in [StrawdermanForm::Direct, StrawdermanForm::Dual] {
            let v = strawderman_npv(&p, &obs, 0.0, 5.0, form).unwrap();
            assert!((v - 15.0).abs() < 1e-12, "{form:?}: {v}");
        }
        let z = vec![CostProcess::zero("a"), CostProcess::zero("b")];
        assert_eq!(strawderman_npv(&z, &obs, 0.03, 5.0, StrawdermanForm::Direct).unwrap(), 0.0);
    }

    #[test]
    fn strawderman_continuous_rate_without_censoring() {
        // rate 2 until T: discounted mean of ∫_0^T 2 e^{-ru} du
        let r = 0.1;
        let times = [1.0, 2.5, 4.0];
        let p: Vec<CostProcess> = times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                CostProcess::new(i.to_string(), vec![], StepFunction::constant(2.0), 1.0)
                    .unwrap()
                    .truncated(t)
            })
            .collect();
        let obs: Vec<Observation> = times.iter().map(|&t| Observation::new(t, true)).collect();
        let expected = times.iter().map(|&t| 2.0 * (1.0 - (-r * t).exp()) / r).sum::<f64>() / 3.0 + 1.0;
        for form in [StrawdermanForm::Direct, StrawdermanForm::Dual] {
            let v = strawderman_npv(&p, &obs, r, 10.0, form).unwrap();
            assert!((v - expected).abs() < 1e-12, "{form:?}");
        }
    }

    #[test]
    fn lin_single_interval_is_sample_mean() {
        let grid = vec![0.0, 5.0];
        let panels = vec![
            CostPanel::new("a", grid.clone(), vec![10.0], vec![PanelStatus::Observed]).unwrap(),
            CostPanel::new("b", grid.clone(), vec![30.0], vec![PanelStatus::Observed]).unwrap(),
        ];
        let obs = [Observation::new(2.0, true), Observation::new(6.0, true)];
        assert_eq!(lin_interval_npv(&panels, &obs).unwrap(), 20.0);
        let zero = vec![
            CostPanel::new("a", grid.clone(), vec![0.0], vec![PanelStatus::Observed]).unwrap(),
            CostPanel::new("b", grid, vec![0.0], vec![PanelStatus::Observed]).unwrap(),
        ];
        assert_eq!(lin_interval_npv(&zero, &obs).unwrap(), 0.0);
    }

    #[test]
    fn lin_grid_mismatch() {
        let a = CostPanel::new("a", vec![0.0, 5.0], vec![1.0], vec![PanelStatus::Observed]).unwrap();
        let b = CostPanel::new("b", vec![0.0, 4.0], vec![1.0], vec![PanelStatus::Observed]).unwrap();
        let obs = [Observation::new(5.0, true); 2];
        assert_eq!(lin_interval_npv(&[a, b], &obs).unwrap_err().invariant(), "GridMismatch");
    }

    fn arb_sample() -> impl Strategy<Value = Vec<(f64, f64, Vec<(f64, f64)>, f64)>> {
        prop::collection::vec(
            (
                1u32..200,
                1u32..200,
                prop::collection::vec((1u32..200, 0.0f64..50.0), 0..4),
                0.0f64..3.0,
            ),
            2..30,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .map(|(t, u, atoms, rate)| {
                    (
                        t as f64 * 0.05,
                        u as f64 * 0.05 + 0.025,
                        atoms.into_iter().map(|(a, v)| (a as f64 * 0.05 + 0.01, v)).collect(),
                        rate,
                    )
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn bang_tsiatis_forms_agree(
            rows in prop::collection::vec((1u32..100, 1u32..100, 0.0f64..500.0), 2..40),
            r in 0.0f64..0.1,
        ) {
            // times on a coarse lattice to force ties among events
            let data: Vec<CensoredCost> = rows.iter().map(|&(t, u, y)| {
                let (t, u) = (t as f64 * 0.1, u as f64 * 0.1 + 0.05);
                if t <= u { CensoredCost::observed(t, y) } else { CensoredCost::censored(u) }
            }).collect();
            if data.iter().any(|d| d.event) {
                let a = bang_tsiatis_npv(&data, r, 8.0, BtForm::Ipcw);
                let b = bang_tsiatis_npv(&data, r, 8.0, BtForm::SurvivalWeighted).unwrap();
                if let Ok(a) = a {
                    prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
                }
            }
        }

        #[test]
        fn strawderman_forms_agree(sample in arb_sample(), r in 0.0f64..0.1) {
            let obs: Vec<Observation> = sample.iter().map(|(t, u, _, _)| Observation::from_times(*t, *u)).collect();
            let procs: Vec<CostProcess> = sample.iter().enumerate().map(|(i, (_, _, atoms, rate))| {
                CostProcess::new(i.to_string(), atoms.clone(), StepFunction::constant(*rate), 0.5).unwrap()
            }).map(|p| {
                let end = obs[p.subject_id.parse::<usize>().unwrap()].time;
                p.truncated(end)
            }).collect();
            let d = strawderman_npv(&procs, &obs, r, 8.0, StrawdermanForm::Direct).unwrap();
            let u = strawderman_npv(&procs, &obs, r, 8.0, StrawdermanForm::Dual).unwrap();
            prop_assert!((d - u).abs() <= 1e-10 * d.abs().max(1.0), "{} vs {}", d, u);
        }

        #[test]
        fn estimators_are_linear_in_costs(sample in arb_sample(), c in 0.0f64..10.0) {
            let obs: Vec<Observation> = sample.iter().map(|(t, u, _, _)| Observation::from_times(*t, *u)).collect();
            let build = |scale: f64| -> Vec<CostProcess> {
                sample.iter().zip(&obs).enumerate().map(|(i, ((_, _, atoms, rate), o))| {
                    let atoms = atoms.iter().map(|&(t, v)| (t, v * scale)).collect();
                    CostProcess::new(i.to_string(), atoms, StepFunction::constant(rate * scale), 0.0)
                        .unwrap().truncated(o.time)
                }).collect()
            };
            let base = strawderman_npv(&build(1.0), &obs, 0.0, 8.0, StrawdermanForm::Direct).unwrap();
            let scaled = strawderman_npv(&build(c), &obs, 0.0, 8.0, StrawdermanForm::Direct).unwrap();
            prop_assert!((scaled - c * base).abs() <= 1e-9 * (c * base).abs().max(1.0));
            let grid = [0.0, 2.0, 4.0, 6.0, 8.0];
            let panels = |scale: f64| -> Vec<CostPanel> {
                build(scale).iter().zip(&obs).map(|(p, o)| CostPanel::from_process(p, &grid, *o).unwrap()).collect()
            };
            let l1 = lin_interval_npv(&panels(1.0), &obs).unwrap();
            let lc = lin_interval_npv(&panels(c), &obs).unwrap();
            prop_assert!((lc - c * l1).abs() <= 1e-9 * (c * l1).abs().max(1.0));
        }

        #[test]
        fn uncensored_estimators_equal_sample_mean(
            rows in prop::collection::vec((1u32..100, 0.0f64..100.0), 1..20),
        ) {
            // total cost is a single atom at the event time
            let obs: Vec<Observation> = rows.iter().map(|&(t, _)| Observation::new(t as f64 * 0.07, true)).collect();
            let mean = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
            let bt: Vec<CensoredCost> = rows.iter().zip(&obs).map(|(r, o)| CensoredCost::observed(o.time, r.1)).collect();
            let procs: Vec<CostProcess> = rows.iter().zip(&obs).enumerate()
                .map(|(i, (r, o))| CostProcess::from_atoms(i.to_string(), vec![(o.time, r.1)]).unwrap()).collect();
            let grid = [0.0, 3.0, 7.5];
            let panels: Vec<CostPanel> = procs.iter().zip(&obs).map(|(p, o)| CostPanel::from_process(p, &grid, *o).unwrap()).collect();
            let tol = 1e-10 * mean.max(1.0);
            prop_assert!((bang_tsiatis_npv(&bt, 0.0, 7.5, BtForm::Ipcw).unwrap() - mean).abs() < tol);
            prop_assert!((strawderman_npv(&procs, &obs, 0.0, 7.5, StrawdermanForm::Direct).unwrap() - mean).abs() < tol);
            prop_assert!((lin_interval_npv(&panels, &obs).unwrap() - mean).abs() < tol);
        }
    }
}
