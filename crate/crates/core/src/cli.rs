//! Command-line surface: `simulate`, `estimate`, `study` and `check`.
//!
//! Reports are deterministic JSON that embed the resolved command line;
//! wall-clock metadata goes to a `.meta.json` sidecar next to each report.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cost_estimators::{bang_tsiatis_npv, lin_interval_npv, strawderman_npv, BtForm, CensoredCost, CostPanel, StrawdermanForm};
use crate::cox::{fit_cox, CoxOptions, CoxSpec};
use crate::design::{DesignFormula, RecordKind, Term};
use crate::error::{Error, Result};
use crate::event_history::EventHistory;
use crate::io::{self, Dataset, DatasetPaths};
use crate::npv::{
    discounted_life_expectancy, npv_profile, qaly, sojourn_records, CovariateProfile, InitialDistribution, MarkovFit, QualityWeights,
    SojournRateModel, TransitionCostModel,
};
use crate::regression::{
    estimate_variance_components, fit_feasible_gls, fit_weighted_gee, fit_weighted_gls, ipc_weights,
    single_transition_cost_data, transition_cost_data, CostRegressionData, GeeOptions, Link, OmegaSpec, ReFit,
    WeightConvention,
};
use crate::simulator::{simulate_cohort, ScenarioSpec};
use crate::study::{run_checks, run_study, CheckReport, StudyConfig};
use crate::survival::{cost_observation, kaplan_meier_obs, CensoringModel, Observation};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "COSTNPV_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "costnpv", version, about = "Net present value of costs in multistate models")]
pub struct Cli {
    /// Directory for reports and generated files.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Simulate a cohort from a scenario and write its dataset files.
    Simulate(SimulateArgs),
    /// Run one estimator on a dataset.
    Estimate(EstimateArgs),
    /// Replicate estimators over simulated cohorts and compare with the oracle.
    Study(StudyArgs),
    /// Evaluate the exact identity suite on a dataset.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Scenario JSON.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Directory with states.json, subjects.csv, events.csv and optional accrual.csv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub states: Option<PathBuf>,
    #[arg(long)]
    pub subjects: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub accrual: Option<PathBuf>,
    /// End of the study period; defaults to the latest recorded time.
    #[arg(long)]
    pub horizon: Option<f64>,
}

impl DataArgs {
    pub fn paths(&self) -> Result<DatasetPaths> {
        let base = self.data.as_deref().map(DatasetPaths::in_dir);
        let pick = |explicit: &Option<PathBuf>, from_dir: Option<PathBuf>, name: &str| {
            explicit
                .clone()
                .or(from_dir)
                .ok_or_else(|| Error::InvalidInput(format!("no {name} given; pass --data or --{name}")))
        };
        let paths = DatasetPaths {
            states: pick(&self.states, base.as_ref().map(|b| b.states.clone()), "states")?,
            subjects: pick(&self.subjects, base.as_ref().map(|b| b.subjects.clone()), "subjects")?,
            events: pick(&self.events, base.as_ref().map(|b| b.events.clone()), "events")?,
            accrual: self.accrual.clone().or(base.and_then(|b| b.accrual)),
        };
        for p in [&paths.states, &paths.subjects, &paths.events].into_iter().chain(paths.accrual.as_ref()) {
            if !p.exists() {
                return Err(Error::InvalidInput(format!("{} does not exist", p.display())));
            }
        }
        Ok(paths)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Km,
    Aj,
    Cox,
    Bt,
    Strawderman,
    Lin,
    Gls,
    Gee,
    Npv,
    Qaly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BtFormArg {
    Ipcw,
    SurvivalWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrawdermanFormArg {
    Direct,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkArg {
    Identity,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaArg {
    /// Working independence.
    Identity,
    /// Random effects with the given `--sigma-u2` and `--sigma-a2`.
    RandomEffects,
    /// Random effects with moment estimates from a first-stage fit.
    Feasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightArg {
    /// `s = [U ∧ τ ≥ T]`.
    TransitionObserved,
    /// `s = [U ≥ T ∧ τ]`.
    LinTruncated,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    #[arg(value_enum)]
    pub estimator: EstimatorKind,
    #[command(flatten)]
    pub data: DataArgs,
    /// Continuous discount rate.
    #[arg(long)]
    pub r: Option<f64>,
    /// Time limit; defaults to the horizon.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Comma-separated interval grid for `lin`.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Baseline covariate stratifying the censoring distribution.
    #[arg(long)]
    pub strata: Option<String>,
    #[arg(long, value_enum, default_value = "ipcw")]
    pub bt_form: BtFormArg,
    #[arg(long, value_enum, default_value = "direct")]
    pub strawderman_form: StrawdermanFormArg,
    /// Interval cost panel for `lin`.
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Cost records for `gls` and `gee`.
    #[arg(long)]
    pub cost_records: Option<PathBuf>,
    /// Design formula JSON for `gls` and `gee`.
    #[arg(long)]
    pub formula: Option<PathBuf>,
    /// Comma-separated covariates for `cox`; defaults to all.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "identity")]
    pub link: LinkArg,
    #[arg(long, value_enum, default_value = "identity")]
    pub omega: OmegaArg,
    #[arg(long, default_value_t = 0.0)]
    pub sigma_u2: f64,
    #[arg(long, default_value_t = 0.0)]
    pub sigma_a2: f64,
    /// Observation indicator for single-transition costs.
    #[arg(long, value_enum, default_value = "transition-observed")]
    pub weights: WeightArg,
    /// Profile JSON for `npv` and `qaly`.
    #[arg(long)]
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StudyArgs {
    /// Study JSON: scenario, replicates, estimators.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub oracle_draws: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    #[serde(skip)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CheckArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Simulate the dataset from this scenario instead of reading files.
    #[arg(long, conflicts_with = "data")]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
}

/// `profile.json`: covariate profiles and model choices for `npv` and `qaly`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    #[serde(default)]
    pub profiles: Vec<CovariateProfile>,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    /// `nonparametric` (default) or `cox` on the profile covariates.
    #[serde(default)]
    pub markov: MarkovModel,
    /// Transition-cost design; defaults to one dummy per observed transition.
    #[serde(default)]
    pub transition_costs: Option<DesignFormula>,
    #[serde(default)]
    pub sojourn: SojournConfig,
    /// Quality weight per state for `qaly`; defaults to 1 in transient states.
    #[serde(default)]
    pub quality_weights: Option<Vec<f64>>,
    /// Overrides the empirical initial-state distribution.
    #[serde(default)]
    pub initial_distribution: Option<Vec<f64>>,
    /// Discount rates for an additional NPV-versus-rate table.
    #[serde(default)]
    pub r_sweep: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkovModel {
    #[default]
    Nonparametric,
    Cox,
}

/// Sojourn accrual model: user rates, or estimated from accrual data on `grid`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SojournConfig {
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    /// Fixed rates per state on `grid`, keyed by state index.
    #[serde(default)]
    pub rates: Option<BTreeMap<usize, Vec<f64>>>,
    /// Log-rate regression design; otherwise exposure-weighted rates.
    #[serde(default)]
    pub log_rate: Option<DesignFormula>,
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            let body = json!({"error": {"invariant": e.invariant(), "message": e.to_string()}});
            eprintln!("{body}");
            1
        }
    }
}

/// Executes a parsed command. Returns 0 on success and 3 when `check`
/// finds a violated identity.
pub fn run(cli: &Cli) -> Result<i32> {
    std::fs::create_dir_all(&cli.out_dir)?;
    match &cli.command {
        Command::Simulate(a) => simulate(&cli.out_dir, a).map(|_| 0),
        Command::Estimate(a) => {
            let report = estimate(a)?;
            let path = cli.out_dir.join(format!("estimate-{}.json", a.estimator_name()));
            write_report(&path, &report)?;
            write_tables(&cli.out_dir, &report)?;
            emit(&report)?;
            Ok(0)
        }
        Command::Study(a) => study(&cli.out_dir, a).map(|_| 0),
        Command::Check(a) => {
            let (report, config) = check(a)?;
            let out = json!({"command": "check", "config": config, "result": report});
            write_report(&cli.out_dir.join("check.json"), &out)?;
            emit(&out)?;
            Ok(if report.passed { 0 } else { 3 })
        }
    }
}

impl EstimateArgs {
    fn estimator_name(&self) -> String {
        serde_json::to_value(self.estimator)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }
}

/// Pretty JSON on stdout; a closed pipe is not an error.
fn emit<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(out, "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

/// Writes `value` and a `.meta.json` sidecar with the wall-clock time.
pub fn write_report<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    io::write_json(path, value)?;
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let meta = json!({
        "report": path.file_name().map(|f| f.to_string_lossy().into_owned()),
        "created_unix_seconds": secs,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    io::write_json(Path::new(&name), &meta)
}

fn simulate(out: &Path, a: &SimulateArgs) -> Result<()> {
    let mut spec: ScenarioSpec = io::read_json(&a.scenario)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.n {
        spec.n = n;
    }
    let cohort = simulate_cohort(&spec)?;
    io::write_cohort(out, &cohort)?;
    let censored = cohort.observations().iter().filter(|o| !o.event).count();
    let report = json!({
        "command": "simulate",
        "config": a,
        "scenario": spec,
        "result": {"n": cohort.histories.len(), "censored_before_tau": censored, "full_mean_npv": cohort.full_mean(spec.r)},
    });
    write_report(&out.join("simulate.json"), &report)
}

fn study(out: &Path, a: &StudyArgs) -> Result<()> {
    let mut config: StudyConfig = io::read_json(&a.config)?;
    if let Some(r) = a.replicates {
        config.replicates = r;
    }
    if let Some(d) = a.oracle_draws {
        config.oracle_draws = d;
    }
    let run = || run_study(&config);
    let output = match a.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    write_report(&out.join("study-summary.json"), &output.summary)?;
    let mut w = csv::Writer::from_path(out.join("study-replicates.csv"))?;
    w.write_record(["replicate", "estimator", "parameter", "estimate", "se", "error"])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in &output.replicates {
        w.write_record([
            r.replicate.to_string(),
            r.estimator.clone(),
            r.parameter.clone(),
            fmt(r.estimate),
            fmt(r.se),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    emit(&output.summary.parameters)?;
    Ok(())
}

fn check(a: &CheckArgs) -> Result<(CheckReport, Value)> {
    let (histories, processes, r, tau) = match &a.scenario {
        Some(path) => {
            let spec: ScenarioSpec = io::read_json(path)?;
            let c = simulate_cohort(&spec)?;
            let procs = c.observed_processes();
            (c.histories, procs, a.r.unwrap_or(spec.r), a.tau.unwrap_or(spec.tau))
        }
        None => {
            let ds = io::ingest(&a.data.paths()?, a.data.horizon)?;
            let tau = a.tau.unwrap_or(ds.horizon);
            (ds.histories, ds.processes, a.r.unwrap_or(0.0), tau)
        }
    };
    let report = run_checks(&histories, Some(&processes), r, tau)?;
    Ok((report, json!({"args": a, "r": r, "tau": tau})))
}

/// An estimator run: resolved configuration, ingestion summary and result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub command: &'static str,
    pub estimator: EstimatorKind,
    pub config: Value,
    pub ingest: io::IngestReport,
    pub result: Value,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

/// A plot-ready CSV table written next to the report.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn write_tables(out: &Path, report: &EstimateReport) -> Result<()> {
    for t in &report.tables {
        let mut w = csv::Writer::from_path(out.join(&t.name))?;
        w.write_record(&t.header)?;
        for r in &t.rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Runs one estimator and builds its report.
pub fn estimate(a: &EstimateArgs) -> Result<EstimateReport> {
    let ds = io::ingest(&a.data.paths()?, a.data.horizon)?;
    let profile: Option<ProfileConfig> = a.profile.as_deref().map(io::read_json).transpose()?;
    let r = a.r.or(profile.as_ref().and_then(|p| p.r)).unwrap_or(0.0);
    let tau = a.tau.or(profile.as_ref().and_then(|p| p.tau)).unwrap_or(ds.horizon);
    if !(r >= 0.0 && r.is_finite()) || !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("need r >= 0 and tau > 0, got r = {r}, tau = {tau}")));
    }
    let mut tables = Vec::new();
    let strata = a.strata.as_deref();
    let result = match a.estimator {
        EstimatorKind::Km => km(&ds, r, tau, &mut tables)?,
        EstimatorKind::Aj => aj(&ds, tau, &mut tables)?,
        EstimatorKind::Cox => cox(&ds, a)?,
        EstimatorKind::Bt => {
            let obs: Vec<Observation> = ds.histories.iter().map(|h| cost_observation(h, tau)).collect();
            let costs: Vec<CensoredCost> = ds
                .processes
                .iter()
                .zip(&obs)
                .map(|(p, o)| {
                    if o.event {
                        CensoredCost::observed(o.time, p.discounted(r, o.time) + p.initial_cost)
                    } else {
                        CensoredCost::censored(o.time)
                    }
                })
                .collect();
            let form = match a.bt_form {
                BtFormArg::Ipcw => BtForm::Ipcw,
                BtFormArg::SurvivalWeighted => BtForm::SurvivalWeighted,
            };
            let v = bang_tsiatis_npv(&costs, 0.0, tau, form)?;
            json!({"npv": v, "n": costs.len(), "complete": costs.iter().filter(|c| c.event).count()})
        }
        EstimatorKind::Strawderman => {
            let obs: Vec<Observation> = ds.histories.iter().map(|h| cost_observation(h, tau)).collect();
            let procs: Vec<_> = ds.processes.iter().zip(&obs).map(|(p, o)| p.truncated(o.time)).collect();
            let form = match a.strawderman_form {
                StrawdermanFormArg::Direct => StrawdermanForm::Direct,
                StrawdermanFormArg::Dual => StrawdermanForm::Dual,
            };
            json!({"npv": strawderman_npv(&procs, &obs, r, tau, form)?, "n": procs.len()})
        }
        EstimatorKind::Lin => lin(&ds, a, tau)?,
        EstimatorKind::Gls | EstimatorKind::Gee => regression(&ds, a, tau, strata)?,
        EstimatorKind::Npv | EstimatorKind::Qaly => {
            npv(&ds, a, profile.unwrap_or_default(), r, tau, strata, &mut tables)?
        }
    };
    Ok(EstimateReport {
        command: "estimate",
        estimator: a.estimator,
        config: json!({"args": a, "r": r, "tau": tau, "horizon": ds.horizon}),
        ingest: ds.report,
        result,
        tables,
    })
}

fn km(ds: &Dataset, r: f64, tau: f64, tables: &mut Vec<Table>) -> Result<Value> {
    let obs: Vec<Observation> = ds
        .histories
        .iter()
        .map(|h| {
            let (t, e) = h.survival_observation();
            Observation::new(t, e)
        })
        .collect();
    let fit = kaplan_meier_obs(&obs)?;
    let s = &fit.survival;
    tables.push(Table {
        name: "km.csv".into(),
        header: vec!["time".into(), "survival".into(), "at_risk".into()],
        rows: std::iter::once(vec![num(0.0), num(1.0), obs.len().to_string()])
            .chain(
                s.jump_times()
                    .iter()
                    .zip(s.values())
                    .map(|(&t, &v)| vec![num(t), num(v), fit.at_risk_at(t).to_string()]),
            )
            .collect(),
    });
    Ok(json!({
        "n": obs.len(),
        "events": obs.iter().filter(|o| o.event).count(),
        "times": s.jump_times(),
        "survival": s.values(),
        "survival_at_tau": s.eval(tau),
        "discounted_life_expectancy": discounted_life_expectancy(s, r, tau),
    }))
}

fn aj(ds: &Dataset, tau: f64, tables: &mut Vec<Table>) -> Result<Value> {
    let m = MarkovFit::nonparametric(&ds.histories)?;
    let n = m.n_states();
    let mut rows = Vec::new();
    for (t, p) in m.path.times().iter().zip(m.path.matrices()) {
        for i in 0..n {
            for j in 0..n {
                rows.push(vec![num(*t), i.to_string(), j.to_string(), num(p[(i, j)])]);
            }
        }
    }
    tables.push(Table {
        name: "aj.csv".into(),
        header: vec!["time".into(), "from".into(), "to".into(), "probability".into()],
        rows,
    });
    let at = m.path.at(tau);
    Ok(json!({
        "states": ds.state_space.labels(),
        "jump_times": m.path.times().len().saturating_sub(1),
        "max_row_sum_error": m.path.max_row_sum_error(),
        "tau": tau,
        "p_at_tau": (0..n).map(|i| (0..n).map(|j| at[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
    }))
}

fn cox(ds: &Dataset, a: &EstimateArgs) -> Result<Value> {
    let names: Vec<String> = match &a.covariates {
        Some(c) => c.clone(),
        None => ds
            .histories
            .first()
            .map(|h| h.covariates.names().map(str::to_string).collect())
            .unwrap_or_default(),
    };
    if names.is_empty() {
        return Err(Error::InvalidInput("cox needs at least one covariate".into()));
    }
    let formula = DesignFormula::new(names.iter().map(|n| Term::covariate(n)).collect());
    let fit = fit_cox(&ds.histories, &CoxSpec::new(formula), CoxOptions::default())?;
    Ok(json!({
        "labels": names,
        "beta": fit.beta.as_slice(),
        "se": fit.standard_errors()?,
        "loglik": fit.loglik,
        "iterations": fit.iterations,
        "n_events": fit.n_events,
    }))
}

fn lin(ds: &Dataset, a: &EstimateArgs, tau: f64) -> Result<Value> {
    let obs: Vec<Observation> = ds.histories.iter().map(|h| cost_observation(h, tau)).collect();
    let panels: Vec<CostPanel> = match &a.panel {
        Some(path) => {
            let mut by_id: BTreeMap<String, CostPanel> =
                io::read_panels(path)?.into_iter().map(|p| (p.subject_id.clone(), p)).collect();
            let grid = by_id
                .values()
                .next()
                .map(|p| p.grid.clone())
                .ok_or(Error::EmptySample)?;
            ds.histories
                .iter()
                .map(|h| match by_id.remove(&h.subject_id) {
                    Some(p) => Ok(p),
                    None => {
                        let m = grid.len() - 1;
                        CostPanel::new(
                            h.subject_id.clone(),
                            grid.clone(),
                            vec![0.0; m],
                            vec![crate::cost_estimators::PanelStatus::Unobserved; m],
                        )
                    }
                })
                .collect::<Result<_>>()?
        }
        None => {
            let grid = a.grid.clone().unwrap_or_else(|| vec![0.0, tau]);
            ds.processes
                .iter()
                .zip(&obs)
                .map(|(p, o)| CostPanel::from_process(p, &grid, *o))
                .collect::<Result<_>>()?
        }
    };
    let v = lin_interval_npv(&panels, &obs)?;
    Ok(json!({"total_undiscounted": v, "grid": panels.first().map(|p| p.grid.clone()), "n": panels.len()}))
}

fn regression_data(ds: &Dataset, a: &EstimateArgs, tau: f64, strata: Option<&str>) -> Result<(CostRegressionData, &'static str)> {
    let formula: Option<DesignFormula> = a.formula.as_deref().map(io::read_json).transpose()?;
    if let Some(path) = &a.cost_records {
        let file = io::read_cost_records(path)?;
        return Ok((file.regression_data(&ds.histories, formula.as_ref(), strata)?, "cost_records"));
    }
    let ss = &ds.state_space;
    let transient: Vec<usize> = ss.transient().collect();
    let absorbing: Vec<usize> = ss.absorbing().collect();
    if let ([from], [to]) = (transient.as_slice(), absorbing.as_slice()) {
        let formula = formula.unwrap_or_else(|| DesignFormula::new(vec![Term::intercept()]));
        let convention = match a.weights {
            WeightArg::TransitionObserved => WeightConvention::TransitionObserved,
            WeightArg::LinTruncated => WeightConvention::LinTruncated,
        };
        let kind = RecordKind::transition(*from, *to);
        return Ok((
            single_transition_cost_data(&ds.histories, kind, &formula, tau, convention, strata)?,
            "single_transition",
        ));
    }
    let formula = formula.unwrap_or_else(|| DesignFormula::dummies(&observed_kinds(&ds.histories)));
    Ok((transition_cost_data(&ds.histories, &formula, strata)?, "transitions"))
}

fn observed_kinds(histories: &[EventHistory]) -> Vec<RecordKind> {
    let mut kinds: Vec<RecordKind> = histories
        .iter()
        .flat_map(|h| h.events().iter().map(|e| RecordKind::transition(e.from_state, e.to_state)))
        .collect();
    kinds.sort();
    kinds.dedup();
    kinds
}

fn omega(a: &EstimateArgs) -> OmegaSpec {
    match a.omega {
        OmegaArg::RandomEffects => OmegaSpec::RandomEffects {
            sigma_u2: a.sigma_u2,
            sigma_a2: a.sigma_a2,
        },
        _ => OmegaSpec::Identity,
    }
}

fn fit_json(fit: &ReFit) -> Value {
    let n = fit.sandwich.nrows();
    json!({
        "labels": fit.labels,
        "beta": fit.beta.as_slice(),
        "se": fit.standard_errors(),
        "sandwich": (0..n).map(|i| (0..n).map(|j| fit.sandwich[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "sigma_u2": fit.sigma_u2,
        "sigma_a2": fit.sigma_a2,
        "n_used": fit.n_used,
        "iterations": fit.iterations,
        "estimating_norm": fit.estimating_norm,
    })
}

fn regression(ds: &Dataset, a: &EstimateArgs, tau: f64, strata: Option<&str>) -> Result<Value> {
    let (data, source) = regression_data(ds, a, tau, strata)?;
    let g = CensoringModel::fit(&ds.histories, strata)?;
    let w = ipc_weights(&data, &g, tau)?;
    let fit = match (a.estimator, a.omega) {
        (EstimatorKind::Gls, OmegaArg::Feasible) => fit_feasible_gls(&data, &w)?,
        (EstimatorKind::Gls, _) => fit_weighted_gls(&data, &w, &omega(a))?,
        (_, o) => {
            let link = match a.link {
                LinkArg::Identity => Link::Identity,
                LinkArg::Log => Link::Log,
            };
            let om = if o == OmegaArg::Feasible {
                let first = fit_weighted_gee(&data, &w, link, &OmegaSpec::Identity, GeeOptions::default())?;
                let (sigma_u2, sigma_a2) = estimate_variance_components(&data, &w, &first.beta)?;
                OmegaSpec::RandomEffects { sigma_u2, sigma_a2 }
            } else {
                omega(a)
            };
            fit_weighted_gee(&data, &w, link, &om, GeeOptions::default())?
        }
    };
    let mut v = fit_json(&fit);
    v["records"] = json!(source);
    v["n_subjects"] = json!(data.subjects.len());
    Ok(v)
}

fn npv(
    ds: &Dataset,
    a: &EstimateArgs,
    cfg: ProfileConfig,
    r: f64,
    tau: f64,
    strata: Option<&str>,
    tables: &mut Vec<Table>,
) -> Result<Value> {
    let profiles = if cfg.profiles.is_empty() {
        vec![CovariateProfile::baseline()]
    } else {
        cfg.profiles.clone()
    };
    let ss = &ds.state_space;
    let init = match &cfg.initial_distribution {
        Some(p) => InitialDistribution::new(p.clone())?,
        None => InitialDistribution::empirical(&ds.histories, None)?,
    };
    let cox_fit = match cfg.markov {
        MarkovModel::Nonparametric => None,
        MarkovModel::Cox => {
            let names: Vec<String> = profiles
                .iter()
                .flat_map(|p| p.z.keys().cloned())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let formula = DesignFormula::new(names.iter().map(|n| Term::covariate(n)).collect());
            Some(fit_cox(&ds.histories, &CoxSpec::new(formula), CoxOptions::default())?)
        }
    };
    let nonparametric = match cox_fit {
        None => Some(MarkovFit::nonparametric(&ds.histories)?),
        Some(_) => None,
    };
    let markov_for = |p: &CovariateProfile| -> Result<MarkovFit> {
        match (&cox_fit, &nonparametric) {
            (Some(fit), _) => MarkovFit::from_cox(fit, p, tau.max(ds.horizon)),
            (None, Some(m)) => Ok(m.clone()),
            (None, None) => unreachable!("one Markov model is always fitted"),
        }
    };
    if a.estimator == EstimatorKind::Qaly {
        let q = cfg
            .quality_weights
            .clone()
            .unwrap_or_else(|| (0..ss.n_states()).map(|h| if ss.is_absorbing(h) { 0.0 } else { 1.0 }).collect());
        let weights = QualityWeights::constant(ss, &q)?;
        let ones = QualityWeights::constant(ss, &vec![1.0; ss.n_states()])?;
        let mut out = Vec::new();
        for p in &profiles {
            let m = markov_for(p)?;
            out.push(json!({
                "profile": p,
                "qaly": qaly(&weights, &m.path, &init, r, tau)?,
                "discounted_life_expectancy": qaly(&ones, &m.path, &init, r, tau)?,
            }));
        }
        return Ok(json!({"quality_weights": q, "profiles": out}));
    }
    let costs = if ds.histories.iter().all(|h| h.events().is_empty()) {
        None
    } else {
        let formula = cfg
            .transition_costs
            .clone()
            .unwrap_or_else(|| DesignFormula::dummies(&observed_kinds(&ds.histories)));
        let data = transition_cost_data(&ds.histories, &formula, strata)?;
        let g = CensoringModel::fit(&ds.histories, strata)?;
        let w = ipc_weights(&data, &g, tau)?;
        let fit = match a.omega {
            OmegaArg::Feasible => fit_feasible_gls(&data, &w)?,
            _ => fit_weighted_gls(&data, &w, &omega(a))?,
        };
        Some(TransitionCostModel::new(formula, fit)?)
    };
    let grid = cfg.sojourn.grid.clone().unwrap_or_else(|| vec![0.0, tau]);
    let rates = match (&cfg.sojourn.rates, &cfg.sojourn.log_rate) {
        (Some(rates), _) => SojournRateModel::piecewise(grid, rates.clone())?,
        (None, Some(formula)) => SojournRateModel::fit_log_rate(
            &sojourn_records(&ds.histories, &ds.processes, &[]),
            &ds.histories,
            formula.clone(),
            grid,
        )?,
        (None, None) => {
            let records = sojourn_records(&ds.histories, &ds.processes, &grid);
            if records.iter().all(|r| r.cost == 0.0) {
                SojournRateModel::Zero
            } else {
                SojournRateModel::from_sojourns(&records, grid)?
            }
        }
    };
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    let mut sweep = Vec::new();
    for p in &profiles {
        let m = markov_for(p)?;
        let report = npv_profile(p, &init, &m, costs.as_ref(), &rates, r, tau)?;
        for (name, state, stream, v) in report.csv_rows() {
            rows.push(vec![name, state, stream.to_string(), num(v)]);
        }
        for &rr in &cfg.r_sweep {
            let s = npv_profile(p, &init, &m, costs.as_ref(), &rates, rr, tau)?;
            sweep.push(vec![p.name.clone(), num(rr), num(s.unconditional.transition), num(s.unconditional.sojourn), num(s.unconditional.total)]);
        }
        reports.push(report);
    }
    tables.push(Table {
        name: "npv.csv".into(),
        header: ["profile", "initial_state", "stream", "value"].map(String::from).to_vec(),
        rows,
    });
    if !sweep.is_empty() {
        tables.push(Table {
            name: "npv-sweep.csv".into(),
            header: ["profile", "r", "transition", "sojourn", "total"].map(String::from).to_vec(),
            rows: sweep,
        });
    }
    Ok(json!({
        "transition_cost_model": costs.as_ref().map(|c| fit_json(&c.fit)),
        "reports": reports,
    }))
}
