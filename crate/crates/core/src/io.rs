//! Reading and writing the on-disk dataset formats.
//!
//! Every CSV has a header row. Parse failures are reported as
//! [`Error::Schema`] with the 1-based line number of the offending row.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cost_estimators::{CostPanel, CostProcess, PanelStatus};
use crate::design::{DesignFormula, RecordKind};
use crate::error::{Error, Result};
use crate::event_history::{build_event_history, EventHistory, EventRow, StateSpace, SubjectRow};
use crate::regression::{design_records, CostRecord, CostRegressionData, SubjectRecords};
use crate::simulator::Cohort;
use crate::stepfn::StepFunction;
use crate::survival::subject_stratum;

fn file_name(path: &Path) -> String {
    path.display().to_string()
}

fn schema(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        file: file_name(path),
        line,
        message: message.into(),
    }
}

/// Parses a JSON document, mapping syntax and shape errors to schema errors.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| schema(path, e.line(), e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// A CSV table with its header, keeping line numbers for error messages.
struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                schema(path, line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name)
            .ok_or_else(|| schema(&self.path, 1, format!("missing required column '{name}'")))
    }

    fn text<'a>(&self, line: usize, row: &'a [String], col: usize) -> Result<&'a str> {
        let v = row[col].as_str();
        if v.is_empty() {
            return Err(schema(&self.path, line, format!("empty value in column '{}'", self.headers[col])));
        }
        Ok(v)
    }

    fn number(&self, line: usize, row: &[String], col: usize) -> Result<f64> {
        let v = self.text(line, row, col)?;
        let x: f64 = v
            .parse()
            .map_err(|_| schema(&self.path, line, format!("'{v}' in column '{}' is not a number", self.headers[col])))?;
        if !x.is_finite() {
            return Err(schema(&self.path, line, format!("non-finite value in column '{}'", self.headers[col])));
        }
        Ok(x)
    }

    fn optional_number(&self, line: usize, row: &[String], col: usize) -> Result<Option<f64>> {
        if row[col].is_empty() {
            Ok(None)
        } else {
            self.number(line, row, col).map(Some)
        }
    }

    fn index(&self, line: usize, row: &[String], col: usize) -> Result<usize> {
        let v = self.text(line, row, col)?;
        v.parse()
            .map_err(|_| schema(&self.path, line, format!("'{v}' in column '{}' is not a state index", self.headers[col])))
    }

    fn cost(&self, line: usize, row: &[String], col: usize) -> Result<f64> {
        let c = self.number(line, row, col)?;
        if c < 0.0 {
            return Err(schema(&self.path, line, format!("negative cost {c}")));
        }
        Ok(c)
    }
}

/// `states.json`: `{"states": [{"label": "well", "absorbing": false}, ...]}`;
/// states are referred to by their position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatesFile {
    pub states: Vec<StateEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEntry {
    pub label: String,
    #[serde(default)]
    pub absorbing: bool,
}

impl StatesFile {
    pub fn from_state_space(ss: &StateSpace) -> Self {
        Self {
            states: (0..ss.n_states())
                .map(|h| StateEntry {
                    label: ss.label(h).to_string(),
                    absorbing: ss.is_absorbing(h),
                })
                .collect(),
        }
    }

    pub fn state_space(&self) -> Result<StateSpace> {
        StateSpace::new(
            self.states.iter().map(|s| s.label.clone()).collect(),
            self.states.iter().enumerate().filter(|(_, s)| s.absorbing).map(|(h, _)| h),
        )
    }
}

pub fn read_state_space(path: &Path) -> Result<StateSpace> {
    read_json::<StatesFile>(path)?
        .state_space()
        .map_err(|e| schema(path, 1, e.to_string()))
}

/// `events.csv`: `subject_id,time,from_state,to_state,cost`.
pub fn read_events(path: &Path) -> Result<Vec<(usize, EventRow)>> {
    let t = Table::read(path)?;
    let cols = ["subject_id", "time", "from_state", "to_state", "cost"].map(|c| t.require(c));
    let [id, time, from, to, cost] = cols;
    let (id, time, from, to, cost) = (id?, time?, from?, to?, cost?);
    t.rows
        .iter()
        .map(|(line, row)| {
            Ok((
                *line,
                EventRow {
                    subject_id: t.text(*line, row, id)?.to_string(),
                    time: t.number(*line, row, time)?,
                    from_state: t.index(*line, row, from)?,
                    to_state: t.index(*line, row, to)?,
                    cost: t.cost(*line, row, cost)?,
                },
            ))
        })
        .collect()
}

/// `subjects.csv`: `subject_id,initial_state[,censor_time][,<covariate>...]`.
/// An empty `censor_time` means uncensored; every other column is a numeric
/// baseline covariate. Returns whether the censoring column was present.
pub fn read_subjects(path: &Path) -> Result<(Vec<(usize, SubjectRow)>, bool)> {
    let t = Table::read(path)?;
    let id = t.require("subject_id")?;
    let init = t.require("initial_state")?;
    let censor = t.column("censor_time");
    let covs: Vec<usize> = (0..t.headers.len())
        .filter(|&c| c != id && c != init && Some(c) != censor)
        .collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, row) in &t.rows {
        let subject_id = t.text(*line, row, id)?.to_string();
        if !seen.insert(subject_id.clone()) {
            return Err(schema(path, *line, format!("duplicate subject '{subject_id}'")));
        }
        let censor_time = match censor {
            Some(c) => t.optional_number(*line, row, c)?,
            None => None,
        };
        let mut covariates = BTreeMap::new();
        for &c in &covs {
            covariates.insert(t.headers[c].clone(), t.number(*line, row, c)?);
        }
        out.push((
            *line,
            SubjectRow {
                subject_id,
                initial_state: t.index(*line, row, init)?,
                censor_time,
                covariates,
            },
        ));
    }
    Ok((out, censor.is_some()))
}

/// One row of `accrual.csv`: `subject_id,time,increment[,end_time]`.
/// Without `end_time` the increment is a point mass at `time`; with it the
/// increment accrues at a constant rate over `(time, end_time]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccrualRow {
    pub subject_id: String,
    pub time: f64,
    pub increment: f64,
    pub end_time: Option<f64>,
}

pub fn read_accrual(path: &Path) -> Result<Vec<(usize, AccrualRow)>> {
    let t = Table::read(path)?;
    let id = t.require("subject_id")?;
    let time = t.require("time")?;
    let inc = t.require("increment")?;
    let end = t.column("end_time");
    t.rows
        .iter()
        .map(|(line, row)| {
            let r = AccrualRow {
                subject_id: t.text(*line, row, id)?.to_string(),
                time: t.number(*line, row, time)?,
                increment: t.cost(*line, row, inc)?,
                end_time: match end {
                    Some(c) => t.optional_number(*line, row, c)?,
                    None => None,
                },
            };
            if r.end_time.is_some_and(|e| e <= r.time) || r.time < 0.0 {
                return Err(schema(path, *line, "accrual interval must satisfy 0 <= time < end_time"));
            }
            Ok((*line, r))
        })
        .collect()
}

/// A row that was skipped during ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub file: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub n_subjects: usize,
    pub n_events: usize,
    pub n_accrual_rows: usize,
    pub rejected: Vec<RejectedRow>,
    pub notes: Vec<String>,
}

/// Input files of an event-history dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub states: PathBuf,
    pub subjects: PathBuf,
    pub events: PathBuf,
    #[serde(default)]
    pub accrual: Option<PathBuf>,
}

impl DatasetPaths {
    /// The conventional file names inside `dir`; `accrual.csv` is used if present.
    pub fn in_dir(dir: &Path) -> Self {
        let accrual = dir.join("accrual.csv");
        Self {
            states: dir.join("states.json"),
            subjects: dir.join("subjects.csv"),
            events: dir.join("events.csv"),
            accrual: accrual.exists().then_some(accrual),
        }
    }
}

/// Validated histories with their cost processes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub state_space: Arc<StateSpace>,
    pub histories: Vec<EventHistory>,
    /// Transition costs as atoms plus any accrual, in subject order.
    pub processes: Vec<CostProcess>,
    pub horizon: f64,
    pub report: IngestReport,
}

/// Loads and validates a dataset. Without an explicit `horizon` the latest
/// event or finite censoring time is used.
pub fn ingest(paths: &DatasetPaths, horizon: Option<f64>) -> Result<Dataset> {
    let ss = Arc::new(read_state_space(&paths.states)?);
    let (subjects, has_censor) = read_subjects(&paths.subjects)?;
    let events = read_events(&paths.events)?;
    let accrual = match &paths.accrual {
        Some(p) => read_accrual(p)?,
        None => Vec::new(),
    };
    let mut report = IngestReport {
        n_subjects: subjects.len(),
        n_events: events.len(),
        n_accrual_rows: accrual.len(),
        ..Default::default()
    };
    if !has_censor {
        report
            .notes
            .push("subjects.csv has no censor_time column; all subjects treated as uncensored".into());
    }
    let known: BTreeSet<&str> = subjects.iter().map(|(_, s)| s.subject_id.as_str()).collect();
    let mut by_subject: BTreeMap<&str, Vec<EventRow>> = BTreeMap::new();
    for (line, e) in &events {
        if known.contains(e.subject_id.as_str()) {
            by_subject.entry(e.subject_id.as_str()).or_default().push(e.clone());
        } else {
            report.rejected.push(RejectedRow {
                file: file_name(&paths.events),
                line: *line,
                reason: format!("unknown subject '{}'", e.subject_id),
            });
        }
    }
    let mut acc_by_subject: BTreeMap<&str, Vec<&AccrualRow>> = BTreeMap::new();
    for (line, a) in &accrual {
        if known.contains(a.subject_id.as_str()) {
            acc_by_subject.entry(a.subject_id.as_str()).or_default().push(a);
        } else {
            report.rejected.push(RejectedRow {
                file: file_name(paths.accrual.as_deref().unwrap_or(Path::new("accrual.csv"))),
                line: *line,
                reason: format!("unknown subject '{}'", a.subject_id),
            });
        }
    }
    let horizon = match horizon {
        Some(h) => h,
        None => events
            .iter()
            .map(|(_, e)| e.time)
            .chain(subjects.iter().filter_map(|(_, s)| s.censor_time))
            .chain(accrual.iter().map(|(_, a)| a.end_time.unwrap_or(a.time)))
            .fold(0.0, f64::max),
    };
    if !(horizon > 0.0) {
        return Err(Error::InvalidInput("cannot infer a positive horizon from the data".into()));
    }
    let mut histories = Vec::with_capacity(subjects.len());
    let mut processes = Vec::with_capacity(subjects.len());
    for (_, s) in &subjects {
        let rows = by_subject.get(s.subject_id.as_str()).map_or(&[][..], Vec::as_slice);
        let h = build_event_history(s, rows, ss.clone(), horizon)?;
        let acc = acc_by_subject.get(s.subject_id.as_str()).map_or(&[][..], Vec::as_slice);
        processes.push(build_process(&h, acc)?);
        histories.push(h);
    }
    Ok(Dataset {
        state_space: ss,
        histories,
        processes,
        horizon,
        report,
    })
}

fn build_process(h: &EventHistory, accrual: &[&AccrualRow]) -> Result<CostProcess> {
    let mut atoms: Vec<(f64, f64)> = h.events().iter().map(|e| (e.time, e.cost)).collect();
    let mut initial = 0.0;
    let mut segments = Vec::new();
    for a in accrual {
        match a.end_time {
            None if a.time == 0.0 => initial += a.increment,
            None => atoms.push((a.time, a.increment)),
            Some(end) => segments.push((a.time, end, a.increment / (end - a.time))),
        }
    }
    CostProcess::new(h.subject_id.clone(), atoms, rate_from_segments(&segments)?, initial)
}

/// Sum of constant rates on `[start, end)` segments as a step function.
fn rate_from_segments(segments: &[(f64, f64, f64)]) -> Result<StepFunction> {
    let mut knots: Vec<f64> = segments.iter().flat_map(|s| [s.0, s.1]).collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let at = |t: f64| segments.iter().filter(|s| s.0 <= t && t < s.1).map(|s| s.2).sum::<f64>();
    let initial = at(0.0);
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut last = initial;
    for &k in knots.iter().filter(|&&k| k > 0.0) {
        let v = at(k);
        if v != last {
            times.push(k);
            values.push(v);
            last = v;
        }
    }
    StepFunction::new(initial, times, values)
}

/// `panel.csv`: `subject_id,interval_start,interval_end,cost,observed` with
/// `observed` one of `0`, `1`, `partial`. The grid is the union of interval
/// endpoints; intervals missing for a subject are unobserved.
pub fn read_panels(path: &Path) -> Result<Vec<CostPanel>> {
    let t = Table::read(path)?;
    let [id, lo, hi, cost, obs] =
        ["subject_id", "interval_start", "interval_end", "cost", "observed"].map(|c| t.require(c));
    let (id, lo, hi, cost, obs) = (id?, lo?, hi?, cost?, obs?);
    let mut parsed = Vec::with_capacity(t.rows.len());
    let mut knots = Vec::new();
    for (line, row) in &t.rows {
        let a = t.number(*line, row, lo)?;
        let b = t.number(*line, row, hi)?;
        if !(b > a) {
            return Err(schema(path, *line, "interval_end must exceed interval_start"));
        }
        let status = match t.text(*line, row, obs)? {
            "1" => PanelStatus::Observed,
            "partial" => PanelStatus::Partial,
            "0" => PanelStatus::Unobserved,
            other => return Err(schema(path, *line, format!("observed must be 0, 1 or partial, got '{other}'"))),
        };
        let c = if status == PanelStatus::Unobserved && row[cost].is_empty() {
            0.0
        } else {
            t.cost(*line, row, cost)?
        };
        knots.extend([a, b]);
        parsed.push((*line, t.text(*line, row, id)?.to_string(), a, b, c, status));
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut order: Vec<String> = Vec::new();
    let mut by_subject: BTreeMap<String, (Vec<f64>, Vec<PanelStatus>)> = BTreeMap::new();
    let m = knots.len().saturating_sub(1);
    for (line, sid, a, b, c, status) in parsed {
        let g = knots.iter().position(|&k| k == a).expect("knot present");
        if knots[g + 1] != b {
            return Err(schema(path, line, format!("interval ({a}, {b}] spans several grid intervals")));
        }
        let entry = by_subject.entry(sid.clone()).or_insert_with(|| {
            order.push(sid.clone());
            (vec![0.0; m], vec![PanelStatus::Unobserved; m])
        });
        if entry.1[g] != PanelStatus::Unobserved || entry.0[g] != 0.0 {
            return Err(schema(path, line, format!("duplicate interval for subject '{sid}'")));
        }
        entry.0[g] = c;
        entry.1[g] = status;
    }
    order
        .into_iter()
        .map(|sid| {
            let (inc, status) = by_subject.remove(&sid).expect("subject present");
            CostPanel::new(sid, knots.clone(), inc, status)
        })
        .collect()
}

pub fn write_panels(path: &Path, panels: &[CostPanel]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subject_id", "interval_start", "interval_end", "cost", "observed"])?;
    for p in panels {
        for (g, (inc, st)) in p.increments.iter().zip(&p.status).enumerate() {
            let flag = match st {
                PanelStatus::Observed => "1",
                PanelStatus::Partial => "partial",
                PanelStatus::Unobserved => "0",
            };
            w.write_record([
                p.subject_id.clone(),
                p.grid[g].to_string(),
                p.grid[g + 1].to_string(),
                inc.to_string(),
                flag.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Record kind written as `h->j` for a transition or `sojourn:h`.
pub fn parse_kind(s: &str) -> Option<RecordKind> {
    if let Some(h) = s.strip_prefix("sojourn:") {
        return h.parse().ok().map(RecordKind::sojourn);
    }
    let (h, j) = s.split_once("->")?;
    Some(RecordKind::transition(h.trim().parse().ok()?, j.trim().parse().ok()?))
}

pub fn format_kind(k: RecordKind) -> String {
    match k {
        RecordKind::Transition { from, to } => format!("{from}->{to}"),
        RecordKind::Sojourn { state } => format!("sojourn:{state}"),
    }
}

/// Parsed `cost-records.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRecordsFile {
    pub records: Vec<CostRecord>,
    /// Names and values of explicit design columns (`x_<label>`), one row per record.
    pub design: Option<(Vec<String>, Vec<Vec<f64>>)>,
}

/// `cost-records.csv`: `subject_id,seq,t_end,cost,observed[,kind][,x_<label>...]`.
/// `cost` may be empty for unobserved records; `kind` is `h->j` or `sojourn:h`.
pub fn read_cost_records(path: &Path) -> Result<CostRecordsFile> {
    let t = Table::read(path)?;
    let [id, seq, t_end, cost, obs] = ["subject_id", "seq", "t_end", "cost", "observed"].map(|c| t.require(c));
    let (id, seq, t_end, cost, obs) = (id?, seq?, t_end?, cost?, obs?);
    let kind = t.column("kind");
    let xcols: Vec<usize> = (0..t.headers.len()).filter(|&c| t.headers[c].starts_with("x_")).collect();
    let mut records = Vec::with_capacity(t.rows.len());
    let mut design = Vec::new();
    for (line, row) in &t.rows {
        let observed = match t.text(*line, row, obs)? {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(schema(path, *line, format!("observed must be 0 or 1, got '{other}'"))),
        };
        let c = if row[cost].is_empty() { None } else { Some(t.cost(*line, row, cost)?) };
        if observed && c.is_none() {
            return Err(schema(path, *line, "observed record without a cost"));
        }
        let k = match kind {
            Some(col) if !row[col].is_empty() => Some(
                parse_kind(&row[col]).ok_or_else(|| schema(path, *line, format!("unrecognized kind '{}'", row[col])))?,
            ),
            _ => None,
        };
        records.push(CostRecord {
            subject_id: t.text(*line, row, id)?.to_string(),
            seq: t.index(*line, row, seq)?,
            t_end: t.number(*line, row, t_end)?,
            cost: c,
            observed,
            kind: k,
        });
        design.push(xcols.iter().map(|&c| t.number(*line, row, c)).collect::<Result<Vec<_>>>()?);
    }
    let design = (!xcols.is_empty()).then(|| {
        (
            xcols.iter().map(|&c| t.headers[c]["x_".len()..].to_string()).collect(),
            design,
        )
    });
    Ok(CostRecordsFile { records, design })
}

impl CostRecordsFile {
    /// Regression data using the explicit design columns when present,
    /// otherwise `formula`.
    pub fn regression_data(
        &self,
        histories: &[EventHistory],
        formula: Option<&DesignFormula>,
        strata: Option<&str>,
    ) -> Result<CostRegressionData> {
        match (&self.design, formula) {
            (_, Some(f)) => design_records(&self.records, histories, f, strata),
            (Some((labels, rows)), None) => explicit_design(&self.records, rows, labels, histories, strata),
            (None, None) => Err(Error::InvalidInput(
                "cost records carry no design columns and no formula was given".into(),
            )),
        }
    }
}

fn explicit_design(
    records: &[CostRecord],
    rows: &[Vec<f64>],
    labels: &[String],
    histories: &[EventHistory],
    strata: Option<&str>,
) -> Result<CostRegressionData> {
    let mut grouped: BTreeMap<&str, Vec<(&CostRecord, &Vec<f64>)>> = BTreeMap::new();
    for (r, x) in records.iter().zip(rows) {
        grouped.entry(r.subject_id.as_str()).or_default().push((r, x));
    }
    let mut subjects = Vec::with_capacity(grouped.len());
    for h in histories {
        let Some(rs) = grouped.remove(h.subject_id.as_str()) else {
            continue;
        };
        let mut rs = rs;
        rs.sort_by_key(|(r, _)| r.seq);
        subjects.push(SubjectRecords {
            subject_id: h.subject_id.clone(),
            y: rs.iter().map(|(r, _)| r.cost.unwrap_or(0.0)).collect(),
            x: DMatrix::from_fn(rs.len(), labels.len(), |i, j| rs[i].1[j]),
            t: rs.iter().map(|(r, _)| r.t_end).collect(),
            s: rs.iter().map(|(r, _)| r.observed && r.cost.is_some()).collect(),
            stratum: subject_stratum(h, strata)?,
            kinds: rs.iter().map(|(r, _)| r.kind).collect(),
        });
    }
    if let Some(id) = grouped.keys().next() {
        return Err(Error::InvalidInput(format!("cost records for unknown subject {id}")));
    }
    CostRegressionData::new(labels.to_vec(), subjects)
}

/// Writes the dataset files (`states.json`, `subjects.csv`, `events.csv`,
/// `accrual.csv`) for a simulated cohort, cut at the end of follow-up.
pub fn write_cohort(dir: &Path, cohort: &Cohort) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("states.json"), &StatesFile::from_state_space(&cohort.state_space))?;
    let cov_names: Vec<String> = cohort
        .histories
        .first()
        .map(|h| h.covariates.names().map(str::to_string).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_path(dir.join("subjects.csv"))?;
    let mut header = vec!["subject_id".to_string(), "initial_state".into(), "censor_time".into()];
    header.extend(cov_names.iter().cloned());
    w.write_record(&header)?;
    for h in &cohort.histories {
        let mut rec = vec![
            h.subject_id.clone(),
            h.initial_state.to_string(),
            if h.censor_time().is_finite() { h.censor_time().to_string() } else { String::new() },
        ];
        rec.extend(cov_names.iter().map(|n| h.covariates.baseline(n).unwrap_or(f64::NAN).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("events.csv"))?;
    w.write_record(["subject_id", "time", "from_state", "to_state", "cost"])?;
    for h in &cohort.histories {
        for e in h.events() {
            w.write_record([
                h.subject_id.clone(),
                e.time.to_string(),
                e.from_state.to_string(),
                e.to_state.to_string(),
                e.cost.to_string(),
            ])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("accrual.csv"))?;
    w.write_record(["subject_id", "time", "increment", "end_time"])?;
    for (p, o) in cohort.processes.iter().zip(cohort.observations()) {
        if p.initial_cost != 0.0 {
            w.write_record([p.subject_id.clone(), "0".into(), p.initial_cost.to_string(), String::new()])?;
        }
        let rate = p.rate();
        let mut knots = vec![0.0];
        knots.extend(rate.jump_times().iter().copied().filter(|&t| t < o.time));
        knots.push(o.time);
        for w2 in knots.windows(2) {
            let v = rate.eval(w2[0]);
            if v != 0.0 && w2[1] > w2[0] {
                w.write_record([
                    p.subject_id.clone(),
                    w2[0].to_string(),
                    (v * (w2[1] - w2[0])).to_string(),
                    w2[1].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn fixture(dir: &Path, subjects: &str, events: &str) -> DatasetPaths {
        write(
            dir,
            "states.json",
            r#"{"states": [{"label": "alive"}, {"label": "dead", "absorbing": true}]}"#,
        );
        write(dir, "subjects.csv", subjects);
        write(dir, "events.csv", events);
        DatasetPaths::in_dir(dir)
    }

    #[test]
    fn three_subject_fixture() {
        let d = tempfile::tempdir().unwrap();
        let paths = fixture(
            d.path(),
            "subject_id,initial_state,censor_time,age\na,0,,60\nb,0,2.5,70\nc,0,,65\n",
            "subject_id,time,from_state,to_state,cost\na,1,0,1,100\nc,3,0,1,300\n",
        );
        let ds = ingest(&paths, None).unwrap();
        assert_eq!(ds.histories.len(), 3);
        assert!(ds.report.rejected.is_empty());
        assert_eq!(ds.horizon, 3.0);
        assert_eq!(ds.histories[1].censor_time(), 2.5);
        assert_eq!(ds.histories[1].covariates.baseline("age"), Some(70.0));
        assert_eq!(ds.processes[2].accumulated(3.0), 300.0);
    }

    #[test]
    fn negative_cost_names_the_row() {
        let d = tempfile::tempdir().unwrap();
        let paths = fixture(
            d.path(),
            "subject_id,initial_state,censor_time\na,0,\nb,0,\n",
            "subject_id,time,from_state,to_state,cost\na,1,0,1,100\nb,2,0,1,-5\n",
        );
        match ingest(&paths, None).unwrap_err() {
            Error::Schema { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("negative"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn missing_censor_column_means_uncensored() {
        let d = tempfile::tempdir().unwrap();
        let paths = fixture(
            d.path(),
            "subject_id,initial_state\na,0\nb,0\n",
            "subject_id,time,from_state,to_state,cost\na,1,0,1,1\nb,2,0,1,1\n",
        );
        let ds = ingest(&paths, None).unwrap();
        assert!(ds.histories.iter().all(|h| h.censor_time().is_infinite()));
        assert_eq!(ds.report.notes.len(), 1);
    }

    #[test]
    fn accrual_segments_and_panels_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let mut paths = fixture(
            d.path(),
            "subject_id,initial_state,censor_time\na,0,\n",
            "subject_id,time,from_state,to_state,cost\na,4,0,1,10\n",
        );
        paths.accrual = Some(write(
            d.path(),
            "accrual.csv",
            "subject_id,time,increment,end_time\na,0,5,\na,0,4,2\na,1,3,4\na,2,7,\n",
        ));
        let ds = ingest(&paths, None).unwrap();
        let p = &ds.processes[0];
        assert_eq!(p.initial_cost, 5.0);
        assert!((p.accumulated(4.0) - (4.0 + 3.0 + 7.0 + 10.0)).abs() < 1e-12);
        assert!((p.accumulated(1.5) - (3.0 + 0.5)).abs() < 1e-12);
        let recs = crate::npv::sojourn_records(&ds.histories, &ds.processes, &[]);
        assert_eq!(recs.len(), 1);
        assert!((recs[0].cost - 7.0).abs() < 1e-12);

        let panel = write(
            d.path(),
            "panel.csv",
            "subject_id,interval_start,interval_end,cost,observed\na,0,1,2,1\na,1,2,3,partial\nb,0,1,4,1\n",
        );
        let panels = read_panels(&panel).unwrap();
        assert_eq!(panels.len(), 2);
        assert_eq!(panels[1].status, vec![PanelStatus::Observed, PanelStatus::Unobserved]);
        let out = d.path().join("panel2.csv");
        write_panels(&out, &panels).unwrap();
        assert_eq!(read_panels(&out).unwrap(), panels);
    }

    #[test]
    fn cost_records_with_design_columns() {
        let d = tempfile::tempdir().unwrap();
        let paths = fixture(
            d.path(),
            "subject_id,initial_state,censor_time\na,0,\nb,0,0.5\n",
            "subject_id,time,from_state,to_state,cost\na,1,0,1,2\n",
        );
        let ds = ingest(&paths, Some(2.0)).unwrap();
        let f = write(
            d.path(),
            "cost-records.csv",
            "subject_id,seq,t_end,cost,observed,kind,x_intercept\na,0,1,2,1,0->1,1\nb,0,1,,0,0->1,1\n",
        );
        let file = read_cost_records(&f).unwrap();
        assert_eq!(file.records[0].kind, Some(RecordKind::transition(0, 1)));
        let data = file.regression_data(&ds.histories, None, None).unwrap();
        assert_eq!(data.labels, vec!["intercept".to_string()]);
        assert_eq!(data.subjects[1].s, vec![false]);
        let bad = write(d.path(), "bad.csv", "subject_id,seq,t_end,cost,observed\na,0,1,,1\n");
        assert!(matches!(read_cost_records(&bad), Err(Error::Schema { line: 2, .. })));
    }
}
