//! File formats: JSON scenarios and parameter files, CSV trial logs and
//! result tables.
//!
//! Floats are written with Rust's shortest round-trip representation, so
//! every writer/loader pair reproduces values bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ensemble::EnsembleResult;
use crate::error::{Error, Result};
use crate::estimator::FilterState;
use crate::model::{
    Event, LogStep, ModelParameters, Observation, ParameterSem, TrialLog, TRUST_MAX, TRUST_MIN,
};
use crate::sysid::FitResult;

pub const LOG_HEADER: [&str; 8] = [
    "participant_id",
    "trial_id",
    "event_index",
    "event_type",
    "reported_trust",
    "phi",
    "pi",
    "upsilon",
];

pub const RESULT_HEADER: [&str; 10] = [
    "participant_id",
    "trial_id",
    "step",
    "event_type",
    "truth",
    "reported_trust",
    "estimate_mean",
    "estimate_variance",
    "band_lower",
    "band_upper",
];

/// Event schedule, true initial trust and optional model for simulation and
/// ensemble runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub trials: Vec<Vec<Event>>,
    pub initial_trust: f64,
    /// Half-width of a uniform spread of per-trial initial trust used by
    /// `simulate`; zero means every trial starts at `initial_trust`.
    pub initial_trust_spread: f64,
    /// Inline parameters or a resolved preset; `None` defers to the caller.
    pub params: Option<ModelParameters>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    trials: Vec<TrialSpec>,
    initial_trust: f64,
    #[serde(default)]
    initial_trust_spread: f64,
    #[serde(default)]
    params: Option<Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrialSpec {
    events: Vec<String>,
}

/// Summary of how a parameter file was produced by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSummary {
    pub method: String,
    pub n_observations: usize,
    pub observation_rows: [usize; 3],
    pub iterations: usize,
    pub participant_intercepts: BTreeMap<String, f64>,
}

impl From<&FitResult> for FitSummary {
    fn from(fit: &FitResult) -> Self {
        FitSummary {
            method: "two-stage least squares with per-participant random intercepts \
                     (approximation of a linear mixed-effects fit)"
                .to_string(),
            n_observations: fit.n_observations,
            observation_rows: fit.observation_rows,
            iterations: fit.iterations,
            participant_intercepts: fit.per_participant_intercepts.clone(),
        }
    }
}

/// On-disk parameter object, shared by parameter files and inline scenario
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterFile {
    pub a: f64,
    pub b: [f64; 3],
    pub c: [f64; 3],
    pub q: f64,
    pub r: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sem: Option<ParameterSem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
}

impl ParameterFile {
    pub fn params(&self) -> ModelParameters {
        ModelParameters {
            a: self.a,
            b: self.b,
            c: self.c,
            q: self.q,
            r: self.r,
            sem: self.sem,
        }
    }

    pub fn from_params(params: &ModelParameters) -> Self {
        ParameterFile {
            a: params.a,
            b: params.b,
            c: params.c,
            q: params.q,
            r: params.r,
            sem: params.sem,
            fit: None,
        }
    }

    pub fn from_fit(fit: &FitResult) -> Self {
        ParameterFile {
            fit: Some(FitSummary::from(fit)),
            ..Self::from_params(&fit.params)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn params_from_value(value: Value, location: &str) -> Result<ModelParameters> {
    let params = match value {
        Value::String(name) => ModelParameters::preset(&name).ok_or_else(|| {
            Error::validation(location, format!("unknown parameter preset `{name}`"))
        })?,
        obj @ Value::Object(_) => serde_json::from_value::<ParameterFile>(obj)
            .map_err(|e| Error::validation(location, e.to_string()))?
            .params(),
        other => {
            return Err(Error::validation(
                location,
                format!("expected a preset name or a parameter object, got {other}"),
            ))
        }
    };
    params
        .validate()
        .map_err(|e| Error::validation(location, e.to_string()))?;
    Ok(params)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;

    if file.trials.is_empty() {
        return Err(Error::validation(
            "trials",
            "at least one trial is required",
        ));
    }
    let mut trials = Vec::with_capacity(file.trials.len());
    for (i, trial) in file.trials.iter().enumerate() {
        if trial.events.is_empty() {
            return Err(Error::validation(
                format!("trials[{i}].events"),
                "a trial needs at least one event",
            ));
        }
        let events = trial
            .events
            .iter()
            .enumerate()
            .map(|(k, name)| {
                name.parse::<Event>().map_err(|e| {
                    Error::validation(format!("trials[{i}].events[{k}]"), e.to_string())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        trials.push(events);
    }
    if !file.initial_trust.is_finite() {
        return Err(Error::validation("initial_trust", "must be finite"));
    }
    if !(file.initial_trust_spread.is_finite() && file.initial_trust_spread >= 0.0) {
        return Err(Error::validation(
            "initial_trust_spread",
            "must be finite and >= 0",
        ));
    }
    let params = file
        .params
        .map(|v| params_from_value(v, "params"))
        .transpose()?;

    Ok(Scenario {
        trials,
        initial_trust: file.initial_trust,
        initial_trust_spread: file.initial_trust_spread,
        params,
    })
}

pub fn load_parameter_file(path: impl AsRef<Path>) -> Result<ParameterFile> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let file: ParameterFile = serde_json::from_str(&text).map_err(|e| parse_error(path, e))?;
    file.params()
        .validate()
        .map_err(|e| Error::validation(path.display().to_string(), e.to_string()))?;
    Ok(file)
}

/// Resolves `--params`: a preset name or a path to a parameter file.
pub fn resolve_params(spec: &str) -> Result<ModelParameters> {
    match ModelParameters::preset(spec) {
        Some(p) => Ok(p),
        None => Ok(load_parameter_file(spec)?.params()),
    }
}

pub fn write_parameter_file(path: impl AsRef<Path>, file: &ParameterFile) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(file).expect("parameter files serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes a fit as a parameter file accepted wherever inline parameters are.
pub fn write_fit(path: impl AsRef<Path>, fit: &FitResult) -> Result<()> {
    write_parameter_file(path, &ParameterFile::from_fit(fit))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            let msg = e.to_string();
            Error::io(path, std::io::Error::other(msg))
        }
        _ => {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse {
                path: path.to_path_buf(),
                line,
                column: 0,
                message: e.to_string(),
            }
        }
    }
}

pub fn write_trial_logs(path: impl AsRef<Path>, logs: &[TrialLog]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(LOG_HEADER).map_err(|e| csv_error(path, e))?;
    for log in logs {
        for (t, step) in log.steps.iter().enumerate() {
            let [phi, pi, upsilon] = step.observation.channels;
            w.write_record([
                log.participant_id.clone(),
                log.trial_id.clone(),
                t.to_string(),
                step.event.as_str().to_string(),
                fmt_opt(step.reported_trust),
                fmt_opt(phi),
                fmt_opt(pi),
                fmt_opt(upsilon),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn log_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::validation(
            path.display().to_string(),
            "directory contains no .csv log files",
        ));
    }
    Ok(files)
}

fn parse_optional(field: &str, raw: &str, location: &str) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = raw
        .parse()
        .map_err(|_| Error::validation(location, format!("{field} `{raw}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::validation(
            location,
            format!("{field} must be finite"),
        ));
    }
    Ok(Some(v))
}

struct PendingStep {
    index: usize,
    row: String,
    step: LogStep,
}

/// Loads a log file, or every `.csv` file of a directory in name order.
/// Logs come back ordered by `(participant_id, trial_id)`.
pub fn load_trial_logs(path: impl AsRef<Path>) -> Result<Vec<TrialLog>> {
    let mut grouped: BTreeMap<(String, String), Vec<PendingStep>> = BTreeMap::new();
    for file in log_files(path.as_ref())? {
        read_log_file(&file, &mut grouped)?;
    }

    let mut logs = Vec::with_capacity(grouped.len());
    for ((participant_id, trial_id), mut pending) in grouped {
        pending.sort_by_key(|p| p.index);
        for (expected, p) in pending.iter().enumerate() {
            if p.index != expected {
                let message = if p.index < expected {
                    format!("duplicated event_index {}", p.index)
                } else {
                    format!(
                        "event_index {} found where {expected} was expected",
                        p.index
                    )
                };
                return Err(Error::validation(&p.row, message));
            }
        }
        logs.push(TrialLog {
            participant_id,
            trial_id,
            steps: pending.into_iter().map(|p| p.step).collect(),
        });
    }
    Ok(logs)
}

fn read_log_file(
    file: &Path,
    grouped: &mut BTreeMap<(String, String), Vec<PendingStep>>,
) -> Result<()> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(file)
        .map_err(|e| csv_error(file, e))?;
    let header = reader.headers().map_err(|e| csv_error(file, e))?.clone();
    if header.iter().ne(LOG_HEADER) {
        return Err(Error::validation(
            format!("{} header", file.display()),
            format!(
                "expected `{}`, got `{}`",
                LOG_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(file, e))?;
        let location = format!("{} row {}", file.display(), i + 1);
        let field = |k: usize| record.get(k).unwrap_or("");

        let participant = field(0).to_string();
        let trial = field(1).to_string();
        if participant.is_empty() || trial.is_empty() {
            return Err(Error::validation(
                &location,
                "participant_id and trial_id are required",
            ));
        }
        let index: usize = field(2).parse().map_err(|_| {
            Error::validation(
                &location,
                format!("event_index `{}` is not a nonnegative integer", field(2)),
            )
        })?;
        let event: Event = field(3)
            .parse()
            .map_err(|e: Error| Error::validation(&location, e.to_string()))?;
        let reported_trust = parse_optional("reported_trust", field(4), &location)?;
        if let Some(t) = reported_trust {
            if !(TRUST_MIN..=TRUST_MAX).contains(&t) {
                return Err(Error::validation(
                    &location,
                    format!("reported_trust {t} outside [1, 100]"),
                ));
            }
        }
        let observation = Observation {
            channels: [
                parse_optional("phi", field(5), &location)?,
                parse_optional("pi", field(6), &location)?,
                parse_optional("upsilon", field(7), &location)?,
            ],
        };
        grouped
            .entry((participant, trial))
            .or_default()
            .push(PendingStep {
                index,
                row: location,
                step: LogStep {
                    event,
                    reported_trust,
                    observation,
                },
            });
    }
    Ok(())
}

/// One line of a results table. Unknown quantities stay empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub participant_id: String,
    pub trial_id: String,
    pub step: usize,
    pub event: Event,
    pub truth: Option<f64>,
    pub reported_trust: Option<f64>,
    pub estimate_mean: f64,
    pub estimate_variance: f64,
    pub band_lower: Option<f64>,
    pub band_upper: Option<f64>,
}

/// Rows for a filter replay of a logged trial.
pub fn estimate_rows(log: &TrialLog, estimates: &[FilterState]) -> Vec<ResultRow> {
    log.steps
        .iter()
        .zip(estimates)
        .enumerate()
        .map(|(t, (step, est))| ResultRow {
            participant_id: log.participant_id.clone(),
            trial_id: log.trial_id.clone(),
            step: t,
            event: step.event,
            truth: None,
            reported_trust: step.reported_trust,
            estimate_mean: est.mean,
            estimate_variance: est.variance,
            band_lower: None,
            band_upper: None,
        })
        .collect()
}

/// Rows for an ensemble: best estimate, its variance and the band.
pub fn ensemble_rows(
    participant_id: &str,
    trial_id: &str,
    events: &[Event],
    result: &EnsembleResult,
) -> Vec<ResultRow> {
    (0..result.len())
        .map(|t| ResultRow {
            participant_id: participant_id.to_string(),
            trial_id: trial_id.to_string(),
            step: t,
            event: events[t],
            truth: Some(result.truth[t]),
            reported_trust: None,
            estimate_mean: result.best_estimate[t].mean,
            estimate_variance: result.best_estimate[t].variance,
            band_lower: Some(result.band_lower[t]),
            band_upper: Some(result.band_upper[t]),
        })
        .collect()
}

pub fn write_results(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(RESULT_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record([
            row.participant_id.clone(),
            row.trial_id.clone(),
            row.step.to_string(),
            row.event.as_str().to_string(),
            fmt_opt(row.truth),
            fmt_opt(row.reported_trust),
            row.estimate_mean.to_string(),
            row.estimate_variance.to_string(),
            fmt_opt(row.band_lower),
            fmt_opt(row.band_upper),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(RESULT_HEADER) {
        return Err(Error::validation(
            format!("{} header", path.display()),
            format!("expected `{}`", RESULT_HEADER.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let location = format!("{} row {}", path.display(), i + 1);
        let field = |k: usize| record.get(k).unwrap_or("");
        let required = |name: &str, k: usize| -> Result<f64> {
            parse_optional(name, field(k), &location)?
                .ok_or_else(|| Error::validation(&location, format!("{name} is required")))
        };
        rows.push(ResultRow {
            participant_id: field(0).to_string(),
            trial_id: field(1).to_string(),
            step: field(2)
                .parse()
                .map_err(|_| Error::validation(&location, "step is not an integer"))?,
            event: field(3)
                .parse()
                .map_err(|e: Error| Error::validation(&location, e.to_string()))?,
            truth: parse_optional("truth", field(4), &location)?,
            reported_trust: parse_optional("reported_trust", field(5), &location)?,
            estimate_mean: required("estimate_mean", 6)?,
            estimate_variance: required("estimate_variance", 7)?,
            band_lower: parse_optional("band_lower", field(8), &location)?,
            band_upper: parse_optional("band_upper", field(9), &location)?,
        });
    }
    Ok(rows)
}
