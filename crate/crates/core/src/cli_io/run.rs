//! Serrin gate, subsolution, continuation, diagnostics and export.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{error, info, warn};
use serde::Serialize;

use super::config::{ConfigEcho, RunConfig};
use super::export::{write_field_csv, write_file, write_history_csv, write_mesh, MeshFormat};
use crate::diagnostics::{diagnose, DiagnosticsReport, Thresholds};
use crate::error::Error;
use crate::graphgeom::GraphState;
use crate::solver::{continuity_run, max_norm, HistoryEntry, Problem};
use crate::sphere::CapGrid;
use crate::subsolution::{build_subsolution, serrin_check, underbar_psi, SerrinReport, Subsolution};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitStatus {
    Success,
    ConfigError,
    SerrinViolation,
    ContinuationFailure,
    DiagnosticsFailure,
    IoError,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::ConfigError => 2,
            ExitStatus::SerrinViolation => 3,
            ExitStatus::ContinuationFailure => 4,
            ExitStatus::DiagnosticsFailure => 5,
            ExitStatus::IoError => 6,
        }
    }

    pub fn from_error(e: &Error) -> Self {
        match e {
            Error::Serrin(_) => ExitStatus::SerrinViolation,
            Error::Config(_) | Error::Argument(_) | Error::Psi(_) => ExitStatus::ConfigError,
            Error::Io(_) => ExitStatus::IoError,
            _ => ExitStatus::ContinuationFailure,
        }
    }
}

impl fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExitStatus::Success => "success",
            ExitStatus::ConfigError => "config-error",
            ExitStatus::SerrinViolation => "serrin-violation",
            ExitStatus::ContinuationFailure => "continuation-failure",
            ExitStatus::DiagnosticsFailure => "diagnostics-failure",
            ExitStatus::IoError => "io-error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuationSummary {
    pub immediate: bool,
    pub steps: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub newton_iterations: usize,
    pub residual: f64,
    pub tolerance: f64,
    /// Family and parameter reached.
    pub family: String,
    pub parameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub status: ExitStatus,
    pub exit_code: i32,
    /// Exports hold the last accepted state rather than a solution.
    pub partial: bool,
    pub message: String,
    pub artifacts: Vec<String>,
    pub config: ConfigEcho,
    pub nodes: usize,
    pub serrin: Option<SerrinReport>,
    pub continuation: Option<ContinuationSummary>,
    pub diagnostics: Option<DiagnosticsReport>,
}

/// Result of [`run`]: the report also lands in `report.toml` when enabled.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: ExitStatus,
    pub report: RunReport,
    pub state: Option<GraphState>,
    pub residual: Option<Vec<f64>>,
    pub history: Vec<HistoryEntry>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.status.code()
    }
}

fn summarize(history: &[HistoryEntry], immediate: bool, residual: f64, tol: f64, fam: String, param: f64) -> ContinuationSummary {
    let accepted = history.iter().filter(|h| h.accepted).count();
    ContinuationSummary {
        immediate,
        steps: history.len(),
        accepted,
        rejected: history.len() - accepted,
        newton_iterations: history.iter().map(|h| h.newton_iterations).sum(),
        residual,
        tolerance: tol,
        family: fam,
        parameter: param,
    }
}

fn setup(config: &RunConfig) -> Result<Subsolution, Error> {
    let grid = Arc::new(CapGrid::build(config.cap_radius, config.rings, config.sectors)?);
    build_subsolution(&config.sphere, grid)
}

/// Runs the full pipeline and writes the enabled artifacts under
/// `config.output.dir`.
pub fn run(config: &RunConfig) -> RunOutcome {
    let psi = config.psi();
    let mut report = RunReport {
        status: ExitStatus::Success,
        exit_code: 0,
        partial: false,
        message: String::new(),
        artifacts: Vec::new(),
        config: config.echo(),
        nodes: 0,
        serrin: None,
        continuation: None,
        diagnostics: None,
    };
    let mut outcome = RunOutcome { status: ExitStatus::Success, report: report.clone(), state: None, residual: None, history: Vec::new() };
    let finish = |mut outcome: RunOutcome, mut report: RunReport, status: ExitStatus, message: String| {
        report.status = status;
        report.exit_code = status.code();
        report.message = message;
        outcome.status = status;
        if config.output.report {
            let path = config.output.dir.join("report.toml");
            report.artifacts.push("report.toml".into());
            let written = std::fs::create_dir_all(&config.output.dir)
                .map_err(Error::from)
                .and_then(|_| write_report(&report, &path));
            if let Err(e) = written {
                error!("{}: {e}", path.display());
                report.artifacts.pop();
                if status == ExitStatus::Success || status == ExitStatus::DiagnosticsFailure {
                    report.status = ExitStatus::IoError;
                    report.exit_code = ExitStatus::IoError.code();
                    report.message = e.to_string();
                    outcome.status = ExitStatus::IoError;
                }
            }
        }
        outcome.report = report;
        outcome
    };

    let sub = match setup(config) {
        Ok(s) => s,
        Err(e) => {
            error!("{e}");
            let status = ExitStatus::from_error(&e);
            return finish(outcome, report, status, e.to_string());
        }
    };
    report.nodes = sub.state.grid().len();
    let serrin = serrin_check(&psi, &config.sphere, config.k);
    report.serrin = Some(serrin.clone());
    if !serrin.passed {
        error!("serrin condition violated: {}", serrin.message());
        return finish(outcome, report, ExitStatus::SerrinViolation, serrin.message());
    }
    info!("serrin: {}", serrin.message());

    let problem = match Problem::new(&sub, psi.clone(), config.k) {
        Ok(p) => p,
        Err(e) => {
            error!("{e}");
            let status = ExitStatus::from_error(&e);
            return finish(outcome, report, status, e.to_string());
        }
    };
    let opts = config.homotopy.continuation_options();
    let tol = opts.relative_tol * problem.scale();

    let (state, residual, history, failure) = match continuity_run(&problem, &opts) {
        Ok(res) => {
            let r = res.residual_norm();
            report.continuation =
                Some(summarize(&res.history, res.immediate, r, tol, "Xi".into(), 1.0));
            (res.state, res.residual, res.history, None)
        }
        Err(f) => {
            error!("{f}");
            let run = *f.run;
            let residual = problem.residual_offsets(run.family, run.parameter, &run.offset).unwrap_or_default();
            let r = if residual.is_empty() { f64::NAN } else { max_norm(&residual) };
            report.continuation =
                Some(summarize(&run.history, false, r, tol, run.family.to_string(), run.parameter));
            let msg = format!("{} at {} = {}: {}", ExitStatus::ContinuationFailure, run.family, run.parameter, f.error);
            (run.state, residual, run.history, Some(msg))
        }
    };

    let mut status = ExitStatus::Success;
    let mut message = String::from("solved");
    if let Some(msg) = failure {
        status = ExitStatus::ContinuationFailure;
        message = msg;
        report.partial = true;
        warn!("exports hold the last accepted state");
    } else {
        let diag = diagnose(&state, problem.v_under(), &psi, config.k, &Thresholds::default());
        if !diag.passed {
            status = ExitStatus::DiagnosticsFailure;
            let failed: Vec<&str> = diag.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            message = format!("diagnostics failed: {}", if failed.is_empty() { "pinching".into() } else { failed.join(", ") });
            error!("{message}");
        }
        report.diagnostics = Some(diag);
    }

    if let Err(e) = write_artifacts(config, &sub, &state, &history, &psi, &mut report.artifacts) {
        error!("{e}");
        outcome.state = Some(state);
        return finish(outcome, report, ExitStatus::IoError, e.to_string());
    }
    outcome.state = Some(state);
    outcome.residual = Some(residual);
    outcome.history = history;
    finish(outcome, report, status, message)
}

fn write_artifacts(
    config: &RunConfig,
    sub: &Subsolution,
    state: &GraphState,
    history: &[HistoryEntry],
    psi: &crate::psidsl::PsiExpr,
    artifacts: &mut Vec<String>,
) -> Result<(), Error> {
    let out = &config.output;
    let any = out.csv || out.obj || out.vtk || out.history || out.report;
    if !any {
        return Ok(());
    }
    std::fs::create_dir_all(&out.dir)?;
    let mut emit = |name: &str, f: &dyn Fn(&mut std::io::BufWriter<std::fs::File>) -> Result<(), Error>| {
        write_file(&out.dir.join(name), |w| f(w))?;
        artifacts.push(name.to_owned());
        Ok::<(), Error>(())
    };
    if out.csv {
        emit("solution.csv", &|w| Ok(write_field_csv(state, psi, config.k, w)?))?;
        emit("subsolution.csv", &|w| Ok(write_field_csv(&sub.state, psi, config.k, w)?))?;
    }
    if out.obj {
        emit("mesh.obj", &|w| write_mesh(state, psi, config.k, MeshFormat::Obj, w))?;
    }
    if out.vtk {
        emit("mesh.vtk", &|w| write_mesh(state, psi, config.k, MeshFormat::Vtk, w))?;
    }
    if out.history {
        emit("history.csv", &|w| Ok(write_history_csv(history, w)?))?;
    }
    Ok(())
}

pub fn write_report(report: &RunReport, path: &Path) -> Result<(), Error> {
    let text = toml::to_string(report).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Serrin gate and subsolution only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub status: ExitStatus,
    pub exit_code: i32,
    pub message: String,
    pub nodes: usize,
    pub serrin: Option<SerrinReport>,
    /// Range of `F` of the subsolution over the grid.
    pub subsolution_f_min: Option<f64>,
    pub subsolution_f_max: Option<f64>,
    pub subsolution_admissible: Option<bool>,
}

pub fn check(config: &RunConfig) -> CheckReport {
    let psi = config.psi();
    let mut r = CheckReport {
        status: ExitStatus::Success,
        exit_code: 0,
        message: String::new(),
        nodes: 0,
        serrin: None,
        subsolution_f_min: None,
        subsolution_f_max: None,
        subsolution_admissible: None,
    };
    let fail = |mut r: CheckReport, status: ExitStatus, message: String| {
        r.status = status;
        r.exit_code = status.code();
        r.message = message;
        r
    };
    let serrin = serrin_check(&psi, &config.sphere, config.k);
    r.serrin = Some(serrin.clone());
    if !serrin.passed {
        return fail(r, ExitStatus::SerrinViolation, serrin.message());
    }
    let sub = match setup(config) {
        Ok(s) => s,
        Err(e) => {
            let status = ExitStatus::from_error(&e);
            return fail(r, status, e.to_string());
        }
    };
    r.nodes = sub.state.grid().len();
    r.subsolution_admissible = Some(sub.state.admissible().admissible);
    match underbar_psi(&sub.state, config.k) {
        Ok(f) => {
            let v = f.values();
            r.subsolution_f_min = Some(v.iter().copied().fold(f64::INFINITY, f64::min));
            r.subsolution_f_max = Some(v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        Err(e) => return fail(r, ExitStatus::from_error(&e), e.to_string()),
    }
    r.message = serrin.message();
    r
}

/// Paths of the artifacts listed in a report.
pub fn artifact_paths(config: &RunConfig, report: &RunReport) -> Vec<PathBuf> {
    report.artifacts.iter().map(|a| config.output.dir.join(a)).collect()
}
