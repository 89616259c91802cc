//! End-to-end runs and parameter sweeps with their output artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::assembly::{residual_at_fields, BaseSystem, NetBlocks, PointData, RowGroup};
use crate::basis::RandomFeatureNet;
use crate::config::{set_override, RunConfig};
use crate::error::{Error, Result};
use crate::geometry::{sample_collocation, CollocationSet};
use crate::metrics::{
    evaluate_errors, heatmap, interface_trace, residual_diagnostics, sample_errors, ErrorReport, GroupNorm, HeatRow,
    TestGrid, TraceRow,
};
use crate::perturbation::{correct, set_coefficients, CorrectedSolution, CorrectionOutcome};
use crate::problem::InterfaceProblem;
use crate::solver::{gauss_newton, SolveReport};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct InitReport {
    pub solve: SolveReport,
    pub errors: Option<ErrorReport>,
    /// Global relative L2 error after every iteration, on the coarse grid.
    pub iteration_l2: Vec<f64>,
    pub collocation_rows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectionReport {
    pub epsilon: f64,
    /// The base residual was below the floor and no correction was fitted.
    pub skipped: bool,
    pub solve: Option<SolveReport>,
    pub errors: Option<ErrorReport>,
    pub iteration_l2: Vec<f64>,
    pub collocation_rows: usize,
    /// `|F(u_N + eps u_p)|` on the correction points.
    pub residual_norm: f64,
    /// Smallest retained singular value of the final correction Jacobian.
    pub sigma_min_retained: Option<f64>,
}

/// Per-group residual norms before and after the correction, on one point set.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    /// `init` or `correction`: which collocation set the norms use.
    pub points: String,
    pub initialization: Vec<GroupNorm>,
    pub corrected: Option<Vec<GroupNorm>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub initialization_s: f64,
    pub correction_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub example: String,
    pub config: RunConfig,
    pub initialization: InitReport,
    pub correction: Option<CorrectionReport>,
    pub diagnostics: Diagnostics,
    pub timing: Timing,
}

impl RunReport {
    pub fn diverged(&self) -> bool {
        self.initialization.solve.diverged()
            || self.correction.as_ref().and_then(|c| c.solve.as_ref()).is_some_and(|s| s.diverged())
    }

    pub fn init_errors(&self) -> Option<&ErrorReport> {
        self.initialization.errors.as_ref()
    }

    /// Errors of the final solution (the initialization when uncorrected).
    pub fn final_errors(&self) -> Option<&ErrorReport> {
        match &self.correction {
            Some(c) if !c.skipped => c.errors.as_ref(),
            _ => self.init_errors(),
        }
    }
}

/// Everything a run produces; artifacts are written from this.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub base: Vec<RandomFeatureNet>,
    pub corrected: Option<CorrectedSolution>,
    pub heatmap_init: Vec<HeatRow>,
    pub heatmap_corrected: Option<Vec<HeatRow>>,
    pub trace: Vec<TraceRow>,
}

fn iteration_error<F: crate::basis::PiecewiseField + ?Sized>(
    problem: &InterfaceProblem,
    field: &F,
    grid: Option<&TestGrid>,
) -> Option<f64> {
    let g = grid?;
    evaluate_errors(problem, field, g).ok().map(|r| r.global.relative_l2)
}

fn group_norms(
    problem: &InterfaceProblem,
    colloc: &CollocationSet,
    base: &[RandomFeatureNet],
    corrected: Option<&CorrectedSolution>,
) -> Result<(Vec<GroupNorm>, Option<Vec<GroupNorm>>, f64)> {
    let pd = PointData::new(problem, colloc)?;
    let stack = |nets: &[RandomFeatureNet]| -> Array1<f64> { nets.iter().flat_map(|n| n.alpha.iter().copied()).collect() };
    let fb = NetBlocks::new(&pd, base)?.fields(&pd, stack(base).view())?;
    let groups: Vec<RowGroup> = pd.groups().to_vec();
    let r0 = residual_at_fields(problem, &pd, &fb)?;
    let init = residual_diagnostics(&groups, r0.view())?;
    match corrected {
        Some(c) => {
            let fc = NetBlocks::new(&pd, &c.correction)?.fields(&pd, stack(&c.correction).view())?;
            let r1 = residual_at_fields(problem, &pd, &fb.axpy(c.epsilon, &fc))?;
            Ok((init, Some(residual_diagnostics(&groups, r1.view())?), r1.dot(&r1).sqrt()))
        }
        None => Ok((init, None, r0.dot(&r0).sqrt())),
    }
}

/// Initialization, optional correction and all metrics for `cfg`.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let problem = cfg.problem()?;
    let has_exact = problem.has_exact();
    let iter_grid = cfg.metrics.iteration_grid.filter(|_| has_exact);

    // initialization
    let init_colloc = sample_collocation(&problem.geometry, &cfg.init.collocation, cfg.init.collocation_seed)?;
    let mut base = cfg.init.net.build(problem.subdomain_count(), problem.input_dim())?;
    let mut iteration_l2 = Vec::new();
    let solve = {
        let system = BaseSystem::new(&problem, &base, &init_colloc)?;
        log::info!("initialization: {} rows, {} columns", init_colloc.total_rows(), cfg.init.net.m * base.len());
        let mut probe = base.clone();
        let mut obs = |_: usize, x: ArrayView1<f64>| {
            set_coefficients(&mut probe, x);
            iteration_l2.extend(iteration_error(&problem, &probe, iter_grid.as_ref()));
        };
        gauss_newton(&system, Array1::zeros(cfg.init.net.m * base.len()).view(), &cfg.init.solver, Some(&mut obs))?
    };
    set_coefficients(&mut base, solve.coefficients.view());
    let init_time = start.elapsed().as_secs_f64();
    log::info!("initialization: {} iterations, |F| = {:.3e}", solve.iterations, solve.best_residual);

    let (init_errors, heatmap_init) = if has_exact {
        let samples = sample_errors(&problem, &base, &cfg.metrics.grid)?;
        let rep = ErrorReport::from_samples(&samples, problem.subdomain_count(), cfg.metrics.grid)?;
        (Some(rep), heatmap(&samples, problem.parabolic))
    } else {
        (None, Vec::new())
    };
    let initialization = InitReport { solve, errors: init_errors, iteration_l2, collocation_rows: init_colloc.total_rows() };

    // correction
    let corr_start = Instant::now();
    let mut corrected = None;
    let mut correction = None;
    let mut heatmap_corrected = None;
    let diag_colloc;
    if cfg.correction.enabled {
        let colloc = sample_collocation(&problem.geometry, &cfg.correction.collocation, cfg.correction.collocation_seed)?;
        let mut iteration_l2 = Vec::new();
        let mut obs = |_: usize, s: &CorrectedSolution| {
            iteration_l2.extend(iteration_error(&problem, s, iter_grid.as_ref()));
        };
        let outcome = correct(&problem, &base, &colloc, &cfg.correction.net, &cfg.correction.solver, Some(&mut obs))?;
        let rows = colloc.total_rows();
        correction = Some(match outcome {
            CorrectionOutcome::Skipped { epsilon } => {
                log::info!("correction skipped: base residual {epsilon:.3e} is below the floor");
                CorrectionReport {
                    epsilon,
                    skipped: true,
                    solve: None,
                    errors: None,
                    iteration_l2,
                    collocation_rows: rows,
                    residual_norm: epsilon,
                    sigma_min_retained: None,
                }
            }
            CorrectionOutcome::Corrected { solution, report } => {
                let errors = if has_exact {
                    let samples = sample_errors(&problem, &solution, &cfg.metrics.grid)?;
                    heatmap_corrected = Some(heatmap(&samples, problem.parabolic));
                    Some(ErrorReport::from_samples(&samples, problem.subdomain_count(), cfg.metrics.grid)?)
                } else {
                    None
                };
                let sigma = report.sigma_min_history.last().copied();
                let epsilon = solution.epsilon;
                corrected = Some(solution);
                CorrectionReport {
                    epsilon,
                    skipped: false,
                    solve: Some(report),
                    errors,
                    iteration_l2,
                    collocation_rows: rows,
                    residual_norm: f64::NAN,
                    sigma_min_retained: sigma,
                }
            }
        });
        diag_colloc = (colloc, "correction");
    } else {
        diag_colloc = (init_colloc, "init");
    }

    let (init_norms, corr_norms, final_norm) = group_norms(&problem, &diag_colloc.0, &base, corrected.as_ref())?;
    if let Some(c) = correction.as_mut() {
        if !c.skipped {
            c.residual_norm = final_norm;
        }
    }
    let correction_time = corr_start.elapsed().as_secs_f64();

    let trace = if has_exact {
        interface_trace(&problem, &base, corrected.as_ref(), cfg.metrics.trace_samples, cfg.metrics.trace_time)?
    } else {
        Vec::new()
    };

    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        example: problem.name.clone(),
        config: cfg.clone(),
        initialization,
        correction,
        diagnostics: Diagnostics { points: diag_colloc.1.into(), initialization: init_norms, corrected: corr_norms },
        timing: Timing { initialization_s: init_time, correction_s: correction_time, total_s: start.elapsed().as_secs_f64() },
    };
    Ok(RunOutcome { report, base, corrected, heatmap_init, heatmap_corrected, trace })
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn heat_rows(rows: &[HeatRow]) -> impl Iterator<Item = Vec<String>> + '_ {
    rows.iter().map(|r| {
        let mut v = vec![num(r.x), num(r.y)];
        if let Some(t) = r.t {
            v.push(num(t));
        }
        v.push(num(r.abs_error));
        v
    })
}

fn error_rows(stage: &str, rep: &ErrorReport) -> Vec<Vec<String>> {
    let mut rows = vec![vec![stage.into(), "global".into(), num(rep.global.relative_l2), num(rep.global.relative_linf)]];
    for (k, e) in rep.per_subdomain.iter().enumerate() {
        rows.push(vec![stage.into(), format!("subdomain_{k}"), num(e.relative_l2), num(e.relative_linf)]);
    }
    rows
}

fn history_rows(stage: &str, s: &SolveReport, l2: &[f64]) -> Vec<Vec<String>> {
    (0..s.residual_history.len())
        .map(|i| {
            let opt = |v: Option<String>| v.unwrap_or_default();
            vec![
                stage.into(),
                i.to_string(),
                num(s.residual_history[i]),
                opt(i.checked_sub(1).map(|j| num(s.relative_change[j]))),
                opt(i.checked_sub(1).map(|j| s.rank_history[j].to_string())),
                opt(l2.get(i).map(|v| num(*v))),
            ]
        })
        .collect()
}

/// Write `report.json` and the CSV artifacts into `dir`; returns the written paths.
pub fn write_artifacts(outcome: &RunOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let r = &outcome.report;

    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(&path, json + "\n")?;
    written.push(path);

    let path = dir.join("residual_history.csv");
    let mut rows = history_rows("initialization", &r.initialization.solve, &r.initialization.iteration_l2);
    if let Some(c) = &r.correction {
        if let Some(s) = &c.solve {
            rows.extend(history_rows("correction", s, &c.iteration_l2));
        }
    }
    write_csv(&path, &["stage", "iteration", "residual_norm", "relative_change", "rank", "l2_error"], rows)?;
    written.push(path);

    if let Some(init) = r.init_errors() {
        let path = dir.join("errors_table.csv");
        let mut rows = error_rows("initialization", init);
        if let Some(e) = r.correction.as_ref().and_then(|c| c.errors.as_ref()) {
            rows.extend(error_rows("corrected", e));
        }
        write_csv(&path, &["stage", "region", "relative_l2", "relative_linf"], rows)?;
        written.push(path);

        let space_time = outcome.heatmap_init.first().is_some_and(|h| h.t.is_some());
        let header: &[&str] = if space_time { &["x", "y", "t", "abs_error"] } else { &["x", "y", "abs_error"] };
        let path = dir.join("heatmap_init.csv");
        write_csv(&path, header, heat_rows(&outcome.heatmap_init))?;
        written.push(path);
        if let Some(h) = &outcome.heatmap_corrected {
            let path = dir.join("heatmap_corrected.csv");
            write_csv(&path, header, heat_rows(h))?;
            written.push(path);
        }

        let path = dir.join("interface_trace.csv");
        let rows = outcome
            .trace
            .iter()
            .map(|t| vec![num(t.param), num(t.x), num(t.y), num(t.base_error), num(t.correction)]);
        write_csv(&path, &["param", "x", "y", "base_error", "correction"], rows)?;
        written.push(path);
    }
    Ok(written)
}

/// Run `cfg` and write its artifacts into `dir`.
///
/// A diverged stage still writes its artifacts before the divergence error.
pub fn run(cfg: &RunConfig, dir: &Path) -> Result<RunReport> {
    let outcome = execute(cfg)?;
    write_artifacts(&outcome, dir)?;
    if outcome.report.diverged() {
        return Err(Error::Divergence(format!("see {}", dir.join("report.json").display())));
    }
    Ok(outcome.report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Mp,
    Contrast,
    Petals,
    Seed,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::Mp => "mp",
            SweepAxis::Contrast => "contrast",
            SweepAxis::Petals => "petals",
            SweepAxis::Seed => "seed",
        }
    }

    /// Apply `value` to a partial config table.
    pub fn apply(&self, table: &mut toml::Table, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid {} value '{value}'", self.as_str()));
        let int = |v: &str| v.trim().parse::<u64>().map_err(|_| bad()).and_then(|i| {
            i64::try_from(i).map(toml::Value::Integer).map_err(|_| Error::Config(format!("{i} is too large")))
        });
        match self {
            SweepAxis::Mp => set_override(table, "correction.net.m_p", int(value)?),
            SweepAxis::Petals => set_override(table, "params.petals", int(value)?),
            SweepAxis::Seed => set_override(table, "seed", int(value)?),
            SweepAxis::Contrast => {
                let v = value.trim().parse::<f64>().map_err(|_| bad())?;
                set_override(table, "params.contrast", toml::Value::Float(v))
            }
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [SweepAxis::Mp, SweepAxis::Contrast, SweepAxis::Petals, SweepAxis::Seed]
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis '{s}' (expected mp, contrast, petals or seed)")))
    }
}

/// One sweep value with its outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub status: String,
    pub init_l2: Option<f64>,
    pub init_linf: Option<f64>,
    pub corrected_l2: Option<f64>,
    pub corrected_linf: Option<f64>,
    pub iterations: Option<usize>,
    pub residual_norm: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn from_result(value: &str, res: Result<RunReport>) -> Self {
        let mut row = SweepRow {
            value: value.into(),
            status: "ok".into(),
            init_l2: None,
            init_linf: None,
            corrected_l2: None,
            corrected_linf: None,
            iterations: None,
            residual_norm: None,
            error: None,
        };
        match res {
            Ok(rep) => {
                if let Some(e) = rep.init_errors() {
                    row.init_l2 = Some(e.global.relative_l2);
                    row.init_linf = Some(e.global.relative_linf);
                }
                match rep.correction.as_ref().filter(|c| !c.skipped) {
                    Some(c) => {
                        if let Some(e) = &c.errors {
                            row.corrected_l2 = Some(e.global.relative_l2);
                            row.corrected_linf = Some(e.global.relative_linf);
                        }
                        row.iterations = c.solve.as_ref().map(|s| s.iterations);
                        row.residual_norm = Some(c.residual_norm);
                    }
                    None => {
                        row.iterations = Some(rep.initialization.solve.iterations);
                        row.residual_norm = Some(rep.initialization.solve.best_residual);
                    }
                }
            }
            Err(e) => {
                row.status = e.kind().into();
                row.error = Some(e.to_string());
            }
        }
        row
    }

    fn record(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map(num).unwrap_or_default();
        vec![
            self.value.clone(),
            self.status.clone(),
            f(self.init_l2),
            f(self.init_linf),
            f(self.corrected_l2),
            f(self.corrected_linf),
            self.iterations.map(|i| i.to_string()).unwrap_or_default(),
            f(self.residual_norm),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

/// One run per value of `axis`, each in its own subdirectory, aggregated into
/// `sweep_<axis>.csv`. Failed runs are recorded and the sweep continues.
pub fn sweep(base: &toml::Table, axis: SweepAxis, values: &[String], jobs: usize, dir: &Path) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    // resolve every config up front so that bad values fail fast
    let configs: Vec<RunConfig> = values
        .iter()
        .map(|v| {
            let mut t = base.clone();
            axis.apply(&mut t, v)?;
            RunConfig::from_table(t)
        })
        .collect::<Result<_>>()?;
    fs::create_dir_all(dir)?;
    let slots: Vec<Mutex<Option<SweepRow>>> = values.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, values.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= values.len() {
                    break;
                }
                let sub = dir.join(format!("{}_{}", axis.as_str(), values[i].trim()));
                let res = run(&configs[i], &sub);
                *slots[i].lock().unwrap() = Some(SweepRow::from_result(&values[i], res));
            });
        }
    });
    let rows: Vec<SweepRow> = slots.into_iter().map(|m| m.into_inner().unwrap().expect("every sweep value ran")).collect();
    let header = [
        axis.as_str(),
        "status",
        "init_l2",
        "init_linf",
        "corrected_l2",
        "corrected_linf",
        "iterations",
        "residual_norm",
        "error",
    ];
    write_csv(&dir.join(format!("sweep_{}.csv", axis.as_str())), &header, rows.iter().map(SweepRow::record))?;
    Ok(rows)
}
