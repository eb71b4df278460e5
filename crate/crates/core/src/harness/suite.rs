use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{ConfigError, Error};
use crate::plant::{DisturbanceKind, DisturbanceSpec};

use super::config::{ExperimentConfig, Method, Task};
use super::run::{mean, run_once, RunLog};

/// Short human-readable description of a disturbance, used in tables.
pub fn disturbance_label(d: &DisturbanceSpec) -> String {
    match d.kind {
        DisturbanceKind::None => "none".into(),
        DisturbanceKind::LinearDrift => format!("drift k={}", d.kappa),
        DisturbanceKind::Periodic => format!("periodic A={} T={}", d.amplitude, d.period),
        DisturbanceKind::Polynomial => "polynomial".into(),
        DisturbanceKind::LinearWithStep => "linear+step".into(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    /// Keep every run log in the result (memory grows with the grid).
    pub keep_logs: bool,
}

/// Aggregate over the seeded runs of one method × task × disturbance cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub method: Method,
    pub task: Task,
    pub disturbance: DisturbanceSpec,
    /// Mean ē over successful runs.
    pub mean: f64,
    /// Sample standard deviation of ē; 0 for a single run.
    pub std: f64,
    /// Successful runs.
    pub n: usize,
    pub failed: usize,
    /// ē per successful run, in seed order.
    pub run_errors: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SummaryTable {
    pub cells: Vec<CellSummary>,
    pub warnings: Vec<String>,
    pub logs: Vec<RunLog>,
}

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "method",
    "task",
    "disturbance",
    "kappa",
    "amplitude",
    "period",
    "noise_sigma",
    "mean",
    "std",
    "n",
    "failed",
];

impl SummaryTable {
    pub fn cell(&self, method: Method, task: Task, disturbance: &DisturbanceSpec) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.task == task && &c.disturbance == disturbance)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(SUMMARY_COLUMNS)?;
        for c in &self.cells {
            let d = &c.disturbance;
            out.write_record([
                c.method.as_str().to_string(),
                c.task.as_str().to_string(),
                d.kind.as_str().to_string(),
                d.kappa.to_string(),
                d.amplitude.to_string(),
                d.period.to_string(),
                d.noise_sigma.to_string(),
                c.mean.to_string(),
                c.std.to_string(),
                c.n.to_string(),
                c.failed.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::Other(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// One block per task: methods as rows, disturbances as columns, cells
    /// formatted as `mean ± std`.
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        let mut tasks: Vec<Task> = Vec::new();
        for c in &self.cells {
            if !tasks.contains(&c.task) {
                tasks.push(c.task);
            }
        }
        for task in tasks {
            let cells: Vec<&CellSummary> = self.cells.iter().filter(|c| c.task == task).collect();
            let mut methods: Vec<Method> = Vec::new();
            let mut dists: Vec<&DisturbanceSpec> = Vec::new();
            for c in &cells {
                if !methods.contains(&c.method) {
                    methods.push(c.method);
                }
                if !dists.contains(&&c.disturbance) {
                    dists.push(&c.disturbance);
                }
            }
            let headers: Vec<String> = dists.iter().map(|d| disturbance_label(d)).collect();
            let width = headers.iter().map(|h| h.len()).max().unwrap_or(0).max(19);
            let _ = writeln!(out, "task: {}", task.as_str());
            let _ = write!(out, "{:<24}", "method");
            for h in &headers {
                let _ = write!(out, " | {h:>width$}");
            }
            out.push('\n');
            let _ = writeln!(out, "{}", "-".repeat(24 + headers.len() * (width + 3)));
            for m in &methods {
                let _ = write!(out, "{:<24}", m.label());
                for d in &dists {
                    let text = cells
                        .iter()
                        .find(|c| c.method == *m && &&c.disturbance == d)
                        .map(|c| {
                            if c.n == 0 {
                                "failed".to_string()
                            } else {
                                format!("{:.5} ± {:.5}", c.mean, c.std)
                            }
                        })
                        .unwrap_or_default();
                    let _ = write!(out, " | {text:>width$}");
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Every (method, task, disturbance) cell of the grid in row-major order.
pub fn grid_cells(cfg: &ExperimentConfig) -> Vec<(Method, Task, DisturbanceSpec)> {
    let g = &cfg.grid;
    let mut cells = Vec::with_capacity(g.n_cells());
    for task in &g.tasks {
        for d in &g.disturbances {
            for m in &g.methods {
                cells.push((*m, *task, d.clone()));
            }
        }
    }
    cells
}

/// Config of one cell: the base config with method, task and disturbance
/// replaced.
pub fn cell_config(cfg: &ExperimentConfig, method: Method, task: Task, d: &DisturbanceSpec) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.experiment.method = method;
    c.experiment.task = task;
    c.disturbance = d.clone();
    c
}

/// Runs `n_runs` seeds (`base_seed + r`) of every grid cell. Seeds are shared
/// across methods so comparisons are paired. Failed runs are excluded from
/// the statistics and reported as warnings.
pub fn run_suite(cfg: &ExperimentConfig, opts: &SuiteOptions) -> Result<SummaryTable, Error> {
    cfg.validate()?;
    let cells = grid_cells(cfg);
    if cells.is_empty() {
        return Err(ConfigError::invalid(
            "grid",
            "no cells: methods, tasks and disturbances must all be non-empty",
        )
        .into());
    }
    let n_runs = cfg.experiment.n_runs;
    let base = cfg.experiment.base_seed;
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..n_runs as u64).map(move |r| (c, base + r)))
        .collect();
    let cell_cfgs: Vec<ExperimentConfig> = cells.iter().map(|(m, t, d)| cell_config(cfg, *m, *t, d)).collect();
    let execute = || -> Vec<RunLog> {
        jobs.par_iter()
            .map(|&(c, seed)| run_once(&cell_cfgs[c], seed))
            .collect()
    };
    let logs = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Other(e.to_string()))?
            .install(execute),
        None => execute(),
    };

    let mut table = SummaryTable::default();
    for (ci, (method, task, d)) in cells.into_iter().enumerate() {
        let runs = &logs[ci * n_runs..(ci + 1) * n_runs];
        let mut errors = Vec::with_capacity(n_runs);
        let mut failed = 0;
        for log in runs {
            match &log.failed {
                Some(reason) => {
                    failed += 1;
                    table.warnings.push(format!(
                        "{} / {} / {} seed {}: run failed ({reason}); excluded from the mean",
                        method.as_str(),
                        task.as_str(),
                        disturbance_label(&d),
                        log.seed
                    ));
                }
                None => errors.push(log.mean_error),
            }
        }
        table.cells.push(CellSummary {
            method,
            task,
            disturbance: d,
            mean: mean(errors.iter().copied()),
            std: sample_std(&errors),
            n: errors.len(),
            failed,
            run_errors: errors,
        });
    }
    if opts.keep_logs {
        table.logs = logs;
    }
    Ok(table)
}
