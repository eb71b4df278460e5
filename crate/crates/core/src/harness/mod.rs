//! Declarative experiments: configs, reference trajectories, seeded closed-loop
//! runs, suites over method × task × disturbance grids, timing and plots.

pub mod config;
pub mod plots;
pub mod reference;
pub mod run;
pub mod suite;
pub mod timing;

pub use config::{ExperimentConfig, GridSection, Method, Task};
pub use plots::{emit_plots, PlotFiles, PlotSeries};
pub use reference::{ReferenceKind, ReferenceTrajectory};
pub use run::{read_rows_csv, run_once, LogRow, RunLog, Simulation};
pub use suite::{run_suite, CellSummary, SuiteOptions, SummaryTable};
pub use timing::{timing_report, TimingReport};
