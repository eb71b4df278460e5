use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use t2s_core::harness::suite::SuiteOptions;
use t2s_core::harness::{
    emit_plots, read_rows_csv, run_once, run_suite, timing_report, ExperimentConfig, Method, PlotSeries,
};
use t2s_core::selfcheck::{run_selfcheck, SelfcheckOptions};
use t2s_core::{ConfigError, Error};

#[derive(Parser, Debug)]
#[command(name = "t2s", version, about = "Time-embedded two-timescale neural MPC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one closed-loop simulation and write its log and plots.
    Run(RunArgs),
    /// Run every method × task × disturbance cell of the config's grid.
    Suite(SuiteArgs),
    /// Run the oracle checks (gradients, Jacobians, LQR, invariants).
    Selfcheck(SelfcheckArgs),
    /// Redraw figures from run-log CSV files.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Built-in preset name or path to a TOML config file.
    #[arg(long, short, default_value = "default")]
    config: String,
    /// Output directory; every file is written below it.
    #[arg(long, short, env = "T2S_OUTPUT_DIR", default_value = "t2s-out")]
    out: PathBuf,
    /// More progress output (repeatable).
    #[arg(short, long, action = ArgAction::Count)]
    verbose: u8,
    /// Only print errors.
    #[arg(short, long, conflicts_with = "verbose")]
    quiet: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Override the configured method.
    #[arg(long, short)]
    method: Option<String>,
    /// Run seed; defaults to the configured base seed.
    #[arg(long, short)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SuiteArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated subset of the grid's methods.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Worker threads (default: all cores).
    #[arg(long, short)]
    jobs: Option<usize>,
    /// Override the number of seeded runs per cell.
    #[arg(long)]
    runs: Option<usize>,
    /// Override the base seed.
    #[arg(long, short)]
    seed: Option<u64>,
    /// Also measure update wall times and write timing.txt.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct SelfcheckArgs {
    #[arg(long, short, default_value_t = 0)]
    seed: u64,
    /// Expected full parameter count (for testing the check itself).
    #[arg(long, hide = true)]
    expect_param_count: Option<usize>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Run-log CSV files written by `t2s run`.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    #[arg(long, short, env = "T2S_OUTPUT_DIR", default_value = "t2s-out")]
    out: PathBuf,
    /// File name prefix of the figures.
    #[arg(long, default_value = "replot")]
    stem: String,
}

/// Failure classes mapped to exit codes.
enum Failure {
    /// Bad arguments or config: exit 2.
    Usage(String),
    /// The computation ran and failed: exit 1.
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

struct Log {
    level: i8,
}

impl Log {
    fn new(c: &Common) -> Self {
        Self {
            level: if c.quiet { -1 } else { c.verbose as i8 },
        }
    }

    fn info(&self, msg: impl AsRef<str>) {
        if self.level >= 0 {
            println!("{}", msg.as_ref());
        }
    }

    fn debug(&self, msg: impl AsRef<str>) {
        if self.level >= 1 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn load_config(spec: &str) -> Result<ExperimentConfig, Failure> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(cfg) = ExperimentConfig::preset(spec) {
            return Ok(cfg);
        }
        return Err(Failure::Usage(format!(
            "config `{spec}` is neither a file nor a preset (presets: {})",
            ExperimentConfig::PRESETS.join(", ")
        )));
    }
    ExperimentConfig::from_path(path).map_err(|e| match e {
        Error::Io { .. } => Failure::Usage(e.to_string()),
        other => Failure::Usage(format!("{}: {other}", path.display())),
    })
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let log = Log::new(&args.common);
    let mut cfg = load_config(&args.common.config)?;
    if let Some(m) = &args.method {
        cfg.experiment.method = Method::parse(m)?;
    }
    cfg.validate()?;
    let seed = args.seed.unwrap_or(cfg.experiment.base_seed);
    let out = &args.common.out;
    create_dir(out)?;
    log.debug(format!(
        "running {} on {} for {} s (seed {seed})",
        cfg.experiment.method.as_str(),
        cfg.experiment.task.as_str(),
        cfg.experiment.duration
    ));
    let run = run_once(&cfg, seed);
    let stem = format!(
        "{}_{}_seed{seed}",
        cfg.experiment.task.as_str(),
        cfg.experiment.method.as_str()
    );
    let csv_path = out.join(format!("{stem}.csv"));
    run.save_csv(&csv_path)?;
    if !run.rows.is_empty() {
        emit_plots(&[PlotSeries::from(&run)], out, &stem)?;
    }
    log.info(format!(
        "{} {} seed {seed}: mean error {:.6} m over {} steps, {} fast / {} slow updates -> {}",
        cfg.experiment.method.label(),
        cfg.experiment.task.as_str(),
        run.mean_error,
        run.rows.len(),
        run.fast_updates(),
        run.slow_updates(),
        csv_path.display()
    ));
    match run.failed {
        Some(reason) => Err(Failure::Runtime(format!("simulation fault: {reason}"))),
        None => Ok(()),
    }
}

fn cmd_suite(args: SuiteArgs) -> Result<(), Failure> {
    let log = Log::new(&args.common);
    let mut cfg = load_config(&args.common.config)?;
    if let Some(names) = &args.methods {
        let wanted = names
            .iter()
            .map(|n| Method::parse(n.trim()))
            .collect::<Result<Vec<_>, _>>()?;
        cfg.grid.methods.retain(|m| wanted.contains(m));
    }
    if let Some(n) = args.runs {
        cfg.experiment.n_runs = n;
    }
    if let Some(s) = args.seed {
        cfg.experiment.base_seed = s;
    }
    cfg.validate()?;
    if cfg.grid.n_cells() == 0 {
        return Err(ConfigError::invalid("grid", "no cells: the grid (after --methods) is empty").into());
    }
    let out = &args.common.out;
    create_dir(out)?;
    log.debug(format!(
        "{} cells × {} runs of {} s",
        cfg.grid.n_cells(),
        cfg.experiment.n_runs,
        cfg.experiment.duration
    ));
    let table = run_suite(
        &cfg,
        &SuiteOptions {
            jobs: args.jobs,
            keep_logs: false,
        },
    )?;
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    let text = table.format_table();
    table.save_csv(out.join("summary.csv"))?;
    std::fs::write(out.join("summary.txt"), &text).map_err(|e| Failure::Runtime(e.to_string()))?;
    log.info(text.trim_end());
    if args.timing {
        let report = timing_report(&cfg, cfg.experiment.base_seed);
        let text = report.to_string();
        std::fs::write(out.join("timing.txt"), format!("{text}\n")).map_err(|e| Failure::Runtime(e.to_string()))?;
        log.info(text);
    }
    let dead: Vec<String> = table
        .cells
        .iter()
        .filter(|c| c.n == 0)
        .map(|c| format!("{} / {}", c.method.as_str(), c.task.as_str()))
        .collect();
    if dead.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("every run failed in: {}", dead.join(", "))))
    }
}

fn cmd_selfcheck(args: SelfcheckArgs) -> Result<(), Failure> {
    let mut opts = SelfcheckOptions {
        seed: args.seed,
        ..SelfcheckOptions::default()
    };
    if let Some(n) = args.expect_param_count {
        opts.expected_full_params = n;
    }
    let outcomes = run_selfcheck(&opts);
    for o in &outcomes {
        println!(
            "{} {:<44} {:>7.2}s  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.elapsed.as_secs_f64(),
            o.detail
        );
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        println!("all {} checks passed", outcomes.len());
        Ok(())
    } else {
        Err(Failure::Runtime(format!("failed checks: {}", failed.join(", "))))
    }
}

fn cmd_plot(args: PlotArgs) -> Result<(), Failure> {
    let mut series = Vec::new();
    for path in &args.logs {
        let file = std::fs::File::open(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let rows = read_rows_csv(file).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        series.push(PlotSeries { label, rows });
    }
    let files = emit_plots(&series, &args.out, &args.stem)?;
    println!("{}", files.error_svg.display());
    println!("{}", files.trajectory_svg.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Suite(a) => cmd_suite(a),
        Command::Selfcheck(a) => cmd_selfcheck(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
