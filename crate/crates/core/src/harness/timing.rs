use std::fmt;
use std::time::Duration;

use super::config::{ExperimentConfig, Method};
use super::run::{run_once, RunLog, UpdateKind};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimingStat {
    pub count: usize,
    pub mean: Duration,
}

impl TimingStat {
    fn of(log: &RunLog, kind: UpdateKind) -> Self {
        let times: Vec<Duration> = log
            .timings
            .iter()
            .filter(|t| t.kind == kind)
            .map(|t| t.elapsed)
            .collect();
        let count = times.len();
        let mean = if count == 0 {
            Duration::ZERO
        } else {
            times.iter().sum::<Duration>() / count as u32
        };
        Self { count, mean }
    }
}

/// Mean wall time per learner update: T2S fast and slow updates against the
/// full-parameter Neural MPC update, measured on the same task and
/// disturbance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingReport {
    pub fast: TimingStat,
    pub slow: TimingStat,
    pub full: TimingStat,
}

impl TimingReport {
    pub fn fast_cheaper_than_full(&self) -> bool {
        self.fast.count > 0 && self.full.count > 0 && self.fast.mean < self.full.mean
    }
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let us = |d: Duration| d.as_secs_f64() * 1e6;
        writeln!(f, "{:<28} {:>8} {:>12}", "update", "count", "mean (µs)")?;
        writeln!(
            f,
            "{:<28} {:>8} {:>12.1}",
            "T2S fast (output layer)",
            self.fast.count,
            us(self.fast.mean)
        )?;
        writeln!(
            f,
            "{:<28} {:>8} {:>12.1}",
            "T2S slow (hidden layers)",
            self.slow.count,
            us(self.slow.mean)
        )?;
        writeln!(
            f,
            "{:<28} {:>8} {:>12.1}",
            "Neural MPC (all params)",
            self.full.count,
            us(self.full.mean)
        )?;
        write!(
            f,
            "fast < full: {}",
            if self.fast_cheaper_than_full() { "yes" } else { "no" }
        )
    }
}

/// Runs T2S-MPC and Neural MPC once each with `seed` and collects update
/// timings. Steps with no update are never timed.
pub fn timing_report(cfg: &ExperimentConfig, seed: u64) -> TimingReport {
    let mut t2s = cfg.clone();
    t2s.experiment.method = Method::T2s;
    let mut neural = cfg.clone();
    neural.experiment.method = Method::NeuralMpc;
    let a = run_once(&t2s, seed);
    let b = run_once(&neural, seed);
    TimingReport {
        fast: TimingStat::of(&a, UpdateKind::Fast),
        slow: TimingStat::of(&a, UpdateKind::Slow),
        full: TimingStat::of(&b, UpdateKind::Full),
    }
}
