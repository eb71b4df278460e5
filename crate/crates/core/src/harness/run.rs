use std::io::{Read, Write};
use std::path::Path;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, SimulationFault};
use crate::learner::{OnlineLearner, Sample, UpdateReport};
use crate::mpc::{MpcController, MpcStep};
use crate::plant::{rk4_step_with_noise, Control, DisturbanceSpec, QuadParams, State};
use crate::residual_net::ResidualModel;

use super::config::{ExperimentConfig, Method, Task};
use super::reference::ReferenceTrajectory;

/// Independent random streams of one run.
const STREAM_INIT: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_REPLAY: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn mix(a: u64, b: u64) -> u64 {
    a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
}

/// One control step of the closed loop, as written to the per-step CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Time at the end of the step, s.
    pub t: f64,
    /// State at `t`.
    pub state: State,
    /// Control applied over the step.
    pub control: Control,
    pub x_ref: f64,
    pub z_ref: f64,
    /// Position error to the reference at `t`.
    pub error: f64,
    /// Disturbance acceleration at the start of the step, noise included.
    pub disturbance: f64,
    pub solver_iterations: usize,
    pub solver_cost: f64,
    pub solver_converged: bool,
    pub held_last: bool,
    pub fired_fast: bool,
    pub fired_slow: bool,
    pub loss_f: Option<f64>,
    pub loss_s: Option<f64>,
}

pub const LOG_COLUMNS: [&str; 22] = [
    "step",
    "t",
    "x",
    "vx",
    "z",
    "vz",
    "phi",
    "phidot",
    "t1",
    "t2",
    "x_ref",
    "z_ref",
    "error",
    "disturbance",
    "solver_iterations",
    "solver_cost",
    "solver_converged",
    "held_last",
    "fired_fast",
    "fired_slow",
    "loss_f",
    "loss_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    /// Output layer only.
    Fast,
    /// Hidden layers only.
    Slow,
    /// Every parameter.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateTiming {
    pub kind: UpdateKind,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub method: Method,
    pub task: Task,
    pub disturbance: DisturbanceSpec,
    pub seed: u64,
    pub rows: Vec<LogRow>,
    /// Mean of the `error` column.
    pub mean_error: f64,
    pub failed: Option<String>,
    /// Wall time of every learner update; not part of the CSV.
    pub timings: Vec<UpdateTiming>,
}

impl RunLog {
    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.error)
    }

    pub fn fast_updates(&self) -> usize {
        self.rows.iter().filter(|r| r.fired_fast).count()
    }

    pub fn slow_updates(&self) -> usize {
        self.rows.iter().filter(|r| r.fired_slow).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), Error> {
        write_rows_csv(&self.rows, w)
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
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_rows_csv<W: Write>(rows: &[LogRow], w: W) -> Result<(), Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LOG_COLUMNS)?;
    for r in rows {
        let s = &r.state;
        out.write_record([
            r.step.to_string(),
            r.t.to_string(),
            s.x.to_string(),
            s.vx.to_string(),
            s.z.to_string(),
            s.vz.to_string(),
            s.phi.to_string(),
            s.phidot.to_string(),
            r.control.t1.to_string(),
            r.control.t2.to_string(),
            r.x_ref.to_string(),
            r.z_ref.to_string(),
            r.error.to_string(),
            r.disturbance.to_string(),
            r.solver_iterations.to_string(),
            r.solver_cost.to_string(),
            (r.solver_converged as u8).to_string(),
            (r.held_last as u8).to_string(),
            (r.fired_fast as u8).to_string(),
            (r.fired_slow as u8).to_string(),
            opt(r.loss_f),
            opt(r.loss_s),
        ])?;
    }
    out.flush().map_err(|e| Error::Other(e.to_string()))?;
    Ok(())
}

/// Parses a per-step CSV written by [`RunLog::write_csv`].
pub fn read_rows_csv<R: Read>(r: R) -> Result<Vec<LogRow>, Error> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(LOG_COLUMNS.iter().copied()) {
        return Err(Error::Parse("unexpected run-log columns".into()));
    }
    let num = |rec: &csv::StringRecord, i: usize| -> Result<f64, Error> {
        rec[i]
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("column {}: {e}", LOG_COLUMNS[i])))
    };
    let int = |rec: &csv::StringRecord, i: usize| -> Result<usize, Error> {
        rec[i]
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("column {}: {e}", LOG_COLUMNS[i])))
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let optional = |i: usize| -> Result<Option<f64>, Error> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                num(&rec, i).map(Some)
            }
        };
        rows.push(LogRow {
            step: int(&rec, 0)?,
            t: num(&rec, 1)?,
            state: State {
                x: num(&rec, 2)?,
                vx: num(&rec, 3)?,
                z: num(&rec, 4)?,
                vz: num(&rec, 5)?,
                phi: num(&rec, 6)?,
                phidot: num(&rec, 7)?,
            },
            control: Control::new(num(&rec, 8)?, num(&rec, 9)?),
            x_ref: num(&rec, 10)?,
            z_ref: num(&rec, 11)?,
            error: num(&rec, 12)?,
            disturbance: num(&rec, 13)?,
            solver_iterations: int(&rec, 14)?,
            solver_cost: num(&rec, 15)?,
            solver_converged: int(&rec, 16)? != 0,
            held_last: int(&rec, 17)? != 0,
            fired_fast: int(&rec, 18)? != 0,
            fired_slow: int(&rec, 19)? != 0,
            loss_f: optional(20)?,
            loss_s: optional(21)?,
        });
    }
    Ok(rows)
}

/// The closed loop of one run, advanced one control step at a time.
pub struct Simulation {
    method: Method,
    quad: QuadParams,
    disturbance: DisturbanceSpec,
    reference: ReferenceTrajectory,
    dt: f64,
    horizon: usize,
    controller: MpcController,
    model: Option<ResidualModel>,
    learner: Option<OnlineLearner>,
    noise_rng: ChaCha8Rng,
    state: State,
    step: usize,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Self {
        let method = cfg.experiment.method;
        let dt = cfg.dt();
        let reference = ReferenceTrajectory::for_task(cfg.experiment.task, &cfg.reference);

        let mut init_rng = stream_rng(seed, STREAM_INIT);
        let start = reference.state_at(0.0);
        let pos = Normal::new(0.0, cfg.experiment.init_pos_std).unwrap();
        let vel = Normal::new(0.0, cfg.experiment.init_vel_std).unwrap();
        let state = State {
            x: start[0] + pos.sample(&mut init_rng),
            vx: start[1] + vel.sample(&mut init_rng),
            z: start[2] + pos.sample(&mut init_rng),
            vz: start[3] + vel.sample(&mut init_rng),
            phi: start[4],
            phidot: start[5],
        };

        let model = method.learns().then(|| {
            ResidualModel::new(
                method.uses_time_embedding().then(|| cfg.embedding()),
                cfg.network.scaling.clone(),
                mix(cfg.network.init_seed, seed),
            )
        });
        let learner = model.as_ref().map(|m| {
            OnlineLearner::new(
                cfg.learner.clone(),
                method.schedule(),
                m,
                cfg.quad,
                dt,
                mix(seed, STREAM_REPLAY),
            )
        });

        Self {
            method,
            quad: cfg.quad,
            disturbance: cfg.disturbance.clone(),
            reference,
            dt,
            horizon: cfg.mpc.horizon,
            controller: MpcController::new(cfg.mpc.clone(), cfg.quad, dt),
            model,
            learner,
            noise_rng: stream_rng(mix(seed, cfg.disturbance.seed), STREAM_NOISE),
            state,
            step: 0,
        }
    }

    pub fn state(&self) -> State {
        self.state
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn model(&self) -> Option<&ResidualModel> {
        self.model.as_ref()
    }

    pub fn learner(&self) -> Option<&OnlineLearner> {
        self.learner.as_ref()
    }

    /// The first control the controller would apply now, without advancing.
    pub fn peek_control(&self) -> Control {
        let mut ctrl = self.controller.clone();
        let t = self.time();
        ctrl.step(
            &self.state.to_vector(),
            t,
            self.reference.window(t, self.dt, self.horizon),
            self.model.as_ref(),
        )
        .control
    }

    /// MPC solve, plant step, sample insertion and any due learner update.
    pub fn advance(&mut self) -> Result<(LogRow, UpdateReport), SimulationFault> {
        let t = self.time();
        let x = self.state;
        let MpcStep {
            control,
            iterations,
            cost,
            converged,
            held_last,
        } = self.controller.step(
            &x.to_vector(),
            t,
            self.reference.window(t, self.dt, self.horizon),
            self.model.as_ref(),
        );

        let noise = self.disturbance.sample_noise(&mut self.noise_rng);
        let disturbance = self.disturbance.deterministic_accel(t) + noise;
        let next = rk4_step_with_noise(&x, &control, &self.quad, &self.disturbance, t, self.dt, noise)?;

        self.step += 1;
        let mut report = UpdateReport {
            step: self.step,
            ..Default::default()
        };
        if let (Some(learner), Some(model)) = (self.learner.as_mut(), self.model.as_mut()) {
            learner.push_sample(Sample {
                t,
                state: x,
                control,
                next_state: next,
            });
            report = learner.maybe_update(self.step, model);
        }
        self.state = next;

        let t_next = self.time();
        let (x_ref, z_ref, _) = self.reference.reference_at(t_next);
        let row = LogRow {
            step: self.step,
            t: t_next,
            state: next,
            control,
            x_ref,
            z_ref,
            error: ((next.x - x_ref).powi(2) + (next.z - z_ref).powi(2)).sqrt(),
            disturbance,
            solver_iterations: iterations,
            solver_cost: cost,
            solver_converged: converged,
            held_last,
            fired_fast: report.fired_fast(),
            fired_slow: report.fired_slow(),
            loss_f: report.fast.map(|s| s.loss),
            loss_s: report.slow.map(|s| s.loss),
        };
        Ok((row, report))
    }

    pub fn method(&self) -> Method {
        self.method
    }
}

/// Executes one closed-loop run of `cfg.experiment.duration` seconds.
pub fn run_once(cfg: &ExperimentConfig, seed: u64) -> RunLog {
    let mut sim = Simulation::new(cfg, seed);
    let steps = cfg.steps();
    let mut rows = Vec::with_capacity(steps);
    let mut timings = Vec::new();
    let mut failed = None;
    for _ in 0..steps {
        match sim.advance() {
            Ok((row, report)) => {
                if let Some(f) = report.fast {
                    timings.push(UpdateTiming {
                        kind: if report.full {
                            UpdateKind::Full
                        } else {
                            UpdateKind::Fast
                        },
                        elapsed: f.elapsed,
                    });
                }
                if let Some(s) = report.slow {
                    timings.push(UpdateTiming {
                        kind: UpdateKind::Slow,
                        elapsed: s.elapsed,
                    });
                }
                rows.push(row);
            }
            Err(fault) => {
                failed = Some(fault.to_string());
                break;
            }
        }
    }
    let mean_error = mean(rows.iter().map(|r| r.error));
    RunLog {
        method: cfg.experiment.method,
        task: cfg.experiment.task,
        disturbance: cfg.disturbance.clone(),
        seed,
        rows,
        mean_error,
        failed,
        timings,
    }
}
