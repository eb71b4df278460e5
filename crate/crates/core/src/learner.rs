//! Online residual learning: the streaming sample buffer, residual targets,
//! the batch loss and the two-timescale Adam schedule.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::plant::{nominal_discrete, Accel3, Control, QuadParams, State, ACCEL_ROWS};
use crate::residual_net::{GradScope, ResidualModel, ResidualScratch, OUTPUT_DIM};

/// One transition observed on the plant, `next_state` one control period later.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: State,
    pub control: Control,
    pub next_state: State,
}

/// Fixed-capacity FIFO of samples; the oldest sample is evicted first.
#[derive(Debug, Clone)]
pub struct SampleBuffer {
    samples: VecDeque<Sample>,
    capacity: usize,
    pushed: u64,
}

impl SampleBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            samples: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            pushed: 0,
        }
    }

    pub fn push(&mut self, sample: Sample) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
        self.pushed += 1;
    }

    /// Samples pushed since creation, evicted ones included. The newest
    /// sample has sequence number `total_pushed() - 1`.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Sample> {
        self.samples.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter()
    }

    /// The `n` most recent samples, oldest first.
    pub fn latest_batch(&self, n: usize) -> Vec<Sample> {
        let skip = self.samples.len().saturating_sub(n);
        self.samples.iter().skip(skip).copied().collect()
    }

    /// `n` samples drawn uniformly: without replacement when the buffer holds
    /// at least `n`, with replacement otherwise.
    pub fn random_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Sample> {
        let len = self.samples.len();
        if len == 0 {
            return Vec::new();
        }
        if len >= n {
            index::sample(rng, len, n)
                .into_iter()
                .map(|i| self.samples[i])
                .collect()
        } else {
            (0..n).map(|_| self.samples[rng.gen_range(0..len)]).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// `(Δv_observed − Δv_nominal) / dt` on `(vx, vz, φ̇)`.
    #[default]
    NominalMismatchAccel,
    /// `Δv_observed / dt` on `(vx, vz, φ̇)`: the raw state difference,
    /// restricted to the coordinates the network predicts.
    RawStateDiff,
}

/// Acceleration-level training target for one sample.
pub fn residual_target(sample: &Sample, quad: &QuadParams, dt: f64, mode: TargetMode) -> Accel3 {
    debug_assert!(dt > 0.0);
    let observed = sample.next_state.to_vector() - sample.state.to_vector();
    let delta = match mode {
        TargetMode::NominalMismatchAccel => {
            let predicted = nominal_discrete(&sample.state, &sample.control, quad, dt);
            sample.next_state.to_vector() - predicted.to_vector()
        }
        TargetMode::RawStateDiff => observed,
    };
    Accel3::new(delta[ACCEL_ROWS[0]], delta[ACCEL_ROWS[1]], delta[ACCEL_ROWS[2]]) / dt
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateSchedule {
    /// Output layer every `t_f` steps on recent data, the rest every `t_s`
    /// steps on random replay.
    #[default]
    TwoTimescale,
    /// Every parameter every `t_f` steps on recent data at `lr_f`.
    SingleScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub t_f: usize,
    pub t_s: usize,
    pub lr_f: f64,
    pub lr_s: f64,
    pub batch_f: usize,
    pub batch_s: usize,
    pub buffer_capacity: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub target_mode: TargetMode,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            t_f: 10,
            t_s: 25,
            lr_f: 1e-2,
            lr_s: 1e-3,
            batch_f: 16,
            batch_s: 64,
            buffer_capacity: 5000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            target_mode: TargetMode::NominalMismatchAccel,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.t_f < 1 {
            return Err(ConfigError::invalid("learner.t_f", "must be at least 1"));
        }
        if self.t_s <= self.t_f {
            return Err(ConfigError::invalid("learner.t_s", "must exceed t_f"));
        }
        for (name, v) in [("learner.lr_f", self.lr_f), ("learner.lr_s", self.lr_s)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(name, "must be positive"));
            }
        }
        for (name, v) in [
            ("learner.batch_f", self.batch_f),
            ("learner.batch_s", self.batch_s),
            ("learner.buffer_capacity", self.buffer_capacity),
        ] {
            if v < 1 {
                return Err(ConfigError::invalid(name, "must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(ConfigError::invalid("learner.beta1", "betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(ConfigError::invalid("learner.epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// Adam moments for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam step on `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStat {
    /// Batch loss before the step.
    pub loss: f64,
    pub batch: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateReport {
    pub step: usize,
    pub fast: Option<UpdateStat>,
    pub slow: Option<UpdateStat>,
    /// Whether `fast` updated every parameter (single-scale schedule).
    pub full: bool,
}

impl UpdateReport {
    pub fn fired_fast(&self) -> bool {
        self.fast.is_some()
    }

    pub fn fired_slow(&self) -> bool {
        self.slow.is_some()
    }

    pub fn is_noop(&self) -> bool {
        self.fast.is_none() && self.slow.is_none()
    }
}

/// Mean squared residual error `1/|B| Σ ‖r − r̂‖²` over a batch.
pub fn loss(batch: &[Sample], model: &ResidualModel, quad: &QuadParams, dt: f64, mode: TargetMode) -> f64 {
    assert!(!batch.is_empty(), "loss over an empty batch");
    let mut scratch = ResidualScratch::new(model);
    let total: f64 = batch
        .iter()
        .map(|s| {
            let target = residual_target(s, quad, dt, mode);
            let pred = model
                .predict_with(&s.state.to_vector(), &s.control.to_vector(), s.t, &mut scratch)
                .expect("finite sample");
            (target - pred).norm_squared()
        })
        .sum();
    total / batch.len() as f64
}

/// Loss and gradient over a batch. `grad` is indexed like the flat parameter
/// buffer and overwritten.
pub fn loss_and_gradient(
    batch: &[Sample],
    model: &ResidualModel,
    quad: &QuadParams,
    dt: f64,
    mode: TargetMode,
    scope: GradScope,
    grad: &mut [f64],
) -> f64 {
    assert!(!batch.is_empty());
    grad.iter_mut().for_each(|g| *g = 0.0);
    let params = &model.params;
    let mut cache = params.new_cache();
    let mut z = vec![0.0; model.input_dim()];
    let scale = model.scaling.output_scale;
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut upstream = [0.0; OUTPUT_DIM];
    for s in batch {
        let target = residual_target(s, quad, dt, mode);
        model.build_input(&s.state.to_vector(), &s.control.to_vector(), s.t, &mut z);
        params.forward_into(&z, &mut cache).expect("finite sample");
        let out = cache.output();
        for k in 0..OUTPUT_DIM {
            let err = out[k] * scale - target[k];
            total += err * err;
            upstream[k] = 2.0 * err * scale / n;
        }
        params.accumulate_gradient(&cache, &upstream, grad, scope);
    }
    total / n
}

/// Owns the sample buffer and optimizer state of one controller.
#[derive(Debug, Clone)]
pub struct OnlineLearner {
    pub cfg: LearnerConfig,
    pub schedule: UpdateSchedule,
    pub buffer: SampleBuffer,
    pub fast_adam: AdamState,
    pub slow_adam: AdamState,
    quad: QuadParams,
    dt: f64,
    rng: ChaCha8Rng,
    grad: Vec<f64>,
    /// Output-layer inputs of recent samples, by sequence number. Valid while
    /// the hidden layers are unchanged; cleared by every slow update.
    features: VecDeque<(u64, Vec<f64>)>,
}

impl OnlineLearner {
    pub fn new(
        cfg: LearnerConfig,
        schedule: UpdateSchedule,
        model: &ResidualModel,
        quad: QuadParams,
        dt: f64,
        seed: u64,
    ) -> Self {
        let p = &model.params;
        let (fast_len, slow_len) = match schedule {
            UpdateSchedule::TwoTimescale => (p.fast_range().len(), p.slow_range().len()),
            UpdateSchedule::SingleScale => (p.len(), 0),
        };
        Self {
            buffer: SampleBuffer::new(cfg.buffer_capacity),
            fast_adam: AdamState::new(fast_len, cfg.beta1, cfg.beta2, cfg.epsilon),
            slow_adam: AdamState::new(slow_len, cfg.beta1, cfg.beta2, cfg.epsilon),
            grad: vec![0.0; p.len()],
            features: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            cfg,
            schedule,
            quad,
            dt,
        }
    }

    pub fn push_sample(&mut self, sample: Sample) {
        self.buffer.push(sample);
    }

    /// Drops cached hidden features. Needed only if the model's hidden layers
    /// are changed by anything other than this learner.
    pub fn invalidate_features(&mut self) {
        self.features.clear();
    }

    /// Runs whichever updates are due after `step_index` collected samples
    /// (1-based). On steps that are multiples of both periods the fast update
    /// runs first.
    pub fn maybe_update(&mut self, step_index: usize, model: &mut ResidualModel) -> UpdateReport {
        let mut report = UpdateReport {
            step: step_index,
            full: self.schedule == UpdateSchedule::SingleScale,
            ..Default::default()
        };
        if self.buffer.is_empty() || step_index == 0 {
            return report;
        }
        if step_index.is_multiple_of(self.cfg.t_f) {
            report.fast = Some(self.fast_update(model));
        }
        if self.schedule == UpdateSchedule::TwoTimescale && step_index.is_multiple_of(self.cfg.t_s) {
            report.slow = Some(self.slow_update(model));
        }
        report
    }

    /// Adam step on the recent batch: output layer only, or every parameter
    /// under the single-scale schedule.
    pub fn fast_update(&mut self, model: &mut ResidualModel) -> UpdateStat {
        let started = Instant::now();
        let batch = self.buffer.latest_batch(self.cfg.batch_f);
        let (range, loss) = match self.schedule {
            UpdateSchedule::TwoTimescale => (model.params.fast_range(), self.output_layer_gradient(&batch, model)),
            UpdateSchedule::SingleScale => {
                let loss = loss_and_gradient(
                    &batch,
                    model,
                    &self.quad,
                    self.dt,
                    self.cfg.target_mode,
                    GradScope::Full,
                    &mut self.grad,
                );
                (0..model.params.len(), loss)
            }
        };
        self.fast_adam.step(
            &mut model.params.as_mut_slice()[range.clone()],
            &self.grad[range],
            self.cfg.lr_f,
        );
        UpdateStat {
            loss,
            batch: batch.len(),
            elapsed: started.elapsed(),
        }
    }

    /// Loss and output-layer gradient on the newest `batch`, reusing hidden
    /// features from earlier fast updates. Equal bit for bit to
    /// [`loss_and_gradient`] with [`GradScope::FastOnly`] on the fast range.
    fn output_layer_gradient(&mut self, batch: &[Sample], model: &ResidualModel) -> f64 {
        let params = &model.params;
        let range = params.fast_range();
        self.grad[range].iter_mut().for_each(|g| *g = 0.0);
        let first = self.buffer.total_pushed() - batch.len() as u64;
        while self.features.front().is_some_and(|(seq, _)| *seq < first) {
            self.features.pop_front();
        }
        if self.features.front().is_some_and(|(seq, _)| *seq != first) {
            self.features.clear();
        }
        let mut cache = None;
        let mut z = vec![0.0; model.input_dim()];
        let scale = model.scaling.output_scale;
        let n = batch.len() as f64;
        let mut total = 0.0;
        let mut out = [0.0; OUTPUT_DIM];
        let mut upstream = [0.0; OUTPUT_DIM];
        for (k, s) in batch.iter().enumerate() {
            let seq = first + k as u64;
            let slot = self.features.front().map(|(s0, _)| (seq - s0) as usize);
            if slot.is_none_or(|i| i >= self.features.len()) {
                let cache = cache.get_or_insert_with(|| params.new_cache());
                model.build_input(&s.state.to_vector(), &s.control.to_vector(), s.t, &mut z);
                params.forward_into(&z, cache).expect("finite sample");
                self.features.push_back((seq, cache.features().to_vec()));
            }
            let h = &self.features[(seq - self.features[0].0) as usize].1;
            params.output_layer(h, &mut out);
            let target = residual_target(s, &self.quad, self.dt, self.cfg.target_mode);
            for k in 0..OUTPUT_DIM {
                let err = out[k] * scale - target[k];
                total += err * err;
                upstream[k] = 2.0 * err * scale / n;
            }
            params.accumulate_output_gradient(h, &upstream, &mut self.grad);
        }
        total / n
    }

    /// Adam step on every parameter before the output layer, using a random
    /// replay batch.
    pub fn slow_update(&mut self, model: &mut ResidualModel) -> UpdateStat {
        let started = Instant::now();
        let batch = self.buffer.random_batch(self.cfg.batch_s, &mut self.rng);
        let range = model.params.slow_range();
        self.features.clear();
        let loss = loss_and_gradient(
            &batch,
            model,
            &self.quad,
            self.dt,
            self.cfg.target_mode,
            GradScope::Full,
            &mut self.grad,
        );
        self.slow_adam.step(
            &mut model.params.as_mut_slice()[range.clone()],
            &self.grad[range],
            self.cfg.lr_s,
        );
        UpdateStat {
            loss,
            batch: batch.len(),
            elapsed: started.elapsed(),
        }
    }
}
