//! Fixtures shared by the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use t2s_core::learner::{LearnerConfig, OnlineLearner, Sample, UpdateSchedule};
use t2s_core::mpc::{MpcConfig, OcpProblem};
use t2s_core::plant::{nominal_discrete, StateVector};
use t2s_core::residual_net::{FeatureScaling, ResidualModel};
use t2s_core::{QuadParams, State, TimeEmbeddingSpec};

pub const DT: f64 = 0.02;

/// Full residual model with random (nonzero) output weights so that the
/// forward and Jacobian paths do real work.
pub fn residual_model(seed: u64) -> ResidualModel {
    let mut model = ResidualModel::new(Some(TimeEmbeddingSpec::default()), FeatureScaling::default(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let fast = model.params.fast_range();
    for w in &mut model.params.as_mut_slice()[fast] {
        *w = rng.gen_range(-0.1..0.1);
    }
    model
}

/// Hover state near `(0, 1)` with a small perturbation.
pub fn perturbed_state(rng: &mut impl Rng) -> State {
    let mut s = State::hover_at(0.0, 1.0);
    s.x += rng.gen_range(-0.02..0.02);
    s.z += rng.gen_range(-0.02..0.02);
    s.vx += rng.gen_range(-0.01..0.01);
    s.vz += rng.gen_range(-0.01..0.01);
    s
}

/// Stabilisation problem at hover with the default weights and horizon.
pub fn hover_problem(x0: &StateVector) -> OcpProblem {
    let quad = QuadParams::default();
    let cfg = MpcConfig::default();
    OcpProblem {
        x0: *x0,
        horizon: cfg.horizon,
        x_ref: vec![State::hover_at(0.0, 1.0).to_vector(); cfg.horizon + 1],
        u_ref: quad.hover_control().to_vector(),
        weights: cfg.weights,
        u_min: 0.0,
        u_max: quad.t_max,
    }
}

/// Learner whose buffer holds `n` nominal transitions from perturbed states.
pub fn filled_learner(schedule: UpdateSchedule, model: &ResidualModel, n: usize) -> OnlineLearner {
    let quad = QuadParams::default();
    let mut learner = OnlineLearner::new(LearnerConfig::default(), schedule, model, quad, DT, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hover = quad.hover_thrust();
    for k in 0..n {
        let state = perturbed_state(&mut rng);
        let control = t2s_core::Control::new(hover + rng.gen_range(-0.01..0.01), hover + rng.gen_range(-0.01..0.01));
        let next_state = nominal_discrete(&state, &control, &quad, DT);
        learner.push_sample(Sample {
            t: k as f64 * DT,
            state,
            control,
            next_state,
        });
    }
    learner
}
