//! Fast oracle checks over the whole stack: parameter counts, gradients and
//! Jacobians against finite differences, an LQR oracle for the solver,
//! equilibrium, determinism, the update scheduler and Adam.

use std::time::{Duration, Instant};

use nalgebra::{Matrix2, Matrix6, Matrix6x2, SMatrix, Vector2, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::harness::{run_once, ExperimentConfig, Method, Simulation};
use crate::learner::{AdamState, LearnerConfig, OnlineLearner, Sample, UpdateSchedule};
use crate::mpc::{solve, AffineModel, ComposedDynamics, CostWeights, DiscreteModel, OcpProblem, SolverConfig};
use crate::plant::{
    nominal_discrete, nominal_jacobians, rk4_step_with_noise, Control, DisturbanceSpec, QuadParams, State,
};
use crate::residual_net::{
    FeatureScaling, MlpParams, ResidualModel, DECISION_DIM, FAST_PARAM_COUNT, FULL_PARAM_COUNT, HIDDEN_DIM, OUTPUT_DIM,
    REDUCED_PARAM_COUNT,
};
use crate::time_embedding::TimeEmbeddingSpec;

#[derive(Debug, Clone)]
pub struct SelfcheckOptions {
    pub seed: u64,
    /// Expected size of the full network; only a test fixture changes it.
    pub expected_full_params: usize,
}

impl Default for SelfcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            expected_full_params: FULL_PARAM_COUNT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

type CheckFn = fn(&SelfcheckOptions) -> Result<String, String>;

pub const CHECKS: [(&str, CheckFn); 13] = [
    ("parameter_count_6979", check_param_counts),
    ("gradient_vs_finite_differences", check_gradients),
    ("input_jacobian_vs_finite_differences", check_input_jacobian),
    ("nominal_jacobians_vs_finite_differences", check_nominal_jacobians),
    ("composed_jacobians_vs_finite_differences", check_composed_jacobians),
    ("ilqr_matches_riccati", check_lqr_oracle),
    ("hover_is_fixed_point", check_hover_fixed_point),
    ("hover_is_optimal", check_hover_optimal),
    ("zero_init_matches_nominal", check_zero_init),
    ("run_is_deterministic", check_determinism),
    ("scheduler_counts_and_isolation", check_scheduler),
    ("adam_matches_hand_recursion", check_adam),
    ("time_embedding_values", check_embedding),
];

/// Runs every check in order.
pub fn run_selfcheck(opts: &SelfcheckOptions) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let started = Instant::now();
            let result = f(opts);
            let elapsed = started.elapsed();
            match result {
                Ok(detail) => CheckOutcome {
                    name,
                    passed: true,
                    detail,
                    elapsed,
                },
                Err(detail) => CheckOutcome {
                    name,
                    passed: false,
                    detail,
                    elapsed,
                },
            }
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn check_param_counts(opts: &SelfcheckOptions) -> Result<String, String> {
    let full = MlpParams::residual(DECISION_DIM + TimeEmbeddingSpec::default().dim(), 0);
    let reduced = MlpParams::residual(DECISION_DIM, 0);
    ensure(full.len() == opts.expected_full_params, || {
        format!(
            "full network has {} parameters, expected {}",
            full.len(),
            opts.expected_full_params
        )
    })?;
    ensure(full.fast_range().len() == FAST_PARAM_COUNT, || {
        format!("fast set has {} parameters, expected 195", full.fast_range().len())
    })?;
    ensure(full.slow_range().len() == full.len() - FAST_PARAM_COUNT, || {
        "slow set is not the complement of the fast set".into()
    })?;
    ensure(reduced.len() == REDUCED_PARAM_COUNT, || {
        format!("reduced network has {} parameters, expected 4931", reduced.len())
    })?;
    Ok(format!(
        "full {} = {} fast + {} slow; reduced {}",
        full.len(),
        full.fast_range().len(),
        full.slow_range().len(),
        reduced.len()
    ))
}

/// A full-size network with every layer random and every pre-activation at
/// least `margin` away from zero for the returned input.
fn random_net_away_from_kinks(rng: &mut ChaCha8Rng, margin: f64) -> (MlpParams, Vec<f64>) {
    let sizes = [
        DECISION_DIM + TimeEmbeddingSpec::default().dim(),
        HIDDEN_DIM,
        HIDDEN_DIM,
        OUTPUT_DIM,
    ];
    loop {
        let mut p = MlpParams::init(&sizes, rng.gen());
        let normal = Normal::new(0.0, 0.3).unwrap();
        for v in p.as_mut_slice().iter_mut() {
            *v += 0.1 * normal.sample(rng);
        }
        let z: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = p.forward(&z).expect("finite input");
        let clear = (0..p.num_layers() - 1).all(|l| cache.pre_activations(l).iter().all(|a| a.abs() > margin));
        if clear {
            return (p, z);
        }
    }
}

fn projected_output(p: &MlpParams, z: &[f64], w: &[f64]) -> f64 {
    let (out, _) = p.forward(z).expect("finite input");
    out.iter().zip(w).map(|(a, b)| a * b).sum()
}

fn check_gradients(opts: &SelfcheckOptions) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x67);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (mut p, z) = random_net_away_from_kinks(&mut rng, 1e-3);
        let w: Vec<f64> = (0..OUTPUT_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = p.forward(&z).unwrap();
        let g = p.backward_params(&cache, &w);
        let fast_start = p.fast_range().start;
        for i in 0..p.len() {
            let orig = p.as_slice()[i];
            p.as_mut_slice()[i] = orig + h;
            let up = projected_output(&p, &z, &w);
            p.as_mut_slice()[i] = orig - h;
            let down = projected_output(&p, &z, &w);
            p.as_mut_slice()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = if i >= fast_start {
                g.fast[i - fast_start]
            } else {
                g.slow[i]
            };
            worst = worst.max(rel_err(an, fd, 1e-4));
        }
    }
    ensure(worst < 1e-4, || format!("worst relative error {worst:.2e} ≥ 1e-4"))?;
    Ok(format!("50 instances, worst relative error {worst:.2e}"))
}

fn check_input_jacobian(opts: &SelfcheckOptions) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1a);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (p, z) = random_net_away_from_kinks(&mut rng, 1e-3);
        let jac = p.input_jacobian(&z).unwrap();
        ensure(jac.nrows() == 3 && jac.ncols() == 8, || "jacobian is not 3×8".into())?;
        for c in 0..DECISION_DIM {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[c] += h;
            zm[c] -= h;
            let (op, _) = p.forward(&zp).unwrap();
            let (om, _) = p.forward(&zm).unwrap();
            for r in 0..OUTPUT_DIM {
                worst = worst.max(rel_err(jac[(r, c)], (op[r] - om[r]) / (2.0 * h), 1e-4));
            }
        }
    }
    ensure(worst < 1e-4, || format!("worst relative error {worst:.2e} ≥ 1e-4"))?;
    Ok(format!("50 instances, worst relative error {worst:.2e}"))
}

fn random_state(rng: &mut ChaCha8Rng) -> State {
    State {
        x: rng.gen_range(-0.5..0.5),
        vx: rng.gen_range(-1.0..1.0),
        z: rng.gen_range(0.5..1.5),
        vz: rng.gen_range(-1.0..1.0),
        phi: rng.gen_range(-0.6..0.6),
        phidot: rng.gen_range(-2.0..2.0),
    }
}

fn fd_jacobians(
    mut step: impl FnMut(&Vector6<f64>, &Vector2<f64>) -> Vector6<f64>,
    x: &Vector6<f64>,
    u: &Vector2<f64>,
    h: f64,
) -> (Matrix6<f64>, Matrix6x2<f64>) {
    let mut a = Matrix6::zeros();
    let mut b = Matrix6x2::zeros();
    for j in 0..6 {
        let mut xp = *x;
        let mut xm = *x;
        xp[j] += h;
        xm[j] -= h;
        a.set_column(j, &((step(&xp, u) - step(&xm, u)) / (2.0 * h)));
    }
    for j in 0..2 {
        let mut up = *u;
        let mut um = *u;
        up[j] += h;
        um[j] -= h;
        b.set_column(j, &((step(x, &up) - step(x, &um)) / (2.0 * h)));
    }
    (a, b)
}

fn worst_entry<const C: usize>(an: &SMatrix<f64, 6, C>, fd: &SMatrix<f64, 6, C>, floor: f64) -> f64 {
    an.iter()
        .zip(fd.iter())
        .map(|(a, b)| rel_err(*a, *b, floor))
        .fold(0.0, f64::max)
}

fn check_nominal_jacobians(opts: &SelfcheckOptions) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4e);
    let quad = QuadParams::default();
    let dt = 0.02;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let s = random_state(&mut rng);
        let u = Control::new(rng.gen_range(0.0..quad.t_max), rng.gen_range(0.0..quad.t_max));
        let (a, b) = nominal_jacobians(&s, &u, &quad, dt);
        let step = |x: &Vector6<f64>, u: &Vector2<f64>| {
            nominal_discrete(&State::from_vector(x), &Control::from_vector(u), &quad, dt).to_vector()
        };
        let (fa, fb) = fd_jacobians(step, &s.to_vector(), &u.to_vector(), 1e-6);
        worst = worst.max(worst_entry(&a, &fa, 1e-3)).max(worst_entry(&b, &fb, 1e-3));
    }
    ensure(worst < 1e-5, || format!("worst relative error {worst:.2e} ≥ 1e-5"))?;
    Ok(format!("100 pairs, worst relative error {worst:.2e}"))
}

fn check_composed_jacobians(opts: &SelfcheckOptions) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xc0);
    let quad = QuadParams::default();
    let dt = 0.02;
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 30 {
        let mut model = ResidualModel::new(Some(TimeEmbeddingSpec::default()), FeatureScaling::default(), rng.gen());
        let range = model.params.fast_range();
        for v in &mut model.params.as_mut_slice()[range] {
            *v = rng.gen_range(-0.5..0.5);
        }
        let s = State {
            phi: rng.gen_range(-0.3..0.3),
            ..State::hover_at(rng.gen_range(-0.1..0.1), 1.0 + rng.gen_range(-0.1..0.1))
        };
        let u = Control::new(rng.gen_range(0.1..0.15), rng.gen_range(0.1..0.15));
        let t0 = rng.gen_range(0.0..10.0);
        let k = rng.gen_range(0..20);
        let z = model.input_vec(&s.to_vector(), &u.to_vector(), t0 + k as f64 * dt);
        let (_, cache) = model.params.forward(&z).unwrap();
        if (0..2).any(|l| cache.pre_activations(l).iter().any(|a| a.abs() < 1e-3)) {
            continue;
        }
        let mut dynamics = ComposedDynamics::compose(quad, dt, Some(&model), t0, true);
        let (_, a, b) = dynamics.linearize(k, &s.to_vector(), &u.to_vector());
        let mut fd_model = ComposedDynamics::compose(quad, dt, Some(&model), t0, true);
        let (fa, fb) = fd_jacobians(|x, u| fd_model.step(k, x, u), &s.to_vector(), &u.to_vector(), 1e-6);
        worst = worst.max(worst_entry(&a, &fa, 1e-3)).max(worst_entry(&b, &fb, 1e-3));
        done += 1;
    }
    ensure(worst < 1e-4, || format!("worst relative error {worst:.2e} ≥ 1e-4"))?;
    Ok(format!("30 instances, worst relative error {worst:.2e}"))
}

fn check_lqr_oracle(opts: &SelfcheckOptions) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1f);
    let quad = QuadParams::default();
    let dt = 0.02;
    let hover = State::hover_at(0.0, 1.0);
    let uh = quad.hover_control();
    let (a, b) = nominal_jacobians(&hover, &uh, &quad, dt);
    let weights = CostWeights::default();
    let q = Matrix6::from_diagonal(&Vector6::from_row_slice(&weights.q));
    let qf = Matrix6::from_diagonal(&Vector6::from_row_slice(&weights.qf));
    let r = Matrix2::from_diagonal(&Vector2::from_row_slice(&weights.r));
    let n = 20;

    // backward Riccati recursion for the gain at step 0
    let mut p = qf;
    let mut k0 = SMatrix::<f64, 2, 6>::zeros();
    for _ in 0..n {
        let s = r + b.transpose() * p * b;
        let k = -s.try_inverse().ok_or("singular Riccati step")? * b.transpose() * p * a;
        p = q + a.transpose() * p * (a + b * k);
        p = 0.5 * (p + p.transpose());
        k0 = k;
    }

    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let dx = Vector6::new(
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.1..0.1),
        );
        let x_bar = hover.to_vector();
        let problem = OcpProblem {
            x0: x_bar + dx,
            horizon: n,
            x_ref: vec![x_bar; n + 1],
            u_ref: uh.to_vector(),
            weights: weights.clone(),
            u_min: -1e3,
            u_max: 1e3,
        };
        let mut model = AffineModel {
            a,
            b,
            x_bar,
            u_bar: uh.to_vector(),
            x_next_bar: x_bar,
        };
        let sol = solve(&problem, &mut model, None, &SolverConfig::default());
        let expected = uh.to_vector() + k0 * dx;
        worst = worst.max((sol.controls[0] - expected).amax());
    }
    ensure(worst < 1e-6, || format!("first-control deviation {worst:.2e} ≥ 1e-6"))?;
    Ok(format!("5 initial states, worst first-control deviation {worst:.2e}"))
}

fn check_hover_fixed_point(_: &SelfcheckOptions) -> Result<String, String> {
    let quad = QuadParams::default();
    let s = State::hover_at(0.3, 1.2);
    let u = quad.hover_control();
    let nominal = (nominal_discrete(&s, &u, &quad, 0.02).to_vector() - s.to_vector()).amax();
    let plant =
        rk4_step_with_noise(&s, &u, &quad, &DisturbanceSpec::none(), 0.0, 0.02, 0.0).map_err(|e| e.to_string())?;
    let plant_dev = (plant.to_vector() - s.to_vector()).amax();
    let worst = nominal.max(plant_dev);
    ensure(worst <= 1e-12, || format!("hover drifts by {worst:.2e}"))?;
    Ok(format!("one-step drift {worst:.1e}"))
}

fn check_hover_optimal(_: &SelfcheckOptions) -> Result<String, String> {
    let quad = QuadParams::default();
    let x = State::hover_at(0.0, 1.0).to_vector();
    let problem = OcpProblem {
        x0: x,
        horizon: 20,
        x_ref: vec![x; 21],
        u_ref: quad.hover_control().to_vector(),
        weights: CostWeights::default(),
        u_min: 0.0,
        u_max: quad.t_max,
    };
    let sol = solve(
        &problem,
        &mut ComposedDynamics::nominal(quad, 0.02),
        None,
        &SolverConfig::default(),
    );
    ensure(sol.cost < 1e-8, || format!("cost at hover {:.2e}", sol.cost))?;
    let dev = (sol.controls[0] - problem.u_ref).amax();
    ensure(dev < 1e-6, || format!("first control {dev:.2e} from hover thrust"))?;
    Ok(format!("cost {:.1e}", sol.cost))
}

fn check_zero_init(opts: &SelfcheckOptions) -> Result<String, String> {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.method = Method::NominalMpc;
    let nominal = Simulation::new(&cfg, opts.seed).peek_control();
    cfg.experiment.method = Method::T2s;
    let t2s = Simulation::new(&cfg, opts.seed).peek_control();
    ensure(
        nominal.t1.to_bits() == t2s.t1.to_bits() && nominal.t2.to_bits() == t2s.t2.to_bits(),
        || format!("step-0 controls differ: {nominal:?} vs {t2s:?}"),
    )?;
    Ok("step-0 controls bit-identical".into())
}

fn check_determinism(opts: &SelfcheckOptions) -> Result<String, String> {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.duration = 2.0;
    let a = run_once(&cfg, opts.seed).to_csv_string();
    let b = run_once(&cfg, opts.seed).to_csv_string();
    ensure(a == b, || "two runs with the same seed differ".into())?;
    Ok(format!("{} bytes identical", a.len()))
}

fn check_scheduler(opts: &SelfcheckOptions) -> Result<String, String> {
    let quad = QuadParams::default();
    let dt = 0.02;
    let cfg = LearnerConfig::default();
    let mut model = ResidualModel::new(Some(TimeEmbeddingSpec::default()), FeatureScaling::default(), opts.seed);
    let mut learner = OnlineLearner::new(cfg.clone(), UpdateSchedule::TwoTimescale, &model, quad, dt, opts.seed);
    let spec = DisturbanceSpec::constant(0.003).with_noise(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut fast, mut slow) = (0, 0);
    for step in 1..=1000 {
        let t = (step - 1) as f64 * dt;
        let s = State {
            vx: rng.gen_range(-0.01..0.01),
            ..State::hover_at(rng.gen_range(-0.01..0.01), 1.0)
        };
        let u = quad.hover_control();
        let next = rk4_step_with_noise(&s, &u, &quad, &spec, t, dt, 0.0).map_err(|e| e.to_string())?;
        learner.push_sample(Sample {
            t,
            state: s,
            control: u,
            next_state: next,
        });
        let before = model.params.as_slice().to_vec();
        let report = learner.maybe_update(step, &mut model);
        let after = model.params.as_slice();
        let fr = model.params.fast_range();
        let sr = model.params.slow_range();
        let same = |r: std::ops::Range<usize>| {
            before[r.clone()]
                .iter()
                .zip(&after[r])
                .all(|(a, b)| a.to_bits() == b.to_bits())
        };
        if report.fired_fast() && !report.fired_slow() {
            ensure(same(sr.clone()), || {
                format!("fast update at step {step} changed a slow parameter")
            })?;
        }
        if report.fired_slow() && !report.fired_fast() {
            ensure(same(fr.clone()), || {
                format!("slow update at step {step} changed a fast parameter")
            })?;
        }
        if report.is_noop() {
            ensure(same(0..model.params.len()), || {
                format!("step {step} changed parameters without an update")
            })?;
        }
        fast += report.fired_fast() as usize;
        slow += report.fired_slow() as usize;
    }
    ensure(fast == 100 && slow == 40, || {
        format!("{fast} fast and {slow} slow updates, expected 100 and 40")
    })?;
    Ok("100 fast, 40 slow, partitions isolated".into())
}

fn check_adam(_: &SelfcheckOptions) -> Result<String, String> {
    let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.01);
    let mut adam = AdamState::new(1, b1, b2, eps);
    let mut theta = [0.5];
    let grads = [0.3, -0.2, 0.05];
    let (mut m, mut v, mut expected) = (0.0, 0.0, 0.5);
    let mut worst: f64 = 0.0;
    for (i, g) in grads.iter().enumerate() {
        adam.step(&mut theta, &[*g], lr);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(i as i32 + 1));
        let v_hat = v / (1.0 - b2.powi(i as i32 + 1));
        expected -= lr * m_hat / (v_hat.sqrt() + eps);
        worst = worst.max((theta[0] - expected).abs());
    }
    ensure(worst < 1e-12, || {
        format!("deviation {worst:.2e} from the hand recursion")
    })?;
    Ok(format!("3 steps, deviation {worst:.1e}"))
}

fn check_embedding(_: &SelfcheckOptions) -> Result<String, String> {
    let e = TimeEmbeddingSpec::default();
    let half = e.dim() / 2;
    let at0 = e.embed(0.0);
    ensure(
        at0[..half].iter().all(|v| *v == 0.0) && at0[half..].iter().all(|v| *v == 1.0),
        || "ψ(0) is not zeros then ones".into(),
    )?;
    let t = 0.73;
    let base = e.embed(t);
    for i in 1..=half {
        let shifted = e.embed(t + 2.0 * i as f64);
        for (j, idx) in [i - 1, half + i - 1].into_iter().enumerate() {
            ensure((shifted[idx] - base[idx]).abs() < 1e-9, || {
                format!("component {i} ({}) is not 2i-periodic", ["sin", "cos"][j])
            })?;
        }
    }
    Ok(format!("d = {}, periods 2..{} s", e.dim(), 2 * half))
}
