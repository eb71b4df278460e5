use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use t2s_bench::{filled_learner, hover_problem, perturbed_state, residual_model, DT};
use t2s_core::learner::UpdateSchedule;
use t2s_core::mpc::{solve, ComposedDynamics, DiscreteModel, MpcConfig};
use t2s_core::plant::nominal_jacobians;
use t2s_core::residual_net::ResidualScratch;
use t2s_core::QuadParams;

fn network(c: &mut Criterion) {
    let model = residual_model(0);
    let mut scratch = ResidualScratch::new(&model);
    let s = perturbed_state(&mut ChaCha8Rng::seed_from_u64(0));
    let x = s.to_vector();
    let u = QuadParams::default().hover_control().to_vector();
    c.bench_function("residual_forward", |b| {
        b.iter(|| {
            model
                .predict_with(black_box(&x), black_box(&u), 3.7, &mut scratch)
                .unwrap()
        })
    });
    c.bench_function("residual_forward_with_jacobian", |b| {
        b.iter(|| {
            model
                .predict_with_jacobian(black_box(&x), black_box(&u), 3.7, &mut scratch)
                .unwrap()
        })
    });
}

fn jacobians(c: &mut Criterion) {
    let quad = QuadParams::default();
    let s = perturbed_state(&mut ChaCha8Rng::seed_from_u64(1));
    let u = quad.hover_control();
    c.bench_function("nominal_jacobians", |b| {
        b.iter(|| nominal_jacobians(black_box(&s), black_box(&u), &quad, DT))
    });
    let model = residual_model(0);
    let mut dynamics = ComposedDynamics::compose(quad, DT, Some(&model), 1.0, true);
    let x = s.to_vector();
    let uv = u.to_vector();
    c.bench_function("composed_linearize", |b| {
        b.iter(|| dynamics.linearize(3, black_box(&x), black_box(&uv)))
    });
}

fn ocp(c: &mut Criterion) {
    let quad = QuadParams::default();
    let cfg = MpcConfig::default();
    let x0 = perturbed_state(&mut ChaCha8Rng::seed_from_u64(2)).to_vector();
    let problem = hover_problem(&x0);
    let model = residual_model(0);
    c.bench_function("ilqr_solve_nominal_cold", |b| {
        b.iter(|| {
            let mut dynamics = ComposedDynamics::nominal(quad, DT);
            solve(&problem, &mut dynamics, None, &cfg.solver)
        })
    });
    c.bench_function("ilqr_solve_residual_cold", |b| {
        b.iter(|| {
            let mut dynamics = ComposedDynamics::compose(quad, DT, Some(&model), 1.0, true);
            solve(&problem, &mut dynamics, None, &cfg.solver)
        })
    });
    let mut dynamics = ComposedDynamics::compose(quad, DT, Some(&model), 1.0, true);
    let warm = solve(&problem, &mut dynamics, None, &cfg.solver).shifted_controls();
    c.bench_function("ilqr_solve_residual_warm", |b| {
        b.iter(|| {
            let mut dynamics = ComposedDynamics::compose(quad, DT, Some(&model), 1.0, true);
            solve(&problem, &mut dynamics, Some(&warm), &cfg.solver)
        })
    });
}

fn updates(c: &mut Criterion) {
    let model = residual_model(0);
    let two = filled_learner(UpdateSchedule::TwoTimescale, &model, 500);
    let single = filled_learner(UpdateSchedule::SingleScale, &model, 500);
    let mut group = c.benchmark_group("learner_update");
    group.bench_function("fast_output_layer", |b| {
        b.iter_batched(
            || (two.clone(), model.clone()),
            |(mut l, mut m)| l.fast_update(&mut m),
            BatchSize::SmallInput,
        )
    });
    group.bench_function("slow_hidden_layers", |b| {
        b.iter_batched(
            || (two.clone(), model.clone()),
            |(mut l, mut m)| l.slow_update(&mut m),
            BatchSize::SmallInput,
        )
    });
    group.bench_function("full_all_params", |b| {
        b.iter_batched(
            || (single.clone(), model.clone()),
            |(mut l, mut m)| l.fast_update(&mut m),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, network, jacobians, ocp, updates);
criterion_main!(benches);
