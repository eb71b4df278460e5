//! Receding-horizon trajectory optimisation over the composed model
//! `nominal + learned residual`.
//!
//! The solver is box-constrained iLQR: a Riccati-style backward pass whose
//! per-step control subproblem is solved exactly over the thrust box, followed
//! by a closed-loop forward rollout with backtracking line search.

use nalgebra::{Matrix2, Matrix2x6, Matrix6, Matrix6x2, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::plant::{rk4_held, rk4_held_linearized, Accel3, Control, ControlVector, QuadParams, StateVector};
use crate::residual_net::{ResidualModel, ResidualScratch};

/// One-step discrete dynamics with Jacobians, indexed by horizon step.
pub trait DiscreteModel {
    fn step(&mut self, k: usize, x: &StateVector, u: &ControlVector) -> StateVector;

    /// Next state and `(∂x⁺/∂x, ∂x⁺/∂u)`.
    fn linearize(
        &mut self,
        k: usize,
        x: &StateVector,
        u: &ControlVector,
    ) -> (StateVector, Matrix6<f64>, Matrix6x2<f64>);
}

/// `x⁺ = RK4(f + r̂)(x, u)`, the residual evaluated once per step at the
/// step's start state and held over the RK4 stages.
pub struct ComposedDynamics<'a> {
    quad: QuadParams,
    dt: f64,
    residual: Option<(&'a ResidualModel, ResidualScratch)>,
    t0: f64,
    per_step_time: bool,
}

impl<'a> ComposedDynamics<'a> {
    pub fn nominal(quad: QuadParams, dt: f64) -> Self {
        Self {
            quad,
            dt,
            residual: None,
            t0: 0.0,
            per_step_time: true,
        }
    }

    /// `t0` anchors the time embedding at horizon step 0.
    pub fn compose(
        quad: QuadParams,
        dt: f64,
        residual: Option<&'a ResidualModel>,
        t0: f64,
        per_step_time: bool,
    ) -> Self {
        Self {
            quad,
            dt,
            residual: residual.map(|m| (m, ResidualScratch::new(m))),
            t0,
            per_step_time,
        }
    }

    /// Absolute time at which the residual is queried for horizon step `k`.
    pub fn query_time(&self, k: usize) -> f64 {
        if self.per_step_time {
            self.t0 + k as f64 * self.dt
        } else {
            self.t0
        }
    }

    pub fn residual_at(&mut self, k: usize, x: &StateVector, u: &ControlVector) -> Accel3 {
        let t = self.query_time(k);
        match &mut self.residual {
            None => Accel3::zeros(),
            Some((model, scratch)) => model
                .predict_with(x, u, t, scratch)
                .unwrap_or_else(|_| Accel3::from_element(f64::NAN)),
        }
    }
}

impl DiscreteModel for ComposedDynamics<'_> {
    fn step(&mut self, k: usize, x: &StateVector, u: &ControlVector) -> StateVector {
        let r = self.residual_at(k, x, u);
        rk4_held(x, u, &self.quad, self.dt, &r)
    }

    fn linearize(
        &mut self,
        k: usize,
        x: &StateVector,
        u: &ControlVector,
    ) -> (StateVector, Matrix6<f64>, Matrix6x2<f64>) {
        let t = self.query_time(k);
        match &mut self.residual {
            None => {
                let lin = rk4_held_linearized(x, u, &self.quad, self.dt, &Accel3::zeros());
                (lin.next, lin.a, lin.b)
            }
            Some((model, scratch)) => match model.predict_with_jacobian(x, u, t, scratch) {
                Ok((r, jac)) => {
                    let lin = rk4_held_linearized(x, u, &self.quad, self.dt, &r);
                    let a = lin.a + lin.g * jac.fixed_columns::<6>(0);
                    let b = lin.b + lin.g * jac.fixed_columns::<2>(6);
                    (lin.next, a, b)
                }
                Err(_) => (
                    StateVector::from_element(f64::NAN),
                    Matrix6::from_element(f64::NAN),
                    Matrix6x2::from_element(f64::NAN),
                ),
            },
        }
    }
}

/// A time-invariant linear model `x⁺ = x̄⁺ + A(x − x̄) + B(u − ū)`.
#[derive(Debug, Clone)]
pub struct AffineModel {
    pub a: Matrix6<f64>,
    pub b: Matrix6x2<f64>,
    pub x_bar: StateVector,
    pub u_bar: ControlVector,
    pub x_next_bar: StateVector,
}

impl DiscreteModel for AffineModel {
    fn step(&mut self, _k: usize, x: &StateVector, u: &ControlVector) -> StateVector {
        self.x_next_bar + self.a * (x - self.x_bar) + self.b * (u - self.u_bar)
    }

    fn linearize(
        &mut self,
        k: usize,
        x: &StateVector,
        u: &ControlVector,
    ) -> (StateVector, Matrix6<f64>, Matrix6x2<f64>) {
        (self.step(k, x, u), self.a, self.b)
    }
}

/// Diagonal quadratic weights. The control penalty is on the deviation from
/// the reference (hover) thrust.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub q: [f64; 6],
    pub r: [f64; 2],
    pub qf: [f64; 6],
}

impl Default for CostWeights {
    fn default() -> Self {
        let q = [5.0, 0.1, 5.0, 0.1, 0.1, 0.1];
        Self {
            q,
            r: [0.1, 0.1],
            qf: q,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.q.iter().chain(&self.qf).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ConfigError::invalid(
                "mpc.weights.q",
                "state weights must be non-negative",
            ));
        }
        if self.r.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(ConfigError::invalid(
                "mpc.weights.r",
                "control weights must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Absolute cost decrease below which iteration stops.
    pub tolerance: f64,
    pub mu_init: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub line_search_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tolerance: 1e-8,
            mu_init: 1e-6,
            mu_min: 1e-9,
            mu_max: 1e6,
            line_search_steps: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub x0: StateVector,
    pub horizon: usize,
    /// `horizon + 1` reference states.
    pub x_ref: Vec<StateVector>,
    pub u_ref: ControlVector,
    pub weights: CostWeights,
    pub u_min: f64,
    pub u_max: f64,
}

impl OcpProblem {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon < 1 {
            return Err(ConfigError::invalid("mpc.horizon", "must be at least 1"));
        }
        if self.x_ref.len() != self.horizon + 1 {
            return Err(ConfigError::invalid("mpc.x_ref", "needs horizon + 1 states"));
        }
        if !(self.u_min < self.u_max) {
            return Err(ConfigError::invalid("quad.t_max", "empty control box"));
        }
        self.weights.validate()
    }

    fn clamp(&self, u: &ControlVector) -> ControlVector {
        u.map(|v| v.clamp(self.u_min, self.u_max))
    }

    pub fn stage_cost(&self, k: usize, x: &StateVector, u: &ControlVector) -> f64 {
        let dx = x - self.x_ref[k];
        let du = u - self.u_ref;
        let w = &self.weights;
        (0..6).map(|i| w.q[i] * dx[i] * dx[i]).sum::<f64>() + (0..2).map(|i| w.r[i] * du[i] * du[i]).sum::<f64>()
    }

    pub fn terminal_cost(&self, x: &StateVector) -> f64 {
        let dx = x - self.x_ref[self.horizon];
        (0..6).map(|i| self.weights.qf[i] * dx[i] * dx[i]).sum()
    }

    /// Open-loop rollout of `controls` under `model`.
    pub fn rollout<M: DiscreteModel + ?Sized>(
        &self,
        model: &mut M,
        controls: &[ControlVector],
    ) -> (Vec<StateVector>, f64) {
        let mut states = Vec::with_capacity(self.horizon + 1);
        states.push(self.x0);
        let mut cost = 0.0;
        for (k, u) in controls.iter().enumerate() {
            let x = states[k];
            cost += self.stage_cost(k, &x, u);
            states.push(model.step(k, &x, u));
        }
        cost += self.terminal_cost(&states[self.horizon]);
        (states, cost)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub controls: Vec<ControlVector>,
    /// `horizon + 1` states starting at `x0`.
    pub states: Vec<StateVector>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostic: Option<String>,
}

impl OcpSolution {
    /// Controls advanced by one step, the last one repeated.
    pub fn shifted_controls(&self) -> Vec<ControlVector> {
        let mut u: Vec<ControlVector> = self.controls.iter().skip(1).copied().collect();
        if let Some(last) = self.controls.last() {
            u.push(*last);
        }
        u
    }
}

/// Minimises `½ δᵀHδ + gᵀδ` over the box `lo ≤ δ ≤ hi` by enumerating the
/// nine faces of the 2-D box. Returns the minimiser and which coordinates are
/// pinned at a bound.
fn box_qp_2d(
    h: &Matrix2<f64>,
    g: &Vector2<f64>,
    lo: &Vector2<f64>,
    hi: &Vector2<f64>,
) -> Option<(Vector2<f64>, [bool; 2])> {
    #[derive(Clone, Copy)]
    enum Face {
        Free,
        Lo,
        Hi,
    }
    let objective = |d: &Vector2<f64>| 0.5 * d.dot(&(h * d)) + g.dot(d);
    let eps = 1e-12;
    let mut best: Option<(f64, Vector2<f64>, [bool; 2])> = None;
    for f0 in [Face::Free, Face::Lo, Face::Hi] {
        for f1 in [Face::Free, Face::Lo, Face::Hi] {
            let faces = [f0, f1];
            let mut d = Vector2::zeros();
            let mut pinned = [false; 2];
            for i in 0..2 {
                match faces[i] {
                    Face::Lo => {
                        d[i] = lo[i];
                        pinned[i] = true;
                    }
                    Face::Hi => {
                        d[i] = hi[i];
                        pinned[i] = true;
                    }
                    Face::Free => {}
                }
            }
            match (pinned[0], pinned[1]) {
                (false, false) => {
                    let chol = h.cholesky()?;
                    d = chol.solve(&(-g));
                }
                (true, false) => d[1] = -(g[1] + h[(1, 0)] * d[0]) / h[(1, 1)],
                (false, true) => d[0] = -(g[0] + h[(0, 1)] * d[1]) / h[(0, 0)],
                (true, true) => {}
            }
            let feasible = (0..2).all(|i| d[i] >= lo[i] - eps && d[i] <= hi[i] + eps);
            if !feasible {
                continue;
            }
            let d = Vector2::new(d[0].clamp(lo[0], hi[0]), d[1].clamp(lo[1], hi[1]));
            let val = objective(&d);
            if best.as_ref().is_none_or(|(b, _, _)| val < *b) {
                best = Some((val, d, pinned));
            }
        }
    }
    best.map(|(_, d, p)| (d, p))
}

struct BackwardPass {
    k: Vec<ControlVector>,
    gains: Vec<Matrix2x6<f64>>,
    /// Predicted decrease terms `(Σ kᵀQu, Σ ½ kᵀQuu k)`.
    expected: (f64, f64),
}

fn backward_pass(
    problem: &OcpProblem,
    states: &[StateVector],
    controls: &[ControlVector],
    jac: &[(Matrix6<f64>, Matrix6x2<f64>)],
    mu: f64,
) -> Option<BackwardPass> {
    let n = problem.horizon;
    let w = &problem.weights;
    let q = Matrix6::from_diagonal(&Vector6::from_row_slice(&w.q)) * 2.0;
    let r = Matrix2::from_diagonal(&Vector2::from_row_slice(&w.r)) * 2.0;
    let qf = Matrix6::from_diagonal(&Vector6::from_row_slice(&w.qf)) * 2.0;

    let mut vx = qf * (states[n] - problem.x_ref[n]);
    let mut vxx = qf;
    let mut ks = vec![ControlVector::zeros(); n];
    let mut gains = vec![Matrix2x6::zeros(); n];
    let (mut d1, mut d2) = (0.0, 0.0);
    for t in (0..n).rev() {
        let (a, b) = &jac[t];
        let lx = q * (states[t] - problem.x_ref[t]);
        let lu = r * (controls[t] - problem.u_ref);
        let qx = lx + a.transpose() * vx;
        let qu = lu + b.transpose() * vx;
        let bt_vxx = b.transpose() * vxx;
        let qxx = q + a.transpose() * vxx * a;
        let quu = r + bt_vxx * b;
        let qux = bt_vxx * a;
        let quu_reg = quu + Matrix2::identity() * mu;
        if !(quu_reg.iter().all(|v| v.is_finite()) && qux.iter().all(|v| v.is_finite())) {
            return None;
        }
        let lo = ControlVector::from_element(problem.u_min) - controls[t];
        let hi = ControlVector::from_element(problem.u_max) - controls[t];
        let (kff, pinned) = box_qp_2d(&quu_reg, &qu, &lo, &hi)?;
        let mut gain = Matrix2x6::zeros();
        match (pinned[0], pinned[1]) {
            (false, false) => {
                let inv = quu_reg.cholesky()?.inverse();
                gain = -inv * qux;
            }
            (false, true) => gain.set_row(0, &(-qux.row(0) / quu_reg[(0, 0)])),
            (true, false) => gain.set_row(1, &(-qux.row(1) / quu_reg[(1, 1)])),
            (true, true) => {}
        }
        d1 += kff.dot(&qu);
        d2 += 0.5 * kff.dot(&(quu * kff));
        let kt = gain.transpose();
        vx = qx + kt * quu * kff + kt * qu + qux.transpose() * kff;
        vxx = qxx + kt * quu * gain + kt * qux + qux.transpose() * gain;
        vxx = 0.5 * (vxx + vxx.transpose());
        ks[t] = kff;
        gains[t] = gain;
    }
    Some(BackwardPass {
        k: ks,
        gains,
        expected: (d1, d2),
    })
}

/// Solves the OCP from `warm_start` controls, or from the reference thrust
/// when none are given. Never returns a cost above the initial rollout's.
pub fn solve<M: DiscreteModel + ?Sized>(
    problem: &OcpProblem,
    model: &mut M,
    warm_start: Option<&[ControlVector]>,
    cfg: &SolverConfig,
) -> OcpSolution {
    let n = problem.horizon;
    let mut controls: Vec<ControlVector> = match warm_start {
        Some(ws) if ws.len() == n => ws.iter().map(|u| problem.clamp(u)).collect(),
        _ => vec![problem.clamp(&problem.u_ref); n],
    };
    let (mut states, mut cost) = problem.rollout(model, &controls);
    if !cost.is_finite() {
        return OcpSolution {
            controls,
            states,
            cost,
            iterations: 0,
            converged: false,
            diagnostic: Some("initial rollout produced a non-finite cost".into()),
        };
    }

    let mut mu = cfg.mu_init;
    let mut iterations = 0;
    let mut converged = false;
    let mut diagnostic = None;
    let mut jac = Vec::with_capacity(n);
    let mut relinearize = true;
    while iterations < cfg.max_iters {
        iterations += 1;
        if relinearize {
            jac.clear();
            for t in 0..n {
                let (_, a, b) = model.linearize(t, &states[t], &controls[t]);
                jac.push((a, b));
            }
        }
        let Some(bp) = backward_pass(problem, &states, &controls, &jac, mu) else {
            mu = (mu * 10.0).max(cfg.mu_min);
            relinearize = false;
            if mu > cfg.mu_max {
                diagnostic = Some("backward pass failed at maximum regularisation".into());
                break;
            }
            continue;
        };
        if -(bp.expected.0 + bp.expected.1) < cfg.tolerance {
            converged = true;
            break;
        }

        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..cfg.line_search_steps {
            let mut new_states = Vec::with_capacity(n + 1);
            let mut new_controls = Vec::with_capacity(n);
            new_states.push(problem.x0);
            let mut new_cost = 0.0;
            for t in 0..n {
                let x = new_states[t];
                let u = problem.clamp(&(controls[t] + bp.k[t] * alpha + bp.gains[t] * (x - states[t])));
                new_cost += problem.stage_cost(t, &x, &u);
                new_states.push(model.step(t, &x, &u));
                new_controls.push(u);
            }
            new_cost += problem.terminal_cost(&new_states[n]);
            if new_cost.is_finite() && new_cost < cost {
                accepted = Some((new_states, new_controls, new_cost));
                break;
            }
            alpha *= 0.5;
        }

        match accepted {
            Some((s, u, c)) => {
                let decrease = cost - c;
                states = s;
                controls = u;
                cost = c;
                mu = (mu / 10.0).max(cfg.mu_min);
                relinearize = true;
                if decrease < cfg.tolerance {
                    converged = true;
                    break;
                }
            }
            None => {
                mu *= 10.0;
                relinearize = false;
                if mu > cfg.mu_max {
                    // no descent direction left at any regularisation
                    converged = true;
                    break;
                }
            }
        }
    }
    OcpSolution {
        controls,
        states,
        cost,
        iterations,
        converged,
        diagnostic,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub weights: CostWeights,
    pub solver: SolverConfig,
    /// Query the residual at `t0 + k·dt` along the horizon rather than at `t0`.
    pub per_step_time_embedding: bool,
    pub warm_start: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            weights: CostWeights::default(),
            solver: SolverConfig::default(),
            per_step_time_embedding: true,
            warm_start: true,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon < 1 {
            return Err(ConfigError::invalid("mpc.horizon", "must be at least 1"));
        }
        if self.solver.max_iters < 1 {
            return Err(ConfigError::invalid("mpc.solver.max_iters", "must be at least 1"));
        }
        self.weights.validate()
    }
}

/// Outcome of one receding-horizon step.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcStep {
    pub control: Control,
    pub iterations: usize,
    pub cost: f64,
    pub converged: bool,
    /// The solver failed and the previous control was held.
    pub held_last: bool,
}

/// Receding-horizon controller state: configuration and the last solution
/// for warm starting.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub cfg: MpcConfig,
    quad: QuadParams,
    dt: f64,
    previous: Option<OcpSolution>,
    last_applied: Control,
}

impl MpcController {
    pub fn new(cfg: MpcConfig, quad: QuadParams, dt: f64) -> Self {
        Self {
            cfg,
            quad,
            dt,
            previous: None,
            last_applied: quad.hover_control(),
        }
    }

    pub fn previous_solution(&self) -> Option<&OcpSolution> {
        self.previous.as_ref()
    }

    pub fn problem(&self, x_now: &StateVector, x_ref: Vec<StateVector>) -> OcpProblem {
        OcpProblem {
            x0: *x_now,
            horizon: self.cfg.horizon,
            x_ref,
            u_ref: self.quad.hover_control().to_vector(),
            weights: self.cfg.weights.clone(),
            u_min: 0.0,
            u_max: self.quad.t_max,
        }
    }

    /// Solves from `x_now` against `x_ref` (`horizon + 1` states starting at
    /// `t_now`) and returns the first control.
    pub fn step(
        &mut self,
        x_now: &StateVector,
        t_now: f64,
        x_ref: Vec<StateVector>,
        residual: Option<&ResidualModel>,
    ) -> MpcStep {
        let problem = self.problem(x_now, x_ref);
        let mut model =
            ComposedDynamics::compose(self.quad, self.dt, residual, t_now, self.cfg.per_step_time_embedding);
        let warm = if self.cfg.warm_start {
            self.previous.as_ref().map(|s| s.shifted_controls())
        } else {
            None
        };
        let sol = solve(&problem, &mut model, warm.as_deref(), &self.cfg.solver);
        if sol.diagnostic.is_some() || !sol.cost.is_finite() {
            self.previous = None;
            return MpcStep {
                control: self.last_applied,
                iterations: sol.iterations,
                cost: sol.cost,
                converged: false,
                held_last: true,
            };
        }
        let control = Control::from_vector(&sol.controls[0]).clamped(self.quad.t_max);
        self.last_applied = control;
        let step = MpcStep {
            control,
            iterations: sol.iterations,
            cost: sol.cost,
            converged: sol.converged,
            held_last: false,
        };
        self.previous = Some(sol);
        step
    }
}
