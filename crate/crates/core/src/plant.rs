//! Planar quadrotor dynamics, acceleration-level disturbances and the fixed-step
//! RK4 integrator shared by the simulated plant and the controller's nominal model.
//!
//! State ordering everywhere is `[x, vx, z, vz, phi, phidot]`, controls are
//! `[t1, t2]` (left and right rotor thrust).

use nalgebra::{Matrix6, Matrix6x2, Matrix6x3, Vector2, Vector3, Vector6};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, SimulationFault};

pub type StateVector = Vector6<f64>;
pub type ControlVector = Vector2<f64>;
/// Additive acceleration on `(ẍ, z̈, φ̈)`.
pub type Accel3 = Vector3<f64>;
pub type StateDerivative = Vector6<f64>;

/// Rows of the state derivative that carry accelerations.
pub const ACCEL_ROWS: [usize; 3] = [1, 3, 5];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub vx: f64,
    pub z: f64,
    pub vz: f64,
    pub phi: f64,
    pub phidot: f64,
}

impl State {
    pub fn hover_at(x: f64, z: f64) -> Self {
        Self {
            x,
            z,
            ..Self::default()
        }
    }

    pub fn to_vector(&self) -> StateVector {
        Vector6::new(self.x, self.vx, self.z, self.vz, self.phi, self.phidot)
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            x: v[0],
            vx: v[1],
            z: v[2],
            vz: v[3],
            phi: v[4],
            phidot: v[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub t1: f64,
    pub t2: f64,
}

impl Control {
    pub fn new(t1: f64, t2: f64) -> Self {
        Self { t1, t2 }
    }

    pub fn to_vector(&self) -> ControlVector {
        Vector2::new(self.t1, self.t2)
    }

    pub fn from_vector(v: &ControlVector) -> Self {
        Self { t1: v[0], t2: v[1] }
    }

    pub fn clamped(&self, t_max: f64) -> Self {
        Self {
            t1: self.t1.clamp(0.0, t_max),
            t2: self.t2.clamp(0.0, t_max),
        }
    }
}

/// Physical constants of the vehicle. Defaults are Crazyflie-class values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadParams {
    pub mass: f64,
    pub iyy: f64,
    pub arm_d: f64,
    pub gravity: f64,
    pub t_max: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: 0.027,
            iyy: 1.4e-5,
            arm_d: 0.0397,
            gravity: 9.81,
            t_max: 0.15,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("quad.mass", self.mass),
            ("quad.iyy", self.iyy),
            ("quad.arm_d", self.arm_d),
            ("quad.gravity", self.gravity),
            ("quad.t_max", self.t_max),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(name, "must be strictly positive"));
            }
        }
        if self.hover_thrust() > self.t_max {
            return Err(ConfigError::invalid(
                "quad.t_max",
                "per-rotor bound is below hover thrust",
            ));
        }
        Ok(())
    }

    /// Per-rotor thrust that holds the vehicle level and still.
    pub fn hover_thrust(&self) -> f64 {
        0.5 * self.mass * self.gravity
    }

    pub fn hover_control(&self) -> Control {
        let h = self.hover_thrust();
        Control::new(h, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    #[default]
    None,
    LinearDrift,
    Periodic,
    Polynomial,
    LinearWithStep,
}

impl DisturbanceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::LinearDrift => "linear_drift",
            Self::Periodic => "periodic",
            Self::Polynomial => "polynomial",
            Self::LinearWithStep => "linear_with_step",
        }
    }
}

/// Time-varying horizontal acceleration `a_w(t)` injected into `ẍ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub kind: DisturbanceKind,
    /// Drift rate, m/s² per second.
    pub kappa: f64,
    pub amplitude: f64,
    pub period: f64,
    /// `c_k` in `Σ c_k t^k`, lowest order first.
    pub poly_coeffs: Vec<f64>,
    pub step_time: f64,
    pub step_offset: f64,
    /// Standard deviation of the additive Gaussian term, m/s².
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            kind: DisturbanceKind::None,
            kappa: 5e-4,
            amplitude: 0.003,
            period: 2.0,
            poly_coeffs: vec![0.0, 2e-4, 5e-5],
            step_time: 10.0,
            step_offset: 0.002,
            noise_sigma: 1e-4,
            seed: 0,
        }
    }
}

impl DisturbanceSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn periodic(amplitude: f64, period: f64) -> Self {
        Self {
            kind: DisturbanceKind::Periodic,
            amplitude,
            period,
            ..Self::default()
        }
    }

    pub fn linear_drift(kappa: f64) -> Self {
        Self {
            kind: DisturbanceKind::LinearDrift,
            kappa,
            ..Self::default()
        }
    }

    /// A constant acceleration, expressed as a degree-0 polynomial.
    pub fn constant(a: f64) -> Self {
        Self {
            kind: DisturbanceKind::Polynomial,
            poly_coeffs: vec![a],
            ..Self::default()
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(ConfigError::invalid(
                "disturbance.noise_sigma",
                "must be finite and non-negative",
            ));
        }
        if self.kind == DisturbanceKind::Periodic && !(self.period > 0.0) {
            return Err(ConfigError::invalid(
                "disturbance.period",
                "must be positive for periodic disturbances",
            ));
        }
        let scalars = [
            ("disturbance.kappa", self.kappa),
            ("disturbance.amplitude", self.amplitude),
            ("disturbance.step_time", self.step_time),
            ("disturbance.step_offset", self.step_offset),
        ];
        for (name, v) in scalars {
            if !v.is_finite() {
                return Err(ConfigError::invalid(name, "must be finite"));
            }
        }
        if self.poly_coeffs.iter().any(|c| !c.is_finite()) {
            return Err(ConfigError::invalid("disturbance.poly_coeffs", "must be finite"));
        }
        Ok(())
    }

    /// Noise-free part of the disturbance at time `t`.
    pub fn deterministic_accel(&self, t: f64) -> f64 {
        match self.kind {
            DisturbanceKind::None => 0.0,
            DisturbanceKind::LinearDrift => self.kappa * t,
            DisturbanceKind::Periodic => self.amplitude * (2.0 * std::f64::consts::PI * t / self.period).sin(),
            DisturbanceKind::Polynomial => {
                // Horner, highest order first.
                self.poly_coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
            }
            DisturbanceKind::LinearWithStep => {
                let step = if t >= self.step_time { self.step_offset } else { 0.0 };
                self.kappa * t + step
            }
        }
    }

    /// Draws one sample of `ε`. Consumes no randomness when the noise is off.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.kind == DisturbanceKind::None || self.noise_sigma == 0.0 {
            return 0.0;
        }
        Normal::new(0.0, self.noise_sigma)
            .expect("noise_sigma validated non-negative")
            .sample(rng)
    }
}

/// `a_w(t) = deterministic(t) + ε`.
pub fn disturbance_accel<R: Rng + ?Sized>(spec: &DisturbanceSpec, t: f64, rng: &mut R) -> f64 {
    spec.deterministic_accel(t) + spec.sample_noise(rng)
}

#[inline]
fn derivative_with_forcing(x: &StateVector, u: &ControlVector, p: &QuadParams, forcing: &Accel3) -> StateDerivative {
    let (s, c) = x[4].sin_cos();
    let total = u[0] + u[1];
    Vector6::new(
        x[1],
        s * total / p.mass + forcing[0],
        x[3],
        c * total / p.mass - p.gravity + forcing[1],
        x[5],
        (u[1] - u[0]) * p.arm_d / p.iyy + forcing[2],
    )
}

/// Continuous-time nominal dynamics `ẋ = f(x, u)`.
pub fn continuous_derivative(s: &State, u: &Control, p: &QuadParams) -> StateDerivative {
    derivative_with_forcing(&s.to_vector(), &u.to_vector(), p, &Accel3::zeros())
}

/// Classical RK4 step of `f(x, u) + E·a(τ)` where `a(τ)` is queried at the
/// stage offsets `0, dt/2, dt/2, dt`.
#[inline]
pub(crate) fn rk4_forced(
    x: &StateVector,
    u: &ControlVector,
    p: &QuadParams,
    dt: f64,
    mut forcing_at: impl FnMut(f64) -> Accel3,
) -> StateVector {
    let half = 0.5 * dt;
    let f_mid = forcing_at(half);
    let k1 = derivative_with_forcing(x, u, p, &forcing_at(0.0));
    let k2 = derivative_with_forcing(&(x + k1 * half), u, p, &f_mid);
    let k3 = derivative_with_forcing(&(x + k2 * half), u, p, &f_mid);
    let k4 = derivative_with_forcing(&(x + k3 * dt), u, p, &forcing_at(dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// RK4 step with a forcing held constant over the step (zero-order hold).
#[inline]
pub(crate) fn rk4_held(x: &StateVector, u: &ControlVector, p: &QuadParams, dt: f64, forcing: &Accel3) -> StateVector {
    rk4_forced(x, u, p, dt, |_| *forcing)
}

/// One plant step: nominal dynamics plus the horizontal disturbance.
///
/// The deterministic part of the disturbance follows the RK4 stage times; the
/// noise term is drawn once and held across all four stages.
pub fn rk4_step<R: Rng + ?Sized>(
    s: &State,
    u: &Control,
    p: &QuadParams,
    spec: &DisturbanceSpec,
    t: f64,
    dt: f64,
    rng: &mut R,
) -> Result<State, SimulationFault> {
    let noise = spec.sample_noise(rng);
    rk4_step_with_noise(s, u, p, spec, t, dt, noise)
}

/// [`rk4_step`] with the noise sample supplied by the caller.
pub fn rk4_step_with_noise(
    s: &State,
    u: &Control,
    p: &QuadParams,
    spec: &DisturbanceSpec,
    t: f64,
    dt: f64,
    noise: f64,
) -> Result<State, SimulationFault> {
    debug_assert!(dt > 0.0);
    let next = rk4_forced(&s.to_vector(), &u.to_vector(), p, dt, |offset| {
        Accel3::new(spec.deterministic_accel(t + offset) + noise, 0.0, 0.0)
    });
    let next = State::from_vector(&next);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(SimulationFault::NonFiniteState { time: t + dt })
    }
}

/// Nominal discrete model `x⁺ = RK4(f)(x, u)`, with no disturbance term.
pub fn nominal_discrete(s: &State, u: &Control, p: &QuadParams, dt: f64) -> State {
    State::from_vector(&rk4_forced(&s.to_vector(), &u.to_vector(), p, dt, |_| Accel3::zeros()))
}

#[inline]
fn derivative_jacobians(x: &StateVector, u: &ControlVector, p: &QuadParams) -> (Matrix6<f64>, Matrix6x2<f64>) {
    let (s, c) = x[4].sin_cos();
    let total = u[0] + u[1];
    let mut fx = Matrix6::zeros();
    fx[(0, 1)] = 1.0;
    fx[(1, 4)] = c * total / p.mass;
    fx[(2, 3)] = 1.0;
    fx[(3, 4)] = -s * total / p.mass;
    fx[(4, 5)] = 1.0;
    let mut fu = Matrix6x2::zeros();
    fu[(1, 0)] = s / p.mass;
    fu[(1, 1)] = s / p.mass;
    fu[(3, 0)] = c / p.mass;
    fu[(3, 1)] = c / p.mass;
    let torque = p.arm_d / p.iyy;
    fu[(5, 0)] = -torque;
    fu[(5, 1)] = torque;
    (fx, fu)
}

fn accel_selector() -> Matrix6x3<f64> {
    let mut e = Matrix6x3::zeros();
    for (col, &row) in ACCEL_ROWS.iter().enumerate() {
        e[(row, col)] = 1.0;
    }
    e
}

/// A held-forcing RK4 step together with its exact sensitivities.
#[derive(Debug, Clone, Copy)]
pub struct Rk4Linearization {
    pub next: StateVector,
    /// `∂x⁺/∂x`
    pub a: Matrix6<f64>,
    /// `∂x⁺/∂u`
    pub b: Matrix6x2<f64>,
    /// `∂x⁺/∂forcing`
    pub g: Matrix6x3<f64>,
}

/// Forward sensitivity propagation through the four RK4 stages.
pub(crate) fn rk4_held_linearized(
    x: &StateVector,
    u: &ControlVector,
    p: &QuadParams,
    dt: f64,
    forcing: &Accel3,
) -> Rk4Linearization {
    let half = 0.5 * dt;
    let e = accel_selector();
    let ident = Matrix6::<f64>::identity();

    let k1 = derivative_with_forcing(x, u, p, forcing);
    let (fx1, fu1) = derivative_jacobians(x, u, p);
    let k1x = fx1;
    let k1u = fu1;
    let k1a = e;

    let x2 = x + k1 * half;
    let k2 = derivative_with_forcing(&x2, u, p, forcing);
    let (fx2, fu2) = derivative_jacobians(&x2, u, p);
    let k2x = fx2 * (ident + k1x * half);
    let k2u = fx2 * (k1u * half) + fu2;
    let k2a = fx2 * (k1a * half) + e;

    let x3 = x + k2 * half;
    let k3 = derivative_with_forcing(&x3, u, p, forcing);
    let (fx3, fu3) = derivative_jacobians(&x3, u, p);
    let k3x = fx3 * (ident + k2x * half);
    let k3u = fx3 * (k2u * half) + fu3;
    let k3a = fx3 * (k2a * half) + e;

    let x4 = x + k3 * dt;
    let k4 = derivative_with_forcing(&x4, u, p, forcing);
    let (fx4, fu4) = derivative_jacobians(&x4, u, p);
    let k4x = fx4 * (ident + k3x * dt);
    let k4u = fx4 * (k3u * dt) + fu4;
    let k4a = fx4 * (k3a * dt) + e;

    let w = dt / 6.0;
    Rk4Linearization {
        next: x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * w,
        a: ident + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * w,
        b: (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * w,
        g: (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * w,
    }
}

/// Jacobians `(A, B)` of [`nominal_discrete`] with respect to state and control.
pub fn nominal_jacobians(s: &State, u: &Control, p: &QuadParams, dt: f64) -> (Matrix6<f64>, Matrix6x2<f64>) {
    let lin = rk4_held_linearized(&s.to_vector(), &u.to_vector(), p, dt, &Accel3::zeros());
    (lin.a, lin.b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hover() -> State {
        State::hover_at(0.0, 1.0)
    }

    #[test]
    fn hover_derivative_is_zero() {
        let p = QuadParams::default();
        let d = continuous_derivative(&hover(), &p.hover_control(), &p);
        assert!(d.iter().all(|v| v.abs() < 1e-15), "{d:?}");
    }

    #[test]
    fn free_fall_derivative() {
        let p = QuadParams::default();
        let d = continuous_derivative(&hover(), &Control::new(0.0, 0.0), &p);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[3], -p.gravity);
        assert_eq!(d[5], 0.0);
    }

    #[test]
    fn sideways_thrust_derivative() {
        // sin(π/2)·0.2/0.027 by hand = 7.407407...
        let p = QuadParams::default();
        let s = State {
            phi: std::f64::consts::FRAC_PI_2,
            ..hover()
        };
        let d = continuous_derivative(&s, &Control::new(0.1, 0.1), &p);
        assert!((d[1] - 7.407_407_407_407_407).abs() < 1e-12);
        // cos(π/2) is 6.1e-17, not exactly zero
        assert!((d[3] + p.gravity).abs() < 1e-12);
        assert_eq!(d[5], 0.0);
    }

    #[test]
    fn disturbance_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let none = DisturbanceSpec::none();
        assert_eq!(disturbance_accel(&none, 3.7, &mut rng), 0.0);

        let periodic = DisturbanceSpec::periodic(0.003, 2.0).with_noise(0.0);
        assert!((disturbance_accel(&periodic, 0.5, &mut rng) - 0.003).abs() < 1e-15);

        let drift = DisturbanceSpec::linear_drift(0.001).with_noise(0.0);
        assert!((disturbance_accel(&drift, 10.0, &mut rng) - 0.01).abs() < 1e-15);

        let poly = DisturbanceSpec {
            kind: DisturbanceKind::Polynomial,
            poly_coeffs: vec![1.0, 2.0, 3.0],
            noise_sigma: 0.0,
            ..Default::default()
        };
        assert_eq!(poly.deterministic_accel(2.0), 1.0 + 4.0 + 12.0);

        let step = DisturbanceSpec {
            kind: DisturbanceKind::LinearWithStep,
            kappa: 0.001,
            step_time: 5.0,
            step_offset: 0.5,
            noise_sigma: 0.0,
            ..Default::default()
        };
        assert!((step.deterministic_accel(4.999) - 0.004999).abs() < 1e-15);
        assert!((step.deterministic_accel(5.0) - 0.505).abs() < 1e-15);
    }

    #[test]
    fn noise_has_requested_spread() {
        let spec = DisturbanceSpec::periodic(0.0, 2.0).with_noise(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let samples: Vec<f64> = (0..n).map(|_| spec.sample_noise(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02);
        assert!((var.sqrt() - 0.5).abs() < 0.02);
    }

    #[test]
    fn hover_is_fixed_point() {
        let p = QuadParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let next = rk4_step(
            &hover(),
            &p.hover_control(),
            &p,
            &DisturbanceSpec::none(),
            0.0,
            0.02,
            &mut rng,
        )
        .unwrap();
        let diff = next.to_vector() - hover().to_vector();
        assert!(diff.amax() < 1e-12);
    }

    #[test]
    fn free_fall_matches_ballistic() {
        let p = QuadParams::default();
        let mut s = hover();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..5 {
            s = rk4_step(
                &s,
                &Control::new(0.0, 0.0),
                &p,
                &DisturbanceSpec::none(),
                i as f64 * 0.02,
                0.02,
                &mut rng,
            )
            .unwrap();
        }
        let exact = 1.0 - 0.5 * p.gravity * 0.1f64.powi(2);
        assert!((s.z - exact).abs() < 1e-9);
        assert!((s.vz + p.gravity * 0.1).abs() < 1e-9);
    }

    #[test]
    fn noisy_step_is_deterministic_for_a_seed() {
        let p = QuadParams::default();
        let spec = DisturbanceSpec::periodic(0.003, 2.0).with_noise(1e-3);
        let s = State {
            vx: 0.1,
            phi: 0.05,
            ..hover()
        };
        let u = Control::new(0.12, 0.14);
        let a = rk4_step(&s, &u, &p, &spec, 0.3, 0.02, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = rk4_step(&s, &u, &p, &spec, 0.3, 0.02, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plant_without_disturbance_equals_nominal_bitwise() {
        let p = QuadParams::default();
        let s = State {
            x: 0.3,
            vx: -0.2,
            z: 0.8,
            vz: 0.1,
            phi: 0.2,
            phidot: -0.4,
        };
        let u = Control::new(0.11, 0.14);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plant = rk4_step(&s, &u, &p, &DisturbanceSpec::none(), 1.0, 0.02, &mut rng).unwrap();
        assert_eq!(plant, nominal_discrete(&s, &u, &p, 0.02));
    }

    #[test]
    fn non_finite_state_is_a_fault() {
        let p = QuadParams::default();
        let s = State {
            vx: f64::NAN,
            ..hover()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = rk4_step(
            &s,
            &p.hover_control(),
            &p,
            &DisturbanceSpec::none(),
            0.0,
            0.02,
            &mut rng,
        );
        assert!(err.is_err());
    }

    #[test]
    fn hover_thrust_lifts() {
        let p = QuadParams::default();
        let (_, b) = nominal_jacobians(&hover(), &p.hover_control(), &p, 0.02);
        assert!(b[(3, 0)] > 0.0);
        assert!(b[(3, 1)] > 0.0);
        // At φ = 0 collective thrust has no horizontal effect: only the
        // differential part tilts the vehicle, so the two columns cancel.
        assert!((b[(1, 0)] + b[(1, 1)]).abs() < 1e-12);
        let (_, fu) = derivative_jacobians(&hover().to_vector(), &p.hover_control().to_vector(), &p);
        assert_eq!(fu[(1, 0)], 0.0);
        assert_eq!(fu[(1, 1)], 0.0);
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let p = QuadParams::default();
        let s = State {
            x: 0.1,
            vx: 0.3,
            z: 1.0,
            vz: -0.2,
            phi: 0.6,
            phidot: 2.0,
        };
        let u = Control::new(0.10, 0.15);
        let reference = |h: f64| {
            let n = 64;
            let mut x = s;
            for _ in 0..n {
                x = nominal_discrete(&x, &u, &p, h / n as f64);
            }
            x.to_vector()
        };
        let h = 0.08;
        let e1 = (nominal_discrete(&s, &u, &p, h).to_vector() - reference(h)).norm();
        let mut half = s;
        for _ in 0..2 {
            half = nominal_discrete(&half, &u, &p, h / 2.0);
        }
        let e2 = (half.to_vector() - reference(h)).norm();
        // global error over a fixed interval: order 4 → ratio 16
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn jacobians_match_central_differences() {
        use rand::Rng;
        let p = QuadParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dt = 0.02;
        let h = 1e-6;
        for _ in 0..100 {
            let s = State::from_vector(&StateVector::from_fn(|_, _| rng.gen_range(-0.5..0.5)));
            let u = Control::new(rng.gen_range(0.0..p.t_max), rng.gen_range(0.0..p.t_max));
            let (a, b) = nominal_jacobians(&s, &u, &p, dt);
            let xv = s.to_vector();
            let uv = u.to_vector();
            for j in 0..6 {
                let mut xp = xv;
                let mut xm = xv;
                xp[j] += h;
                xm[j] -= h;
                let col = (nominal_discrete(&State::from_vector(&xp), &u, &p, dt).to_vector()
                    - nominal_discrete(&State::from_vector(&xm), &u, &p, dt).to_vector())
                    / (2.0 * h);
                assert!((col - a.column(j)).amax() < 1e-5, "A column {j}");
            }
            for j in 0..2 {
                let mut up = uv;
                let mut um = uv;
                up[j] += h;
                um[j] -= h;
                let col = (nominal_discrete(&s, &Control::from_vector(&up), &p, dt).to_vector()
                    - nominal_discrete(&s, &Control::from_vector(&um), &p, dt).to_vector())
                    / (2.0 * h);
                assert!((col - b.column(j)).amax() < 1e-5, "B column {j}");
            }
        }
    }

    proptest! {
        #[test]
        fn hover_is_fixed_point_anywhere(x in -10.0..10.0f64, z in -10.0..10.0f64) {
            let p = QuadParams::default();
            let s = State::hover_at(x, z);
            let next = nominal_discrete(&s, &p.hover_control(), &p, 0.02);
            prop_assert!((next.to_vector() - s.to_vector()).amax() < 1e-12);
        }

        #[test]
        fn noiseless_disturbance_is_a_function_of_time(
            t in 0.0..100.0f64,
            amp in 0.0..0.01f64,
            period in 0.5..10.0f64,
            kappa in 0.0..1e-3f64,
            seed_a in any::<u64>(),
            seed_b in any::<u64>(),
        ) {
            for spec in [DisturbanceSpec::periodic(amp, period), DisturbanceSpec::linear_drift(kappa)] {
                let spec = spec.with_noise(0.0);
                let a = disturbance_accel(&spec, t, &mut ChaCha8Rng::seed_from_u64(seed_a));
                let b = disturbance_accel(&spec, t, &mut ChaCha8Rng::seed_from_u64(seed_b));
                prop_assert_eq!(a, b);
                prop_assert_eq!(a, spec.deterministic_accel(t));
            }
        }

        #[test]
        fn undisturbed_plant_is_nominal(
            v in proptest::array::uniform6(-1.0..1.0f64),
            t1 in 0.0..0.15f64,
            t2 in 0.0..0.15f64,
            t in 0.0..50.0f64,
        ) {
            let p = QuadParams::default();
            let s = State::from_vector(&StateVector::from_row_slice(&v));
            let u = Control::new(t1, t2);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let plant = rk4_step(&s, &u, &p, &DisturbanceSpec::none(), t, 0.02, &mut rng).unwrap();
            prop_assert_eq!(plant, nominal_discrete(&s, &u, &p, 0.02));
        }
    }
}
