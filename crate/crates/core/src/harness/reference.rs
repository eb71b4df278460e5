use std::f64::consts::PI;

use crate::error::ConfigError;
use crate::plant::{State, StateVector};

use super::config::{ReferenceSection, Task};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceKind {
    /// Fixed hover point.
    Hold,
    Circle,
    /// Lissajous `(sin ωt, ½ sin 2ωt)`.
    Fig8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceTrajectory {
    pub kind: ReferenceKind,
    pub center: (f64, f64),
    pub radius: f64,
    pub period: f64,
    pub phase: f64,
}

impl ReferenceTrajectory {
    /// Hover at `[0, 0, 1, 0, 0, 0]`.
    pub fn stabilize() -> Self {
        Self {
            kind: ReferenceKind::Hold,
            center: (0.0, 1.0),
            radius: 0.0,
            period: 1.0,
            phase: 0.0,
        }
    }

    pub fn for_task(task: Task, r: &ReferenceSection) -> Self {
        let center = (r.center_x, r.center_z);
        match task {
            Task::Stabilize => Self::stabilize(),
            Task::TrackCircle => Self {
                kind: ReferenceKind::Circle,
                center,
                radius: r.circle_radius,
                period: r.circle_period,
                phase: r.phase,
            },
            Task::TrackFig8 => Self {
                kind: ReferenceKind::Fig8,
                center,
                radius: r.fig8_radius,
                period: r.fig8_period,
                phase: r.phase,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.kind != ReferenceKind::Hold && !(self.radius > 0.0 && self.period > 0.0) {
            return Err(ConfigError::invalid(
                "reference",
                "tracking references need positive radius and period",
            ));
        }
        Ok(())
    }

    /// Full reference state at `t`; attitude references are zero.
    pub fn state_at(&self, t: f64) -> StateVector {
        let (cx, cz) = self.center;
        let w = 2.0 * PI / self.period;
        let a = w * t + self.phase;
        let r = self.radius;
        let (x, vx, z, vz) = match self.kind {
            ReferenceKind::Hold => (cx, 0.0, cz, 0.0),
            ReferenceKind::Circle => (cx + r * a.cos(), -r * w * a.sin(), cz + r * a.sin(), r * w * a.cos()),
            ReferenceKind::Fig8 => (
                cx + r * a.sin(),
                r * w * a.cos(),
                cz + 0.5 * r * (2.0 * a).sin(),
                r * w * (2.0 * a).cos(),
            ),
        };
        State {
            x,
            vx,
            z,
            vz,
            phi: 0.0,
            phidot: 0.0,
        }
        .to_vector()
    }

    /// `(x_ref, z_ref, full reference state)`.
    pub fn reference_at(&self, t: f64) -> (f64, f64, StateVector) {
        let s = self.state_at(t);
        (s[0], s[2], s)
    }

    /// `n + 1` reference states at `t0, t0 + dt, …`.
    pub fn window(&self, t0: f64, dt: f64, n: usize) -> Vec<StateVector> {
        (0..=n).map(|k| self.state_at(t0 + k as f64 * dt)).collect()
    }
}
