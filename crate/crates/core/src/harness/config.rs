use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error};
use crate::learner::{LearnerConfig, UpdateSchedule};
use crate::mpc::MpcConfig;
use crate::plant::{DisturbanceKind, DisturbanceSpec, QuadParams};
use crate::residual_net::FeatureScaling;
use crate::time_embedding::TimeEmbeddingSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Stabilize,
    TrackCircle,
    TrackFig8,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Stabilize, Task::TrackCircle, Task::TrackFig8];

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Stabilize => "stabilize",
            Task::TrackCircle => "track_circle",
            Task::TrackFig8 => "track_fig8",
        }
    }
}

/// The five controllers compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NominalMpc,
    NeuralMpc,
    T2sNoTimeEmb,
    T2sNoTwoScale,
    T2s,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::NominalMpc,
        Method::NeuralMpc,
        Method::T2sNoTimeEmb,
        Method::T2sNoTwoScale,
        Method::T2s,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::NominalMpc => "nominal_mpc",
            Method::NeuralMpc => "neural_mpc",
            Method::T2sNoTimeEmb => "t2s_no_time_emb",
            Method::T2sNoTwoScale => "t2s_no_two_scale",
            Method::T2s => "t2s",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::NominalMpc => "Nominal MPC",
            Method::NeuralMpc => "Neural MPC",
            Method::T2sNoTimeEmb => "T2S-MPC w/o time emb",
            Method::T2sNoTwoScale => "T2S-MPC w/o two scales",
            Method::T2s => "T2S-MPC",
        }
    }

    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        Self::ALL.into_iter().find(|m| m.as_str() == name).ok_or_else(|| {
            let known: Vec<&str> = Self::ALL.iter().map(|m| m.as_str()).collect();
            ConfigError::invalid(
                "experiment.method",
                format!("unknown method `{name}` (expected one of {})", known.join(", ")),
            )
        })
    }

    pub fn learns(&self) -> bool {
        *self != Method::NominalMpc
    }

    pub fn uses_time_embedding(&self) -> bool {
        matches!(self, Method::T2sNoTwoScale | Method::T2s)
    }

    pub fn schedule(&self) -> UpdateSchedule {
        match self {
            Method::T2sNoTimeEmb | Method::T2s => UpdateSchedule::TwoTimescale,
            _ => UpdateSchedule::SingleScale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub task: Task,
    pub method: Method,
    /// Simulated seconds per run.
    pub duration: f64,
    /// Hz.
    pub control_rate: f64,
    pub n_runs: usize,
    pub base_seed: u64,
    /// Std of the Gaussian initial position perturbation, m.
    pub init_pos_std: f64,
    /// Std of the Gaussian initial velocity perturbation, m/s.
    pub init_vel_std: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            task: Task::Stabilize,
            method: Method::T2s,
            duration: 20.0,
            control_rate: 50.0,
            n_runs: 10,
            base_seed: 0,
            init_pos_std: 0.02,
            init_vel_std: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub embedding_dim: usize,
    /// Mixed with the run seed to initialise the hidden layers.
    pub init_seed: u64,
    pub scaling: FeatureScaling,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            embedding_dim: TimeEmbeddingSpec::default().dim(),
            init_seed: 0,
            scaling: FeatureScaling::default(),
        }
    }
}

/// Geometry of the tracking references; ignored for stabilisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    pub center_x: f64,
    pub center_z: f64,
    pub circle_radius: f64,
    pub circle_period: f64,
    pub fig8_radius: f64,
    pub fig8_period: f64,
    pub phase: f64,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self {
            center_x: 0.0,
            center_z: 1.0,
            circle_radius: 0.3,
            circle_period: 6.0,
            fig8_radius: 0.3,
            fig8_period: 8.0,
            phase: 0.0,
        }
    }
}

/// Cells of a suite: every method × task × disturbance combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub methods: Vec<Method>,
    pub tasks: Vec<Task>,
    pub disturbances: Vec<DisturbanceSpec>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self::disturbance_ablation()
    }
}

impl GridSection {
    /// Stabilisation under the periodic magnitude × period grid and the two
    /// extra drift forms.
    pub fn disturbance_ablation() -> Self {
        let mut disturbances = Vec::new();
        for amplitude in [0.001, 0.003, 0.005] {
            for period in [2.0, 4.0] {
                disturbances.push(DisturbanceSpec::periodic(amplitude, period));
            }
        }
        disturbances.push(DisturbanceSpec {
            kind: DisturbanceKind::Polynomial,
            ..DisturbanceSpec::default()
        });
        disturbances.push(DisturbanceSpec {
            kind: DisturbanceKind::LinearWithStep,
            ..DisturbanceSpec::default()
        });
        Self {
            methods: Method::ALL.to_vec(),
            tasks: vec![Task::Stabilize],
            disturbances,
        }
    }

    /// Stabilisation under drift and periodic disturbances.
    pub fn stabilization() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            tasks: vec![Task::Stabilize],
            disturbances: vec![
                DisturbanceSpec::linear_drift(DisturbanceSpec::default().kappa),
                DisturbanceSpec::periodic(0.003, 2.0),
            ],
        }
    }

    /// Circle and figure-8 tracking under drift and periodic disturbances.
    pub fn tracking() -> Self {
        Self {
            methods: vec![Method::NominalMpc, Method::NeuralMpc, Method::T2s],
            tasks: vec![Task::TrackCircle, Task::TrackFig8],
            disturbances: vec![
                DisturbanceSpec::linear_drift(DisturbanceSpec::default().kappa),
                DisturbanceSpec::periodic(0.003, 2.0),
            ],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.methods.len() * self.tasks.len() * self.disturbances.len()
    }
}

/// Full declarative description of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentSection,
    pub disturbance: DisturbanceSpec,
    pub quad: QuadParams,
    pub mpc: MpcConfig,
    pub learner: LearnerConfig,
    pub network: NetworkSection,
    pub reference: ReferenceSection,
    pub grid: GridSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: ExperimentSection::default(),
            disturbance: DisturbanceSpec::periodic(0.003, 2.0),
            quad: QuadParams::default(),
            mpc: MpcConfig::default(),
            learner: LearnerConfig::default(),
            network: NetworkSection::default(),
            reference: ReferenceSection::default(),
            grid: GridSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.experiment.control_rate
    }

    pub fn steps(&self) -> usize {
        (self.experiment.duration * self.experiment.control_rate).round() as usize
    }

    pub fn embedding(&self) -> TimeEmbeddingSpec {
        TimeEmbeddingSpec::new(self.network.embedding_dim).expect("validated")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::invalid(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        let e = &self.experiment;
        if !(e.control_rate.is_finite() && e.control_rate > 0.0) {
            return Err(ConfigError::invalid("experiment.control_rate", "must be positive"));
        }
        if !(e.duration.is_finite() && e.duration > 0.0) {
            return Err(ConfigError::invalid("experiment.duration", "must be positive"));
        }
        let steps = e.duration * e.control_rate;
        if (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
            return Err(ConfigError::invalid(
                "experiment.duration",
                "duration × control_rate must be a whole number of steps",
            ));
        }
        if e.n_runs < 1 {
            return Err(ConfigError::invalid("experiment.n_runs", "must be at least 1"));
        }
        if !(e.init_pos_std >= 0.0 && e.init_vel_std >= 0.0) {
            return Err(ConfigError::invalid(
                "experiment.init_pos_std",
                "perturbation std must be non-negative",
            ));
        }
        TimeEmbeddingSpec::new(self.network.embedding_dim)?;
        self.network.scaling.validate()?;
        self.disturbance.validate()?;
        self.quad.validate()?;
        self.mpc.validate()?;
        self.learner.validate()?;
        let r = &self.reference;
        for (name, v) in [
            ("reference.circle_radius", r.circle_radius),
            ("reference.circle_period", r.circle_period),
            ("reference.fig8_radius", r.fig8_radius),
            ("reference.fig8_period", r.fig8_period),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(name, "must be positive"));
            }
        }
        for d in &self.grid.disturbances {
            d.validate()?;
        }
        Ok(())
    }

    /// Named built-in configurations.
    pub fn preset(name: &str) -> Option<Self> {
        let mut cfg = Self::default();
        let drift = DisturbanceSpec::linear_drift(DisturbanceSpec::default().kappa);
        let periodic = DisturbanceSpec::periodic(0.003, 2.0);
        let (task, dist, grid) = match name {
            "default" => return Some(cfg),
            "stabilize_periodic" => (Task::Stabilize, periodic, None),
            "stabilize_drift" => (Task::Stabilize, drift, None),
            "circle_periodic" => (Task::TrackCircle, periodic, None),
            "circle_drift" => (Task::TrackCircle, drift, None),
            "fig8_periodic" => (Task::TrackFig8, periodic, None),
            "fig8_drift" => (Task::TrackFig8, drift, None),
            "stabilization_suite" => (Task::Stabilize, periodic, Some(GridSection::stabilization())),
            "tracking_suite" => (Task::TrackCircle, periodic, Some(GridSection::tracking())),
            "disturbance_grid" => (Task::Stabilize, periodic, Some(GridSection::disturbance_ablation())),
            _ => return None,
        };
        cfg.experiment.task = task;
        cfg.disturbance = dist;
        if let Some(g) = grid {
            cfg.grid = g;
        }
        Some(cfg)
    }

    pub const PRESETS: [&'static str; 10] = [
        "default",
        "stabilize_periodic",
        "stabilize_drift",
        "circle_periodic",
        "circle_drift",
        "fig8_periodic",
        "fig8_drift",
        "stabilization_suite",
        "tracking_suite",
        "disturbance_grid",
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.steps(), 1000);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "schema_version = 1\n[experiment]\nmethod = \"neural_mpc\"\n# a comment\n[learner]\nt_f = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment.method, Method::NeuralMpc);
        assert_eq!(cfg.learner.t_f, 5);
        assert_eq!(cfg.learner.t_s, 25);
    }

    #[test]
    fn unknown_method_names_the_field() {
        let err = ExperimentConfig::from_toml_str("[experiment]\nmethod = \"magic\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("method") && msg.contains("magic"), "{msg}");
        assert!(Method::parse("magic").unwrap_err().field == "experiment.method");
    }

    #[test]
    fn fractional_step_count_rejected() {
        let err = ExperimentConfig::from_toml_str("[experiment]\nduration = 0.015\n").unwrap_err();
        assert!(err.to_string().contains("experiment.duration"));
    }

    #[test]
    fn default_grid_covers_ablation_axes() {
        let g = GridSection::default();
        assert_eq!(g.methods.len(), 5);
        let periodic: Vec<(f64, f64)> = g
            .disturbances
            .iter()
            .filter(|d| d.kind == DisturbanceKind::Periodic)
            .map(|d| (d.amplitude, d.period))
            .collect();
        assert_eq!(periodic.len(), 6);
        for a in [0.001, 0.003, 0.005] {
            for t in [2.0, 4.0] {
                assert!(periodic.contains(&(a, t)));
            }
        }
        assert!(g.disturbances.iter().any(|d| d.kind == DisturbanceKind::Polynomial));
        assert!(g.disturbances.iter().any(|d| d.kind == DisturbanceKind::LinearWithStep));
    }

    #[test]
    fn method_matrix() {
        assert!(!Method::NominalMpc.learns());
        assert!(!Method::NeuralMpc.uses_time_embedding());
        assert!(!Method::T2sNoTimeEmb.uses_time_embedding());
        assert!(Method::T2sNoTwoScale.uses_time_embedding());
        assert_eq!(Method::NeuralMpc.schedule(), UpdateSchedule::SingleScale);
        assert_eq!(Method::T2sNoTwoScale.schedule(), UpdateSchedule::SingleScale);
        assert_eq!(Method::T2sNoTimeEmb.schedule(), UpdateSchedule::TwoTimescale);
        assert_eq!(Method::T2s.schedule(), UpdateSchedule::TwoTimescale);
    }

    #[test]
    fn presets_all_validate() {
        for name in ExperimentConfig::PRESETS {
            ExperimentConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ExperimentConfig::preset("nope").is_none());
    }
}
