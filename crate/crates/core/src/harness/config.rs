//! Experiment configuration, one flat TOML table per module.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bnn::{Activation, TrainConfig};
use crate::buffer::BufferConfig;
use crate::dynamics::IntegratorConfig;
use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Variational posterior features.
    #[default]
    Sdmrac,
    /// Same architecture with point-estimate weights.
    Dmrac,
    /// `u_ad = 0`; features are still evaluated for diagnostics.
    BaselineOnly,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Sdmrac => "sdmrac",
            Mode::Dmrac => "dmrac",
            Mode::BaselineOnly => "baseline_only",
        })
    }
}

/// How angles given in the config map onto plant state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    /// Degree values are converted to radians.
    #[default]
    Radians,
    /// Degree values are used as state directly and fed to `Δ` unchanged.
    Degrees,
}

impl Units {
    /// Multiplier from the degree values in the config to state units.
    pub fn from_degrees(self) -> f64 {
        match self {
            Units::Degrees => 1.0,
            Units::Radians => std::f64::consts::PI / 180.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyKind {
    #[default]
    WingRock,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub units: Units,
    pub uncertainty: UncertaintyKind,
    /// `W_0..W_5` of the wing-rock polynomial.
    pub wing_rock_weights: [f64; 6],
    /// Initial roll angle and rate, in degrees and degrees per second.
    pub initial_state_deg: Vec<f64>,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            units: Units::Radians,
            uncertainty: UncertaintyKind::WingRock,
            wing_rock_weights: [1.0, 0.2314, 0.6918, -0.6245, 0.1, 0.214],
            initial_state_deg: vec![1.0, 1.0],
        }
    }
}

/// Commanded roll angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSignal {
    /// Piecewise-constant levels, each held for `step_duration` seconds; the
    /// last level is held past the end of the list.
    Staircase { levels_deg: Vec<f64>, step_duration: f64 },
    /// `Σ a_i sin(2π f_i t)`.
    Sines { amplitudes_deg: Vec<f64>, frequencies_hz: Vec<f64> },
}

impl ReferenceSignal {
    /// Command at time `t`, in degrees.
    pub fn value_deg(&self, t: f64) -> f64 {
        match self {
            ReferenceSignal::Staircase { levels_deg, step_duration } => {
                let i = (t / step_duration).floor().max(0.0) as usize;
                levels_deg[i.min(levels_deg.len() - 1)]
            }
            ReferenceSignal::Sines {
                amplitudes_deg,
                frequencies_hz,
            } => amplitudes_deg
                .iter()
                .zip(frequencies_hz)
                .map(|(a, f)| a * (2.0 * std::f64::consts::PI * f * t).sin())
                .sum(),
        }
    }

    /// Times at which the command jumps, inside `(0, horizon)`.
    pub fn switch_times(&self, horizon: f64) -> Vec<f64> {
        match self {
            ReferenceSignal::Staircase { levels_deg, step_duration } => (1..levels_deg.len())
                .map(|i| i as f64 * step_duration)
                .filter(|&t| t < horizon)
                .collect(),
            ReferenceSignal::Sines { .. } => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub natural_frequency: f64,
    pub damping: f64,
    pub signal: ReferenceSignal,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            natural_frequency: 2.0,
            damping: 0.5,
            signal: ReferenceSignal::Staircase {
                levels_deg: vec![1.0, -1.0, 2.0, 0.0],
                step_duration: 10.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Scalar adaptation gain `Γ`.
    pub gamma: f64,
    /// Diagonal of the Lyapunov weight `Q`.
    pub q_diag: Vec<f64>,
    /// Projection radius `W_b` on `‖W‖_F`.
    pub weight_bound: f64,
    /// Posterior draws `N` behind the feature mean.
    pub mc_draws: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            gamma: 10.0,
            q_diag: vec![1.0, 1.0],
            weight_bound: 10.0,
            mc_draws: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BnnConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_mu_std: f64,
    pub init_rho: f64,
    pub prior_std: f64,
    pub likelihood_std: f64,
}

impl Default for BnnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![20, 20],
            activation: Activation::Tanh,
            init_mu_std: 0.1,
            init_rho: -3.0,
            prior_std: 1.0,
            likelihood_std: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RetrainTrigger {
    /// After this many admissions since the last retrain.
    NewPoints { count: usize },
    /// Every this many control steps.
    EveryKSteps { steps: usize },
    Never,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainConfig {
    pub trigger: RetrainTrigger,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            trigger: RetrainTrigger::NewPoints { count: 25 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub pe_window: f64,
    pub pe_stride: f64,
    /// `γ` reported alongside each window's `λ_min`.
    pub pe_threshold: f64,
    /// Start of the "settled" interval for tracking statistics.
    pub settle_time: f64,
    /// Bound on `sup ‖e‖` after `settle_time`, in state units.
    pub tracking_ceiling: f64,
    /// Band edge for the high-frequency tracking-error energy.
    pub hf_cutoff_hz: f64,
    /// Width of the time bins in the report's time series.
    pub bin_width: f64,
    /// Length of the transient and settled windows around each step.
    pub phase_window: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            pe_window: 2.0,
            pe_stride: 0.5,
            pe_threshold: 1e-6,
            settle_time: 5.0,
            tracking_ceiling: 0.5,
            hf_cutoff_hz: 2.0,
            bin_width: 1.0,
            phase_window: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Simulated time in seconds.
    pub horizon: f64,
    /// Train on a worker thread instead of inline.
    pub pipelined: bool,
    pub plant: PlantConfig,
    pub reference: ReferenceConfig,
    pub controller: ControllerConfig,
    pub integrator: IntegratorConfig<f64>,
    pub bnn: BnnConfig,
    pub train: TrainConfig,
    pub buffer: BufferConfig,
    pub retrain: RetrainConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Sdmrac,
            seed: 0,
            horizon: 40.0,
            pipelined: false,
            plant: PlantConfig::default(),
            reference: ReferenceConfig::default(),
            controller: ControllerConfig::default(),
            integrator: IntegratorConfig::default(),
            bnn: BnnConfig::default(),
            train: TrainConfig::default(),
            buffer: BufferConfig::default(),
            retrain: RetrainConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), HarnessError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    /// True when both configs describe the same plant, controller, schedule and seed.
    pub fn same_setup(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.horizon == other.horizon
            && self.plant == other.plant
            && self.reference == other.reference
            && self.controller == other.controller
            && self.integrator == other.integrator
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        positive("horizon", self.horizon)?;
        positive("integrator.dt", self.integrator.dt)?;
        positive("reference.natural_frequency", self.reference.natural_frequency)?;
        positive("reference.damping", self.reference.damping)?;
        positive("controller.gamma", self.controller.gamma)?;
        positive("controller.weight_bound", self.controller.weight_bound)?;
        positive("bnn.prior_std", self.bnn.prior_std)?;
        positive("bnn.likelihood_std", self.bnn.likelihood_std)?;
        positive("buffer.kernel_width", self.buffer.kernel_width)?;
        positive("diagnostics.pe_window", self.diagnostics.pe_window)?;
        positive("diagnostics.pe_stride", self.diagnostics.pe_stride)?;
        positive("diagnostics.bin_width", self.diagnostics.bin_width)?;
        if self.controller.mc_draws < 2 {
            return Err(HarnessError::Config("controller.mc_draws must be at least 2".into()));
        }
        if self.plant.initial_state_deg.len() != 2 || self.controller.q_diag.len() != 2 {
            return Err(HarnessError::Config(
                "the wing-rock plant has two states: initial_state_deg and q_diag need two entries".into(),
            ));
        }
        if self.controller.q_diag.iter().any(|&q| !(q > 0.0)) {
            return Err(HarnessError::Config("controller.q_diag entries must be positive".into()));
        }
        if self.bnn.hidden.is_empty() || self.bnn.hidden.contains(&0) {
            return Err(HarnessError::Config("bnn.hidden needs at least one non-empty layer".into()));
        }
        if self.buffer.capacity == 0 || self.train.batch_size == 0 || self.train.mc_samples == 0 {
            return Err(HarnessError::Config(
                "buffer.capacity, train.batch_size and train.mc_samples must be positive".into(),
            ));
        }
        if self.train.batch_size > self.buffer.capacity {
            return Err(HarnessError::Config("train.batch_size exceeds buffer.capacity".into()));
        }
        match &self.retrain.trigger {
            RetrainTrigger::NewPoints { count: 0 } | RetrainTrigger::EveryKSteps { steps: 0 } => {
                return Err(HarnessError::Config("retrain trigger interval must be positive".into()))
            }
            _ => {}
        }
        match &self.reference.signal {
            ReferenceSignal::Staircase { levels_deg, step_duration } => {
                positive("reference.signal.step_duration", *step_duration)?;
                if levels_deg.is_empty() {
                    return Err(HarnessError::Config("staircase needs at least one level".into()));
                }
            }
            ReferenceSignal::Sines {
                amplitudes_deg,
                frequencies_hz,
            } => {
                if amplitudes_deg.len() != frequencies_hz.len() {
                    return Err(HarnessError::Config("sines need one frequency per amplitude".into()));
                }
            }
        }
        Ok(())
    }
}
