//! Forward/reverse chains over coordinates (Gaussian) and over atom types
//! and motif IDs (uniform categorical), guidance, training and sampling.

mod categorical;
mod continuous;
mod guidance;
mod sample;
mod schedule;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::DenoiserConfig;
use crate::molio::Vec3;

pub use categorical::{
    loss_type, posterior_type, posterior_type_parts, q_probs, q_sample_type, sample_categorical, softmax,
    type_loss_and_grad, PROB_FLOOR,
};
pub use continuous::{loss_pos, loss_weight, posterior_coefficients, posterior_pos, predict_x0, q_sample_pos};
pub use guidance::cfg_combine;
pub use sample::{consistency_project, draw_layout, sample, sample_chains, sample_observed, ChainState, LayoutChoice,
    SampleConfig, SampleResult, Snapshot};
pub use schedule::{make_schedule, DiffusionSchedule, ScheduleKind};
pub use train::{
    evaluate_loss, example_loss, ligand_fingerprint, train, train_step, Frame, LossBreakdown, NoiseDraw, Optimizer,
    OptimizerKind, PocketContext, TrainConfig, TrainExample,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffusionError {
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("config: {0}")]
    Config(String),
    #[error("sample {index}: {source}")]
    Denoiser { index: usize, source: crate::denoiser::DenoiserError },
    #[error("{0}")]
    Input(String),
}

/// How the denoiser's coordinate update `d = x_out - x_t` is read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordTarget {
    /// `d` is the noise estimate.
    #[default]
    Noise,
    /// `x_out` estimates `sqrt(abar) x_0`, so `eps = -d / sqrt(1 - abar)`.
    /// Near t = 0 the network only has to nudge atoms back into place
    /// instead of inflating small offsets into unit-scale noise. Gradients
    /// grow like 1/sqrt(1 - abar) at small t, so pair it with clipping or Adam.
    Signal,
}

impl CoordTarget {
    /// d(noise estimate) / d(displacement), the same for every coordinate.
    pub fn noise_slope(self, schedule: &DiffusionSchedule, t: usize) -> f64 {
        match self {
            CoordTarget::Noise => 1.0,
            CoordTarget::Signal => -1.0 / (1.0 - schedule.alpha_bar(t)).sqrt(),
        }
    }

    /// Overwrites each displacement with the noise estimate.
    pub fn noise_in_place(self, schedule: &DiffusionSchedule, t: usize, d: &mut [Vec3]) {
        let k = self.noise_slope(schedule, t);
        if k != 1.0 {
            d.iter_mut().for_each(|e| *e = e.map(|v| k * v));
        }
    }
}

/// Geometry and schedule settings shared by training and sampling. Stored in
/// checkpoints so a sampler reproduces the training frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Å per model-frame unit.
    pub coord_scale: f64,
    /// Filtration cap (Å) for ligand and pocket fingerprints.
    pub topo_filtration: f64,
    /// Protein atoms outside the pocket added as context nodes.
    pub context_atoms: usize,
    pub coord_target: CoordTarget,
    pub denoiser: DenoiserConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            steps: 1000,
            schedule: ScheduleKind::Linear,
            beta_start: 1e-4,
            beta_end: 0.02,
            coord_scale: 1.0,
            topo_filtration: 6.0,
            context_atoms: 0,
            coord_target: CoordTarget::default(),
            denoiser: DenoiserConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn schedule(&self) -> Result<DiffusionSchedule, DiffusionError> {
        make_schedule(self.steps, self.schedule, self.beta_start, self.beta_end)
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if !(self.coord_scale > 0.0 && self.coord_scale.is_finite()) {
            return Err(DiffusionError::Config("coord_scale must be positive".into()));
        }
        if !(self.topo_filtration > 0.0) {
            return Err(DiffusionError::Config("topo_filtration must be positive".into()));
        }
        self.denoiser.validate().map_err(|e| DiffusionError::Config(e.to_string()))?;
        self.schedule().map(|_| ())
    }
}
