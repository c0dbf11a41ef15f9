use serde::{Deserialize, Serialize};

use super::DiffusionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Variance tables for a `T`-step chain. Steps are 1-based: `beta(t)` for
/// `t` in `1..=T`, with `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::Schedule("T must be at least 1".into()));
        }
        for (k, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(DiffusionError::Schedule(format!("beta_{} = {b} outside (0, 1)", k + 1)));
            }
            if k > 0 && b < betas[k - 1] {
                return Err(DiffusionError::Schedule(format!("beta decreases at step {}", k + 1)));
            }
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        for &b in &betas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * (1.0 - b));
        }
        Ok(DiffusionSchedule { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Reverse-step noise variance, fixed to `beta_t`.
    pub fn sigma2(&self, t: usize) -> f64 {
        self.beta(t)
    }

    /// Variance of the forward posterior `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}

/// Builds a schedule. `Linear` interpolates `beta_1..beta_t`; `Cosine`
/// follows the squared-cosine cumulative product and ignores the endpoints.
pub fn make_schedule(steps: usize, kind: ScheduleKind, beta_1: f64, beta_t: f64) -> Result<DiffusionSchedule, DiffusionError> {
    if steps == 0 {
        return Err(DiffusionError::Schedule("T must be at least 1".into()));
    }
    let betas = match kind {
        ScheduleKind::Linear => (0..steps)
            .map(|k| if steps == 1 { beta_1 } else { beta_1 + (beta_t - beta_1) * k as f64 / (steps - 1) as f64 })
            .collect(),
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |t: f64| (((t / steps as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            (1..=steps).map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).clamp(1e-8, 0.999)).collect()
        }
    };
    DiffusionSchedule::from_betas(betas)
}
