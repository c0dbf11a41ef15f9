//! Gaussian chain over coordinates.

use crate::molio::Vec3;

use super::DiffusionSchedule;

/// `x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps`.
pub fn q_sample_pos(schedule: &DiffusionSchedule, x0: &[Vec3], t: usize, eps: &[Vec3]) -> Vec<Vec3> {
    assert_eq!(x0.len(), eps.len());
    let (a, b) = (schedule.alpha_bar(t).sqrt(), (1.0 - schedule.alpha_bar(t)).sqrt());
    x0.iter().zip(eps).map(|(x, e)| [a * x[0] + b * e[0], a * x[1] + b * e[1], a * x[2] + b * e[2]]).collect()
}

/// Coefficients `(c0, ct)` of the posterior mean `c0 x_0 + ct x_t`.
pub fn posterior_coefficients(schedule: &DiffusionSchedule, t: usize) -> (f64, f64) {
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let beta = schedule.beta(t);
    let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
    let ct = schedule.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    (c0, ct)
}

/// Mean and variance of `q(x_{t-1} | x_t, x_0)`.
pub fn posterior_pos(schedule: &DiffusionSchedule, xt: &[Vec3], x0: &[Vec3], t: usize) -> (Vec<Vec3>, f64) {
    let (c0, ct) = posterior_coefficients(schedule, t);
    let mean = xt
        .iter()
        .zip(x0)
        .map(|(a, b)| [c0 * b[0] + ct * a[0], c0 * b[1] + ct * a[1], c0 * b[2] + ct * a[2]])
        .collect();
    (mean, schedule.posterior_variance(t))
}

/// Clean-coordinate estimate implied by a noise prediction.
pub fn predict_x0(schedule: &DiffusionSchedule, xt: &[Vec3], eps: &[Vec3], t: usize) -> Vec<Vec3> {
    let ab = schedule.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    xt.iter()
        .zip(eps)
        .map(|(x, e)| [(x[0] - n * e[0]) / s, (x[1] - n * e[1]) / s, (x[2] - n * e[2]) / s])
        .collect()
}

/// Per-step weight `beta_t^2 / (2 sigma_t^2 alpha_t (1 - abar_t))`, or 1
/// with the simple loss.
pub fn loss_weight(schedule: &DiffusionSchedule, t: usize, simple: bool) -> f64 {
    if simple {
        return 1.0;
    }
    let beta = schedule.beta(t);
    beta * beta / (2.0 * schedule.sigma2(t) * schedule.alpha(t) * (1.0 - schedule.alpha_bar(t)))
}

/// Weighted squared error `weight * sum ||eps - eps_hat||^2`.
pub fn loss_pos(schedule: &DiffusionSchedule, eps: &[Vec3], eps_hat: &[Vec3], t: usize, simple: bool) -> f64 {
    assert_eq!(eps.len(), eps_hat.len());
    let sq: f64 = eps
        .iter()
        .zip(eps_hat)
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>())
        .sum();
    loss_weight(schedule, t, simple) * sq
}
