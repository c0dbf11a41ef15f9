//! Uniform-transition categorical chain over atom types and motif IDs.

use rand::Rng;

use super::DiffusionSchedule;

/// Floor applied to predicted probabilities inside the KL.
pub const PROB_FLOOR: f64 = 1e-12;

/// Marginal `q(v_t | v_0) = abar_t v_0 + (1 - abar_t) / K`.
pub fn q_probs(abar: f64, v0: &[f64]) -> Vec<f64> {
    let k = v0.len() as f64;
    v0.iter().map(|&p| abar * p + (1.0 - abar) / k).collect()
}

/// Draws a class index from a probability vector with one uniform draw.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Samples `v_t` given the class of `v_0`.
pub fn q_sample_type<R: Rng + ?Sized>(schedule: &DiffusionSchedule, class: usize, k: usize, t: usize, rng: &mut R) -> usize {
    let mut v0 = vec![0.0; k];
    v0[class] = 1.0;
    sample_categorical(&q_probs(schedule.alpha_bar(t), &v0), rng)
}

/// Unnormalized posterior `[alpha_t v_t + (1-alpha_t)/K] * [abar_{t-1} v_0 + (1-abar_{t-1})/K]`
/// with the normalized form alongside.
pub fn posterior_type_parts(alpha: f64, abar_prev: f64, vt: &[f64], v0: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = vt.len() as f64;
    let g: Vec<f64> = vt
        .iter()
        .zip(v0)
        .map(|(&a, &b)| (alpha * a + (1.0 - alpha) / k) * (abar_prev * b + (1.0 - abar_prev) / k))
        .collect();
    let s: f64 = g.iter().sum();
    let q = g.iter().map(|x| x / s).collect();
    (g, q)
}

/// `q(v_{t-1} | v_t, v_0)` at step `t`; `v_0` may be a distribution.
pub fn posterior_type(schedule: &DiffusionSchedule, vt: &[f64], v0: &[f64], t: usize) -> Vec<f64> {
    posterior_type_parts(schedule.alpha(t), schedule.alpha_bar(t - 1), vt, v0).1
}

/// `KL(q_true || q_pred)` with `0 log 0 = 0` and the prediction floored.
pub fn loss_type(q_true: &[f64], q_pred: &[f64]) -> f64 {
    q_true
        .iter()
        .zip(q_pred)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * (p / q.max(PROB_FLOOR)).ln())
        .sum()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// KL between the true posterior (from the clean class) and the posterior
/// built from `softmax(logits)`, with its gradient in the logits.
pub fn type_loss_and_grad(schedule: &DiffusionSchedule, t: usize, vt: usize, v0: usize, logits: &[f64]) -> (f64, Vec<f64>) {
    let k = logits.len();
    if k < 2 {
        return (0.0, vec![0.0; k]);
    }
    let one_hot = |c: usize| {
        let mut v = vec![0.0; k];
        v[c] = 1.0;
        v
    };
    let (alpha, abar_prev) = (schedule.alpha(t), schedule.alpha_bar(t - 1));
    let vt = one_hot(vt);
    let (_, q_true) = posterior_type_parts(alpha, abar_prev, &vt, &one_hot(v0));
    let p = softmax(logits);
    let (g, q_pred) = posterior_type_parts(alpha, abar_prev, &vt, &p);
    let loss = loss_type(&q_true, &q_pred);

    let s: f64 = g.iter().sum();
    // dKL/dG_j = (1 - q_j / Q_j) / S, zero where the floor is active.
    let d_g: Vec<f64> = (0..k)
        .map(|j| if q_pred[j] < PROB_FLOOR { 0.0 } else { (1.0 - q_true[j] / q_pred[j]) / s })
        .collect();
    let d_p: Vec<f64> = (0..k).map(|j| d_g[j] * (alpha * vt[j] + (1.0 - alpha) / k as f64) * abar_prev).collect();
    let dot: f64 = p.iter().zip(&d_p).map(|(a, b)| a * b).sum();
    let grad = p.iter().zip(&d_p).map(|(pi, gi)| pi * (gi - dot)).collect();
    (loss, grad)
}
