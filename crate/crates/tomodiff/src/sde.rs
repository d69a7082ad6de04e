//! VP-SDE noise schedule, perturbation kernel, Tweedie posterior mean,
//! reverse Euler–Maruyama step, and the denoising score-matching loss.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};

/// Linear beta(t) = beta_min + t (beta_max - beta_min) on [0, T].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    pub t_end: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            beta_min: 0.1,
            beta_max: 20.0,
            t_end: 1.0,
        }
    }
}

impl NoiseSchedule {
    pub fn new(beta_min: f64, beta_max: f64, t_end: f64) -> Result<Self> {
        let s = NoiseSchedule {
            beta_min,
            beta_max,
            t_end,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_min > 0.0 && self.beta_max > self.beta_min && self.t_end > 0.0) {
            return Err(TomoError::invalid(format!(
                "schedule needs 0 < beta_min < beta_max and t_end > 0, got ({}, {}, {})",
                self.beta_min, self.beta_max, self.t_end
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t_end + 1e-12).contains(&t) {
            return Err(TomoError::invalid(format!(
                "time {t} outside [0, {}]",
                self.t_end
            )));
        }
        Ok(())
    }
}

/// Diffusion state in the orthonormal coordinates of ladder level `level`.
#[derive(Debug, Clone)]
pub struct DiffusionState {
    pub x: Vec<f64>,
    pub t: f64,
    pub level: usize,
}

/// alpha_bar(t) = exp(-int_0^t beta(s) ds), evaluated in closed form.
pub fn alpha_bar(schedule: &NoiseSchedule, t: f64) -> Result<f64> {
    schedule.check_t(t)?;
    Ok((-schedule.beta_min * t - 0.5 * (schedule.beta_max - schedule.beta_min) * t * t).exp())
}

/// x_t = sqrt(alpha_bar) x0 + sqrt(1 - alpha_bar) noise.
pub fn perturb(x0: &[f64], t: f64, noise: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if x0.len() != noise.len() {
        return Err(TomoError::invalid("x0 and noise shape mismatch"));
    }
    let ab = alpha_bar(schedule, t)?;
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0
        .iter()
        .zip(noise.iter())
        .map(|(x, e)| sa * x + sn * e)
        .collect())
}

/// Posterior mean estimate (x_t + (1 - alpha_bar) * score) / sqrt(alpha_bar).
pub fn tweedie(x_t: &[f64], t: f64, score_value: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if x_t.len() != score_value.len() {
        return Err(TomoError::invalid("x_t and score shape mismatch"));
    }
    let ab = alpha_bar(schedule, t)?;
    if ab < 1e-12 {
        return Err(TomoError::numerical(format!(
            "alpha_bar({t}) = {ab:.3e} too small for the Tweedie division"
        )));
    }
    let inv = 1.0 / ab.sqrt();
    Ok(x_t
        .iter()
        .zip(score_value.iter())
        .map(|(x, s)| inv * (x + (1.0 - ab) * s))
        .collect())
}

/// One backward Euler–Maruyama step of the reverse SDE:
/// x <- x + [beta/2 x + beta s(x,t)] dt + sqrt(beta dt) z, t <- t - dt.
///
/// `score` receives (x, t) and returns the total reverse drift score, so the
/// posterior sampler can fold the likelihood guidance into the same step.
pub fn reverse_step<F, R>(
    schedule: &NoiseSchedule,
    state: &DiffusionState,
    dt: f64,
    score: F,
    rng: &mut R,
) -> Result<DiffusionState>
where
    F: FnOnce(&[f64], f64) -> Vec<f64>,
    R: Rng + ?Sized,
{
    if dt <= 0.0 {
        return Err(TomoError::invalid("reverse step needs dt > 0"));
    }
    if state.t - dt < -1e-12 {
        return Err(TomoError::invalid(format!(
            "step below t = 0: t = {}, dt = {dt}",
            state.t
        )));
    }
    let beta = schedule.beta(state.t);
    let s = score(&state.x, state.t);
    if s.len() != state.x.len() {
        return Err(TomoError::invalid("score output shape mismatch"));
    }
    let amp = (beta * dt).sqrt();
    let x = state
        .x
        .iter()
        .zip(s.iter())
        .map(|(x, s)| {
            let z: f64 = rng.sample(StandardNormal);
            x + (0.5 * beta * x + beta * s) * dt + amp * z
        })
        .collect();
    Ok(DiffusionState {
        x,
        t: (state.t - dt).max(0.0),
        level: state.level,
    })
}

/// Mean over the batch of || s(x_t, t) + noise / sqrt(1 - alpha_bar) ||^2,
/// the Monte-Carlo denoising score-matching objective.
pub fn dsm_loss<F>(
    score_fn: F,
    batch_x0: &[Vec<f64>],
    t_samples: &[f64],
    noise_samples: &[Vec<f64>],
    schedule: &NoiseSchedule,
) -> Result<f64>
where
    F: Fn(&[f64], f64) -> Vec<f64>,
{
    if batch_x0.is_empty() {
        return Err(TomoError::invalid("empty batch"));
    }
    if batch_x0.len() != t_samples.len() || batch_x0.len() != noise_samples.len() {
        return Err(TomoError::invalid("batch, t, and noise lengths differ"));
    }
    let mut total = 0.0;
    for ((x0, &t), noise) in batch_x0.iter().zip(t_samples).zip(noise_samples) {
        if t <= 0.0 {
            return Err(TomoError::invalid(
                "t = 0 sample: conditional kernel score undefined",
            ));
        }
        let ab = alpha_bar(schedule, t)?;
        let x_t = perturb(x0, t, noise, schedule)?;
        let s = score_fn(&x_t, t);
        let target_scale = 1.0 / (1.0 - ab).sqrt();
        total += s
            .iter()
            .zip(noise.iter())
            .map(|(s, e)| {
                let r = s + e * target_scale;
                r * r
            })
            .sum::<f64>();
    }
    Ok(total / batch_x0.len() as f64)
}
