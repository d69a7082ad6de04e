//! Score-function contract and its two implementations: closed-form
//! Gaussian-mixture priors and a small dense denoiser trained by score
//! matching.

pub mod denoiser;
pub mod gmm;

use crate::sde::NoiseSchedule;

/// Time-dependent score with an exact vector–Jacobian product.
///
/// `vjp` returns J^T v where J is the Jacobian of `score` at (x, t); it must
/// be linear in v. Implementations are read-only and safe to share.
pub trait ScoreFunction: Sync {
    /// Ladder depth this score serves (0 = full resolution).
    fn level(&self) -> usize;
    fn dim(&self) -> usize;
    fn score(&self, x: &[f64], t: f64) -> Vec<f64>;
    fn vjp(&self, x: &[f64], t: f64, v: &[f64]) -> Vec<f64>;
}

/// Analytic mixture prior exposed as a [`ScoreFunction`].
pub struct GmmScore {
    prior: gmm::GmmPrior,
    schedule: NoiseSchedule,
    level: usize,
}

impl GmmScore {
    pub fn new(prior: gmm::GmmPrior, schedule: NoiseSchedule, level: usize) -> Self {
        GmmScore {
            prior,
            schedule,
            level,
        }
    }

    pub fn prior(&self) -> &gmm::GmmPrior {
        &self.prior
    }
}

impl ScoreFunction for GmmScore {
    fn level(&self) -> usize {
        self.level
    }

    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.prior
            .score(x, t, &self.schedule)
            .expect("score evaluation on validated prior")
    }

    fn vjp(&self, x: &[f64], t: f64, v: &[f64]) -> Vec<f64> {
        self.prior
            .vjp(x, t, v, &self.schedule)
            .expect("vjp evaluation on validated prior")
    }
}

/// Trained denoiser exposed as a [`ScoreFunction`].
pub struct DenoiserScore {
    model: denoiser::DenoiserModel,
    level: usize,
}

impl DenoiserScore {
    pub fn new(model: denoiser::DenoiserModel, level: usize) -> Self {
        DenoiserScore { model, level }
    }

    pub fn model(&self) -> &denoiser::DenoiserModel {
        &self.model
    }
}

impl ScoreFunction for DenoiserScore {
    fn level(&self) -> usize {
        self.level
    }

    fn dim(&self) -> usize {
        self.model.arch().dim
    }

    fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.model.score(x, t).expect("model evaluation")
    }

    fn vjp(&self, x: &[f64], t: f64, v: &[f64]) -> Vec<f64> {
        self.model.vjp(x, t, v).expect("model vjp")
    }
}
