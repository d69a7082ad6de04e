//! Orthonormal pooling ladder, orthogonal-complement extraction, boundary
//! variance matching, noise injection, and the orthogonal Fisher divergence
//! used to pick level-transition times.
//!
//! One pooling step maps a side-n image to side n/2 with (U^T x)[a,b] =
//! 1/2 * sum of the 2x2 block, so U^T U = I and U^T equals 2x average
//! pooling. Diffusion states therefore carry a 2^k scale relative to
//! physical block averages; the sampler divides it out before PDE solves.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::score::gmm::GmmPrior;
use crate::score::ScoreFunction;
use crate::sde::{alpha_bar, perturb, NoiseSchedule};

/// One orthonormal pooling step (side even).
pub fn project_level(x: &[f64], side: usize) -> Result<Vec<f64>> {
    if side % 2 != 0 || side == 0 || x.len() != side * side {
        return Err(TomoError::invalid(format!(
            "cannot pool a length-{} vector as an even {side}x{side} image",
            x.len()
        )));
    }
    let half = side / 2;
    let mut out = vec![0.0; half * half];
    for a in 0..half {
        for b in 0..half {
            out[a * half + b] = 0.5
                * (x[2 * a * side + 2 * b]
                    + x[2 * a * side + 2 * b + 1]
                    + x[(2 * a + 1) * side + 2 * b]
                    + x[(2 * a + 1) * side + 2 * b + 1]);
        }
    }
    Ok(out)
}

/// Transpose of [`project_level`]: each fine pixel gets half its block value.
pub fn lift_level(y: &[f64], coarse_side: usize) -> Result<Vec<f64>> {
    if y.len() != coarse_side * coarse_side || coarse_side == 0 {
        return Err(TomoError::invalid("coarse vector shape mismatch"));
    }
    let side = 2 * coarse_side;
    let mut out = vec![0.0; side * side];
    for a in 0..coarse_side {
        for b in 0..coarse_side {
            let v = 0.5 * y[a * coarse_side + b];
            out[2 * a * side + 2 * b] = v;
            out[2 * a * side + 2 * b + 1] = v;
            out[(2 * a + 1) * side + 2 * b] = v;
            out[(2 * a + 1) * side + 2 * b + 1] = v;
        }
    }
    Ok(out)
}

/// Apply [`project_level`] k times.
pub fn project_to_depth(x: &[f64], side: usize, k: usize) -> Result<Vec<f64>> {
    let mut v = x.to_vec();
    let mut s = side;
    for _ in 0..k {
        v = project_level(&v, s)?;
        s /= 2;
    }
    Ok(v)
}

/// Within-level residual x - U (U^T x) after removing the coarser content.
pub fn orth_complement(x: &[f64], side: usize) -> Result<Vec<f64>> {
    let coarse = project_level(x, side)?;
    let back = lift_level(&coarse, side / 2)?;
    Ok(x.iter().zip(back.iter()).map(|(a, b)| a - b).collect())
}

/// Where the orthogonal energy E||perp||^2 comes from.
pub enum DataSource<'a> {
    /// Exact expectation under an analytic mixture prior.
    Gmm(&'a GmmPrior),
    /// Sample mean over a dataset of level-(k-1) vectors.
    Samples(&'a [Vec<f64>]),
}

/// E || (I - U U^T) x ||^2 for one pooling step below `fine_side`.
pub fn perp_energy(source: &DataSource, fine_side: usize) -> Result<f64> {
    match source {
        DataSource::Gmm(prior) => prior.perp_energy(fine_side),
        DataSource::Samples(samples) => {
            if samples.is_empty() {
                return Err(TomoError::invalid("empty dataset"));
            }
            let mut acc = 0.0;
            for s in samples.iter() {
                let perp = orth_complement(s, fine_side)?;
                acc += perp.iter().map(|v| v * v).sum::<f64>();
            }
            Ok(acc / samples.len() as f64)
        }
    }
}

/// Variance of the orthogonal component at time t:
/// alpha_bar/(d_{k-1} - d_k) * E||perp||^2 + 1 - alpha_bar.
pub fn sigma_marginal(
    source: &DataSource,
    t: f64,
    fine_side: usize,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    let ab = alpha_bar(schedule, t)?;
    let d_fine = fine_side * fine_side;
    let d_coarse = (fine_side / 2) * (fine_side / 2);
    let energy = perp_energy(source, fine_side)?;
    Ok(ab / (d_fine - d_coarse) as f64 * energy + 1.0 - ab)
}

/// Lift a coarse state one level up and fill the orthogonal complement with
/// N(0, sigma I) noise (sigma is a variance).
pub fn inject_up<R: Rng + ?Sized>(
    x_coarse: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if sigma <= 0.0 {
        return Err(TomoError::invalid("injection variance must be positive"));
    }
    let coarse_side = (x_coarse.len() as f64).sqrt().round() as usize;
    if coarse_side * coarse_side != x_coarse.len() {
        return Err(TomoError::invalid("coarse state is not square"));
    }
    let side = 2 * coarse_side;
    let lifted = lift_level(x_coarse, coarse_side)?;
    let std = sigma.sqrt();
    let z: Vec<f64> = (0..side * side)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let z_perp = orth_complement(&z, side)?;
    Ok(lifted
        .iter()
        .zip(z_perp.iter())
        .map(|(a, b)| a + b)
        .collect())
}

/// Monte-Carlo Fisher-divergence curve for one level transition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FisherCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub sample_count: usize,
}

impl FisherCurve {
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() || self.times.len() != self.stderr.len() {
            return Err(TomoError::invalid("fisher curve column lengths differ"));
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(TomoError::invalid("fisher divergence must be >= 0"));
        }
        Ok(())
    }
}

/// One Monte-Carlo estimate of the orthogonal Fisher divergence
/// D_F = Sigma_t/(d_{k-1} - d_k) * E|| P_perp s(x_t, t) + x_t_perp / Sigma_t ||^2
/// with the level-(k-1) score.
pub fn fisher_divergence<R: Rng + ?Sized>(
    score_fn: &dyn ScoreFunction,
    source: &DataSource,
    t: f64,
    fine_side: usize,
    schedule: &NoiseSchedule,
    sample_count: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if sample_count < 16 {
        return Err(TomoError::invalid("fisher divergence needs >= 16 samples"));
    }
    let d_fine = fine_side * fine_side;
    if score_fn.dim() != d_fine {
        return Err(TomoError::invalid(format!(
            "score dimension {} does not serve a {fine_side}x{fine_side} level",
            score_fn.dim()
        )));
    }
    let sigma = sigma_marginal(source, t, fine_side, schedule)?;
    let d_coarse = (fine_side / 2) * (fine_side / 2);
    let delta = (d_fine - d_coarse) as f64;

    let mut norms = Vec::with_capacity(sample_count);
    for _ in 0..sample_count {
        let x0 = match source {
            DataSource::Gmm(prior) => prior.sample(rng),
            DataSource::Samples(samples) => {
                samples[rng.gen_range(0..samples.len())].clone()
            }
        };
        if x0.len() != d_fine {
            return Err(TomoError::invalid("data sample dimension mismatch"));
        }
        let noise: Vec<f64> = (0..d_fine).map(|_| rng.sample(StandardNormal)).collect();
        let x_t = perturb(&x0, t, &noise, schedule)?;
        let s = score_fn.score(&x_t, t);
        let s_perp = orth_complement(&s, fine_side)?;
        let x_perp = orth_complement(&x_t, fine_side)?;
        let norm2: f64 = s_perp
            .iter()
            .zip(x_perp.iter())
            .map(|(sp, xp)| {
                let r = sp + xp / sigma;
                r * r
            })
            .sum();
        norms.push(norm2);
    }
    let n = sample_count as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let scale = sigma / delta;
    Ok((scale * mean, scale * (var / n).sqrt()))
}

/// Transition times: per curve, the earliest grid time whose divergence is at
/// or below the threshold. The result must be strictly increasing.
pub fn select_times(curves: &[FisherCurve], threshold: f64) -> Result<Vec<f64>> {
    let mut times = Vec::with_capacity(curves.len());
    for (k, curve) in curves.iter().enumerate() {
        curve.validate()?;
        let hit = curve
            .times
            .iter()
            .zip(curve.values.iter())
            .find(|(_, &v)| v <= threshold)
            .map(|(&t, _)| t);
        match hit {
            Some(t) => times.push(t),
            None => {
                return Err(TomoError::ScheduleInfeasible(format!(
                    "transition {} never reaches divergence {threshold}",
                    k + 1
                )))
            }
        }
    }
    for w in times.windows(2) {
        if w[1] <= w[0] {
            return Err(TomoError::ScheduleInfeasible(format!(
                "transition times not increasing: {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(times)
}

/// Dyadic pooling ladder: K levels below full resolution with transition
/// times t_1 < ... < t_K and the per-transition orthogonal energies that fix
/// the injection variances. Times may sit at t_end, which makes the
/// corresponding coarse phase empty (ladder collapse).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceLadder {
    base_n: usize,
    times: Vec<f64>,
    perp_energies: Vec<f64>,
}

impl SubspaceLadder {
    pub fn new(base_n: usize, times: Vec<f64>, perp_energies: Vec<f64>, t_end: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(TomoError::invalid("ladder needs at least one level"));
        }
        if times.len() != perp_energies.len() {
            return Err(TomoError::invalid(
                "one orthogonal energy per transition required",
            ));
        }
        if !base_n.is_power_of_two() || base_n < 8 || base_n >> times.len() < 2 {
            return Err(TomoError::invalid(format!(
                "ladder needs a power-of-two side >= 8 divisible through {} levels, got {base_n}",
                times.len()
            )));
        }
        let mut prev = 0.0;
        for &t in &times {
            if !(t > prev || (t == prev && t == t_end)) || t > t_end {
                return Err(TomoError::invalid(format!(
                    "transition times must increase strictly within (0, {t_end}]"
                )));
            }
            prev = t;
        }
        if perp_energies.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(TomoError::invalid("orthogonal energies must be >= 0"));
        }
        Ok(SubspaceLadder {
            base_n,
            times,
            perp_energies,
        })
    }

    /// Ladder whose injection variances come from an analytic prior at each
    /// intermediate level.
    pub fn from_gmm(base_n: usize, times: Vec<f64>, prior: &GmmPrior, t_end: f64) -> Result<Self> {
        let mut energies = Vec::with_capacity(times.len());
        let mut level_prior = prior.clone();
        for k in 0..times.len() {
            let side = base_n >> k;
            energies.push(level_prior.perp_energy(side)?);
            if k + 1 < times.len() {
                level_prior = level_prior.project(1, side)?;
            }
        }
        Self::new(base_n, times, energies, t_end)
    }

    /// Ladder whose injection variances come from dataset samples at full
    /// resolution, pooled down level by level.
    pub fn from_samples(
        base_n: usize,
        times: Vec<f64>,
        samples: &[Vec<f64>],
        t_end: f64,
    ) -> Result<Self> {
        let mut energies = Vec::with_capacity(times.len());
        let mut level: Vec<Vec<f64>> = samples.to_vec();
        for k in 0..times.len() {
            let side = base_n >> k;
            energies.push(perp_energy(&DataSource::Samples(&level), side)?);
            if k + 1 < times.len() {
                level = level
                    .iter()
                    .map(|s| project_level(s, side))
                    .collect::<Result<_>>()?;
            }
        }
        Self::new(base_n, times, energies, t_end)
    }

    pub fn depth(&self) -> usize {
        self.times.len()
    }

    pub fn base_n(&self) -> usize {
        self.base_n
    }

    pub fn side(&self, level: usize) -> usize {
        self.base_n >> level
    }

    pub fn dim(&self, level: usize) -> usize {
        self.side(level) * self.side(level)
    }

    /// Orthonormal-to-physical coordinate scale at a level.
    pub fn scale(&self, level: usize) -> f64 {
        (1u64 << level) as f64
    }

    /// Transition time t_k between level k-1 and k (1-based k).
    pub fn time(&self, k: usize) -> f64 {
        self.times[k - 1]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// E||perp||^2 for the transition between level k-1 and k (1-based k).
    pub fn perp_energy_at(&self, k: usize) -> f64 {
        self.perp_energies[k - 1]
    }

    /// Injection variance at the transition between level k-1 and k.
    pub fn injection_variance(&self, k: usize, schedule: &NoiseSchedule) -> Result<f64> {
        let ab = alpha_bar(schedule, self.time(k))?;
        let delta = (self.dim(k - 1) - self.dim(k)) as f64;
        Ok(ab / delta * self.perp_energy_at(k) + 1.0 - ab)
    }
}
