//! Posterior sampling: full-space DPS and subspace DPS with adjoint-state
//! likelihood guidance, plus the final denoising step.
//!
//! Both samplers run through one engine. A run is a list of phases, one per
//! ladder level, integrating the reverse SDE on [t_k, t_{k+1}] with the
//! level-k score and the pooled observations; empty phases (transition time
//! at t_end) are dropped, which makes a collapsed ladder reproduce the
//! full-space trajectory bit for bit under shared seeds.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::adjoint::misfit_gradient_report;
use crate::eikonal::forward_map;
use crate::error::{Result, TomoError};
use crate::grid::{pool_config, pool_measurements, Grid2D, MeasurementMatrix, SourceReceiverConfig, VelocityField, C_MAX, C_MIN};
use crate::rng::{Purpose, StreamSeed};
use crate::score::ScoreFunction;
use crate::sde::{alpha_bar, reverse_step, tweedie, DiffusionState, NoiseSchedule};
use crate::subspace::{inject_up, SubspaceLadder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepMode {
    /// rho' = rho
    Fixed,
    /// rho' = rho * ||y - A(x0_hat)||, as in the step-size schedule study
    ResidualProportional,
    /// rho' = rho / max(||y - A(x0_hat)||, 1e-8), the DPS convention
    ResidualNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    /// Pull the misfit gradient back through the Tweedie map with the exact
    /// score VJP.
    ExactVjp,
    /// Drop the score Jacobian term; keeps the 1/sqrt(alpha_bar) factor.
    JacobianFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Reverse steps per unit diffusion time (500 covers [0, 1] in 500 steps).
    pub steps_per_unit: usize,
    /// Guidance scale. Grid quadrature and misfit constants are folded in.
    pub rho: f64,
    pub step_mode: StepMode,
    /// Elliptic smoothing in cell units: mu = mu_cells * h^2 at each level.
    pub mu_cells: f64,
    pub jacobian_mode: JacobianMode,
    pub clamp: (f64, f64),
    /// Final denoising time as a fraction of t_end.
    pub eps_final_frac: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps_per_unit: 500,
            rho: 1.0,
            step_mode: StepMode::ResidualProportional,
            mu_cells: 4.0,
            jacobian_mode: JacobianMode::ExactVjp,
            clamp: (C_MIN, C_MAX),
            eps_final_frac: 1e-3,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_unit < 10 {
            return Err(TomoError::invalid("need at least 10 steps per unit time"));
        }
        if self.rho < 0.0 || !self.rho.is_finite() {
            return Err(TomoError::invalid("rho must be >= 0"));
        }
        if self.mu_cells < 0.0 {
            return Err(TomoError::invalid("mu_cells must be >= 0"));
        }
        if !(self.eps_final_frac > 0.0 && self.eps_final_frac < 1.0) {
            return Err(TomoError::invalid("eps_final_frac must lie in (0, 1)"));
        }
        if !(self.clamp.0 >= C_MIN && self.clamp.1 <= C_MAX && self.clamp.0 < self.clamp.1) {
            return Err(TomoError::invalid(format!(
                "clamp range must sit inside [{C_MIN}, {C_MAX}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub field: VelocityField,
    /// Misfit at every reverse step (or optimizer iteration).
    pub history: Vec<f64>,
    /// (level, wall-clock seconds) per phase.
    pub phase_seconds: Vec<(usize, f64)>,
    /// Forward + adjoint PDE sweeps spent.
    pub solver_calls: usize,
    pub seed: u64,
    pub config: SamplerConfig,
    pub warning: Option<String>,
}

/// Approximate gradient of the log-likelihood at a diffusion state:
/// -rho' * (d x0_hat / d x_t)^T grad_x0 ||y - A(x0_hat)||^2 in the smoothed
/// metric, evaluated through the adjoint solver.
pub fn likelihood_grad(
    state: &DiffusionState,
    score_fn: &dyn ScoreFunction,
    y_k: &MeasurementMatrix,
    config_k: &SourceReceiverConfig,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let s = score_fn.score(&state.x, state.t);
    let (v, _report) = guidance(state, &s, score_fn, y_k, config_k, cfg, schedule)?;
    Ok(v)
}

struct GuidanceReport {
    misfit: f64,
    solver_calls: usize,
}

/// Core of [`likelihood_grad`] with the score at x_t already evaluated.
fn guidance(
    state: &DiffusionState,
    score_at_x: &[f64],
    score_fn: &dyn ScoreFunction,
    y_k: &MeasurementMatrix,
    config_k: &SourceReceiverConfig,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
) -> Result<(Vec<f64>, GuidanceReport)> {
    let side = config_k.grid_n;
    let scale = (1u64 << state.level) as f64;
    if state.x.len() != side * side {
        return Err(TomoError::invalid(format!(
            "state dimension {} does not match level-{} config side {side}",
            state.x.len(),
            state.level
        )));
    }
    let ab = alpha_bar(schedule, state.t)?;
    let x0_hat = tweedie(&state.x, state.t, score_at_x, schedule)?;
    let c = state_to_velocity(&x0_hat, side, scale, cfg)?;
    let report = misfit_gradient_report(&c, config_k, y_k, cfg.mu_cells * level_h2(side))?;

    // Chain rule of the coordinate scale, with the grid quadrature weight
    // folded in so the same rho works at every ladder level.
    let h2 = level_h2(side);
    let g_coord: Vec<f64> = report
        .gradient
        .values
        .iter()
        .map(|g| g * h2 / scale)
        .collect();
    let w = match cfg.jacobian_mode {
        JacobianMode::ExactVjp => {
            let jv = score_fn.vjp(&state.x, state.t, &g_coord);
            g_coord
                .iter()
                .zip(jv.iter())
                .map(|(g, j)| (g + (1.0 - ab) * j) / ab.sqrt())
                .collect::<Vec<f64>>()
        }
        JacobianMode::JacobianFree => g_coord.iter().map(|g| g / ab.sqrt()).collect(),
    };
    let rho_eff = match cfg.step_mode {
        StepMode::Fixed => cfg.rho,
        StepMode::ResidualProportional => cfg.rho * report.residual_norm,
        StepMode::ResidualNormalized => cfg.rho / report.residual_norm.max(1e-8),
    };
    let v: Vec<f64> = w.iter().map(|w| -rho_eff * w).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(TomoError::numerical(format!(
            "guidance became non-finite at t = {}",
            state.t
        )));
    }
    Ok((
        v,
        GuidanceReport {
            misfit: report.misfit,
            solver_calls: report.solver_calls,
        },
    ))
}

fn level_h2(side: usize) -> f64 {
    let h = 1.0 / (side as f64 - 1.0);
    h * h
}

fn state_to_velocity(
    x0_hat: &[f64],
    side: usize,
    scale: f64,
    cfg: &SamplerConfig,
) -> Result<VelocityField> {
    let grid = Grid2D::new(side)?;
    let values = Array2::from_shape_vec(
        (side, side),
        x0_hat
            .iter()
            .map(|v| (v / scale).clamp(cfg.clamp.0, cfg.clamp.1))
            .collect(),
    )
    .expect("shape");
    VelocityField::clamped(grid, values)
}

/// Tweedie estimate at the final time eps = eps_frac * t_end.
pub fn final_denoise(
    state: &DiffusionState,
    score_fn: &dyn ScoreFunction,
    schedule: &NoiseSchedule,
    eps_frac: f64,
) -> Result<Vec<f64>> {
    let eps = eps_frac * schedule.t_end;
    let s = score_fn.score(&state.x, eps);
    tweedie(&state.x, eps, &s, schedule)
}

/// Full-space diffusion posterior sampling.
pub fn dps_run(
    y: &MeasurementMatrix,
    config: &SourceReceiverConfig,
    score_fn: &dyn ScoreFunction,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<ReconstructionResult> {
    run_engine(y, config, None, &[score_fn], schedule, cfg)
}

/// Subspace sampling: the coarsest phase starts from N(0, I), each boundary
/// injects matched orthogonal noise, and every phase is guided by the pooled
/// observations at its own resolution.
pub fn subspace_dps_run(
    y: &MeasurementMatrix,
    config: &SourceReceiverConfig,
    ladder: &SubspaceLadder,
    score_fns: &[&dyn ScoreFunction],
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<ReconstructionResult> {
    run_engine(y, config, Some(ladder), score_fns, schedule, cfg)
}

struct Phase {
    level: usize,
    t_hi: f64,
    t_lo: f64,
}

fn run_engine(
    y: &MeasurementMatrix,
    config: &SourceReceiverConfig,
    ladder: Option<&SubspaceLadder>,
    score_fns: &[&dyn ScoreFunction],
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<ReconstructionResult> {
    cfg.validate()?;
    schedule.validate()?;
    if config.level != 0 {
        return Err(TomoError::invalid("config must be at full resolution"));
    }
    if y.shape() != (config.n_rx(), config.n_tx()) {
        return Err(TomoError::invalid("observations do not match config"));
    }
    let base_n = config.grid_n;
    let depth = match ladder {
        Some(l) => {
            if l.base_n() != base_n {
                return Err(TomoError::invalid("ladder side does not match config"));
            }
            l.depth()
        }
        None => 0,
    };
    if score_fns.len() != depth + 1 {
        return Err(TomoError::invalid(format!(
            "need one score per level: {} levels, {} scores",
            depth + 1,
            score_fns.len()
        )));
    }
    for (k, s) in score_fns.iter().enumerate() {
        let side = base_n >> k;
        if s.dim() != side * side {
            return Err(TomoError::invalid(format!(
                "score {k} has dimension {}, level needs {}",
                s.dim(),
                side * side
            )));
        }
    }

    let eps = cfg.eps_final_frac * schedule.t_end;
    let mut phases = Vec::new();
    for k in (0..=depth).rev() {
        let t_hi = if k == depth {
            schedule.t_end
        } else {
            ladder.expect("depth > 0").time(k + 1)
        };
        let t_lo = if k == 0 {
            eps
        } else {
            ladder.expect("depth > 0").time(k)
        };
        if t_hi > t_lo + 1e-15 {
            phases.push(Phase { level: k, t_hi, t_lo });
        }
    }
    if phases.is_empty() || phases.last().unwrap().level != 0 {
        return Err(TomoError::invalid("ladder leaves no full-resolution phase"));
    }

    // pooled observations and configs per used level
    let mut level_data = Vec::new();
    for phase in &phases {
        let k = phase.level;
        level_data.push((pool_measurements(y, k)?, pool_config(config, k)?));
    }

    let streams = StreamSeed(cfg.seed);
    let start_level = phases[0].level;
    let mut init_rng = streams.stream(Purpose::Init, start_level, 0);
    let d0 = {
        let side = base_n >> start_level;
        side * side
    };
    let mut state = DiffusionState {
        x: (0..d0)
            .map(|_| rand::Rng::sample::<f64, _>(&mut init_rng, rand_distr::StandardNormal))
            .collect(),
        t: schedule.t_end,
        level: start_level,
    };

    let mut history = Vec::new();
    let mut phase_seconds = Vec::new();
    let mut solver_calls = 0usize;

    for (p, phase) in phases.iter().enumerate() {
        let clock = Instant::now();
        let score_fn = score_fns[phase.level];
        let (y_k, config_k) = &level_data[p];
        let span = phase.t_hi - phase.t_lo;
        let steps = ((span * cfg.steps_per_unit as f64).round() as usize).max(1);
        let dt = span / steps as f64;
        let mut step_rng = streams.stream(Purpose::StepNoise, phase.level, 0);
        state.t = phase.t_hi;

        for _ in 0..steps {
            let s = score_fn.score(&state.x, state.t);
            let (v, misfit) = if cfg.rho > 0.0 {
                let (v, report) = guidance(&state, &s, score_fn, y_k, config_k, cfg, schedule)?;
                solver_calls += report.solver_calls;
                (Some(v), report.misfit)
            } else {
                // guidance off: record the misfit of the current estimate
                let x0_hat = tweedie(&state.x, state.t, &s, schedule)?;
                let scale = (1u64 << state.level) as f64;
                let c = state_to_velocity(&x0_hat, config_k.grid_n, scale, cfg)?;
                let pred = forward_map(&c, config_k)?;
                solver_calls += config_k.n_tx();
                let mut e = 0.0;
                for (a, b) in pred.values.iter().zip(y_k.values.iter()) {
                    let r = b - a;
                    e += r * r;
                }
                (None, 0.5 * e)
            };
            history.push(misfit);
            let total: Vec<f64> = match &v {
                Some(v) => s.iter().zip(v.iter()).map(|(a, b)| a + b).collect(),
                None => s,
            };
            state = reverse_step(schedule, &state, dt, |_, _| total, &mut step_rng)?;
        }
        state.t = phase.t_lo;
        phase_seconds.push((phase.level, clock.elapsed().as_secs_f64()));

        // boundary: inject the orthogonal complement and move one level up
        if phase.level > 0 {
            let ladder = ladder.expect("coarse phase implies ladder");
            let k = phase.level;
            let sigma = ladder.injection_variance(k, schedule)?;
            let mut inject_rng = streams.stream(Purpose::Inject, k, 0);
            state = DiffusionState {
                x: inject_up(&state.x, sigma, &mut inject_rng)?,
                t: phase.t_lo,
                level: k - 1,
            };
        }
    }

    let x0 = final_denoise(&state, score_fns[0], schedule, cfg.eps_final_frac)?;
    let field = state_to_velocity(&x0, base_n, 1.0, cfg)?;
    Ok(ReconstructionResult {
        field,
        history,
        phase_seconds,
        solver_calls,
        seed: cfg.seed,
        config: *cfg,
        warning: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_config, build_grid, Pattern};
    use crate::score::gmm::{Covariance, GmmPrior};
    use crate::score::GmmScore;

    fn gaussian_prior(dim: usize, mean: f64, var: f64) -> GmmPrior {
        GmmPrior::new(
            vec![1.0],
            vec![vec![mean; dim]],
            vec![Covariance::Spherical(var)],
        )
        .unwrap()
    }

    #[test]
    fn rho_zero_matches_unconditional_sampler() {
        let schedule = NoiseSchedule::default();
        let grid = build_grid(8).unwrap();
        let config = build_config(Pattern::Horizontal, grid, 2, 3).unwrap();
        let truth = VelocityField::constant(grid, 0.6).unwrap();
        let y = forward_map(&truth, &config).unwrap();
        let prior = gaussian_prior(64, 0.5, 0.04);
        let score = GmmScore::new(prior.clone(), schedule, 0);
        let cfg = SamplerConfig {
            steps_per_unit: 20,
            rho: 0.0,
            seed: 3,
            ..Default::default()
        };
        let run = dps_run(&y, &config, &score, &schedule, &cfg).unwrap();

        // replay the unconditional reverse SDE with the same streams
        let streams = StreamSeed(3);
        let mut rng = streams.stream(Purpose::Init, 0, 0);
        let mut state = DiffusionState {
            x: (0..64)
                .map(|_| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal))
                .collect(),
            t: schedule.t_end,
            level: 0,
        };
        let eps = cfg.eps_final_frac * schedule.t_end;
        let steps = (((schedule.t_end - eps) * 20.0).round() as usize).max(1);
        let dt = (schedule.t_end - eps) / steps as f64;
        let mut step_rng = streams.stream(Purpose::StepNoise, 0, 0);
        for _ in 0..steps {
            let s = score.score(&state.x, state.t);
            state = reverse_step(&schedule, &state, dt, |_, _| s, &mut step_rng).unwrap();
        }
        state.t = eps;
        let x0 = final_denoise(&state, &score, &schedule, cfg.eps_final_frac).unwrap();
        let manual: Vec<f64> = x0
            .iter()
            .map(|v| v.clamp(cfg.clamp.0, cfg.clamp.1))
            .collect();
        for (a, b) in run.field.values().iter().zip(manual.iter()) {
            assert_eq!(a, b);
        }
        assert_eq!(run.history.len(), steps);
    }

    #[test]
    fn deterministic_replay() {
        let schedule = NoiseSchedule::default();
        let grid = build_grid(8).unwrap();
        let config = build_config(Pattern::Vertical, grid, 2, 2).unwrap();
        let truth = VelocityField::constant(grid, 0.7).unwrap();
        let y = forward_map(&truth, &config).unwrap();
        let prior = gaussian_prior(64, 0.5, 0.04);
        let score = GmmScore::new(prior, schedule, 0);
        let cfg = SamplerConfig {
            steps_per_unit: 15,
            rho: 0.5,
            seed: 11,
            ..Default::default()
        };
        let a = dps_run(&y, &config, &score, &schedule, &cfg).unwrap();
        let b = dps_run(&y, &config, &score, &schedule, &cfg).unwrap();
        assert_eq!(a.field.values(), b.field.values());
        assert_eq!(a.history, b.history);
        assert_eq!(a.solver_calls, b.solver_calls);
    }

    #[test]
    fn likelihood_grad_identities() {
        let schedule = NoiseSchedule::default();
        let grid = build_grid(8).unwrap();
        let config = build_config(Pattern::Horizontal, grid, 2, 3).unwrap();
        let prior = gaussian_prior(64, 0.5, 0.09);
        let score = GmmScore::new(prior, schedule, 0);

        // rho = 0 gives the zero vector
        let state = DiffusionState {
            x: vec![0.4; 64],
            t: 0.5,
            level: 0,
        };
        let truth = VelocityField::constant(grid, 0.6).unwrap();
        let y = forward_map(&truth, &config).unwrap();
        let cfg0 = SamplerConfig {
            rho: 0.0,
            step_mode: StepMode::Fixed,
            ..Default::default()
        };
        let v = likelihood_grad(&state, &score, &y, &config, &cfg0, &schedule).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));

        // zero residual gives ~zero guidance
        let s = score.score(&state.x, state.t);
        let x0_hat = tweedie(&state.x, state.t, &s, &schedule).unwrap();
        let cfg1 = SamplerConfig {
            rho: 2.0,
            step_mode: StepMode::Fixed,
            ..Default::default()
        };
        let c = state_to_velocity(&x0_hat, 8, 1.0, &cfg1).unwrap();
        let y_self = forward_map(&c, &config).unwrap();
        let v = likelihood_grad(&state, &score, &y_self, &config, &cfg1, &schedule).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-9), "max {}", v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    }

    #[test]
    fn guidance_is_a_descent_direction() {
        let schedule = NoiseSchedule::default();
        let grid = build_grid(8).unwrap();
        let config = build_config(Pattern::Surrounding, grid, 4, 8).unwrap();
        let prior = gaussian_prior(64, 0.5, 0.09);
        let score = GmmScore::new(prior, schedule, 0);
        let truth = VelocityField::constant(grid, 0.35).unwrap();
        let y = forward_map(&truth, &config).unwrap();
        let state = DiffusionState {
            x: vec![0.55; 64],
            t: 0.3,
            level: 0,
        };
        let s = score.score(&state.x, state.t);
        for mode in [JacobianMode::ExactVjp, JacobianMode::JacobianFree] {
            let cfg = SamplerConfig {
                rho: 1.0,
                step_mode: StepMode::Fixed,
                jacobian_mode: mode,
                ..Default::default()
            };
            let (v, _) = guidance(&state, &s, &score, &y, &config, &cfg, &schedule).unwrap();
            // inner product with the lifted misfit gradient must be <= 0
            let x0_hat = tweedie(&state.x, state.t, &s, &schedule).unwrap();
            let c = state_to_velocity(&x0_hat, 8, 1.0, &cfg).unwrap();
            let report = misfit_gradient_report(&c, &config, &y, cfg.mu_cells * level_h2(8)).unwrap();
            let ip: f64 = v
                .iter()
                .zip(report.gradient.values.iter())
                .map(|(a, b)| a * b)
                .sum();
            assert!(ip <= 0.0, "{mode:?} not a descent direction: {ip}");
        }
    }

    #[test]
    fn collapsed_ladder_reproduces_full_space_run() {
        let schedule = NoiseSchedule::default();
        let grid = build_grid(16).unwrap();
        let config = build_config(Pattern::Horizontal, grid, 2, 4).unwrap();
        let truth = VelocityField::constant(grid, 0.55).unwrap();
        let y = forward_map(&truth, &config).unwrap();
        let prior = gaussian_prior(256, 0.5, 0.04);
        let score = GmmScore::new(prior.clone(), schedule, 0);
        let cfg = SamplerConfig {
            steps_per_unit: 12,
            rho: 0.8,
            seed: 21,
            ..Default::default()
        };
        let full = dps_run(&y, &config, &score, &schedule, &cfg).unwrap();

        let ladder = SubspaceLadder::from_gmm(16, vec![schedule.t_end], &prior, schedule.t_end)
            .unwrap();
        let coarse_score = GmmScore::new(prior.project(1, 16).unwrap(), schedule, 1);
        let scores: Vec<&dyn ScoreFunction> = vec![&score, &coarse_score];
        let sub = subspace_dps_run(&y, &config, &ladder, &scores, &schedule, &cfg).unwrap();
        assert_eq!(full.field.values(), sub.field.values());
        assert_eq!(full.history, sub.history);
    }

    #[test]
    fn gaussian_prior_descent_on_tiny_grid() {
        let schedule = NoiseSchedule::default();
        let grid = build_grid(16).unwrap();
        let config = build_config(Pattern::Surrounding, grid, 4, 8).unwrap();
        let mut truth_vals = Array2::from_elem((16, 16), 0.65);
        for i in 5..10 {
            for j in 6..11 {
                truth_vals[[i, j]] = 0.35;
            }
        }
        let truth = VelocityField::new(grid, truth_vals).unwrap();
        let y = forward_map(&truth, &config).unwrap();
        let prior = gaussian_prior(256, 0.5, 0.04);
        let score = GmmScore::new(prior, schedule, 0);
        let mut finals = Vec::new();
        for seed in 0..5 {
            let cfg = SamplerConfig {
                steps_per_unit: 500,
                rho: 200.0,
                seed,
                ..Default::default()
            };
            let run = dps_run(&y, &config, &score, &schedule, &cfg).unwrap();
            finals.push(run.history.last().unwrap() / run.history.first().unwrap());
        }
        finals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(
            finals[2] <= 0.2,
            "median final/initial misfit {} > 0.2",
            finals[2]
        );
    }

    #[test]
    fn subspace_run_descends_and_times_phases() {
        let schedule = NoiseSchedule::default();
        let grid = build_grid(32).unwrap();
        let config = build_config(Pattern::Surrounding, grid, 4, 8).unwrap();
        let truth = VelocityField::constant(grid, 0.45).unwrap();
        let y = forward_map(&truth, &config).unwrap();
        let prior = gaussian_prior(1024, 0.5, 0.04);
        let score0 = GmmScore::new(prior.clone(), schedule, 0);
        let coarse = prior.project(1, 32).unwrap();
        let score1 = GmmScore::new(coarse, schedule, 1);
        let ladder = SubspaceLadder::from_gmm(32, vec![0.5], &prior, schedule.t_end).unwrap();
        let scores: Vec<&dyn ScoreFunction> = vec![&score0, &score1];
        let mut finals = Vec::new();
        for seed in 0..5 {
            let cfg = SamplerConfig {
                steps_per_unit: 200,
                rho: 1000.0,
                seed,
                ..Default::default()
            };
            let run = subspace_dps_run(&y, &config, &ladder, &scores, &schedule, &cfg).unwrap();
            assert_eq!(run.phase_seconds.len(), 2);
            assert_eq!(run.phase_seconds[0].0, 1);
            assert_eq!(run.phase_seconds[1].0, 0);
            finals.push(run.history.last().unwrap() / run.history.first().unwrap());
        }
        finals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(finals[2] <= 0.2, "median ratio {}", finals[2]);
    }

    #[test]
    fn final_denoise_identities() {
        let schedule = NoiseSchedule::default();
        let prior = gaussian_prior(16, 0.3, 0.25);
        let score = GmmScore::new(prior.clone(), schedule, 0);
        let state = DiffusionState {
            x: vec![0.31; 16],
            t: 1e-3,
            level: 0,
        };
        // zero score: near identity at eps
        struct Zero;
        impl ScoreFunction for Zero {
            fn level(&self) -> usize {
                0
            }
            fn dim(&self) -> usize {
                16
            }
            fn score(&self, x: &[f64], _t: f64) -> Vec<f64> {
                vec![0.0; x.len()]
            }
            fn vjp(&self, _x: &[f64], _t: f64, v: &[f64]) -> Vec<f64> {
                vec![0.0; v.len()]
            }
        }
        let out = final_denoise(&state, &Zero, &schedule, 1e-3).unwrap();
        for (a, b) in out.iter().zip(state.x.iter()) {
            assert!((a - b).abs() < 1e-4);
        }

        // Gaussian prior: equals the analytic posterior mean at eps
        let eps = 1e-3;
        let ab = alpha_bar(&schedule, eps).unwrap();
        let v = ab * 0.25 + 1.0 - ab;
        let got = final_denoise(&state, &score, &schedule, eps).unwrap();
        for (g, x) in got.iter().zip(state.x.iter()) {
            let want = 0.3 * (1.0 - ab) / v + ab.sqrt() * 0.25 * x / v;
            assert!((g - want).abs() < 1e-8);
        }

        // near idempotence at eps
        let state2 = DiffusionState {
            x: got.clone(),
            t: eps * schedule.t_end,
            level: 0,
        };
        let twice = final_denoise(&state2, &score, &schedule, eps).unwrap();
        let norm: f64 = got.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff: f64 = twice
            .iter()
            .zip(got.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff / norm < 1e-3);
    }

    #[test]
    fn residual_proportional_mode_tracks_history() {
        // with rho' = rho * ||r||, the guidance magnitude shrinks with the
        // misfit; check the recorded history is consistent with rho_eff
        let schedule = NoiseSchedule::default();
        let grid = build_grid(8).unwrap();
        let config = build_config(Pattern::Horizontal, grid, 2, 3).unwrap();
        let truth = VelocityField::constant(grid, 0.6).unwrap();
        let y = forward_map(&truth, &config).unwrap();
        let prior = gaussian_prior(64, 0.5, 0.09);
        let score = GmmScore::new(prior, schedule, 0);
        let state = DiffusionState {
            x: vec![0.5; 64],
            t: 0.4,
            level: 0,
        };
        let s = score.score(&state.x, state.t);
        let fixed = SamplerConfig {
            rho: 1.0,
            step_mode: StepMode::Fixed,
            ..Default::default()
        };
        let prop = SamplerConfig {
            rho: 1.0,
            step_mode: StepMode::ResidualProportional,
            ..Default::default()
        };
        let (vf, rep) = guidance(&state, &s, &score, &y, &config, &fixed, &schedule).unwrap();
        let (vp, _) = guidance(&state, &s, &score, &y, &config, &prop, &schedule).unwrap();
        let norm = (2.0 * rep.misfit).sqrt();
        for (a, b) in vf.iter().zip(vp.iter()) {
            assert!((a * norm - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
