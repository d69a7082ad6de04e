//! Box-constrained L-BFGS baseline on the travel-time misfit, with the
//! adjoint-state gradient smoothed by a Gaussian kernel.

use std::collections::VecDeque;
use std::time::Instant;

use ndarray::Array2;

use crate::adjoint::misfit_gradient_report;
use crate::eikonal::forward_map;
use crate::error::{Result, TomoError};
use crate::grid::{MeasurementMatrix, SourceReceiverConfig, VelocityField, C_MAX, C_MIN};
use crate::reconstruct::{ReconstructionResult, SamplerConfig};

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;
const REL_DECREASE_TOL: f64 = 1e-8;
const ABS_MISFIT_TOL: f64 = 1e-12;

/// Separable Gaussian blur with std `sigma` cells, kernel truncated at 3
/// sigma and renormalized at the borders.
pub fn gaussian_smooth(field: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return field.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let n = field.nrows();
    let m = field.ncols();
    let mut tmp = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (w, di) in weights.iter().zip(-radius..=radius) {
                let ii = i as isize + di;
                if ii >= 0 && (ii as usize) < n {
                    acc += w * field[[ii as usize, j]];
                    wsum += w;
                }
            }
            tmp[[i, j]] = acc / wsum;
        }
    }
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (w, dj) in weights.iter().zip(-radius..=radius) {
                let jj = j as isize + dj;
                if jj >= 0 && (jj as usize) < m {
                    acc += w * tmp[[i, jj as usize]];
                    wsum += w;
                }
            }
            out[[i, j]] = acc / wsum;
        }
    }
    out
}

fn eval_misfit(
    c: &Array2<f64>,
    grid: crate::grid::Grid2D,
    config: &SourceReceiverConfig,
    y_obs: &MeasurementMatrix,
) -> Result<(f64, usize)> {
    let field = VelocityField::clamped(grid, c.clone())?;
    let pred = forward_map(&field, config)?;
    let mut e = 0.0;
    for (a, b) in pred.values.iter().zip(y_obs.values.iter()) {
        let r = b - a;
        e += r * r;
    }
    Ok((0.5 * e, config.n_tx()))
}

/// Two-loop-recursion L-BFGS on E(c) with iterates projected to
/// [C_MIN, C_MAX], backtracking Armijo line search, and Gaussian-smoothed
/// adjoint gradients. Stops at `max_iter`, at relative misfit decrease below
/// 1e-8, or at E <= 1e-12.
pub fn lbfgs_run(
    y_obs: &MeasurementMatrix,
    config: &SourceReceiverConfig,
    init: &VelocityField,
    max_iter: usize,
    memory: usize,
    sigma_g: f64,
) -> Result<ReconstructionResult> {
    if config.grid_n != init.grid().n() {
        return Err(TomoError::invalid("init field does not match config"));
    }
    if y_obs.shape() != (config.n_rx(), config.n_tx()) {
        return Err(TomoError::invalid("observations do not match config"));
    }
    let clock = Instant::now();
    let grid = init.grid();
    let d = grid.node_count();
    let mut solver_calls = 0usize;
    let mut warning = None;

    let gradient = |c: &Array2<f64>| -> Result<(f64, Array2<f64>, usize)> {
        let field = VelocityField::clamped(grid, c.clone())?;
        let report = misfit_gradient_report(&field, config, y_obs, 0.0)?;
        let smooth = gaussian_smooth(&report.gradient.values, sigma_g);
        Ok((report.misfit, smooth, report.solver_calls))
    };

    let mut x = init.values().clone();
    let (mut f, mut g, calls) = gradient(&x)?;
    solver_calls += calls;
    let mut history = vec![f];
    let mut best = (f, x.clone());

    let mut s_list: VecDeque<Vec<f64>> = VecDeque::with_capacity(memory);
    let mut y_list: VecDeque<Vec<f64>> = VecDeque::with_capacity(memory);

    'outer: for _iter in 0..max_iter {
        if f <= ABS_MISFIT_TOL {
            break;
        }
        // two-loop recursion
        let mut q: Vec<f64> = g.iter().cloned().collect();
        let mut alphas = Vec::with_capacity(s_list.len());
        for (s, yv) in s_list.iter().rev().zip(y_list.iter().rev()) {
            let rho = 1.0 / dot(yv, s);
            let a = rho * dot(s, &q);
            axpy(&mut q, yv, -a);
            alphas.push((rho, a));
        }
        if let (Some(s), Some(yv)) = (s_list.back(), y_list.back()) {
            let gamma = dot(s, yv) / dot(yv, yv);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, yv), (rho, a)) in s_list.iter().zip(y_list.iter()).zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &q);
            axpy(&mut q, s, a - b);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let g_flat: Vec<f64> = g.iter().cloned().collect();
        if dot(&dir, &g_flat) >= 0.0 {
            dir = g_flat.iter().map(|v| -v).collect();
        }

        // first iteration: scale the raw-gradient step to a sane magnitude
        let mut alpha = if s_list.is_empty() {
            1.0 / (1.0 + norm(&dir))
        } else {
            1.0
        };

        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let mut x_new = x.clone();
            for (v, dv) in x_new.iter_mut().zip(dir.iter()) {
                *v = (*v + alpha * dv).clamp(C_MIN, C_MAX);
            }
            let (f_new, calls) = eval_misfit(&x_new, grid, config, y_obs)?;
            solver_calls += calls;
            // projected Armijo: decrease measured against the actual move
            let step: Vec<f64> = x_new
                .iter()
                .zip(x.iter())
                .map(|(a, b)| a - b)
                .collect();
            let slope = dot(&g_flat, &step);
            if f_new <= f + ARMIJO_C1 * slope && f_new < f {
                let (_f_chk, g_new, calls) = gradient(&x_new)?;
                solver_calls += calls;
                let y_vec: Vec<f64> = g_new
                    .iter()
                    .zip(g.iter())
                    .map(|(a, b)| a - b)
                    .collect();
                let sy = dot(&step, &y_vec);
                if sy > 1e-12 * norm(&step) * norm(&y_vec) {
                    if s_list.len() == memory {
                        s_list.pop_front();
                        y_list.pop_front();
                    }
                    s_list.push_back(step);
                    y_list.push_back(y_vec);
                }
                let f_prev = f;
                x = x_new;
                f = f_new;
                g = g_new;
                history.push(f);
                if f < best.0 {
                    best = (f, x.clone());
                }
                accepted = true;
                if (f_prev - f) / f_prev.max(ABS_MISFIT_TOL) < REL_DECREASE_TOL {
                    break 'outer;
                }
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            warning = Some(format!(
                "line search failed after {MAX_HALVINGS} halvings; best iterate returned"
            ));
            break;
        }
        let _ = d;
    }

    let field = VelocityField::clamped(grid, best.1)?;
    Ok(ReconstructionResult {
        field,
        history,
        phase_seconds: vec![(0, clock.elapsed().as_secs_f64())],
        solver_calls,
        seed: 0,
        config: SamplerConfig::default(),
        warning,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(target: &mut [f64], src: &[f64], scale: f64) {
    for (t, s) in target.iter_mut().zip(src.iter()) {
        *t += scale * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_config, Grid2D, Pattern};

    #[test]
    fn ground_truth_init_terminates_immediately() {
        let grid = Grid2D::new(17).unwrap();
        let truth = VelocityField::constant(grid, 0.6).unwrap();
        let cfg = build_config(Pattern::Horizontal, grid, 2, 3).unwrap();
        let y = forward_map(&truth, &cfg).unwrap();
        let run = lbfgs_run(&y, &cfg, &truth, 30, 10, 2.0).unwrap();
        assert!(run.history[0] <= 1e-12);
        assert_eq!(run.history.len(), 1);
    }

    #[test]
    fn recovers_constant_field() {
        let grid = Grid2D::new(33).unwrap();
        let truth = VelocityField::constant(grid, 0.7).unwrap();
        let cfg = build_config(Pattern::Surrounding, grid, 8, 24).unwrap();
        let y = forward_map(&truth, &cfg).unwrap();
        let init = VelocityField::constant(grid, 0.4).unwrap();
        let run = lbfgs_run(&y, &cfg, &init, 30, 10, 2.0).unwrap();
        let max_err = run
            .field
            .values()
            .iter()
            .fold(0.0f64, |m, v| m.max((v - 0.7).abs()));
        assert!(max_err <= 0.05, "L-inf error {max_err}");
    }

    #[test]
    fn misfit_history_is_non_increasing() {
        let grid = Grid2D::new(17).unwrap();
        let vals = Array2::from_shape_fn((17, 17), |(i, j)| {
            0.5 + 0.2 * ((i as f64 * 0.4).sin() * (j as f64 * 0.3).cos())
        });
        let truth = VelocityField::new(grid, vals).unwrap();
        let cfg = build_config(Pattern::Vertical, grid, 3, 5).unwrap();
        let y = forward_map(&truth, &cfg).unwrap();
        let init = VelocityField::constant(grid, 0.5).unwrap();
        let run = lbfgs_run(&y, &cfg, &init, 15, 10, 2.0).unwrap();
        for w in run.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        assert!(run.history.last().unwrap() < &run.history[0]);
    }

    #[test]
    fn gaussian_smooth_preserves_constants() {
        let c = Array2::from_elem((9, 9), 0.4);
        let s = gaussian_smooth(&c, 2.0);
        assert!(s.iter().all(|v| (v - 0.4).abs() < 1e-12));
        let f = Array2::from_shape_fn((9, 9), |(i, j)| (i * 9 + j) as f64);
        assert_eq!(gaussian_smooth(&f, 0.0), f);
    }
}
