//! Wall-clock comparison of full-space and subspace sampling under shared
//! seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{MeasurementMatrix, SourceReceiverConfig};
use crate::reconstruct::{dps_run, subspace_dps_run, SamplerConfig};
use crate::score::ScoreFunction;
use crate::sde::NoiseSchedule;
use crate::subspace::SubspaceLadder;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub phase: String,
    pub level: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub full_seconds: f64,
    pub subspace_seconds: f64,
    pub time_ratio: f64,
    pub repeats: usize,
}

impl BenchReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = String::from("phase,level,seconds\n");
        for r in &self.rows {
            buf.push_str(&format!("{},{},{:.6}\n", r.phase, r.level, r.seconds));
        }
        crate::io::atomic_write(path, buf.as_bytes())
    }
}

/// Run both samplers `repeats` times with seeds seed, seed+1, ... and
/// report per-phase timings plus the subspace/full wall-clock ratio.
pub fn bench_compare(
    y: &MeasurementMatrix,
    config: &SourceReceiverConfig,
    ladder: &SubspaceLadder,
    score_fns: &[&dyn ScoreFunction],
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    repeats: usize,
) -> Result<BenchReport> {
    let mut rows = Vec::new();
    let mut full_total = 0.0;
    let mut sub_total = 0.0;
    for r in 0..repeats.max(1) {
        let cfg = SamplerConfig {
            seed: sampler.seed + r as u64,
            ..*sampler
        };
        let full = dps_run(y, config, score_fns[0], schedule, &cfg)?;
        for (level, secs) in &full.phase_seconds {
            full_total += secs;
            rows.push(BenchRow {
                phase: format!("full/run{r}"),
                level: *level,
                seconds: *secs,
            });
        }
        let sub = subspace_dps_run(y, config, ladder, score_fns, schedule, &cfg)?;
        for (level, secs) in &sub.phase_seconds {
            sub_total += secs;
            rows.push(BenchRow {
                phase: format!("subspace/run{r}"),
                level: *level,
                seconds: *secs,
            });
        }
    }
    Ok(BenchReport {
        rows,
        full_seconds: full_total,
        subspace_seconds: sub_total,
        time_ratio: sub_total / full_total,
        repeats: repeats.max(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eikonal::forward_map;
    use crate::grid::{build_config, build_grid, Pattern, VelocityField};
    use crate::score::gmm::{Covariance, GmmPrior};
    use crate::score::GmmScore;

    #[test]
    fn collapsed_ladder_ratio_is_near_one() {
        let schedule = NoiseSchedule::default();
        let grid = build_grid(16).unwrap();
        let config = build_config(Pattern::Horizontal, grid, 2, 4).unwrap();
        let truth = VelocityField::constant(grid, 0.55).unwrap();
        let y = forward_map(&truth, &config).unwrap();
        let prior = GmmPrior::new(
            vec![1.0],
            vec![vec![0.5; 256]],
            vec![Covariance::Spherical(0.04)],
        )
        .unwrap();
        let score0 = GmmScore::new(prior.clone(), schedule, 0);
        let score1 = GmmScore::new(prior.project(1, 16).unwrap(), schedule, 1);
        let ladder =
            SubspaceLadder::from_gmm(16, vec![schedule.t_end], &prior, schedule.t_end).unwrap();
        let scores: Vec<&dyn ScoreFunction> = vec![&score0, &score1];
        let cfg = SamplerConfig {
            steps_per_unit: 50,
            rho: 100.0,
            seed: 1,
            ..Default::default()
        };
        let report = bench_compare(&y, &config, &ladder, &scores, &schedule, &cfg, 3).unwrap();
        assert!(
            (0.8..1.25).contains(&report.time_ratio),
            "collapsed ladder ratio {}",
            report.time_ratio
        );
        assert_eq!(report.rows.len(), 6);
    }
}
