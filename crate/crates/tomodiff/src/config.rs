//! Run-configuration JSON: schedule, ladder, sampler, prior, and data
//! sources, with fail-fast validation that names the offending path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::reconstruct::{JacobianMode, SamplerConfig, StepMode};
use crate::sde::NoiseSchedule;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub beta_min: f64,
    pub beta_max: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Convenience alias for sampler.steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

fn default_t_end() -> f64 {
    1.0
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = NoiseSchedule::default();
        ScheduleSection {
            beta_min: s.beta_min,
            beta_max: s.beta_max,
            t_end: s.t_end,
            steps: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSection {
    pub levels: usize,
    pub times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Orthogonal energies per transition; computed from the prior when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perp_energies: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_step_mode")]
    pub step_mode: StepMode,
    /// Elliptic smoothing in cell units (mu = value * h^2).
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_jacobian_mode")]
    pub jacobian_mode: JacobianMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_rho() -> f64 {
    1.0
}

fn default_mu() -> f64 {
    4.0
}

fn default_step_mode() -> StepMode {
    StepMode::ResidualProportional
}

fn default_jacobian_mode() -> JacobianMode {
    JacobianMode::ExactVjp
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            rho: default_rho(),
            step_mode: default_step_mode(),
            mu: default_mu(),
            jacobian_mode: default_jacobian_mode(),
            steps: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSection {
    /// Single spherical Gaussian over the field.
    Gaussian { mean: f64, variance: f64 },
    /// Kernel-density mixture over dataset rasters.
    Kde {
        manifest: String,
        bandwidth_sq: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_components: Option<usize>,
    },
    /// Trained denoiser files, one per ladder level (index = level).
    Denoiser { paths: Vec<String> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Measurement CSV path.
    pub measurements: String,
    /// Device configuration JSON path.
    pub config: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<LadderSection>,
    #[serde(default)]
    pub sampler: SamplerSection,
    pub prior: PriorSection,
    pub data: DataSection,
}

impl RunConfig {
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_slice(bytes)
            .map_err(|e| TomoError::format("<run-config>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_json_bytes(&bytes).map_err(|e| match e {
            TomoError::Format { detail, .. } => {
                TomoError::format(path.display().to_string(), detail)
            }
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |path: &str, msg: &str| -> Result<()> {
            Err(TomoError::invalid(format!("{path}: {msg}")))
        };
        if !(self.schedule.beta_min > 0.0 && self.schedule.beta_max > self.schedule.beta_min) {
            return fail("schedule.beta_min/beta_max", "need 0 < beta_min < beta_max");
        }
        if self.schedule.t_end <= 0.0 {
            return fail("schedule.t_end", "must be positive");
        }
        if let Some(steps) = self.schedule.steps.or(self.sampler.steps) {
            if steps < 10 {
                return fail("sampler.steps", "need at least 10 steps per unit time");
            }
        }
        if self.sampler.rho < 0.0 || !self.sampler.rho.is_finite() {
            return fail("sampler.rho", "must be >= 0");
        }
        if self.sampler.mu < 0.0 {
            return fail("sampler.mu", "must be >= 0");
        }
        if let Some(ladder) = &self.ladder {
            if ladder.levels == 0 {
                return fail("ladder.levels", "must be >= 1");
            }
            if ladder.times.len() != ladder.levels {
                return fail("ladder.times", "one transition time per level required");
            }
            let mut prev = 0.0;
            for (i, &t) in ladder.times.iter().enumerate() {
                let ok = (t > prev || (t == prev && t == self.schedule.t_end))
                    && t <= self.schedule.t_end;
                if !ok {
                    return fail(
                        &format!("ladder.times[{i}]"),
                        "times must increase strictly within (0, t_end]",
                    );
                }
                prev = t;
            }
            if let Some(e) = &ladder.perp_energies {
                if e.len() != ladder.levels {
                    return fail("ladder.perp_energies", "one energy per transition required");
                }
                if e.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return fail("ladder.perp_energies", "energies must be >= 0");
                }
            }
        }
        match &self.prior {
            PriorSection::Gaussian { variance, .. } => {
                if *variance <= 0.0 {
                    return fail("prior.variance", "must be positive");
                }
            }
            PriorSection::Kde { bandwidth_sq, manifest, .. } => {
                if *bandwidth_sq <= 0.0 {
                    return fail("prior.bandwidth_sq", "must be positive");
                }
                if manifest.is_empty() {
                    return fail("prior.manifest", "must name a manifest file");
                }
            }
            PriorSection::Denoiser { paths } => {
                if paths.is_empty() {
                    return fail("prior.paths", "need at least the level-0 model");
                }
            }
        }
        if self.data.measurements.is_empty() {
            return fail("data.measurements", "must name a CSV file");
        }
        if self.data.config.is_empty() {
            return fail("data.config", "must name a device-config JSON file");
        }
        Ok(())
    }

    pub fn noise_schedule(&self) -> NoiseSchedule {
        NoiseSchedule {
            beta_min: self.schedule.beta_min,
            beta_max: self.schedule.beta_max,
            t_end: self.schedule.t_end,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            steps_per_unit: self.sampler.steps.or(self.schedule.steps).unwrap_or(500),
            rho: self.sampler.rho,
            step_mode: self.sampler.step_mode,
            mu_cells: self.sampler.mu,
            jacobian_mode: self.sampler.jacobian_mode,
            seed: self.sampler.seed,
            ..SamplerConfig::default()
        }
    }

    /// Resolve a path in the config relative to the config file's directory.
    pub fn resolve(base: &Path, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "prior": {"kind": "gaussian", "mean": 0.5, "variance": 0.04},
            "data": {"measurements": "y.csv", "config": "devices.json"}
        })
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_json_bytes(minimal().to_string().as_bytes()).unwrap();
        assert_eq!(cfg.sampler_config().steps_per_unit, 500);
        assert_eq!(cfg.sampler_config().rho, 1.0);
        assert!((cfg.noise_schedule().beta_max - 20.0).abs() < 1e-15);
    }

    #[test]
    fn validation_names_the_offending_path() {
        let mut v = minimal();
        v["sampler"] = serde_json::json!({"rho": -1.0});
        let err = RunConfig::from_json_bytes(v.to_string().as_bytes()).unwrap_err();
        assert!(err.to_string().contains("sampler.rho"), "{err}");

        let mut v = minimal();
        v["ladder"] = serde_json::json!({"levels": 2, "times": [0.7, 0.4]});
        let err = RunConfig::from_json_bytes(v.to_string().as_bytes()).unwrap_err();
        assert!(err.to_string().contains("ladder.times[1]"), "{err}");

        let mut v = minimal();
        v["prior"] = serde_json::json!({"kind": "kde", "manifest": "m.json", "bandwidth_sq": 0.0});
        let err = RunConfig::from_json_bytes(v.to_string().as_bytes()).unwrap_err();
        assert!(err.to_string().contains("prior.bandwidth_sq"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = minimal();
        v["sampler"] = serde_json::json!({"rho": 1.0, "typo_field": 3});
        assert!(RunConfig::from_json_bytes(v.to_string().as_bytes()).is_err());
    }

    #[test]
    fn roundtrip() {
        let cfg = RunConfig::from_json_bytes(minimal().to_string().as_bytes()).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::from_json_bytes(json.as_bytes()).unwrap();
        assert_eq!(back.sampler.seed, cfg.sampler.seed);
    }
}
