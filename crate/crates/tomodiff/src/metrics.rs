//! Reconstruction quality metrics (RMSE, SSIM) and directory-level
//! evaluation reports.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::io::read_raster;

/// sqrt(mean((a - b)^2)).
pub fn rmse(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(TomoError::invalid("rmse shape mismatch"));
    }
    let s: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((s / a.len() as f64).sqrt())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 1.0;

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-0.5 * ((i as f64 - c) / SSIM_SIGMA).powi(2)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1 = 0.01,
/// K2 = 0.03, data range 1).
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(TomoError::invalid("ssim shape mismatch"));
    }
    let (n, m) = a.dim();
    if n < SSIM_WINDOW || m < SSIM_WINDOW {
        return Err(TomoError::invalid(format!(
            "ssim needs sides >= {SSIM_WINDOW}, got {n}x{m}"
        )));
    }
    let kernel = ssim_kernel();
    let c1 = (SSIM_K1 * SSIM_L).powi(2);
    let c2 = (SSIM_K2 * SSIM_L).powi(2);

    // separable window sums for a, b, a^2, b^2, ab
    let blur = |f: &dyn Fn(usize, usize) -> f64| -> Array2<f64> {
        let mut rows = Array2::zeros((n, m - SSIM_WINDOW + 1));
        for i in 0..n {
            for j in 0..m - SSIM_WINDOW + 1 {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * f(i, j + k);
                }
                rows[[i, j]] = acc;
            }
        }
        let mut out = Array2::zeros((n - SSIM_WINDOW + 1, m - SSIM_WINDOW + 1));
        for i in 0..n - SSIM_WINDOW + 1 {
            for j in 0..m - SSIM_WINDOW + 1 {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * rows[[i + k, j]];
                }
                out[[i, j]] = acc;
            }
        }
        out
    };

    let mu_a = blur(&|i, j| a[[i, j]]);
    let mu_b = blur(&|i, j| b[[i, j]]);
    let aa = blur(&|i, j| a[[i, j]] * a[[i, j]]);
    let bb = blur(&|i, j| b[[i, j]] * b[[i, j]]);
    let ab = blur(&|i, j| a[[i, j]] * b[[i, j]]);

    let mut total = 0.0;
    for i in 0..mu_a.nrows() {
        for j in 0..mu_a.ncols() {
            let (ma, mb) = (mu_a[[i, j]], mu_b[[i, j]]);
            let va = aa[[i, j]] - ma * ma;
            let vb = bb[[i, j]] - mb * mb;
            let cov = ab[[i, j]] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (mu_a.len() as f64))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub rmse: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub samples: Vec<SampleMetrics>,
    pub mean_rmse: f64,
    pub median_rmse: f64,
    pub mean_ssim: f64,
    pub median_ssim: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

impl EvalReport {
    pub fn from_samples(method: &str, mut samples: Vec<SampleMetrics>) -> Result<Self> {
        if samples.is_empty() {
            return Err(TomoError::invalid("no samples to aggregate"));
        }
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rmses: Vec<f64> = samples.iter().map(|s| s.rmse).collect();
        let mut ssims: Vec<f64> = samples.iter().map(|s| s.ssim).collect();
        rmses.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ssims.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(EvalReport {
            method: method.to_string(),
            mean_rmse: rmses.iter().sum::<f64>() / rmses.len() as f64,
            median_rmse: median(&rmses),
            mean_ssim: ssims.iter().sum::<f64>() / ssims.len() as f64,
            median_ssim: median(&ssims),
            samples,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = String::from("id,rmse,ssim\n");
        for s in &self.samples {
            buf.push_str(&format!("{},{:.17e},{:.17e}\n", s.id, s.rmse, s.ssim));
        }
        crate::io::atomic_write(path, buf.as_bytes())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)
            .map_err(|e| TomoError::format(path.display().to_string(), e.to_string()))?;
        crate::io::atomic_write(path, &json)
    }
}

fn raster_ids(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".raster") {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

/// Pair rasters in two directories by file stem and compute per-sample and
/// aggregate metrics.
pub fn evaluate(results_dir: &Path, truth_dir: &Path, method: &str) -> Result<EvalReport> {
    let results = raster_ids(results_dir)?;
    let truths = raster_ids(truth_dir)?;
    let missing: Vec<String> = truths
        .keys()
        .filter(|id| !results.contains_key(*id))
        .chain(results.keys().filter(|id| !truths.contains_key(*id)))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(TomoError::invalid(format!(
            "unpaired sample ids: {}",
            missing.join(", ")
        )));
    }
    if results.is_empty() {
        return Err(TomoError::invalid("no rasters found"));
    }
    let mut samples = Vec::with_capacity(results.len());
    for (id, rpath) in &results {
        let (rec, _) = read_raster(rpath)?;
        let (truth, _) = read_raster(&truths[id])?;
        samples.push(SampleMetrics {
            id: id.clone(),
            rmse: rmse(&rec, &truth)?,
            ssim: ssim(&rec, &truth)?,
        });
    }
    EvalReport::from_samples(method, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{write_raster, RasterKind};

    #[test]
    fn rmse_basics() {
        let a = Array2::from_shape_fn((8, 8), |(i, j)| (i + j) as f64 * 0.01);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = a.mapv(|v| v + 0.1);
        assert!((rmse(&a, &b).unwrap() - 0.1).abs() < 1e-12);
        let c = Array2::from_shape_fn((8, 8), |(i, j)| ((i * 13 + j * 7) % 9) as f64 * 0.05);
        let brute = (a
            .iter()
            .zip(c.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / 64.0)
            .sqrt();
        assert!((rmse(&a, &c).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = Array2::from_shape_fn((16, 16), |(i, j)| {
            0.5 + 0.3 * ((i as f64 * 0.7).sin() * (j as f64 * 0.9).cos())
        });
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_fields_closed_form() {
        let a = Array2::from_elem((12, 12), 0.3);
        let b = Array2::from_elem((12, 12), 0.7);
        let c1 = (SSIM_K1 * SSIM_L).powi(2);
        let want = (2.0 * 0.3 * 0.7 + c1) / (0.3f64.powi(2) + 0.7f64.powi(2) + c1);
        // zero variances make the contrast-structure factor exactly one
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric_and_checks_size() {
        let a = Array2::from_shape_fn((14, 14), |(i, j)| 0.4 + 0.01 * ((i * j) % 5) as f64);
        let b = a.mapv(|v| 1.0 - v);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        let small = Array2::from_elem((10, 10), 0.5);
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn evaluate_directories() {
        let results = tempfile::tempdir().unwrap();
        let truths = tempfile::tempdir().unwrap();
        for i in 0..3 {
            let t = Array2::from_shape_fn((16, 16), |(r, c)| {
                0.5 + 0.2 * (((r + c + i) % 7) as f64 / 7.0 - 0.5)
            });
            let rname = format!("s{i}.raster");
            write_raster(&truths.path().join(&rname), &t, RasterKind::Velocity, 0).unwrap();
            let rec = t.mapv(|v| v + 0.01 * (i as f64));
            write_raster(&results.path().join(&rname), &rec, RasterKind::Velocity, 0).unwrap();
        }
        let report = evaluate(results.path(), truths.path(), "test").unwrap();
        assert_eq!(report.samples.len(), 3);
        assert!(report.samples[0].rmse < 1e-6);
        let mean = report.samples.iter().map(|s| s.rmse).sum::<f64>() / 3.0;
        assert!((report.mean_rmse - mean).abs() < 1e-15);

        // byte-stable CSV across runs
        let p1 = results.path().join("m1.csv");
        let p2 = results.path().join("m2.csv");
        report.write_csv(&p1).unwrap();
        report.write_csv(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        // missing pair detection lists the id
        std::fs::remove_file(results.path().join("s1.raster")).unwrap();
        std::fs::remove_file(results.path().join("s1.raster.json")).unwrap();
        let err = evaluate(results.path(), truths.path(), "test").unwrap_err();
        assert!(err.to_string().contains("s1"));
    }
}
