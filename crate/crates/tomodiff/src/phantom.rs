//! Synthetic ground truth: shape phantoms on a fixed background, layered
//! fields with dipping interfaces and vertical faults, measurement
//! simulation with relative Gaussian noise, and dataset batching.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::eikonal::forward_map;
use crate::error::{Result, TomoError};
use crate::grid::{Grid2D, MeasurementMatrix, SourceReceiverConfig, VelocityField, C_MAX, C_MIN};
use crate::io::{read_raster, write_raster, RasterKind};
use crate::rng::{Purpose, StreamSeed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Kit4,
    Layered,
}

/// Generation parameters. Velocity ranges must sit inside [0.01, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub shape_count: (usize, usize),
    pub velocity_range: (f64, f64),
    pub background: f64,
    pub layer_count: (usize, usize),
    pub dip_range: (f64, f64),
    pub fault_count: (usize, usize),
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            kind: PhantomKind::Kit4,
            shape_count: (1, 4),
            velocity_range: (C_MIN, C_MAX),
            background: 0.5,
            layer_count: (4, 10),
            dip_range: (-0.35, 0.35),
            fault_count: (0, 2),
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.velocity_range;
        if !(lo >= C_MIN && hi <= C_MAX && lo < hi) {
            return Err(TomoError::invalid("velocity range must sit inside [0.01, 1]"));
        }
        if !(self.background >= C_MIN && self.background <= C_MAX) {
            return Err(TomoError::invalid("background outside [0.01, 1]"));
        }
        let (smin, smax) = self.shape_count;
        if !(smin >= 1 && smax <= 4 && smin <= smax) {
            return Err(TomoError::invalid("shape count must lie in [1, 4]"));
        }
        let (lmin, lmax) = self.layer_count;
        if !(lmin >= 2 && lmin <= lmax) {
            return Err(TomoError::invalid("layer count must be >= 2 and ordered"));
        }
        if self.fault_count.0 > self.fault_count.1 {
            return Err(TomoError::invalid("fault count range inverted"));
        }
        Ok(())
    }
}

enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, cos: f64, sin: f64 },
    Rect { cx: f64, cy: f64, wx: f64, wy: f64, cos: f64, sin: f64 },
    Polygon { verts: Vec<(f64, f64)> },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Ellipse { cx, cy, rx, ry, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Rect { cx, cy, wx, wy, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                u.abs() <= *wx && v.abs() <= *wy
            }
            Shape::Polygon { verts } => {
                // convex polygon with counter-clockwise vertices
                for i in 0..verts.len() {
                    let (x1, y1) = verts[i];
                    let (x2, y2) = verts[(i + 1) % verts.len()];
                    if (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) < 0.0 {
                        return false;
                    }
                }
                true
            }
        }
    }
}

fn random_shape<R: Rng + ?Sized>(rng: &mut R) -> Shape {
    let cx = rng.gen_range(0.18..0.82);
    let cy = rng.gen_range(0.18..0.82);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let (sin, cos) = angle.sin_cos();
    match rng.gen_range(0..3u32) {
        0 => Shape::Ellipse {
            cx,
            cy,
            rx: rng.gen_range(0.05..0.18),
            ry: rng.gen_range(0.05..0.18),
            cos,
            sin,
        },
        1 => Shape::Rect {
            cx,
            cy,
            wx: rng.gen_range(0.05..0.16),
            wy: rng.gen_range(0.05..0.16),
            cos,
            sin,
        },
        _ => {
            let k = rng.gen_range(3..=6usize);
            let r0 = rng.gen_range(0.07..0.17);
            let mut angles: Vec<f64> = (0..k)
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let verts = angles
                .iter()
                .map(|a| {
                    let r = r0 * rng.gen_range(0.7..1.0);
                    (cx + r * (a + angle).cos(), cy + r * (a + angle).sin())
                })
                .collect();
            // radial construction around the center keeps the polygon
            // star-shaped; enforce convexity by taking the hull walk
            Shape::Polygon { verts: convex_hull(verts) }
        }
    }
}

fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len() * 2);
    for &p in pts.iter().chain(pts.iter().rev().skip(1)) {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    if hull.len() < 3 {
        // degenerate draw; fall back to a triangle around the centroid
        let (cx, cy) = pts
            .iter()
            .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
        let n = pts.len() as f64;
        let (cx, cy) = (cx / n, cy / n);
        return vec![
            (cx + 0.05, cy),
            (cx - 0.025, cy + 0.043),
            (cx - 0.025, cy - 0.043),
        ];
    }
    hull
}

fn rasterize(shape: &Shape, grid: Grid2D) -> Vec<bool> {
    let n = grid.n();
    let mut mask = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let (x, y) = grid.position(crate::grid::GridCoord::new(i, j));
            mask[i * n + j] = shape.contains(x, y);
        }
    }
    mask
}

/// Shape phantoms: 1 to 4 non-overlapping shapes on a fixed background,
/// each filled with a uniformly drawn speed. Placement retries 100 times
/// per shape before giving up.
pub fn gen_kit4(spec: &PhantomSpec, grid: Grid2D) -> Result<VelocityField> {
    spec.validate()?;
    let mut rng = StreamSeed(spec.seed).stream(Purpose::Phantom, 0, 0);
    let count = rng.gen_range(spec.shape_count.0..=spec.shape_count.1);
    let n = grid.n();
    let mut values = Array2::from_elem((n, n), spec.background);
    let mut occupied = vec![false; n * n];
    for _ in 0..count {
        let mut placed = false;
        for _attempt in 0..100 {
            let shape = random_shape(&mut rng);
            let mask = rasterize(&shape, grid);
            if mask.iter().any(|&m| m) && mask.iter().zip(&occupied).all(|(m, o)| !(*m && *o)) {
                let v = rng.gen_range(spec.velocity_range.0..spec.velocity_range.1);
                for (idx, m) in mask.iter().enumerate() {
                    if *m {
                        occupied[idx] = true;
                        values[[idx / n, idx % n]] = v;
                    }
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(TomoError::GenerationFailure(
                "could not place a non-overlapping shape in 100 retries".into(),
            ));
        }
    }
    VelocityField::new(grid, values)
}

/// Layered fields: piecewise-constant speeds between dipping interfaces,
/// shifted across 0 to 2 vertical faults.
pub fn gen_layered(spec: &PhantomSpec, grid: Grid2D) -> Result<VelocityField> {
    spec.validate()?;
    let mut rng = StreamSeed(spec.seed).stream(Purpose::Phantom, 1, 0);
    let layers = rng.gen_range(spec.layer_count.0..=spec.layer_count.1);
    let dip = rng.gen_range(spec.dip_range.0..=spec.dip_range.1);
    let n_faults = rng.gen_range(spec.fault_count.0..=spec.fault_count.1);
    let faults: Vec<(f64, f64)> = (0..n_faults)
        .map(|_| (rng.gen_range(0.2..0.8), rng.gen_range(-0.15..0.15)))
        .collect();
    let speeds: Vec<f64> = (0..layers)
        .map(|_| rng.gen_range(spec.velocity_range.0..spec.velocity_range.1))
        .collect();
    // interface depths split [0,1] into `layers` bands
    let mut cuts: Vec<f64> = (0..layers - 1).map(|_| rng.gen_range(0.05..0.95)).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let n = grid.n();
    let values = Array2::from_shape_fn((n, n), |(i, j)| {
        let (x, y) = grid.position(crate::grid::GridCoord::new(i, j));
        let mut y_eff = y - dip * (x - 0.5);
        for &(xf, shift) in &faults {
            if x > xf {
                y_eff += shift;
            }
        }
        let band = cuts.iter().filter(|&&c| y_eff > c).count();
        speeds[band]
    });
    VelocityField::new(grid, values)
}

pub fn generate(spec: &PhantomSpec, grid: Grid2D) -> Result<VelocityField> {
    match spec.kind {
        PhantomKind::Kit4 => gen_kit4(spec, grid),
        PhantomKind::Layered => gen_layered(spec, grid),
    }
}

/// Forward data plus Gaussian noise with standard deviation
/// noise_std * mean(|clean|). Entries are floored at zero to stay valid
/// first-arrival times.
pub fn simulate(
    c: &VelocityField,
    config: &SourceReceiverConfig,
    noise_std: f64,
    seed: u64,
) -> Result<MeasurementMatrix> {
    if noise_std < 0.0 {
        return Err(TomoError::invalid("noise level must be >= 0"));
    }
    let clean = forward_map(c, config)?;
    if noise_std == 0.0 {
        return Ok(clean);
    }
    let scale = noise_std * clean.values.iter().map(|v| v.abs()).sum::<f64>()
        / clean.values.len() as f64;
    let mut rng = StreamSeed(seed).stream(Purpose::MeasNoise, 0, 0);
    let noisy = clean
        .values
        .mapv(|v| (v + scale * rng.sample::<f64, _>(StandardNormal)).max(0.0));
    MeasurementMatrix::new(noisy, clean.receiver_ids, clean.transmitter_ids)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub grid_n: usize,
    pub spec: PhantomSpec,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_slice(bytes)
            .map_err(|e| TomoError::format("<manifest>", e.to_string()))?;
        if m.grid_n < 2 || m.grid_n > 1 << 12 {
            return Err(TomoError::format("<manifest>", "grid side out of range"));
        }
        m.spec.validate()?;
        if m.entries.is_empty() {
            return Err(TomoError::format("<manifest>", "no entries"));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_json_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)
            .map_err(|e| TomoError::format(path.display().to_string(), e.to_string()))?;
        crate::io::atomic_write(path, &json)
    }

    /// Read every raster, flattened, relative to the manifest's directory.
    pub fn load_samples(&self, manifest_path: &Path) -> Result<Vec<Vec<f64>>> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut out = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let (values, meta) = read_raster(&base.join(&e.path))?;
            if meta.n != self.grid_n {
                return Err(TomoError::invalid(format!(
                    "raster {} has side {}, manifest says {}",
                    e.path, meta.n, self.grid_n
                )));
            }
            out.push(values.into_raw_vec());
        }
        Ok(out)
    }
}

/// Generate `count` phantoms with seeds spec.seed .. spec.seed + count and
/// write rasters plus a manifest under `out_dir`.
pub fn make_dataset(
    spec: &PhantomSpec,
    grid: Grid2D,
    count: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(TomoError::invalid("dataset needs at least one sample"));
    }
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let seed = spec.seed + i as u64;
        let sample_spec = PhantomSpec { seed, ..*spec };
        let field = generate(&sample_spec, grid)?;
        let name = format!("sample_{i:05}.raster");
        write_raster(&out_dir.join(&name), field.values(), RasterKind::Velocity, 0)?;
        entries.push(ManifestEntry {
            id: format!("sample_{i:05}"),
            seed,
            path: name,
        });
    }
    let manifest = DatasetManifest {
        grid_n: grid.n(),
        spec: *spec,
        entries,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
