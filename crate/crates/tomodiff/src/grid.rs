//! Uniform-grid geometry, velocity/travel-time rasters, device
//! configurations, and average-pooling of fields and measurement matrices.
//!
//! The domain is the unit square with n nodes per side and spacing
//! h = 1/(n-1). Rasters are row-major with row index i along y and column
//! index j along x; row 0 is the bottom edge.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};

/// Lower bound on wave speed. Fields are clamped here before PDE solves.
pub const C_MIN: f64 = 0.01;
/// Upper bound on wave speed.
pub const C_MAX: f64 = 1.0;

/// Uniform grid over [0,1]^2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid2D {
    n: usize,
}

impl Grid2D {
    /// Grid with any side length >= 2. PDE solvers and verification oracles
    /// accept arbitrary sizes; the diffusion ladder needs [`build_grid`].
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(TomoError::invalid(format!("grid side {n} < 2")));
        }
        Ok(Grid2D { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Node spacing 1/(n-1).
    pub fn h(&self) -> f64 {
        1.0 / (self.n as f64 - 1.0)
    }

    /// Total node count n^2.
    pub fn node_count(&self) -> usize {
        self.n * self.n
    }

    pub fn idx(&self, c: GridCoord) -> usize {
        debug_assert!(c.row < self.n && c.col < self.n);
        c.row * self.n + c.col
    }

    pub fn coord(&self, idx: usize) -> GridCoord {
        GridCoord {
            row: idx / self.n,
            col: idx % self.n,
        }
    }

    pub fn contains(&self, c: GridCoord) -> bool {
        c.row < self.n && c.col < self.n
    }

    pub fn is_boundary(&self, c: GridCoord) -> bool {
        c.row == 0 || c.col == 0 || c.row == self.n - 1 || c.col == self.n - 1
    }

    /// Physical position (x, y) of a node.
    pub fn position(&self, c: GridCoord) -> (f64, f64) {
        (c.col as f64 * self.h(), c.row as f64 * self.h())
    }
}

/// Node coordinate; `row` runs along y, `col` along x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCoord {
    pub row: usize,
    pub col: usize,
}

impl GridCoord {
    pub fn new(row: usize, col: usize) -> Self {
        GridCoord { row, col }
    }
}

/// Positive speed raster on a [`Grid2D`], values in [C_MIN, C_MAX].
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    grid: Grid2D,
    values: Array2<f64>,
}

impl VelocityField {
    pub fn new(grid: Grid2D, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != grid.n() || values.ncols() != grid.n() {
            return Err(TomoError::invalid(format!(
                "velocity raster {}x{} does not match grid side {}",
                values.nrows(),
                values.ncols(),
                grid.n()
            )));
        }
        for &v in values.iter() {
            if !v.is_finite() || v < C_MIN || v > C_MAX {
                return Err(TomoError::invalid(format!(
                    "velocity value {v} outside [{C_MIN}, {C_MAX}]"
                )));
            }
        }
        Ok(VelocityField { grid, values })
    }

    /// Clamp arbitrary (finite) values into [C_MIN, C_MAX]. Sampler iterates
    /// stray outside the physical range; the PDE needs strictly positive speed.
    pub fn clamped(grid: Grid2D, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != grid.n() || values.ncols() != grid.n() {
            return Err(TomoError::invalid("velocity raster shape mismatch"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TomoError::numerical("non-finite velocity value"));
        }
        let values = values.mapv(|v| v.clamp(C_MIN, C_MAX));
        Ok(VelocityField { grid, values })
    }

    pub fn constant(grid: Grid2D, value: f64) -> Result<Self> {
        Self::new(grid, Array2::from_elem((grid.n(), grid.n()), value))
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

/// First-arrival times from one source.
#[derive(Debug, Clone)]
pub struct TravelTimeField {
    pub grid: Grid2D,
    pub values: Array2<f64>,
    pub source: GridCoord,
}

/// Device layout pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// Transmitters on the left edge, receivers on the right edge.
    Horizontal,
    /// Transmitters on the bottom edge, receivers on the top edge.
    Vertical,
    /// Devices spread over all four sides.
    Surrounding,
}

/// Transmitter/receiver placement on the boundary of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReceiverConfig {
    pub pattern: Pattern,
    /// Downsampling depth this config is valid for (0 = full resolution).
    pub level: usize,
    /// Side length of the grid the coordinates refer to.
    pub grid_n: usize,
    pub transmitters: Vec<GridCoord>,
    pub receivers: Vec<GridCoord>,
}

impl SourceReceiverConfig {
    fn validate(&self) -> Result<()> {
        let grid = Grid2D::new(self.grid_n)?;
        if self.transmitters.is_empty() || self.receivers.is_empty() {
            return Err(TomoError::invalid("empty transmitter or receiver list"));
        }
        for (name, list) in [
            ("transmitter", &self.transmitters),
            ("receiver", &self.receivers),
        ] {
            for &c in list {
                if !grid.contains(c) || !grid.is_boundary(c) {
                    return Err(TomoError::invalid(format!(
                        "{name} ({}, {}) not a boundary node of an n={} grid",
                        c.row, c.col, self.grid_n
                    )));
                }
            }
            let mut sorted = list.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != list.len() {
                return Err(TomoError::invalid(format!("duplicate {name} coordinates")));
            }
        }
        Ok(())
    }

    pub fn n_tx(&self) -> usize {
        self.transmitters.len()
    }

    pub fn n_rx(&self) -> usize {
        self.receivers.len()
    }
}

/// First-arrival times, rows = receivers, columns = transmitters.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    pub values: Array2<f64>,
    pub receiver_ids: Vec<u32>,
    pub transmitter_ids: Vec<u32>,
}

impl MeasurementMatrix {
    pub fn new(values: Array2<f64>, receiver_ids: Vec<u32>, transmitter_ids: Vec<u32>) -> Result<Self> {
        if values.nrows() != receiver_ids.len() || values.ncols() != transmitter_ids.len() {
            return Err(TomoError::invalid(format!(
                "measurement shape {}x{} does not match {} receiver / {} transmitter ids",
                values.nrows(),
                values.ncols(),
                receiver_ids.len(),
                transmitter_ids.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(TomoError::invalid(
                "measurement entries must be nonnegative and finite",
            ));
        }
        Ok(MeasurementMatrix {
            values,
            receiver_ids,
            transmitter_ids,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.values.nrows(), self.values.ncols())
    }
}

/// Grid with a power-of-two side, ready for dyadic pooling ladders.
pub fn build_grid(n: usize) -> Result<Grid2D> {
    if !(8..=1024).contains(&n) || !n.is_power_of_two() {
        return Err(TomoError::invalid(format!(
            "grid side {n} must be a power of two in [8, 1024]"
        )));
    }
    Grid2D::new(n)
}

/// Node index of device i among m on a side of n nodes: floor((i+0.5)*n/m).
/// Avoids corners for m <= n/2 and maps cleanly under halving.
fn device_index(i: usize, m: usize, n: usize) -> usize {
    (2 * i + 1) * n / (2 * m)
}

fn side_nodes(n: usize, m: usize, side: Side) -> Vec<GridCoord> {
    (0..m)
        .map(|i| {
            let p = device_index(i, m, n);
            match side {
                Side::Bottom => GridCoord::new(0, p),
                Side::Right => GridCoord::new(p, n - 1),
                Side::Top => GridCoord::new(n - 1, p),
                Side::Left => GridCoord::new(p, 0),
            }
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

/// Evenly spaced device placement for one of the three patterns.
pub fn build_config(
    pattern: Pattern,
    grid: Grid2D,
    n_tx: usize,
    n_rx: usize,
) -> Result<SourceReceiverConfig> {
    let n = grid.n();
    if n_tx == 0 || n_rx == 0 {
        return Err(TomoError::invalid("device counts must be positive"));
    }
    let (transmitters, receivers) = match pattern {
        Pattern::Horizontal => (
            side_nodes(n, n_tx, Side::Left),
            side_nodes(n, n_rx, Side::Right),
        ),
        Pattern::Vertical => (
            side_nodes(n, n_tx, Side::Bottom),
            side_nodes(n, n_rx, Side::Top),
        ),
        Pattern::Surrounding => {
            if n_tx % 4 != 0 || n_rx % 4 != 0 {
                return Err(TomoError::invalid(
                    "surrounding pattern needs device counts divisible by 4",
                ));
            }
            let per_side = |m: usize| {
                let mut v = Vec::with_capacity(m);
                for side in [Side::Bottom, Side::Right, Side::Top, Side::Left] {
                    v.extend(side_nodes(n, m / 4, side));
                }
                v
            };
            (per_side(n_tx), per_side(n_rx))
        }
    };
    let config = SourceReceiverConfig {
        pattern,
        level: 0,
        grid_n: n,
        transmitters,
        receivers,
    };
    config.validate()?;
    Ok(config)
}

/// One-step average pooling: out[a,b] = mean of the 2x2 block at (2a, 2b).
pub fn avg_pool(field: &Array2<f64>) -> Result<Array2<f64>> {
    let (r, c) = (field.nrows(), field.ncols());
    if r % 2 != 0 || c % 2 != 0 || r == 0 {
        return Err(TomoError::invalid(format!(
            "average pooling needs even dimensions, got {r}x{c}"
        )));
    }
    let mut out = Array2::zeros((r / 2, c / 2));
    for a in 0..r / 2 {
        for b in 0..c / 2 {
            out[[a, b]] = 0.25
                * (field[[2 * a, 2 * b]]
                    + field[[2 * a, 2 * b + 1]]
                    + field[[2 * a + 1, 2 * b]]
                    + field[[2 * a + 1, 2 * b + 1]]);
        }
    }
    Ok(out)
}

/// Average consecutive groups of 2^k receiver rows; transmitter columns are
/// untouched. Output has floor(M / 2^k) rows.
pub fn pool_measurements(y: &MeasurementMatrix, k: usize) -> Result<MeasurementMatrix> {
    let group = 1usize << k;
    let (m, n) = y.shape();
    if m < group {
        return Err(TomoError::invalid(format!(
            "cannot pool {m} receiver rows by 2^{k}"
        )));
    }
    let m_out = m / group;
    let mut values = Array2::zeros((m_out, n));
    for row in 0..m_out {
        for col in 0..n {
            let mut acc = 0.0;
            for i in 0..group {
                acc += y.values[[group * row + i, col]];
            }
            values[[row, col]] = acc / group as f64;
        }
    }
    MeasurementMatrix::new(
        values,
        (0..m_out as u32).collect(),
        y.transmitter_ids.clone(),
    )
}

fn halve_coord(c: GridCoord, k: usize, n_out: usize) -> GridCoord {
    let scale = (1usize << k) as f64;
    let map = |v: usize| ((v as f64 / scale).round() as usize).min(n_out - 1);
    GridCoord::new(map(c.row), map(c.col))
}

/// Map a configuration k levels down: transmitters by coordinate halving,
/// receivers by halving the midpoint of each pooled group of 2^k.
pub fn pool_config(config: &SourceReceiverConfig, k: usize) -> Result<SourceReceiverConfig> {
    if k == 0 {
        return Ok(config.clone());
    }
    let group = 1usize << k;
    if config.grid_n % group != 0 {
        return Err(TomoError::invalid(format!(
            "grid side {} not divisible by 2^{k}",
            config.grid_n
        )));
    }
    let n_out = config.grid_n / group;
    if config.receivers.len() < group {
        return Err(TomoError::invalid("fewer receivers than pooling group"));
    }
    let transmitters = config
        .transmitters
        .iter()
        .map(|&c| halve_coord(c, k, n_out))
        .collect();
    let mut receivers = Vec::with_capacity(config.receivers.len() / group);
    for chunk in config.receivers.chunks_exact(group) {
        let mean_row = chunk.iter().map(|c| c.row as f64).sum::<f64>() / group as f64;
        let mean_col = chunk.iter().map(|c| c.col as f64).sum::<f64>() / group as f64;
        let scale = group as f64;
        receivers.push(GridCoord::new(
            ((mean_row / scale).round() as usize).min(n_out - 1),
            ((mean_col / scale).round() as usize).min(n_out - 1),
        ));
    }
    let pooled = SourceReceiverConfig {
        pattern: config.pattern,
        level: config.level + k,
        grid_n: n_out,
        transmitters,
        receivers,
    };
    pooled.validate()?;
    Ok(pooled)
}
