//! File formats: float rasters with JSON sidecars, measurement CSV, and
//! 8-bit PGM previews.
//!
//! Raster payload: little-endian f32, row-major, nothing else. The sidecar
//! `<path>.json` holds `{n, h, kind, level}`. Measurement CSV: first row =
//! transmitter ids, first column = receiver ids, empty corner cell.
//! All parsers work on in-memory bytes first; path-based wrappers add IO.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::grid::MeasurementMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterKind {
    Velocity,
    Traveltime,
}

/// Sidecar metadata for one raster file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterMeta {
    pub n: usize,
    pub h: f64,
    pub kind: RasterKind,
    pub level: usize,
}

impl RasterMeta {
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let meta: RasterMeta = serde_json::from_slice(bytes)
            .map_err(|e| TomoError::format("<sidecar>", e.to_string()))?;
        if meta.n < 2 || meta.n > 1 << 16 {
            return Err(TomoError::format(
                "<sidecar>",
                format!("side {} out of range", meta.n),
            ));
        }
        if !meta.h.is_finite() || meta.h <= 0.0 {
            return Err(TomoError::format("<sidecar>", "non-positive spacing"));
        }
        Ok(meta)
    }
}

/// Decode a raster payload against its sidecar. The length check runs before
/// any allocation, so corrupt sidecars cannot request huge buffers.
pub fn decode_raster(payload: &[u8], meta: &RasterMeta) -> Result<Array2<f64>> {
    let count = meta
        .n
        .checked_mul(meta.n)
        .ok_or_else(|| TomoError::format("<raster>", "side overflows"))?;
    let expect = count
        .checked_mul(4)
        .ok_or_else(|| TomoError::format("<raster>", "byte count overflows"))?;
    if payload.len() != expect {
        return Err(TomoError::format(
            "<raster>",
            format!("payload {} bytes, sidecar implies {expect}", payload.len()),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TomoError::format("<raster>", "non-finite sample"));
    }
    Array2::from_shape_vec((meta.n, meta.n), values)
        .map_err(|e| TomoError::format("<raster>", e.to_string()))
}

pub fn encode_raster(values: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Write payload and sidecar (write-temp-then-rename).
pub fn write_raster(path: &Path, values: &Array2<f64>, kind: RasterKind, level: usize) -> Result<()> {
    if values.nrows() != values.ncols() {
        return Err(TomoError::invalid("raster must be square"));
    }
    let meta = RasterMeta {
        n: values.nrows(),
        h: 1.0 / (values.nrows() as f64 - 1.0),
        kind,
        level,
    };
    atomic_write(path, &encode_raster(values))?;
    let json = serde_json::to_vec_pretty(&meta)
        .map_err(|e| TomoError::format(path.display().to_string(), e.to_string()))?;
    atomic_write(&sidecar_path(path), &json)
}

pub fn read_raster(path: &Path) -> Result<(Array2<f64>, RasterMeta)> {
    let sidecar = sidecar_path(path);
    let meta_bytes = std::fs::read(&sidecar)?;
    let meta = RasterMeta::from_json_bytes(&meta_bytes)
        .map_err(|e| relabel(e, &sidecar))?;
    let payload = std::fs::read(path)?;
    let values = decode_raster(&payload, &meta).map_err(|e| relabel(e, path))?;
    Ok((values, meta))
}

fn relabel(e: TomoError, path: &Path) -> TomoError {
    match e {
        TomoError::Format { detail, .. } => TomoError::format(path.display().to_string(), detail),
        other => other,
    }
}

pub fn write_measurements(path: &Path, y: &MeasurementMatrix) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec![String::new()];
        header.extend(y.transmitter_ids.iter().map(|id| id.to_string()));
        w.write_record(&header)
            .map_err(|e| TomoError::format(path.display().to_string(), e.to_string()))?;
        for (r, id) in y.receiver_ids.iter().enumerate() {
            let mut rec = vec![id.to_string()];
            rec.extend((0..y.transmitter_ids.len()).map(|c| format!("{:.17e}", y.values[[r, c]])));
            w.write_record(&rec)
                .map_err(|e| TomoError::format(path.display().to_string(), e.to_string()))?;
        }
        w.flush()?;
    }
    atomic_write(path, &buf)
}

pub fn read_measurements_from_bytes(bytes: &[u8]) -> Result<MeasurementMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(bytes);
    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(TomoError::format("<csv>", e.to_string())),
        None => return Err(TomoError::format("<csv>", "empty file")),
    };
    if header.len() < 2 {
        return Err(TomoError::format("<csv>", "header needs at least one transmitter"));
    }
    let transmitter_ids: Vec<u32> = header
        .iter()
        .skip(1)
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| TomoError::format("<csv>", format!("bad transmitter id {s:?}")))
        })
        .collect::<Result<_>>()?;
    let n = transmitter_ids.len();
    let mut receiver_ids = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| TomoError::format("<csv>", e.to_string()))?;
        if rec.len() != n + 1 {
            return Err(TomoError::format(
                "<csv>",
                format!("row with {} cells, expected {}", rec.len(), n + 1),
            ));
        }
        receiver_ids.push(
            rec[0]
                .trim()
                .parse::<u32>()
                .map_err(|_| TomoError::format("<csv>", format!("bad receiver id {:?}", &rec[0])))?,
        );
        for c in 1..=n {
            let v: f64 = rec[c]
                .trim()
                .parse()
                .map_err(|_| TomoError::format("<csv>", format!("bad value {:?}", &rec[c])))?;
            rows.push(v);
        }
        // allocation stays proportional to input size; guard row count anyway
        if receiver_ids.len() > 1 << 20 {
            return Err(TomoError::format("<csv>", "too many receiver rows"));
        }
    }
    if receiver_ids.is_empty() {
        return Err(TomoError::format("<csv>", "no receiver rows"));
    }
    let values = Array2::from_shape_vec((receiver_ids.len(), n), rows)
        .map_err(|e| TomoError::format("<csv>", e.to_string()))?;
    MeasurementMatrix::new(values, receiver_ids, transmitter_ids)
}

pub fn read_measurements(path: &Path) -> Result<MeasurementMatrix> {
    let bytes = std::fs::read(path)?;
    read_measurements_from_bytes(&bytes).map_err(|e| relabel(e, path))
}

/// 8-bit binary PGM, min-max scaled. Preview only; the float raster stays
/// the canonical artifact.
pub fn write_pgm(path: &Path, values: &Array2<f64>) -> Result<()> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut buf = format!("P5\n{} {}\n255\n", values.ncols(), values.nrows()).into_bytes();
    // flip rows so row 0 (bottom edge) renders at the bottom
    for i in (0..values.nrows()).rev() {
        for j in 0..values.ncols() {
            buf.push((255.0 * (values[[i, j]] - lo) / span).round() as u8);
        }
    }
    atomic_write(path, &buf)
}

/// Write to `<path>.tmp` then rename over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp: std::path::PathBuf = tmp.into();
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
