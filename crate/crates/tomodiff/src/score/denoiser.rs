//! Small dense denoiser fitted by the score-matching objective.
//!
//! Fixed architecture: input [x; sqrt(alpha_bar); 1 - alpha_bar], two tanh
//! hidden layers of width 4 d, linear output of size d. Parameter gradients
//! and input VJPs are hand-derived, so no learning framework is involved.
//! Training resolution is capped at 32 x 32.
//!
//! The network predicts the noise; the score is -net(x, t)/sqrt(1 - ab).
//! Training minimizes the (1 - ab)-weighted score-matching loss, whose
//! per-time minimizer is the same marginal score but whose targets stay at
//! unit scale instead of diverging as t -> 0.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::rng::{Purpose, StreamSeed};
use crate::sde::{alpha_bar, perturb, NoiseSchedule};

const MAX_TRAIN_DIM: usize = 32 * 32;

/// Fixed layer set; `width` defaults to 4 * dim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub dim: usize,
    pub width: usize,
}

impl Architecture {
    pub fn for_dim(dim: usize) -> Self {
        Architecture { dim, width: 4 * dim }
    }

    pub fn input_dim(&self) -> usize {
        self.dim + 2
    }

    pub fn param_count(&self) -> usize {
        let (d, w) = (self.dim, self.width);
        w * (d + 2) + w + w * w + w + d * w + d
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Smallest diffusion time sampled during training (the conditional
    /// score blows up as t -> 0).
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

fn default_t_min() -> f64 {
    0.02
}

fn default_momentum() -> f64 {
    0.9
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            t_min: default_t_min(),
            momentum: default_momentum(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub dataset_id: String,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DenoiserModel {
    arch: Architecture,
    level: usize,
    schedule: NoiseSchedule,
    params: Vec<f64>,
    meta: TrainMeta,
}

/// Offsets of the parameter blocks inside the flat vector.
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    total: usize,
}

impl Layout {
    fn of(arch: &Architecture) -> Layout {
        let (d, w) = (arch.dim, arch.width);
        let w1 = 0;
        let b1 = w1 + w * (d + 2);
        let w2 = b1 + w;
        let b2 = w2 + w * w;
        let w3 = b2 + w;
        let b3 = w3 + d * w;
        Layout {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            total: b3 + d,
        }
    }
}

struct Forward {
    z: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    y: Vec<f64>,
}

impl DenoiserModel {
    pub fn new(
        arch: Architecture,
        level: usize,
        schedule: NoiseSchedule,
        params: Vec<f64>,
        meta: TrainMeta,
    ) -> Result<Self> {
        let layout = Layout::of(&arch);
        if params.len() != layout.total {
            return Err(TomoError::invalid(format!(
                "parameter count {} does not match architecture ({} expected)",
                params.len(),
                layout.total
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(TomoError::invalid("non-finite parameter"));
        }
        schedule.validate()?;
        Ok(DenoiserModel {
            arch,
            level,
            schedule,
            params,
            meta,
        })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.schedule
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn meta(&self) -> &TrainMeta {
        &self.meta
    }

    fn features(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let ab = alpha_bar(&self.schedule, t)?;
        let mut z = Vec::with_capacity(x.len() + 2);
        z.extend_from_slice(x);
        z.push(ab.sqrt());
        z.push(1.0 - ab);
        Ok(z)
    }

    fn forward(&self, x: &[f64], t: f64) -> Result<Forward> {
        if x.len() != self.arch.dim {
            return Err(TomoError::invalid(format!(
                "input dimension {} vs model {}",
                x.len(),
                self.arch.dim
            )));
        }
        let l = Layout::of(&self.arch);
        let (d, w, din) = (self.arch.dim, self.arch.width, self.arch.input_dim());
        let p = &self.params;
        let z = self.features(x, t)?;
        let mut h1 = vec![0.0; w];
        for i in 0..w {
            let row = &p[l.w1 + i * din..l.w1 + (i + 1) * din];
            let mut acc = p[l.b1 + i];
            for (a, b) in row.iter().zip(z.iter()) {
                acc += a * b;
            }
            h1[i] = acc.tanh();
        }
        let mut h2 = vec![0.0; w];
        for i in 0..w {
            let row = &p[l.w2 + i * w..l.w2 + (i + 1) * w];
            let mut acc = p[l.b2 + i];
            for (a, b) in row.iter().zip(h1.iter()) {
                acc += a * b;
            }
            h2[i] = acc.tanh();
        }
        let mut y = vec![0.0; d];
        for i in 0..d {
            let row = &p[l.w3 + i * w..l.w3 + (i + 1) * w];
            let mut acc = p[l.b3 + i];
            for (a, b) in row.iter().zip(h2.iter()) {
                acc += a * b;
            }
            y[i] = acc;
        }
        Ok(Forward { z, h1, h2, y })
    }

    /// Score scale -1/sqrt(1 - alpha_bar), clamped near t = 0 where the
    /// marginal collapses onto the data.
    fn score_scale(&self, t: f64) -> Result<f64> {
        let ab = alpha_bar(&self.schedule, t)?;
        Ok(-1.0 / (1.0 - ab).max(1e-10).sqrt())
    }

    pub fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let scale = self.score_scale(t)?;
        let mut y = self.forward(x, t)?.y;
        for v in y.iter_mut() {
            *v *= scale;
        }
        Ok(y)
    }

    /// Exact J^T v for the Jacobian of the score with respect to x.
    pub fn vjp(&self, x: &[f64], t: f64, v: &[f64]) -> Result<Vec<f64>> {
        let scale = self.score_scale(t)?;
        let mut g = self.net_vjp(x, t, v)?;
        for gv in g.iter_mut() {
            *gv *= scale;
        }
        Ok(g)
    }

    /// J^T v for the raw noise-prediction network.
    fn net_vjp(&self, x: &[f64], t: f64, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.arch.dim {
            return Err(TomoError::invalid("vjp vector dimension mismatch"));
        }
        let l = Layout::of(&self.arch);
        let (d, w, din) = (self.arch.dim, self.arch.width, self.arch.input_dim());
        let p = &self.params;
        let f = self.forward(x, t)?;
        // back through W3
        let mut g2 = vec![0.0; w];
        for i in 0..d {
            let row = &p[l.w3 + i * w..l.w3 + (i + 1) * w];
            for (j, a) in row.iter().enumerate() {
                g2[j] += a * v[i];
            }
        }
        for (g, h) in g2.iter_mut().zip(f.h2.iter()) {
            *g *= 1.0 - h * h;
        }
        // back through W2
        let mut g1 = vec![0.0; w];
        for i in 0..w {
            let row = &p[l.w2 + i * w..l.w2 + (i + 1) * w];
            for (j, a) in row.iter().enumerate() {
                g1[j] += a * g2[i];
            }
        }
        for (g, h) in g1.iter_mut().zip(f.h1.iter()) {
            *g *= 1.0 - h * h;
        }
        // back through W1; keep only the x part of the input
        let mut gx = vec![0.0; din];
        for i in 0..w {
            let row = &p[l.w1 + i * din..l.w1 + (i + 1) * din];
            for (j, a) in row.iter().enumerate() {
                gx[j] += a * g1[i];
            }
        }
        gx.truncate(self.arch.dim);
        Ok(gx)
    }

    /// Gradient of ||y - target||^2 with respect to the parameters,
    /// accumulated into `grad`. Returns the sample loss.
    fn accumulate_grad(&self, x: &[f64], t: f64, target: &[f64], grad: &mut [f64]) -> Result<f64> {
        let l = Layout::of(&self.arch);
        let (d, w, din) = (self.arch.dim, self.arch.width, self.arch.input_dim());
        let p = &self.params;
        let f = self.forward(x, t)?;
        let mut ry = vec![0.0; d];
        let mut loss = 0.0;
        for i in 0..d {
            ry[i] = 2.0 * (f.y[i] - target[i]);
            let r = f.y[i] - target[i];
            loss += r * r;
        }
        // output layer
        let mut g2 = vec![0.0; w];
        for i in 0..d {
            let base = l.w3 + i * w;
            for j in 0..w {
                grad[base + j] += ry[i] * f.h2[j];
                g2[j] += p[base + j] * ry[i];
            }
            grad[l.b3 + i] += ry[i];
        }
        for (g, h) in g2.iter_mut().zip(f.h2.iter()) {
            *g *= 1.0 - h * h;
        }
        // second hidden layer
        let mut g1 = vec![0.0; w];
        for i in 0..w {
            let base = l.w2 + i * w;
            for j in 0..w {
                grad[base + j] += g2[i] * f.h1[j];
                g1[j] += p[base + j] * g2[i];
            }
            grad[l.b2 + i] += g2[i];
        }
        for (g, h) in g1.iter_mut().zip(f.h1.iter()) {
            *g *= 1.0 - h * h;
        }
        // first hidden layer
        for i in 0..w {
            let base = l.w1 + i * din;
            for j in 0..din {
                grad[base + j] += g1[i] * f.z[j];
            }
            grad[l.b1 + i] += g1[i];
        }
        Ok(loss)
    }
}

/// Fit a denoiser to level-k samples by minibatch SGD with momentum on the
/// Monte-Carlo score-matching loss. Deterministic for a fixed config.
pub fn train_denoiser(
    dataset: &[Vec<f64>],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<DenoiserModel> {
    if dataset.is_empty() {
        return Err(TomoError::invalid("empty training dataset"));
    }
    let dim = dataset[0].len();
    if dim > MAX_TRAIN_DIM {
        return Err(TomoError::invalid(format!(
            "training capped at {MAX_TRAIN_DIM} dims, got {dim}"
        )));
    }
    if dataset.iter().any(|s| s.len() != dim) {
        return Err(TomoError::invalid("ragged training dataset"));
    }
    if config.batch_size == 0 || config.epochs == 0 || config.learning_rate <= 0.0 {
        return Err(TomoError::invalid("degenerate training config"));
    }
    if !(config.t_min > 0.0 && config.t_min < schedule.t_end) {
        return Err(TomoError::invalid("t_min must lie inside (0, t_end)"));
    }

    let arch = Architecture::for_dim(dim);
    let layout = Layout::of(&arch);
    let streams = StreamSeed(config.seed);
    let mut init_rng = streams.stream(Purpose::Train, 0, 0);
    let mut params = vec![0.0; layout.total];
    let scale1 = (2.0 / arch.input_dim() as f64).sqrt();
    let scale2 = (2.0 / arch.width as f64).sqrt();
    for (i, p) in params.iter_mut().enumerate() {
        let z: f64 = init_rng.sample(StandardNormal);
        *p = if i < layout.b1 {
            z * scale1
        } else if i >= layout.w2 && i < layout.b2 {
            z * scale2
        } else if i >= layout.w3 && i < layout.b3 {
            z * scale2 * 0.1
        } else {
            0.0
        };
    }

    let mut model = DenoiserModel::new(
        arch,
        0,
        *schedule,
        params,
        TrainMeta {
            dataset_id: format!("{} samples, dim {dim}", dataset.len()),
            final_loss: f64::NAN,
            epoch_losses: Vec::new(),
        },
    )?;

    let mut velocity = vec![0.0; layout.total];
    let mut grad = vec![0.0; layout.total];
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut shuffle_rng = streams.stream(Purpose::Train, 1, epoch as u64);
        indices.shuffle(&mut shuffle_rng);
        let mut draw_rng = streams.stream(Purpose::Train, 2, epoch as u64);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        // cosine decay over epochs
        let progress = epoch as f64 / config.epochs as f64;
        let lr = config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        for batch in indices.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let x0 = &dataset[i];
                let t = draw_rng.gen_range(config.t_min..schedule.t_end);
                let noise: Vec<f64> = (0..dim).map(|_| draw_rng.sample(StandardNormal)).collect();
                let x_t = perturb(x0, t, &noise, schedule)?;
                batch_loss += model.accumulate_grad(&x_t, t, &noise, &mut grad)?;
            }
            let inv = 1.0 / batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(TomoError::numerical(format!(
                    "loss became non-finite in epoch {epoch}"
                )));
            }
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v - lr * g * inv;
                *p += *v;
            }
            epoch_loss += batch_loss;
            seen += batch.len();
        }
        epoch_losses.push(epoch_loss / seen as f64);
    }

    model.meta.final_loss = *epoch_losses.last().unwrap();
    model.meta.epoch_losses = epoch_losses;
    Ok(model)
}

/// Model file header; the parameter payload follows as little-endian f32.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelHeader {
    pub arch: Architecture,
    pub level: usize,
    pub schedule: NoiseSchedule,
    pub meta: TrainMeta,
}

impl DenoiserModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            arch: self.arch,
            level: self.level,
            schedule: self.schedule,
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_vec(&header)
            .map_err(|e| TomoError::format("<model>", e.to_string()))?;
        for p in &self.params {
            out.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut stream = serde_json::Deserializer::from_slice(bytes).into_iter::<ModelHeader>();
        let header = match stream.next() {
            Some(Ok(h)) => h,
            Some(Err(e)) => return Err(TomoError::format("<model>", e.to_string())),
            None => return Err(TomoError::format("<model>", "missing header")),
        };
        let offset = stream.byte_offset();
        let payload = &bytes[offset..];
        let expect = Layout::of(&header.arch).total;
        if payload.len() != expect * 4 {
            return Err(TomoError::format(
                "<model>",
                format!(
                    "parameter payload {} bytes, architecture needs {}",
                    payload.len(),
                    expect * 4
                ),
            ));
        }
        let params: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        DenoiserModel::new(header.arch, header.level, header.schedule, params, header.meta)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            TomoError::Format { detail, .. } => TomoError::format(path.display().to_string(), detail),
            other => other,
        })
    }
}
