//! Closed-form Gaussian-mixture priors: diffused marginals, exact scores,
//! exact score Jacobian products, subspace projections, and sampling.
//!
//! Diffusing component N(m, S) to time t gives N(sqrt(ab) m, ab S + (1-ab) I),
//! so every downstream quantity (Tweedie mean, guidance VJP, Fisher
//! divergence) has an exact reference value.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TomoError};
use crate::sde::{alpha_bar, NoiseSchedule};
use crate::subspace::{orth_complement, project_level, project_to_depth};

const LOG_2PI: f64 = 1.8378770664093453;

/// Component covariance.
#[derive(Debug, Clone)]
pub enum Covariance {
    /// sigma^2 I
    Spherical(f64),
    /// diag(d)
    Diagonal(Vec<f64>),
    /// dense SPD
    Full(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct GmmPrior {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<Covariance>,
    dim: usize,
}

impl GmmPrior {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Covariance>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covs.len() {
            return Err(TomoError::invalid("mixture component lists differ in length"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || weights.iter().any(|w| *w < 0.0) {
            return Err(TomoError::invalid(format!(
                "weights must form a simplex (sum = {sum})"
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(TomoError::invalid("zero-dimensional mixture"));
        }
        for m in &means {
            if m.len() != dim || m.iter().any(|v| !v.is_finite()) {
                return Err(TomoError::invalid("mean dimension mismatch"));
            }
        }
        for c in &covs {
            match c {
                Covariance::Spherical(s) => {
                    if !(s.is_finite() && *s > 0.0) {
                        return Err(TomoError::invalid("spherical variance must be > 0"));
                    }
                }
                Covariance::Diagonal(d) => {
                    if d.len() != dim || d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                        return Err(TomoError::invalid("diagonal covariance must be positive"));
                    }
                }
                Covariance::Full(m) => {
                    if m.nrows() != dim || m.ncols() != dim {
                        return Err(TomoError::invalid("covariance dimension mismatch"));
                    }
                    if m.clone().cholesky().is_none() {
                        return Err(TomoError::invalid("covariance is not SPD"));
                    }
                }
            }
        }
        Ok(GmmPrior {
            weights,
            means: means.into_iter().map(DVector::from_vec).collect(),
            covs,
            dim,
        })
    }

    /// Kernel-density prior: one spherical component per sample.
    pub fn kde(samples: Vec<Vec<f64>>, bandwidth_sq: f64) -> Result<Self> {
        let k = samples.len();
        if k == 0 {
            return Err(TomoError::invalid("empty sample list"));
        }
        let w = 1.0 / k as f64;
        let mut weights = vec![w; k];
        // make the simplex sum exactly 1.0 despite rounding
        let sum: f64 = weights.iter().sum();
        weights[0] += 1.0 - sum;
        GmmPrior::new(
            weights,
            samples,
            (0..k).map(|_| Covariance::Spherical(bandwidth_sq)).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, i: usize) -> &DVector<f64> {
        &self.means[i]
    }

    pub fn cov(&self, i: usize) -> &Covariance {
        &self.covs[i]
    }

    /// Mixture diffused to time t: N(sqrt(ab) m_i, ab S_i + (1 - ab) I).
    pub fn marginal(&self, t: f64, schedule: &NoiseSchedule) -> Result<GmmPrior> {
        let ab = alpha_bar(schedule, t)?;
        let sab = ab.sqrt();
        let means = self.means.iter().map(|m| (m * sab).data.into()).collect();
        let covs = self
            .covs
            .iter()
            .map(|c| match c {
                Covariance::Spherical(s) => Covariance::Spherical(ab * s + 1.0 - ab),
                Covariance::Diagonal(d) => {
                    Covariance::Diagonal(d.iter().map(|v| ab * v + 1.0 - ab).collect())
                }
                Covariance::Full(m) => {
                    let mut v = m * ab;
                    for i in 0..self.dim {
                        v[(i, i)] += 1.0 - ab;
                    }
                    Covariance::Full(v)
                }
            })
            .collect();
        GmmPrior::new(self.weights.clone(), means, covs)
    }

    fn time_view(&self, t: f64, schedule: &NoiseSchedule) -> Result<TimeView<'_>> {
        let ab = alpha_bar(schedule, t)?;
        let sab = ab.sqrt();
        let comps = self
            .covs
            .iter()
            .map(|c| match c {
                Covariance::Spherical(s) => {
                    let v = ab * s + 1.0 - ab;
                    Ok(CompView::Spherical {
                        v,
                        logdet: self.dim as f64 * v.ln(),
                    })
                }
                Covariance::Diagonal(d) => {
                    let v: Vec<f64> = d.iter().map(|x| ab * x + 1.0 - ab).collect();
                    let logdet = v.iter().map(|x| x.ln()).sum();
                    Ok(CompView::Diagonal { v, logdet })
                }
                Covariance::Full(m) => {
                    let mut vm = m * ab;
                    for i in 0..self.dim {
                        vm[(i, i)] += 1.0 - ab;
                    }
                    let chol = vm
                        .cholesky()
                        .ok_or_else(|| TomoError::numerical("diffused covariance not SPD"))?;
                    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
                    Ok(CompView::Full { chol, logdet })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TimeView {
            prior: self,
            sab,
            comps,
        })
    }

    /// Marginal score grad_x log p_t(x).
    pub fn score(&self, x: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        Ok(self.time_view(t, schedule)?.score_with_gamma(x)?.0)
    }

    /// Exact J v for the (symmetric) Jacobian J of the marginal score.
    pub fn vjp(&self, x: &[f64], t: f64, v: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        self.time_view(t, schedule)?.vjp(x, v)
    }

    /// log p_t(x), for finite-difference oracles.
    pub fn log_density(&self, x: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<f64> {
        self.time_view(t, schedule)?.log_density(x)
    }

    /// Draw one sample from the prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u <= acc {
                pick = i;
                break;
            }
        }
        let m = &self.means[pick];
        let z: DVector<f64> =
            DVector::from_iterator(self.dim, (0..self.dim).map(|_| rng.sample(StandardNormal)));
        let x = match &self.covs[pick] {
            Covariance::Spherical(s) => m + z * s.sqrt(),
            Covariance::Diagonal(d) => {
                let mut out = m.clone();
                for i in 0..self.dim {
                    out[i] += d[i].sqrt() * z[i];
                }
                out
            }
            Covariance::Full(c) => {
                let chol = c.clone().cholesky().expect("validated SPD");
                m + chol.l() * z
            }
        };
        x.data.into()
    }

    /// Exact E || (I - U U^T) x ||^2 for one pooling step below `fine_side`.
    pub fn perp_energy(&self, fine_side: usize) -> Result<f64> {
        if fine_side * fine_side != self.dim {
            return Err(TomoError::invalid(format!(
                "prior dimension {} is not {fine_side}x{fine_side}",
                self.dim
            )));
        }
        let mut total = 0.0;
        for ((w, m), c) in self.weights.iter().zip(&self.means).zip(&self.covs) {
            let m_perp = orth_complement(m.as_slice(), fine_side)?;
            let mean_term: f64 = m_perp.iter().map(|v| v * v).sum();
            // tr(S P_perp); (U U^T)_jj = 1/4 for the one-step pooling
            let trace_term = match c {
                Covariance::Spherical(s) => s * 0.75 * self.dim as f64,
                Covariance::Diagonal(d) => 0.75 * d.iter().sum::<f64>(),
                Covariance::Full(mat) => {
                    let projected = project_matrix(mat, fine_side, 1)?;
                    mat.trace() - projected.trace()
                }
            };
            total += w * (mean_term + trace_term);
        }
        Ok(total)
    }

    /// Project the prior k pooling levels down: means through U^T, spherical
    /// covariances unchanged, diagonal covariances to block means, dense
    /// covariances through U^T S U.
    pub fn project(&self, k: usize, fine_side: usize) -> Result<GmmPrior> {
        if k == 0 {
            return Ok(self.clone());
        }
        if fine_side * fine_side != self.dim || fine_side % (1 << k) != 0 {
            return Err(TomoError::invalid(format!(
                "cannot project a dim-{} prior {k} levels below side {fine_side}",
                self.dim
            )));
        }
        let means = self
            .means
            .iter()
            .map(|m| project_to_depth(m.as_slice(), fine_side, k))
            .collect::<Result<Vec<_>>>()?;
        let covs = self
            .covs
            .iter()
            .map(|c| match c {
                Covariance::Spherical(s) => Ok(Covariance::Spherical(*s)),
                Covariance::Diagonal(d) => {
                    // U^T diag(d) U stays diagonal: each coarse entry is the
                    // mean of its 4^k fine entries
                    let mut v = d.clone();
                    let mut side = fine_side;
                    for _ in 0..k {
                        let pooled = project_level(&v, side)?;
                        v = pooled.iter().map(|x| 0.5 * x).collect();
                        side /= 2;
                    }
                    Ok(Covariance::Diagonal(v))
                }
                Covariance::Full(m) => Ok(Covariance::Full(project_matrix(m, fine_side, k)?)),
            })
            .collect::<Result<Vec<_>>>()?;
        GmmPrior::new(self.weights.clone(), means, covs)
    }
}

/// U_k^T S U_k by pooling columns, then rows.
fn project_matrix(s: &DMatrix<f64>, fine_side: usize, k: usize) -> Result<DMatrix<f64>> {
    let d_in = fine_side * fine_side;
    let coarse_side = fine_side >> k;
    let d_out = coarse_side * coarse_side;
    let mut cols = DMatrix::<f64>::zeros(d_out, d_in);
    for j in 0..d_in {
        let col: Vec<f64> = (0..d_in).map(|i| s[(i, j)]).collect();
        let p = project_to_depth(&col, fine_side, k)?;
        for i in 0..d_out {
            cols[(i, j)] = p[i];
        }
    }
    let mut out = DMatrix::<f64>::zeros(d_out, d_out);
    for i in 0..d_out {
        let row: Vec<f64> = (0..d_in).map(|j| cols[(i, j)]).collect();
        let p = project_to_depth(&row, fine_side, k)?;
        for j in 0..d_out {
            out[(i, j)] = p[j];
        }
    }
    Ok(out)
}

enum CompView {
    Spherical { v: f64, logdet: f64 },
    Diagonal { v: Vec<f64>, logdet: f64 },
    Full { chol: Cholesky<f64, Dyn>, logdet: f64 },
}

struct TimeView<'a> {
    prior: &'a GmmPrior,
    sab: f64,
    comps: Vec<CompView>,
}

/// Responsibilities below this threshold contribute less than roundoff to
/// any accumulation and are skipped.
const GAMMA_CUTOFF: f64 = 1e-16;

impl TimeView<'_> {
    /// log w_i + log N_i(x) per component. Spherical and diagonal components
    /// are evaluated without temporaries, so large kernel-density mixtures
    /// stay cheap.
    fn log_terms(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.prior.dim;
        if x.len() != d {
            return Err(TomoError::invalid("evaluation point dimension mismatch"));
        }
        let mut logps = Vec::with_capacity(self.comps.len());
        for ((w, m), comp) in self.prior.weights.iter().zip(&self.prior.means).zip(&self.comps) {
            let (quad, logdet) = match comp {
                CompView::Spherical { v, logdet } => {
                    let mut q = 0.0;
                    for (xj, mj) in x.iter().zip(m.iter()) {
                        let r = xj - self.sab * mj;
                        q += r * r;
                    }
                    (q / v, *logdet)
                }
                CompView::Diagonal { v, logdet } => {
                    let mut q = 0.0;
                    for ((xj, mj), vj) in x.iter().zip(m.iter()).zip(v.iter()) {
                        let r = xj - self.sab * mj;
                        q += r * r / vj;
                    }
                    (q, *logdet)
                }
                CompView::Full { chol, logdet } => {
                    let r = DVector::from_iterator(
                        d,
                        x.iter().zip(m.iter()).map(|(xj, mj)| xj - self.sab * mj),
                    );
                    let sol = chol.solve(&r);
                    (r.dot(&sol), *logdet)
                }
            };
            let logw = if *w > 0.0 { w.ln() } else { f64::NEG_INFINITY };
            logps.push(logw - 0.5 * (quad + logdet + d as f64 * LOG_2PI));
        }
        Ok(logps)
    }

    fn gamma(&self, x: &[f64]) -> Result<Vec<f64>> {
        let logps = self.log_terms(x)?;
        let lse = log_sum_exp(&logps);
        Ok(logps.iter().map(|lp| (lp - lse).exp()).collect())
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(log_sum_exp(&self.log_terms(x)?))
    }

    /// Accumulate `out += gamma * u_i * extra` where u_i = -V_i^-1 (x - sab m_i).
    fn add_scaled_u(
        &self,
        i: usize,
        x: &[f64],
        coeff: f64,
        out: &mut [f64],
    ) {
        let m = &self.prior.means[i];
        match &self.comps[i] {
            CompView::Spherical { v, .. } => {
                let c = coeff / v;
                for ((o, xj), mj) in out.iter_mut().zip(x.iter()).zip(m.iter()) {
                    *o += c * (self.sab * mj - xj);
                }
            }
            CompView::Diagonal { v, .. } => {
                for (((o, xj), mj), vj) in
                    out.iter_mut().zip(x.iter()).zip(m.iter()).zip(v.iter())
                {
                    *o += coeff / vj * (self.sab * mj - xj);
                }
            }
            CompView::Full { chol, .. } => {
                let r = DVector::from_iterator(
                    x.len(),
                    x.iter().zip(m.iter()).map(|(xj, mj)| xj - self.sab * mj),
                );
                let sol = chol.solve(&r);
                for (o, sj) in out.iter_mut().zip(sol.iter()) {
                    *o -= coeff * sj;
                }
            }
        }
    }

    fn u_dot(&self, i: usize, x: &[f64], v: &[f64]) -> f64 {
        let m = &self.prior.means[i];
        match &self.comps[i] {
            CompView::Spherical { v: var, .. } => {
                let mut acc = 0.0;
                for ((xj, mj), vj) in x.iter().zip(m.iter()).zip(v.iter()) {
                    acc += (self.sab * mj - xj) * vj;
                }
                acc / var
            }
            CompView::Diagonal { v: var, .. } => {
                let mut acc = 0.0;
                for (((xj, mj), vj), dj) in x.iter().zip(m.iter()).zip(v.iter()).zip(var.iter()) {
                    acc += (self.sab * mj - xj) * vj / dj;
                }
                acc
            }
            CompView::Full { chol, .. } => {
                let r = DVector::from_iterator(
                    x.len(),
                    x.iter().zip(m.iter()).map(|(xj, mj)| xj - self.sab * mj),
                );
                let sol = chol.solve(&r);
                -sol.dot(&DVector::from_column_slice(v))
            }
        }
    }

    fn score_with_gamma(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let gamma = self.gamma(x)?;
        let mut s = vec![0.0; self.prior.dim];
        for (i, g) in gamma.iter().enumerate() {
            if *g >= GAMMA_CUTOFF {
                self.add_scaled_u(i, x, *g, &mut s);
            }
        }
        Ok((s, gamma))
    }

    /// J v with J = sum_i gamma_i u_i u_i^T - s s^T - sum_i gamma_i V_i^-1,
    /// where u_i = -V_i^-1 (x - sab m_i). J is symmetric, so J^T v = J v.
    fn vjp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.prior.dim {
            return Err(TomoError::invalid("vjp vector dimension mismatch"));
        }
        let (s, gamma) = self.score_with_gamma(x)?;
        let mut out = vec![0.0; self.prior.dim];
        for (i, g) in gamma.iter().enumerate() {
            if *g < GAMMA_CUTOFF {
                continue;
            }
            let w = self.u_dot(i, x, v);
            self.add_scaled_u(i, x, g * w, &mut out); // gamma_i u_i (u_i . v)
            match &self.comps[i] {
                CompView::Spherical { v: var, .. } => {
                    let c = g / var;
                    for (o, vj) in out.iter_mut().zip(v.iter()) {
                        *o -= c * vj;
                    }
                }
                CompView::Diagonal { v: var, .. } => {
                    for ((o, vj), dj) in out.iter_mut().zip(v.iter()).zip(var.iter()) {
                        *o -= g * vj / dj;
                    }
                }
                CompView::Full { chol, .. } => {
                    let sol = chol.solve(&DVector::from_column_slice(v));
                    for (o, sj) in out.iter_mut().zip(sol.iter()) {
                        *o -= g * sj;
                    }
                }
            }
        }
        let s_dot_v: f64 = s.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        for (o, sj) in out.iter_mut().zip(s.iter()) {
            *o -= s_dot_v * sj;
        }
        Ok(out)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Spec-named free functions over [`GmmPrior`].
pub fn gmm_marginal(prior: &GmmPrior, t: f64, schedule: &NoiseSchedule) -> Result<GmmPrior> {
    prior.marginal(t, schedule)
}

pub fn gmm_score(prior: &GmmPrior, x: &[f64], t: f64, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    prior.score(x, t, schedule)
}

pub fn gmm_vjp(
    prior: &GmmPrior,
    x: &[f64],
    t: f64,
    v: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    prior.vjp(x, t, v, schedule)
}

pub fn project_gmm(prior: &GmmPrior, k: usize, fine_side: usize) -> Result<GmmPrior> {
    prior.project(k, fine_side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamSeed};

    fn random_gmm(dim: usize, comps: usize, seed: u64) -> GmmPrior {
        let mut rng = StreamSeed(seed).stream(Purpose::MonteCarlo, 0, 0);
        let mut weights: Vec<f64> = (0..comps).map(|_| rng.gen_range(0.2..1.0)).collect();
        let sum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= sum;
        }
        let adjust = 1.0 - weights.iter().sum::<f64>();
        weights[0] += adjust;
        let means: Vec<Vec<f64>> = (0..comps)
            .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let covs: Vec<Covariance> = (0..comps)
            .map(|i| match i % 3 {
                0 => Covariance::Spherical(rng.gen_range(0.3..2.0)),
                1 => Covariance::Diagonal((0..dim).map(|_| rng.gen_range(0.3..2.0)).collect()),
                _ => {
                    let a = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-0.5..0.5));
                    let mut s = &a * a.transpose();
                    for j in 0..dim {
                        s[(j, j)] += 1.0;
                    }
                    Covariance::Full(s)
                }
            })
            .collect();
        GmmPrior::new(weights, means, covs).unwrap()
    }

    #[test]
    fn standard_normal_score_is_minus_x() {
        let schedule = NoiseSchedule::default();
        let prior = GmmPrior::new(vec![1.0], vec![vec![0.0; 3]], vec![Covariance::Spherical(1.0)])
            .unwrap();
        let x = [0.4, -1.1, 2.0];
        for t in [0.0, 0.3, 0.9] {
            let s = prior.score(&x, t, &schedule).unwrap();
            for (si, xi) in s.iter().zip(x.iter()) {
                assert!((si + xi).abs() < 1e-12);
            }
            let v = [1.0, -2.0, 0.5];
            let jv = prior.vjp(&x, t, &v, &schedule).unwrap();
            for (ji, vi) in jv.iter().zip(v.iter()) {
                assert!((ji + vi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_modes_give_zero_score_at_origin() {
        let schedule = NoiseSchedule::default();
        let m = vec![1.0, -0.5, 0.25, 2.0];
        let prior = GmmPrior::new(
            vec![0.5, 0.5],
            vec![m.clone(), m.iter().map(|v| -v).collect()],
            vec![Covariance::Spherical(0.5), Covariance::Spherical(0.5)],
        )
        .unwrap();
        let s = prior.score(&[0.0; 4], 0.2, &schedule).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn marginal_transform_hand_values() {
        let schedule = NoiseSchedule::default();
        // N(m, 4I) at alpha_bar = 0.25 becomes N(0.5 m, 1.75 I)
        let prior = GmmPrior::new(
            vec![1.0],
            vec![vec![2.0, -1.0]],
            vec![Covariance::Spherical(4.0)],
        )
        .unwrap();
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if alpha_bar(&schedule, mid).unwrap() > 0.25 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        let marg = prior.marginal(t, &schedule).unwrap();
        assert!((marg.mean(0)[0] - 1.0).abs() < 1e-6);
        assert!((marg.mean(0)[1] + 0.5).abs() < 1e-6);
        match marg.cov(0) {
            Covariance::Spherical(v) => assert!((v - 1.75).abs() < 1e-6),
            _ => panic!("spherical stays spherical"),
        }

        // t = 0 identity; N(0, I) is a fixed point
        let id = prior.marginal(0.0, &schedule).unwrap();
        assert_eq!(id.mean(0), prior.mean(0));
        let std = GmmPrior::new(vec![1.0], vec![vec![0.0; 2]], vec![Covariance::Spherical(1.0)])
            .unwrap();
        let fixed = std.marginal(0.7, &schedule).unwrap();
        match fixed.cov(0) {
            Covariance::Spherical(v) => assert!((v - 1.0).abs() < 1e-12),
            _ => panic!(),
        }
    }

    #[test]
    fn score_matches_log_density_finite_differences() {
        let schedule = NoiseSchedule::default();
        let prior = random_gmm(4, 3, 17);
        let mut rng = StreamSeed(3).stream(Purpose::MonteCarlo, 0, 1);
        for trial in 0..4 {
            let t = 0.1 + 0.2 * trial as f64;
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s = prior.score(&x, t, &schedule).unwrap();
            let eps = 1e-6;
            for k in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += eps;
                xm[k] -= eps;
                let fd = (prior.log_density(&xp, t, &schedule).unwrap()
                    - prior.log_density(&xm, t, &schedule).unwrap())
                    / (2.0 * eps);
                let denom = fd.abs().max(1e-8);
                assert!(
                    (s[k] - fd).abs() / denom < 1e-5,
                    "score fd mismatch: {} vs {fd}",
                    s[k]
                );
            }
        }
    }

    #[test]
    fn vjp_matches_score_finite_differences_and_is_linear() {
        let schedule = NoiseSchedule::default();
        for (dim, seed) in [(4usize, 5u64), (8, 6), (16, 7)] {
            let prior = random_gmm(dim, 3, seed);
            let mut rng = StreamSeed(seed).stream(Purpose::MonteCarlo, 0, 2);
            let t = 0.35;
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let jv = prior.vjp(&x, t, &v, &schedule).unwrap();
            let eps = 1e-6;
            let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
            let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
            let sp = prior.score(&xp, t, &schedule).unwrap();
            let sm = prior.score(&xm, t, &schedule).unwrap();
            let norm: f64 = jv.iter().map(|v| v * v).sum::<f64>().sqrt();
            for k in 0..dim {
                let fd = (sp[k] - sm[k]) / (2.0 * eps);
                assert!(
                    (jv[k] - fd).abs() <= 1e-5 * norm.max(1.0),
                    "dim {dim} comp {k}: {} vs {fd}",
                    jv[k]
                );
            }
            // linearity
            let a = 0.7;
            let b = -1.3;
            let comb: Vec<f64> = v.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
            let j_comb = prior.vjp(&x, t, &comb, &schedule).unwrap();
            let jw = prior.vjp(&x, t, &w, &schedule).unwrap();
            for k in 0..dim {
                let want = a * jv[k] + b * jw[k];
                assert!((j_comb[k] - want).abs() < 1e-12 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn projection_identities() {
        let schedule = NoiseSchedule::default();
        let side = 4;
        let d = side * side;
        let prior = GmmPrior::new(
            vec![1.0],
            vec![vec![0.0; d]],
            vec![Covariance::Spherical(1.0)],
        )
        .unwrap();
        // isotropic stays isotropic at any depth
        let p = prior.project(2, side).unwrap();
        assert_eq!(p.dim(), 1);
        match p.cov(0) {
            Covariance::Spherical(v) => assert!((v - 1.0).abs() < 1e-15),
            _ => panic!(),
        }
        // k = 0 identity
        let same = prior.project(0, side).unwrap();
        assert_eq!(same.dim(), d);

        // block-constant mean image: projected mean = 2^k * pooled values
        let mut img = vec![0.0; d];
        for a in 0..2 {
            for b in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        img[(2 * a + i) * side + 2 * b + j] = (a * 2 + b) as f64 + 0.5;
                    }
                }
            }
        }
        let prior2 = GmmPrior::new(vec![1.0], vec![img.clone()], vec![Covariance::Spherical(1.0)])
            .unwrap();
        let proj = prior2.project(1, side).unwrap();
        let arr = ndarray::Array2::from_shape_vec((side, side), img).unwrap();
        let pooled = crate::grid::avg_pool(&arr).unwrap();
        for (got, want) in proj.mean(0).iter().zip(pooled.iter()) {
            assert!((got - 2.0 * want).abs() < 1e-12);
        }
        let _ = schedule;
    }

    #[test]
    fn projection_commutes_with_marginal() {
        let schedule = NoiseSchedule::default();
        let side = 4;
        let prior = random_gmm(side * side, 2, 23);
        let t = 0.4;
        let a = prior.marginal(t, &schedule).unwrap().project(1, side).unwrap();
        let b = prior.project(1, side).unwrap().marginal(t, &schedule).unwrap();
        let mut rng = StreamSeed(2).stream(Purpose::MonteCarlo, 0, 4);
        for _ in 0..8 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let da = a.log_density(&x, 0.0, &schedule).unwrap();
            let db = b.log_density(&x, 0.0, &schedule).unwrap();
            assert!((da - db).abs() < 1e-10, "{da} vs {db}");
        }
    }

    #[test]
    fn stein_identity_monte_carlo() {
        // E ||score||^2 = E tr(-J) under the marginal, within MC error
        let schedule = NoiseSchedule::default();
        let dim = 4;
        let prior = random_gmm(dim, 2, 31);
        let t = 0.5;
        let marg = prior.marginal(t, &schedule).unwrap();
        let mut rng = StreamSeed(8).stream(Purpose::MonteCarlo, 0, 5);
        let n = 4000;
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for _ in 0..n {
            let x = marg.sample(&mut rng);
            let s = prior.score(&x, t, &schedule).unwrap();
            lhs += s.iter().map(|v| v * v).sum::<f64>();
            for k in 0..dim {
                let mut e = vec![0.0; dim];
                e[k] = 1.0;
                let je = prior.vjp(&x, t, &e, &schedule).unwrap();
                rhs -= je[k];
            }
        }
        lhs /= n as f64;
        rhs /= n as f64;
        assert!((lhs - rhs).abs() / rhs.abs() < 0.1, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn kde_prior_weights_sum_to_one() {
        let samples: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64; 4]).collect();
        let kde = GmmPrior::kde(samples, 0.5).unwrap();
        assert_eq!(kde.n_components(), 7);
        assert!((kde.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
