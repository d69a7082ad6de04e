//! Reconstruction of 2D velocity fields from first-arrival travel times.
//!
//! The pieces: a fast-marching eikonal solver with a recorded causal order,
//! adjoint-state misfit gradients with elliptic smoothing, a VP-SDE sampler
//! with posterior (likelihood-guided) drift, an orthonormal pooling ladder
//! that runs the noisy part of the diffusion on coarse grids, analytic
//! Gaussian-mixture priors plus a small trainable denoiser, phantom
//! generators, and an L-BFGS baseline for verification.

pub mod adjoint;
pub mod bench;
pub mod config;
pub mod eikonal;
pub mod error;
pub mod grid;
pub mod io;
pub mod lbfgs;
pub mod metrics;
pub mod phantom;
pub mod reconstruct;
pub mod rng;
pub mod score;
pub mod sde;
pub mod subspace;

pub use error::{Result, TomoError};
