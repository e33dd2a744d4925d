//! Conditional denoising by iterative renoising, and diffusion posterior
//! sampling built on top of it.
//!
//! The library solves linear (`y = Ax + noise`) and generalized-linear
//! (componentwise likelihood on `z = Ax`) inverse problems with analytic
//! priors. The core loop alternates exact-prior denoising, a regularized
//! linear solve, and colored renoising that keeps the denoiser input error
//! white; a geometric variance schedule drives it as the inner solver of a
//! DDIM-style sampler. Comparison samplers (DDS, DiffPIR, SNORE) run against
//! the same operator and denoiser interfaces.

pub mod baselines;
pub mod error;
pub mod fire;
pub mod glm;
pub mod harness;
pub mod operators;
pub mod priors;
pub mod record;
pub mod rng;
pub mod scheduler;

pub use error::{FireError, Result};
