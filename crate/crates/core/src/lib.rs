//! Covariance-aware diffusion sampling lab.
//!
//! A first-order sampler that estimates the denoising posterior covariance
//! per frequency component, one Jacobian-vector product and a Hutchinson
//! probe per step, and injects matching structured noise into a DDIM
//! update, next to the usual baselines (DDIM, DDPM, aDDIM, Heun,
//! DPM-Solver++). Everything runs at desk scale against analytic Gaussian
//! and mixture oracles, with deterministic seeds and exact
//! function-evaluation accounting.

pub mod cli;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod io;
pub mod plot;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod tensor;
pub mod transforms;
pub mod tweedie;
pub mod verify;

pub use error::{Error, Result};
