//! Scenario generation for LV distribution substations.
//!
//! Synthesizes daily active/reactive power profiles with a conditional
//! diffusion model, benchmarks against classical generators (GMM,
//! regression), scores corpora with a distance-metric suite, and checks
//! cohort coherence by propagating loads through a Newton-Raphson load
//! flow on a 77-bus MV test network.

pub mod baselines;
pub mod checkpoint;
pub mod dataset;
pub mod demo;
pub mod denoiser;
pub mod diffusion;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod powerflow;
