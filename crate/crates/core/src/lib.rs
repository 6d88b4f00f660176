//! Latency prediction for CNN inference on edge GPUs from architectural
//! features alone.
//!
//! The pipeline: describe a CNN as a layer graph ([`graph`]), extract its
//! feature vector ([`features`]), assemble profiled measurements into a
//! dataset with novelty-aware splits ([`dataset`]), fit one of five
//! regressors ([`ols`], [`mlp`], [`svr`], [`trees`]) under grid-search
//! cross-validation ([`tuning`]), and report accuracy per exploration space
//! ([`eval`]). [`synth`] provides random architectures and a synthetic
//! latency law so everything runs without GPU hardware.

pub mod dataset;
pub mod eval;
pub mod features;
pub mod graph;
pub mod metrics;
pub mod mlp;
pub mod ols;
pub mod predictor;
pub mod rng;
pub mod svr;
pub mod synth;
pub mod trees;
pub mod tuning;
pub mod zoo;
