//! Calibration-aware training and evaluation.
//!
//! The crate is organised around a handful of independent pieces:
//!
//! - [`losses`]: the Socrates objective (focal-modulated, adaptive-target loss
//!   with an explicit unknown class), its ablation family and the CE / Focal /
//!   FLSD / Brier / SAT baselines, all with analytic logit gradients.
//! - [`metrics`]: reliability binning, ECE / MCE / AdaECE / CW-ECE and Pareto
//!   model selection.
//! - [`posthoc`]: temperature, vector and matrix scaling.
//! - [`datasets`]: synthetic Gaussian blobs with label noise, CSV loading and
//!   stratified splits.
//! - [`trainer`] and [`experiment`]: a deterministic MLP + SGD loop and the
//!   seed × loss experiment runner.
//!
//! Data-parallel inner loops go through [`par::Backend`]. With the `parallel`
//! feature (default) they run on rayon; without it everything is sequential.
//! Both backends produce bit-identical results because reductions are always
//! performed in a fixed order over fixed-size chunks.

pub mod config;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod par;
pub mod posthoc;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
