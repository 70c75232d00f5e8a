//! # stature
//!
//! Single-image human height estimation at desk scale, end to end:
//!
//! - **assignment** — propagates height labels from profile identities to
//!   face detections via mutual best match on descriptor distances with a
//!   ratio test, plus precision/recall auditing.
//! - **preprocess** — head/skeleton association, body crop geometry,
//!   upper-body and crop-size filtering, keypoint whitening.
//! - **autodiff** — reverse-mode differentiation engine and the layers
//!   needed to train every regressor end to end.
//! - **regressors** — linear ridge regression, a 4-layer fully connected
//!   network, a two-stream deep regressor with fusion layers, and a
//!   gender classifier head.
//! - **baselines** — constant mean, gender mean, gender-prediction and
//!   3D-pose offset calibration reference predictors.
//! - **evaluation** — MAE, cumulative error histograms, deterministic
//!   dataset splitting, the feature/architecture ablation grid and the
//!   dataset-size curve.
//! - **synth** — seeded anthropometric population and identity-benchmark
//!   generators with known ground truth and a closed-form error floor,
//!   standing in for web-mined data.
//! - **pipeline** — configuration, orchestration and reproducible run
//!   manifests.
//!
//! The `examples/` directory holds one runnable program per capability;
//! the `stature` binary exposes the same operations as subcommands for
//! batch use.

pub mod assignment;
pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod regressors;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
