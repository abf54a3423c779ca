//! Label-free fusion of image quality scores.
//!
//! Each of `M` quality metrics is treated as a noisy observation of an
//! unobserved quality `z`: `x = f(z) + n + n̂`, where `n` is skew-normal with
//! a `z`-dependent scale and `n̂` is Gaussian metric-level noise. A small
//! encoder maps an image's `M` scores to `z`, and every parameter is fitted
//! jointly by maximizing the posterior on unlabeled scores.
//!
//! The crate is organised bottom-up:
//!
//! - [`distmath`]: erf, skew-normal log-density, noise combination, sampling
//! - [`heads`]: per-metric decoder and uncertainty head
//! - [`encoder`]: the amortized fusion network
//! - [`objective`]: negative log-posterior and gradient
//! - [`trainer`]: Adam fitting loop
//! - [`rankfuse`]: rank normalization for the rank-fusion variant
//! - [`data`]: score tables, synthetic data, model files
//! - [`evaluate`]: SRCC/PLCC and dataset aggregation

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod distmath;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod heads;
pub mod model;
pub mod objective;
pub mod rankfuse;
pub mod trainer;

pub use data::{load_csv, load_model, save_csv, save_model, ScoreTable, ScoreView, SynthSpec};
pub use distmath::SkewNormalParams;
pub use error::{FuseError, Result};
pub use evaluate::{aggregate, plcc, srcc, DatasetReport, EvalReport};
pub use model::{FusionModel, ModelParams, Variant};
pub use trainer::{train, train_with_observer, Fitted, TrainConfig};
