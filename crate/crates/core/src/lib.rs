//! Semi-supervised time-series anomaly detection via contextual
//! discriminative contrastive learning.
//!
//! The pipeline: slide a window over a multivariate series, split each window
//! into an earlier *context* sequence and a trailing *suspect* sequence,
//! embed both with a shared temporal-convolutional encoder, project the
//! suspect embedding through a bank of learnable transformations, and train
//! under a combined contextual/discriminative contrastive objective. The
//! per-window training loss doubles as the anomaly score at inference.
//!
//! Modules, bottom-up:
//! - [`tensor`] / [`autodiff`]: dense row-major tensors plus a reverse-mode
//!   tape sufficient for every layer and loss in this crate, with a
//!   finite-difference gradient checker.
//! - [`data`]: CSV ingestion, min-max normalization, sliding windows.
//! - [`encoder`] / [`transforms`]: the shared TCN feature encoder and the
//!   bank of latent-space transformation networks.
//! - [`losses`]: contrastive objectives (ccl, dcl, cncl, cdcl), the
//!   one-class objective, and the batch-variance hinge regularizer.
//! - [`trainer`]: Adam, chronological train/validation split, early stopping.
//! - [`eval`]: per-tick scoring, point adjustment, best-F1 search, ROC-AUC.
//! - [`synth`]: deterministic sinusoidal generator with injected anomalies.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below pin the concrete types used by the CLI and checkpoints.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub mod autodiff;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};

/// Floating-point scalar the whole crate is generic over.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, for literals and hyperparameters.
    fn cast(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 literal converts to any Scalar")
    }

    /// Widening conversion for report fields, which are always `f64`.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float widens to f64")
    }

    /// Floor applied inside `log`, `sqrt`, division, and norm computations
    /// so that domain violations clamp instead of producing NaN.
    fn numeric_floor() -> Self {
        Self::cast(1e-12)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = autodiff::Tape<f64>;
pub type TimeSeries64 = data::TimeSeries<f64>;
pub type WindowSample64 = data::WindowSample<f64>;
pub type NormalizationStats64 = data::NormalizationStats<f64>;
pub type EncoderState64 = encoder::EncoderState<f64>;
pub type TransformBank64 = transforms::TransformBank<f64>;
pub type LossConfig64 = losses::LossConfig<f64>;
pub type TrainConfig64 = trainer::TrainConfig<f64>;
pub type AdamState64 = trainer::AdamState<f64>;
pub type ScoreSeries64 = eval::ScoreSeries<f64>;
pub type SynthSpec64 = synth::SynthSpec<f64>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape32 = autodiff::Tape<f32>;
