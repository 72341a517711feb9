//! Resampling-based spatial alignment for 2-D feature grids.
//!
//! The crate covers classical sub-pixel resampling (nearest, bilinear, bicubic)
//! with backward warping, the frequency behaviour of those interpolators, and an
//! implicit alignment operator: single-layer coordinate networks over
//! sinusoidally encoded positions feeding a window-based cross-attention.
//! Gradients for the implicit operator are derived by hand so it can be fitted
//! on synthetic scenes with analytically exact sub-pixel ground truth.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). Grids and
//! files are stored as `f32`; gradient checks run in `f64`.

pub mod align;
pub mod encoding;
pub mod error;
pub mod grid;
pub mod resample;
pub mod scalar;
pub mod spectral;
pub mod synth;
pub mod train;

pub use align::{
    align, align_inspect, attend, extract_window, AlignModel, AttentionTrace, EvalStats, ParamKind, QuerySample,
    WindowSample,
};
pub use encoding::{decompose_offset, encode_feature, positional_encoding, EncodingConfig, OffsetParts};
pub use error::{Error, Result};
pub use grid::{ContinuousCoord, FlowField, Grid};
pub use resample::{backward_warp, sample, BoundaryPolicy, ResampleMethod};
pub use scalar::Scalar;
pub use synth::{make_pair, render, AnalyticImage, Sinusoid};
pub use train::{AdamState, AlignInstance, GradientSet};

pub type Grid32 = Grid<f32>;
pub type Grid64 = Grid<f64>;
pub type Flow32 = FlowField<f32>;
pub type Flow64 = FlowField<f64>;
pub type Model32 = AlignModel<f32>;
pub type Model64 = AlignModel<f64>;
pub type Gradients64 = GradientSet<f64>;
