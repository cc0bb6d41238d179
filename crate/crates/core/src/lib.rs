//! Multimodal emotion-recognition core.
//!
//! Text and audio semantic vectors are fused into a guidance vector that
//! steers [`vsc`] compression of the visual token sequence; the compressed
//! sequence is summarized by a dilated causal [`tcn`]; and a masked
//! [`contrastive`] loss aligns the fused text/audio projection with the video
//! projection alongside a cross-entropy classifier ([`pipeline`]).
//! [`data`] handles feature files, synthetic datasets and fold splitting.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bytes;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod numerics;
pub mod par;
pub mod pipeline;
pub mod tcn;
pub mod vsc;

pub use error::{Error, Result};
pub use numerics::Matrix;
