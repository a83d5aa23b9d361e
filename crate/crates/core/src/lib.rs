//! Weakly-supervised multimodal temporal localisation.
//!
//! Three aligned feature streams (video, audio, text) go through per-modality
//! self-attention encoders, per-frame sigmoid gates and a cross-modal attention
//! block, and come out as a frame-level probability curve. Training sees only
//! video-level labels: a top-K multiple-instance objective over the fused and
//! per-modality branches, a temporal smoothness penalty and a cross-modal
//! contrastive term. Evaluation is frame-level AP / ROC-AUC / PR-AUC.
//!
//! Everything runs on a small reverse-mode tape ([`numerics::Graph`]) in double
//! precision, so every gradient in the crate can be checked against central
//! finite differences.

pub mod datamodel;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
