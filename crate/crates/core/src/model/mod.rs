//! The localisation network: per-modality encoders, gates, cross-modal
//! attention and the sigmoid heads, plus early/late-fusion baselines.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, ParamEntry, CONFIG_FILE, PARAMS_FILE};
pub use config::{FusionVariant, ModelConfig, PositionalEncoding};
pub use forward::{
    baseline_forward, bind_features, encode_modality, forward, forward_graph,
    multi_head_attention, sinusoidal_encoding, trace_from_graph, ForwardVars, PredictionTrace,
};
pub use params::{expected_shapes, parameter_count, ModelParams, ParamVars};
