//! Samples, temporal alignment of the three modalities, the synthetic stream
//! generator and the on-disk format.

mod align;
pub mod io;
mod sample;
mod synthetic;

pub use align::{expand_sentences, interpolate_audio, naive_text_expand};
pub use sample::{
    validate_spans, FeatureMatrix, Modality, SentenceSpan, TextMode, TextSource, TrainingView,
    VideoFeatures, VideoSample,
};
pub use synthetic::{
    generate_synthetic, generate_with_segments, CarrierSet, PlantedSegment, SyntheticSpec,
};

/// Deterministic `(train, val, test)` split by position with the given fractions.
pub fn split_dataset(
    samples: Vec<VideoSample>,
    train_fraction: f64,
    val_fraction: f64,
) -> (Vec<VideoSample>, Vec<VideoSample>, Vec<VideoSample>) {
    let n = samples.len();
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let n_val = (((n as f64) * val_fraction).round() as usize).min(n - n_train.min(n));
    let mut it = samples.into_iter();
    let train: Vec<_> = it.by_ref().take(n_train).collect();
    let val: Vec<_> = it.by_ref().take(n_val).collect();
    (train, val, it.collect())
}
