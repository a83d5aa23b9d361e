//! Temporal alignment of audio and text to the video frame grid.
//!
//! Frame `t` covers `[t/fps, (t+1)/fps)` and belongs to whichever sentence
//! contains its midpoint. Frames outside every sentence get a zero vector.

use super::sample::{validate_spans, FeatureMatrix, Modality, SentenceSpan};
use crate::error::{Error, Result};

/// Linearly resamples `raw` (S rows) to `frames` rows.
///
/// Output row `i` sits at source position `i·(S−1)/(T−1)`; with `S = 1` or
/// `T = 1` the first row is repeated.
pub fn interpolate_audio(raw: &FeatureMatrix, frames: usize) -> Result<FeatureMatrix> {
    let s = raw.rows();
    if s == 0 {
        return Err(Error::EmptyInput("audio features with zero rows".into()));
    }
    if frames == 0 {
        return Err(Error::EmptyInput("interpolation to zero frames".into()));
    }
    let cols = raw.cols();
    if s == frames {
        return Ok(raw.clone());
    }
    let mut data = Vec::with_capacity(frames * cols);
    for i in 0..frames {
        if s == 1 || frames == 1 {
            data.extend_from_slice(raw.row(0));
            continue;
        }
        let pos = (i * (s - 1)) as f64 / (frames - 1) as f64;
        let lo = (pos.floor() as usize).min(s - 1);
        let hi = (lo + 1).min(s - 1);
        let w = pos - lo as f64;
        let (a, b) = (raw.row(lo), raw.row(hi));
        data.extend(a.iter().zip(b).map(|(&x, &y)| {
            let (x, y) = (f64::from(x), f64::from(y));
            (x + w * (y - x)) as f32
        }));
    }
    FeatureMatrix::new(raw.modality(), frames, cols, data)
}

/// Index of the span whose `[start, end)` contains frame `t`'s midpoint.
fn covering_span(spans: &[SentenceSpan], t: usize, fps: f64) -> Option<&SentenceSpan> {
    let mid = (t as f64 + 0.5) / fps;
    // spans are sorted and disjoint: the candidate is the last one starting at or before `mid`
    let idx = spans.partition_point(|s| s.start_s <= mid);
    idx.checked_sub(1)
        .map(|i| &spans[i])
        .filter(|s| mid < s.end_s)
}

/// Frame-level text features from sentence embeddings (`S x D`).
pub fn expand_sentences(
    spans: &[SentenceSpan],
    embeddings: &FeatureMatrix,
    frames: usize,
    fps: f64,
) -> Result<FeatureMatrix> {
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(Error::Argument(format!("fps must be positive, got {fps}")));
    }
    validate_spans(spans)?;
    for s in spans {
        if s.row >= embeddings.rows() {
            return Err(Error::Index {
                what: "sentence embedding row".into(),
                index: s.row,
                len: embeddings.rows(),
            });
        }
    }
    let cols = embeddings.cols();
    let mut data = vec![0.0f32; frames * cols];
    for t in 0..frames {
        if let Some(span) = covering_span(spans, t, fps) {
            data[t * cols..(t + 1) * cols].copy_from_slice(embeddings.row(span.row));
        }
    }
    FeatureMatrix::new(Modality::Text, frames, cols, data)
}

/// Repeats one whole-transcript embedding (`1 x D`) over `frames` rows.
pub fn naive_text_expand(global: &FeatureMatrix, frames: usize) -> Result<FeatureMatrix> {
    if global.rows() != 1 {
        return Err(Error::Argument(format!(
            "naive text embedding must have one row, got {}",
            global.rows()
        )));
    }
    if frames == 0 {
        return Err(Error::EmptyInput("naive text expansion to zero frames".into()));
    }
    let data = global.data().repeat(frames);
    FeatureMatrix::new(Modality::Text, frames, global.cols(), data)
}
