//! Synthetic multimodal streams with planted target segments.
//!
//! Background frames are zero-mean Gaussian noise in every modality. Each
//! positive video gets one or more planted segments; inside a segment the
//! segment's carrier modalities receive `signal · pattern[m]`, where
//! `pattern[m]` is a fixed per-modality direction of unit length. `signal` is
//! therefore the Euclidean length of the shift, and the shift along that
//! direction measures `signal / noise` background standard deviations.
//! Text is generated at sentence level: segment boundaries are always sentence
//! boundaries, so a text-carried segment maps onto whole sentences.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::align::{expand_sentences, naive_text_expand};
use super::sample::{
    FeatureMatrix, Modality, SentenceSpan, TextMode, TextSource, VideoFeatures, VideoSample,
};
use crate::error::{Error, Result};

/// Non-empty subset of modalities that carries a planted segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CarrierSet(u8);

impl CarrierSet {
    pub fn new(modalities: &[Modality]) -> Result<Self> {
        let bits = modalities.iter().fold(0u8, |acc, m| acc | (1 << m.index()));
        if bits == 0 {
            return Err(Error::Spec("empty carrier set".into()));
        }
        Ok(Self(bits))
    }

    pub fn single(m: Modality) -> Self {
        Self(1 << m.index())
    }

    pub fn contains(self, m: Modality) -> bool {
        self.0 & (1 << m.index()) != 0
    }

    /// The seven non-empty subsets of {video, audio, text}.
    pub fn all_subsets() -> Vec<Self> {
        (1u8..8).map(Self).collect()
    }
}

impl fmt::Display for CarrierSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (m, c) in Modality::ALL.iter().zip(['v', 'a', 't']) {
            if self.contains(*m) {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for CarrierSet {
    type Err = Error;

    /// Parses letter sets such as `v`, `at`, `vat`.
    fn from_str(s: &str) -> Result<Self> {
        let mut mods = Vec::new();
        for c in s.chars() {
            mods.push(match c {
                'v' => Modality::Video,
                'a' => Modality::Audio,
                't' | 'l' => Modality::Text,
                other => return Err(Error::Spec(format!("unknown carrier letter {other:?}"))),
            });
        }
        Self::new(&mods)
    }
}

/// Parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_videos: usize,
    pub positive_fraction: f64,
    pub frames_min: usize,
    pub frames_max: usize,
    pub segments_min: usize,
    pub segments_max: usize,
    pub segment_len_min: usize,
    pub segment_len_max: usize,
    pub carriers: Vec<CarrierSet>,
    /// Euclidean length of the planted shift per frame.
    pub signal: f64,
    /// Per-entry standard deviation of the background noise.
    pub noise: f64,
    pub seed: u64,
    /// Feature widths for video, audio, text.
    pub dims: [usize; 3],
    pub fps: f64,
    pub text_mode: TextMode,
    pub sentence_len_min: usize,
    pub sentence_len_max: usize,
    /// Chance of a silent gap before each sentence outside text-carried segments.
    pub gap_probability: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_videos: 200,
            positive_fraction: 0.5,
            frames_min: 40,
            frames_max: 120,
            segments_min: 1,
            segments_max: 3,
            segment_len_min: 3,
            segment_len_max: 10,
            carriers: CarrierSet::all_subsets(),
            signal: 2.0,
            noise: 1.0,
            seed: 0,
            dims: [768, 128, 768],
            fps: 1.0,
            text_mode: TextMode::Sentence,
            sentence_len_min: 2,
            sentence_len_max: 8,
            gap_probability: 0.1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Spec(msg));
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return fail(format!("positive_fraction {} outside [0, 1]", self.positive_fraction));
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return fail(format!("frame range [{}, {}]", self.frames_min, self.frames_max));
        }
        if self.segments_min == 0 || self.segments_min > self.segments_max {
            return fail(format!("segment count range [{}, {}]", self.segments_min, self.segments_max));
        }
        if self.segment_len_min == 0 || self.segment_len_min > self.segment_len_max {
            return fail(format!(
                "segment length range [{}, {}]",
                self.segment_len_min, self.segment_len_max
            ));
        }
        if self.segment_len_max > self.frames_min {
            return fail(format!(
                "segments of up to {} frames do not fit in videos of {} frames",
                self.segment_len_max, self.frames_min
            ));
        }
        if self.sentence_len_min == 0 || self.sentence_len_min > self.sentence_len_max {
            return fail(format!(
                "sentence length range [{}, {}]",
                self.sentence_len_min, self.sentence_len_max
            ));
        }
        if self.carriers.is_empty() {
            return fail("no carrier sets".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !self.signal.is_finite() {
            return fail(format!("signal {} / noise {}", self.signal, self.noise));
        }
        if self.dims.contains(&0) {
            return fail(format!("feature widths {:?}", self.dims));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return fail(format!("fps {}", self.fps));
        }
        if !(0.0..1.0).contains(&self.gap_probability) {
            return fail(format!("gap_probability {}", self.gap_probability));
        }
        Ok(())
    }

    /// Number of positive videos the generator will emit.
    pub fn positive_count(&self) -> usize {
        (self.positive_fraction * self.num_videos as f64).round() as usize
    }
}

/// A planted segment `[start, start + len)` and the modalities carrying it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantedSegment {
    pub start: usize,
    pub len: usize,
    pub carriers: CarrierSet,
}

impl PlantedSegment {
    fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Generates the dataset described by `spec`; deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<VideoSample>> {
    Ok(generate_with_segments(spec)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

/// Like [`generate_synthetic`], also returning each video's planted segments.
pub fn generate_with_segments(spec: &SyntheticSpec) -> Result<Vec<(VideoSample, Vec<PlantedSegment>)>> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels = vec![false; spec.num_videos];
    labels[..spec.positive_count()].iter_mut().for_each(|l| *l = true);
    labels.shuffle(&mut master);
    let patterns: [Vec<f64>; 3] = Modality::ALL.map(|m| unit_pattern(spec.dims[m.index()], &mut master));

    labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64 + 1);
            generate_video(spec, i, label, &patterns, &mut rng)
        })
        .collect()
}

/// Random direction of unit Euclidean length.
fn unit_pattern(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.into_iter().map(|v| v / norm).collect()
}

fn place_segments(spec: &SyntheticSpec, frames: usize, rng: &mut ChaCha8Rng) -> Vec<PlantedSegment> {
    let count = rng.random_range(spec.segments_min..=spec.segments_max);
    let mut segs: Vec<PlantedSegment> = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.random_range(spec.segment_len_min..=spec.segment_len_max);
        let carriers = spec.carriers[rng.random_range(0..spec.carriers.len())];
        // keep at least one background frame between segments so runs stay distinct
        for _attempt in 0..100 {
            let start = rng.random_range(0..=frames - len);
            let clash = segs
                .iter()
                .any(|s| start <= s.end() && s.start <= start + len);
            if !clash {
                segs.push(PlantedSegment { start, len, carriers });
                break;
            }
        }
    }
    segs.sort_by_key(|s| s.start);
    segs
}

fn noise_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

fn add_signal(row: &mut [f64], pattern: &[f64], signal: f64) {
    for (v, p) in row.iter_mut().zip(pattern) {
        *v += signal * p;
    }
}

fn to_f32(data: Vec<f64>) -> Vec<f32> {
    data.into_iter().map(|v| v as f32).collect()
}

/// Sentence spans on the frame grid: `(start_frame, end_frame)` pairs.
fn sentence_frames(
    spec: &SyntheticSpec,
    frames: usize,
    segments: &[PlantedSegment],
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let mut boundaries: Vec<usize> = segments.iter().flat_map(|s| [s.start, s.end()]).collect();
    boundaries.push(frames);
    boundaries.sort_unstable();
    let in_text_segment = |t: usize| {
        segments
            .iter()
            .any(|s| s.carriers.contains(Modality::Text) && s.start <= t && t < s.end())
    };

    let mut out = Vec::new();
    let mut t = 0;
    while t < frames {
        let next_boundary = boundaries[boundaries.partition_point(|&b| b <= t)];
        if !in_text_segment(t) && rng.random_bool(spec.gap_probability) {
            let gap = rng.random_range(1..=3usize);
            t = (t + gap).min(next_boundary);
            continue;
        }
        let len = rng.random_range(spec.sentence_len_min..=spec.sentence_len_max);
        let end = (t + len).min(next_boundary);
        out.push((t, end));
        t = end;
    }
    out
}

fn generate_video(
    spec: &SyntheticSpec,
    index: usize,
    label: bool,
    patterns: &[Vec<f64>; 3],
    rng: &mut ChaCha8Rng,
) -> Result<(VideoSample, Vec<PlantedSegment>)> {
    let frames = rng.random_range(spec.frames_min..=spec.frames_max);
    let segments = if label {
        place_segments(spec, frames, rng)
    } else {
        Vec::new()
    };
    let mut truth = vec![0u8; frames];
    for s in &segments {
        truth[s.start..s.end()].iter_mut().for_each(|v| *v = 1);
    }

    let mut streams = Vec::with_capacity(2);
    for m in [Modality::Video, Modality::Audio] {
        let dim = spec.dims[m.index()];
        let mut data = noise_matrix(frames, dim, spec.noise, rng);
        for s in segments.iter().filter(|s| s.carriers.contains(m)) {
            for t in s.start..s.end() {
                add_signal(&mut data[t * dim..(t + 1) * dim], &patterns[m.index()], spec.signal);
            }
        }
        streams.push(FeatureMatrix::new(m, frames, dim, to_f32(data))?);
    }

    let text_dim = spec.dims[Modality::Text.index()];
    let sentence_grid = sentence_frames(spec, frames, &segments, rng);
    let mut emb = noise_matrix(sentence_grid.len(), text_dim, spec.noise, rng);
    for (row, &(start, _)) in sentence_grid.iter().enumerate() {
        let carried = segments
            .iter()
            .any(|s| s.carriers.contains(Modality::Text) && s.start <= start && start < s.end());
        if carried {
            add_signal(
                &mut emb[row * text_dim..(row + 1) * text_dim],
                &patterns[Modality::Text.index()],
                spec.signal,
            );
        }
    }
    let spans: Vec<SentenceSpan> = sentence_grid
        .iter()
        .enumerate()
        .map(|(row, &(s, e))| SentenceSpan {
            start_s: s as f64 / spec.fps,
            end_s: e as f64 / spec.fps,
            row,
        })
        .collect();

    let (text, text_source) = match spec.text_mode {
        TextMode::Sentence => {
            let embeddings = FeatureMatrix::new(Modality::Text, spans.len(), text_dim, to_f32(emb))?;
            let text = expand_sentences(&spans, &embeddings, frames, spec.fps)?;
            (text, TextSource::Sentences { spans, embeddings })
        }
        TextMode::Naive => {
            let mut mean = vec![0.0f64; text_dim];
            let n = sentence_grid.len().max(1) as f64;
            for row in emb.chunks(text_dim) {
                for (acc, v) in mean.iter_mut().zip(row) {
                    *acc += v / n;
                }
            }
            let global = FeatureMatrix::new(Modality::Text, 1, text_dim, to_f32(mean))?;
            let text = naive_text_expand(&global, frames)?;
            (text, TextSource::Naive { global })
        }
        TextMode::None => (
            FeatureMatrix::zeros(Modality::Text, frames, text_dim),
            TextSource::None { dim: text_dim },
        ),
    };

    let audio = streams.pop().expect("audio stream");
    let video = streams.pop().expect("video stream");
    let sample = VideoSample {
        id: format!("syn{index:05}"),
        label,
        fps: spec.fps,
        features: VideoFeatures::new(video, audio, text)?,
        text_source,
        frame_truth: Some(truth),
    };
    Ok((sample, segments))
}
