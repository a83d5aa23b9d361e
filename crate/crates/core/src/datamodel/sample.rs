use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

/// One of the three input streams. Ordering (video, audio, text) is the fixed
/// concatenation order used by fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Video,
    Audio,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Video, Modality::Audio, Modality::Text];

    pub fn index(self) -> usize {
        match self {
            Modality::Video => 0,
            Modality::Audio => 1,
            Modality::Text => 2,
        }
    }

    /// Short tag used in parameter names and file names.
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Video => "v",
            Modality::Audio => "a",
            Modality::Text => "l",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Video => "video",
            Modality::Audio => "audio",
            Modality::Text => "text",
        })
    }
}

/// Dense `T x D` single-precision feature sequence for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    modality: Modality,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(modality: Modality, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Argument(format!(
                "{modality} feature data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self {
            modality,
            rows,
            cols,
            data,
        })
    }

    pub fn zeros(modality: Modality, rows: usize, cols: usize) -> Self {
        Self {
            modality,
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn to_tensor(&self) -> Tensor2 {
        Tensor2::new(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("shape checked at construction")
    }

    /// Rounds a tensor to single precision.
    pub fn from_tensor(modality: Modality, t: &Tensor2) -> Self {
        Self {
            modality,
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().iter().map(|&v| v as f32).collect(),
        }
    }
}

/// The three streams of one video, aligned to a common frame count.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    streams: [FeatureMatrix; 3],
}

impl VideoFeatures {
    pub fn new(video: FeatureMatrix, audio: FeatureMatrix, text: FeatureMatrix) -> Result<Self> {
        let streams = [video, audio, text];
        for (m, s) in Modality::ALL.iter().zip(&streams) {
            if s.modality != *m {
                return Err(Error::Argument(format!(
                    "expected a {m} stream, got {}",
                    s.modality
                )));
            }
        }
        let t = streams[0].rows;
        if t == 0 {
            return Err(Error::EmptyInput("video with zero frames".into()));
        }
        for s in &streams[1..] {
            if s.rows != t {
                return Err(Error::Argument(format!(
                    "{} stream has {} rows, video has {t} frames",
                    s.modality, s.rows
                )));
            }
        }
        Ok(Self { streams })
    }

    pub fn frames(&self) -> usize {
        self.streams[0].rows
    }

    pub fn get(&self, m: Modality) -> &FeatureMatrix {
        &self.streams[m.index()]
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.streams[0].cols,
            self.streams[1].cols,
            self.streams[2].cols,
        ]
    }
}

/// A timed sentence pointing into a sentence-embedding matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub start_s: f64,
    pub end_s: f64,
    pub row: usize,
}

/// Checks `0 ≤ start < end` per span and that spans are sorted and disjoint.
pub fn validate_spans(spans: &[SentenceSpan]) -> Result<()> {
    let mut prev_end = 0.0f64;
    for (i, s) in spans.iter().enumerate() {
        if !(s.start_s >= 0.0 && s.start_s < s.end_s) || !s.end_s.is_finite() {
            return Err(Error::Argument(format!(
                "sentence {i}: invalid interval [{}, {})",
                s.start_s, s.end_s
            )));
        }
        if s.start_s < prev_end {
            return Err(Error::Argument(format!(
                "sentence {i} starts at {} before the previous one ends at {prev_end}",
                s.start_s
            )));
        }
        prev_end = s.end_s;
    }
    Ok(())
}

/// How the text stream was produced from the transcript.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextMode {
    /// Per-sentence embeddings expanded over their time spans.
    Sentence,
    /// One whole-transcript embedding repeated for every frame.
    Naive,
    /// Text omitted; the stream is all zeros.
    None,
}

impl std::str::FromStr for TextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" => Ok(TextMode::Sentence),
            "naive" => Ok(TextMode::Naive),
            "none" => Ok(TextMode::None),
            other => Err(Error::Argument(format!("unknown text mode {other:?}"))),
        }
    }
}

impl fmt::Display for TextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TextMode::Sentence => "sentence",
            TextMode::Naive => "naive",
            TextMode::None => "none",
        })
    }
}

/// Pre-alignment text payload, kept so a sample can be written back to disk.
#[derive(Clone, Debug, PartialEq)]
pub enum TextSource {
    Sentences {
        spans: Vec<SentenceSpan>,
        embeddings: FeatureMatrix,
    },
    Naive {
        global: FeatureMatrix,
    },
    None {
        dim: usize,
    },
}

impl TextSource {
    pub fn mode(&self) -> TextMode {
        match self {
            TextSource::Sentences { .. } => TextMode::Sentence,
            TextSource::Naive { .. } => TextMode::Naive,
            TextSource::None { .. } => TextMode::None,
        }
    }
}

/// One weakly-labelled video.
///
/// `frame_truth` is evaluation-only; the training path receives a
/// [`TrainingView`] that does not carry it.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub label: bool,
    pub fps: f64,
    pub features: VideoFeatures,
    pub text_source: TextSource,
    pub frame_truth: Option<Vec<u8>>,
}

impl VideoSample {
    pub fn frames(&self) -> usize {
        self.features.frames()
    }

    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            id: &self.id,
            label: self.label,
            features: &self.features,
        }
    }

    /// Checks stream alignment and label/truth consistency.
    pub fn validate(&self) -> Result<()> {
        let t = self.frames();
        for m in Modality::ALL {
            if self.features.get(m).rows() != t {
                return Err(Error::Argument(format!("{}: {m} stream misaligned", self.id)));
            }
        }
        if let Some(truth) = &self.frame_truth {
            if truth.len() != t {
                return Err(Error::Argument(format!(
                    "{}: frame truth has {} entries for {t} frames",
                    self.id,
                    truth.len()
                )));
            }
            if truth.iter().any(|&v| v > 1) {
                return Err(Error::Argument(format!("{}: frame truth is not binary", self.id)));
            }
            let any = truth.iter().any(|&v| v == 1);
            if any != self.label {
                return Err(Error::Argument(format!(
                    "{}: label {} disagrees with frame truth",
                    self.id, self.label as u8
                )));
            }
        }
        Ok(())
    }
}

/// What the training path may see of a sample: features and the video label.
#[derive(Clone, Copy, Debug)]
pub struct TrainingView<'a> {
    pub id: &'a str,
    pub label: bool,
    pub features: &'a VideoFeatures,
}
