//! On-disk dataset format.
//!
//! Matrix container (little-endian):
//!
//! ```text
//! offset 0   magic   b"MHLF"
//! offset 4   u32     version = 1
//! offset 8   u32     rows
//! offset 12  u32     cols
//! offset 16  f32 × rows·cols, row-major
//! ```
//!
//! A dataset directory holds a `manifest.json` (array of [`ManifestEntry`])
//! plus per-sample matrix, sentence and truth files; manifest paths are
//! relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::align::{expand_sentences, interpolate_audio, naive_text_expand};
use super::sample::{
    FeatureMatrix, Modality, SentenceSpan, TextMode, TextSource, VideoFeatures, VideoSample,
};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MHLF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Serialises a `rows x cols` f32 payload into the container format.
pub fn encode_matrix(rows: usize, cols: usize, data: &[f32]) -> Result<Vec<u8>> {
    if data.len() != rows * cols {
        return Err(Error::Argument(format!(
            "matrix payload of {} values for shape {rows}x{cols}",
            data.len()
        )));
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Argument(format!("{what} {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&to_u32(cols, "cols")?.to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses a container; `path` is only used to label errors.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let fail = |offset: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    let u32_at = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| fail(offset, "truncated header".into()))
    };
    match bytes.get(0..4) {
        Some(m) if m == MAGIC => {}
        Some(m) => return Err(fail(0, format!("bad magic {m:?}"))),
        None => return Err(fail(0, "truncated header".into())),
    }
    let version = u32_at(4)?;
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let rows = u32_at(8)? as usize;
    let cols = u32_at(12)? as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail(8, format!("shape {rows}x{cols} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(fail(
            HEADER_LEN + payload.len(),
            format!("truncated payload: {} of {expected} bytes for {rows}x{cols}", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(fail(HEADER_LEN + expected, "trailing bytes after payload".into()));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((rows, cols, data))
}

pub fn write_matrix(path: &Path, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    let bytes = encode_matrix(rows, cols, data)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

pub fn write_features(path: &Path, m: &FeatureMatrix) -> Result<()> {
    write_matrix(path, m.rows(), m.cols(), m.data())
}

pub fn read_features(path: &Path, modality: Modality) -> Result<FeatureMatrix> {
    let (rows, cols, data) = read_matrix(path)?;
    FeatureMatrix::new(modality, rows, cols, data)
}

/// One row of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub label: u8,
    #[serde(rename = "T")]
    pub frames: usize,
    pub fps: f64,
    pub video_path: String,
    pub audio_path: String,
    pub text_mode: TextMode,
    pub text_paths: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_path: Option<String>,
}

/// Contents of a `sentences.json` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceFile {
    /// Path of the `S x D` embedding matrix, relative to this file.
    pub embeddings: String,
    pub sentences: Vec<SentenceSpan>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn format_truth(truth: &[u8]) -> String {
    let mut s = truth
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",");
    s.push('\n');
    s
}

pub fn parse_truth(text: &str, path: &Path) -> Result<Vec<u8>> {
    let line = text.trim_end_matches(['\n', '\r']);
    if line.contains('\n') {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: line.find('\n').unwrap_or(0) as u64,
            reason: "truth file must be a single line".into(),
        });
    }
    let mut offset = 0;
    let mut out = Vec::new();
    for tok in line.split(',') {
        match tok.trim() {
            "0" => out.push(0),
            "1" => out.push(1),
            other => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: offset as u64,
                    reason: format!("expected 0 or 1, found {other:?}"),
                })
            }
        }
        offset += tok.len() + 1;
    }
    Ok(out)
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.join(rel)
}

fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist"),
        ))
    }
}

/// Writes the sample's files into `dir` and returns its manifest entry.
pub fn write_sample(sample: &VideoSample, dir: &Path) -> Result<ManifestEntry> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let id = &sample.id;
    let video_path = format!("{id}.video.mhlf");
    let audio_path = format!("{id}.audio.mhlf");
    write_features(&dir.join(&video_path), sample.features.get(Modality::Video))?;
    write_features(&dir.join(&audio_path), sample.features.get(Modality::Audio))?;

    let text_paths = match &sample.text_source {
        TextSource::Sentences { spans, embeddings } => {
            let emb = format!("{id}.sentemb.mhlf");
            let json = format!("{id}.sentences.json");
            write_features(&dir.join(&emb), embeddings)?;
            write_json(
                &dir.join(&json),
                &SentenceFile {
                    embeddings: emb,
                    sentences: spans.clone(),
                },
            )?;
            vec![json]
        }
        TextSource::Naive { global } => {
            let p = format!("{id}.text.mhlf");
            write_features(&dir.join(&p), global)?;
            vec![p]
        }
        TextSource::None { dim } => {
            // width only; keeps the stream shape recoverable
            let p = format!("{id}.text.mhlf");
            write_matrix(&dir.join(&p), 0, *dim, &[])?;
            vec![p]
        }
    };

    let truth_path = match &sample.frame_truth {
        Some(truth) => {
            let p = format!("{id}.truth.csv");
            let path = dir.join(&p);
            fs::write(&path, format_truth(truth)).map_err(|e| Error::io(&path, e))?;
            Some(p)
        }
        None => None,
    };

    Ok(ManifestEntry {
        id: id.clone(),
        label: sample.label as u8,
        frames: sample.frames(),
        fps: sample.fps,
        video_path,
        audio_path,
        text_mode: sample.text_source.mode(),
        text_paths,
        truth_path,
    })
}

/// Loads and aligns one sample; paths resolve against `base`.
pub fn read_sample(entry: &ManifestEntry, base: &Path) -> Result<VideoSample> {
    let frames = entry.frames;
    let video_file = resolve(base, &entry.video_path);
    require_exists(&video_file)?;
    let video = read_features(&video_file, Modality::Video)?;
    if video.rows() != frames {
        return Err(Error::Format {
            path: video_file,
            offset: 8,
            reason: format!("{} rows, manifest says T = {frames}", video.rows()),
        });
    }
    let audio_file = resolve(base, &entry.audio_path);
    require_exists(&audio_file)?;
    let raw_audio = read_features(&audio_file, Modality::Audio)?;
    let audio = interpolate_audio(&raw_audio, frames)?;

    let text_file = |i: usize| -> Result<PathBuf> {
        let rel = entry.text_paths.get(i).ok_or_else(|| {
            Error::Argument(format!("{}: text mode {} needs a text path", entry.id, entry.text_mode))
        })?;
        let p = resolve(base, rel);
        require_exists(&p)?;
        Ok(p)
    };
    let (text, text_source) = match entry.text_mode {
        TextMode::Sentence => {
            let json_path = text_file(0)?;
            let sf: SentenceFile = read_json(&json_path)?;
            let emb_path = resolve(json_path.parent().unwrap_or(base), &sf.embeddings);
            require_exists(&emb_path)?;
            let embeddings = read_features(&emb_path, Modality::Text)?;
            let text = expand_sentences(&sf.sentences, &embeddings, frames, entry.fps)?;
            (
                text,
                TextSource::Sentences {
                    spans: sf.sentences,
                    embeddings,
                },
            )
        }
        TextMode::Naive => {
            let global = read_features(&text_file(0)?, Modality::Text)?;
            let text = naive_text_expand(&global, frames)?;
            (text, TextSource::Naive { global })
        }
        TextMode::None => {
            let dim = match entry.text_paths.first() {
                Some(_) => read_features(&text_file(0)?, Modality::Text)?.cols(),
                None => video.cols(),
            };
            (FeatureMatrix::zeros(Modality::Text, frames, dim), TextSource::None { dim })
        }
    };

    let frame_truth = match &entry.truth_path {
        Some(rel) => {
            let p = resolve(base, rel);
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let truth = parse_truth(&text, &p)?;
            if truth.len() != frames {
                return Err(Error::Format {
                    path: p,
                    offset: 0,
                    reason: format!("{} truth values for T = {frames}", truth.len()),
                });
            }
            Some(truth)
        }
        None => None,
    };

    let label = match entry.label {
        0 => false,
        1 => true,
        other => return Err(Error::Argument(format!("{}: label {other} not in {{0,1}}", entry.id))),
    };
    let sample = VideoSample {
        id: entry.id.clone(),
        label,
        fps: entry.fps,
        features: VideoFeatures::new(video, audio, text)?,
        text_source,
        frame_truth,
    };
    sample.validate()?;
    Ok(sample)
}

pub const MANIFEST: &str = "manifest.json";

/// Writes every sample plus `manifest.json` into `dir`.
pub fn write_dataset(samples: &[VideoSample], dir: &Path) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries = samples
        .iter()
        .map(|s| write_sample(s, dir))
        .collect::<Result<Vec<_>>>()?;
    write_json(&dir.join(MANIFEST), &entries)?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    read_json(&dir.join(MANIFEST))
}

/// Reads `dir/manifest.json` and every sample it lists.
pub fn read_dataset(dir: &Path) -> Result<Vec<VideoSample>> {
    read_manifest(dir)?
        .iter()
        .map(|e| read_sample(e, dir))
        .collect()
}
