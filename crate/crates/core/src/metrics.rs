//! Frame-level evaluation over a whole split: average precision, ROC-AUC and
//! precision-recall AUC on all frames concatenated into one ranking.

use serde::{Deserialize, Serialize};

use crate::datamodel::VideoSample;
use crate::error::{Error, Result};
use crate::model::PredictionTrace;

/// Score-sorted (descending) blocks of equal scores: `(positives, total)`.
fn tie_blocks(scores: &[f64], truth: &[bool]) -> Result<Vec<(usize, usize)>> {
    if scores.len() != truth.len() {
        return Err(Error::Argument(format!(
            "{} scores for {} truth labels",
            scores.len(),
            truth.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            op: format!("metric input (score {i})"),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in order {
        let pos = truth[i] as usize;
        match (prev, blocks.last_mut()) {
            (Some(p), Some(last)) if p == scores[i] => {
                last.0 += pos;
                last.1 += 1;
            }
            _ => blocks.push((pos, 1)),
        }
        prev = Some(scores[i]);
    }
    Ok(blocks)
}

fn count_classes(truth: &[bool]) -> (usize, usize) {
    let p = truth.iter().filter(|&&t| t).count();
    (p, truth.len() - p)
}

/// Mean over positives of the precision at their score level; a block of
/// equal scores counts as one rank, evaluated at its end.
pub fn average_precision(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let blocks = tie_blocks(scores, truth)?;
    let (p, _) = count_classes(truth);
    if p == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive frame".into(),
        ));
    }
    let (mut seen_pos, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    for (pos, total) in blocks {
        seen_pos += pos;
        seen += total;
        ap += pos as f64 * seen_pos as f64 / seen as f64;
    }
    Ok(ap / p as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let blocks = tie_blocks(scores, truth)?;
    let (p, n) = count_classes(truth);
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(
            "ROC-AUC needs both positive and negative frames".into(),
        ));
    }
    // walking down the ranking, each negative loses to the positives already seen
    let mut above_pos = 0usize;
    let mut wins = 0.0;
    for (pos, total) in blocks {
        let neg = total - pos;
        wins += neg as f64 * (above_pos as f64 + 0.5 * pos as f64);
        above_pos += pos;
    }
    Ok(wins / (p as f64 * n as f64))
}

/// Trapezoidal area under the precision-recall curve through every distinct
/// threshold, starting from (recall 0, precision 1).
pub fn pr_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let blocks = tie_blocks(scores, truth)?;
    let (p, _) = count_classes(truth);
    if p == 0 {
        return Err(Error::UndefinedMetric(
            "PR-AUC needs at least one positive frame".into(),
        ));
    }
    let (mut seen_pos, mut seen) = (0usize, 0usize);
    let (mut r0, mut p0) = (0.0, 1.0);
    let mut area = 0.0;
    for (pos, total) in blocks {
        seen_pos += pos;
        seen += total;
        let r1 = seen_pos as f64 / p as f64;
        let p1 = seen_pos as f64 / seen as f64;
        area += (r1 - r0) * (p1 + p0) / 2.0;
        (r0, p0) = (r1, p1);
    }
    Ok(area)
}

/// Frame-level metrics of one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    /// `None` when the split has a single class.
    pub roc_auc: Option<f64>,
    pub pr_auc: f64,
    pub frame_count: usize,
    pub positive_fraction: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "mAP,roc_auc,pr_auc,frame_count,positive_fraction";

    pub fn roc_auc(&self) -> Result<f64> {
        self.roc_auc.ok_or_else(|| {
            Error::UndefinedMetric("ROC-AUC is undefined on a single-class split".into())
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.map,
            self.roc_auc.map_or(String::new(), |v| v.to_string()),
            self.pr_auc,
            self.frame_count,
            self.positive_fraction
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are plain numbers")
    }
}

/// All three metrics on one concatenated ranking.
pub fn evaluate_scores(scores: &[f64], truth: &[bool]) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("evaluation over zero frames".into()));
    }
    let map = average_precision(scores, truth)?;
    let roc = match roc_auc(scores, truth) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    let (p, _) = count_classes(truth);
    Ok(EvalReport {
        map,
        roc_auc: roc,
        pr_auc: pr_auc(scores, truth)?,
        frame_count: scores.len(),
        positive_fraction: p as f64 / scores.len() as f64,
    })
}

/// Concatenates every video's fused curve and frame truth, then scores them.
pub fn evaluate_split(samples: &[VideoSample], traces: &[PredictionTrace]) -> Result<EvalReport> {
    if samples.len() != traces.len() {
        return Err(Error::Argument(format!(
            "{} samples but {} traces",
            samples.len(),
            traces.len()
        )));
    }
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for (s, tr) in samples.iter().zip(traces) {
        let t = s
            .frame_truth
            .as_ref()
            .ok_or_else(|| Error::MissingTruth { id: s.id.clone() })?;
        if t.len() != tr.frames() {
            return Err(Error::Argument(format!(
                "{}: {} truth frames but {} predictions",
                s.id,
                t.len(),
                tr.frames()
            )));
        }
        scores.extend_from_slice(&tr.fused);
        truth.extend(t.iter().map(|&v| v == 1));
    }
    evaluate_scores(&scores, &truth)
}
