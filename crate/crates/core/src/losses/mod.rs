//! Training objectives: top-K multiple-instance loss over the fused and
//! per-modality selections, temporal smoothness and cross-modal contrastive
//! alignment, combined into one scalar per batch.

mod selection;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForwardVars;
use crate::numerics::{Graph, Tensor2, Var};

pub use selection::{build_selection, selection_size, topk_select, SelectionResult};

/// Probability clamp applied inside the MIL logarithms.
pub const MIL_CLAMP: f64 = 1e-7;

/// Modality pairs aligned by the contrastive term, as (anchor, candidate).
pub const CONTRAST_PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_smooth: f64,
    pub lambda_con: f64,
    /// Contrastive softmax temperature.
    pub tau: f64,
    pub k_div: usize,
    /// Per-video cap on frames entering the contrastive term; `None` uses all.
    pub max_ctr_frames: Option<usize>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_smooth: 0.1,
            lambda_con: 0.2,
            tau: 0.1,
            k_div: 3,
            max_ctr_frames: None,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_smooth >= 0.0 && self.lambda_con >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative (smooth {}, con {})",
                self.lambda_smooth, self.lambda_con
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if self.k_div == 0 {
            return Err(Error::Config("k_div must be at least 1".into()));
        }
        if self.max_ctr_frames == Some(0) {
            return Err(Error::Config("max_ctr_frames must be positive".into()));
        }
        Ok(())
    }

    /// `mil + λ_smooth·smooth + λ_con·con`.
    pub fn combine(&self, mil: f64, smooth: f64, con: f64) -> f64 {
        mil + self.lambda_smooth * smooth + self.lambda_con * con
    }
}

/// Loss components of one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: u64,
    pub mil: f64,
    pub smooth: f64,
    pub con: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,mil,smooth,con,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.mil, self.smooth, self.con, self.total
        )
    }
}

/// Graph nodes of a batch objective.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub mil: Var,
    pub smooth: Var,
    pub con: Option<Var>,
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph, step: u64) -> LossBreakdown {
        LossBreakdown {
            step,
            mil: g.scalar(self.mil),
            smooth: g.scalar(self.smooth),
            con: self.con.map_or(0.0, |c| g.scalar(c)),
            total: g.scalar(self.total),
        }
    }
}

/// `-mean log ŷ_i` (label 1) or `-mean log(1 − ŷ_i)` (label 0) over `frames`.
pub fn mil_loss(g: &mut Graph, fused: Var, frames: &[usize], label: bool) -> Result<Var> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("MIL selection".into()));
    }
    let entries: Vec<(usize, usize)> = frames.iter().map(|&i| (i, 0)).collect();
    let picked = g.pick(fused, &entries)?;
    let target = if label {
        picked
    } else {
        g.affine(picked, -1.0, 1.0)?
    };
    let logs = g.log_clamped(target, MIL_CLAMP, 1.0 - MIL_CLAMP)?;
    let m = g.mean(logs)?;
    g.scale(m, -1.0)
}

/// Mean squared difference of adjacent frames; 0 for a single frame.
pub fn smoothness_loss(g: &mut Graph, fused: Var) -> Result<Var> {
    let (t, _) = g.shape(fused);
    if t < 2 {
        return Ok(g.leaf(Tensor2::scalar(0.0)));
    }
    let next = g.slice_rows(fused, 1, t)?;
    let prev = g.slice_rows(fused, 0, t - 1)?;
    let d = g.sub(next, prev)?;
    let sq = g.mul(d, d)?;
    g.mean(sq)
}

/// Frames of each video entering the contrastive term: all, or a seeded
/// sorted subsample of `cap` frames.
pub fn contrastive_frames(lengths: &[usize], cap: Option<usize>, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lengths
        .iter()
        .map(|&t| match cap {
            Some(c) if c < t => {
                let mut idx = sample(&mut rng, t, c).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..t).collect(),
        })
        .collect()
}

/// InfoNCE over same-frame pairs of different modalities across the batch.
///
/// `encoded[i]` holds the `T_i × D` encoder outputs (video, audio, text) of
/// video `i`. Every (video, frame) row of the anchor modality is scored
/// against every row of the candidate modality; the matching row is the
/// positive. Averaged over anchors, then over the three modality pairs.
pub fn contrastive_loss(
    g: &mut Graph,
    encoded: &[[Var; 3]],
    tau: f64,
    cap: Option<usize>,
    seed: u64,
) -> Result<Var> {
    if encoded.is_empty() {
        return Err(Error::Argument("contrastive loss over an empty batch".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("temperature must be positive, got {tau}")));
    }
    let lengths: Vec<usize> = encoded.iter().map(|e| g.shape(e[0]).0).collect();
    let frames = contrastive_frames(&lengths, cap, seed);
    let mut stacked = Vec::with_capacity(3);
    for m in 0..3 {
        let mut parts = Vec::with_capacity(encoded.len());
        for (e, keep) in encoded.iter().zip(&frames) {
            let rows = if keep.len() == g.shape(e[m]).0 {
                e[m]
            } else {
                g.gather_rows(e[m], keep)?
            };
            parts.push(g.l2_normalize_rows(rows)?);
        }
        stacked.push(g.concat_rows(&parts)?);
    }
    let n = g.shape(stacked[0]).0;
    let diag: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    let mut terms = Vec::with_capacity(3);
    for (a, c) in CONTRAST_PAIRS {
        let anchors = g.scale(stacked[a], 1.0 / tau)?;
        let sim = g.matmul_nt(anchors, stacked[c])?;
        let logp = g.log_softmax_rows(sim)?;
        let pos = g.pick(logp, &diag)?;
        let m = g.mean(pos)?;
        terms.push(g.scale(m, -1.0)?);
    }
    let both = g.add(terms[0], terms[1])?;
    let all = g.add(both, terms[2])?;
    g.scale(all, 1.0 / 3.0)
}

/// Switches that change which loss terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossToggles {
    pub use_contrast: bool,
    pub use_mamil: bool,
}

/// Batch objective: mean MIL and smoothness over videos plus one contrastive
/// term for the batch. Returns the loss nodes and each video's selection.
pub fn total_loss(
    g: &mut Graph,
    batch: &[ForwardVars],
    labels: &[bool],
    weights: &LossWeights,
    toggles: LossToggles,
    ctr_seed: u64,
) -> Result<(LossVars, Vec<SelectionResult>)> {
    if batch.is_empty() {
        return Err(Error::Argument("loss over an empty batch".into()));
    }
    if batch.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} forward passes but {} labels",
            batch.len(),
            labels.len()
        )));
    }
    let mut mils = Vec::with_capacity(batch.len());
    let mut smooths = Vec::with_capacity(batch.len());
    let mut selections = Vec::with_capacity(batch.len());
    for (fv, &y) in batch.iter().zip(labels) {
        let sel = selection_from_graph(g, fv, weights.k_div, toggles.use_mamil)?;
        mils.push(mil_loss(g, fv.fused, &sel.final_set, y)?);
        smooths.push(smoothness_loss(g, fv.fused)?);
        selections.push(sel);
    }
    let mil = mean_of(g, &mils)?;
    let smooth = mean_of(g, &smooths)?;
    let weighted_smooth = g.scale(smooth, weights.lambda_smooth)?;
    let mut total = g.add(mil, weighted_smooth)?;
    let con = if toggles.use_contrast {
        let enc: Vec<[Var; 3]> = batch.iter().map(|fv| fv.encoded).collect();
        let c = contrastive_loss(g, &enc, weights.tau, weights.max_ctr_frames, ctr_seed)?;
        let wc = g.scale(c, weights.lambda_con)?;
        total = g.add(total, wc)?;
        Some(c)
    } else {
        None
    };
    Ok((
        LossVars {
            total,
            mil,
            smooth,
            con,
        },
        selections,
    ))
}

/// Selection built from the current values of a forward pass.
pub fn selection_from_graph(
    g: &Graph,
    fv: &ForwardVars,
    k_div: usize,
    modality_aware: bool,
) -> Result<SelectionResult> {
    let fused = g.value(fv.fused).data();
    let branch = fv
        .branch
        .map(|b| [b[0], b[1], b[2]].map(|v| g.value(v).data()));
    let gates = fv.gates.map(|gs| gs.map(|v| g.value(v).data()));
    build_selection(fused, branch, gates, k_div, modality_aware)
}

fn mean_of(g: &mut Graph, parts: &[Var]) -> Result<Var> {
    let stacked = g.concat_rows(parts)?;
    g.mean(stacked)
}

/// Value-level MIL loss over `frames` of a probability curve.
pub fn mil_value(fused: &[f64], frames: &[usize], label: bool) -> Result<f64> {
    let mut g = Graph::new();
    let y = g.leaf(Tensor2::column(fused));
    let l = mil_loss(&mut g, y, frames, label)?;
    Ok(g.scalar(l))
}

pub fn smoothness_value(fused: &[f64]) -> Result<f64> {
    if fused.is_empty() {
        return Err(Error::EmptyInput("smoothness of an empty curve".into()));
    }
    let mut g = Graph::new();
    let y = g.leaf(Tensor2::column(fused));
    let l = smoothness_loss(&mut g, y)?;
    Ok(g.scalar(l))
}

/// Value-level contrastive loss over per-video `[video, audio, text]` features.
pub fn contrastive_value(
    encoded: &[[Tensor2; 3]],
    tau: f64,
    cap: Option<usize>,
    seed: u64,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<[Var; 3]> = encoded
        .iter()
        .map(|e| [g.leaf(e[0].clone()), g.leaf(e[1].clone()), g.leaf(e[2].clone())])
        .collect();
    let l = contrastive_loss(&mut g, &vars, tau, cap, seed)?;
    Ok(g.scalar(l))
}
