use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `max(1, ⌈T / k_div⌉)`.
pub fn selection_size(frames: usize, k_div: usize) -> Result<usize> {
    if frames == 0 {
        return Err(Error::Argument("top-k selection over zero frames".into()));
    }
    if k_div == 0 {
        return Err(Error::Argument("top-k divisor must be at least 1".into()));
    }
    Ok(frames.div_ceil(k_div).max(1))
}

/// Indices of the `selection_size(T, k_div)` largest scores, ascending.
///
/// Equal scores prefer the smaller index.
pub fn topk_select(scores: &[f64], k_div: usize) -> Result<Vec<usize>> {
    let n = selection_size(scores.len(), k_div)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            op: format!("topk_select (score {i})"),
        });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let order = |&a: &usize, &b: &usize| scores[b].total_cmp(&scores[a]).then(a.cmp(&b));
    if n < idx.len() {
        idx.select_nth_unstable_by(n - 1, order);
        idx.truncate(n);
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Frame sets chosen for the MIL objective of one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Per-modality selections over `w_m · P_m`; absent without branch heads
    /// or with the modality-aware selection switched off.
    pub per_modality: Option<[Vec<usize>; 3]>,
    pub fused: Vec<usize>,
    /// Sorted union of `fused` and every per-modality set.
    pub final_set: Vec<usize>,
    /// Video-level modality importance `w_m = mean_t α_m[t]` (1.0 without gates).
    pub weights: [f64; 3],
    pub n_sel: usize,
}

/// Builds the MIL selection from frame-level values.
///
/// `branch` holds `P_v, P_a, P_l` and `gates` the matching `α` curves.
pub fn build_selection(
    fused: &[f64],
    branch: Option<[&[f64]; 3]>,
    gates: Option<[&[f64]; 3]>,
    k_div: usize,
    modality_aware: bool,
) -> Result<SelectionResult> {
    let t = fused.len();
    let n_sel = selection_size(t, k_div)?;
    let weights = match gates {
        Some(gs) => {
            let mut w = [0.0; 3];
            for (wm, g) in w.iter_mut().zip(gs) {
                check_len("gate", g.len(), t)?;
                *wm = g.iter().sum::<f64>() / t as f64;
            }
            w
        }
        None => [1.0; 3],
    };
    let fused_sel = topk_select(fused, k_div)?;
    let per_modality = match branch {
        Some(ps) if modality_aware => {
            let mut sets: [Vec<usize>; 3] = Default::default();
            for ((set, p), w) in sets.iter_mut().zip(ps).zip(weights) {
                check_len("branch", p.len(), t)?;
                let scaled: Vec<f64> = p.iter().map(|&v| w * v).collect();
                *set = topk_select(&scaled, k_div)?;
            }
            Some(sets)
        }
        _ => None,
    };
    let mut union: BTreeSet<usize> = fused_sel.iter().copied().collect();
    for set in per_modality.iter().flatten() {
        union.extend(set.iter().copied());
    }
    Ok(SelectionResult {
        per_modality,
        fused: fused_sel,
        final_set: union.into_iter().collect(),
        weights,
        n_sel,
    })
}

fn check_len(what: &str, got: usize, frames: usize) -> Result<()> {
    if got != frames {
        return Err(Error::Argument(format!(
            "{what} curve has {got} entries for {frames} frames"
        )));
    }
    Ok(())
}
