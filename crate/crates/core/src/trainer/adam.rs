use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::Tensor2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Round updated parameters to single precision so checkpoints hold them
    /// exactly.
    pub round_to_f32: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            round_to_f32: true,
        }
    }
}

/// Step counter and per-parameter moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    first: BTreeMap<String, Tensor2>,
    second: BTreeMap<String, Tensor2>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: BTreeMap<String, Tensor2> = params
            .iter()
            .map(|(k, t)| (k.to_string(), Tensor2::zeros(t.rows(), t.cols())))
            .collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor2> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor2> {
        self.second.get(name)
    }
}

/// One bias-corrected Adam update.
///
/// Entries whose gradient is exactly zero keep their value and moments.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor2>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::MissingParam(format!("gradient of {name}")))?;
        if g.shape() != p.shape() {
            return Err(Error::ParamShape {
                name: name.to_string(),
                expected: p.shape(),
                found: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite {
                op: format!("gradient of {name}"),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state.first.get_mut(name).expect("moments follow params");
        let v = state.second.get_mut(name).expect("moments follow params");
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            if gi == 0.0 {
                continue;
            }
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = md[i] / c1;
            let v_hat = vd[i] / c2;
            let updated = pd[i] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            pd[i] = if cfg.round_to_f32 {
                f64::from(updated as f32)
            } else {
                updated
            };
        }
    }
    Ok(())
}
