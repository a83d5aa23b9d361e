use std::collections::BTreeMap;

use crate::datamodel::TrainingView;
use crate::error::Result;
use crate::losses::{total_loss, LossBreakdown, LossToggles, LossWeights, SelectionResult};
use crate::model::{bind_features, forward_graph, ModelConfig, ModelParams};
use crate::numerics::{Graph, Tensor2};

/// Loss and parameter gradients of one mini-batch.
#[derive(Debug)]
pub struct BatchOutcome {
    pub loss: LossBreakdown,
    pub grads: BTreeMap<String, Tensor2>,
    pub selections: Vec<SelectionResult>,
}

/// Forward, batch objective and backward on one tape.
pub fn batch_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    weights: &LossWeights,
    batch: &[TrainingView<'_>],
    step: u64,
    ctr_seed: u64,
) -> Result<BatchOutcome> {
    let mut g = Graph::new();
    let pv = params.bind(&mut g);
    let mut outs = Vec::with_capacity(batch.len());
    for view in batch {
        let inputs = bind_features(&mut g, view.features, cfg)?;
        outs.push(forward_graph(&mut g, &pv, inputs, cfg)?);
    }
    let labels: Vec<bool> = batch.iter().map(|v| v.label).collect();
    let toggles = LossToggles {
        use_contrast: cfg.use_contrast,
        use_mamil: cfg.use_mamil,
    };
    let (vars, selections) = total_loss(&mut g, &outs, &labels, weights, toggles, ctr_seed)?;
    let loss = vars.breakdown(&g, step);
    let mut adjoints = g.backward(vars.total)?;
    Ok(BatchOutcome {
        loss,
        grads: pv.gradients(&mut adjoints),
        selections,
    })
}
