//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmloc::datamodel::{FeatureMatrix, Modality, VideoFeatures};
use tmloc::losses::{total_loss, LossToggles, LossWeights};
use tmloc::model::{bind_features, forward_graph, ModelConfig, ModelParams, ParamVars};
use tmloc::numerics::{grad_check_many, Graph, Tensor2, Var, DEFAULT_STEP};
use tmloc::Result;

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor2 {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor2::new(rows, cols, data).unwrap()
}

/// `sum(x ⊙ w)` with a fixed random `w`, so every output entry matters.
fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.shape(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(random_tensor(&mut rng, r, c, -1.0, 1.0));
    let xw = g.mul(x, w)?;
    g.sum(xw)
}

type Case = (&'static str, Vec<Tensor2>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>);

/// Max relative gradient error of every tape primitive on random inputs in [-2, 2].
pub fn primitive_gradient_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut t = |r: usize, c: usize| random_tensor(&mut rng, r, c, -2.0, 2.0);
    let cases: Vec<Case> = vec![
        ("matmul", vec![t(3, 4), t(4, 2)], Box::new(|g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y, 1)
        })),
        ("matmul_nt", vec![t(3, 4), t(5, 4)], Box::new(|g, v| {
            let y = g.matmul_nt(v[0], v[1])?;
            project(g, y, 2)
        })),
        ("transpose", vec![t(3, 2)], Box::new(|g, v| {
            let y = g.transpose(v[0])?;
            project(g, y, 3)
        })),
        ("add", vec![t(2, 3), t(2, 3)], Box::new(|g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y, 4)
        })),
        ("sub", vec![t(2, 3), t(2, 3)], Box::new(|g, v| {
            let y = g.sub(v[0], v[1])?;
            project(g, y, 5)
        })),
        ("mul", vec![t(2, 3), t(2, 3)], Box::new(|g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y, 6)
        })),
        ("add_row", vec![t(4, 3), t(1, 3)], Box::new(|g, v| {
            let y = g.add_row(v[0], v[1])?;
            project(g, y, 7)
        })),
        ("scale_rows", vec![t(4, 3), t(4, 1)], Box::new(|g, v| {
            let y = g.scale_rows(v[0], v[1])?;
            project(g, y, 8)
        })),
        ("scale", vec![t(2, 2)], Box::new(|g, v| {
            let y = g.scale(v[0], -1.7)?;
            project(g, y, 9)
        })),
        ("affine", vec![t(2, 2)], Box::new(|g, v| {
            let y = g.affine(v[0], 0.3, 2.0)?;
            project(g, y, 10)
        })),
        ("relu", vec![t(3, 3)], Box::new(|g, v| {
            let y = g.relu(v[0])?;
            project(g, y, 11)
        })),
        ("sigmoid", vec![t(3, 3)], Box::new(|g, v| {
            let y = g.sigmoid(v[0])?;
            project(g, y, 12)
        })),
        ("softmax_rows", vec![t(3, 4)], Box::new(|g, v| {
            let y = g.softmax_rows(v[0])?;
            project(g, y, 13)
        })),
        ("log_softmax_rows", vec![t(3, 4)], Box::new(|g, v| {
            let y = g.log_softmax_rows(v[0])?;
            project(g, y, 14)
        })),
        ("log_clamped", vec![t(3, 3)], Box::new(|g, v| {
            // map into (0.05, 0.95), inside the clamp range
            let s = g.sigmoid(v[0])?;
            let s = g.affine(s, 0.9, 0.05)?;
            let y = g.log_clamped(s, 1e-7, 1.0 - 1e-7)?;
            project(g, y, 15)
        })),
        ("concat_cols", vec![t(3, 2), t(3, 1)], Box::new(|g, v| {
            let y = g.concat_cols(&[v[0], v[1], v[0]])?;
            project(g, y, 16)
        })),
        ("concat_rows", vec![t(2, 3), t(1, 3)], Box::new(|g, v| {
            let y = g.concat_rows(&[v[1], v[0]])?;
            project(g, y, 17)
        })),
        ("slice_cols", vec![t(3, 5)], Box::new(|g, v| {
            let y = g.slice_cols(v[0], 1, 4)?;
            project(g, y, 18)
        })),
        ("slice_rows", vec![t(5, 2)], Box::new(|g, v| {
            let y = g.slice_rows(v[0], 2, 5)?;
            project(g, y, 19)
        })),
        ("gather_rows", vec![t(4, 3)], Box::new(|g, v| {
            let y = g.gather_rows(v[0], &[3, 0, 3, 1])?;
            project(g, y, 20)
        })),
        ("pick", vec![t(3, 3)], Box::new(|g, v| {
            let y = g.pick(v[0], &[(0, 2), (1, 1), (0, 2)])?;
            project(g, y, 21)
        })),
        ("l2_normalize_rows", vec![t(3, 4)], Box::new(|g, v| {
            let y = g.l2_normalize_rows(v[0])?;
            project(g, y, 22)
        })),
        ("sum", vec![t(3, 3)], Box::new(|g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.sum(sq)
        })),
        ("mean", vec![t(3, 3)], Box::new(|g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.mean(sq)
        })),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, f)| {
            let err = grad_check_many(|g, v| f(g, v), &inputs, DEFAULT_STEP)
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, err)
        })
        .collect()
}

pub fn toy_features(rng: &mut ChaCha8Rng, frames: usize, dims: [usize; 3]) -> VideoFeatures {
    let mk = |rng: &mut ChaCha8Rng, m: Modality| {
        let d = dims[m.index()];
        let data = (0..frames * d).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        FeatureMatrix::new(m, frames, d, data).unwrap()
    };
    let v = mk(rng, Modality::Video);
    let a = mk(rng, Modality::Audio);
    let l = mk(rng, Modality::Text);
    VideoFeatures::new(v, a, l).unwrap()
}

pub fn toy_model() -> ModelConfig {
    ModelConfig {
        hidden: 4,
        heads: 2,
        ffn_width: 6,
        ..ModelConfig::with_dims([5, 3, 4])
    }
}

/// Relative gradient error of the whole batch objective with respect to
/// every parameter of the full model, on a two-video toy batch.
pub fn full_loss_gradient_error() -> f64 {
    let cfg = toy_model();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let feats = [toy_features(&mut rng, 4, cfg.input_dims), toy_features(&mut rng, 5, cfg.input_dims)];
    let labels = [true, false];
    // random non-zero biases too, so every parameter is exercised away from zero
    let init = ModelParams::init(&cfg).unwrap();
    let names: Vec<String> = init.names().map(str::to_string).collect();
    let tensors: Vec<Tensor2> = init
        .iter()
        .map(|(_, t)| random_tensor(&mut rng, t.rows(), t.cols(), -0.8, 0.8))
        .collect();
    let weights = LossWeights::default();
    let toggles = LossToggles {
        use_contrast: true,
        use_mamil: true,
    };
    grad_check_many(
        |g, vars| {
            let map: BTreeMap<String, Var> = names.iter().cloned().zip(vars.iter().copied()).collect();
            let pv = ParamVars::from_vars(map);
            let mut outs = Vec::new();
            for f in &feats {
                let inputs = bind_features(g, f, &cfg)?;
                outs.push(forward_graph(g, &pv, inputs, &cfg)?);
            }
            let (loss, _) = total_loss(g, &outs, &labels, &weights, toggles, 0)?;
            Ok(loss.total)
        },
        &tensors,
        DEFAULT_STEP,
    )
    .unwrap()
}
