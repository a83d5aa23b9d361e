use super::config::{FusionVariant, ModelConfig, PositionalEncoding};
use super::params::{ModelParams, ParamVars};
use crate::datamodel::{Modality, VideoFeatures};
use crate::error::{Error, Result};
use crate::losses::{build_selection, SelectionResult};
use crate::numerics::{Graph, Tensor2, Var};

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// Encoder outputs `F'_m`, `T × D` each.
    pub encoded: [Var; 3],
    /// Gate curves `α_m`, `T × 1`; absent when gating is off.
    pub gates: Option<[Var; 3]>,
    /// Per-modality probabilities `P_m`, `T × 1`.
    pub branch: Option<[Var; 3]>,
    /// Fused representation before the classifier (DCM only), `T × D`.
    pub fused_repr: Option<Var>,
    /// Final frame probabilities `ŷ`, `T × 1`.
    pub fused: Var,
}

/// `PE[t, 2i] = sin(t / 10000^(2i/D))`, `PE[t, 2i+1] = cos(t / 10000^(2i/D))`.
pub fn sinusoidal_encoding(frames: usize, width: usize) -> Tensor2 {
    let mut pe = Tensor2::zeros(frames, width);
    for t in 0..frames {
        for c in 0..width {
            let pair = (c / 2 * 2) as f64;
            let angle = t as f64 / 10000f64.powf(pair / width as f64);
            pe.set(t, c, if c % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

fn in_stage<T>(stage: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("{stage}: {op}"),
        },
        other => other,
    })
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// Multi-head scaled dot-product self-attention with column-sliced heads and
/// concatenated head outputs.
pub fn multi_head_attention(
    g: &mut Graph,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    heads: usize,
) -> Result<Var> {
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let width = g.shape(q).1;
    if heads == 0 || width % heads != 0 {
        return Err(Error::Config(format!(
            "attention width {width} is not divisible by {heads} heads"
        )));
    }
    let dk = width / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dk, (h + 1) * dk);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let qs = g.scale(qh, scale)?;
        let scores = g.matmul_nt(qs, kh)?;
        let attn = g.softmax_rows(scores)?;
        outs.push(g.matmul(attn, vh)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        g.concat_cols(&outs)
    }
}

/// Projects one modality to the hidden width and, with the encoder on, runs
/// one self-attention + feed-forward block with a residual from the
/// projected input.
pub fn encode_modality(
    g: &mut Graph,
    input: Var,
    pv: &ParamVars,
    m: Modality,
    cfg: &ModelConfig,
) -> Result<Var> {
    let tag = m.tag();
    let p = |name: &str| pv.get(&format!("{tag}.{name}"));
    let stage = format!("{m} projection");
    let mut h = in_stage(&stage, linear(g, input, p("proj.w")?, p("proj.b")?))?;
    if !cfg.use_encoder {
        return Ok(h);
    }
    if cfg.positional == PositionalEncoding::Sinusoidal {
        let (t, d) = g.shape(h);
        let pe = g.constant(sinusoidal_encoding(t, d));
        h = g.add(h, pe)?;
    }
    let stage = format!("{m} encoder attention");
    let att = in_stage(
        &stage,
        multi_head_attention(g, h, p("enc.wq")?, p("enc.wk")?, p("enc.wv")?, cfg.heads),
    )?;
    let stage = format!("{m} encoder feed-forward");
    in_stage(&stage, {
        let f1 = linear(g, att, p("enc.ffn1.w")?, p("enc.ffn1.b")?)?;
        let f1 = g.relu(f1)?;
        let f2 = linear(g, f1, p("enc.ffn2.w")?, p("enc.ffn2.b")?)?;
        g.add(f2, h)
    })
}

fn sigmoid_head(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let z = linear(g, x, w, b)?;
    g.sigmoid(z)
}

fn mean3(g: &mut Graph, parts: [Var; 3]) -> Result<Var> {
    let ab = g.add(parts[0], parts[1])?;
    let abc = g.add(ab, parts[2])?;
    g.scale(abc, 1.0 / 3.0)
}

/// Places the three feature streams on the tape as constants.
pub fn bind_features(g: &mut Graph, features: &VideoFeatures, cfg: &ModelConfig) -> Result<[Var; 3]> {
    if features.dims() != cfg.input_dims {
        return Err(Error::Argument(format!(
            "feature widths {:?} do not match the model's {:?}",
            features.dims(),
            cfg.input_dims
        )));
    }
    let mut vars = Vec::with_capacity(3);
    for m in Modality::ALL {
        let t = features.get(m).to_tensor();
        if !t.is_finite() {
            return Err(Error::NonFinite {
                op: format!("{m} input features"),
            });
        }
        vars.push(g.constant(t));
    }
    Ok([vars[0], vars[1], vars[2]])
}

/// Full network on the tape: encoders, then the configured fusion.
pub fn forward_graph(
    g: &mut Graph,
    pv: &ParamVars,
    inputs: [Var; 3],
    cfg: &ModelConfig,
) -> Result<ForwardVars> {
    let mut enc = [inputs[0]; 3];
    for m in Modality::ALL {
        enc[m.index()] = encode_modality(g, inputs[m.index()], pv, m, cfg)?;
    }
    let branch = if cfg.branches_active() {
        let mut ps = [enc[0]; 3];
        for m in Modality::ALL {
            let tag = m.tag();
            ps[m.index()] = in_stage(
                &format!("{m} head"),
                sigmoid_head(
                    g,
                    enc[m.index()],
                    pv.get(&format!("{tag}.head.w"))?,
                    pv.get(&format!("{tag}.head.b"))?,
                ),
            )?;
        }
        Some(ps)
    } else {
        None
    };
    let (gates, fused_repr, fused) = match cfg.fusion {
        FusionVariant::Early => {
            let cat = g.concat_cols(&enc)?;
            let y = in_stage(
                "early fusion head",
                sigmoid_head(g, cat, pv.get("early.w")?, pv.get("early.b")?),
            )?;
            (None, None, y)
        }
        FusionVariant::Late => {
            let ps = branch.expect("late fusion always has branch heads");
            (None, None, mean3(g, ps)?)
        }
        FusionVariant::Dcm => {
            let (gates, weighted) = if cfg.gates_active() {
                let mut alphas = [enc[0]; 3];
                let mut weighted = [enc[0]; 3];
                for m in Modality::ALL {
                    let (i, tag) = (m.index(), m.tag());
                    let a = in_stage(
                        &format!("{m} gate"),
                        sigmoid_head(
                            g,
                            enc[i],
                            pv.get(&format!("{tag}.gate.w"))?,
                            pv.get(&format!("{tag}.gate.b"))?,
                        ),
                    )?;
                    alphas[i] = a;
                    weighted[i] = g.scale_rows(enc[i], a)?;
                }
                (Some(alphas), weighted)
            } else {
                (None, enc)
            };
            let repr = if cfg.cma_active() {
                let cat = g.concat_cols(&weighted)?;
                in_stage(
                    "cross-modal attention",
                    multi_head_attention(
                        g,
                        cat,
                        pv.get("cma.wq")?,
                        pv.get("cma.wk")?,
                        pv.get("cma.wv")?,
                        cfg.heads,
                    ),
                )?
            } else {
                mean3(g, weighted)?
            };
            let y = in_stage(
                "fused head",
                sigmoid_head(g, repr, pv.get("cls.w")?, pv.get("cls.b")?),
            )?;
            (gates, Some(repr), y)
        }
    };
    Ok(ForwardVars {
        encoded: enc,
        gates,
        branch,
        fused_repr,
        fused,
    })
}

/// Everything one forward pass produces for a video, as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTrace {
    pub fusion: FusionVariant,
    /// `ŷ_t`.
    pub fused: Vec<f64>,
    /// `P_v, P_a, P_l` when the configuration has branch heads.
    pub branch: Option<[Vec<f64>; 3]>,
    /// `α_v, α_a, α_l` when gating is active.
    pub gates: Option<[Vec<f64>; 3]>,
    pub selection: SelectionResult,
    pub encoded: [Tensor2; 3],
    pub fused_repr: Option<Tensor2>,
}

impl PredictionTrace {
    pub fn frames(&self) -> usize {
        self.fused.len()
    }

    /// Gate curve of `m`; constant 1.0 when gating is off.
    pub fn gate(&self, m: Modality) -> Vec<f64> {
        match &self.gates {
            Some(gs) => gs[m.index()].clone(),
            None => vec![1.0; self.frames()],
        }
    }

    pub fn branch_prob(&self, m: Modality) -> Option<&[f64]> {
        self.branch.as_ref().map(|b| b[m.index()].as_slice())
    }
}

fn column(g: &Graph, v: Var) -> Vec<f64> {
    g.value(v).data().to_vec()
}

/// Reads a finished forward pass off the tape and builds its MIL selection.
pub fn trace_from_graph(
    g: &Graph,
    fv: &ForwardVars,
    cfg: &ModelConfig,
    k_div: usize,
) -> Result<PredictionTrace> {
    let fused = column(g, fv.fused);
    let branch = fv.branch.map(|b| b.map(|v| column(g, v)));
    let gates = fv.gates.map(|gs| gs.map(|v| column(g, v)));
    let selection = build_selection(
        &fused,
        branch.as_ref().map(|b| [&b[0][..], &b[1][..], &b[2][..]]),
        gates.as_ref().map(|a| [&a[0][..], &a[1][..], &a[2][..]]),
        k_div,
        cfg.use_mamil,
    )?;
    Ok(PredictionTrace {
        fusion: cfg.fusion,
        fused,
        branch,
        gates,
        selection,
        encoded: fv.encoded.map(|v| g.value(v).clone()),
        fused_repr: fv.fused_repr.map(|v| g.value(v).clone()),
    })
}

/// Runs the network on one video.
pub fn forward(
    features: &VideoFeatures,
    params: &ModelParams,
    cfg: &ModelConfig,
    k_div: usize,
) -> Result<PredictionTrace> {
    cfg.validate()?;
    let mut g = Graph::new();
    let pv = params.bind(&mut g);
    let inputs = bind_features(&mut g, features, cfg)?;
    let fv = forward_graph(&mut g, &pv, inputs, cfg)?;
    trace_from_graph(&g, &fv, cfg, k_div)
}

/// Early- or late-fusion baseline on the same encoders.
pub fn baseline_forward(
    features: &VideoFeatures,
    params: &ModelParams,
    cfg: &ModelConfig,
    variant: FusionVariant,
    k_div: usize,
) -> Result<PredictionTrace> {
    if variant == FusionVariant::Dcm {
        return Err(Error::Argument("baseline variant must be early or late".into()));
    }
    let cfg = ModelConfig {
        fusion: variant,
        ..cfg.clone()
    };
    forward(features, params, &cfg, k_div)
}
