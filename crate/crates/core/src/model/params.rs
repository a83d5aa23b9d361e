use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{FusionVariant, ModelConfig};
use crate::datamodel::Modality;
use crate::error::{Error, Result};
use crate::numerics::{Gradients, Graph, Tensor2, Var};

/// Parameter name to shape for a configuration, in name order.
pub fn expected_shapes(cfg: &ModelConfig) -> BTreeMap<String, (usize, usize)> {
    let d = cfg.hidden;
    let mut shapes = BTreeMap::new();
    let mut put = |name: String, shape| {
        shapes.insert(name, shape);
    };
    for m in Modality::ALL {
        let tag = m.tag();
        put(format!("{tag}.proj.w"), (cfg.input_dims[m.index()], d));
        put(format!("{tag}.proj.b"), (1, d));
        if cfg.use_encoder {
            for w in ["wq", "wk", "wv"] {
                put(format!("{tag}.enc.{w}"), (d, d));
            }
            put(format!("{tag}.enc.ffn1.w"), (d, cfg.ffn_width));
            put(format!("{tag}.enc.ffn1.b"), (1, cfg.ffn_width));
            put(format!("{tag}.enc.ffn2.w"), (cfg.ffn_width, d));
            put(format!("{tag}.enc.ffn2.b"), (1, d));
        }
        if cfg.gates_active() {
            put(format!("{tag}.gate.w"), (d, 1));
            put(format!("{tag}.gate.b"), (1, 1));
        }
        if cfg.branches_active() {
            put(format!("{tag}.head.w"), (d, 1));
            put(format!("{tag}.head.b"), (1, 1));
        }
    }
    match cfg.fusion {
        FusionVariant::Early => {
            put("early.w".into(), (3 * d, 1));
            put("early.b".into(), (1, 1));
        }
        FusionVariant::Late => {}
        FusionVariant::Dcm => {
            if cfg.cma_active() {
                for w in ["wq", "wk", "wv"] {
                    put(format!("cma.{w}"), (3 * d, d));
                }
            }
            put("cls.w".into(), (d, 1));
            put("cls.b".into(), (1, 1));
        }
    }
    shapes
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".b")
}

/// Named weight matrices of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor2>,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, drawn in name order from `cfg.seed`.
    ///
    /// Values are rounded to single precision so checkpoints store them exactly.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut tensors = BTreeMap::new();
        for (name, (r, c)) in expected_shapes(cfg) {
            let t = if is_bias(&name) {
                Tensor2::zeros(r, c)
            } else {
                let limit = (6.0 / (r + c) as f64).sqrt();
                let data = (0..r * c)
                    .map(|_| f64::from(rng.random_range(-limit..limit) as f32))
                    .collect();
                Tensor2::new(r, c, data)?
            };
            tensors.insert(name, t);
        }
        Ok(Self { tensors })
    }

    /// Wraps a name map after checking it against `cfg`.
    pub fn from_map(tensors: BTreeMap<String, Tensor2>, cfg: &ModelConfig) -> Result<Self> {
        let p = Self { tensors };
        p.audit(cfg)?;
        Ok(p)
    }

    /// Every expected name is present with its exact shape and nothing else is.
    pub fn audit(&self, cfg: &ModelConfig) -> Result<()> {
        cfg.validate()?;
        let expected = expected_shapes(cfg);
        for (name, &shape) in &expected {
            let t = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            if t.shape() != shape {
                return Err(Error::ParamShape {
                    name: name.clone(),
                    expected: shape,
                    found: t.shape(),
                });
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::UnexpectedParam(extra.clone()));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor2> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor2> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor2)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor2::len).sum()
    }

    /// Places every parameter on the tape as a leaf.
    pub fn bind(&self, g: &mut Graph) -> ParamVars {
        ParamVars {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), g.leaf(v.clone())))
                .collect(),
        }
    }
}

/// Tape handles of bound parameters.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Handles for parameters already placed on a tape, e.g. by a gradient check.
    pub fn from_vars(vars: BTreeMap<String, Var>) -> Self {
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Gradients of every bound parameter, by name.
    pub fn gradients(&self, grads: &mut Gradients) -> BTreeMap<String, Tensor2> {
        self.vars
            .iter()
            .map(|(k, &v)| (k.clone(), grads.take(v)))
            .collect()
    }
}

/// Scalar count of the parameters a configuration declares.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    expected_shapes(cfg).values().map(|(r, c)| r * c).sum()
}
