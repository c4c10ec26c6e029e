//! Small differentiable classifiers.
//!
//! A model is split into `features` (what the provenance masks are aligned
//! with; the identity for image models, the per-skeleton encoder for skeleton
//! models) and `head` (features to logits).

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    /// Fully connected ReLU layers of the given widths, then a linear head.
    Mlp { hidden: Vec<usize> },
    /// 3×3 same-padded ReLU convolutions, one 2×2 max pool, linear head.
    TinyConv { channels: Vec<usize> },
    /// Shared per-skeleton, per-frame softplus encoder to `embed` features,
    /// then a linear head over all `P·F·embed` features.
    Skeleton { embed: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Shape of one input sample: `[H, W, C]` for images, `[P, F, K, V]` for skeletons.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    spec: ModelSpec,
    names: Vec<String>,
    params: Vec<Tensor>,
}

fn uniform(rng: &mut impl Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect()).expect("positive shape")
}

fn invalid(spec: &ModelSpec, reason: &str) -> TensorError {
    TensorError::InvalidShape {
        op: "model",
        shape: spec.input_shape.clone(),
        reason: reason.to_string(),
    }
}

impl ToyModel {
    /// Weights ~ U(±1/√fan_in), biases zero.
    pub fn init(spec: ModelSpec, rng: &mut impl Rng) -> Result<Self, TensorError> {
        let mut names = Vec::new();
        let mut params = Vec::new();
        let dense = |names: &mut Vec<String>, params: &mut Vec<Tensor>, rng: &mut _, tag: &str, fan_in: usize, fan_out: usize| {
            names.push(format!("{tag}.weight"));
            params.push(uniform(rng, vec![fan_in, fan_out], 1.0 / (fan_in as f64).sqrt()));
            names.push(format!("{tag}.bias"));
            params.push(Tensor::zeros(vec![fan_out]).expect("positive"));
        };
        let n = spec.num_classes;
        match &spec.architecture {
            Architecture::Linear => {
                if spec.input_shape.is_empty() {
                    return Err(invalid(&spec, "empty input shape"));
                }
                let d = spec.input_shape.iter().product();
                dense(&mut names, &mut params, rng, "head", d, n);
            }
            Architecture::Mlp { hidden } => {
                let mut d = spec.input_shape.iter().product();
                for (i, &width) in hidden.iter().enumerate() {
                    dense(&mut names, &mut params, rng, &format!("hidden{i}"), d, width);
                    d = width;
                }
                dense(&mut names, &mut params, rng, "head", d, n);
            }
            Architecture::TinyConv { channels } => {
                let [h, w, c] = spec.input_shape[..] else {
                    return Err(invalid(&spec, "tiny_conv expects [H, W, C] input"));
                };
                if channels.is_empty() || h < 2 || w < 2 {
                    return Err(invalid(&spec, "tiny_conv needs at least one conv layer and 2×2 input"));
                }
                let mut cin = c;
                for (i, &cout) in channels.iter().enumerate() {
                    names.push(format!("conv{i}.weight"));
                    params.push(uniform(rng, vec![3, 3, cin, cout], 1.0 / ((9 * cin) as f64).sqrt()));
                    names.push(format!("conv{i}.bias"));
                    params.push(Tensor::zeros(vec![cout]).expect("positive"));
                    cin = cout;
                }
                dense(&mut names, &mut params, rng, "head", (h / 2) * (w / 2) * cin, n);
            }
            Architecture::Skeleton { embed } => {
                let [p, f, k, v] = spec.input_shape[..] else {
                    return Err(invalid(&spec, "skeleton model expects [P, F, K, V] input"));
                };
                dense(&mut names, &mut params, rng, "encoder", k * v, *embed);
                dense(&mut names, &mut params, rng, "head", p * f * embed, n);
            }
        }
        Ok(Self { spec, names, params })
    }

    pub fn from_parts(spec: ModelSpec, named: Vec<(String, Tensor)>) -> Self {
        let (names, params) = named.into_iter().unzip();
        Self { spec, names, params }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn param_map(&self) -> BTreeMap<String, Tensor> {
        self.names.iter().cloned().zip(self.params.iter().cloned()).collect()
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) {
        assert_eq!(params.len(), self.params.len());
        self.params = params;
    }

    /// Adds every parameter to `tape` as a leaf.
    pub fn leaves<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Shape of the per-sample tensor the provenance masks refer to.
    pub fn feature_shape(&self) -> Vec<usize> {
        match &self.spec.architecture {
            Architecture::Skeleton { embed } => {
                let s = &self.spec.input_shape;
                vec![s[0], s[1], *embed]
            }
            _ => self.spec.input_shape.clone(),
        }
    }

    /// Batch `[B, ...input_shape]` to features `[B, ...feature_shape]`.
    pub fn features<'t>(&self, params: &[Var<'t>], x: &Var<'t>) -> Result<Var<'t>, TensorError> {
        match &self.spec.architecture {
            Architecture::Skeleton { embed } => {
                let b = x.shape()[0];
                let s = &self.spec.input_shape;
                let (p, f, kv) = (s[0], s[1], s[2] * s[3]);
                let rows = b * p * f;
                let z = x
                    .reshape(vec![rows, kv])?
                    .matmul(&params[0])?
                    .add(&params[1].repeat_rows(rows)?)?
                    .softplus()?;
                z.reshape(vec![b, p, f, *embed])
            }
            _ => Ok(*x),
        }
    }

    /// Features `[B, ...]` to logits `[B, N]`.
    pub fn head<'t>(&self, params: &[Var<'t>], feats: &Var<'t>) -> Result<Var<'t>, TensorError> {
        let b = feats.shape()[0];
        let dense = |x: Var<'t>, w: &Var<'t>, bias: &Var<'t>| -> Result<Var<'t>, TensorError> { x.matmul(w)?.add(&bias.repeat_rows(b)?) };
        let flat = |x: &Var<'t>| -> Result<Var<'t>, TensorError> {
            let d = x.numel() / b;
            x.reshape(vec![b, d])
        };
        match &self.spec.architecture {
            Architecture::Linear => dense(flat(feats)?, &params[0], &params[1]),
            Architecture::Mlp { hidden } => {
                let mut h = flat(feats)?;
                for i in 0..hidden.len() {
                    h = dense(h, &params[2 * i], &params[2 * i + 1])?.relu()?;
                }
                let k = hidden.len();
                dense(h, &params[2 * k], &params[2 * k + 1])
            }
            Architecture::TinyConv { channels } => {
                let mut h = *feats;
                for i in 0..channels.len() {
                    let conv = h.conv2d(&params[2 * i], 1)?;
                    let s = conv.shape();
                    let rows = s[0] * s[1] * s[2];
                    let bias = params[2 * i + 1].repeat_rows(rows)?.reshape(s)?;
                    h = conv.add(&bias)?.relu()?;
                }
                let pooled = h.max_pool2d(2)?;
                let k = channels.len();
                dense(flat(&pooled)?, &params[2 * k], &params[2 * k + 1])
            }
            Architecture::Skeleton { .. } => dense(flat(feats)?, &params[2], &params[3]),
        }
    }

    /// Logits `[B, N]` for a batch `[B, ...input_shape]`.
    pub fn forward<'t>(&self, params: &[Var<'t>], x: &Var<'t>) -> Result<Var<'t>, TensorError> {
        let expected: Vec<usize> = self.spec.input_shape.clone();
        let shape = x.shape();
        if shape.len() != expected.len() + 1 || shape[1..] != expected[..] {
            return Err(TensorError::ShapeMismatch {
                op: "forward",
                left: shape,
                right: expected,
            });
        }
        let feats = self.features(params, x)?;
        self.head(params, &feats)
    }

    /// Logits of a batch without tracking gradients.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let tape = Tape::new();
        let params: Vec<Var<'_>> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let logits = self.forward(&params, &tape.constant(x.clone()))?;
        Ok(logits.value().as_ref().clone())
    }
}

/// Stacks per-sample tensors into a `[B, ...]` batch.
pub fn batch(samples: &[&Tensor]) -> Result<Tensor, TensorError> {
    let first = samples.first().ok_or(TensorError::InvalidShape {
        op: "batch",
        shape: vec![],
        reason: "empty batch".into(),
    })?;
    let mut data = Vec::with_capacity(first.numel() * samples.len());
    for s in samples {
        if s.shape() != first.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "batch",
                left: first.shape().to_vec(),
                right: s.shape().to_vec(),
            });
        }
        data.extend_from_slice(s.data());
    }
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(first.shape());
    Tensor::new(shape, data)
}
