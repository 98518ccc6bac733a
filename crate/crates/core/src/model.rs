//! Small classifiers built on the tensor graph: an MLP and a one-convolution CNN.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Graph, Parameter, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// Fully connected ReLU layers of the given widths.
    Mlp { hidden: Vec<usize> },
    /// conv3x3 → ReLU → 2x2 mean-pool → dense → ReLU → dense.
    SmallCnn {
        conv_channels: usize,
        dense_width: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::config("class_count must be at least 2"));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::config(format!(
                "input_shape must have positive extents, got {:?}",
                self.input_shape
            )));
        }
        match &self.architecture {
            Architecture::Mlp { hidden } if hidden.contains(&0) => {
                Err(Error::config("MLP hidden widths must be positive"))
            }
            Architecture::SmallCnn {
                conv_channels,
                dense_width,
            } => {
                let [_, h, w] = self.input_shape[..] else {
                    return Err(Error::config(format!(
                        "SmallCnn needs a [channels, height, width] input, got {:?}",
                        self.input_shape
                    )));
                };
                if h < 2 || w < 2 || *conv_channels == 0 || *dense_width == 0 {
                    return Err(Error::config(
                        "SmallCnn needs spatial extents >= 2 and positive widths",
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn input_numel(&self) -> usize {
        self.input_shape.iter().product()
    }
}

/// Network weights plus the spec that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Parameter>,
}

const POOL: usize = 2;

impl Model {
    /// He-initialised weights (normal, std `sqrt(2 / fan_in)`), zero biases.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut shapes: Vec<(String, Vec<usize>, usize)> = Vec::new();
        let dense = |shapes: &mut Vec<(String, Vec<usize>, usize)>, name: &str, fan_in, fan_out| {
            shapes.push((format!("{name}.weight"), vec![fan_in, fan_out], fan_in));
            shapes.push((format!("{name}.bias"), vec![fan_out], 0));
        };
        match &spec.architecture {
            Architecture::Mlp { hidden } => {
                let mut width = spec.input_numel();
                for (i, &h) in hidden.iter().enumerate() {
                    dense(&mut shapes, &format!("hidden{i}"), width, h);
                    width = h;
                }
                dense(&mut shapes, "output", width, spec.class_count);
            }
            Architecture::SmallCnn {
                conv_channels,
                dense_width,
            } => {
                let (c, h, w) = (spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]);
                shapes.push(("conv.weight".into(), vec![*conv_channels, c, 3, 3], c * 9));
                let flat = conv_channels * (h / POOL) * (w / POOL);
                dense(&mut shapes, "dense", flat, *dense_width);
                dense(&mut shapes, "output", *dense_width, spec.class_count);
            }
        }
        let params = shapes
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape, fan_in))| {
                let numel = shape.iter().product();
                let data = if fan_in == 0 {
                    vec![0.0; numel]
                } else {
                    let std = (2.0 / fan_in as f64).sqrt();
                    let mut rng = rng::stream(spec.init_seed, "init", &[i as u64]);
                    (0..numel)
                        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                };
                Ok(Parameter::new(name, Tensor::new(shape, data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Stacks examples into one batch tensor shaped for the architecture.
    fn batch_input(&self, batch: &[&Tensor]) -> Result<Tensor> {
        let per = self.spec.input_numel();
        let mut data = Vec::with_capacity(batch.len() * per);
        for x in batch {
            if x.numel() != per {
                return Err(Error::Dimension {
                    op: "model input",
                    left: x.shape().to_vec(),
                    right: self.spec.input_shape.clone(),
                });
            }
            data.extend_from_slice(x.data());
        }
        let mut shape = vec![batch.len()];
        match self.spec.architecture {
            Architecture::Mlp { .. } => shape.push(per),
            Architecture::SmallCnn { .. } => shape.extend_from_slice(&self.spec.input_shape),
        }
        Tensor::new(shape, data)
    }

    /// Records the forward pass on `g` and returns `[B, C]` logits plus the
    /// parameter leaves, in `self.params` order.
    pub fn forward(&self, g: &mut Graph, batch: &[&Tensor], track_grads: bool) -> Result<(Var, Vec<Var>)> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let input = g.leaf(self.batch_input(batch)?);
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone().with_requires_grad(track_grads)))
            .collect();
        let dense = |g: &mut Graph, x: Var, w: Var, b: Var| -> Result<Var> {
            let z = g.matmul(x, w)?;
            g.add_row(z, b)
        };
        let logits = match &self.spec.architecture {
            Architecture::Mlp { hidden } => {
                let mut x = input;
                for layer in 0..hidden.len() {
                    let z = dense(g, x, params[2 * layer], params[2 * layer + 1])?;
                    x = g.relu(z);
                }
                let last = hidden.len();
                dense(g, x, params[2 * last], params[2 * last + 1])?
            }
            Architecture::SmallCnn { .. } => {
                let conv = g.conv2d(input, params[0])?;
                let act = g.relu(conv);
                let pooled = g.mean_pool(act, POOL)?;
                let flat_len = g.value(pooled).numel() / batch.len();
                let flat = g.reshape(pooled, vec![batch.len(), flat_len])?;
                let hidden = dense(g, flat, params[1], params[2])?;
                let hidden = g.relu(hidden);
                dense(g, hidden, params[3], params[4])?
            }
        };
        Ok((logits, params))
    }

    /// `[B, C]` logits without recording gradients.
    pub fn logits(&self, batch: &[&Tensor]) -> Result<Tensor> {
        let mut g = Graph::new();
        let (logits, _) = self.forward(&mut g, batch, false)?;
        Ok(g.value(logits).clone())
    }

    /// Mean cross-entropy over the batch and its gradient per parameter.
    pub fn loss_and_gradients(&self, batch: &[&Tensor], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let (logits, params) = self.forward(&mut g, batch, true)?;
        let (loss, _) = g.softmax_cross_entropy_batch(logits, labels)?;
        let value = g.value(loss).data()[0];
        g.backward(loss)?;
        let grads = params
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| {
                g.grad(v)
                    .map_or_else(|| vec![0.0; p.value.numel()], <[f64]>::to_vec)
            })
            .collect();
        Ok((value, grads))
    }
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}
