//! Minimal dense-network engine: batched forward/backward passes for
//! fully-connected layers with ReLU or linear activations, MSE loss, Adam,
//! and a central-difference gradient oracle.
//!
//! Everything is `f64`; channel noise floors around 1e-8 W and path-loss
//! factors of 1e-6 leave no headroom for single precision. Gradients are
//! exact reverse-mode derivatives of the forward map, with the ReLU
//! subgradient at 0 fixed to 0 so checks are reproducible.

use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

/// One fully-connected layer: `act(W x + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Matmul results inherit their operands' memory order; degenerate shapes
/// (a 1-wide input layer, say) can come out column-major, which would break
/// the flat parameter views the optimizer works on. Rebuild those row-major.
fn into_standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        let dim = a.raw_dim();
        Array2::from_shape_vec(dim, a.iter().copied().collect()).expect("same shape")
    }
}

/// A chain of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

/// Pre-activations and layer inputs retained by [`DenseNet::forward`] for
/// the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

/// Parameter gradients mirroring a layer's shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter gradients mirroring a whole net.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    /// Flat per-block views in the same order as
    /// [`DenseNet::flat_params_mut`].
    pub fn flat(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }
}

impl DenseNet {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("net needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::DimensionMismatch {
                    context: "layer chaining",
                    expected: w[0].out_dim(),
                    got: w[1].in_dim(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(Error::DimensionMismatch {
                    context: "layer bias",
                    expected: l.out_dim(),
                    got: l.bias.len(),
                });
            }
            if l.weights
                .iter()
                .chain(l.bias.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFiniteInput {
                    context: "layer parameters",
                });
            }
        }
        Ok(Self { layers })
    }

    /// An MLP through `dims` with ReLU hidden layers and a linear output
    /// layer. Weights are He-initialized for ReLU layers and
    /// Xavier-initialized for the linear one; biases start at zero.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "mlp needs an input and an output dimension".into(),
            ));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let activation = if i + 2 == dims.len() {
                Activation::Linear
            } else {
                Activation::Relu
            };
            let std = match activation {
                Activation::Relu => (2.0 / fan_in as f64).sqrt(),
                Activation::Linear => (1.0 / fan_in as f64).sqrt(),
            };
            let normal = Normal::new(0.0, std).expect("finite std");
            let weights = Array2::from_shape_fn((fan_out, fan_in), |_| normal.sample(rng));
            layers.push(DenseLayer {
                weights,
                bias: Array1::zeros(fan_out),
                activation,
            });
        }
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Batched forward pass (rows are samples). Returns the output and the
    /// cache needed by [`DenseNet::backward`].
    pub fn forward(&self, input: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if input.ncols() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                context: "forward input",
                expected: self.in_dim(),
                got: input.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let pre = into_standard(x.dot(&layer.weights.t()) + &layer.bias);
            let out = match layer.activation {
                Activation::Relu => pre.mapv(|v| if v > 0.0 { v } else { 0.0 }),
                Activation::Linear => pre.clone(),
            };
            inputs.push(x);
            pre_activations.push(pre);
            x = out;
        }
        Ok((
            x,
            ForwardCache {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Single-sample forward pass.
    pub fn forward_one(&self, input: &ArrayView1<f64>) -> Result<Array1<f64>> {
        let batch = input
            .to_owned()
            .into_shape_with_order((1, input.len()))
            .expect("row reshape");
        let (out, _) = self.forward(&batch)?;
        Ok(out.row(0).to_owned())
    }

    /// Exact reverse-mode gradients of the forward map. `grad_output` is the
    /// loss gradient at the net output; returns parameter gradients and the
    /// loss gradient at the net input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &Array2<f64>,
    ) -> Result<(NetGrads, Array2<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                context: "backward cache depth",
                expected: self.layers.len(),
                got: cache.inputs.len(),
            });
        }
        let last_pre = cache.pre_activations.last().expect("non-empty");
        if grad_output.raw_dim() != last_pre.raw_dim() {
            return Err(Error::DimensionMismatch {
                context: "backward output gradient",
                expected: last_pre.len(),
                got: grad_output.len(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_output.clone();
        for (layer, (x, pre)) in self
            .layers
            .iter()
            .zip(cache.inputs.iter().zip(&cache.pre_activations))
            .rev()
        {
            let d_pre = match layer.activation {
                Activation::Relu => {
                    let mut d = g;
                    d.zip_mut_with(pre, |gi, &p| {
                        if p <= 0.0 {
                            *gi = 0.0;
                        }
                    });
                    d
                }
                Activation::Linear => g,
            };
            let d_weights = into_standard(d_pre.t().dot(x));
            let d_bias = d_pre.sum_axis(Axis(0));
            g = into_standard(d_pre.dot(&layer.weights));
            grads.push(LayerGrads {
                weights: d_weights,
                bias: d_bias,
            });
        }
        grads.reverse();
        Ok((NetGrads { layers: grads }, g))
    }

    /// Smallest |pre-activation| across all ReLU layers for this input
    /// (infinity when the net has none). Finite-difference gradient checks
    /// need evaluation points bounded away from the ReLU kink; a margin
    /// comfortably above the probe step keeps the loss locally smooth.
    pub fn relu_kink_margin(&self, input: &Array2<f64>) -> Result<f64> {
        let (_, cache) = self.forward(input)?;
        let mut margin = f64::INFINITY;
        for (layer, pre) in self.layers.iter().zip(&cache.pre_activations) {
            if layer.activation == Activation::Relu {
                for v in pre.iter() {
                    margin = margin.min(v.abs());
                }
            }
        }
        Ok(margin)
    }

    /// Mutable flat views of all parameters, per block (`weights`, `bias`
    /// per layer, in order).
    pub fn flat_params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let DenseLayer { weights, bias, .. } = l;
                [
                    weights.as_slice_mut().expect("standard layout"),
                    bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    /// Block names and lengths, for optimizer registration.
    pub fn block_specs(&self, prefix: &str) -> Vec<(String, usize)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.layer{i}.weights"), l.weights.len()),
                    (format!("{prefix}.layer{i}.bias"), l.bias.len()),
                ]
            })
            .collect()
    }

    /// All parameters concatenated in block order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    /// Writes back parameters previously read by [`DenseNet::flat_params`].
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                context: "set_flat_params",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            for v in l.weights.iter_mut() {
                *v = flat[offset];
                offset += 1;
            }
            for v in l.bias.iter_mut() {
                *v = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }
}

/// Mean squared error over all elements (batch and dimension averaged).
pub fn mse(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.raw_dim() != b.raw_dim() {
        return Err(Error::DimensionMismatch {
            context: "mse",
            expected: a.len(),
            got: b.len(),
        });
    }
    let n = a.len() as f64;
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Gradient of [`mse`] with respect to its first argument.
pub fn mse_grad(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = a.len() as f64;
    (a - b) * (2.0 / n)
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("invalid Adam hyperparameters".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlockMoments {
    name: String,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam state over a fixed set of named parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    hyper: AdamHyper,
    t: u64,
    blocks: Vec<BlockMoments>,
}

impl AdamState {
    pub fn new(hyper: AdamHyper, blocks: &[(String, usize)]) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            t: 0,
            blocks: blocks
                .iter()
                .map(|(name, len)| BlockMoments {
                    name: name.clone(),
                    m: vec![0.0; *len],
                    v: vec![0.0; *len],
                })
                .collect(),
        })
    }

    pub fn for_net(net: &DenseNet, hyper: AdamHyper, prefix: &str) -> Result<Self> {
        Self::new(hyper, &net.block_specs(prefix))
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// One Adam update across all registered blocks. `params` and `grads`
    /// must match the registration order and lengths.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.blocks.len() || grads.len() != self.blocks.len() {
            return Err(Error::DimensionMismatch {
                context: "adam blocks",
                expected: self.blocks.len(),
                got: params.len().max(grads.len()),
            });
        }
        for (block, g) in self.blocks.iter().zip(grads.iter()) {
            if g.len() != block.m.len() {
                return Err(Error::DimensionMismatch {
                    context: "adam block length",
                    expected: block.m.len(),
                    got: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    block: block.name.clone(),
                });
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let AdamHyper {
            lr,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((block, p), g) in self.blocks.iter_mut().zip(params.iter_mut()).zip(grads) {
            for i in 0..g.len() {
                let grad = g[i];
                block.m[i] = beta1 * block.m[i] + (1.0 - beta1) * grad;
                block.v[i] = beta2 * block.v[i] + (1.0 - beta2) * grad * grad;
                let m_hat = block.m[i] / bc1;
                let v_hat = block.v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Central-difference gradient of `loss` at `params`, step 1e-5 per
/// coordinate. The test oracle for every analytic gradient in the crate; it
/// only ever evaluates the loss closure.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(mut loss: F, params: &[f64]) -> Vec<f64> {
    const STEP: f64 = 1e-5;
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let original = probe[i];
        probe[i] = original + STEP;
        let plus = loss(&probe);
        probe[i] = original - STEP;
        let minus = loss(&probe);
        probe[i] = original;
        grad.push((plus - minus) / (2.0 * STEP));
    }
    grad
}
