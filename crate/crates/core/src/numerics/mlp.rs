//! Dense feed-forward network with hand-written reverse mode.
//!
//! Weights are stored `(out_dim, in_dim)`. Batches are `(n, dim)` matrices,
//! one sample per row.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NgmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    /// The ReLU kink takes subgradient 0.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Ordered stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Cached activations of a batch forward pass, consumed by
/// [`MlpParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: DMatrix<f64>,
    pre: Vec<DMatrix<f64>>,
    post: Vec<DMatrix<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &DMatrix<f64> {
        self.post.last().unwrap_or(&self.input)
    }

    /// Output of layer `l` (0-based).
    pub fn layer_output(&self, l: usize) -> &DMatrix<f64> {
        &self.post[l]
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NgmError::Dimension("network needs at least one layer".into()));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(NgmError::Dimension(format!(
                    "layer {l}: bias length {} != output dim {}",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if l > 0 && layer.in_dim() != layers[l - 1].out_dim() {
                return Err(NgmError::Dimension(format!(
                    "layer {l}: input dim {} != previous output dim {}",
                    layer.in_dim(),
                    layers[l - 1].out_dim()
                )));
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(NgmError::NonFinite {
                    term: format!("layer {l} parameters"),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Fan-in scaled uniform initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases. `dims` lists every layer boundary, input first.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        final_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NgmError::Dimension(format!("invalid layer dims {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let bound = (1.0 / dims[l] as f64).sqrt();
                Layer {
                    weight: DMatrix::from_fn(dims[l + 1], dims[l], |_, _| rng.random_range(-bound..bound)),
                    bias: DVector::from_fn(dims[l + 1], |_, _| rng.random_range(-bound..bound)),
                    activation: if l + 1 == n { final_activation } else { hidden },
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Layer boundary sizes, input first.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Same shapes and activations, all values zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: DMatrix::zeros(l.out_dim(), l.in_dim()),
                    bias: DVector::zeros(l.out_dim()),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    /// Parameters flattened layer by layer: weight (column-major), then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length mismatch");
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(NgmError::Dimension(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut a = x.clone();
        for l in &self.layers {
            let mut z = &l.weight * &a + &l.bias;
            z.apply(|v| *v = l.activation.apply(*v));
            a = z;
        }
        Ok(a)
    }

    /// Batch forward pass, one sample per row.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_batch(x)?;
        let mut a = x.clone();
        for l in &self.layers {
            a = affine(&a, l);
            a.apply(|v| *v = l.activation.apply(*v));
        }
        Ok(a)
    }

    pub fn forward_trace(&self, x: &DMatrix<f64>) -> Result<ForwardTrace> {
        self.check_batch(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for l in &self.layers {
            let z = affine(&a, l);
            a = z.map(|v| l.activation.apply(v));
            pre.push(z);
            post.push(a.clone());
        }
        Ok(ForwardTrace {
            input: x.clone(),
            pre,
            post,
        })
    }

    /// Reverse pass. `d_output` is dLoss/dOutput for the traced batch.
    /// Returns parameter gradients (shaped like `self`) and dLoss/dInput.
    pub fn backward(&self, trace: &ForwardTrace, d_output: &DMatrix<f64>) -> (MlpParams, DMatrix<f64>) {
        let mut grads = self.zeros_like();
        let mut d_a = d_output.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let z = &trace.pre[l];
            let a = &trace.post[l];
            let mut d_z = d_a;
            for ((dz, &zv), &av) in d_z.iter_mut().zip(z.iter()).zip(a.iter()) {
                *dz *= layer.activation.derivative(zv, av);
            }
            let input = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            grads.layers[l].weight = d_z.transpose() * input;
            grads.layers[l].bias = d_z.row_sum().transpose();
            d_a = &d_z * &layer.weight;
        }
        (grads, d_a)
    }

    fn check_batch(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(NgmError::Dimension(format!(
                "batch has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

fn affine(a: &DMatrix<f64>, l: &Layer) -> DMatrix<f64> {
    let mut z = a * l.weight.transpose();
    for mut row in z.row_iter_mut() {
        row += l.bias.transpose();
    }
    z
}
