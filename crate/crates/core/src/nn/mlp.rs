use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{self, Granularity, QuantParams};
use crate::tensor::{axpy, dot, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// Raw linear output (Q-values, critic values).
    #[default]
    Identity,
    /// Final layer emits `[mean; log_std]`, each of `output_dim` entries;
    /// sampling and squashing live in [`super::gaussian`].
    TanhGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_head: OutputHead,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            hidden_activation: Activation::Relu,
            output_head: OutputHead::Identity,
        }
    }

    pub fn with_head(mut self, head: OutputHead) -> Self {
        self.output_head = head;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Dimension(format!(
                "all layer widths must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Width of the last linear layer.
    pub fn final_width(&self) -> usize {
        match self.output_head {
            OutputHead::Identity => self.output_dim,
            OutputHead::TanhGaussian => 2 * self.output_dim,
        }
    }

    /// `(out, in)` for each linear layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.final_width());
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl LinearLayer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::Dimension(format!(
                "linear layer weight {:?} / bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    /// Kaiming-uniform with `a = sqrt(5)`: weights and biases drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(out: usize, inp: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inp as f32).sqrt();
        let w = (0..out * inp).map(|_| rng.random_range(-bound..bound)).collect();
        let b = (0..out).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            weight: Tensor::from_vec(&[out, inp], w).expect("shape"),
            bias: Tensor::vector(b),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// `out[b, :] = W x[b, :] + bias` for row-major `x: [batch, in]`.
fn linear_forward(weight: &Tensor, bias: &Tensor, x: &[f32], batch: usize, out: &mut Vec<f32>) {
    let (rows, cols) = (weight.shape()[0], weight.shape()[1]);
    out.clear();
    out.reserve(batch * rows);
    let w = weight.data();
    let b = bias.data();
    for xb in x.chunks_exact(cols).take(batch) {
        for o in 0..rows {
            out.push(dot(xb, &w[o * cols..(o + 1) * cols]) + b[o]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<LinearLayer>,
}

/// Activations retained by a training forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    batch: usize,
    squeeze: bool,
    /// Input to each linear layer (post-activation of the previous one).
    inputs: Vec<Vec<f32>>,
    /// Fake-quantized weights and their parameters, when QAT was active.
    quantized: Vec<Option<(Tensor, QuantParams)>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub input: Tensor,
}

impl Gradients {
    pub fn global_norm(&self) -> f32 {
        self.layers
            .iter()
            .flat_map(|g| g.weight.data().iter().chain(g.bias.data()))
            .map(|v| v * v)
            .sum::<f32>()
            .sqrt()
    }

    /// Rescales all parameter gradients so their joint L2 norm is at most
    /// `max_norm`. Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f32) -> f32 {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            let k = max_norm / (norm + 1e-6);
            for g in &mut self.layers {
                g.weight.data_mut().iter_mut().for_each(|v| *v *= k);
                g.bias.data_mut().iter_mut().for_each(|v| *v *= k);
            }
        }
        norm
    }
}

impl Mlp {
    pub fn new(spec: MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| LinearLayer::init(o, i, rng))
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<LinearLayer>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len()
            || shapes
                .iter()
                .zip(&layers)
                .any(|((o, i), l)| l.out_dim() != *o || l.in_dim() != *i)
        {
            return Err(Error::Dimension(
                "layer shapes do not match the network spec".into(),
            ));
        }
        Ok(Self { spec, layers })
    }

    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.out_dim(), l.in_dim())).collect()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<usize> {
        if input.last_dim() != self.spec.input_dim || input.shape().len() > 2 {
            return Err(Error::Dimension(format!(
                "network expects input [.., {}], got {:?}",
                self.spec.input_dim,
                input.shape()
            )));
        }
        Ok(input.rows())
    }

    fn output_tensor(&self, data: Vec<f32>, batch: usize, squeeze: bool) -> Tensor {
        let w = self.spec.final_width();
        if squeeze {
            Tensor::vector(data)
        } else {
            Tensor::from_vec(&[batch, w], data).expect("output shape")
        }
    }

    /// Inference without a cache.
    pub fn predict(&self, input: &Tensor, quant: Option<Granularity>) -> Result<Tensor> {
        let batch = self.check_input(input)?;
        let snapped: Vec<Tensor> = match quant {
            Some(g) => self
                .layers
                .iter()
                .map(|l| quant::fake_quant_forward(&l.weight, g))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let mut x = input.data().to_vec();
        let mut y = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = snapped.get(i).unwrap_or(&layer.weight);
            linear_forward(w, &layer.bias, &x, batch, &mut y);
            if i != last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut x, &mut y);
        }
        let out = self.output_tensor(x, batch, input.shape().len() == 1);
        out.ensure_finite("forward")?;
        Ok(out)
    }

    /// Full-precision training forward.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.forward_with(input, None)
    }

    /// Training forward. With `quant`, every weight matrix is fake-quantized
    /// (fresh calibration) before use; master weights are not touched.
    pub fn forward_with(
        &self,
        input: &Tensor,
        quant: Option<Granularity>,
    ) -> Result<(Tensor, ForwardCache)> {
        let batch = self.check_input(input)?;
        let quantized: Vec<Option<(Tensor, QuantParams)>> = match quant {
            Some(g) => self
                .layers
                .iter()
                .map(|l| quant::fake_quant(&l.weight, g).map(Some))
                .collect::<Result<_>>()?,
            None => vec![None; self.layers.len()],
        };
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.data().to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = quantized[i].as_ref().map_or(&layer.weight, |(t, _)| t);
            let mut y = Vec::new();
            linear_forward(w, &layer.bias, &x, batch, &mut y);
            if i != last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut x, y));
        }
        let squeeze = input.shape().len() == 1;
        let out = self.output_tensor(x, batch, squeeze);
        out.ensure_finite("forward")?;
        Ok((
            out,
            ForwardCache {
                batch,
                squeeze,
                inputs,
                quantized,
            },
        ))
    }

    fn check_cache(&self, cache: &ForwardCache, upstream: &Tensor) -> Result<()> {
        if cache.is_empty() {
            return Err(Error::State("backward called without a forward cache".into()));
        }
        if cache.inputs.len() != self.layers.len()
            || cache.inputs[0].len() != cache.batch * self.spec.input_dim
        {
            return Err(Error::State("forward cache belongs to a different network".into()));
        }
        if upstream.len() != cache.batch * self.spec.final_width()
            || upstream.last_dim() != self.spec.final_width()
        {
            return Err(Error::Dimension(format!(
                "upstream gradient {:?} does not match output [{}, {}]",
                upstream.shape(),
                cache.batch,
                self.spec.final_width()
            )));
        }
        upstream.ensure_finite("upstream gradient")
    }

    /// Gradients of all weights, biases and the input for upstream gradient
    /// `dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Tensor) -> Result<Gradients> {
        self.backprop(cache, upstream, true)
    }

    /// Only `dL/d(input)`; skips the parameter gradients.
    pub fn input_gradient(&self, cache: &ForwardCache, upstream: &Tensor) -> Result<Tensor> {
        self.backprop(cache, upstream, false).map(|g| g.input)
    }

    fn backprop(&self, cache: &ForwardCache, upstream: &Tensor, params: bool) -> Result<Gradients> {
        self.check_cache(cache, upstream)?;
        let batch = cache.batch;
        let mut delta = upstream.data().to_vec();
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (rows, cols) = (layer.out_dim(), layer.in_dim());
            let x = &cache.inputs[i];
            let w = cache.quantized[i].as_ref().map_or(&layer.weight, |(t, _)| t);
            if params {
                let mut dw = vec![0.0f32; rows * cols];
                let mut db = vec![0.0f32; rows];
                for b in 0..batch {
                    let xb = &x[b * cols..(b + 1) * cols];
                    for o in 0..rows {
                        let g = delta[b * rows + o];
                        if g != 0.0 {
                            db[o] += g;
                            axpy(g, xb, &mut dw[o * cols..(o + 1) * cols]);
                        }
                    }
                }
                let mut dw = Tensor::from_vec(&[rows, cols], dw)?;
                if let Some((_, qp)) = &cache.quantized[i] {
                    dw = quant::fake_quant_backward(&layer.weight, qp, &dw)?;
                }
                grads.push(LayerGrad {
                    weight: dw,
                    bias: Tensor::vector(db),
                });
            }
            let wd = w.data();
            let mut dx = vec![0.0f32; batch * cols];
            for b in 0..batch {
                let dxb = &mut dx[b * cols..(b + 1) * cols];
                for o in 0..rows {
                    let g = delta[b * rows + o];
                    if g != 0.0 {
                        axpy(g, &wd[o * cols..(o + 1) * cols], dxb);
                    }
                }
            }
            if i > 0 {
                // ReLU: the layer input is the post-activation of layer i-1.
                for (d, a) in dx.iter_mut().zip(x) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = dx;
        }
        grads.reverse();
        let input = if cache.squeeze {
            Tensor::vector(delta)
        } else {
            Tensor::from_vec(&[batch, self.spec.input_dim], delta)?
        };
        Ok(Gradients {
            layers: grads,
            input,
        })
    }
}
