//! The `SQRL` model artifact.
//!
//! All integers and floats are little-endian. Layout:
//!
//! ```text
//! header
//!   magic            4  b"SQRL"
//!   version          u8 1
//!   col_index_bytes  u8 2
//!   row_offset_bytes u8 4
//!   flags            u8 0 (reserved)
//!   input_dim        u32
//!   layer_count      u32
//!   head             u8 0 = identity, 1 = tanh-gaussian
//!   [low, high]      f32 x 2, tanh-gaussian only
//!   config_hash      32 bytes
//! layer (repeated)
//!   kind             u8 0 = dense-f32, 1 = csr-f32, 2 = csr-i8, 3 = dense-i8
//!   activation       u8 0 = none, 1 = relu
//!   rows, cols       u32, u32
//!   sparsity         f32 fraction of pruned weights
//!   [granularity     u8 0 = layerwise, 1 = channelwise   int8 kinds only
//!    scales          f32 x (1 | rows)]
//!   dense:  rows*cols values (f32 or i8)
//!   csr:    nnz u32, row_offsets u32 x (rows+1), col_indices u16 x nnz,
//!           values x nnz (f32 or i8)
//!   bias             f32 x rows
//! ```
//!
//! The parser is strict: any stream that does not re-serialize to itself
//! byte for byte is rejected with the offset of the first offending field.

use serde::{Deserialize, Serialize};

use crate::envs::{self, Action};
use crate::error::{Error, Result};
use crate::nn::{self, LinearLayer, Mlp, MlpSpec, OutputHead};
use crate::prune::{apply_mask, LayerMask, PruningMask};
use crate::quant::{self, Granularity, QuantParams};
use crate::sparse::csr::{self, CsrMatrix, CsrValues, MAX_COLS};
use crate::tensor::{dot, Tensor};

pub const MAGIC: &[u8; 4] = b"SQRL";
pub const VERSION: u8 = 1;
pub const HASH_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Head {
    /// Raw outputs; the policy action is the argmax.
    Identity,
    /// `[mean; log_std]`; the policy action is `tanh(mean)` scaled to bounds.
    TanhGaussian { low: f32, high: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerActivation {
    None,
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightBlock {
    DenseF32 { rows: usize, cols: usize, values: Vec<f32> },
    DenseI8 { rows: usize, cols: usize, codes: Vec<i8>, params: QuantParams },
    Csr(CsrMatrix),
}

impl WeightBlock {
    pub fn rows(&self) -> usize {
        match self {
            WeightBlock::DenseF32 { rows, .. } | WeightBlock::DenseI8 { rows, .. } => *rows,
            WeightBlock::Csr(m) => m.rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            WeightBlock::DenseF32 { cols, .. } | WeightBlock::DenseI8 { cols, .. } => *cols,
            WeightBlock::Csr(m) => m.cols,
        }
    }

    /// Stored weight entries (all of them for dense blocks).
    pub fn stored(&self) -> usize {
        match self {
            WeightBlock::DenseF32 { values, .. } => values.len(),
            WeightBlock::DenseI8 { codes, .. } => codes.len(),
            WeightBlock::Csr(m) => m.nnz(),
        }
    }

    pub fn is_quantized(&self) -> bool {
        match self {
            WeightBlock::DenseI8 { .. } => true,
            WeightBlock::Csr(m) => matches!(m.values, CsrValues::I8 { .. }),
            WeightBlock::DenseF32 { .. } => false,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            WeightBlock::DenseF32 { .. } => "dense-f32",
            WeightBlock::DenseI8 { .. } => "dense-i8",
            WeightBlock::Csr(m) if matches!(m.values, CsrValues::F32(_)) => "csr-f32",
            WeightBlock::Csr(_) => "csr-i8",
        }
    }

    /// Dequantized dense copy.
    pub fn to_dense(&self) -> Tensor {
        match self {
            WeightBlock::DenseF32 { rows, cols, values } => {
                Tensor::from_vec(&[*rows, *cols], values.clone()).expect("block shape")
            }
            WeightBlock::DenseI8 { rows, cols, codes, params } => {
                let data = codes
                    .iter()
                    .enumerate()
                    .map(|(i, c)| quant::dequantize_value(*c, params.scale_for_row(i / cols)))
                    .collect();
                Tensor::from_vec(&[*rows, *cols], data).expect("block shape")
            }
            WeightBlock::Csr(m) => m.to_dense(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLayer {
    pub weights: WeightBlock,
    pub bias: Vec<f32>,
    pub activation: LayerActivation,
    /// Fraction of this layer's weights removed by the pruning mask.
    pub sparsity: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedModel {
    pub input_dim: usize,
    pub head: Head,
    pub config_hash: [u8; HASH_LEN],
    pub layers: Vec<CompressedLayer>,
}

/// How weight blocks are laid out on export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Per layer, whichever of dense and CSR is smaller (dense on ties).
    #[default]
    Auto,
    Dense,
    Csr,
}

#[derive(Debug, Clone, Default)]
pub struct ExportOptions {
    pub quant: Option<Granularity>,
    pub layout: Layout,
    /// Action bounds for a tanh-Gaussian head.
    pub action_bounds: Option<(f32, f32)>,
    pub config_hash: [u8; HASH_LEN],
}

fn dense_bytes(rows: usize, cols: usize, value_bytes: usize) -> usize {
    rows * cols * value_bytes
}

fn csr_bytes(rows: usize, nnz: usize, value_bytes: usize) -> usize {
    4 + 4 * (rows + 1) + nnz * (2 + value_bytes)
}

/// Builds the artifact for `net` with pruned weights removed and, with
/// `opts.quant`, weights stored as int8 codes calibrated on the masked weights.
pub fn export(net: &Mlp, mask: Option<&PruningMask>, opts: &ExportOptions) -> Result<CompressedModel> {
    let shapes = net.weight_shapes();
    let dense_mask;
    let mask = match mask {
        Some(m) => m,
        None => {
            dense_mask = PruningMask::dense(&shapes);
            &dense_mask
        }
    };
    let mask_shapes: Vec<(usize, usize)> = mask.layers().iter().map(|l| (l.rows(), l.cols())).collect();
    if mask_shapes != shapes {
        return Err(Error::Export(format!(
            "mask shapes {mask_shapes:?} do not match network {shapes:?}"
        )));
    }
    let head = match net.spec.output_head {
        OutputHead::Identity => Head::Identity,
        OutputHead::TanhGaussian => {
            let (low, high) = opts
                .action_bounds
                .ok_or_else(|| Error::Export("tanh-gaussian head needs action bounds".into()))?;
            if !(low.is_finite() && high.is_finite() && low < high) {
                return Err(Error::Export(format!("invalid action bounds [{low}, {high}]")));
            }
            Head::TanhGaussian { low, high }
        }
    };
    let last = net.layers.len() - 1;
    let mut layers = Vec::with_capacity(net.layers.len());
    for (i, (layer, lm)) in net.layers.iter().zip(mask.layers()).enumerate() {
        let (rows, cols) = (layer.out_dim(), layer.in_dim());
        let mut w = layer.weight.clone();
        apply_mask(&mut w, lm)?;
        w.ensure_finite("exported weights")?;
        layer.bias.ensure_finite("exported bias")?;
        let vb = if opts.quant.is_some() { 1 } else { 4 };
        let use_csr = match opts.layout {
            Layout::Dense => false,
            Layout::Csr => true,
            Layout::Auto => csr_bytes(rows, lm.popcount(), vb) < dense_bytes(rows, cols, vb),
        } && cols <= MAX_COLS;
        let params = opts.quant.map(|g| quant::calibrate(&w, g)).transpose()?;
        let weights = match (use_csr, params) {
            (true, None) => WeightBlock::Csr(csr::to_csr(&w, lm)?),
            (true, Some(p)) => WeightBlock::Csr(csr::to_csr_i8(&w, lm, &p)?),
            (false, None) => WeightBlock::DenseF32 {
                rows,
                cols,
                values: w.into_data(),
            },
            (false, Some(p)) => WeightBlock::DenseI8 {
                rows,
                cols,
                codes: quant::quantize(&w, &p)?.codes,
                params: p,
            },
        };
        layers.push(CompressedLayer {
            weights,
            bias: layer.bias.data().to_vec(),
            activation: if i == last {
                LayerActivation::None
            } else {
                LayerActivation::Relu
            },
            sparsity: lm.sparsity() as f32,
        });
    }
    let model = CompressedModel {
        input_dim: net.spec.input_dim,
        head,
        config_hash: opts.config_hash,
        layers,
    };
    model.validate()?;
    Ok(model)
}

/// [`export`] followed by serialization.
pub fn export_bytes(net: &Mlp, mask: Option<&PruningMask>, opts: &ExportOptions) -> Result<Vec<u8>> {
    Ok(export(net, mask, opts)?.to_bytes())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn i8s(&mut self, v: &[i8]) {
        self.0.extend(v.iter().map(|c| *c as u8));
    }
    fn params(&mut self, p: &QuantParams) {
        self.u8(match p.granularity {
            Granularity::Layerwise => 0,
            Granularity::Channelwise => 1,
        });
        self.f32s(&p.scales);
    }
}

impl CompressedModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(self.analytic_size()));
        w.0.extend_from_slice(MAGIC);
        w.u8(VERSION);
        w.u8(2);
        w.u8(4);
        w.u8(0);
        w.u32(self.input_dim);
        w.u32(self.layers.len());
        match self.head {
            Head::Identity => w.u8(0),
            Head::TanhGaussian { low, high } => {
                w.u8(1);
                w.f32s(&[low, high]);
            }
        }
        w.0.extend_from_slice(&self.config_hash);
        for l in &self.layers {
            let kind = match &l.weights {
                WeightBlock::DenseF32 { .. } => 0,
                WeightBlock::Csr(m) if matches!(m.values, CsrValues::F32(_)) => 1,
                WeightBlock::Csr(_) => 2,
                WeightBlock::DenseI8 { .. } => 3,
            };
            w.u8(kind);
            w.u8(match l.activation {
                LayerActivation::None => 0,
                LayerActivation::Relu => 1,
            });
            w.u32(l.weights.rows());
            w.u32(l.weights.cols());
            w.f32s(&[l.sparsity]);
            match &l.weights {
                WeightBlock::DenseF32 { values, .. } => w.f32s(values),
                WeightBlock::DenseI8 { codes, params, .. } => {
                    w.params(params);
                    w.i8s(codes);
                }
                WeightBlock::Csr(m) => {
                    if let CsrValues::I8 { params, .. } = &m.values {
                        w.params(params);
                    }
                    w.u32(m.nnz());
                    for o in &m.row_offsets {
                        w.0.extend_from_slice(&o.to_le_bytes());
                    }
                    for c in &m.col_indices {
                        w.0.extend_from_slice(&c.to_le_bytes());
                    }
                    match &m.values {
                        CsrValues::F32(v) => w.f32s(v),
                        CsrValues::I8 { codes, .. } => w.i8s(codes),
                    }
                }
            }
            w.f32s(&l.bias);
        }
        w.0
    }

    /// Serialized length computed from dimensions, counts and dtypes alone.
    pub fn analytic_size(&self) -> usize {
        let head = match self.head {
            Head::Identity => 1,
            Head::TanhGaussian { .. } => 9,
        };
        let header = 4 + 4 + 4 + 4 + head + HASH_LEN;
        header
            + self
                .layers
                .iter()
                .map(|l| {
                    let (rows, cols) = (l.weights.rows(), l.weights.cols());
                    let fixed = 2 + 4 + 4 + 4 + 4 * rows;
                    let scales = |p: &QuantParams| 1 + 4 * p.scales.len();
                    fixed
                        + match &l.weights {
                            WeightBlock::DenseF32 { .. } => dense_bytes(rows, cols, 4),
                            WeightBlock::DenseI8 { params, .. } => scales(params) + dense_bytes(rows, cols, 1),
                            WeightBlock::Csr(m) => match &m.values {
                                CsrValues::F32(_) => csr_bytes(rows, m.nnz(), 4),
                                CsrValues::I8 { params, .. } => scales(params) + csr_bytes(rows, m.nnz(), 1),
                            },
                        }
                })
                .sum::<usize>()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Reader { buf: bytes, pos: 0 }.model()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.rows())
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.rows() * l.weights.cols()).sum()
    }

    pub fn bias_count(&self) -> usize {
        self.layers.iter().map(|l| l.bias.len()).sum()
    }

    /// Weight entries actually stored.
    pub fn stored_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.stored()).sum()
    }

    /// Weights that survived pruning: CSR entries, or for dense blocks the
    /// count implied by the layer's sparsity metadata.
    pub fn kept_weights(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match &l.weights {
                WeightBlock::Csr(m) => m.nnz(),
                w => {
                    let n = w.rows() * w.cols();
                    n - (l.sparsity as f64 * n as f64).round() as usize
                }
            })
            .sum()
    }

    pub fn is_quantized(&self) -> bool {
        self.layers.iter().any(|l| l.weights.is_quantized())
    }

    /// Weighted mean of the per-layer sparsity metadata.
    pub fn sparsity(&self) -> f64 {
        let total = self.weight_count() as f64;
        self.layers
            .iter()
            .map(|l| l.sparsity as f64 * (l.weights.rows() * l.weights.cols()) as f64)
            .sum::<f64>()
            / total
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Export(m));
        if self.layers.is_empty() {
            return err("model has no layers".into());
        }
        let mut width = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.cols() != width || l.bias.len() != l.weights.rows() {
                return err(format!("layer {i} does not chain from width {width}"));
            }
            let want = if i + 1 == self.layers.len() {
                LayerActivation::None
            } else {
                LayerActivation::Relu
            };
            if l.activation != want {
                return err(format!("layer {i} has activation {:?}", l.activation));
            }
            if let WeightBlock::Csr(m) = &l.weights {
                m.validate()?;
            }
            width = l.weights.rows();
        }
        if matches!(self.head, Head::TanhGaussian { .. }) && width % 2 != 0 {
            return err("tanh-gaussian head needs an even output width".into());
        }
        Ok(())
    }

    /// Raw network output for one observation.
    pub fn infer(&self, observation: &[f32]) -> Result<Vec<f32>> {
        if observation.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "observation has {} entries, model expects {}",
                observation.len(),
                self.input_dim
            )));
        }
        let mut x = observation.to_vec();
        let mut y = Vec::new();
        let mut scratch = Vec::new();
        for l in &self.layers {
            let rows = l.weights.rows();
            y.clear();
            y.resize(rows, 0.0);
            match &l.weights {
                WeightBlock::Csr(m) => m.matvec_into(&x, &mut y)?,
                WeightBlock::DenseF32 { cols, values, .. } => {
                    for (r, out) in y.iter_mut().enumerate() {
                        *out = dot(&x, &values[r * cols..(r + 1) * cols]);
                    }
                }
                WeightBlock::DenseI8 { cols, codes, params, .. } => {
                    scratch.resize(*cols, 0.0);
                    for (r, out) in y.iter_mut().enumerate() {
                        let s = params.scale_for_row(r);
                        for (d, c) in scratch.iter_mut().zip(&codes[r * cols..(r + 1) * cols]) {
                            *d = quant::dequantize_value(*c, s);
                        }
                        *out = dot(&x, &scratch);
                    }
                }
            }
            for (v, b) in y.iter_mut().zip(&l.bias) {
                *v += b;
                if l.activation == LayerActivation::Relu {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut x, &mut y);
        }
        Ok(x)
    }

    /// Many observations; fans out over threads with the `parallel` feature.
    pub fn infer_batch(&self, observations: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        crate::par::map(observations.iter().collect(), |o| self.infer(o))
            .into_iter()
            .collect()
    }

    /// Deterministic policy action: argmax, or `tanh(mean)` scaled to bounds.
    pub fn act(&self, observation: &[f32]) -> Result<Action> {
        let out = self.infer(observation)?;
        Ok(match self.head {
            Head::Identity => Action::Discrete(crate::rl::argmax(&out)),
            Head::TanhGaussian { low, high } => {
                Action::Continuous(envs::scale_action(&nn::deterministic_action(&out), low, high))
            }
        })
    }

    /// Dequantized float network with the same function.
    pub fn to_mlp(&self) -> Result<Mlp> {
        let hidden: Vec<usize> = self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weights.rows())
            .collect();
        let spec = match self.head {
            Head::Identity => MlpSpec::new(self.input_dim, &hidden, self.output_dim()),
            Head::TanhGaussian { .. } => {
                MlpSpec::new(self.input_dim, &hidden, self.output_dim() / 2).with_head(OutputHead::TanhGaussian)
            }
        };
        let layers = self
            .layers
            .iter()
            .map(|l| LinearLayer::new(l.weights.to_dense(), Tensor::vector(l.bias.clone())))
            .collect::<Result<_>>()?;
        Mlp::from_layers(spec, layers)
    }

    /// Mask of stored entries (all-ones for dense blocks).
    pub fn mask(&self) -> Result<PruningMask> {
        let layers = self
            .layers
            .iter()
            .map(|l| match &l.weights {
                WeightBlock::Csr(m) => {
                    let mut bits = vec![false; m.rows * m.cols];
                    for r in 0..m.rows {
                        for k in m.row_offsets[r] as usize..m.row_offsets[r + 1] as usize {
                            bits[r * m.cols + m.col_indices[k] as usize] = true;
                        }
                    }
                    LayerMask::from_bits(m.rows, m.cols, bits)
                }
                w => Ok(LayerMask::ones(w.rows(), w.cols())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PruningMask::from_layers(layers, self.sparsity()))
    }

    pub fn action_bounds(&self) -> Option<(f32, f32)> {
        match self.head {
            Head::TanhGaussian { low, high } => Some((low, high)),
            Head::Identity => None,
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::format(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let at = self.pos;
        let b = self.take(4, what)?;
        let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if !v.is_finite() {
            return Err(Error::format(at, format!("non-finite {what}")));
        }
        Ok(v)
    }

    /// Checks that `count` items of `size` bytes fit before allocating.
    fn ensure(&self, count: usize, size: usize, what: &str) -> Result<()> {
        match count.checked_mul(size) {
            Some(n) if n <= self.remaining() => Ok(()),
            _ => Err(Error::format(
                self.pos,
                format!("{what}: {count} entries do not fit in {} remaining bytes", self.remaining()),
            )),
        }
    }

    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        self.ensure(count, 4, what)?;
        (0..count).map(|_| self.f32(what)).collect()
    }

    fn i8s(&mut self, count: usize, what: &str) -> Result<Vec<i8>> {
        let at = self.pos;
        let raw = self.take(count, what)?;
        if let Some(i) = raw.iter().position(|b| *b == 0x80) {
            return Err(Error::format(at + i, format!("{what}: code -128 is outside [-127, 127]")));
        }
        Ok(raw.iter().map(|b| *b as i8).collect())
    }

    fn expect(&mut self, want: u8, what: &str) -> Result<()> {
        let at = self.pos;
        let got = self.u8(what)?;
        if got != want {
            return Err(Error::format(at, format!("{what} must be {want}, found {got}")));
        }
        Ok(())
    }

    fn params(&mut self, rows: usize) -> Result<QuantParams> {
        let at = self.pos;
        let granularity = match self.u8("granularity")? {
            0 => Granularity::Layerwise,
            1 => Granularity::Channelwise,
            g => return Err(Error::format(at, format!("unknown granularity {g}"))),
        };
        let n = if granularity == Granularity::Layerwise { 1 } else { rows };
        let at = self.pos;
        let scales = self.f32s(n, "scales")?;
        if scales.iter().any(|s| *s <= 0.0) {
            return Err(Error::format(at, "scales must be positive"));
        }
        Ok(QuantParams { granularity, scales })
    }

    fn model(mut self) -> Result<CompressedModel> {
        let magic = self.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(0, "bad magic"));
        }
        self.expect(VERSION, "version")?;
        self.expect(2, "column index width")?;
        self.expect(4, "row offset width")?;
        self.expect(0, "flags")?;
        let at = self.pos;
        let input_dim = self.u32("input_dim")?;
        if input_dim == 0 {
            return Err(Error::format(at, "input_dim must be >= 1"));
        }
        let at = self.pos;
        let layer_count = self.u32("layer_count")?;
        if layer_count == 0 {
            return Err(Error::format(at, "layer_count must be >= 1"));
        }
        let at = self.pos;
        let head = match self.u8("head")? {
            0 => Head::Identity,
            1 => {
                let at = self.pos;
                let (low, high) = (self.f32("action low")?, self.f32("action high")?);
                if low >= high {
                    return Err(Error::format(at, "action bounds must satisfy low < high"));
                }
                Head::TanhGaussian { low, high }
            }
            h => return Err(Error::format(at, format!("unknown head {h}"))),
        };
        let mut config_hash = [0u8; HASH_LEN];
        config_hash.copy_from_slice(self.take(HASH_LEN, "config hash")?);
        // every layer needs at least 18 header bytes
        self.ensure(layer_count, 18, "layers")?;
        let mut layers = Vec::with_capacity(layer_count);
        let mut width = input_dim;
        for i in 0..layer_count {
            layers.push(self.layer(i, layer_count, width)?);
            width = layers[i].weights.rows();
        }
        if let Head::TanhGaussian { .. } = head {
            if width % 2 != 0 {
                return Err(Error::format(self.pos, "tanh-gaussian head needs an even output width"));
            }
        }
        if self.remaining() != 0 {
            return Err(Error::format(self.pos, format!("{} trailing bytes", self.remaining())));
        }
        Ok(CompressedModel {
            input_dim,
            head,
            config_hash,
            layers,
        })
    }

    fn layer(&mut self, index: usize, count: usize, width: usize) -> Result<CompressedLayer> {
        let at = self.pos;
        let kind = self.u8("layer kind")?;
        if kind > 3 {
            return Err(Error::format(at, format!("unknown layer kind {kind}")));
        }
        let at = self.pos;
        let activation = match self.u8("activation")? {
            0 => LayerActivation::None,
            1 => LayerActivation::Relu,
            a => return Err(Error::format(at, format!("unknown activation {a}"))),
        };
        let want = if index + 1 == count {
            LayerActivation::None
        } else {
            LayerActivation::Relu
        };
        if activation != want {
            return Err(Error::format(at, format!("layer {index} must use {want:?}")));
        }
        let at = self.pos;
        let rows = self.u32("rows")?;
        let cols = self.u32("cols")?;
        if rows == 0 || cols != width {
            return Err(Error::format(
                at,
                format!("layer {index} is [{rows}, {cols}], expected [>=1, {width}]"),
            ));
        }
        let at = self.pos;
        let sparsity = self.f32("sparsity")?;
        if !(0.0..=1.0).contains(&sparsity) {
            return Err(Error::format(at, "sparsity must be in [0, 1]"));
        }
        let params = if kind == 2 || kind == 3 {
            self.ensure(1, 5, "quantization parameters")?;
            Some(self.params(rows)?)
        } else {
            None
        };
        let weights = match kind {
            0 | 3 => {
                let n = rows
                    .checked_mul(cols)
                    .ok_or_else(|| Error::format(at, "layer size overflows"))?;
                if kind == 0 {
                    WeightBlock::DenseF32 {
                        rows,
                        cols,
                        values: self.f32s(n, "dense weights")?,
                    }
                } else {
                    WeightBlock::DenseI8 {
                        rows,
                        cols,
                        codes: self.i8s(n, "dense codes")?,
                        params: params.expect("int8 kind"),
                    }
                }
            }
            _ => self.csr(rows, cols, params)?,
        };
        let bias = self.f32s(rows, "bias")?;
        Ok(CompressedLayer {
            weights,
            bias,
            activation,
            sparsity,
        })
    }

    fn csr(&mut self, rows: usize, cols: usize, params: Option<QuantParams>) -> Result<WeightBlock> {
        if cols > MAX_COLS {
            return Err(Error::format(self.pos, format!("{cols} columns exceed 16-bit indices")));
        }
        let at = self.pos;
        let nnz = self.u32("nnz")?;
        if nnz > rows.saturating_mul(cols) {
            return Err(Error::format(at, format!("nnz {nnz} exceeds {rows}x{cols}")));
        }
        let value_bytes = if params.is_some() { 1 } else { 4 };
        let offsets_len = rows
            .checked_add(1)
            .ok_or_else(|| Error::format(at, "rows overflow"))?;
        self.ensure(offsets_len, 4, "row offsets")?;
        self.ensure(nnz, 2 + value_bytes, "csr entries")?;
        let mut row_offsets = Vec::with_capacity(offsets_len);
        for r in 0..offsets_len {
            let at = self.pos;
            let o = self.u32("row offset")?;
            let prev = row_offsets.last().copied().unwrap_or(0) as usize;
            if (r == 0 && o != 0) || o < prev || o > nnz || (r == rows && o != nnz) {
                return Err(Error::format(at, format!("row offset {r} = {o} is invalid")));
            }
            row_offsets.push(o as u32);
        }
        let mut col_indices = Vec::with_capacity(nnz);
        for r in 0..rows {
            let mut prev: Option<u16> = None;
            for _ in row_offsets[r]..row_offsets[r + 1] {
                let at = self.pos;
                let b = self.take(2, "column index")?;
                let c = u16::from_le_bytes([b[0], b[1]]);
                if c as usize >= cols || prev.is_some_and(|p| c <= p) {
                    return Err(Error::format(at, format!("column index {c} in row {r} is invalid")));
                }
                prev = Some(c);
                col_indices.push(c);
            }
        }
        let values = match params {
            None => CsrValues::F32(self.f32s(nnz, "csr values")?),
            Some(params) => CsrValues::I8 {
                codes: self.i8s(nnz, "csr codes")?,
                params,
            },
        };
        Ok(WeightBlock::Csr(CsrMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        }))
    }
}
