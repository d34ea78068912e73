//! Symmetric uniform 8-bit weight quantization.
//!
//! Codes live in `[-127, 127]` with the zero-point fixed at 0, so an exact
//! zero always maps to code 0 and back to `0.0`. That is what keeps pruned
//! weights dead through quantization-aware training.
//!
//! The same primitives serve both paths:
//! - PTQ: [`calibrate`] once, [`quantize`], store the codes.
//! - QAT: [`fake_quant_forward`] on every forward pass (calibration is
//!   recomputed because the master weights move), and
//!   [`fake_quant_backward`] as a straight-through estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest code magnitude. `-128` is never emitted.
pub const QMAX: i32 = 127;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One scale for the whole tensor.
    #[default]
    Layerwise,
    /// One scale per output channel (row of a `[out, in]` weight matrix).
    Channelwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub granularity: Granularity,
    /// Length 1 for layerwise, one entry per row for channelwise.
    pub scales: Vec<f32>,
}

impl QuantParams {
    pub fn layerwise(scale: f32) -> Self {
        Self {
            granularity: Granularity::Layerwise,
            scales: vec![scale],
        }
    }

    /// The single layerwise scale, or the first channel's scale.
    pub fn scale(&self) -> f32 {
        self.scales[0]
    }

    #[inline]
    pub fn scale_for_row(&self, row: usize) -> f32 {
        match self.granularity {
            Granularity::Layerwise => self.scales[0],
            Granularity::Channelwise => self.scales[row],
        }
    }

    pub fn validate(&self, rows: usize) -> Result<()> {
        let expected = match self.granularity {
            Granularity::Layerwise => 1,
            Granularity::Channelwise => rows,
        };
        if self.scales.len() != expected {
            return Err(Error::Dimension(format!(
                "{:?} params need {expected} scales, got {}",
                self.granularity,
                self.scales.len()
            )));
        }
        if let Some(s) = self.scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Numeric(format!("scale must be finite and > 0, got {s}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub codes: Vec<i8>,
    pub params: QuantParams,
}

/// Scale for a range whose largest magnitude is `max_abs`.
///
/// `max_abs / 127` is nudged to a nearby float `s` with `(127 * s) / 127 == s`,
/// so recalibrating an already-quantized tensor reproduces the same scale and
/// fake quantization is exactly idempotent.
fn scale_for(max_abs: f32) -> f32 {
    if max_abs == 0.0 {
        return 1.0;
    }
    let q = QMAX as f32;
    let mut s = max_abs / q;
    for _ in 0..8 {
        let back = (q * s) / q;
        if back == s {
            break;
        }
        s = back;
    }
    s
}

/// Computes symmetric scales: `max|w| / 127` over the tensor or per row.
///
/// An all-zero tensor (or row) gets scale 1; any scale represents zeros exactly.
pub fn calibrate(weights: &Tensor, granularity: Granularity) -> Result<QuantParams> {
    if weights.is_empty() {
        return Err(Error::Dimension("cannot calibrate an empty tensor".into()));
    }
    weights.ensure_finite("calibrate")?;
    let scales = match granularity {
        Granularity::Layerwise => {
            let m = weights.max_abs();
            if m == 0.0 {
                log::debug!("calibrating an all-zero tensor; using scale 1");
            }
            vec![scale_for(m)]
        }
        Granularity::Channelwise => (0..weights.rows())
            .map(|r| scale_for(weights.row(r).iter().fold(0.0f32, |m, v| m.max(v.abs()))))
            .collect(),
    };
    Ok(QuantParams {
        granularity,
        scales,
    })
}

/// `clamp(round(w / scale), -127, 127)` with round-half-away-from-zero.
#[inline]
pub fn quantize_value(w: f32, scale: f32) -> i8 {
    (w / scale).round().clamp(-(QMAX as f32), QMAX as f32) as i8
}

#[inline]
pub fn dequantize_value(code: i8, scale: f32) -> f32 {
    code as f32 * scale
}

pub fn quantize(w: &Tensor, params: &QuantParams) -> Result<QuantizedTensor> {
    params.validate(w.rows())?;
    let cols = w.last_dim().max(1);
    let codes = w
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| quantize_value(*v, params.scale_for_row(i / cols)))
        .collect();
    Ok(QuantizedTensor {
        shape: w.shape().to_vec(),
        codes,
        params: params.clone(),
    })
}

pub fn dequantize(q: &QuantizedTensor) -> Result<Tensor> {
    let rows_len = q.shape.last().copied().unwrap_or(1).max(1);
    q.params.validate(q.codes.len() / rows_len)?;
    let data = q
        .codes
        .iter()
        .enumerate()
        .map(|(i, c)| dequantize_value(*c, q.params.scale_for_row(i / rows_len)))
        .collect();
    Tensor::from_vec(&q.shape, data)
}

/// Quantize-dequantize with fresh calibration; returns the snapped weights
/// together with the parameters used.
pub fn fake_quant(w: &Tensor, granularity: Granularity) -> Result<(Tensor, QuantParams)> {
    let params = calibrate(w, granularity)?;
    let cols = w.last_dim().max(1);
    let data = w
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let s = params.scale_for_row(i / cols);
            dequantize_value(quantize_value(*v, s), s)
        })
        .collect();
    Ok((Tensor::from_vec(w.shape(), data)?, params))
}

/// Forward pass of QAT: weights pass through the int8 grid.
pub fn fake_quant_forward(w: &Tensor, granularity: Granularity) -> Result<Tensor> {
    fake_quant(w, granularity).map(|(t, _)| t)
}

/// Straight-through estimator. The gradient passes unchanged wherever the
/// weight was representable without clamping and is zero where it was clipped.
pub fn fake_quant_backward(
    weights: &Tensor,
    params: &QuantParams,
    upstream: &Tensor,
) -> Result<Tensor> {
    if !weights.same_shape(upstream) {
        return Err(Error::Dimension(format!(
            "STE: weights {:?} vs gradient {:?}",
            weights.shape(),
            upstream.shape()
        )));
    }
    params.validate(weights.rows())?;
    let cols = weights.last_dim().max(1);
    let data = weights
        .data()
        .iter()
        .zip(upstream.data())
        .enumerate()
        .map(|(i, (w, g))| {
            let s = params.scale_for_row(i / cols);
            if (w.abs() / s).round() > QMAX as f32 {
                0.0
            } else {
                *g
            }
        })
        .collect();
    Tensor::from_vec(weights.shape(), data)
}
