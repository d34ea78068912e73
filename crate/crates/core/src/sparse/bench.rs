//! Size and latency report over a set of compressed models.
//!
//! Parameter-count reduction compares weight bits only:
//! `32 * dense_weights / (value_bits * nonzero_weights)`. Biases are left out
//! of that ratio. The bytes-on-disk ratio counts everything, index arrays
//! and biases included, against a dense float export of the same network.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::format::{CompressedModel, CompressedLayer, LayerActivation, WeightBlock};

/// Minimum timed repetitions.
pub const MIN_REPETITIONS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub bytes_on_disk: usize,
    pub dense_f32_bytes: usize,
    pub parameter_count: usize,
    pub nonzero_count: usize,
    pub value_bits: u32,
    pub param_reduction: f64,
    pub bytes_reduction: f64,
    pub mean_latency_ns: f64,
    pub median_latency_ns: f64,
    pub p99_latency_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub inputs: usize,
    pub repetitions: usize,
}

/// `32 * weights / (bits * nonzero)`, from integer counts.
pub fn param_reduction(weights: usize, nonzero: usize, value_bits: u32) -> f64 {
    if nonzero == 0 {
        return f64::INFINITY;
    }
    (32 * weights as u128) as f64 / (value_bits as u128 * nonzero as u128) as f64
}

/// Byte size of the same network exported dense in float32.
pub fn dense_f32_size(model: &CompressedModel) -> usize {
    CompressedModel {
        layers: model
            .layers
            .iter()
            .map(|l| CompressedLayer {
                weights: WeightBlock::DenseF32 {
                    rows: l.weights.rows(),
                    cols: l.weights.cols(),
                    values: Vec::new(),
                },
                bias: Vec::new(),
                activation: LayerActivation::None,
                sparsity: 0.0,
            })
            .collect(),
        ..model.clone()
    }
    .analytic_size()
}

/// Latency statistics in nanoseconds per forward: `(mean, median, p99)`.
fn stats(mut per_forward: Vec<f64>) -> (f64, f64, f64) {
    per_forward.sort_by(f64::total_cmp);
    let n = per_forward.len();
    let mean = per_forward.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        per_forward[n / 2]
    } else {
        0.5 * (per_forward[n / 2 - 1] + per_forward[n / 2])
    };
    let p99 = per_forward[((0.99 * n as f64).ceil() as usize).clamp(1, n) - 1];
    (mean, median, p99)
}

/// Times single-threaded inference of each model over `inputs`.
///
/// One untimed warmup pass precedes `repetitions` timed passes; a pass is one
/// forward per input and contributes `elapsed / inputs` to the statistics.
pub fn benchmark(
    models: &[(String, CompressedModel)],
    inputs: &[Vec<f32>],
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions < MIN_REPETITIONS {
        return Err(Error::Config(vec![format!(
            "repetitions must be >= {MIN_REPETITIONS}, got {repetitions}"
        )]));
    }
    if inputs.is_empty() {
        return Err(Error::Config(vec!["benchmark needs at least one input".into()]));
    }
    let mut rows = Vec::with_capacity(models.len());
    for (name, model) in models {
        let mut sink = 0.0f32;
        for x in inputs {
            sink += model.infer(x)?[0];
        }
        let mut samples = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t = Instant::now();
            for x in inputs {
                sink += model.infer(x)?[0];
            }
            samples.push(t.elapsed().as_nanos() as f64 / inputs.len() as f64);
        }
        std::hint::black_box(sink);
        let (mean, median, p99) = stats(samples);
        let bytes = model.analytic_size();
        let dense = dense_f32_size(model);
        let value_bits = if model.is_quantized() { 8 } else { 32 };
        let weights = model.weight_count();
        let nonzero = model.kept_weights();
        rows.push(BenchRow {
            model: name.clone(),
            bytes_on_disk: bytes,
            dense_f32_bytes: dense,
            parameter_count: weights,
            nonzero_count: nonzero,
            value_bits,
            param_reduction: param_reduction(weights, nonzero, value_bits),
            bytes_reduction: dense as f64 / bytes as f64,
            mean_latency_ns: mean,
            median_latency_ns: median,
            p99_latency_ns: p99,
        });
    }
    Ok(BenchReport {
        rows,
        inputs: inputs.len(),
        repetitions,
    })
}

impl BenchReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<BenchRow>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:>10} {:>10} {:>10} {:>5} {:>10} {:>10} {:>11} {:>11}",
            "model", "bytes", "params", "nonzero", "bits", "param x", "bytes x", "median ns", "p99 ns"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<24} {:>10} {:>10} {:>10} {:>5} {:>10.2} {:>10.2} {:>11.0} {:>11.0}",
                r.model,
                r.bytes_on_disk,
                r.parameter_count,
                r.nonzero_count,
                r.value_bits,
                r.param_reduction,
                r.bytes_reduction,
                r.median_latency_ns,
                r.p99_latency_ns
            );
        }
        let _ = writeln!(
            s,
            "param x: weight bits vs dense float32, biases excluded. bytes x: whole file incl. indices and biases."
        );
        let _ = write!(
            s,
            "latency: single thread, {} inputs, {} timed passes after one warmup.",
            self.inputs, self.repetitions
        );
        s
    }
}
