//! How a network-wide sparsity target is split across layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistributionStrategy {
    /// One magnitude threshold over all weights of the network.
    Global,
    /// Every layer pruned to the same fraction. The input layer is left dense
    /// when it holds less than 1% of all weights.
    #[default]
    LocalUniform,
    /// Keep-fraction proportional to `(fan_in + fan_out) / (fan_in * fan_out)`,
    /// with the proportionality constant solved to meet the global budget.
    ErdosRenyi,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Allocation {
    /// Single shared threshold; per-layer sparsities emerge from magnitudes.
    Global(f64),
    PerLayer(Vec<f64>),
}

/// Input layers below this share of all weights are exempt under `LocalUniform`.
pub const INPUT_EXEMPT_SHARE: f64 = 0.01;

/// Keep-fraction for a dense layer `n_l -> n_l1` before clipping.
pub fn er_mlp_keep_fraction(n_l: usize, n_l1: usize, epsilon: f64) -> f64 {
    epsilon * (n_l + n_l1) as f64 / (n_l as f64 * n_l1 as f64)
}

/// Keep-fraction for a convolution with `n_l` input channels, `n_l1` output
/// channels and a `w_l x h_l` kernel, before clipping.
pub fn er_cnn_keep_fraction(n_l: usize, n_l1: usize, w_l: usize, h_l: usize, epsilon: f64) -> f64 {
    epsilon * (n_l + n_l1 + w_l + h_l) as f64
        / (n_l as f64 * n_l1 as f64 * w_l as f64 * h_l as f64)
}

/// Solves for `epsilon` such that `sum_l min(1, epsilon * r_l) * count_l`
/// equals `keep * total`, by bisection. Returns `(epsilon, keep fractions)`.
pub fn erdos_renyi_keep(shapes: &[(usize, usize)], keep: f64) -> Result<(f64, Vec<f64>)> {
    if shapes.is_empty() {
        return Err(Error::Allocation("no layers".into()));
    }
    if !(0.0..=1.0).contains(&keep) {
        return Err(Error::Allocation(format!("keep fraction {keep} not in [0, 1]")));
    }
    // layer (out, in): fan_in = in, fan_out = out
    let raw: Vec<f64> = shapes
        .iter()
        .map(|&(o, i)| er_mlp_keep_fraction(i, o, 1.0))
        .collect();
    let counts: Vec<f64> = shapes.iter().map(|&(o, i)| (o * i) as f64).collect();
    let total: f64 = counts.iter().sum();
    let budget = keep * total;
    let kept = |eps: f64| -> f64 {
        raw.iter()
            .zip(&counts)
            .map(|(r, c)| (eps * r).min(1.0) * c)
            .sum()
    };
    let min_raw = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (0.0f64, 1.0 / min_raw);
    if kept(hi) < budget * (1.0 - 1e-12) {
        return Err(Error::Allocation(format!(
            "budget of {budget} weights exceeds the {total} available"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kept(mid) < budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eps = hi;
    Ok((eps, raw.iter().map(|r| (eps * r).min(1.0)).collect()))
}

pub fn allocate_sparsity(
    strategy: DistributionStrategy,
    shapes: &[(usize, usize)],
    target: f64,
) -> Result<Allocation> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::Allocation(format!("target sparsity {target} not in [0, 1)")));
    }
    if shapes.is_empty() {
        return Err(Error::Allocation("no layers".into()));
    }
    Ok(match strategy {
        DistributionStrategy::Global => Allocation::Global(target),
        DistributionStrategy::LocalUniform => {
            let total: usize = shapes.iter().map(|(o, i)| o * i).sum();
            let mut out = vec![target; shapes.len()];
            let first = shapes[0].0 * shapes[0].1;
            if shapes.len() > 1 && (first as f64) < INPUT_EXEMPT_SHARE * total as f64 {
                out[0] = 0.0;
            }
            Allocation::PerLayer(out)
        }
        DistributionStrategy::ErdosRenyi => {
            let (_, keep) = erdos_renyi_keep(shapes, 1.0 - target)?;
            Allocation::PerLayer(keep.into_iter().map(|k| (1.0 - k).max(0.0)).collect())
        }
    })
}
