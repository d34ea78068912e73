use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::prune::allocation::{allocate_sparsity, Allocation, DistributionStrategy};
use crate::tensor::Tensor;

/// Keep-bits for one `[rows, cols]` weight matrix. Biases are never masked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl LayerMask {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    pub fn from_bits(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "mask of {} bits for a {rows}x{cols} matrix",
                keep.len()
            )));
        }
        Ok(Self { rows, cols, keep })
    }

    /// Mask keeping exactly the nonzero entries of `w`.
    pub fn from_nonzero(w: &Tensor) -> Result<Self> {
        let (rows, cols) = matrix_dims(w)?;
        Ok(Self {
            rows,
            cols,
            keep: w.data().iter().map(|v| *v != 0.0).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> &[bool] {
        &self.keep
    }

    #[inline]
    pub fn is_kept(&self, idx: usize) -> bool {
        self.keep[idx]
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }

    pub fn zeros(&self) -> usize {
        self.len() - self.popcount()
    }

    pub fn sparsity(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.zeros() as f64 / self.len() as f64
        }
    }

    fn matches(&self, w: &Tensor) -> bool {
        w.shape() == [self.rows, self.cols]
    }
}

fn matrix_dims(w: &Tensor) -> Result<(usize, usize)> {
    match *w.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Dimension(format!(
            "expected a weight matrix, got shape {:?}",
            w.shape()
        ))),
    }
}

/// Zeroes every weight whose mask bit is cleared.
pub fn apply_mask(weights: &mut Tensor, mask: &LayerMask) -> Result<()> {
    if !mask.matches(weights) {
        return Err(Error::Dimension(format!(
            "mask {}x{} vs weights {:?}",
            mask.rows,
            mask.cols,
            weights.shape()
        )));
    }
    for (w, k) in weights.data_mut().iter_mut().zip(&mask.keep) {
        if !k {
            *w = 0.0;
        }
    }
    Ok(())
}

/// Per-layer masks for a whole network. Zero-sets only ever grow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningMask {
    layers: Vec<LayerMask>,
    /// Sparsity target of the most recent pruning event.
    target: f64,
}

impl PruningMask {
    pub fn dense(shapes: &[(usize, usize)]) -> Self {
        Self {
            layers: shapes.iter().map(|&(r, c)| LayerMask::ones(r, c)).collect(),
            target: 0.0,
        }
    }

    pub fn for_network(net: &Mlp) -> Self {
        Self::dense(&net.weight_shapes())
    }

    pub fn from_layers(layers: Vec<LayerMask>, target: f64) -> Self {
        Self { layers, target }
    }

    pub fn layers(&self) -> &[LayerMask] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &LayerMask {
        &self.layers[i]
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(LayerMask::len).sum()
    }

    pub fn zeros(&self) -> usize {
        self.layers.iter().map(LayerMask::zeros).sum()
    }

    pub fn sparsity(&self) -> f64 {
        match self.weight_count() {
            0 => 0.0,
            n => self.zeros() as f64 / n as f64,
        }
    }

    pub fn layer_sparsity(&self) -> Vec<f64> {
        self.layers.iter().map(LayerMask::sparsity).collect()
    }

    /// True if every weight pruned here is also pruned in `later`.
    pub fn is_nested_in(&self, later: &PruningMask) -> bool {
        self.layers.len() == later.layers.len()
            && self.layers.iter().zip(&later.layers).all(|(a, b)| {
                a.len() == b.len() && a.keep.iter().zip(&b.keep).all(|(ka, kb)| *ka || !*kb)
            })
    }

    /// Zeroes the pruned weights of `net` in place.
    pub fn apply(&self, net: &mut Mlp) -> Result<()> {
        if net.layers.len() != self.layers.len() {
            return Err(Error::Dimension(format!(
                "mask has {} layers, network has {}",
                self.layers.len(),
                net.layers.len()
            )));
        }
        for (layer, mask) in net.layers.iter_mut().zip(&self.layers) {
            apply_mask(&mut layer.weight, mask)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    magnitude: f32,
    layer: u32,
    index: u32,
}

/// Smallest magnitude first; ties broken by (layer, flat index).
fn by_magnitude(a: &Candidate, b: &Candidate) -> Ordering {
    a.magnitude
        .total_cmp(&b.magnitude)
        .then(a.layer.cmp(&b.layer))
        .then(a.index.cmp(&b.index))
}

/// `floor(fraction * count)`, tolerant of `0.98 * 5000 = 4899.999..`.
fn zeros_for(fraction: f64, count: usize) -> usize {
    ((fraction * count as f64) + 1e-9).floor().min(count as f64) as usize
}

/// Extends `mask` so each allocation group reaches `target` sparsity by
/// pruning the smallest-magnitude surviving weights. Already-pruned weights
/// stay pruned.
pub fn prune_step(
    weights: &[&Tensor],
    mask: &PruningMask,
    target: f64,
    strategy: DistributionStrategy,
) -> Result<PruningMask> {
    if weights.len() != mask.layers.len() {
        return Err(Error::Dimension(format!(
            "{} weight tensors for a {}-layer mask",
            weights.len(),
            mask.layers.len()
        )));
    }
    for (w, m) in weights.iter().zip(&mask.layers) {
        if !m.matches(w) {
            return Err(Error::Dimension(format!(
                "mask {}x{} vs weights {:?}",
                m.rows,
                m.cols,
                w.shape()
            )));
        }
    }
    if target + 1e-12 < mask.target {
        return Err(Error::Schedule(format!(
            "target sparsity {target} is below the current {}",
            mask.target
        )));
    }
    let shapes: Vec<(usize, usize)> = mask.layers.iter().map(|m| (m.rows, m.cols)).collect();
    let mut next = mask.clone();
    next.target = target;

    let alive = |l: usize| -> Vec<Candidate> {
        let m = &mask.layers[l];
        weights[l]
            .data()
            .iter()
            .enumerate()
            .filter(|(i, _)| m.keep[*i])
            .map(|(i, w)| Candidate {
                magnitude: w.abs(),
                layer: l as u32,
                index: i as u32,
            })
            .collect()
    };

    match allocate_sparsity(strategy, &shapes, target)? {
        Allocation::Global(s) => {
            let goal = zeros_for(s, mask.weight_count()).max(mask.zeros());
            let mut pool: Vec<Candidate> = (0..shapes.len()).flat_map(alive).collect();
            cut_smallest(&mut pool, goal - mask.zeros(), &mut next);
        }
        Allocation::PerLayer(per_layer) => {
            for (l, s) in per_layer.iter().enumerate() {
                let m = &mask.layers[l];
                let goal = zeros_for(*s, m.len()).max(m.zeros());
                let mut pool = alive(l);
                cut_smallest(&mut pool, goal - m.zeros(), &mut next);
            }
        }
    }
    Ok(next)
}

fn cut_smallest(pool: &mut [Candidate], k: usize, mask: &mut PruningMask) {
    if k == 0 {
        return;
    }
    if k < pool.len() {
        pool.select_nth_unstable_by(k - 1, by_magnitude);
    }
    for c in &pool[..k.min(pool.len())] {
        mask.layers[c.layer as usize].keep[c.index as usize] = false;
    }
}
