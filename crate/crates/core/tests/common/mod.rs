//! Independent oracles shared by the integration tests and the acceptance
//! gate. Everything here recomputes results in f64 from first principles and
//! never calls the code paths it checks.

#![allow(dead_code)]

use rand::Rng;
use sqrl::nn::{Mlp, MlpSpec, OutputHead};
use sqrl::prune::PruningMask;
use sqrl::quant::{fake_quant, Granularity};
use sqrl::seed;
use sqrl::tensor::Tensor;

pub fn rng(tag: u64) -> sqrl::seed::Rng {
    seed::rng(0x5eed, tag)
}

pub fn random_mlp(dims: &[usize], head: OutputHead, rng: &mut impl Rng) -> Mlp {
    let spec = MlpSpec::new(dims[0], &dims[1..dims.len() - 1], dims[dims.len() - 1]).with_head(head);
    let mut net = Mlp::new(spec, rng).unwrap();
    // push biases away from zero so ReLU kinks are unlikely near the test points
    for l in &mut net.layers {
        for b in l.bias.data_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    net
}

pub fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Plain f64 parameters of a network, weights row-major `[out][in]`.
#[derive(Clone, Debug)]
pub struct Net64 {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

impl Net64 {
    pub fn from_mlp(net: &Mlp) -> Self {
        Self::from_tensors(net.layers.iter().map(|l| (&l.weight, &l.bias)))
    }

    /// Weights snapped to the int8 grid, biases untouched.
    pub fn snapped(net: &Mlp, g: Granularity) -> Self {
        let snapped: Vec<Tensor> = net.layers.iter().map(|l| fake_quant(&l.weight, g).unwrap().0).collect();
        Self::from_tensors(snapped.iter().zip(net.layers.iter().map(|l| &l.bias)))
    }

    fn from_tensors<'a>(layers: impl Iterator<Item = (&'a Tensor, &'a Tensor)>) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (w, b) in layers {
            let (rows, cols) = (w.shape()[0], w.shape()[1]);
            weights.push(
                (0..rows)
                    .map(|r| (0..cols).map(|c| w.data()[r * cols + c] as f64).collect())
                    .collect(),
            );
            biases.push(b.data().iter().map(|v| *v as f64).collect());
        }
        Self { weights, biases }
    }

    /// ReLU between layers, identity output.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut y: Vec<f64> = w
                .iter()
                .zip(b)
                .map(|(row, bi)| row.iter().zip(&a).map(|(wi, xi)| wi * xi).sum::<f64>() + bi)
                .collect();
            if l != last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = y;
        }
        a
    }

    /// `sum_b c_b . f(x_b)`
    pub fn linear_loss(&self, xs: &[Vec<f64>], cs: &[Vec<f64>]) -> f64 {
        xs.iter()
            .zip(cs)
            .map(|(x, c)| self.forward(x).iter().zip(c).map(|(o, ci)| o * ci).sum::<f64>())
            .sum()
    }

    /// Central differences of `linear_loss` for every weight and bias.
    pub fn fd_gradients(&self, xs: &[Vec<f64>], cs: &[Vec<f64>], h: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            let mut gw = Vec::new();
            for r in 0..self.weights[l].len() {
                for c in 0..self.weights[l][r].len() {
                    let mut p = self.clone();
                    p.weights[l][r][c] += h;
                    let mut m = self.clone();
                    m.weights[l][r][c] -= h;
                    gw.push((p.linear_loss(xs, cs) - m.linear_loss(xs, cs)) / (2.0 * h));
                }
            }
            let mut gb = Vec::new();
            for r in 0..self.biases[l].len() {
                let mut p = self.clone();
                p.biases[l][r] += h;
                let mut m = self.clone();
                m.biases[l][r] -= h;
                gb.push((p.linear_loss(xs, cs) - m.linear_loss(xs, cs)) / (2.0 * h));
            }
            out.push((gw, gb));
        }
        out
    }

    /// Central differences with respect to the inputs.
    pub fn fd_input_gradient(&self, xs: &[Vec<f64>], cs: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
        xs.iter()
            .enumerate()
            .map(|(b, x)| {
                (0..x.len())
                    .map(|i| {
                        let mut p = x.clone();
                        p[i] += h;
                        let mut m = x.clone();
                        m[i] -= h;
                        let f = |v: &Vec<f64>| self.forward(v).iter().zip(&cs[b]).map(|(o, c)| o * c).sum::<f64>();
                        (f(&p) - f(&m)) / (2.0 * h)
                    })
                    .collect()
            })
            .collect()
    }

    /// Smallest |pre-activation| over all hidden units and inputs; FD is
    /// only meaningful when this exceeds the step size.
    pub fn min_kink_distance(&self, xs: &[Vec<f64>]) -> f64 {
        let mut min = f64::INFINITY;
        for x in xs {
            let mut a = x.clone();
            let last = self.weights.len() - 1;
            for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
                let y: Vec<f64> = w
                    .iter()
                    .zip(b)
                    .map(|(row, bi)| row.iter().zip(&a).map(|(wi, xi)| wi * xi).sum::<f64>() + bi)
                    .collect();
                if l != last {
                    min = y.iter().fold(min, |m, v| m.min(v.abs()));
                    a = y.iter().map(|v| v.max(0.0)).collect();
                }
            }
        }
        min
    }
}

/// Elementwise relative check: `|a - b| <= rel * max(|b|, floor)`, where the
/// floor is 1% of the largest reference magnitude so that near-zero entries
/// are compared on the scale of the tensor rather than their own.
pub fn rel_close(analytic: &[f32], reference: &[f64], rel: f64) -> Result<(), String> {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    rel_close_scaled(analytic, reference, rel, scale)
}

/// Like [`rel_close`] with the near-zero floor taken from `scale` (1% of it)
/// rather than from `reference` alone.
pub fn rel_close_scaled(analytic: &[f32], reference: &[f64], rel: f64, scale: f64) -> Result<(), String> {
    let floor = (1e-2 * scale).max(1e-12);
    for (i, (a, b)) in analytic.iter().zip(reference).enumerate() {
        let err = (*a as f64 - b).abs();
        if err > rel * b.abs().max(floor) {
            return Err(format!("entry {i}: analytic {a} vs reference {b} (err {err:.3e})"));
        }
    }
    Ok(())
}

/// Brute-force global magnitude pruning: sort every surviving weight by
/// (|w|, layer, index) and drop the first `floor(target * N) - already` ones.
pub fn brute_force_global(weights: &[Vec<f32>], keep: &[Vec<bool>], target: f64) -> Vec<Vec<bool>> {
    let total: usize = weights.iter().map(Vec::len).sum();
    let zeros: usize = keep.iter().flatten().filter(|k| !**k).count();
    let goal = ((target * total as f64) + 1e-9).floor() as usize;
    let mut alive: Vec<(f32, usize, usize)> = Vec::new();
    for (l, w) in weights.iter().enumerate() {
        for (i, v) in w.iter().enumerate() {
            if keep[l][i] {
                alive.push((v.abs(), l, i));
            }
        }
    }
    alive.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = keep.to_vec();
    for (_, l, i) in alive.into_iter().take(goal.saturating_sub(zeros)) {
        out[l][i] = false;
    }
    out
}

pub fn mask_bits(mask: &PruningMask) -> Vec<Vec<bool>> {
    mask.layers().iter().map(|l| l.bits().to_vec()).collect()
}

/// Interval bound on `|int8 forward - float forward|` per output, propagated
/// layer by layer: `e_out <= |Wq| e_in + (s/2) sum_{kept} |x|`.
pub fn int8_error_bound(float: &Net64, snapped: &Net64, scales: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut e = vec![0.0; x.len()];
    let last = float.weights.len() - 1;
    for l in 0..float.weights.len() {
        let (w, wq) = (&float.weights[l], &snapped.weights[l]);
        let mut next_e = Vec::with_capacity(w.len());
        let mut next_a = Vec::with_capacity(w.len());
        for (r, (row, rowq)) in w.iter().zip(wq).enumerate() {
            let s = if scales[l].len() == 1 { scales[l][0] } else { scales[l][r] };
            let prop: f64 = rowq.iter().zip(&e).map(|(q, ei)| q.abs() * ei).sum();
            let rounding: f64 = row
                .iter()
                .zip(&a)
                .filter(|(wi, _)| **wi != 0.0)
                .map(|(_, xi)| 0.5 * s * xi.abs())
                .sum();
            next_e.push(prop + rounding);
            let y = row.iter().zip(&a).map(|(wi, xi)| wi * xi).sum::<f64>() + float.biases[l][r];
            next_a.push(if l == last { y } else { y.max(0.0) });
        }
        e = next_e;
        a = next_a;
    }
    e
}

/// Every grid value of the cubic ramp against `s_f * (1 - (1 - k/n)^3)`,
/// endpoints exactly, and monotonicity over every step of the window.
pub fn check_schedule(cfg: &sqrl::prune::ScheduleConfig) -> Result<(), String> {
    let n = cfg.events as f64;
    let mut prev = -1.0;
    for k in 0..=cfg.events {
        let t = cfg.start_step + k as u64 * cfg.interval;
        let got = cfg.sparsity_at(t).map_err(|e| e.to_string())?;
        let frac = 1.0 - k as f64 / n;
        let want = cfg.final_sparsity * (1.0 - frac * frac * frac);
        if (got - want).abs() > 1e-12 {
            return Err(format!("k={k}: {got} vs {want}"));
        }
        if got < prev {
            return Err(format!("not monotone at k={k}"));
        }
        prev = got;
    }
    if cfg.sparsity_at(cfg.start_step).unwrap() != 0.0 {
        return Err("start value is not exactly 0".into());
    }
    if cfg.sparsity_at(cfg.end_step()).unwrap() != cfg.final_sparsity {
        return Err("end value is not exactly s_f".into());
    }
    let span = cfg.end_step() - cfg.start_step;
    let stride = (span / 997).max(1);
    let mut prev = 0.0;
    let mut t = cfg.start_step;
    while t <= cfg.end_step() {
        let s = cfg.sparsity_at(t).unwrap();
        if s < prev {
            return Err(format!("decreases at step {t}"));
        }
        prev = s;
        t += stride;
    }
    if cfg.sparsity_at(cfg.end_step() + 1).is_ok() || (cfg.start_step > 0 && cfg.sparsity_at(cfg.start_step - 1).is_ok()) {
        return Err("steps outside the window are accepted".into());
    }
    Ok(())
}

/// Groups weights the way `strategy` allocates them: one group for Global,
/// one per layer otherwise. Returns per-group target fractions.
fn groups(strategy: sqrl::prune::DistributionStrategy, shapes: &[(usize, usize)], target: f64) -> Option<Vec<f64>> {
    match sqrl::prune::allocate_sparsity(strategy, shapes, target).unwrap() {
        sqrl::prune::Allocation::Global(_) => None,
        sqrl::prune::Allocation::PerLayer(v) => Some(v),
    }
}

/// Random net, random increasing targets, weights perturbed between events.
/// Checks nesting, magnitude order within each allocation group, and the
/// per-group zero count against `floor(s * count)` within one weight.
pub fn check_prune_sequence(seed: u64, strategy: sqrl::prune::DistributionStrategy) -> Result<(), String> {
    use sqrl::prune::{prune_step, DistributionStrategy};
    let mut rng = rng(1_000_000 + seed);
    let layers = rng.random_range(1..=4);
    let mut dims = vec![rng.random_range(1..=12)];
    for _ in 0..layers {
        dims.push(rng.random_range(1..=12));
    }
    let shapes: Vec<(usize, usize)> = dims.windows(2).map(|w| (w[1], w[0])).collect();
    let mut weights: Vec<Tensor> = shapes
        .iter()
        .map(|&(o, i)| Tensor::from_vec(&[o, i], random_vec(o * i, &mut rng)).unwrap())
        .collect();
    let mut mask = PruningMask::dense(&shapes);
    let steps = rng.random_range(1..=6);
    let mut target = 0.0;
    for step in 0..steps {
        target = (target + rng.random_range(0.0..0.4f64)).min(0.99);
        let refs: Vec<&Tensor> = weights.iter().collect();
        let next = prune_step(&refs, &mask, target, strategy).map_err(|e| e.to_string())?;
        if !mask.is_nested_in(&next) {
            return Err(format!("seed {seed} step {step}: mask not nested"));
        }
        let alloc = groups(strategy, &shapes, target);
        let group_of = |l: usize| if alloc.is_some() { l } else { 0 };
        let n_groups = if alloc.is_some() { shapes.len() } else { 1 };
        for g in 0..n_groups {
            let mut newly = f32::NEG_INFINITY;
            let mut kept = f32::INFINITY;
            for (l, w) in weights.iter().enumerate().filter(|(l, _)| group_of(*l) == g) {
                for (i, v) in w.data().iter().enumerate() {
                    let (before, after) = (mask.layer(l).bits()[i], next.layer(l).bits()[i]);
                    if before && !after {
                        newly = newly.max(v.abs());
                    } else if after {
                        kept = kept.min(v.abs());
                    }
                }
            }
            if newly > kept {
                return Err(format!("seed {seed} step {step}: pruned |w|={newly} above kept |w|={kept}"));
            }
        }
        match &alloc {
            None => {
                let total = next.weight_count() as f64;
                let want = (target * total + 1e-9).floor();
                if (next.zeros() as f64 - want.max(mask.zeros() as f64)).abs() > 1.0 {
                    return Err(format!("seed {seed}: {} zeros, want {want}", next.zeros()));
                }
            }
            Some(per) => {
                for (l, s) in per.iter().enumerate() {
                    let count = next.layer(l).len() as f64;
                    let want = (s * count + 1e-9).floor();
                    let got = next.layer(l).zeros() as f64;
                    // a layer already past its share (after an earlier, larger
                    // allocation) keeps its zeros
                    let earlier = mask.layer(l).zeros() as f64;
                    if (got - want.max(earlier)).abs() > 1.0 {
                        return Err(format!("seed {seed} layer {l}: {got} zeros, want {want}"));
                    }
                }
            }
        }
        if strategy == DistributionStrategy::Global {
            let w: Vec<Vec<f32>> = weights.iter().map(|t| t.data().to_vec()).collect();
            if brute_force_global(&w, &mask_bits(&mask), target) != mask_bits(&next) {
                return Err(format!("seed {seed} step {step}: global mask differs from the sort oracle"));
            }
        }
        mask = next;
        // training moves surviving weights; pruned ones stay zero
        for (w, m) in weights.iter_mut().zip(mask.layers()) {
            for (v, keep) in w.data_mut().iter_mut().zip(m.bits()) {
                *v = if *keep { *v + rng.random_range(-0.3f32..0.3) } else { 0.0 };
            }
        }
    }
    Ok(())
}

/// All 255 codes at `n_scales` log-uniform random scales: the exact grid
/// point maps to its own code, and points inside each bin come back within
/// `scale / 2`. Zero always maps to code 0.
pub fn check_quant_codes(n_scales: usize, seed: u64) -> Result<(), String> {
    use sqrl::quant::{dequantize_value, quantize_value};
    let mut rng = rng(2_000_000 + seed);
    for _ in 0..n_scales {
        let s: f32 = 10f32.powf(rng.random_range(-6.0..3.0));
        if quantize_value(0.0, s) != 0 || quantize_value(-0.0, s) != 0 {
            return Err(format!("zero not preserved at scale {s}"));
        }
        for c in -127i32..=127 {
            let grid = c as f32 * s;
            if quantize_value(grid, s) as i32 != c {
                return Err(format!("grid point {c} at scale {s} maps to {}", quantize_value(grid, s)));
            }
            let off: f64 = rng.random_range(-0.499..0.499);
            let w = ((c as f64 + off) * s as f64) as f32;
            let clipped = (w as f64).clamp(-127.0 * s as f64, 127.0 * s as f64);
            let back = dequantize_value(quantize_value(w, s), s) as f64;
            // half a bin plus float rounding of w / s
            if (back - clipped).abs() > 0.5 * s as f64 * (1.0 + 1e-5) {
                return Err(format!("code {c}, scale {s}: {w} -> {back}"));
            }
        }
    }
    Ok(())
}

/// Fake quantization keeps zeros, is idempotent bit for bit, and its STE
/// gradient equals the derivative (by central differences) of the
/// straight-through surrogate `clip(w, +-127.5 s)` under fixed parameters.
pub fn check_fake_quant(seed: u64) -> Result<(), String> {
    use sqrl::quant::{calibrate, fake_quant_backward, fake_quant_forward, QuantParams};
    let mut rng = rng(3_000_000 + seed);
    let rows = rng.random_range(1..=8);
    let cols = rng.random_range(1..=8);
    let mag = 10f32.powf(rng.random_range(-4.0..2.0));
    let data: Vec<f32> = (0..rows * cols)
        .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(-1.0f32..1.0) * mag })
        .collect();
    let w = Tensor::from_vec(&[rows, cols], data).unwrap();
    for g in [Granularity::Layerwise, Granularity::Channelwise] {
        let once = fake_quant_forward(&w, g).unwrap();
        for (a, b) in w.data().iter().zip(once.data()) {
            if *a == 0.0 && *b != 0.0 {
                return Err(format!("zero became {b}"));
            }
        }
        if fake_quant_forward(&once, g).unwrap() != once {
            return Err(format!("{g:?} fake quantization is not idempotent"));
        }
        // stale calibration: scales from a shrunken copy, so some weights clip
        let k = rng.random_range(0.3f32..1.0);
        let shrink = w.map(|v| v * k);
        let params: QuantParams = calibrate(&shrink, g).unwrap();
        let upstream: Vec<f32> = random_vec(rows * cols, &mut rng);
        let ste = fake_quant_backward(&w, &params, &Tensor::from_vec(&[rows, cols], upstream.clone()).unwrap()).unwrap();
        for (i, (wi, gi)) in w.data().iter().zip(&upstream).enumerate() {
            let s = params.scale_for_row(i / cols) as f64;
            let lim = 127.5 * s;
            let surrogate = |x: f64| x.clamp(-lim, lim) * *gi as f64;
            let x = *wi as f64;
            if (x.abs() - lim).abs() < 1e-3 * s {
                continue; // on the kink
            }
            let h = 1e-4 * s;
            let fd = (surrogate(x + h) - surrogate(x - h)) / (2.0 * h);
            if (ste.data()[i] as f64 - fd).abs() > 1e-6 * (1.0 + fd.abs()) {
                return Err(format!("{g:?} STE entry {i}: {} vs {fd}", ste.data()[i]));
            }
        }
    }
    Ok(())
}

/// Export `net` pruned to `sparsity` (LocalUniform, one shot) and compare the
/// artifact with the training-time forward on `n_inputs` random inputs.
///
/// Float artifacts must agree with the masked float forward within `1e-5`
/// relative. Int8 artifacts must agree with the fake-quantized forward within
/// `1e-5` relative and stay inside the propagated rounding bound of the
/// float forward. Returns the exported model.
pub fn check_export(
    net: &Mlp,
    sparsity: f64,
    quant: Option<Granularity>,
    layout: sqrl::sparse::Layout,
    n_inputs: usize,
    seed: u64,
) -> Result<sqrl::sparse::CompressedModel, String> {
    use sqrl::prune::{prune_step, DistributionStrategy};
    use sqrl::quant::calibrate;
    use sqrl::sparse::{export, CompressedModel, ExportOptions};
    let mut rng = rng(4_000_000 + seed);
    let weights: Vec<&Tensor> = net.layers.iter().map(|l| &l.weight).collect();
    let mask = prune_step(&weights, &PruningMask::for_network(net), sparsity, DistributionStrategy::LocalUniform)
        .map_err(|e| e.to_string())?;
    let mut masked = net.clone();
    mask.apply(&mut masked).unwrap();
    let bounds = matches!(net.spec.output_head, OutputHead::TanhGaussian).then_some((-2.0, 2.0));
    let opts = ExportOptions {
        quant,
        layout,
        action_bounds: bounds,
        config_hash: [7; 32],
    };
    let model = export(net, Some(&mask), &opts).map_err(|e| e.to_string())?;
    let bytes = model.to_bytes();
    if bytes.len() != model.analytic_size() {
        return Err(format!("{} bytes written, {} predicted", bytes.len(), model.analytic_size()));
    }
    let parsed = CompressedModel::from_bytes(&bytes).map_err(|e| e.to_string())?;
    if parsed.to_bytes() != bytes {
        return Err("re-serialization is not byte-identical".into());
    }
    let kept = masked.layers.iter().map(|l| l.weight.count_nonzero()).sum::<usize>();
    if parsed.kept_weights() < kept {
        return Err(format!("artifact keeps {} weights, mask keeps {kept}", parsed.kept_weights()));
    }
    let float64 = Net64::from_mlp(&masked);
    let scales: Vec<Vec<f64>> = match quant {
        Some(g) => masked
            .layers
            .iter()
            .map(|l| {
                let p = calibrate(&l.weight, g).unwrap();
                (0..l.weight.rows()).map(|r| p.scale_for_row(r) as f64).collect()
            })
            .collect(),
        None => Vec::new(),
    };
    let snapped64 = quant.map(|g| Net64::snapped(&masked, g));
    for i in 0..n_inputs {
        let x = random_vec(net.spec.input_dim, &mut rng);
        let got = parsed.infer(&x).map_err(|e| e.to_string())?;
        let train = masked.predict(&Tensor::vector(x.clone()), quant).unwrap();
        for (o, (a, b)) in got.iter().zip(train.data()).enumerate() {
            if (a - b).abs() as f64 > 1e-5 * (b.abs() as f64).max(1.0) {
                return Err(format!("input {i} output {o}: artifact {a} vs training forward {b}"));
            }
        }
        if let Some(snapped) = &snapped64 {
            let x64: Vec<f64> = x.iter().map(|v| *v as f64).collect();
            let exact = float64.forward(&x64);
            let bound = int8_error_bound(&float64, snapped, &scales, &x64);
            for (o, ((a, e), b)) in got.iter().zip(&exact).zip(&bound).enumerate() {
                if (*a as f64 - e).abs() > b + 1e-5 * e.abs().max(1.0) {
                    return Err(format!("input {i} output {o}: int8 {a} vs float {e}, bound {b}"));
                }
            }
        }
    }
    Ok(parsed)
}

/// Feeds `n` mutated copies of `seeds` to the parser. Nothing may panic;
/// whatever parses must validate, re-serialize canonically and run.
pub fn fuzz_parser(seeds: &[Vec<u8>], n: usize, seed: u64) -> Result<usize, String> {
    use sqrl::sparse::CompressedModel;
    let mut rng = rng(5_000_000 + seed);
    let mut accepted = 0;
    for i in 0..n {
        let mut b = seeds[i % seeds.len()].clone();
        match rng.random_range(0..6) {
            0 => {
                for _ in 0..rng.random_range(1..=8) {
                    let at = rng.random_range(0..b.len());
                    b[at] ^= 1 << rng.random_range(0..8);
                }
            }
            1 => {
                let at = rng.random_range(0..b.len());
                b[at] = rng.random();
            }
            2 => b.truncate(rng.random_range(0..b.len())),
            3 => {
                let at = rng.random_range(0..=b.len());
                let extra: Vec<u8> = (0..rng.random_range(1..16)).map(|_| rng.random()).collect();
                b.splice(at..at, extra);
            }
            4 => {
                // plausible header, random body
                let keep = rng.random_range(0..b.len().min(64));
                for v in &mut b[keep..] {
                    *v = rng.random();
                }
            }
            _ => {
                // large counts in a u32 field
                let at = rng.random_range(0..b.len().saturating_sub(4).max(1));
                let v: u32 = if rng.random_bool(0.5) { u32::MAX - rng.random_range(0..4) } else { rng.random_range(0..70_000) };
                let end = (at + 4).min(b.len());
                b[at..end].copy_from_slice(&v.to_le_bytes()[..end - at]);
            }
        }
        let outcome = std::panic::catch_unwind(|| match CompressedModel::from_bytes(&b) {
            Ok(m) => {
                m.validate().map_err(|e| format!("accepted model fails validation: {e}"))?;
                if m.to_bytes() != b {
                    return Err("accepted input is not canonical".to_string());
                }
                let x = vec![0.5f32; m.input_dim];
                let _ = m.infer(&x);
                Ok(true)
            }
            Err(_) => Ok(false),
        });
        match outcome {
            Ok(Ok(true)) => accepted += 1,
            Ok(Ok(false)) => {}
            Ok(Err(e)) => return Err(format!("mutation {i}: {e}")),
            Err(_) => return Err(format!("mutation {i}: parser panicked")),
        }
    }
    Ok(accepted)
}

/// Checks one random net; returns false if the sample sat too close to a
/// ReLU kink for finite differences to be meaningful.
pub fn check_gradients(seed: u64, quant: Option<Granularity>) -> Result<bool, String> {
    let mut rng = rng(seed);
    let depth = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(1..=5)];
    for _ in 0..depth {
        dims.push(rng.random_range(2..=7));
    }
    dims.push(rng.random_range(1..=3));
    let net = random_mlp(&dims, OutputHead::Identity, &mut rng);
    let batch = rng.random_range(1..=4);
    let x: Vec<f32> = random_vec(batch * dims[0], &mut rng);
    let c: Vec<f32> = random_vec(batch * dims[dims.len() - 1], &mut rng);

    let xs: Vec<Vec<f64>> = x.chunks(dims[0]).map(|r| r.iter().map(|v| *v as f64).collect()).collect();
    let cs: Vec<Vec<f64>> = c.chunks(*dims.last().unwrap()).map(|r| r.iter().map(|v| *v as f64).collect()).collect();
    // with fake-quant the STE gradient is the float gradient at the snapped weights
    let oracle = match quant {
        Some(g) => Net64::snapped(&net, g),
        None => Net64::from_mlp(&net),
    };
    let h = 1e-6;
    if oracle.min_kink_distance(&xs) < 1e3 * h {
        return Ok(false);
    }

    let input = Tensor::from_vec(&[batch, dims[0]], x).unwrap();
    let (_, cache) = net.forward_with(&input, quant).unwrap();
    let upstream = Tensor::from_vec(&[batch, *dims.last().unwrap()], c).unwrap();
    let grads = net.backward(&cache, &upstream).unwrap();

    // f32 backprop error tracks the largest terms anywhere in the net, so
    // near-zero entries are judged against the net-wide gradient scale
    let fd = oracle.fd_gradients(&xs, &cs, h);
    let fx: Vec<f64> = oracle.fd_input_gradient(&xs, &cs, h).into_iter().flatten().collect();
    let scale = fd
        .iter()
        .flat_map(|(w, b)| w.iter().chain(b))
        .chain(&fx)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for (l, (g, (fw, fb))) in grads.layers.iter().zip(&fd).enumerate() {
        rel_close_scaled(g.weight.data(), fw, 1e-4, scale).map_err(|e| format!("seed {seed} layer {l} weight: {e}"))?;
        rel_close_scaled(g.bias.data(), fb, 1e-4, scale).map_err(|e| format!("seed {seed} layer {l} bias: {e}"))?;
    }
    rel_close_scaled(grads.input.data(), &fx, 1e-4, scale).map_err(|e| format!("seed {seed} input: {e}"))?;
    Ok(true)
}

/// One-shot Global pruning of a random net with at most 54 weights against
/// the brute-force sort oracle.
pub fn check_global_oracle(seed: u64) -> Result<(), String> {
    use sqrl::prune::{prune_step, DistributionStrategy};
    let mut rng = rng(6_000_000 + seed);
    let a = rng.random_range(1..=6);
    let b = rng.random_range(1..=6);
    let c = rng.random_range(1..=3);
    let shapes = [(b, a), (c, b)];
    let w: Vec<Tensor> = shapes
        .iter()
        .map(|&(o, i)| Tensor::from_vec(&[o, i], random_vec(o * i, &mut rng)).unwrap())
        .collect();
    let target = rng.random_range(0.0..0.99);
    let dense = PruningMask::dense(&shapes);
    let got = prune_step(&[&w[0], &w[1]], &dense, target, DistributionStrategy::Global).map_err(|e| e.to_string())?;
    let data: Vec<Vec<f32>> = w.iter().map(|t| t.data().to_vec()).collect();
    if mask_bits(&got) != brute_force_global(&data, &mask_bits(&dense), target) {
        return Err(format!("seed {seed}: mask differs from the sort oracle at target {target}"));
    }
    Ok(())
}
