//! Tanh-squashed diagonal Gaussian policy head.
//!
//! The network emits `[mean; log_std]` per row. An action is
//! `a = tanh(mean + exp(log_std) * eps)` with `eps ~ N(0, I)`, in `[-1, 1]`,
//! and its log-density includes the tanh change-of-variables correction.

pub const LOG_STD_MIN: f32 = -20.0;
pub const LOG_STD_MAX: f32 = 2.0;

const HALF_LN_2PI: f32 = 0.918_938_5;

#[inline]
fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 - tanh(u)^2)` computed without cancellation.
#[inline]
pub fn log_one_minus_tanh_sq(u: f32) -> f32 {
    2.0 * (std::f32::consts::LN_2 - u - softplus(-2.0 * u))
}

/// One reparameterized draw, with what its backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSample {
    pub action: Vec<f32>,
    pub log_prob: f32,
    eps: Vec<f32>,
    std: Vec<f32>,
    /// False where `log_std` was clamped (no gradient flows there).
    log_std_active: Vec<bool>,
}

/// Deterministic (evaluation) action: `tanh(mean)`.
pub fn deterministic_action(raw: &[f32]) -> Vec<f32> {
    let d = raw.len() / 2;
    raw[..d].iter().map(|m| m.tanh()).collect()
}

/// Draws `tanh(mean + std * eps)` for the given standard-normal noise.
pub fn sample(raw: &[f32], eps: &[f32]) -> HeadSample {
    let d = raw.len() / 2;
    debug_assert_eq!(eps.len(), d);
    let (mean, log_std) = raw.split_at(d);
    let mut action = Vec::with_capacity(d);
    let mut std = Vec::with_capacity(d);
    let mut active = Vec::with_capacity(d);
    let mut log_prob = 0.0f32;
    for i in 0..d {
        let ls = log_std[i].clamp(LOG_STD_MIN, LOG_STD_MAX);
        active.push((LOG_STD_MIN..=LOG_STD_MAX).contains(&log_std[i]));
        let s = ls.exp();
        let u = mean[i] + s * eps[i];
        log_prob += -0.5 * eps[i] * eps[i] - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u);
        action.push(u.tanh());
        std.push(s);
    }
    HeadSample {
        action,
        log_prob,
        eps: eps.to_vec(),
        std,
        log_std_active: active,
    }
}

/// Gradient with respect to the raw `[mean; log_std]` row, given
/// `dL/d(action)` and `dL/d(log_prob)`.
pub fn backward(sample: &HeadSample, d_action: &[f32], d_log_prob: f32) -> Vec<f32> {
    let d = sample.action.len();
    let mut out = vec![0.0f32; 2 * d];
    for i in 0..d {
        let a = sample.action[i];
        // d tanh(u)/du = 1 - a^2; d(-ln(1 - tanh^2 u))/du = 2a
        let du = d_action[i] * (1.0 - a) * (1.0 + a) + d_log_prob * 2.0 * a;
        out[i] = du;
        if sample.log_std_active[i] {
            out[d + i] = du * sample.std[i] * sample.eps[i] - d_log_prob;
        }
    }
    out
}
