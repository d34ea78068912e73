//! Off-policy agents: DQN for discrete actions, SAC for continuous ones.

pub mod dqn;
pub mod replay;
pub mod sac;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;

pub use dqn::{DqnAgent, DqnConfig};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use sac::{SacAgent, SacConfig, SacLosses, SacNoise};

/// Linear interpolation from `initial` to `end` over `duration` steps, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub initial: f32,
    pub end: f32,
    pub duration: u64,
}

impl LinearSchedule {
    pub fn value(&self, step: u64) -> f32 {
        if step >= self.duration {
            return self.end;
        }
        let frac = step as f64 / self.duration as f64;
        (self.initial as f64 + frac * (self.end as f64 - self.initial as f64)) as f32
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Polyak averaging: `target <- (1 - tau) * target + tau * online`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f32) -> Result<()> {
    if target.weight_shapes() != online.weight_shapes() {
        return Err(Error::Dimension("soft_update: networks differ in shape".into()));
    }
    if tau == 1.0 {
        target.layers.clone_from(&online.layers);
        return Ok(());
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        for (tv, ov) in t
            .weight
            .data_mut()
            .iter_mut()
            .chain(t.bias.data_mut().iter_mut())
            .zip(o.weight.data().iter().chain(o.bias.data()))
        {
            *tv = (1.0 - tau) * *tv + tau * ov;
        }
    }
    Ok(())
}

/// Writes an f32 config value by its shortest decimal form, so `1e-3` comes
/// out as `0.001` instead of the widened `0.0010000000474974513`.
pub(crate) fn short_f32<S: serde::Serializer>(v: &f32, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(v.to_string().parse().unwrap_or(*v as f64))
}

pub(crate) fn short_f32_opt<S: serde::Serializer>(v: &Option<f32>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_some(&x.to_string().parse::<f64>().unwrap_or(*x as f64)),
        None => s.serialize_none(),
    }
}
