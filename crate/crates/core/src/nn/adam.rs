use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::mlp::{Gradients, Mlp};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    /// Decoupled: applied as `param *= 1 - lr * weight_decay` before the Adam delta.
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Tensor,
    pub v: Tensor,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(shape: &[usize], config: AdamConfig) -> Self {
        Self {
            step: 0,
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            config,
        }
    }
}

/// One Adam update of `param` in place.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState) -> Result<()> {
    if !param.same_shape(grad) || !param.same_shape(&state.m) || !param.same_shape(&state.v) {
        return Err(Error::Dimension(format!(
            "adam: param {:?}, grad {:?}, moments {:?}",
            param.shape(),
            grad.shape(),
            state.m.shape()
        )));
    }
    grad.ensure_finite("adam gradient")?;
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let decay = 1.0 - c.learning_rate * c.weight_decay;
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, g), mi), vi) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
        *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *p = *p * decay - c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
    }
    Ok(())
}

/// Adam over every weight and bias of an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpAdam {
    states: Vec<(AdamState, AdamState)>,
}

impl MlpAdam {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        let states = net
            .layers
            .iter()
            .map(|l| {
                (
                    AdamState::new(l.weight.shape(), config),
                    AdamState::new(l.bias.shape(), config),
                )
            })
            .collect();
        Self { states }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::Dimension("gradient/layer count mismatch".into()));
        }
        for ((layer, g), (sw, sb)) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.states) {
            adam_step(&mut layer.weight, &g.weight, sw)?;
            adam_step(&mut layer.bias, &g.bias, sb)?;
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.first().map_or(0, |s| s.0.step)
    }
}
