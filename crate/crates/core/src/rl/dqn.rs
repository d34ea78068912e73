//! Deep Q-network with a hard-copied target network and epsilon-greedy
//! exploration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Mlp, MlpAdam, MlpSpec};
use crate::prune::PruningMask;
use crate::quant::Granularity;
use crate::rl::replay::Batch;
use crate::rl::{argmax, LinearSchedule};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    #[serde(serialize_with = "crate::rl::short_f32")]
    pub learning_rate: f32,
    #[serde(serialize_with = "crate::rl::short_f32")]
    pub adam_epsilon: f32,
    #[serde(serialize_with = "crate::rl::short_f32")]
    pub weight_decay: f32,
    #[serde(serialize_with = "crate::rl::short_f32")]
    pub gamma: f32,
    pub buffer_size: usize,
    pub batch_size: usize,
    /// Environment steps of uniform-random acting before updates begin.
    pub learning_starts: u64,
    pub train_freq: u64,
    pub gradient_steps: u32,
    pub target_update_interval: u64,
    pub exploration_fraction: f64,
    #[serde(serialize_with = "crate::rl::short_f32")]
    pub exploration_initial_eps: f32,
    #[serde(serialize_with = "crate::rl::short_f32")]
    pub exploration_final_eps: f32,
    #[serde(serialize_with = "crate::rl::short_f32")]
    pub max_grad_norm: f32,
}

impl DqnConfig {
    /// Atari-scale values of the reference DQN setup.
    pub fn reference() -> Self {
        Self {
            hidden: vec![512],
            learning_rate: 1e-4,
            adam_epsilon: 1e-8,
            weight_decay: 0.0,
            gamma: 0.99,
            buffer_size: 1_000_000,
            batch_size: 32,
            learning_starts: 20_000,
            train_freq: 4,
            gradient_steps: 1,
            target_update_interval: 8_000,
            exploration_fraction: 0.01,
            exploration_initial_eps: 1.0,
            exploration_final_eps: 0.01,
            max_grad_norm: 10.0,
        }
    }

    /// CartPole-scale defaults.
    pub fn desk() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 5e-4,
            adam_epsilon: 1e-8,
            weight_decay: 0.0,
            gamma: 0.98,
            buffer_size: 100_000,
            batch_size: 128,
            learning_starts: 1_000,
            train_freq: 4,
            gradient_steps: 1,
            target_update_interval: 500,
            exploration_fraction: 0.1,
            exploration_initial_eps: 1.0,
            exploration_final_eps: 0.02,
            max_grad_norm: 10.0,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            epsilon: self.adam_epsilon,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn exploration(&self, total_steps: u64) -> LinearSchedule {
        LinearSchedule {
            initial: self.exploration_initial_eps,
            end: self.exploration_final_eps,
            duration: (self.exploration_fraction * total_steps as f64).round() as u64,
        }
    }

    pub fn validate(&self, errs: &mut Vec<String>) {
        if self.hidden.contains(&0) {
            errs.push("dqn.hidden: widths must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            errs.push("dqn.learning_rate must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            errs.push("dqn.gamma must be in [0, 1]".into());
        }
        if self.batch_size == 0 || self.buffer_size < self.batch_size {
            errs.push("dqn.batch_size must be >= 1 and <= buffer_size".into());
        }
        if self.train_freq == 0 || self.target_update_interval == 0 {
            errs.push("dqn.train_freq and dqn.target_update_interval must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.exploration_fraction) {
            errs.push("dqn.exploration_fraction must be in [0, 1]".into());
        }
        for (name, v) in [
            ("exploration_initial_eps", self.exploration_initial_eps),
            ("exploration_final_eps", self.exploration_final_eps),
        ] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("dqn.{name} must be in [0, 1]"));
            }
        }
    }
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub config: DqnConfig,
    pub q: Mlp,
    pub target: Mlp,
    optimizer: MlpAdam,
    /// Pruning mask on the Q-network, once pruning has started.
    pub mask: Option<PruningMask>,
    /// Fake-quantization granularity while QAT is active.
    pub quant: Option<Granularity>,
    pub exploration: LinearSchedule,
    /// Environment steps seen so far; drives the epsilon schedule.
    pub env_steps: u64,
    n_actions: usize,
    updates: u64,
}

/// Huber (smooth-L1, delta = 1) loss and its derivative.
#[inline]
fn huber(diff: f32) -> (f32, f32) {
    if diff.abs() <= 1.0 {
        (0.5 * diff * diff, diff)
    } else {
        (diff.abs() - 0.5, diff.signum())
    }
}

impl DqnAgent {
    /// `total_steps` sets the length of the epsilon anneal.
    pub fn new(
        obs_dim: usize,
        n_actions: usize,
        config: DqnConfig,
        total_steps: u64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let q = Mlp::new(MlpSpec::new(obs_dim, &config.hidden, n_actions), rng)?;
        Ok(Self::from_network(q, config, total_steps))
    }

    pub fn from_network(q: Mlp, config: DqnConfig, total_steps: u64) -> Self {
        let optimizer = MlpAdam::new(&q, config.adam());
        Self {
            exploration: config.exploration(total_steps),
            env_steps: 0,
            n_actions: q.spec.output_dim,
            target: q.clone(),
            q,
            optimizer,
            config,
            mask: None,
            quant: None,
            updates: 0,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn q_values(&self, state: &[f32]) -> Result<Vec<f32>> {
        Ok(self
            .q
            .predict(&Tensor::vector(state.to_vec()), self.quant)?
            .into_data())
    }

    /// Greedy action.
    pub fn greedy(&self, state: &[f32]) -> Result<usize> {
        Ok(argmax(&self.q_values(state)?))
    }

    pub fn epsilon(&self) -> f32 {
        self.exploration.value(self.env_steps)
    }

    /// Epsilon-greedy under the annealed schedule when `explore`, greedy otherwise.
    pub fn act(&self, state: &[f32], explore: bool, rng: &mut impl Rng) -> Result<usize> {
        let eps = if explore { self.epsilon() } else { 0.0 };
        self.act_with_epsilon(state, eps, rng)
    }

    /// Uniform over actions with probability `epsilon`, greedy otherwise.
    pub fn act_with_epsilon(&self, state: &[f32], epsilon: f32, rng: &mut impl Rng) -> Result<usize> {
        if state.len() != self.q.spec.input_dim {
            return Err(Error::Dimension(format!(
                "state has {} entries, network expects {}",
                state.len(),
                self.q.spec.input_dim
            )));
        }
        if epsilon > 0.0 && rng.random::<f32>() < epsilon {
            Ok(rng.random_range(0..self.n_actions))
        } else {
            self.greedy(state)
        }
    }

    /// `r + gamma * (1 - done) * max_a' Q_target(s', a')`
    pub fn td_targets(&self, batch: &Batch) -> Result<Vec<f32>> {
        let next_q = self.target.predict(&batch.next_states, self.quant)?;
        Ok((0..batch.len())
            .map(|b| {
                let best = next_q.row(b).iter().copied().fold(f32::NEG_INFINITY, f32::max);
                batch.rewards[b] + self.config.gamma * (1.0 - batch.dones[b]) * best
            })
            .collect())
    }

    /// One gradient step on the Huber TD loss. Returns the loss.
    pub fn update(&mut self, batch: &Batch) -> Result<f32> {
        let n = batch.len();
        if n == 0 || batch.action_dim() != 1 {
            return Err(Error::Dimension("DQN batch needs one discrete action per row".into()));
        }
        let targets = self.td_targets(batch)?;
        let (q, cache) = self.q.forward_with(&batch.states, self.quant)?;
        let mut upstream = Tensor::zeros(&[n, self.n_actions]);
        let mut loss = 0.0f32;
        for b in 0..n {
            let a = batch.actions[b] as usize;
            if a >= self.n_actions {
                return Err(Error::Action(format!("stored action {a} out of range")));
            }
            let (l, g) = huber(q.row(b)[a] - targets[b]);
            loss += l;
            upstream.row_mut(b)[a] = g / n as f32;
        }
        loss /= n as f32;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "DQN loss is {loss} after {} updates",
                self.updates
            )));
        }
        let mut grads = self.q.backward(&cache, &upstream)?;
        grads.clip_global_norm(self.config.max_grad_norm);
        self.optimizer.step(&mut self.q, &grads)?;
        if let Some(mask) = &self.mask {
            mask.apply(&mut self.q)?;
        }
        self.updates += 1;
        Ok(loss)
    }

    /// Hard copy of the (masked) online network into the target.
    pub fn sync_target(&mut self) -> Result<()> {
        self.target = self.q.clone();
        if let Some(mask) = &self.mask {
            mask.apply(&mut self.target)?;
        }
        Ok(())
    }

    /// Installs a (grown) mask and zeroes the pruned weights right away.
    pub fn set_mask(&mut self, mask: PruningMask) -> Result<()> {
        mask.apply(&mut self.q)?;
        self.mask = Some(mask);
        Ok(())
    }
}
