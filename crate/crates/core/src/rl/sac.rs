//! Soft actor-critic with twin critics, Polyak-averaged targets and an
//! automatically tuned entropy temperature.
//!
//! The actor works in normalized `[-1, 1]` actions; [`SacAgent::act`] rescales
//! to the environment's bounds. Only the actor is pruned or quantized.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, adam_step, AdamConfig, AdamState, ForwardCache, Gradients, HeadSample, Mlp, MlpAdam, MlpSpec, OutputHead};
use crate::prune::PruningMask;
use crate::quant::Granularity;
use crate::rl::replay::Batch;
use crate::rl::soft_update;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    #[serde(serialize_with = "crate::rl::short_f32")]
    pub learning_rate: f32,
    #[serde(serialize_with = "crate::rl::short_f32")]
    pub weight_decay: f32,
    #[serde(serialize_with = "crate::rl::short_f32")]
    pub gamma: f32,
    #[serde(serialize_with = "crate::rl::short_f32")]
    pub tau: f32,
    pub buffer_size: usize,
    pub batch_size: usize,
    /// Environment steps of uniform-random acting before updates begin.
    pub learning_starts: u64,
    pub train_freq: u64,
    pub gradient_steps: u32,
    pub target_update_interval: u64,
    #[serde(serialize_with = "crate::rl::short_f32")]
    pub initial_alpha: f32,
    /// When false, alpha stays at `initial_alpha`.
    pub auto_alpha: bool,
    /// Defaults to `-action_dim`.
    #[serde(serialize_with = "crate::rl::short_f32_opt")]
    pub target_entropy: Option<f32>,
}

impl SacConfig {
    /// MuJoCo-scale values of the reference SAC setup.
    pub fn reference() -> Self {
        Self {
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
            learning_rate: 3e-4,
            weight_decay: 1e-4,
            gamma: 0.99,
            tau: 0.005,
            buffer_size: 1_000_000,
            batch_size: 256,
            learning_starts: 1_000,
            train_freq: 1,
            gradient_steps: 1,
            target_update_interval: 1,
            initial_alpha: 1.0,
            auto_alpha: true,
            target_entropy: None,
        }
    }

    /// Pendulum-scale defaults.
    pub fn desk() -> Self {
        Self {
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            learning_rate: 1e-3,
            batch_size: 128,
            buffer_size: 100_000,
            ..Self::reference()
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self, errs: &mut Vec<String>) {
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            errs.push("sac hidden widths must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            errs.push("sac.learning_rate must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            errs.push("sac.gamma must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            errs.push("sac.tau must be in [0, 1]".into());
        }
        if self.batch_size == 0 || self.buffer_size < self.batch_size {
            errs.push("sac.batch_size must be >= 1 and <= buffer_size".into());
        }
        if self.train_freq == 0 || self.target_update_interval == 0 {
            errs.push("sac.train_freq and sac.target_update_interval must be >= 1".into());
        }
        if !(self.initial_alpha >= 0.0) || (self.auto_alpha && self.initial_alpha == 0.0) {
            errs.push("sac.initial_alpha must be >= 0 (and > 0 when auto-tuned)".into());
        }
    }
}

impl Default for SacConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Standard-normal noise for one update: `[batch * action_dim]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct SacNoise {
    pub current: Vec<f32>,
    pub next: Vec<f32>,
}

impl SacNoise {
    pub fn draw(batch: usize, action_dim: usize, rng: &mut impl Rng) -> Self {
        let mut gen = |n| (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect::<Vec<f32>>();
        let current = gen(batch * action_dim);
        let next = gen(batch * action_dim);
        Self { current, next }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacLosses {
    pub actor: f32,
    pub critic: f32,
    pub alpha: f32,
    /// Temperature used by this update (before its own alpha step).
    pub alpha_value: f32,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub config: SacConfig,
    pub actor: Mlp,
    pub critics: [Mlp; 2],
    pub targets: [Mlp; 2],
    actor_opt: MlpAdam,
    critic_opts: [MlpAdam; 2],
    log_alpha: Tensor,
    alpha_opt: AdamState,
    pub target_entropy: f32,
    pub action_low: f32,
    pub action_high: f32,
    /// Actor pruning mask.
    pub mask: Option<PruningMask>,
    /// Actor fake-quantization while QAT is active.
    pub quant: Option<Granularity>,
    updates: u64,
}

/// Row-wise `[state | action]`.
pub fn critic_input(states: &Tensor, actions: &[f32]) -> Result<Tensor> {
    let b = states.rows();
    let o = states.last_dim();
    if b == 0 || actions.len() % b != 0 {
        return Err(Error::Dimension("critic input: action rows do not match states".into()));
    }
    let a = actions.len() / b;
    let mut data = Vec::with_capacity(b * (o + a));
    for r in 0..b {
        data.extend_from_slice(states.row(r));
        data.extend_from_slice(&actions[r * a..(r + 1) * a]);
    }
    Tensor::from_vec(&[b, o + a], data)
}

fn mean(v: impl Iterator<Item = f32>, n: usize) -> f32 {
    v.sum::<f32>() / n as f32
}

impl SacAgent {
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        bounds: (f32, f32),
        config: SacConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let actor = Mlp::new(
            MlpSpec::new(obs_dim, &config.actor_hidden, action_dim).with_head(OutputHead::TanhGaussian),
            rng,
        )?;
        let cspec = MlpSpec::new(obs_dim + action_dim, &config.critic_hidden, 1);
        let critics = [Mlp::new(cspec.clone(), rng)?, Mlp::new(cspec, rng)?];
        Self::from_networks(actor, critics, bounds, config)
    }

    pub fn from_networks(actor: Mlp, critics: [Mlp; 2], bounds: (f32, f32), config: SacConfig) -> Result<Self> {
        if actor.spec.output_head != OutputHead::TanhGaussian {
            return Err(Error::Dimension("SAC actor needs a TanhGaussian head".into()));
        }
        let action_dim = actor.spec.output_dim;
        for c in &critics {
            if c.spec.input_dim != actor.spec.input_dim + action_dim || c.spec.output_dim != 1 {
                return Err(Error::Dimension("critic must map [state | action] to one value".into()));
            }
        }
        if !(bounds.0 < bounds.1) {
            return Err(Error::Dimension(format!("invalid action bounds {bounds:?}")));
        }
        let adam = config.adam();
        let alpha_cfg = AdamConfig {
            weight_decay: 0.0,
            ..adam
        };
        Ok(Self {
            actor_opt: MlpAdam::new(&actor, adam),
            critic_opts: [MlpAdam::new(&critics[0], adam), MlpAdam::new(&critics[1], adam)],
            targets: critics.clone(),
            critics,
            actor,
            log_alpha: Tensor::vector(vec![config.initial_alpha.ln()]),
            alpha_opt: AdamState::new(&[1], alpha_cfg),
            target_entropy: config.target_entropy.unwrap_or(-(action_dim as f32)),
            action_low: bounds.0,
            action_high: bounds.1,
            config,
            mask: None,
            quant: None,
            updates: 0,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.actor.spec.output_dim
    }

    pub fn alpha(&self) -> f32 {
        self.log_alpha.data()[0].exp()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Maps `[-1, 1]` to the environment's bounds.
    pub fn scale_action(&self, normalized: &[f32]) -> Vec<f32> {
        crate::envs::scale_action(normalized, self.action_low, self.action_high)
    }

    /// Inverse of [`scale_action`](Self::scale_action).
    pub fn normalize_action(&self, action: &[f32]) -> Vec<f32> {
        let half = 0.5 * (self.action_high - self.action_low);
        action
            .iter()
            .map(|a| ((a - self.action_low) / half - 1.0).clamp(-1.0, 1.0))
            .collect()
    }

    /// Normalized action: `tanh(mean)` when deterministic, a reparameterized
    /// sample otherwise.
    pub fn act_normalized(&self, state: &[f32], deterministic: bool, rng: &mut impl Rng) -> Result<Vec<f32>> {
        if state.len() != self.actor.spec.input_dim {
            return Err(Error::Dimension(format!(
                "state has {} entries, actor expects {}",
                state.len(),
                self.actor.spec.input_dim
            )));
        }
        let raw = self.actor.predict(&Tensor::vector(state.to_vec()), self.quant)?;
        if deterministic {
            return Ok(nn::deterministic_action(raw.data()));
        }
        let eps: Vec<f32> = (0..self.action_dim()).map(|_| rng.sample(StandardNormal)).collect();
        Ok(nn::sample(raw.data(), &eps).action)
    }

    /// Action in environment units.
    pub fn act(&self, state: &[f32], deterministic: bool, rng: &mut impl Rng) -> Result<Vec<f32>> {
        Ok(self.scale_action(&self.act_normalized(state, deterministic, rng)?))
    }

    fn policy_samples(raw: &Tensor, noise: &[f32], d: usize) -> Vec<HeadSample> {
        (0..raw.rows())
            .map(|b| nn::sample(raw.row(b), &noise[b * d..(b + 1) * d]))
            .collect()
    }

    /// Soft Bellman targets
    /// `r + gamma * (1 - done) * (min_i Q'_i(s', a') - alpha * log pi(a' | s'))`.
    pub fn critic_targets(&self, batch: &Batch, next_noise: &[f32], alpha: f32) -> Result<Vec<f32>> {
        let d = self.action_dim();
        let raw = self.actor.predict(&batch.next_states, self.quant)?;
        let samples = Self::policy_samples(&raw, next_noise, d);
        let next_actions: Vec<f32> = samples.iter().flat_map(|s| s.action.iter().copied()).collect();
        let x = critic_input(&batch.next_states, &next_actions)?;
        let q0 = self.targets[0].predict(&x, None)?;
        let q1 = self.targets[1].predict(&x, None)?;
        Ok((0..batch.len())
            .map(|b| {
                let soft = q0.data()[b].min(q1.data()[b]) - alpha * samples[b].log_prob;
                batch.rewards[b] + self.config.gamma * (1.0 - batch.dones[b]) * soft
            })
            .collect())
    }

    /// `mean(alpha * log pi(a|s) - min_i Q_i(s, a))` with `a` drawn from
    /// `noise`, plus its gradient with respect to the actor parameters.
    pub fn actor_objective(&self, states: &Tensor, noise: &[f32], alpha: f32) -> Result<(f32, Gradients)> {
        let (raw, cache) = self.actor.forward_with(states, self.quant)?;
        let samples = Self::policy_samples(&raw, noise, self.action_dim());
        self.actor_objective_from(states, &samples, &cache, alpha)
    }

    fn actor_objective_from(
        &self,
        states: &Tensor,
        samples: &[HeadSample],
        cache: &ForwardCache,
        alpha: f32,
    ) -> Result<(f32, Gradients)> {
        let n = samples.len();
        let d = self.action_dim();
        let obs = states.last_dim();
        let actions: Vec<f32> = samples.iter().flat_map(|s| s.action.iter().copied()).collect();
        let x = critic_input(states, &actions)?;
        let (q0, c0) = self.critics[0].forward(&x)?;
        let (q1, c1) = self.critics[1].forward(&x)?;
        let mut up0 = Tensor::zeros(&[n, 1]);
        let mut up1 = Tensor::zeros(&[n, 1]);
        let mut loss = 0.0f32;
        for b in 0..n {
            let (a, c) = (q0.data()[b], q1.data()[b]);
            let qmin = if c < a {
                up1.data_mut()[b] = -1.0 / n as f32;
                c
            } else {
                up0.data_mut()[b] = -1.0 / n as f32;
                a
            };
            loss += alpha * samples[b].log_prob - qmin;
        }
        loss /= n as f32;
        let g0 = self.critics[0].input_gradient(&c0, &up0)?;
        let g1 = self.critics[1].input_gradient(&c1, &up1)?;
        let mut upstream = Tensor::zeros(&[n, 2 * d]);
        for b in 0..n {
            let da: Vec<f32> = (0..d)
                .map(|j| g0.row(b)[obs + j] + g1.row(b)[obs + j])
                .collect();
            let g = nn::gaussian::backward(&samples[b], &da, alpha / n as f32);
            upstream.row_mut(b).copy_from_slice(&g);
        }
        let grads = self.actor.backward(cache, &upstream)?;
        Ok((loss, grads))
    }

    pub fn update(&mut self, batch: &Batch, rng: &mut impl Rng) -> Result<SacLosses> {
        let noise = SacNoise::draw(batch.len(), self.action_dim(), rng);
        self.update_with_noise(batch, &noise)
    }

    /// One SAC step: temperature, then critics, then actor against the
    /// freshly updated critics, then target averaging.
    pub fn update_with_noise(&mut self, batch: &Batch, noise: &SacNoise) -> Result<SacLosses> {
        let n = batch.len();
        let d = self.action_dim();
        if n == 0 || batch.action_dim() != d || noise.current.len() != n * d || noise.next.len() != n * d {
            return Err(Error::Dimension("SAC batch/noise do not match the action dimension".into()));
        }
        let check = |what: &str, v: f32, updates: u64| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Numeric(format!("SAC {what} loss is {v} after {updates} updates")))
            }
        };

        let (raw, actor_cache) = self.actor.forward_with(&batch.states, self.quant)?;
        let samples = Self::policy_samples(&raw, &noise.current, d);
        let alpha = self.alpha();
        let mut alpha_loss = 0.0;
        if self.config.auto_alpha {
            let mean_gap = mean(samples.iter().map(|s| s.log_prob + self.target_entropy), n);
            alpha_loss = check("alpha", -self.log_alpha.data()[0] * mean_gap, self.updates)?;
            adam_step(&mut self.log_alpha, &Tensor::vector(vec![-mean_gap]), &mut self.alpha_opt)?;
        }

        let targets = self.critic_targets(batch, &noise.next, alpha)?;
        let x = critic_input(&batch.states, &batch.actions)?;
        let mut critic_loss = 0.0;
        for i in 0..2 {
            let (q, cache) = self.critics[i].forward(&x)?;
            let diff: Vec<f32> = q.data().iter().zip(&targets).map(|(q, y)| q - y).collect();
            critic_loss += 0.5 * mean(diff.iter().map(|e| e * e), n);
            let up = Tensor::from_vec(&[n, 1], diff.iter().map(|e| e / n as f32).collect())?;
            let grads = self.critics[i].backward(&cache, &up)?;
            self.critic_opts[i].step(&mut self.critics[i], &grads)?;
        }
        let critic_loss = check("critic", critic_loss, self.updates)?;

        let (actor_loss, grads) = self.actor_objective_from(&batch.states, &samples, &actor_cache, alpha)?;
        let actor_loss = check("actor", actor_loss, self.updates)?;
        self.actor_opt.step(&mut self.actor, &grads)?;
        if let Some(mask) = &self.mask {
            mask.apply(&mut self.actor)?;
        }

        self.updates += 1;
        if self.updates % self.config.target_update_interval == 0 {
            for i in 0..2 {
                soft_update(&mut self.targets[i], &self.critics[i], self.config.tau)?;
            }
        }
        Ok(SacLosses {
            actor: actor_loss,
            critic: critic_loss,
            alpha: alpha_loss,
            alpha_value: alpha,
        })
    }

    /// Installs an actor mask and zeroes the pruned weights right away.
    pub fn set_mask(&mut self, mask: PruningMask) -> Result<()> {
        mask.apply(&mut self.actor)?;
        self.mask = Some(mask);
        Ok(())
    }
}
