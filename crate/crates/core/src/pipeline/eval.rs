use serde::{Deserialize, Serialize};

use crate::envs::{self, Action, EnvId};
use crate::error::{Error, Result};
use crate::nn::{self, Mlp, OutputHead};
use crate::quant::Granularity;
use crate::rl;
use crate::seed;
use crate::sparse::CompressedModel;
use crate::tensor::Tensor;

/// A deterministic policy.
pub trait Policy: Sync {
    fn act(&self, observation: &[f32]) -> Result<Action>;
}

impl Policy for CompressedModel {
    fn act(&self, observation: &[f32]) -> Result<Action> {
        CompressedModel::act(self, observation)
    }
}

/// In-memory network evaluated the way it trains (masked weights, optional
/// fake quantization).
pub struct MlpPolicy<'a> {
    pub net: &'a Mlp,
    pub quant: Option<Granularity>,
    /// Action bounds for a tanh-Gaussian head.
    pub bounds: Option<(f32, f32)>,
}

impl Policy for MlpPolicy<'_> {
    fn act(&self, observation: &[f32]) -> Result<Action> {
        let out = self.net.predict(&Tensor::vector(observation.to_vec()), self.quant)?;
        Ok(match self.net.spec.output_head {
            OutputHead::Identity => Action::Discrete(rl::argmax(out.data())),
            OutputHead::TanhGaussian => {
                let (lo, hi) = self.bounds.unwrap_or((-1.0, 1.0));
                Action::Continuous(envs::scale_action(&nn::deterministic_action(out.data()), lo, hi))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean_return: f64,
    /// Population standard deviation.
    pub std_return: f64,
    pub returns: Vec<f64>,
}

impl EvalStats {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean_return: mean,
            std_return: var.sqrt(),
            returns,
        }
    }
}

/// Episode `i` resets from `derive(seed, i)`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed::derive(seed, episode as u64)
}

pub fn run_episode(policy: &dyn Policy, env: EnvId, reset_seed: u64) -> Result<f64> {
    let mut e = env.make();
    let mut obs = e.reset(reset_seed);
    let mut ret = 0.0f64;
    loop {
        let step = e.step(&policy.act(&obs)?)?;
        ret += step.reward as f64;
        if step.done() {
            return Ok(ret);
        }
        obs = step.observation;
    }
}

/// Runs `episodes` deterministic episodes; they fan out over threads with
/// the `parallel` feature, results are identical either way.
pub fn evaluate(policy: &dyn Policy, env: EnvId, episodes: usize, seed: u64) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::Config(vec!["evaluation needs at least one episode".into()]));
    }
    let returns = crate::par::map((0..episodes).collect(), |i| {
        run_episode(policy, env, episode_seed(seed, i))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(EvalStats::from_returns(returns))
}
