//! Built-in classic-control environments.

mod cartpole;
mod pendulum;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cartpole::{CartPole, CartPoleState};
pub use pendulum::{Pendulum, PendulumState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Box { dim: usize, low: f32, high: f32 },
}

impl ActionSpace {
    /// Number of network outputs needed to parameterize an action.
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(k) => *k,
            ActionSpace::Box { dim, .. } => *dim,
        }
    }
}

/// Maps actions in `[-1, 1]` onto `[low, high]`.
pub fn scale_action(normalized: &[f32], low: f32, high: f32) -> Vec<f32> {
    let half = 0.5 * (high - low);
    normalized
        .iter()
        .map(|a| (low + (a + 1.0) * half).clamp(low, high))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub observation_dim: usize,
    pub action_space: ActionSpace,
    pub max_episode_steps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f32>,
    pub reward: f32,
    /// Reached a failure/terminal state; do not bootstrap past it.
    pub terminated: bool,
    /// Hit the time limit; the state is not terminal.
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait Environment: Send {
    fn spec(&self) -> EnvSpec;

    /// Starts a new episode from the standard initial distribution.
    /// The same seed always yields the same initial state.
    fn reset(&mut self, seed: u64) -> Vec<f32>;

    fn step(&mut self, action: &Action) -> Result<Step>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    #[serde(alias = "CartPole-v1")]
    Cartpole,
    #[serde(alias = "Pendulum-v1")]
    Pendulum,
}

impl EnvId {
    pub fn make(self) -> Box<dyn Environment> {
        match self {
            EnvId::Cartpole => Box::new(CartPole::new()),
            EnvId::Pendulum => Box::new(Pendulum::new()),
        }
    }

    pub fn spec(self) -> EnvSpec {
        self.make().spec()
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvId::Cartpole => "cartpole",
            EnvId::Pendulum => "pendulum",
        })
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cartpole" | "cartpole-v1" => Ok(EnvId::Cartpole),
            "pendulum" | "pendulum-v1" => Ok(EnvId::Pendulum),
            other => Err(Error::Config(vec![format!("unknown environment '{other}'")])),
        }
    }
}

/// Tracks episode progress shared by both environments.
#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeClock {
    pub steps: u32,
    pub active: bool,
}

impl EpisodeClock {
    pub fn start(&mut self) {
        self.steps = 0;
        self.active = true;
    }

    pub fn check_active(&self) -> Result<()> {
        if self.active {
            Ok(())
        } else {
            Err(Error::State(
                "step called on a finished or unreset episode".into(),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_ids_parse() {
        assert_eq!("CartPole-v1".parse::<EnvId>().unwrap(), EnvId::Cartpole);
        assert_eq!("pendulum".parse::<EnvId>().unwrap(), EnvId::Pendulum);
        assert!("pong".parse::<EnvId>().is_err());
    }
}
