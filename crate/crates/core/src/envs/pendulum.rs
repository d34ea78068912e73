//! Pendulum-v1: swing a torque-limited pendulum upright and hold it there.
//!
//! `theta = 0` is upright. Reward is
//! `-(angle_normalize(theta)^2 + 0.1 * theta_dot^2 + 0.001 * u^2)`, computed
//! from the state before the update. Episodes never terminate, they are
//! truncated after 200 steps.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Action, ActionSpace, EnvSpec, Environment, EpisodeClock, Step};
use crate::error::{Error, Result};

pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;
pub const DT: f64 = 0.05;
pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const MAX_EPISODE_STEPS: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Debug, Clone, Default)]
pub struct Pendulum {
    state: PendulumState,
    clock: EpisodeClock,
}

impl Pendulum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset_to(&mut self, state: PendulumState) -> Vec<f32> {
        self.state = state;
        self.clock.start();
        self.observation()
    }

    pub fn state(&self) -> PendulumState {
        self.state
    }

    fn observation(&self) -> Vec<f32> {
        let s = self.state;
        vec![s.theta.cos() as f32, s.theta.sin() as f32, s.theta_dot as f32]
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation_dim: 3,
            action_space: ActionSpace::Box {
                dim: 1,
                low: -MAX_TORQUE as f32,
                high: MAX_TORQUE as f32,
            },
            max_episode_steps: MAX_EPISODE_STEPS,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = PendulumState {
            theta: rng.random_range(-PI..=PI),
            theta_dot: rng.random_range(-1.0..=1.0),
        };
        self.reset_to(state)
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        let u = match action {
            Action::Continuous(v) if v.len() == 1 && v[0].is_finite() => v[0] as f64,
            other => {
                return Err(Error::Action(format!(
                    "pendulum takes one finite torque, got {other:?}"
                )))
            }
        };
        self.clock.check_active()?;
        let u = u.clamp(-MAX_TORQUE, MAX_TORQUE);
        let PendulumState { theta, theta_dot } = self.state;
        let cost = angle_normalize(theta).powi(2) + 0.1 * theta_dot * theta_dot + 0.001 * u * u;
        let new_theta_dot = (theta_dot
            + (3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u)
                * DT)
            .clamp(-MAX_SPEED, MAX_SPEED);
        self.state = PendulumState {
            theta: theta + new_theta_dot * DT,
            theta_dot: new_theta_dot,
        };
        self.clock.steps += 1;
        let truncated = self.clock.steps >= MAX_EPISODE_STEPS;
        if truncated {
            self.clock.active = false;
        }
        Ok(Step {
            observation: self.observation(),
            reward: -cost as f32,
            terminated: false,
            truncated,
        })
    }
}
