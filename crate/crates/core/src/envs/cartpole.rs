//! CartPole-v1: balance a pole on a cart by pushing left or right.
//!
//! Constants and the Euler update follow the canonical classic-control
//! definition. State is integrated in `f64`; observations are `f32`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Action, ActionSpace, EnvSpec, Environment, EpisodeClock, Step};
use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.8;
pub const MASS_CART: f64 = 1.0;
pub const MASS_POLE: f64 = 0.1;
pub const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
/// Half the pole length.
pub const LENGTH: f64 = 0.5;
pub const POLE_MASS_LENGTH: f64 = MASS_POLE * LENGTH;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub const X_THRESHOLD: f64 = 2.4;
pub const MAX_EPISODE_STEPS: u32 = 500;
pub const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CartPole {
    state: CartPoleState,
    clock: EpisodeClock,
}

impl CartPole {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts an episode from an explicit state (reference traces, tests).
    pub fn reset_to(&mut self, state: CartPoleState) -> Vec<f32> {
        self.state = state;
        self.clock.start();
        self.observation()
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    fn observation(&self) -> Vec<f32> {
        let s = self.state;
        vec![s.x as f32, s.x_dot as f32, s.theta as f32, s.theta_dot as f32]
    }
}

impl Environment for CartPole {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation_dim: 4,
            action_space: ActionSpace::Discrete(2),
            max_episode_steps: MAX_EPISODE_STEPS,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || rng.random_range(-INIT_RANGE..INIT_RANGE);
        let state = CartPoleState {
            x: draw(),
            x_dot: draw(),
            theta: draw(),
            theta_dot: draw(),
        };
        self.reset_to(state)
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        let push = match action {
            Action::Discrete(a @ (0 | 1)) => *a,
            other => {
                return Err(Error::Action(format!(
                    "cartpole takes Discrete(0|1), got {other:?}"
                )))
            }
        };
        self.clock.check_active()?;
        let force = if push == 1 { FORCE_MAG } else { -FORCE_MAG };
        let CartPoleState {
            x,
            x_dot,
            theta,
            theta_dot,
        } = self.state;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        self.state = CartPoleState {
            x: x + TAU * x_dot,
            x_dot: x_dot + TAU * x_acc,
            theta: theta + TAU * theta_dot,
            theta_dot: theta_dot + TAU * theta_acc,
        };
        self.clock.steps += 1;
        let s = self.state;
        let terminated = s.x < -X_THRESHOLD
            || s.x > X_THRESHOLD
            || s.theta < -THETA_THRESHOLD
            || s.theta > THETA_THRESHOLD;
        let truncated = !terminated && self.clock.steps >= MAX_EPISODE_STEPS;
        if terminated || truncated {
            self.clock.active = false;
        }
        Ok(Step {
            observation: self.observation(),
            reward: 1.0,
            terminated,
            truncated,
        })
    }
}
