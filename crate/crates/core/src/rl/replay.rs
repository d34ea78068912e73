use rand::Rng;

use crate::envs::Action;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: Action,
    pub reward: f32,
    pub next_state: Vec<f32>,
    /// Terminal for bootstrapping purposes; time-limit truncation is not `done`.
    pub done: bool,
}

/// Minibatch in struct-of-arrays layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[batch, obs_dim]`
    pub states: Tensor,
    /// `batch * action_dim` values; a discrete action is stored as its index.
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    /// `[batch, obs_dim]`
    pub next_states: Tensor,
    /// 1.0 where terminal.
    pub dones: Vec<f32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.len() / self.len().max(1)
    }
}

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    action_dim: usize,
    states: Vec<f32>,
    actions: Vec<f32>,
    rewards: Vec<f32>,
    next_states: Vec<f32>,
    dones: Vec<f32>,
    len: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            obs_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            dones: Vec::new(),
            len: 0,
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.state.len() != self.obs_dim || t.next_state.len() != self.obs_dim {
            return Err(Error::Dimension(format!(
                "transition states must have {} entries",
                self.obs_dim
            )));
        }
        let action: Vec<f32> = match &t.action {
            Action::Discrete(a) if self.action_dim == 1 => vec![*a as f32],
            Action::Continuous(v) if v.len() == self.action_dim => v.clone(),
            other => {
                return Err(Error::Dimension(format!(
                    "action {other:?} does not fit a buffer with action_dim {}",
                    self.action_dim
                )))
            }
        };
        let done = if t.done { 1.0 } else { 0.0 };
        if self.len < self.capacity {
            self.states.extend_from_slice(&t.state);
            self.actions.extend_from_slice(&action);
            self.rewards.push(t.reward);
            self.next_states.extend_from_slice(&t.next_state);
            self.dones.push(done);
            self.len += 1;
        } else {
            let i = self.head;
            let (o, a) = (self.obs_dim, self.action_dim);
            self.states[i * o..(i + 1) * o].copy_from_slice(&t.state);
            self.actions[i * a..(i + 1) * a].copy_from_slice(&action);
            self.rewards[i] = t.reward;
            self.next_states[i * o..(i + 1) * o].copy_from_slice(&t.next_state);
            self.dones[i] = done;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if batch == 0 || self.len < batch {
            return Err(Error::State(format!(
                "cannot sample {batch} transitions from a buffer of {}",
                self.len
            )));
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.len)).collect())
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let (o, a) = (self.obs_dim, self.action_dim);
        let n = indices.len();
        let mut states = Vec::with_capacity(n * o);
        let mut next_states = Vec::with_capacity(n * o);
        let mut actions = Vec::with_capacity(n * a);
        let mut rewards = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        for &i in indices {
            if i >= self.len {
                return Err(Error::Dimension(format!("index {i} beyond buffer length")));
            }
            states.extend_from_slice(&self.states[i * o..(i + 1) * o]);
            next_states.extend_from_slice(&self.next_states[i * o..(i + 1) * o]);
            actions.extend_from_slice(&self.actions[i * a..(i + 1) * a]);
            rewards.push(self.rewards[i]);
            dones.push(self.dones[i]);
        }
        Ok(Batch {
            states: Tensor::from_vec(&[n, o], states)?,
            actions,
            rewards,
            next_states: Tensor::from_vec(&[n, o], next_states)?,
            dones,
        })
    }

    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Result<Batch> {
        let idx = self.sample_indices(batch, rng)?;
        self.gather(&idx)
    }
}
