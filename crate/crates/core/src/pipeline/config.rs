use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{ActionSpace, EnvId};
use crate::error::{Error, Result};
use crate::prune::{DistributionStrategy, ScheduleConfig};
use crate::quant::Granularity;
use crate::rl::{DqnConfig, SacConfig};

/// Largest sparsity target accepted anywhere in a config.
pub const MAX_TARGET: f64 = 0.995;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dqn,
    Sac,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stages {
    /// Fraction of `total_steps` trained dense before pruning starts.
    pub prune_start: f64,
    /// Fraction of `total_steps` at which the last pruning event happens.
    pub prune_end: f64,
    /// Extra fraction of `total_steps` spent in QAT when quantizing.
    pub qat_extra: f64,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            prune_start: 0.2,
            prune_end: 0.8,
            qat_extra: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Pruning {
    /// Final sparsity of a single run. 0 disables pruning.
    pub target: f64,
    /// Number of pruning events `n`.
    pub events: u32,
    pub strategy: DistributionStrategy,
}

impl Default for Pruning {
    fn default() -> Self {
        Self {
            target: 0.9,
            events: 60,
            strategy: DistributionStrategy::LocalUniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Quantization {
    pub enabled: bool,
    pub granularity: Granularity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Evaluation {
    /// Environment steps between evaluations.
    pub frequency: u64,
    pub episodes: usize,
}

impl Default for Evaluation {
    fn default() -> Self {
        Self {
            frequency: 5_000,
            episodes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub levels: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            levels: vec![0.5, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub algorithm: Algorithm,
    pub env: EnvId,
    /// Base training length; QAT adds `qat_extra * total_steps` on top.
    pub total_steps: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub stages: Stages,
    #[serde(default)]
    pub pruning: Pruning,
    #[serde(default)]
    pub quant: Quantization,
    #[serde(default)]
    pub eval: Evaluation,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub dqn: DqnConfig,
    #[serde(default)]
    pub sac: SacConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

/// Step boundaries of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub prune_start: u64,
    pub interval: u64,
    pub events: u32,
    /// `prune_start + events * interval`.
    pub prune_end: u64,
    pub total_steps: u64,
    /// Set when quantizing: first QAT step (equals `total_steps`).
    pub qat_start: Option<u64>,
    /// Steps consumed by the whole run.
    pub end: u64,
}

impl PipelineConfig {
    /// CartPole DQN defaults.
    pub fn dqn_cartpole() -> Self {
        Self {
            algorithm: Algorithm::Dqn,
            env: EnvId::Cartpole,
            total_steps: 100_000,
            seeds: default_seeds(),
            output_dir: None,
            stages: Stages::default(),
            pruning: Pruning::default(),
            quant: Quantization::default(),
            eval: Evaluation::default(),
            sweep: Sweep::default(),
            dqn: DqnConfig::desk(),
            sac: SacConfig::desk(),
        }
    }

    /// Pendulum SAC defaults.
    pub fn sac_pendulum() -> Self {
        Self {
            algorithm: Algorithm::Sac,
            env: EnvId::Pendulum,
            total_steps: 30_000,
            eval: Evaluation {
                frequency: 1_500,
                episodes: 20,
            },
            ..Self::dqn_cartpole()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let st = &self.stages;
        if self.total_steps == 0 {
            errs.push("total_steps must be >= 1".into());
        }
        let stages_ok = 0.0 <= st.prune_start && st.prune_start < st.prune_end && st.prune_end <= 1.0;
        if !stages_ok {
            errs.push(format!(
                "stages: need 0 <= prune_start < prune_end <= 1, got {} and {}",
                st.prune_start, st.prune_end
            ));
        }
        if !(0.0..=10.0).contains(&st.qat_extra) {
            errs.push(format!("stages.qat_extra must be in [0, 10], got {}", st.qat_extra));
        }
        if self.pruning.events == 0 {
            errs.push("pruning.events must be >= 1".into());
        } else if stages_ok && self.window() / (self.pruning.events as u64) == 0 {
            errs.push(format!(
                "pruning window of {} steps is shorter than {} events",
                self.window(),
                self.pruning.events
            ));
        }
        if !(0.0..=MAX_TARGET).contains(&self.pruning.target) {
            errs.push(format!("pruning.target must be in [0, {MAX_TARGET}], got {}", self.pruning.target));
        }
        for (i, l) in self.sweep.levels.iter().enumerate() {
            if !(0.0..=MAX_TARGET).contains(l) {
                errs.push(format!("sweep.levels[{i}] must be in [0, {MAX_TARGET}], got {l}"));
            }
        }
        if self.seeds.is_empty() {
            errs.push("seeds must not be empty".into());
        }
        if self.eval.frequency == 0 || self.eval.episodes == 0 {
            errs.push("eval.frequency and eval.episodes must be >= 1".into());
        }
        match (self.algorithm, self.env.spec().action_space) {
            (Algorithm::Dqn, ActionSpace::Discrete(_)) => self.dqn.validate(&mut errs),
            (Algorithm::Sac, ActionSpace::Box { .. }) => self.sac.validate(&mut errs),
            (a, _) => errs.push(format!("algorithm {a:?} does not fit the action space of {}", self.env)),
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    fn window(&self) -> u64 {
        let t = self.total_steps as f64;
        ((self.stages.prune_end * t).round() - (self.stages.prune_start * t).round()).max(0.0) as u64
    }

    /// Step boundaries. `interval = floor(window / n)` so the last event
    /// never passes `prune_end`.
    pub fn plan(&self) -> Plan {
        let t = self.total_steps;
        let prune_start = (self.stages.prune_start * t as f64).round() as u64;
        let events = self.pruning.events;
        let interval = (self.window() / events.max(1) as u64).max(1);
        let qat = self.quant.enabled.then_some(t);
        let extra = if self.quant.enabled {
            (self.stages.qat_extra * t as f64).round() as u64
        } else {
            0
        };
        Plan {
            prune_start,
            interval,
            events,
            prune_end: prune_start + events as u64 * interval,
            total_steps: t,
            qat_start: qat,
            end: t + extra,
        }
    }

    pub fn schedule(&self) -> Result<ScheduleConfig> {
        let p = self.plan();
        ScheduleConfig::new(self.pruning.target, p.prune_start, p.interval, p.events)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }
}
