//! One training run through the staged timeline:
//!
//! ```text
//! [0, t_s)          dense training
//! [t_s, t_f]        pruning events at t_s + k*dt, k = 1..n
//! (t_f, T]          finetune with the mask frozen
//! (T, T + q*T]      QAT (only when quantizing)
//! ```

use std::path::PathBuf;
use std::time::Instant;

use log::{debug, info};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Action, ActionSpace, EnvId, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::pipeline::config::{Algorithm, PipelineConfig, Plan};
use crate::pipeline::eval::{evaluate, EvalStats, MlpPolicy};
use crate::prune::{allocate_sparsity, prune_step, Allocation, DistributionStrategy, PruningMask};
use crate::quant::Granularity;
use crate::rl::{DqnAgent, ReplayBuffer, SacAgent, Transition};
use crate::seed::{self, stream};
use crate::sparse::{export, CompressedModel, ExportOptions, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dense,
    Prune,
    Finetune,
    Qat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Stage { step: u64, stage: Stage },
    Prune { step: u64, k: u32, target: f64, achieved: f64 },
    Eval { step: u64, mean_return: f64, std_return: f64, quantized: bool },
    End { step: u64 },
}

impl Event {
    pub fn step(&self) -> u64 {
        match self {
            Event::Stage { step, .. } | Event::Prune { step, .. } | Event::Eval { step, .. } | Event::End { step } => {
                *step
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub env_step: u64,
    pub mean_return: f64,
    pub std_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub algorithm: Algorithm,
    pub env: EnvId,
    pub seed: u64,
    pub target_sparsity: f64,
    pub quantized: bool,
    pub strategy: DistributionStrategy,
    pub plan: Plan,
    pub env_steps: u64,
    pub evaluations: Vec<EvalPoint>,
    /// Evaluation of the exported artifact.
    pub final_eval: EvalStats,
    pub layer_sizes: Vec<usize>,
    pub layer_zeros: Vec<usize>,
    pub layer_sparsity: Vec<f64>,
    pub achieved_sparsity: f64,
    pub artifact_path: Option<PathBuf>,
    pub artifact_bytes: usize,
    pub wall_clock_secs: f64,
    pub events: Vec<Event>,
}

/// The two agents behind one interface.
#[derive(Debug, Clone)]
pub enum Agent {
    Dqn(DqnAgent),
    Sac(SacAgent),
}

impl Agent {
    pub fn new(cfg: &PipelineConfig, spec: &EnvSpec, rng: &mut impl Rng) -> Result<Self> {
        match (cfg.algorithm, &spec.action_space) {
            (Algorithm::Dqn, ActionSpace::Discrete(n)) => Ok(Agent::Dqn(DqnAgent::new(
                spec.observation_dim,
                *n,
                cfg.dqn.clone(),
                cfg.total_steps,
                rng,
            )?)),
            (Algorithm::Sac, ActionSpace::Box { dim, low, high }) => Ok(Agent::Sac(SacAgent::new(
                spec.observation_dim,
                *dim,
                (*low, *high),
                cfg.sac.clone(),
                rng,
            )?)),
            (a, s) => Err(Error::Config(vec![format!("{a:?} cannot act in {s:?}")])),
        }
    }

    /// The network that gets pruned, quantized and exported.
    pub fn policy(&self) -> &Mlp {
        match self {
            Agent::Dqn(a) => &a.q,
            Agent::Sac(a) => &a.actor,
        }
    }

    pub fn mask(&self) -> Option<&PruningMask> {
        match self {
            Agent::Dqn(a) => a.mask.as_ref(),
            Agent::Sac(a) => a.mask.as_ref(),
        }
    }

    pub fn set_mask(&mut self, mask: PruningMask) -> Result<()> {
        match self {
            Agent::Dqn(a) => a.set_mask(mask),
            Agent::Sac(a) => a.set_mask(mask),
        }
    }

    pub fn quant(&self) -> Option<Granularity> {
        match self {
            Agent::Dqn(a) => a.quant,
            Agent::Sac(a) => a.quant,
        }
    }

    pub fn set_quant(&mut self, g: Option<Granularity>) {
        match self {
            Agent::Dqn(a) => a.quant = g,
            Agent::Sac(a) => a.quant = g,
        }
    }

    pub fn bounds(&self) -> Option<(f32, f32)> {
        match self {
            Agent::Dqn(_) => None,
            Agent::Sac(a) => Some((a.action_low, a.action_high)),
        }
    }

    fn learning_starts(&self) -> u64 {
        match self {
            Agent::Dqn(a) => a.config.learning_starts,
            Agent::Sac(a) => a.config.learning_starts,
        }
    }

    /// `(action for the env, action for the buffer)`. Before learning starts
    /// actions are uniform random.
    fn explore(&mut self, obs: &[f32], steps_done: u64, rng: &mut impl Rng) -> Result<(Action, Action)> {
        let warmup = steps_done < self.learning_starts();
        match self {
            Agent::Dqn(a) => {
                a.env_steps = steps_done;
                let act = if warmup {
                    rng.random_range(0..a.n_actions())
                } else {
                    a.act(obs, true, rng)?
                };
                Ok((Action::Discrete(act), Action::Discrete(act)))
            }
            Agent::Sac(a) => {
                let norm: Vec<f32> = if warmup {
                    (0..a.action_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect()
                } else {
                    a.act_normalized(obs, false, rng)?
                };
                Ok((Action::Continuous(a.scale_action(&norm)), Action::Continuous(norm)))
            }
        }
    }

    /// Training after `steps_done` environment steps.
    fn learn(&mut self, steps_done: u64, buffer: &ReplayBuffer, replay: &mut impl Rng, noise: &mut impl Rng) -> Result<()> {
        match self {
            Agent::Dqn(a) => {
                let c = &a.config;
                if steps_done > c.learning_starts && steps_done % c.train_freq == 0 {
                    for _ in 0..c.gradient_steps {
                        let batch = buffer.sample(a.config.batch_size, replay)?;
                        a.update(&batch)?;
                    }
                }
                if steps_done % a.config.target_update_interval == 0 {
                    a.sync_target()?;
                }
            }
            Agent::Sac(a) => {
                let c = &a.config;
                if steps_done > c.learning_starts && steps_done % c.train_freq == 0 {
                    for _ in 0..c.gradient_steps {
                        let batch = buffer.sample(a.config.batch_size, replay)?;
                        a.update(&batch, noise)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn buffer_capacity(&self) -> usize {
        match self {
            Agent::Dqn(a) => a.config.buffer_size,
            Agent::Sac(a) => a.config.buffer_size,
        }
    }

    fn stored_action_dim(&self) -> usize {
        match self {
            Agent::Dqn(_) => 1,
            Agent::Sac(a) => a.action_dim(),
        }
    }
}

/// Seed for the evaluation episodes of a run. Depends on the run seed only, so
/// every variant of a seed is scored on the same initial states.
pub fn eval_seed(run_seed: u64) -> u64 {
    seed::derive(run_seed, stream::EVAL)
}

/// Trains, compresses, exports and evaluates one configuration.
pub fn run_pipeline(cfg: &PipelineConfig, run_seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let started = Instant::now();
    let plan = cfg.plan();
    let schedule = cfg.schedule()?;
    let pruning = cfg.pruning.target > 0.0;
    let spec = cfg.env.spec();
    let mut init_rng = seed::rng(run_seed, stream::INIT);
    let mut replay_rng = seed::rng(run_seed, stream::REPLAY);
    let mut explore_rng = seed::rng(run_seed, stream::EXPLORE);
    let mut noise_rng = seed::rng(run_seed, stream::POLICY);
    let env_seed = seed::derive(run_seed, stream::ENV);
    let evals = eval_seed(run_seed);

    let mut agent = Agent::new(cfg, &spec, &mut init_rng)?;
    let capacity = agent.buffer_capacity().min(plan.end as usize).max(1);
    let mut buffer = ReplayBuffer::new(capacity, spec.observation_dim, agent.stored_action_dim());
    let mut env: Box<dyn Environment> = cfg.env.make();
    let mut episode = 0u64;
    let mut obs = env.reset(seed::derive(env_seed, episode));
    let mut events = vec![Event::Stage {
        step: 0,
        stage: Stage::Dense,
    }];
    let mut evaluations = Vec::new();
    let mut achieved = 0.0f64;
    info!(
        "run {:?}/{} seed {run_seed}: target {} quantize {} for {} steps",
        cfg.algorithm, cfg.env, cfg.pruning.target, cfg.quant.enabled, plan.end
    );

    for t in 0..plan.end {
        if pruning && t == plan.prune_start {
            events.push(Event::Stage {
                step: t,
                stage: Stage::Prune,
            });
        }
        if let Some(k) = schedule.event_at(t).filter(|_| pruning) {
            let target = schedule.sparsity_at(t)?;
            let net = agent.policy();
            let current = agent.mask().cloned().unwrap_or_else(|| PruningMask::for_network(net));
            let weights: Vec<_> = net.layers.iter().map(|l| &l.weight).collect();
            let next = prune_step(&weights, &current, target, cfg.pruning.strategy)?;
            let now = next.sparsity();
            if now + 1e-12 < achieved || !current.is_nested_in(&next) {
                return Err(Error::Audit(format!(
                    "sparsity regressed from {achieved} to {now} at step {t}"
                )));
            }
            achieved = now;
            agent.set_mask(next)?;
            debug!("step {t}: prune event {k}, target {target:.4}, achieved {now:.4}");
            events.push(Event::Prune {
                step: t,
                k,
                target,
                achieved: now,
            });
            if k == plan.events {
                events.push(Event::Stage {
                    step: t,
                    stage: Stage::Finetune,
                });
            }
        }
        if plan.qat_start == Some(t) {
            agent.set_quant(Some(cfg.quant.granularity));
            events.push(Event::Stage {
                step: t,
                stage: Stage::Qat,
            });
        }

        let (env_action, stored) = agent.explore(&obs, t, &mut explore_rng)?;
        let step = env.step(&env_action)?;
        buffer.push(&Transition {
            state: obs,
            action: stored,
            reward: step.reward,
            next_state: step.observation.clone(),
            done: step.terminated,
        })?;
        obs = if step.done() {
            episode += 1;
            env.reset(seed::derive(env_seed, episode))
        } else {
            step.observation
        };
        let done_steps = t + 1;
        agent.learn(done_steps, &buffer, &mut replay_rng, &mut noise_rng)?;

        if done_steps % cfg.eval.frequency == 0 || done_steps == plan.end {
            let policy = MlpPolicy {
                net: agent.policy(),
                quant: agent.quant(),
                bounds: agent.bounds(),
            };
            let stats = evaluate(&policy, cfg.env, cfg.eval.episodes, evals)?;
            debug!("step {done_steps}: return {:.2} +- {:.2}", stats.mean_return, stats.std_return);
            events.push(Event::Eval {
                step: done_steps,
                mean_return: stats.mean_return,
                std_return: stats.std_return,
                quantized: agent.quant().is_some(),
            });
            evaluations.push(EvalPoint {
                env_step: done_steps,
                mean_return: stats.mean_return,
                std_return: stats.std_return,
            });
        }
    }
    events.push(Event::End { step: plan.end });

    let opts = ExportOptions {
        quant: cfg.quant.enabled.then_some(cfg.quant.granularity),
        layout: Layout::Auto,
        action_bounds: agent.bounds(),
        config_hash: cfg.hash(),
    };
    let bytes = export(agent.policy(), agent.mask(), &opts)?.to_bytes();
    let model = CompressedModel::from_bytes(&bytes)?;
    if model.to_bytes() != bytes {
        return Err(Error::Audit("artifact does not re-serialize byte for byte".into()));
    }
    let final_eval = evaluate(&model, cfg.env, cfg.eval.episodes, evals)?;
    info!(
        "run seed {run_seed} done: artifact return {:.2} +- {:.2}, {} bytes",
        final_eval.mean_return,
        final_eval.std_return,
        bytes.len()
    );

    let mask = agent
        .mask()
        .cloned()
        .unwrap_or_else(|| PruningMask::for_network(agent.policy()));
    let mut artifact_path = None;
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("policy.sqrl");
        std::fs::write(&path, &bytes)?;
        let checkpoint = ExportOptions {
            quant: None,
            layout: Layout::Dense,
            ..opts
        };
        std::fs::write(dir.join("checkpoint.sqrl"), export(agent.policy(), None, &checkpoint)?.to_bytes())?;
        artifact_path = Some(path);
    }
    let record = RunRecord {
        config_hash: cfg.hash_hex(),
        algorithm: cfg.algorithm,
        env: cfg.env,
        seed: run_seed,
        target_sparsity: cfg.pruning.target,
        quantized: cfg.quant.enabled,
        strategy: cfg.pruning.strategy,
        plan,
        env_steps: plan.end,
        evaluations,
        final_eval,
        layer_sizes: mask.layers().iter().map(|l| l.len()).collect(),
        layer_zeros: mask.layers().iter().map(|l| l.zeros()).collect(),
        layer_sparsity: mask.layer_sparsity(),
        achieved_sparsity: mask.sparsity(),
        artifact_path,
        artifact_bytes: bytes.len(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        events,
    };
    if let Some(dir) = &cfg.output_dir {
        std::fs::write(dir.join("record.json"), serde_json::to_string_pretty(&record)?)?;
    }
    Ok(record)
}

/// Replays a run's event log against the plan implied by `cfg` (with the
/// record's target and quantization) and checks every stage boundary.
pub fn audit(cfg: &PipelineConfig, record: &RunRecord) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.pruning.target = record.target_sparsity;
    cfg.quant.enabled = record.quantized;
    cfg.pruning.strategy = record.strategy;
    let plan = cfg.plan();
    let schedule = cfg.schedule()?;
    let fail = |m: String| Err(Error::Audit(m));
    if record.plan != plan {
        return fail(format!("recorded plan {:?} differs from {plan:?}", record.plan));
    }
    if record.env_steps != plan.end {
        return fail(format!("consumed {} steps, expected {}", record.env_steps, plan.end));
    }
    let ev = &record.events;
    if ev.windows(2).any(|w| w[0].step() > w[1].step()) {
        return fail("event log is not in step order".into());
    }
    let pruning = record.target_sparsity > 0.0;
    let mut want_stages = vec![(0, Stage::Dense)];
    if pruning {
        want_stages.push((plan.prune_start, Stage::Prune));
        want_stages.push((plan.prune_end, Stage::Finetune));
    }
    if let Some(q) = plan.qat_start {
        want_stages.push((q, Stage::Qat));
    }
    let stages: Vec<(u64, Stage)> = ev
        .iter()
        .filter_map(|e| match e {
            Event::Stage { step, stage } => Some((*step, *stage)),
            _ => None,
        })
        .collect();
    if stages != want_stages {
        return fail(format!("stage markers {stages:?}, expected {want_stages:?}"));
    }
    if !matches!(ev.last(), Some(Event::End { step }) if *step == plan.end) {
        return fail("log does not end at the planned step".into());
    }

    let prunes: Vec<(u64, u32, f64, f64)> = ev
        .iter()
        .filter_map(|e| match e {
            Event::Prune {
                step,
                k,
                target,
                achieved,
            } => Some((*step, *k, *target, *achieved)),
            _ => None,
        })
        .collect();
    let expected_events = if pruning { plan.events as usize } else { 0 };
    if prunes.len() != expected_events {
        return fail(format!("{} pruning events, expected {expected_events}", prunes.len()));
    }
    let mut last_achieved = 0.0;
    for (i, (step, k, target, achieved)) in prunes.iter().enumerate() {
        let want_step = plan.prune_start + (i as u64 + 1) * plan.interval;
        if *k as usize != i + 1 || *step != want_step {
            return fail(format!("event {i} is k={k} at step {step}, expected k={} at {want_step}", i + 1));
        }
        if *step < plan.prune_start || *step > plan.prune_end {
            return fail(format!("pruning at step {step} outside [{}, {}]", plan.prune_start, plan.prune_end));
        }
        if *target != schedule.sparsity_at(*step)? {
            return fail(format!("event {k} target {target} does not follow the schedule"));
        }
        if *achieved + 1e-12 < last_achieved {
            return fail(format!("achieved sparsity regressed at event {k}"));
        }
        last_achieved = *achieved;
    }

    for e in ev {
        if let Event::Eval { step, quantized, .. } = e {
            let should = plan.qat_start.is_some_and(|q| *step > q);
            if *quantized != should {
                return fail(format!("fake-quant state {quantized} at step {step}"));
            }
        }
    }

    let shapes_total: usize = record.layer_sizes.iter().sum();
    if pruning {
        match cfg.pruning.strategy {
            DistributionStrategy::Global => {
                let zeros: usize = record.layer_zeros.iter().sum();
                let want = record.target_sparsity * shapes_total as f64;
                if (zeros as f64 - want).abs() > 1.0 + 1e-9 {
                    return fail(format!("{zeros} pruned weights, target {want:.1}"));
                }
            }
            strategy => {
                let n = record.layer_sizes.len();
                let shapes: Vec<(usize, usize)> = record.layer_sizes.iter().map(|s| (1, *s)).collect();
                // allocation depends on (rows, cols); recover them from the policy spec
                let alloc = allocate_sparsity(strategy, &policy_shapes(&cfg)?, record.target_sparsity)?;
                let per = match alloc {
                    Allocation::PerLayer(v) => v,
                    Allocation::Global(s) => vec![s; n],
                };
                debug_assert_eq!(shapes.len(), per.len());
                for (l, ((size, zeros), s)) in record.layer_sizes.iter().zip(&record.layer_zeros).zip(per).enumerate() {
                    let want = s * *size as f64;
                    if (*zeros as f64 - want).abs() > 1.0 + 1e-9 {
                        return fail(format!("layer {l}: {zeros} pruned weights, target {want:.1}"));
                    }
                }
            }
        }
    } else if record.layer_zeros.iter().any(|z| *z != 0) {
        return fail("dense run has pruned weights".into());
    }
    Ok(())
}

/// Weight shapes of the pruned network for `cfg`.
pub fn policy_shapes(cfg: &PipelineConfig) -> Result<Vec<(usize, usize)>> {
    let spec = cfg.env.spec();
    let (hidden, out) = match (cfg.algorithm, &spec.action_space) {
        (Algorithm::Dqn, ActionSpace::Discrete(n)) => (&cfg.dqn.hidden, *n),
        (Algorithm::Sac, ActionSpace::Box { dim, .. }) => (&cfg.sac.actor_hidden, 2 * dim),
        (a, s) => return Err(Error::Config(vec![format!("{a:?} cannot act in {s:?}")])),
    };
    let mut dims = vec![spec.observation_dim];
    dims.extend(hidden);
    dims.push(out);
    Ok(dims.windows(2).map(|w| (w[1], w[0])).collect())
}
