use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use sqrl::envs::EnvId;
use sqrl::error::Error;
use sqrl::pipeline::{self, evaluate, PipelineConfig};
use sqrl::prune::{prune_step, DistributionStrategy};
use sqrl::quant::Granularity;
use sqrl::sparse::{benchmark, export, CompressedModel, ExportOptions, Head, Layout};

#[derive(Parser)]
#[command(name = "sqrl", version, about = "Prune, quantize and run small RL policies")]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run through the staged pipeline.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-shot magnitude pruning plus post-training quantization of a checkpoint.
    Compress {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        sparsity: f64,
        #[arg(long)]
        quantize: bool,
        #[arg(long, value_enum, default_value_t = GranularityArg::Layerwise)]
        granularity: GranularityArg,
        #[arg(long, value_enum, default_value_t = StrategyArg::LocalUniform)]
        strategy: StrategyArg,
        #[arg(long, value_enum, default_value_t = LayoutArg::Auto)]
        layout: LayoutArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate an artifact with its deterministic policy.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Inferred from the artifact when omitted.
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Size and latency report over artifacts.
    Bench {
        /// Comma-separated artifact paths.
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        inputs: usize,
        #[arg(long, default_value_t = 30)]
        repetitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the full sparsity sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a default config.
    Config {
        #[arg(value_enum, default_value_t = PresetArg::DqnCartpole)]
        preset: PresetArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Layerwise,
    Channelwise,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Global,
    LocalUniform,
    ErdosRenyi,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Auto,
    Dense,
    Csr,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    DqnCartpole,
    SacPendulum,
}

fn load_model(path: &Path) -> anyhow::Result<CompressedModel> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    CompressedModel::from_bytes(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// CartPole takes 4 observations and acts discretely, Pendulum takes 3 and
/// acts continuously.
fn infer_env(model: &CompressedModel) -> anyhow::Result<EnvId> {
    for env in [EnvId::Cartpole, EnvId::Pendulum] {
        let spec = env.spec();
        let discrete = matches!(model.head, Head::Identity);
        let fits_head = discrete == matches!(spec.action_space, sqrl::envs::ActionSpace::Discrete(_));
        if spec.observation_dim == model.input_dim && fits_head {
            return Ok(env);
        }
    }
    bail!("cannot infer the environment of a model with input width {}; pass --env", model.input_dim)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let record = pipeline::run_pipeline(&cfg, seed)?;
            pipeline::audit(&cfg, &record)?;
            println!("{}", serde_json::to_string_pretty(&record)?);
        }
        Command::Compress {
            checkpoint,
            sparsity,
            quantize,
            granularity,
            strategy,
            layout,
            out,
        } => {
            if !(0.0..=pipeline::config::MAX_TARGET).contains(&sparsity) {
                return Err(Error::Config(vec![format!(
                    "--sparsity must be in [0, {}], got {sparsity}",
                    pipeline::config::MAX_TARGET
                )])
                .into());
            }
            let model = load_model(&checkpoint)?;
            let net = model.to_mlp()?;
            let current = model.mask()?;
            let weights: Vec<_> = net.layers.iter().map(|l| &l.weight).collect();
            let mask = prune_step(&weights, &current, sparsity.max(current.sparsity()), strategy.into())?;
            let opts = ExportOptions {
                quant: quantize.then_some(granularity.into()),
                layout: layout.into(),
                action_bounds: model.action_bounds(),
                config_hash: model.config_hash,
            };
            let compressed = export(&net, Some(&mask), &opts)?;
            std::fs::write(&out, compressed.to_bytes())?;
            info!(
                "wrote {}: {} of {} weights kept, {} bytes",
                out.display(),
                compressed.kept_weights(),
                compressed.weight_count(),
                compressed.analytic_size()
            );
        }
        Command::Eval {
            model,
            env,
            episodes,
            seed,
        } => {
            let m = load_model(&model)?;
            let env = match env {
                Some(e) => e.parse()?,
                None => infer_env(&m)?,
            };
            let stats = evaluate(&m, env, episodes, seed)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Bench {
            models,
            inputs,
            repetitions,
            seed,
            csv,
        } => {
            let mut loaded = Vec::new();
            for p in &models {
                loaded.push((p.display().to_string(), load_model(p)?));
            }
            let width = loaded[0].1.input_dim;
            if let Some((name, _)) = loaded.iter().find(|(_, m)| m.input_dim != width) {
                return Err(Error::Config(vec![format!("{name} has a different input width")]).into());
            }
            let xs = random_inputs(width, inputs, seed);
            let report = benchmark(&loaded, &xs, repetitions)?;
            if let Some(path) = csv {
                report.write_csv(&path)?;
            }
            println!("{}", report.table());
        }
        Command::Sweep { config, out } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let outcome = pipeline::run_sweep(&cfg)?;
            for (cell, r) in &outcome.runs {
                if let Ok(rec) = r {
                    let c = pipeline::sweep::cell_config(&cfg, cell);
                    pipeline::audit(&c, rec).with_context(|| format!("cell {}", cell.name()))?;
                }
            }
            for row in outcome.aggregate() {
                println!(
                    "{:<16} {:>6.3} median {:>9.2} iqr {:>8.2} ({} seeds)",
                    format!("{:?}", row.variant),
                    row.level,
                    row.median_return,
                    row.iqr,
                    row.seeds
                );
            }
            if outcome.failures() > 0 {
                bail!("{} of {} sweep cells failed", outcome.failures(), outcome.runs.len());
            }
        }
        Command::Config { preset } => {
            let cfg = match preset {
                PresetArg::DqnCartpole => PipelineConfig::dqn_cartpole(),
                PresetArg::SacPendulum => PipelineConfig::sac_pendulum(),
            };
            print!("{}", cfg.to_toml_string());
        }
    }
    Ok(())
}

/// Observations drawn uniformly from [-1, 1].
fn random_inputs(width: usize, n: usize, seed: u64) -> Vec<Vec<f32>> {
    use rand::Rng;
    let mut rng = sqrl::seed::rng(seed, 0);
    (0..n)
        .map(|_| (0..width).map(|_| rng.random_range(-1.0f32..=1.0)).collect())
        .collect()
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Layerwise => Granularity::Layerwise,
            GranularityArg::Channelwise => Granularity::Channelwise,
        }
    }
}

impl From<StrategyArg> for DistributionStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Global => DistributionStrategy::Global,
            StrategyArg::LocalUniform => DistributionStrategy::LocalUniform,
            StrategyArg::ErdosRenyi => DistributionStrategy::ErdosRenyi,
        }
    }
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Auto => Layout::Auto,
            LayoutArg::Dense => Layout::Dense,
            LayoutArg::Csr => Layout::Csr,
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
