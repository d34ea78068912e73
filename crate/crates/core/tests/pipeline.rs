mod common;

use sqrl::envs::EnvId;
use sqrl::pipeline::sweep::{self, cell_config, read_rows};
use sqrl::pipeline::{audit, evaluate, run_pipeline, run_sweep, Algorithm, MetricsRow, PipelineConfig, Policy, Variant};
use sqrl::pipeline::eval::{episode_seed, run_episode};

fn tiny(algorithm: Algorithm) -> PipelineConfig {
    let mut c = match algorithm {
        Algorithm::Dqn => PipelineConfig::dqn_cartpole(),
        Algorithm::Sac => PipelineConfig::sac_pendulum(),
    };
    c.total_steps = 500;
    c.seeds = vec![3];
    c.pruning.events = 5;
    c.eval.frequency = 250;
    c.eval.episodes = 2;
    c.sweep.levels = vec![0.5];
    c.dqn.hidden = vec![8];
    c.dqn.learning_starts = 100;
    c.dqn.batch_size = 8;
    c.dqn.target_update_interval = 50;
    c.sac.actor_hidden = vec![8];
    c.sac.critic_hidden = vec![8];
    c.sac.learning_starts = 100;
    c.sac.batch_size = 8;
    c
}

#[test]
fn same_config_and_seed_give_the_same_record() {
    for alg in [Algorithm::Dqn, Algorithm::Sac] {
        let mut c = tiny(alg);
        c.quant.enabled = true;
        c.pruning.target = 0.7;
        let mut a = run_pipeline(&c, 5).unwrap();
        let mut b = run_pipeline(&c, 5).unwrap();
        a.wall_clock_secs = 0.0;
        b.wall_clock_secs = 0.0;
        assert_eq!(a, b);
        let other = run_pipeline(&c, 6).unwrap();
        assert_ne!(a.final_eval.returns, other.final_eval.returns);
    }
}

#[test]
fn quantized_runs_take_one_point_two_times_the_steps() {
    let mut c = tiny(Algorithm::Sac);
    c.quant.enabled = true;
    let r = run_pipeline(&c, 0).unwrap();
    assert_eq!(r.env_steps, 600);
    audit(&c, &r).unwrap();
    c.quant.enabled = false;
    assert_eq!(run_pipeline(&c, 0).unwrap().env_steps, 500);
}

#[test]
fn evaluations_follow_the_frequency() {
    let c = tiny(Algorithm::Dqn);
    let r = run_pipeline(&c, 1).unwrap();
    let steps: Vec<u64> = r.evaluations.iter().map(|e| e.env_step).collect();
    assert_eq!(steps, vec![250, 500]);
}

#[test]
fn evaluation_mean_is_the_mean_of_episode_returns() {
    struct Lean;
    impl Policy for Lean {
        fn act(&self, o: &[f32]) -> sqrl::error::Result<sqrl::envs::Action> {
            Ok(sqrl::envs::Action::Discrete(usize::from(o[2] + 0.5 * o[3] > 0.0)))
        }
    }
    let stats = evaluate(&Lean, EnvId::Cartpole, 20, 77).unwrap();
    // sequential recomputation from the same per-episode seeds
    let seq: Vec<f64> = (0..20).map(|i| run_episode(&Lean, EnvId::Cartpole, episode_seed(77, i)).unwrap()).collect();
    assert_eq!(stats.returns, seq);
    let mean = seq.iter().sum::<f64>() / 20.0;
    assert!((stats.mean_return - mean).abs() < 1e-12);
}

#[test]
fn minimal_sweep_has_two_cells_and_passes_audit() {
    let c = tiny(Algorithm::Dqn);
    let out = run_sweep(&c).unwrap();
    assert_eq!(out.runs.len(), 2);
    assert_eq!(out.failures(), 0);
    for (cell, r) in &out.runs {
        audit(&cell_config(&c, cell), r.as_ref().unwrap()).unwrap();
    }
    let variants: Vec<Variant> = out.runs.iter().map(|(c, _)| c.variant).collect();
    assert_eq!(variants, vec![Variant::Dense, Variant::Pruned]);
}

#[test]
fn sweep_csvs_have_a_stable_schema_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(Algorithm::Dqn);
    c.quant.enabled = true;
    c.seeds = vec![0, 1];
    c.output_dir = Some(dir.path().to_path_buf());
    let out = run_sweep(&c).unwrap();
    assert_eq!(out.runs.len(), 8);
    for name in ["sweep", "metrics", "aggregate"] {
        let text = std::fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap();
        let header = text.lines().next().unwrap();
        let golden = std::fs::read_to_string(format!("{}/tests/golden/{name}_header.csv", env!("CARGO_MANIFEST_DIR"))).unwrap();
        assert_eq!(header, golden.trim_end(), "{name}.csv header changed");
    }
    let keys: Vec<String> = std::fs::read_to_string(dir.path().join("sweep.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(4).collect::<Vec<_>>().join(","))
        .collect();
    let golden = std::fs::read_to_string(format!("{}/tests/golden/sweep_keys.csv", env!("CARGO_MANIFEST_DIR"))).unwrap();
    assert_eq!(keys, golden.lines().collect::<Vec<_>>());

    let metrics: Vec<MetricsRow> = read_rows(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(sweep::aggregate(&metrics), out.aggregate());
    assert!(dir.path().join("runs/prunedquantized_0.500_s1/policy.sqrl").exists());
}

#[test]
fn failing_cells_are_recorded_and_the_sweep_continues() {
    let mut c = tiny(Algorithm::Dqn);
    // the first update samples a batch larger than the buffer
    c.dqn.learning_starts = 0;
    let out = run_sweep(&c).unwrap();
    assert_eq!(out.failures(), 2);
    let rows = out.metrics_rows();
    assert!(rows.iter().all(|r| !r.ok && !r.error.is_empty()));
    assert!(out.aggregate().is_empty());
}
