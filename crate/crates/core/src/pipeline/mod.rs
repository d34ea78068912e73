//! Staged training runs, evaluation and sweeps.

pub mod config;
pub mod eval;
pub mod run;
pub mod sweep;

pub use config::{Algorithm, PipelineConfig, Plan};
pub use eval::{evaluate, EvalStats, MlpPolicy, Policy};
pub use run::{audit, eval_seed, run_pipeline, Agent, EvalPoint, Event, RunRecord, Stage};
pub use sweep::{aggregate, run_sweep, AggregateRow, Cell, CurveRow, MetricsRow, SweepOutcome, Variant};
