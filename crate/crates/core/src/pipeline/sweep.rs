//! Sparsity sweep: every (variant, level, seed) cell is an independent run.

use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::run::{run_pipeline, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dense,
    Pruned,
    Quantized,
    PrunedQuantized,
}

impl Variant {
    pub fn pruned(self) -> bool {
        matches!(self, Variant::Pruned | Variant::PrunedQuantized)
    }

    pub fn quantized(self) -> bool {
        matches!(self, Variant::Quantized | Variant::PrunedQuantized)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub variant: Variant,
    /// 0 for unpruned variants.
    pub level: f64,
    pub seed: u64,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{:?}_{:.3}_s{}", self.variant, self.level, self.seed).to_lowercase()
    }
}

/// Dense and pruned-at-each-level cells per seed; quantized and
/// pruned+quantized ones too when `cfg.quant.enabled`.
pub fn cells(cfg: &PipelineConfig) -> Vec<Cell> {
    let mut variants = vec![Variant::Dense, Variant::Pruned];
    if cfg.quant.enabled {
        variants.extend([Variant::Quantized, Variant::PrunedQuantized]);
    }
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        for &variant in &variants {
            if variant.pruned() {
                out.extend(cfg.sweep.levels.iter().map(|&level| Cell { variant, level, seed }));
            } else {
                out.push(Cell {
                    variant,
                    level: 0.0,
                    seed,
                });
            }
        }
    }
    out
}

/// Config of a single cell: the sweep config with target and quantization
/// overridden and outputs redirected under `<output_dir>/runs/<cell>`.
pub fn cell_config(cfg: &PipelineConfig, cell: &Cell) -> PipelineConfig {
    let mut c = cfg.clone();
    c.pruning.target = if cell.variant.pruned() { cell.level } else { 0.0 };
    c.quant.enabled = cell.variant.quantized();
    c.seeds = vec![cell.seed];
    c.output_dir = cfg.output_dir.as_ref().map(|d| d.join("runs").join(cell.name()));
    c
}

/// One row per evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub level: f64,
    pub variant: Variant,
    pub seed: u64,
    pub env_step: u64,
    pub mean_return: f64,
    pub std_return: f64,
}

/// One row per cell, scored on the exported artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub level: f64,
    pub variant: Variant,
    pub seed: u64,
    pub ok: bool,
    pub mean_return: f64,
    pub std_return: f64,
    pub achieved_sparsity: f64,
    pub artifact_bytes: usize,
    pub wall_clock_secs: f64,
    pub error: String,
}

/// Across-seed summary of final artifact returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub level: f64,
    pub variant: Variant,
    pub seeds: usize,
    pub median_return: f64,
    pub q1_return: f64,
    pub q3_return: f64,
    pub iqr: f64,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub runs: Vec<(Cell, std::result::Result<RunRecord, String>)>,
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|(_, r)| r.is_err()).count()
    }

    pub fn curve_rows(&self) -> Vec<CurveRow> {
        let mut rows = Vec::new();
        for (cell, r) in &self.runs {
            if let Ok(rec) = r {
                rows.extend(rec.evaluations.iter().map(|e| CurveRow {
                    level: cell.level,
                    variant: cell.variant,
                    seed: cell.seed,
                    env_step: e.env_step,
                    mean_return: e.mean_return,
                    std_return: e.std_return,
                }));
            }
        }
        rows
    }

    pub fn metrics_rows(&self) -> Vec<MetricsRow> {
        self.runs
            .iter()
            .map(|(cell, r)| match r {
                Ok(rec) => MetricsRow {
                    level: cell.level,
                    variant: cell.variant,
                    seed: cell.seed,
                    ok: true,
                    mean_return: rec.final_eval.mean_return,
                    std_return: rec.final_eval.std_return,
                    achieved_sparsity: rec.achieved_sparsity,
                    artifact_bytes: rec.artifact_bytes,
                    wall_clock_secs: rec.wall_clock_secs,
                    error: String::new(),
                },
                Err(e) => MetricsRow {
                    level: cell.level,
                    variant: cell.variant,
                    seed: cell.seed,
                    ok: false,
                    mean_return: f64::NAN,
                    std_return: f64::NAN,
                    achieved_sparsity: f64::NAN,
                    artifact_bytes: 0,
                    wall_clock_secs: 0.0,
                    error: e.clone(),
                },
            })
            .collect()
    }

    pub fn aggregate(&self) -> Vec<AggregateRow> {
        aggregate(&self.metrics_rows())
    }

    /// Writes `sweep.csv`, `metrics.csv` and `aggregate.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_rows(&dir.join("sweep.csv"), &self.curve_rows())?;
        write_rows(&dir.join("metrics.csv"), &self.metrics_rows())?;
        write_rows(&dir.join("aggregate.csv"), &self.aggregate())?;
        Ok(())
    }
}

/// Median and interquartile range of final returns over seeds, failed cells
/// left out.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<((Variant, f64), Vec<f64>)> = Vec::new();
    for r in rows.iter().filter(|r| r.ok) {
        let key = (r.variant, r.level);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.mean_return),
            None => groups.push((key, vec![r.mean_return])),
        }
    }
    groups.sort_by(|a, b| a.0 .0.cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)));
    groups
        .into_iter()
        .map(|((variant, level), mut v)| {
            v.sort_by(f64::total_cmp);
            let (q1, q3) = (quantile(&v, 0.25), quantile(&v, 0.75));
            AggregateRow {
                level,
                variant,
                seeds: v.len(),
                median_return: quantile(&v, 0.5),
                q1_return: q1,
                q3_return: q3,
                iqr: q3 - q1,
            }
        })
        .collect()
}

pub fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every cell (in parallel with the `parallel` feature). A failing cell
/// is recorded and the rest continue.
pub fn run_sweep(cfg: &PipelineConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let cells = cells(cfg);
    info!("sweep: {} cells", cells.len());
    let runs = crate::par::map(cells, |cell| {
        let c = cell_config(cfg, &cell);
        let r = run_pipeline(&c, cell.seed).map_err(|e| e.to_string());
        if let Err(e) = &r {
            warn!("cell {} failed: {e}", cell.name());
        }
        (cell, r)
    });
    let out = SweepOutcome { runs };
    if let Some(dir) = &cfg.output_dir {
        out.write(dir)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_count() {
        let mut c = PipelineConfig::dqn_cartpole();
        c.seeds = vec![0];
        assert_eq!(cells(&c).len(), 8);
        c.quant.enabled = true;
        assert_eq!(cells(&c).len(), 16);
        c.seeds = vec![0, 1, 2];
        assert_eq!(cells(&c).len(), 48);
    }

    #[test]
    fn cell_overrides() {
        let mut c = PipelineConfig::dqn_cartpole();
        c.quant.enabled = true;
        let cell = Cell {
            variant: Variant::Quantized,
            level: 0.0,
            seed: 4,
        };
        let cc = cell_config(&c, &cell);
        assert_eq!(cc.pruning.target, 0.0);
        assert!(cc.quant.enabled);
        let cell = Cell {
            variant: Variant::Pruned,
            level: 0.95,
            seed: 4,
        };
        let cc = cell_config(&c, &cell);
        assert_eq!(cc.pruning.target, 0.95);
        assert!(!cc.quant.enabled);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }
}
