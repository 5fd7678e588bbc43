//! Unlearning hyperparameter sweep: an optimizer grid at a fixed learning
//! rate, a learning-rate grid with a fixed optimizer, and per-epoch
//! trajectories for each unlearning batch size.

use std::path::PathBuf;

use log::warn;
use serde::{Deserialize, Serialize};

use tda_core::attribution::{Cadence, InfluenceScore, UnlearnConfig};
use tda_core::optim::{OptimizerConfig, OptimizerFamily};
use tda_core::partition::BatchSize;
use tda_core::stats::{correlation_report, CorrelationReport, ScoreTable};

use crate::config::Method;
use crate::error::{CliError, CliResult};
use crate::pipeline::{csv_err, score_table, truth_table, write_json, Runner, SeedInputs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    Optimizer,
    LearningRate,
    BatchSize,
}

impl Grid {
    pub fn name(self) -> &'static str {
        match self {
            Grid::Optimizer => "optimizer",
            Grid::LearningRate => "learning_rate",
            Grid::BatchSize => "batch_size",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub grid: Grid,
    pub method: Method,
    pub optimizer: OptimizerFamily,
    pub learning_rate: f64,
    pub batch_size: BatchSize,
    pub epochs: usize,
}

impl Cell {
    pub fn label(&self) -> String {
        format!(
            "{}_{}_{}_lr{:e}_bs{}_ep{}",
            self.grid.name(),
            self.method.name(),
            self.optimizer.name(),
            self.learning_rate,
            self.batch_size,
            self.epochs
        )
    }

    fn unlearn_config(&self, base: &UnlearnConfig) -> UnlearnConfig {
        UnlearnConfig {
            optimizer: OptimizerConfig { family: self.optimizer, learning_rate: self.learning_rate, ..base.optimizer.clone() },
            batch_size: self.batch_size,
            epochs: self.epochs,
            cadence: Cadence::PerEpoch,
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub reports: Vec<CorrelationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub config_hash: String,
    pub cell: Cell,
    pub seeds: Vec<u64>,
    /// Correlations of the final scores, one per metric.
    pub reports: Vec<CorrelationReport>,
    /// Filled for the batch-size grid only.
    pub trajectory: Vec<EpochReport>,
    /// Why the cell has no reports, if it failed.
    pub error: Option<String>,
}

/// All cells of the sweep, in a fixed order.
pub fn plan(runner: &Runner) -> CliResult<Vec<Cell>> {
    let s = &runner.cfg.sweep;
    let mut cells = Vec::new();
    for &method in &s.methods {
        let base = match method {
            Method::Untrac => &runner.cfg.unlearn.untrac,
            Method::UntracInv => &runner.cfg.unlearn.untrac_inv,
            Method::Baseline(_) => {
                return Err(CliError::Usage(format!("sweep.methods: {method} has no unlearning hyperparameters")))
            }
        };
        let cell = |grid, optimizer, learning_rate, batch_size, epochs| Cell {
            grid,
            method,
            optimizer,
            learning_rate,
            batch_size,
            epochs,
        };
        for &f in &s.optimizers {
            cells.push(cell(Grid::Optimizer, f, s.base_learning_rate, base.batch_size, base.epochs));
        }
        for &lr in &s.learning_rates {
            cells.push(cell(Grid::LearningRate, s.base_optimizer, lr, base.batch_size, base.epochs));
        }
        for &b in &s.batch_sizes {
            cells.push(cell(Grid::BatchSize, s.base_optimizer, s.base_learning_rate, b, s.epochs));
        }
    }
    Ok(cells)
}

struct SeedTruth {
    inputs: SeedInputs,
    train_names: Vec<String>,
    test_names: Vec<String>,
    truth: ScoreTable,
}

fn value_at_epoch(s: &InfluenceScore, epoch: usize) -> Option<f64> {
    s.trajectory.iter().find(|p| (p.epoch - epoch as f64).abs() < 1e-9).map(|p| p.cumulative_influence)
}

fn run_cell(runner: &Runner, cell: &Cell, seeds: &[SeedTruth]) -> CliResult<CellResult> {
    let base = match cell.method {
        Method::Untrac => &runner.cfg.unlearn.untrac,
        _ => &runner.cfg.unlearn.untrac_inv,
    };
    let ucfg = cell.unlearn_config(base);
    let mut scores = Vec::new();
    for s in seeds {
        scores.push(runner.run_method(cell.method, &s.inputs, Some(&ucfg))?.scores);
    }
    let path = runner.sweep_dir();
    let tables = |pick: &dyn Fn(&InfluenceScore) -> Option<f64>| -> CliResult<Vec<(ScoreTable, ScoreTable)>> {
        seeds
            .iter()
            .zip(&scores)
            .map(|(s, sc)| {
                let mut at = sc.clone();
                for x in &mut at {
                    x.value = pick(x).ok_or_else(|| {
                        CliError::Core(tda_core::Error::Numerical {
                            context: format!("unlearning {} for {}", x.train_dataset, x.test_dataset),
                            detail: "no value at this epoch; the run diverged earlier".into(),
                        })
                    })?;
                }
                Ok((score_table(&at, &s.train_names, &s.test_names, &path)?, s.truth.clone()))
            })
            .collect()
    };
    let metrics = &runner.cfg.eval.metrics;
    let reports_for = |runs: &[(ScoreTable, ScoreTable)]| -> CliResult<Vec<CorrelationReport>> {
        metrics.iter().map(|&m| Ok(correlation_report(cell.method.name(), runs, m)?)).collect()
    };
    let reports = reports_for(&tables(&|x| Some(x.value))?)?;
    let mut trajectory = Vec::new();
    if cell.grid == Grid::BatchSize {
        for epoch in 1..=cell.epochs {
            let r = tables(&|x| value_at_epoch(x, epoch)).and_then(|t| reports_for(&t));
            trajectory.push(match r {
                Ok(reports) => EpochReport { epoch, reports, error: None },
                Err(e) => EpochReport { epoch, reports: Vec::new(), error: Some(e.to_string()) },
            });
        }
    }
    Ok(CellResult {
        config_hash: runner.hash.clone(),
        cell: cell.clone(),
        seeds: seeds.iter().map(|s| s.inputs.seed).collect(),
        reports,
        trajectory,
        error: None,
    })
}

/// Runs every cell; a failing cell is recorded and the sweep moves on.
pub fn sweep(runner: &mut Runner) -> CliResult<Vec<CellResult>> {
    let cells = plan(runner)?;
    let mut results = Vec::new();
    runner.stage("sweep", |r| {
        let mode = r.cfg.primary_mode();
        let mut seeds = Vec::new();
        for &seed in &r.cfg.seeds {
            let inputs = r.seed_inputs(seed)?;
            let train_names: Vec<String> = inputs.train.iter().map(|d| d.name.clone()).collect();
            let test_names: Vec<String> = inputs.tests.iter().map(|d| d.name.clone()).collect();
            let gt = r.load_ground_truth(mode, seed)?;
            let truth = truth_table(&gt, &train_names, &test_names, &r.gt_dir(mode, seed))?;
            seeds.push(SeedTruth { inputs, train_names, test_names, truth });
        }
        let mut out = Vec::new();
        for cell in &cells {
            let res = run_cell(r, cell, &seeds).unwrap_or_else(|e| {
                warn!("sweep cell {} failed: {e}", cell.label());
                CellResult {
                    config_hash: r.hash.clone(),
                    cell: cell.clone(),
                    seeds: r.cfg.seeds.clone(),
                    reports: Vec::new(),
                    trajectory: Vec::new(),
                    error: Some(e.to_string()),
                }
            });
            let p = r.sweep_dir().join("cells").join(format!("{}.json", res.cell.label()));
            write_json(&p, &res)?;
            out.push(p);
            results.push(res);
        }
        out.extend(write_tables(r, &results)?);
        Ok(out)
    })?;
    if results.is_empty() {
        // stage was up to date; reload what it wrote
        for cell in &cells {
            let p = runner.sweep_dir().join("cells").join(format!("{}.json", cell.label()));
            results.push(crate::pipeline::read_json(&p)?);
        }
    }
    Ok(results)
}

fn write_tables(r: &Runner, results: &[CellResult]) -> CliResult<Vec<PathBuf>> {
    let dir = r.sweep_dir();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let cp = dir.join("cells.csv");
    let mut w = csv::Writer::from_path(&cp).map_err(csv_err(&cp))?;
    w.write_record([
        "grid", "method", "optimizer", "learning_rate", "batch_size", "epochs", "metric", "mean", "std", "status", "config_hash",
    ])
    .map_err(csv_err(&cp))?;
    for res in results {
        let c = &res.cell;
        let head = [
            c.grid.name().to_string(),
            c.method.name().to_string(),
            c.optimizer.name().to_string(),
            format!("{:e}", c.learning_rate),
            c.batch_size.to_string(),
            c.epochs.to_string(),
        ];
        match &res.error {
            Some(e) => {
                let mut rec = head.to_vec();
                rec.extend(["".into(), "".into(), "".into(), format!("failed: {e}"), r.hash.clone()]);
                w.write_record(&rec).map_err(csv_err(&cp))?;
            }
            None => {
                for rep in &res.reports {
                    let mut rec = head.to_vec();
                    rec.extend([
                        rep.metric.name().into(),
                        format!("{:.6}", rep.mean),
                        format!("{:.6}", rep.std),
                        "ok".into(),
                        r.hash.clone(),
                    ]);
                    w.write_record(&rec).map_err(csv_err(&cp))?;
                }
            }
        }
    }
    w.flush().map_err(|e| CliError::io(&cp, e))?;

    let tp = dir.join("trajectories.csv");
    let mut w = csv::Writer::from_path(&tp).map_err(csv_err(&tp))?;
    w.write_record(["method", "batch_size", "epoch", "metric", "mean", "std", "status", "config_hash"]).map_err(csv_err(&tp))?;
    for res in results.iter().filter(|res| res.cell.grid == Grid::BatchSize) {
        for ep in &res.trajectory {
            let head = [res.cell.method.name().to_string(), res.cell.batch_size.to_string(), ep.epoch.to_string()];
            match &ep.error {
                Some(e) => {
                    let mut rec = head.to_vec();
                    rec.extend(["".into(), "".into(), "".into(), format!("failed: {e}"), r.hash.clone()]);
                    w.write_record(&rec).map_err(csv_err(&tp))?;
                }
                None => {
                    for rep in &ep.reports {
                        let mut rec = head.to_vec();
                        rec.extend([
                            rep.metric.name().into(),
                            format!("{:.6}", rep.mean),
                            format!("{:.6}", rep.std),
                            "ok".into(),
                            r.hash.clone(),
                        ]);
                        w.write_record(&rec).map_err(csv_err(&tp))?;
                    }
                }
            }
        }
    }
    w.flush().map_err(|e| CliError::io(&tp, e))?;
    Ok(vec![cp, tp])
}
