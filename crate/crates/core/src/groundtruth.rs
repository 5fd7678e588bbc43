//! Leave-dataset-out ground truth: retrain without a dataset and measure how
//! much the summed test loss changes.

use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::FeedForwardLm;
use crate::params::ParamVector;
use crate::partition::{summed_loss, BatchSize};
use crate::training::{train_excluding, RemovalMode, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub excluded: String,
    pub mode: RemovalMode,
    /// Where the counterfactual parameters were stored, when persisted.
    pub checkpoint: Option<PathBuf>,
    /// `(test dataset, influence)` in the order the tests were given.
    pub influence: Vec<(String, f64)>,
    pub seed: u64,
    pub steps: usize,
    pub config_hash: String,
}

/// A counterfactual model together with its record.
#[derive(Clone, Debug)]
pub struct Counterfactual {
    pub record: GroundTruthRecord,
    pub params: ParamVector<f64>,
}

/// `Σ_j L(z'_j, θ_{−Z}) − L(z'_j, θ_0)` for each test dataset.
pub fn influence_from_params(
    model: &FeedForwardLm,
    theta0: &ParamVector<f64>,
    theta_minus: &ParamVector<f64>,
    tests: &[Dataset],
    eval_batch: BatchSize,
) -> Result<Vec<(String, f64)>> {
    tests
        .iter()
        .map(|t| {
            let after = summed_loss(model, theta_minus, &t.examples, eval_batch)?;
            let before = summed_loss(model, theta0, &t.examples, eval_batch)?;
            Ok((t.name.clone(), after - before))
        })
        .collect()
}

/// One counterfactual retraining per training dataset, run on a pool of
/// `parallel` worker threads. Each run owns its optimizer and rng, so the
/// records do not depend on `parallel`.
#[allow(clippy::too_many_arguments)]
pub fn ground_truth(
    model: &FeedForwardLm,
    init: &ParamVector<f64>,
    theta0: &ParamVector<f64>,
    datasets: &[Arc<Dataset>],
    tests: &[Dataset],
    cfg: &TrainConfig,
    mode: RemovalMode,
    eval_batch: BatchSize,
    parallel: usize,
) -> Result<Vec<Counterfactual>> {
    if parallel == 0 {
        return Err(Error::Config("parallel must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<Result<Counterfactual>> = pool.install(|| {
        datasets
            .par_iter()
            .map(|z| {
                let out = train_excluding(model, init, datasets, cfg, &z.name, mode)?;
                let influence = influence_from_params(model, theta0, &out.params, tests, eval_batch)?;
                let record = GroundTruthRecord {
                    excluded: z.name.clone(),
                    mode,
                    checkpoint: None,
                    influence,
                    seed: cfg.seed_for(&z.name),
                    steps: out.steps,
                    config_hash: String::new(),
                };
                Ok(Counterfactual { record, params: out.params })
            })
            .collect()
    });
    runs.into_iter().collect()
}
