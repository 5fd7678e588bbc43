//! Attribution by unlearning.
//!
//! [`untrac`] runs gradient ascent on each training dataset in turn, starting
//! from the trained parameters every time, and scores the dataset by how much
//! the test loss rises. [`untrac_inv`] runs ascent once, on the test set, and
//! scores every training dataset by how much its own loss rises.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Example, FeedForwardLm};
use crate::optim::{Direction, OptimizerConfig, OptimizerState};
use crate::params::ParamVector;
use crate::partition::{summed_loss, summed_loss_grad, BatchSize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    #[default]
    PerEpoch,
    PerStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: BatchSize,
    pub epochs: usize,
    pub seed: u64,
    /// Partition used when summing hook losses.
    pub eval_batch_size: BatchSize,
    pub cadence: Cadence,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self::untrac_default()
    }
}

impl UnlearnConfig {
    pub fn untrac_default() -> Self {
        UnlearnConfig {
            optimizer: OptimizerConfig::default(),
            batch_size: BatchSize::Fixed(1),
            epochs: 1,
            seed: 0,
            eval_batch_size: BatchSize::Fixed(1),
            cadence: Cadence::PerEpoch,
        }
    }

    pub fn inv_default() -> Self {
        UnlearnConfig { batch_size: BatchSize::Full, epochs: 5, ..Self::untrac_default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("unlearning epochs must be at least 1".into()));
        }
        self.batch_size.validate("unlearning batch_size")?;
        self.eval_batch_size.validate("eval_batch_size")?;
        if self.optimizer.grad_clip.is_some() {
            return Err(Error::Config("gradient clipping must stay off during unlearning".into()));
        }
        self.optimizer.validate()
    }
}

/// One evaluation of every hook dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub epoch: f64,
    /// Summed loss per hook dataset.
    pub losses: Vec<f64>,
    /// Accumulated first-order terms per hook, when tracked.
    pub first_order: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    /// The ascent step whose result was non-finite.
    pub step: usize,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct UnlearnTrace {
    /// Parameters at the last finite step.
    pub params: ParamVector<f64>,
    /// Point 0 is the starting parameters; later points follow the cadence.
    pub points: Vec<EvalPoint>,
    pub steps: usize,
    pub steps_per_epoch: usize,
    pub divergence: Option<Divergence>,
}

impl UnlearnTrace {
    /// `L_hook(θ_k) − L_hook(θ_0)` at every recorded point.
    pub fn deltas(&self, hook: usize) -> Vec<(f64, f64)> {
        let base = self.points[0].losses[hook];
        self.points.iter().map(|p| (p.epoch, p.losses[hook] - base)).collect()
    }
}

fn non_finite(xs: &[f64]) -> bool {
    xs.iter().any(|x| !x.is_finite())
}

/// Gradient ascent on `dataset`, evaluating the summed loss of every hook
/// dataset at the configured cadence. With `first_order` set, also
/// accumulates `∇L_hook(θ_{i−1})ᵀ(θ_i − θ_{i−1})` over steps.
///
/// Divergence is not an error: the trace stops at the last finite
/// parameters and records where it stopped.
pub fn unlearn(
    model: &FeedForwardLm,
    theta0: &ParamVector<f64>,
    dataset: &[Example],
    cfg: &UnlearnConfig,
    hooks: &[&[Example]],
    first_order: bool,
) -> Result<UnlearnTrace> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::DegenerateBatch("cannot unlearn an empty dataset".into()));
    }
    if hooks.iter().any(|h| h.is_empty()) {
        return Err(Error::DegenerateBatch("hook dataset is empty".into()));
    }
    let n = dataset.len();
    let bs = cfg.batch_size.resolve(n);
    let per_epoch = n.div_ceil(bs);
    let eval = |p: &ParamVector<f64>| -> Result<Vec<f64>> {
        hooks.iter().map(|h| summed_loss(model, p, h, cfg.eval_batch_size)).collect()
    };
    let mut params = theta0.clone();
    let start = eval(&params)?;
    if non_finite(&start) {
        return Err(Error::numerical("unlearning", "hook loss is non-finite at the starting parameters"));
    }
    let mut acc = first_order.then(|| vec![0.0; hooks.len()]);
    let mut points = vec![EvalPoint { step: 0, epoch: 0.0, losses: start, first_order: acc.clone() }];
    let mut opt = OptimizerState::new(cfg.optimizer.family, params.layout());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    let mut divergence = None;

    'epochs: for epoch in 0..cfg.epochs {
        // a single full batch is order-free, so keep dataset order for exact sums
        if per_epoch > 1 {
            order.shuffle(&mut rng);
        }
        for (b, chunk) in order.chunks(bs).enumerate() {
            let batch: Vec<Example> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let (loss, grad) = model.loss_grad(&params, &batch)?;
            if !loss.is_finite() || grad.first_non_finite().is_some() {
                divergence = Some(Divergence { step: step + 1, detail: format!("unlearning loss {loss} or its gradient is non-finite") });
                break 'epochs;
            }
            let hook_grads = match first_order {
                true => Some(
                    hooks
                        .iter()
                        .map(|h| summed_loss_grad(model, &params, h, cfg.eval_batch_size).map(|(_, g)| g))
                        .collect::<Result<Vec<_>>>()?,
                ),
                false => None,
            };
            let mut next = params.clone();
            opt.apply(&cfg.optimizer, &mut next, &grad, Direction::Ascent)?;
            if let Some((name, _)) = next.first_non_finite() {
                divergence = Some(Divergence { step: step + 1, detail: format!("parameters in {name} overflowed") });
                break 'epochs;
            }
            if let (Some(acc), Some(hg)) = (acc.as_mut(), hook_grads) {
                let delta = next.sub(&params);
                for (a, g) in acc.iter_mut().zip(&hg) {
                    *a += g.dot(&delta);
                }
            }
            params = next;
            step += 1;
            let end_of_epoch = b + 1 == per_epoch;
            if cfg.cadence == Cadence::PerStep || end_of_epoch {
                let losses = eval(&params)?;
                if non_finite(&losses) {
                    divergence = Some(Divergence { step, detail: "hook loss overflowed".into() });
                    break 'epochs;
                }
                let frac = epoch as f64 + (b + 1) as f64 / per_epoch as f64;
                points.push(EvalPoint { step, epoch: frac, losses, first_order: acc.clone() });
            }
        }
    }
    if let Some(d) = &divergence {
        log::warn!("unlearning diverged at step {}: {}", d.step, d.detail);
        // score from the last finite parameters when they were not yet evaluated
        if points.last().map(|p| p.step) != Some(step) {
            let losses = eval(&params)?;
            if !non_finite(&losses) {
                let epoch = step as f64 / per_epoch as f64;
                points.push(EvalPoint { step, epoch, losses, first_order: acc.clone() });
            }
        }
    }
    Ok(UnlearnTrace { params, points, steps: step, steps_per_epoch: per_epoch, divergence })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub epoch: f64,
    pub step: usize,
    pub cumulative_influence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceScore {
    pub method: String,
    pub train_dataset: String,
    pub test_dataset: String,
    pub value: f64,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Step at which unlearning diverged, if it did.
    pub diverged_at: Option<usize>,
    /// Whether unlearning raised the unlearned dataset's own loss within
    /// the first epoch; `None` when not checked.
    pub self_influence_positive: Option<bool>,
    pub seed: u64,
    pub config_hash: String,
}

impl InfluenceScore {
    pub fn scalar(method: &str, train: &str, test: &str, value: f64, seed: u64) -> Self {
        InfluenceScore {
            method: method.into(),
            train_dataset: train.into(),
            test_dataset: test.into(),
            value,
            trajectory: vec![TrajectoryPoint { epoch: 0.0, step: 0, cumulative_influence: 0.0 }],
            diverged_at: None,
            self_influence_positive: None,
            seed,
            config_hash: String::new(),
        }
    }
}

/// Scores plus the number of unlearning runs that produced them.
#[derive(Clone, Debug)]
pub struct Attribution {
    pub scores: Vec<InfluenceScore>,
    pub unlearning_runs: usize,
    pub ascent_steps: usize,
}

fn score_from_trace(
    method: &str,
    trace: &UnlearnTrace,
    hook: usize,
    train: &str,
    test: &str,
    seed: u64,
    first_order: bool,
) -> InfluenceScore {
    let trajectory: Vec<TrajectoryPoint> = trace
        .points
        .iter()
        .map(|p| {
            let v = match first_order {
                true => p.first_order.as_ref().expect("first-order tracking")[hook],
                false => p.losses[hook] - trace.points[0].losses[hook],
            };
            TrajectoryPoint { epoch: p.epoch, step: p.step, cumulative_influence: v }
        })
        .collect();
    InfluenceScore {
        method: method.into(),
        train_dataset: train.into(),
        test_dataset: test.into(),
        value: trajectory.last().map_or(0.0, |t| t.cumulative_influence),
        trajectory,
        diverged_at: trace.divergence.as_ref().map(|d| d.step),
        self_influence_positive: None,
        seed,
        config_hash: String::new(),
    }
}

fn check_inputs(train: &[Dataset], tests: &[Dataset]) -> Result<()> {
    if train.is_empty() || tests.is_empty() {
        return Err(Error::Config("attribution needs at least one training and one test dataset".into()));
    }
    for d in train.iter().chain(tests) {
        if d.is_empty() {
            return Err(Error::DegenerateBatch(format!("dataset {} is empty", d.name)));
        }
    }
    Ok(())
}

fn untrac_impl(
    model: &FeedForwardLm,
    theta0: &ParamVector<f64>,
    train: &[Dataset],
    tests: &[Dataset],
    cfg: &UnlearnConfig,
    first_order: bool,
) -> Result<Attribution> {
    check_inputs(train, tests)?;
    cfg.validate()?;
    let method = if first_order { "untrac_approx" } else { "untrac" };
    let runs: Vec<Result<(Vec<InfluenceScore>, usize)>> = train
        .par_iter()
        .map(|z| {
            // the dataset itself rides along as the last hook for the self-influence check
            let mut hooks: Vec<&[Example]> = tests.iter().map(|t| t.examples.as_slice()).collect();
            hooks.push(&z.examples);
            let trace = unlearn(model, theta0, &z.examples, cfg, &hooks, first_order)?;
            let own = tests.len();
            let first_epoch = trace.points.iter().find(|p| p.step > 0 && p.step <= trace.steps_per_epoch);
            let self_ok = first_epoch.map(|p| p.losses[own] > trace.points[0].losses[own]);
            if self_ok == Some(false) {
                log::warn!("{method}: unlearning {} did not raise its own loss within the first epoch", z.name);
            }
            let scores = tests
                .iter()
                .enumerate()
                .map(|(h, t)| {
                    let mut s = score_from_trace(method, &trace, h, &z.name, &t.name, cfg.seed, first_order);
                    s.self_influence_positive = self_ok;
                    s
                })
                .collect();
            Ok((scores, trace.steps))
        })
        .collect();
    let mut scores = Vec::new();
    let mut steps = 0;
    for r in runs {
        let (s, k) = r?;
        scores.extend(s);
        steps += k;
    }
    Ok(Attribution { scores, unlearning_runs: train.len(), ascent_steps: steps })
}

fn inv_impl(
    model: &FeedForwardLm,
    theta0: &ParamVector<f64>,
    train: &[Dataset],
    tests: &[Dataset],
    cfg: &UnlearnConfig,
    first_order: bool,
) -> Result<Attribution> {
    check_inputs(train, tests)?;
    cfg.validate()?;
    let method = if first_order { "inv_approx" } else { "untrac_inv" };
    let hooks: Vec<&[Example]> = train.iter().map(|d| d.examples.as_slice()).collect();
    let mut scores = Vec::new();
    let mut steps = 0;
    for t in tests {
        let trace = unlearn(model, theta0, &t.examples, cfg, &hooks, first_order)?;
        steps += trace.steps;
        for (h, z) in train.iter().enumerate() {
            scores.push(score_from_trace(method, &trace, h, &z.name, &t.name, cfg.seed, first_order));
        }
    }
    Ok(Attribution { scores, unlearning_runs: tests.len(), ascent_steps: steps })
}

/// One unlearning run per training dataset, each from a fresh copy of θ_0;
/// influence is the rise in summed test loss.
pub fn untrac(
    model: &FeedForwardLm,
    theta0: &ParamVector<f64>,
    train: &[Dataset],
    tests: &[Dataset],
    cfg: &UnlearnConfig,
) -> Result<Attribution> {
    untrac_impl(model, theta0, train, tests, cfg, false)
}

/// One unlearning run on each test dataset; influence on a training dataset
/// is the rise in its summed loss.
pub fn untrac_inv(
    model: &FeedForwardLm,
    theta0: &ParamVector<f64>,
    train: &[Dataset],
    tests: &[Dataset],
    cfg: &UnlearnConfig,
) -> Result<Attribution> {
    inv_impl(model, theta0, train, tests, cfg, false)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstOrderVariant {
    UntracApprox,
    InvApprox,
}

/// Same trajectories as [`untrac`] / [`untrac_inv`], scored by the
/// accumulated gradient-times-step terms instead of loss differences.
pub fn first_order_influence(
    model: &FeedForwardLm,
    theta0: &ParamVector<f64>,
    train: &[Dataset],
    tests: &[Dataset],
    cfg: &UnlearnConfig,
    variant: FirstOrderVariant,
) -> Result<Attribution> {
    match variant {
        FirstOrderVariant::UntracApprox => untrac_impl(model, theta0, train, tests, cfg, true),
        FirstOrderVariant::InvApprox => inv_impl(model, theta0, train, tests, cfg, true),
    }
}
