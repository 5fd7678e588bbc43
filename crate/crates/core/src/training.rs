//! Training loop, counterfactual (leave-dataset-out) runs and resumable state.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Header};
use crate::data::{Dataset, ExclusionWeighting, MixtureSampler};
use crate::error::{Error, Result};
use crate::model::{Example, FeedForwardLm};
use crate::optim::{Direction, OptimizerConfig, OptimizerFamily, OptimizerState};
use crate::params::ParamVector;

/// How counterfactual runs derive their sampling seed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// `seed ^ fnv1a(excluded name)`: an independent fresh run.
    #[default]
    PerExcluded,
    /// Reuse the baseline seed.
    Matched,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalMode {
    /// Same step count as the baseline, sampling from the remaining mixture.
    FixedSteps,
    /// Shuffled epochs over the remaining examples; the step count shrinks
    /// in proportion to the data removed.
    FullRemoval,
}

impl RemovalMode {
    pub fn name(self) -> &'static str {
        match self {
            RemovalMode::FixedSteps => "fixed_steps",
            RemovalMode::FullRemoval => "full_removal",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSpec {
    /// Sampling weight per training dataset; `None` weights by dataset size.
    pub weights: Option<Vec<f64>>,
    pub exclusion: ExclusionWeighting,
}

impl MixtureSpec {
    pub fn resolve(&self, datasets: &[Arc<Dataset>]) -> Result<Vec<f64>> {
        match &self.weights {
            Some(w) if w.len() != datasets.len() => Err(Error::Config(format!(
                "{} mixture weights for {} datasets",
                w.len(),
                datasets.len()
            ))),
            Some(w) => Ok(w.clone()),
            None => Ok(datasets.iter().map(|d| d.len() as f64).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Save interval in steps; the final step is always saved.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub mixture: MixtureSpec,
    pub seed_policy: SeedPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 512,
            batch_size: 2,
            optimizer: OptimizerConfig { learning_rate: 1e-2, ..Default::default() },
            checkpoint_every: 128,
            seed: 0,
            mixture: MixtureSpec::default(),
            seed_policy: SeedPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("train.steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        self.optimizer.validate()
    }

    /// Whether a run of `total` steps saves after `step`.
    pub fn saves_at(&self, step: usize, total: usize) -> bool {
        step == total || (self.checkpoint_every > 0 && step.is_multiple_of(self.checkpoint_every))
    }

    pub fn seed_for(&self, excluded: &str) -> u64 {
        match self.seed_policy {
            SeedPolicy::PerExcluded => self.seed ^ fnv1a(excluded.as_bytes()),
            SeedPolicy::Matched => self.seed,
        }
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Everything needed to continue a run bit-identically.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub params: ParamVector<f64>,
    pub optimizer: OptimizerState<f64>,
    pub rng_position: u128,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    step: usize,
    rng_position: String,
    family: OptimizerFamily,
    optimizer_steps: u64,
}

impl TrainState {
    pub fn fresh(init: ParamVector<f64>, family: OptimizerFamily) -> Self {
        let optimizer = OptimizerState::new(family, init.layout());
        TrainState { step: 0, params: init, optimizer, rng_position: 0 }
    }

    pub fn save(&self, path: &Path, model: &FeedForwardLm) -> Result<()> {
        let family = self.optimizer.family;
        let meta = StateMeta {
            step: self.step,
            rng_position: self.rng_position.to_string(),
            family,
            optimizer_steps: self.optimizer.step_count,
        };
        let mut payload = self.params.values().to_vec();
        payload.extend(self.optimizer.to_flat());
        let header = Header {
            config: model.config().clone(),
            layout: model.layout().as_ref().clone(),
            payload_len: payload.len(),
            meta: serde_json::to_value(meta).map_err(|e| Error::Schema(e.to_string()))?,
        };
        checkpoint::save_raw(path, &header, &payload)
    }

    pub fn load(path: &Path, model: &FeedForwardLm) -> Result<Self> {
        let (header, payload) = checkpoint::load_raw(path)?;
        if &header.config != model.config() {
            return Err(Error::format(path, "training state belongs to a different model config"));
        }
        let meta: StateMeta =
            serde_json::from_value(header.meta).map_err(|e| Error::format(path, format!("state metadata: {e}")))?;
        let n = model.layout().total();
        if payload.len() < n {
            return Err(Error::format(path, "payload shorter than the parameter vector"));
        }
        let params = ParamVector::new(model.layout().clone(), payload[..n].to_vec())?;
        let mut optimizer = OptimizerState::new(meta.family, model.layout());
        optimizer.load_flat(meta.optimizer_steps, &payload[n..]).map_err(|e| Error::format(path, e.to_string()))?;
        let rng_position = meta.rng_position.parse().map_err(|_| Error::format(path, "bad rng position"))?;
        Ok(TrainState { step: meta.step, params, optimizer, rng_position })
    }
}

/// A saved parameter snapshot with the learning rate in force at that step.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub learning_rate: f64,
    pub params: ParamVector<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamVector<f64>,
    pub checkpoints: Vec<Snapshot>,
    /// Training loss of the batch used at each step (step 1 first).
    pub losses: Vec<f64>,
    pub steps: usize,
}

/// Source of training batches for [`run`].
pub trait BatchSource {
    fn next_batch(&mut self, batch_size: usize) -> Vec<Example>;
    fn position(&self) -> u128;
    fn seek(&mut self, pos: u128);
}

impl BatchSource for MixtureSampler {
    fn next_batch(&mut self, batch_size: usize) -> Vec<Example> {
        self.sample_batch(batch_size)
    }
    fn position(&self) -> u128 {
        self.rng_position()
    }
    fn seek(&mut self, pos: u128) {
        self.set_rng_position(pos)
    }
}

/// Shuffled passes over a fixed example pool; a new permutation is drawn
/// whenever the pool is exhausted. The position counts consumed examples.
pub struct EpochSource {
    pool: Vec<Example>,
    order: Vec<usize>,
    seed: u64,
    consumed: u128,
}

impl EpochSource {
    pub fn new(pool: Vec<Example>, seed: u64) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::EmptyMixture("no examples to train on".into()));
        }
        Ok(EpochSource { order: Vec::new(), pool, seed, consumed: 0 })
    }

    fn permutation(&self, epoch: u128) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.pool.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        order
    }
}

impl BatchSource for EpochSource {
    fn next_batch(&mut self, batch_size: usize) -> Vec<Example> {
        let n = self.pool.len() as u128;
        (0..batch_size)
            .map(|_| {
                let (epoch, k) = (self.consumed / n, (self.consumed % n) as usize);
                if k == 0 || self.order.is_empty() {
                    self.order = self.permutation(epoch);
                }
                self.consumed += 1;
                self.pool[self.order[k]].clone()
            })
            .collect()
    }
    fn position(&self) -> u128 {
        self.consumed
    }
    fn seek(&mut self, pos: u128) {
        self.consumed = pos;
        let n = self.pool.len() as u128;
        self.order = self.permutation(pos / n);
    }
}

/// Continues `state` until `total_steps`, calling `on_save` at every save
/// point with the losses of the steps taken so far. Returns those losses.
pub fn run(
    model: &FeedForwardLm,
    state: &mut TrainState,
    source: &mut dyn BatchSource,
    cfg: &TrainConfig,
    total_steps: usize,
    on_save: &mut dyn FnMut(&TrainState, &[f64]) -> Result<()>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    source.seek(state.rng_position);
    let mut losses = Vec::with_capacity(total_steps.saturating_sub(state.step));
    while state.step < total_steps {
        let step = state.step + 1;
        let batch = source.next_batch(cfg.batch_size);
        let (loss, grad) = model.loss_grad(&state.params, &batch)?;
        if !loss.is_finite() {
            return Err(Error::numerical(format!("training step {step}"), format!("loss is {loss}")));
        }
        state
            .optimizer
            .apply(&cfg.optimizer, &mut state.params, &grad, Direction::Descent)
            .map_err(|e| Error::numerical(format!("training step {step}"), e.to_string()))?;
        state.step = step;
        state.rng_position = source.position();
        losses.push(loss);
        if cfg.saves_at(step, total_steps) {
            on_save(state, &losses)?;
        }
    }
    Ok(losses)
}

fn run_collecting(
    model: &FeedForwardLm,
    init: &ParamVector<f64>,
    source: &mut dyn BatchSource,
    cfg: &TrainConfig,
    steps: usize,
) -> Result<TrainOutcome> {
    let mut state = TrainState::fresh(init.clone(), cfg.optimizer.family);
    let mut checkpoints = Vec::new();
    let lr = cfg.optimizer.learning_rate;
    let losses = run(model, &mut state, source, cfg, steps, &mut |s, _| {
        checkpoints.push(Snapshot { step: s.step, learning_rate: lr, params: s.params.clone() });
        Ok(())
    })?;
    Ok(TrainOutcome { params: state.params, checkpoints, losses, steps })
}

/// Trains on the full mixture of `datasets`.
pub fn train(model: &FeedForwardLm, init: &ParamVector<f64>, datasets: &[Arc<Dataset>], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let weights = cfg.mixture.resolve(datasets)?;
    let mut sampler = MixtureSampler::new(datasets.to_vec(), &weights, cfg.seed)?;
    run_collecting(model, init, &mut sampler, cfg, cfg.steps)
}

/// Step count of a full-removal counterfactual: the baseline's number of
/// passes over the data, applied to the examples that remain.
pub fn full_removal_steps(cfg: &TrainConfig, n_all: usize, n_remaining: usize) -> usize {
    ((cfg.steps as f64) * n_remaining as f64 / n_all as f64).round().max(1.0) as usize
}

/// Counterfactual model trained without `excluded`.
pub fn train_excluding(
    model: &FeedForwardLm,
    init: &ParamVector<f64>,
    datasets: &[Arc<Dataset>],
    cfg: &TrainConfig,
    excluded: &str,
    mode: RemovalMode,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let weights = cfg.mixture.resolve(datasets)?;
    let seed = cfg.seed_for(excluded);
    match mode {
        RemovalMode::FixedSteps => {
            let mut sampler = MixtureSampler::excluding(datasets, &weights, excluded, cfg.mixture.exclusion, seed)?;
            run_collecting(model, init, &mut sampler, cfg, cfg.steps)
        }
        RemovalMode::FullRemoval => {
            if !datasets.iter().any(|d| d.name == excluded) {
                return Err(Error::UnknownDataset(excluded.to_string()));
            }
            let pool: Vec<Example> =
                datasets.iter().filter(|d| d.name != excluded).flat_map(|d| d.examples.iter().cloned()).collect();
            let n_all: usize = datasets.iter().map(|d| d.len()).sum();
            let steps = full_removal_steps(cfg, n_all, pool.len().max(1));
            let mut source = EpochSource::new(pool, seed)?;
            run_collecting(model, init, &mut source, cfg, steps)
        }
    }
}
