//! Gradient-similarity and influence-function baselines.
//!
//! Everything here works on aggregate gradients: the gradient of a dataset is
//! the sum of its per-batch mean-loss gradients. Because the dot product is
//! bilinear, the double sum over train and test examples collapses to one dot
//! product of aggregates.

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{Attribution, InfluenceScore};
use crate::checkpoint::CheckpointSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hvp::{HvpMethod, LinearOperator, ModelHessian};
use crate::model::{Example, FeedForwardLm};
use crate::params::{axpy, dot, norm, ParamVector};
use crate::partition::{summed_loss_grad, BatchSize};
use crate::training::Snapshot;

/// Aggregate gradient of one dataset.
#[derive(Clone, Debug)]
pub struct GradientSummary {
    pub dataset: String,
    pub aggregate: ParamVector<f64>,
    pub norm: f64,
    /// Per-batch gradients, kept only when asked for.
    pub per_batch: Option<Vec<ParamVector<f64>>>,
}

impl GradientSummary {
    pub fn compute(
        model: &FeedForwardLm,
        params: &ParamVector<f64>,
        dataset: &Dataset,
        batch: BatchSize,
        keep_batches: bool,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::DegenerateBatch(format!("dataset {} is empty", dataset.name)));
        }
        let (aggregate, per_batch) = if keep_batches {
            let b = batch.resolve(dataset.len());
            let grads = dataset
                .examples
                .chunks(b)
                .map(|c| model.loss_grad(params, c).map(|(_, g)| g))
                .collect::<Result<Vec<_>>>()?;
            let mut sum = params.zeros_like();
            for g in &grads {
                sum.axpy(1.0, g);
            }
            (sum, Some(grads))
        } else {
            (summed_loss_grad(model, params, &dataset.examples, batch)?.1, None)
        };
        if let Some((name, i)) = aggregate.first_non_finite() {
            return Err(Error::numerical(
                format!("gradient of {}", dataset.name),
                format!("non-finite value in tensor {name} at index {i}"),
            ));
        }
        let norm = aggregate.norm();
        Ok(GradientSummary { dataset: dataset.name.clone(), aggregate, norm, per_batch })
    }
}

/// Partitions used to aggregate gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientOptions {
    pub train_batch: BatchSize,
    pub test_batch: BatchSize,
    /// Score GradCos as the sum of per-batch-pair cosines.
    pub pairwise_cos: bool,
}

impl Default for GradientOptions {
    fn default() -> Self {
        GradientOptions { train_batch: BatchSize::Fixed(1), test_batch: BatchSize::Fixed(1), pairwise_cos: false }
    }
}

pub fn dot_summaries(a: &GradientSummary, b: &GradientSummary) -> f64 {
    a.aggregate.dot(&b.aggregate)
}

pub fn cos_summaries(a: &GradientSummary, b: &GradientSummary) -> Result<f64> {
    if a.norm == 0.0 || b.norm == 0.0 {
        let which = if a.norm == 0.0 { &a.dataset } else { &b.dataset };
        return Err(Error::Undefined(format!("cosine: aggregate gradient of {which} is zero")));
    }
    Ok((dot_summaries(a, b) / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

/// Sum of cosines over all (train batch, test batch) pairs.
pub fn pairwise_cos_summaries(a: &GradientSummary, b: &GradientSummary) -> Result<f64> {
    let (Some(pa), Some(pb)) = (&a.per_batch, &b.per_batch) else {
        return Err(Error::State("pairwise cosine needs per-batch gradients".into()));
    };
    let mut total = 0.0;
    for ga in pa {
        for gb in pb {
            let (na, nb) = (ga.norm(), gb.norm());
            if na == 0.0 || nb == 0.0 {
                return Err(Error::Undefined("cosine: a per-batch gradient is zero".into()));
            }
            total += ga.dot(gb) / (na * nb);
        }
    }
    Ok(total)
}

pub fn grad_dot(
    model: &FeedForwardLm,
    params: &ParamVector<f64>,
    train: &Dataset,
    test: &Dataset,
    opts: &GradientOptions,
) -> Result<f64> {
    let a = GradientSummary::compute(model, params, train, opts.train_batch, false)?;
    let b = GradientSummary::compute(model, params, test, opts.test_batch, false)?;
    Ok(dot_summaries(&a, &b))
}

pub fn grad_cos(
    model: &FeedForwardLm,
    params: &ParamVector<f64>,
    train: &Dataset,
    test: &Dataset,
    opts: &GradientOptions,
) -> Result<f64> {
    let keep = opts.pairwise_cos;
    let a = GradientSummary::compute(model, params, train, opts.train_batch, keep)?;
    let b = GradientSummary::compute(model, params, test, opts.test_batch, keep)?;
    if keep {
        pairwise_cos_summaries(&a, &b)
    } else {
        cos_summaries(&a, &b)
    }
}

/// `Σ_t η_t · grad_dot(θ_t)` over the given snapshots.
pub fn tracin(
    model: &FeedForwardLm,
    snapshots: &[Snapshot],
    train: &Dataset,
    test: &Dataset,
    opts: &GradientOptions,
) -> Result<f64> {
    if snapshots.is_empty() {
        return Err(Error::Config("tracin needs at least one checkpoint".into()));
    }
    let mut total: Option<f64> = None;
    for s in snapshots {
        let term = s.learning_rate * grad_dot(model, &s.params, train, test, opts)?;
        total = Some(total.map_or(term, |t| t + term));
    }
    Ok(total.unwrap())
}

/// Reads every entry of a checkpoint manifest into memory.
pub fn load_snapshots(set: &CheckpointSet) -> Result<Vec<Snapshot>> {
    if set.entries.is_empty() {
        return Err(Error::Manifest { entry: "entries".into(), detail: "checkpoint set is empty".into() });
    }
    (0..set.entries.len())
        .map(|i| {
            let (_, params) = set.load_entry(i)?;
            let e = &set.entries[i];
            Ok(Snapshot { step: e.step, learning_rate: e.learning_rate, params })
        })
        .collect()
}

fn start_vector(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Estimate of the largest eigenvalue magnitude by power iteration.
pub fn power_iteration<O: LinearOperator<f64>>(op: &O, iters: usize, seed: u64) -> Result<f64> {
    if iters == 0 {
        return Err(Error::Config("power iteration needs at least one step".into()));
    }
    let mut v = start_vector(op.dim(), seed);
    let mut est = 0.0;
    for _ in 0..iters {
        let w = op.apply(&v)?;
        est = norm(&w);
        if !est.is_finite() {
            return Err(Error::numerical("power iteration", "non-finite operator output"));
        }
        if est == 0.0 {
            return Ok(0.0);
        }
        v = w.into_iter().map(|x| x / est).collect();
    }
    Ok(est)
}

/// `(H + λI)⁻¹ v` by the truncated Neumann recurrence
/// `r_k = v + (I − (H + λI)/s) r_{k−1}`, returning `r_iters / s`.
pub fn lissa_ihvp<O: LinearOperator<f64>>(op: &O, v: &[f64], iters: usize, damping: f64, scale: f64) -> Result<Vec<f64>> {
    lissa_trace(op, v, iters, damping, scale, |_, _| {})
}

/// [`lissa_ihvp`] that reports each scaled iterate `r_k / s` to `observe`.
pub fn lissa_trace<O: LinearOperator<f64>>(
    op: &O,
    v: &[f64],
    iters: usize,
    damping: f64,
    scale: f64,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    if iters == 0 {
        return Err(Error::Config("lissa needs at least one iteration".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) || !(damping >= 0.0 && damping.is_finite()) {
        return Err(Error::Config(format!("lissa needs a positive scale and non-negative damping, got {scale} and {damping}")));
    }
    if v.len() != op.dim() {
        return Err(Error::dim("lissa", format!("vector has {} entries, operator {}", v.len(), op.dim())));
    }
    let limit = 1e3 * norm(v);
    let mut r = v.to_vec();
    for k in 1..=iters {
        let hr = op.apply(&r)?;
        let next: Vec<f64> = (0..r.len()).map(|i| v[i] + r[i] - (hr[i] + damping * r[i]) / scale).collect();
        r = next;
        // the scaled iterate is the running estimate; for a damped PSD operator
        // it stays below ‖v‖/λ, so a 1e3 blow-up means the series diverges
        let x: Vec<f64> = r.iter().map(|x| x / scale).collect();
        let n = norm(&x);
        if !n.is_finite() || n > limit {
            return Err(Error::Divergence {
                method: "lissa",
                advice: format!(
                    "estimate norm {n:.3e} exceeded 1e3 times the input norm at iteration {k}; increase the scale or the damping"
                ),
            });
        }
        observe(k, &x);
        if k == iters {
            return Ok(x);
        }
    }
    unreachable!()
}

/// Leading eigenpairs of a symmetric operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowRankHessian {
    /// Sorted by decreasing magnitude.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal, in the order of `eigenvalues`.
    pub eigenvectors: Vec<Vec<f64>>,
    pub damping: f64,
    /// The Krylov basis broke down before `n_iters` vectors were built.
    pub truncated: bool,
}

impl LowRankHessian {
    /// `Σ_k (aᵀv_k)(bᵀv_k) / (λ_k + damping)`.
    pub fn inverse_form(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (lam, v) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            let d = lam + self.damping;
            if d == 0.0 {
                return Err(Error::numerical("low-rank inverse", format!("eigenvalue {lam} cancels the damping")));
            }
            total += dot(a, v) * dot(b, v) / d;
        }
        Ok(total)
    }
}

/// Arnoldi iteration with modified Gram-Schmidt applied twice, followed by a
/// symmetric eigendecomposition of the projected matrix.
pub fn arnoldi_eigs<O: LinearOperator<f64>>(
    op: &O,
    n_iters: usize,
    top_k: usize,
    damping: f64,
    seed: u64,
) -> Result<LowRankHessian> {
    let dim = op.dim();
    if top_k == 0 || n_iters < top_k {
        return Err(Error::Config(format!("arnoldi needs 1 <= top_k <= n_iters, got top_k {top_k}, n_iters {n_iters}")));
    }
    if n_iters > dim {
        return Err(Error::Config(format!("arnoldi: {n_iters} iterations exceed the dimension {dim}")));
    }
    let mut basis = vec![start_vector(dim, seed)];
    let mut h = vec![vec![0.0; n_iters]; n_iters];
    let mut truncated = false;
    for j in 0..n_iters {
        let mut w = op.apply(&basis[j])?;
        for _ in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let c = dot(q, &w);
                h[i][j] += c;
                axpy(&mut w, -c, q);
            }
        }
        if j + 1 == n_iters {
            break;
        }
        let beta = norm(&w);
        if !beta.is_finite() {
            return Err(Error::numerical("arnoldi", "non-finite basis vector"));
        }
        if beta < 1e-12 {
            truncated = true;
            break;
        }
        h[j + 1][j] = beta;
        basis.push(w.into_iter().map(|x| x / beta).collect());
    }
    let m = basis.len();
    let proj = nalgebra::DMatrix::from_fn(m, m, |i, j| 0.5 * (h[i][j] + h[j][i]));
    let eig = nalgebra::SymmetricEigen::new(proj);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
    order.truncate(top_k.min(m));
    let mut eigenvalues = Vec::with_capacity(order.len());
    let mut eigenvectors = Vec::with_capacity(order.len());
    for &k in &order {
        let mut v = vec![0.0; dim];
        for (i, q) in basis.iter().enumerate() {
            axpy(&mut v, eig.eigenvectors[(i, k)], q);
        }
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        eigenvalues.push(eig.eigenvalues[k]);
        eigenvectors.push(v);
    }
    Ok(LowRankHessian { eigenvalues, eigenvectors, damping, truncated })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IhvpMethod {
    #[default]
    Lissa,
    Arnoldi,
}

/// How the training-side gradient is normalized before the bilinear form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainNormalization {
    None,
    #[default]
    Aggregate,
    /// Each per-batch gradient is scaled to unit length before summing.
    PerBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HifConfig {
    pub damping: f64,
    pub lissa_iters: usize,
    /// `None` picks ten times a power-iteration estimate of the largest
    /// eigenvalue magnitude.
    pub lissa_scale: Option<f64>,
    pub power_iters: usize,
    pub arnoldi_iters: usize,
    pub top_k: usize,
    pub hessian_sample: usize,
    pub normalization: TrainNormalization,
    pub hvp: HvpMethod,
    pub seed: u64,
}

impl Default for HifConfig {
    fn default() -> Self {
        HifConfig {
            damping: 0.01,
            lissa_iters: 10,
            lissa_scale: None,
            power_iters: 5,
            arnoldi_iters: 25,
            top_k: 25,
            hessian_sample: 256,
            normalization: TrainNormalization::Aggregate,
            hvp: HvpMethod::DoubleBackward,
            seed: 0,
        }
    }
}

/// Seeded sample (without replacement) from the union of the given datasets.
pub fn hessian_sample(datasets: &[Dataset], n: usize, seed: u64) -> Result<Vec<Example>> {
    let mut pool: Vec<&Example> = datasets.iter().flat_map(|d| &d.examples).collect();
    if pool.is_empty() {
        return Err(Error::DegenerateBatch("no examples to estimate the Hessian from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(n.max(1));
    Ok(pool.into_iter().cloned().collect())
}

/// The train-side vector of the bilinear form.
pub fn normalized_train_gradient(s: &GradientSummary, how: TrainNormalization) -> Result<Vec<f64>> {
    match how {
        TrainNormalization::None => Ok(s.aggregate.values().to_vec()),
        TrainNormalization::Aggregate => {
            if s.norm == 0.0 {
                return Err(Error::Undefined(format!("normalization: aggregate gradient of {} is zero", s.dataset)));
            }
            Ok(s.aggregate.values().iter().map(|x| x / s.norm).collect())
        }
        TrainNormalization::PerBatch => {
            let batches = s.per_batch.as_ref().ok_or_else(|| Error::State("per-batch normalization needs per-batch gradients".into()))?;
            let mut out = vec![0.0; s.aggregate.len()];
            for g in batches {
                let n = g.norm();
                if n == 0.0 {
                    return Err(Error::Undefined(format!("normalization: a batch gradient of {} is zero", s.dataset)));
                }
                axpy(&mut out, 1.0 / n, g.values());
            }
            Ok(out)
        }
    }
}

/// HIF scores `[test][train]` against a fixed Hessian operator.
pub fn hif_scores<O: LinearOperator<f64>>(
    op: &O,
    method: IhvpMethod,
    trains: &[GradientSummary],
    tests: &[GradientSummary],
    cfg: &HifConfig,
) -> Result<Vec<Vec<f64>>> {
    let train_vecs = trains.iter().map(|s| normalized_train_gradient(s, cfg.normalization)).collect::<Result<Vec<_>>>()?;
    match method {
        IhvpMethod::Lissa => {
            let scale = match cfg.lissa_scale {
                Some(s) => s,
                None => 10.0 * power_iteration(op, cfg.power_iters, cfg.seed)?,
            };
            if scale == 0.0 {
                return Err(Error::numerical("lissa", "Hessian estimate is zero; set an explicit scale"));
            }
            tests
                .par_iter()
                .map(|t| {
                    let x = lissa_ihvp(op, t.aggregate.values(), cfg.lissa_iters, cfg.damping, scale)?;
                    Ok(train_vecs.iter().map(|g| dot(g, &x)).collect())
                })
                .collect()
        }
        IhvpMethod::Arnoldi => {
            let low = arnoldi_eigs(op, cfg.arnoldi_iters, cfg.top_k, cfg.damping, cfg.seed)?;
            if low.truncated {
                log::warn!("arnoldi basis broke down after {} vectors", low.eigenvalues.len());
            }
            tests
                .iter()
                .map(|t| train_vecs.iter().map(|g| low.inverse_form(g, t.aggregate.values())).collect())
                .collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    #[serde(rename = "graddot")]
    GradDot,
    #[serde(rename = "gradcos")]
    GradCos,
    #[serde(rename = "tracin")]
    TracIn,
    HifLissa,
    HifArnoldi,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 5] =
        [BaselineMethod::GradDot, BaselineMethod::GradCos, BaselineMethod::TracIn, BaselineMethod::HifLissa, BaselineMethod::HifArnoldi];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::GradDot => "graddot",
            BaselineMethod::GradCos => "gradcos",
            BaselineMethod::TracIn => "tracin",
            BaselineMethod::HifLissa => "hif-lissa",
            BaselineMethod::HifArnoldi => "hif-arnoldi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

fn summaries(
    model: &FeedForwardLm,
    params: &ParamVector<f64>,
    sets: &[Dataset],
    batch: BatchSize,
    keep: bool,
) -> Result<Vec<GradientSummary>> {
    sets.par_iter().map(|d| GradientSummary::compute(model, params, d, batch, keep)).collect()
}

/// Scores every (train, test) pair with one baseline. `snapshots` is only
/// consulted by TracIn; the other methods use `theta0`.
#[allow(clippy::too_many_arguments)]
pub fn baseline_attribution(
    method: BaselineMethod,
    model: &FeedForwardLm,
    theta0: &ParamVector<f64>,
    snapshots: &[Snapshot],
    trains: &[Dataset],
    tests: &[Dataset],
    grad: &GradientOptions,
    hif: &HifConfig,
    seed: u64,
) -> Result<Attribution> {
    let table: Vec<Vec<f64>> = match method {
        BaselineMethod::GradDot | BaselineMethod::GradCos => {
            let keep = method == BaselineMethod::GradCos && grad.pairwise_cos;
            let a = summaries(model, theta0, trains, grad.train_batch, keep)?;
            let b = summaries(model, theta0, tests, grad.test_batch, keep)?;
            b.iter()
                .map(|t| {
                    a.iter()
                        .map(|z| match (method, keep) {
                            (BaselineMethod::GradDot, _) => Ok(dot_summaries(z, t)),
                            (_, true) => pairwise_cos_summaries(z, t),
                            _ => cos_summaries(z, t),
                        })
                        .collect()
                })
                .collect::<Result<_>>()?
        }
        BaselineMethod::TracIn => tests
            .par_iter()
            .map(|t| trains.iter().map(|z| tracin(model, snapshots, z, t, grad)).collect())
            .collect::<Result<_>>()?,
        BaselineMethod::HifLissa | BaselineMethod::HifArnoldi => {
            let keep = hif.normalization == TrainNormalization::PerBatch;
            let a = summaries(model, theta0, trains, grad.train_batch, keep)?;
            let b = summaries(model, theta0, tests, grad.test_batch, false)?;
            let sample = hessian_sample(trains, hif.hessian_sample, hif.seed)?;
            let op = ModelHessian::new(model, theta0, &sample, hif.hvp)?;
            let ihvp = if method == BaselineMethod::HifLissa { IhvpMethod::Lissa } else { IhvpMethod::Arnoldi };
            hif_scores(&op, ihvp, &a, &b, hif)?
        }
    };
    let mut scores = Vec::with_capacity(trains.len() * tests.len());
    for (t, row) in tests.iter().zip(&table) {
        for (z, &v) in trains.iter().zip(row) {
            scores.push(InfluenceScore::scalar(method.name(), &z.name, &t.name, v, seed));
        }
    }
    Ok(Attribution { scores, unlearning_runs: 0, ascent_steps: 0 })
}
