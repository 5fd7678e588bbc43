//! Loss sums over a batch partition of a dataset.
//!
//! Attribution scores add up per-batch mean losses over a dataset split into
//! consecutive batches. With batch size `b` that sum is a weighted sum of
//! per-example losses, weight `1/|batch|` for every member of a batch, which
//! lets a whole dataset be evaluated in one forward pass.

use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{Example, FeedForwardLm};
use crate::params::ParamVector;

/// Batch size, either a fixed count or the whole dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BatchSize {
    Fixed(usize),
    Full,
}

impl BatchSize {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            BatchSize::Fixed(b) => b.min(n.max(1)),
            BatchSize::Full => n.max(1),
        }
    }

    pub fn validate(self, what: &str) -> Result<()> {
        match self {
            BatchSize::Fixed(0) => Err(Error::Config(format!("{what} must be at least 1"))),
            _ => Ok(()),
        }
    }

    /// Number of batches covering `n` examples.
    pub fn batches(self, n: usize) -> usize {
        n.div_ceil(self.resolve(n))
    }
}

impl fmt::Display for BatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSize::Fixed(b) => write!(f, "{b}"),
            BatchSize::Full => f.write_str("full"),
        }
    }
}

impl std::str::FromStr for BatchSize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(BatchSize::Full);
        }
        s.parse().map(BatchSize::Fixed).map_err(|_| Error::Config(format!("batch size `{s}` is neither an integer nor `full`")))
    }
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchSize::Fixed(b) => s.serialize_u64(*b as u64),
            BatchSize::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(BatchSize::Fixed(n as usize)),
            Raw::S(s) => s.parse().map_err(de::Error::custom),
        }
    }
}

/// Per-example weights such that `Σ_e w_e·L_e` is the sum over consecutive
/// batches of each batch's mean loss.
pub fn partition_weights(n: usize, batch: BatchSize) -> Vec<f64> {
    let b = batch.resolve(n);
    let mut w = Vec::with_capacity(n);
    for start in (0..n).step_by(b) {
        let len = b.min(n - start);
        w.extend(std::iter::repeat_n(1.0 / len as f64, len));
    }
    w
}

/// `Σ_batches L(batch, θ)` over `examples` split into consecutive batches.
pub fn summed_loss(model: &FeedForwardLm, params: &ParamVector<f64>, examples: &[Example], batch: BatchSize) -> Result<f64> {
    let losses = model.example_losses(params, examples)?;
    let w = partition_weights(examples.len(), batch);
    Ok(losses.iter().zip(&w).map(|(l, w)| l * w).sum())
}

/// Gradient of [`summed_loss`], i.e. `Σ_batches ∇L(batch, θ)`.
pub fn summed_loss_grad(
    model: &FeedForwardLm,
    params: &ParamVector<f64>,
    examples: &[Example],
    batch: BatchSize,
) -> Result<(f64, ParamVector<f64>)> {
    model.weighted_loss_grad(params, examples, &partition_weights(examples.len(), batch))
}
