//! Reference computations shared by the integration tests, written from the
//! definitions without calling into the library's numerics.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tda_core::model::{Activation, Example, FeedForwardLm, ModelConfig};
use tda_core::params::ParamVector;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central difference refined by one Richardson step; error O(h⁴).
pub fn fd_derivative(f: &mut dyn FnMut(f64) -> f64, h: f64) -> f64 {
    let coarse = (f(h) - f(-h)) / (2.0 * h);
    let fine = (f(h / 2.0) - f(-h / 2.0)) / h;
    (4.0 * fine - coarse) / 3.0
}

pub fn fd_partial(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut y = x.to_vec();
    fd_derivative(
        &mut |t| {
            y[i] = x[i] + t;
            f(&y)
        },
        h,
    )
}

/// Relative error with a floor so that two near-zero values compare as equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-9 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn pearson_ref(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

pub fn small_config(rng: &mut impl Rng) -> ModelConfig {
    ModelConfig {
        vocab_size: rng.gen_range(8..=12),
        context_window: rng.gen_range(4..=5),
        embed_dim: rng.gen_range(2..=3),
        hidden_dim: rng.gen_range(3..=5),
        n_hidden_layers: rng.gen_range(1..=2),
        activation: Activation::Tanh,
        seed: rng.gen(),
    }
}

/// Initial parameters plus uniform noise, so that no coordinate sits at a
/// symmetric point of the loss.
pub fn perturbed(model: &FeedForwardLm, rng: &mut impl Rng, amp: f64) -> ParamVector<f64> {
    let mut p = model.init_params::<f64>();
    p.values_mut().iter_mut().for_each(|x| *x += rng.gen_range(-amp..amp));
    p
}

pub fn random_example(rng: &mut impl Rng, vocab: usize) -> Example {
    let prompt: Vec<usize> = (0..rng.gen_range(1..=5)).map(|_| rng.gen_range(1..vocab)).collect();
    let answer: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..vocab)).collect();
    Example::from_parts(&prompt, &answer)
}

pub fn random_batch(rng: &mut impl Rng, vocab: usize, n: usize) -> Vec<Example> {
    (0..n).map(|_| random_example(rng, vocab)).collect()
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}
