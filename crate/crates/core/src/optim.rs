//! Optimizers for training (descent) and unlearning (ascent).
//!
//! Moments are always accumulated on the raw gradient; the ascent direction
//! only flips the sign of the final update. A descent run and its mirrored
//! ascent run therefore share identical preconditioner statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Layout, ParamVector};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerFamily {
    Sgd,
    SgdMomentum,
    Rmsprop,
    Adam,
    Adafactor,
}

impl OptimizerFamily {
    pub const ALL: [OptimizerFamily; 5] = [
        OptimizerFamily::Sgd,
        OptimizerFamily::SgdMomentum,
        OptimizerFamily::Rmsprop,
        OptimizerFamily::Adam,
        OptimizerFamily::Adafactor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerFamily::Sgd => "sgd",
            OptimizerFamily::SgdMomentum => "sgd_momentum",
            OptimizerFamily::Rmsprop => "rmsprop",
            OptimizerFamily::Adam => "adam",
            OptimizerFamily::Adafactor => "adafactor",
        }
    }
}

impl std::str::FromStr for OptimizerFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown optimizer `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Descent,
    Ascent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub family: OptimizerFamily,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub momentum: f64,
    pub dampening: f64,
    pub rmsprop_alpha: f64,
    pub epsilon: f64,
    pub grad_clip: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            family: OptimizerFamily::Adam,
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            momentum: 0.9,
            dampening: 0.9,
            rmsprop_alpha: 0.99,
            epsilon: 1e-8,
            grad_clip: None,
        }
    }
}

impl OptimizerConfig {
    pub fn with_family(family: OptimizerFamily, learning_rate: f64) -> Self {
        OptimizerConfig { family, learning_rate, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("rmsprop_alpha", self.rmsprop_alpha)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.momentum) || !(0.0..=1.0).contains(&self.dampening) {
            return bad("momentum and dampening must lie in [0, 1]".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Row/column second-moment factors for one matrix-shaped tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct FactoredMoment<T> {
    pub tensor: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row: Vec<T>,
    pub col: Vec<T>,
}

impl<T: Scalar> FactoredMoment<T> {
    /// Rank-1 reconstruction `r_i c_j / mean(r)` of the second moment.
    pub fn reconstruct(&self) -> Vec<T> {
        let mean_r: T = self.row.iter().copied().sum::<T>() / T::of_usize(self.rows);
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for &r in &self.row {
            for &c in &self.col {
                out.push(if mean_r > T::zero() { r * c / mean_r } else { T::zero() });
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub family: OptimizerFamily,
    pub step_count: u64,
    pub first_moment: Option<Vec<T>>,
    pub second_moment: Option<Vec<T>>,
    pub momentum_buffer: Option<Vec<T>>,
    pub factored: Vec<FactoredMoment<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(family: OptimizerFamily, layout: &Layout) -> Self {
        let n = layout.total();
        let zeros = || Some(vec![T::zero(); n]);
        let mut st = OptimizerState {
            family,
            step_count: 0,
            first_moment: None,
            second_moment: None,
            momentum_buffer: None,
            factored: Vec::new(),
        };
        match family {
            OptimizerFamily::Sgd => {}
            OptimizerFamily::SgdMomentum => st.momentum_buffer = zeros(),
            OptimizerFamily::Rmsprop => st.second_moment = zeros(),
            OptimizerFamily::Adam => {
                st.first_moment = zeros();
                st.second_moment = zeros();
            }
            OptimizerFamily::Adafactor => {
                st.first_moment = zeros();
                // unfactored accumulator is used for the vector-shaped tensors only
                st.second_moment = zeros();
                for t in layout.tensors() {
                    if let [r, c] = t.shape[..] {
                        st.factored.push(FactoredMoment {
                            tensor: t.name.clone(),
                            offset: t.offset,
                            rows: r,
                            cols: c,
                            row: vec![T::zero(); r],
                            col: vec![T::zero(); c],
                        });
                    }
                }
            }
        }
        st
    }

    /// Flattened moment buffers in a fixed order, for persistence.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for b in [&self.first_moment, &self.second_moment, &self.momentum_buffer].into_iter().flatten() {
            out.extend_from_slice(b);
        }
        for f in &self.factored {
            out.extend_from_slice(&f.row);
            out.extend_from_slice(&f.col);
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat) into a freshly initialized state.
    pub fn load_flat(&mut self, step_count: u64, flat: &[T]) -> Result<()> {
        let mut it = flat.iter().copied();
        let mut fill = |buf: &mut [T]| -> Result<()> {
            for slot in buf.iter_mut() {
                *slot = it.next().ok_or_else(|| Error::Schema("optimizer state is too short".into()))?;
            }
            Ok(())
        };
        for b in [&mut self.first_moment, &mut self.second_moment, &mut self.momentum_buffer].into_iter().flatten() {
            fill(b)?;
        }
        for f in &mut self.factored {
            fill(&mut f.row)?;
            fill(&mut f.col)?;
        }
        if it.next().is_some() {
            return Err(Error::Schema("optimizer state is too long".into()));
        }
        self.step_count = step_count;
        Ok(())
    }

    /// One optimizer step, updating `params` in place.
    pub fn apply(
        &mut self,
        cfg: &OptimizerConfig,
        params: &mut ParamVector<T>,
        grad: &ParamVector<T>,
        direction: Direction,
    ) -> Result<()> {
        if cfg.family != self.family {
            return Err(Error::State(format!(
                "optimizer state was built for {} but the config asks for {}",
                self.family.name(),
                cfg.family.name()
            )));
        }
        if grad.len() != params.len() {
            return Err(Error::dim("optimizer step", "gradient and parameters differ in length"));
        }
        if let Some((name, i)) = grad.first_non_finite() {
            return Err(Error::numerical(
                "optimizer step",
                format!("non-finite gradient in tensor {name} (flat index {i})"),
            ));
        }
        let clipped;
        let g: &[T] = match cfg.grad_clip {
            Some(max) => {
                clipped = clip_global_norm(grad, max);
                clipped.values()
            }
            None => grad.values(),
        };
        self.step_count += 1;
        let t = self.step_count as i32;
        let lr = T::of(cfg.learning_rate);
        let eps = T::of(cfg.epsilon);
        let one = T::one();
        let sign = match direction {
            Direction::Descent => one,
            Direction::Ascent => -one,
        };
        let p = params.values_mut();
        // every branch computes the descent delta `d`; applied as p -= sign * d
        match cfg.family {
            OptimizerFamily::Sgd => {
                for (pi, &gi) in p.iter_mut().zip(g) {
                    *pi -= sign * (lr * gi);
                }
            }
            OptimizerFamily::SgdMomentum => {
                let mu = T::of(cfg.momentum);
                let damp = one - T::of(cfg.dampening);
                let buf = self.momentum_buffer.as_mut().ok_or_else(|| missing(cfg.family))?;
                for ((pi, &gi), bi) in p.iter_mut().zip(g).zip(buf.iter_mut()) {
                    *bi = if t == 1 { gi } else { mu * *bi + damp * gi };
                    *pi -= sign * (lr * *bi);
                }
            }
            OptimizerFamily::Rmsprop => {
                let a = T::of(cfg.rmsprop_alpha);
                let v = self.second_moment.as_mut().ok_or_else(|| missing(cfg.family))?;
                for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                    *vi = a * *vi + (one - a) * gi * gi;
                    *pi -= sign * (lr * gi / (vi.sqrt() + eps));
                }
            }
            OptimizerFamily::Adam => {
                let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
                let c1 = one - b1.powi(t);
                let c2 = one - b2.powi(t);
                let m = self.first_moment.as_mut().ok_or_else(|| missing(cfg.family))?;
                let v = self.second_moment.as_mut().ok_or_else(|| missing(cfg.family))?;
                for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = b1 * *mi + (one - b1) * gi;
                    *vi = b2 * *vi + (one - b2) * gi * gi;
                    let mhat = *mi / c1;
                    let vhat = *vi / c2;
                    *pi -= sign * (lr * mhat / (vhat.sqrt() + eps));
                }
            }
            OptimizerFamily::Adafactor => {
                let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
                let c2 = one - b2.powi(t);
                let eps1 = T::of(1e-30);
                let n = g.len();
                // preconditioner v̂ for every coordinate
                let mut vhat = vec![T::zero(); n];
                let v = self.second_moment.as_mut().ok_or_else(|| missing(cfg.family))?;
                for ((vi, &gi), out) in v.iter_mut().zip(g).zip(vhat.iter_mut()) {
                    *vi = b2 * *vi + (one - b2) * (gi * gi + eps1);
                    *out = *vi;
                }
                for f in &mut self.factored {
                    let block = &g[f.offset..f.offset + f.rows * f.cols];
                    let (rn, cn) = (T::of_usize(f.cols), T::of_usize(f.rows));
                    for (i, r) in f.row.iter_mut().enumerate() {
                        let s: T = block[i * f.cols..(i + 1) * f.cols].iter().map(|&x| x * x + eps1).sum();
                        *r = b2 * *r + (one - b2) * (s / rn);
                    }
                    for (j, c) in f.col.iter_mut().enumerate() {
                        let s: T = (0..f.rows).map(|i| block[i * f.cols + j]).map(|x| x * x + eps1).sum();
                        *c = b2 * *c + (one - b2) * (s / cn);
                    }
                    let rec = f.reconstruct();
                    vhat[f.offset..f.offset + rec.len()].copy_from_slice(&rec);
                }
                let use_m = cfg.beta1 > 0.0;
                let c1 = one - b1.powi(t);
                let m = self.first_moment.as_mut().ok_or_else(|| missing(cfg.family))?;
                for (((pi, &gi), mi), &vh) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(&vhat) {
                    let u = gi / ((vh / c2).sqrt() + eps);
                    let d = if use_m {
                        *mi = b1 * *mi + (one - b1) * u;
                        *mi / c1
                    } else {
                        u
                    };
                    *pi -= sign * (lr * d);
                }
            }
        }
        Ok(())
    }
}

fn missing(f: OptimizerFamily) -> Error {
    Error::State(format!("optimizer state was not initialized for {}", f.name()))
}

/// Pure form of [`OptimizerState::apply`].
pub fn step<T: Scalar>(
    state: &OptimizerState<T>,
    params: &ParamVector<T>,
    grad: &ParamVector<T>,
    direction: Direction,
    cfg: &OptimizerConfig,
) -> Result<(ParamVector<T>, OptimizerState<T>)> {
    let mut st = state.clone();
    let mut p = params.clone();
    st.apply(cfg, &mut p, grad, direction)?;
    Ok((p, st))
}

/// Rescales `grad` to global L2 norm `max_norm` when it exceeds it.
pub fn clip_global_norm<T: Scalar>(grad: &ParamVector<T>, max_norm: f64) -> ParamVector<T> {
    let n = grad.norm();
    let max = T::of(max_norm);
    if n > max {
        grad.scaled(max / n)
    } else {
        grad.clone()
    }
}
