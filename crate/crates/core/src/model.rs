//! Feed-forward n-gram language model.
//!
//! Each next-token prediction looks at the previous `context_window` tokens
//! (left-padded with [`PAD`]), concatenates their embeddings, runs them
//! through one or two dense hidden layers and projects to vocabulary logits.
//! Only answer positions (`loss_mask == 1`) contribute to the loss.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Layout, ParamVector};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{log_sum_exp, Tensor};

/// Reserved padding token.
pub const PAD: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_window: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_hidden_layers: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 69,
            context_window: 12,
            embed_dim: 8,
            hidden_dim: 32,
            n_hidden_layers: 2,
            activation: Activation::Tanh,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab_size < 8 {
            return bad("vocab_size must be at least 8");
        }
        if self.context_window < 4 {
            return bad("context_window must be at least 4");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("embed_dim and hidden_dim must be positive");
        }
        if !(1..=2).contains(&self.n_hidden_layers) {
            return bad("n_hidden_layers must be 1 or 2");
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (v, w, e, h) = (self.vocab_size, self.context_window, self.embed_dim, self.hidden_dim);
        v * e + (w * e * h + h) + (self.n_hidden_layers - 1) * (h * h + h) + (h * v + v)
    }

    pub fn layout(&self) -> Layout {
        let (v, w, e, h) = (self.vocab_size, self.context_window, self.embed_dim, self.hidden_dim);
        let mut entries = vec![("embedding".to_string(), vec![v, e])];
        for l in 0..self.n_hidden_layers {
            let fan_in = if l == 0 { w * e } else { h };
            entries.push((format!("hidden{l}.weight"), vec![fan_in, h]));
            entries.push((format!("hidden{l}.bias"), vec![h]));
        }
        entries.push(("output.weight".to_string(), vec![h, v]));
        entries.push(("output.bias".to_string(), vec![v]));
        Layout::packed(entries)
    }
}

/// One tokenized example: prompt followed by answer, with the answer marked.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub loss_mask: Vec<u8>,
}

impl Example {
    /// Builds an example whose answer tokens follow the prompt.
    pub fn from_parts(prompt: &[usize], answer: &[usize]) -> Self {
        let tokens = [prompt, answer].concat();
        let loss_mask = std::iter::repeat_n(0, prompt.len()).chain(std::iter::repeat_n(1, answer.len())).collect();
        Example { tokens, loss_mask }
    }

    pub fn prompt(&self) -> Vec<usize> {
        self.tokens.iter().zip(&self.loss_mask).filter(|(_, &m)| m == 0).map(|(&t, _)| t).collect()
    }

    pub fn answer(&self) -> Vec<usize> {
        self.tokens.iter().zip(&self.loss_mask).filter(|(_, &m)| m != 0).map(|(&t, _)| t).collect()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.tokens.len() != self.loss_mask.len() {
            return Err(Error::Schema(format!(
                "{} tokens but {} mask entries",
                self.tokens.len(),
                self.loss_mask.len()
            )));
        }
        if !self.loss_mask.iter().any(|&m| m != 0) {
            return Err(Error::DegenerateBatch("example has no answer positions".into()));
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::Schema(format!("token {t} outside vocabulary of {vocab_size}")));
        }
        Ok(())
    }
}

/// The model: configuration plus its (shared) parameter layout.
#[derive(Clone, Debug)]
pub struct FeedForwardLm {
    config: ModelConfig,
    layout: Arc<Layout>,
}

struct Rows<T> {
    ids: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<T>,
    // row -> example index
    owner: Vec<usize>,
}

impl FeedForwardLm {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(config.layout());
        Ok(FeedForwardLm { config, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    /// Weights ~ U(±1/√fan_in) drawn in layout order from the config seed; biases zero.
    ///
    /// The embedding table is treated as a linear map from one-hot vectors,
    /// so its fan-in is the vocabulary size.
    pub fn init_params<T: Scalar>(&self) -> ParamVector<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut values = Vec::with_capacity(self.layout.total());
        for spec in self.layout.tensors() {
            if spec.name.ends_with("bias") {
                values.extend(std::iter::repeat_n(T::zero(), spec.len()));
            } else {
                let bound = 1.0 / (spec.shape[0] as f64).sqrt();
                values.extend((0..spec.len()).map(|_| T::of(rng.gen_range(-bound..bound))));
            }
        }
        ParamVector::new(self.layout.clone(), values).expect("layout size")
    }

    fn check_params<T: Scalar>(&self, params: &ParamVector<T>) -> Result<()> {
        if params.layout().as_ref() != self.layout.as_ref() {
            return Err(Error::Schema("parameter layout does not match the model".into()));
        }
        Ok(())
    }

    fn rows<T: Scalar>(&self, batch: &[Example], example_weights: &[T]) -> Result<Rows<T>> {
        if batch.is_empty() {
            return Err(Error::DegenerateBatch("empty batch".into()));
        }
        let w = self.config.context_window;
        let mut rows = Rows { ids: Vec::new(), targets: Vec::new(), weights: Vec::new(), owner: Vec::new() };
        for (ei, ex) in batch.iter().enumerate() {
            ex.validate(self.config.vocab_size)?;
            let count = ex.loss_mask.iter().filter(|&&m| m != 0).count();
            let per_row = example_weights[ei] / T::of_usize(count);
            for (p, &m) in ex.loss_mask.iter().enumerate() {
                if m == 0 {
                    continue;
                }
                for k in 0..w {
                    // window slot k holds token p - w + k
                    let src = (p + k).checked_sub(w);
                    rows.ids.push(src.map_or(PAD, |s| ex.tokens[s]));
                }
                rows.targets.push(ex.tokens[p]);
                rows.weights.push(per_row);
                rows.owner.push(ei);
            }
        }
        Ok(rows)
    }

    // Records the forward pass up to the logits; returns (param leaves, logits).
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamVector<T>, ids: Vec<usize>) -> Result<(Vec<Var>, Var)> {
        let mut leaves = Vec::with_capacity(self.layout.tensors().len());
        for spec in self.layout.tensors() {
            let t = Tensor::new(spec.shape.clone(), params.values()[spec.range()].to_vec())?;
            leaves.push(tape.leaf(t)?);
        }
        let mut h = tape.gather_concat(leaves[0], ids, self.config.context_window)?;
        for l in 0..self.config.n_hidden_layers {
            let z = tape.matmul(h, leaves[1 + 2 * l])?;
            let z = tape.add_bias(z, leaves[2 + 2 * l])?;
            h = match self.config.activation {
                Activation::Tanh => tape.tanh(z)?,
                Activation::Relu => tape.relu(z)?,
            };
        }
        let n = leaves.len();
        let logits = tape.matmul(h, leaves[n - 2])?;
        let logits = tape.add_bias(logits, leaves[n - 1])?;
        Ok((leaves, logits))
    }

    /// Mean over examples of each example's mean masked next-token NLL.
    pub fn loss<T: Scalar>(&self, params: &ParamVector<T>, batch: &[Example]) -> Result<T> {
        let losses = self.example_losses(params, batch)?;
        let n = T::of_usize(losses.len());
        Ok(losses.into_iter().map(|l| l / n).sum())
    }

    pub fn loss_grad<T: Scalar>(&self, params: &ParamVector<T>, batch: &[Example]) -> Result<(T, ParamVector<T>)> {
        let w = T::one() / T::of_usize(batch.len().max(1));
        self.weighted_loss_grad(params, batch, &vec![w; batch.len()])
    }

    /// Loss `Σ_e w_e · L_e` and its gradient, where `L_e` is example `e`'s
    /// mean masked NLL.
    pub fn weighted_loss_grad<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        batch: &[Example],
        example_weights: &[T],
    ) -> Result<(T, ParamVector<T>)> {
        self.check_params(params)?;
        if example_weights.len() != batch.len() {
            return Err(Error::dim("loss", "one weight per example required"));
        }
        let rows = self.rows(batch, example_weights)?;
        let mut tape = Tape::new();
        let (leaves, logits) = self.forward(&mut tape, params, rows.ids)?;
        let loss = tape.weighted_cross_entropy(logits, &rows.targets, &rows.weights)?;
        let value = tape.value(loss).item()?;
        let mut grads = tape.backward(loss)?;
        let mut flat = Vec::with_capacity(params.len());
        for leaf in leaves {
            flat.extend(grads.take(leaf).into_data());
        }
        Ok((value, params.with_values(flat)?))
    }

    /// Per-example mean masked NLL, from a single batched forward pass.
    pub fn example_losses<T: Scalar>(&self, params: &ParamVector<T>, batch: &[Example]) -> Result<Vec<T>> {
        self.check_params(params)?;
        let ones = vec![T::one(); batch.len()];
        let rows = self.rows(batch, &ones)?;
        let mut tape = Tape::new();
        let (_, logits) = self.forward(&mut tape, params, rows.ids)?;
        let lv = tape.value(logits);
        let v = self.config.vocab_size;
        let mut out = vec![T::zero(); batch.len()];
        for (r, row) in lv.data().chunks(v).enumerate() {
            out[rows.owner[r]] += rows.weights[r] * (log_sum_exp(row) - row[rows.targets[r]]);
        }
        Ok(out)
    }

    /// Greedy next-token prediction at every answer position (teacher forced).
    pub fn predict_answers(&self, params: &ParamVector<f64>, batch: &[Example]) -> Result<Vec<Vec<usize>>> {
        self.check_params(params)?;
        let ones = vec![1.0; batch.len()];
        let rows = self.rows(batch, &ones)?;
        let mut tape = Tape::new();
        let (_, logits) = self.forward(&mut tape, params, rows.ids)?;
        let v = self.config.vocab_size;
        let mut out = vec![Vec::new(); batch.len()];
        for (r, row) in tape.value(logits).data().chunks(v).enumerate() {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b })
                .0;
            out[rows.owner[r]].push(best);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 16,
            context_window: 4,
            embed_dim: 8,
            hidden_dim: 6,
            n_hidden_layers: 2,
            activation: Activation::Tanh,
            seed: 11,
        }
    }

    #[test]
    fn param_count_matches_layout() {
        for layers in 1..=2 {
            let cfg = ModelConfig { n_hidden_layers: layers, ..tiny() };
            let l = cfg.layout();
            l.validate().unwrap();
            assert_eq!(l.total(), cfg.param_count());
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(FeedForwardLm::new(ModelConfig { vocab_size: 7, ..tiny() }).is_err());
        assert!(FeedForwardLm::new(ModelConfig { context_window: 3, ..tiny() }).is_err());
        assert!(FeedForwardLm::new(ModelConfig { n_hidden_layers: 3, ..tiny() }).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let m = FeedForwardLm::new(tiny()).unwrap();
        let a: ParamVector<f64> = m.init_params();
        let b: ParamVector<f64> = m.init_params();
        assert_eq!(a, b);
        let emb = a.tensor("embedding").unwrap();
        let bound = 1.0 / 16f64.sqrt();
        assert!(emb.iter().all(|x| x.abs() < bound));
        assert!(a.tensor("output.bias").unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn different_seeds_differ_almost_everywhere() {
        let a: ParamVector<f64> = FeedForwardLm::new(tiny()).unwrap().init_params();
        let b: ParamVector<f64> = FeedForwardLm::new(ModelConfig { seed: 12, ..tiny() }).unwrap().init_params();
        let weights: Vec<_> = a
            .layout()
            .tensors()
            .iter()
            .filter(|t| !t.name.ends_with("bias"))
            .flat_map(|t| t.range())
            .collect();
        let differ = weights.iter().filter(|&&i| a.values()[i] != b.values()[i]).count();
        assert!(differ as f64 >= 0.99 * weights.len() as f64);
    }

    #[test]
    fn saturated_output_bias_gives_zero_loss() {
        let m = FeedForwardLm::new(tiny()).unwrap();
        let mut p: ParamVector<f64> = m.init_params();
        let spec = m.layout().get("output.bias").unwrap().clone();
        p.values_mut()[spec.offset + 5] = 1000.0;
        let ex = Example::from_parts(&[3, 4], &[5]);
        assert_eq!(m.loss(&p, &[ex]).unwrap(), 0.0);
    }

    #[test]
    fn empty_batch_is_degenerate() {
        let m = FeedForwardLm::new(tiny()).unwrap();
        let p: ParamVector<f64> = m.init_params();
        assert!(matches!(m.loss(&p, &[]), Err(Error::DegenerateBatch(_))));
    }

    #[test]
    fn duplicated_batch_has_same_loss() {
        let m = FeedForwardLm::new(tiny()).unwrap();
        let p: ParamVector<f64> = m.init_params();
        let batch = vec![Example::from_parts(&[2, 3, 4], &[5, 6]), Example::from_parts(&[7], &[8])];
        let doubled: Vec<_> = batch.iter().flat_map(|e| [e.clone(), e.clone()]).collect();
        let (a, b) = (m.loss(&p, &batch).unwrap(), m.loss(&p, &doubled).unwrap());
        assert!((a - b).abs() < 1e-15);
    }
}
