//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each operation appends a
//! node holding its output value and whatever it needs for the backward
//! sweep; node indices are handed out as [`Var`]s. Because inputs are always
//! recorded before the node that consumes them, a single reverse pass over
//! the node list visits everything in topological order.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, log_sum_exp, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Relu(Var),
    Sum(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Elementwise operations accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise<T> {
    Add,
    Mul,
    Tanh,
    Relu,
    Scale(T),
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar with respect to every node on a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` did not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn broadcast_pair(a: &[usize], b: &[usize], la: usize, lb: usize) -> Option<Vec<usize>> {
    if a == b {
        Some(a.to_vec())
    } else if la == 1 {
        Some(b.to_vec())
    } else if lb == 1 {
        Some(a.to_vec())
    } else {
        None
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &str) -> Result<Var> {
        value.check_finite(name)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::State(format!("variable {} is not recorded on this tape", v.0)))
        }
    }

    /// Records an input (parameter or data) tensor.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    pub fn elementwise(&mut self, op: Elementwise<T>, args: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::dim("elementwise", format!("{op:?} takes {arity} arguments, got {}", args.len())));
        }
        match op {
            Elementwise::Add => self.add(args[0], args[1]),
            Elementwise::Mul => self.mul(args[0], args[1]),
            Elementwise::Tanh => self.tanh(args[0]),
            Elementwise::Relu => self.relu(args[0]),
            Elementwise::Scale(c) => self.scale(args[0], c),
        }
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = broadcast_pair(ta.shape(), tb.shape(), ta.len(), tb.len()).ok_or_else(|| {
            Error::dim(name, format!("shapes {:?} and {:?} are not broadcast-compatible", ta.shape(), tb.shape()))
        })?;
        let n: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let pick = |d: &[T], i: usize| if d.len() == 1 { d[0] } else { d[i] };
        let data = (0..n).map(|i| f(pick(da, i), pick(db, i))).collect();
        Tensor::new(shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.check(a)?;
        let out = self.nodes[a.0].value.map(|x| x * c);
        self.push(out, Op::Scale(a, c), "scale")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.nodes[a.0].value.map(T::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.nodes[a.0].value.map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a), "relu")
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s: T = self.nodes[a.0].value.data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = tensor::matmul(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// Adds a length-`n` bias vector to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(bias)?;
        let tx = &self.nodes[x.0].value;
        let tb = &self.nodes[bias.0].value;
        let (m, n) = tx.dims2("add_bias")?;
        if tb.len() != n {
            return Err(Error::dim("add_bias", format!("bias of length {} for {n} columns", tb.len())));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        self.push(out, Op::AddBias(x, bias), "add_bias")
    }

    /// Embedding lookup with concatenation.
    ///
    /// `ids` holds `rows × window` indices into `table` (shape `V×E`); the
    /// output row `r` is the concatenation of the `window` referenced table
    /// rows, giving shape `rows × (window·E)`.
    pub fn gather_concat(&mut self, table: Var, ids: Vec<usize>, window: usize) -> Result<Var> {
        self.check(table)?;
        let tt = &self.nodes[table.0].value;
        let (v, e) = tt.dims2("gather_concat")?;
        if window == 0 || !ids.len().is_multiple_of(window) {
            return Err(Error::dim("gather_concat", format!("{} ids do not split into windows of {window}", ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::dim("gather_concat", format!("index {bad} out of range for table with {v} rows")));
        }
        let rows = ids.len() / window;
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in &ids {
            data.extend_from_slice(&tt.data()[id * e..(id + 1) * e]);
        }
        let out = Tensor::new(vec![rows, window * e], data)?;
        self.push(out, Op::Gather { table, ids }, "gather_concat")
    }

    /// Weighted sum of per-row negative log-likelihoods,
    /// `Σ_r w_r · (−log softmax(logits_r)[target_r])`.
    pub fn weighted_cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        self.check(logits)?;
        let tl = &self.nodes[logits.0].value;
        let (n, v) = tl.dims2("cross_entropy")?;
        if targets.len() != n || weights.len() != n {
            return Err(Error::dim(
                "cross_entropy",
                format!("{n} rows but {} targets and {} weights", targets.len(), weights.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::dim("cross_entropy", format!("target {bad} outside vocabulary of {v}")));
        }
        let mut probs = Vec::with_capacity(n * v);
        let mut loss = T::zero();
        for (r, row) in tl.data().chunks(v).enumerate() {
            let lse = log_sum_exp(row);
            probs.extend(row.iter().map(|&x| (x - lse).exp()));
            if weights[r] != T::zero() {
                loss += weights[r] * (lse - row[targets[r]]);
            }
        }
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs };
        self.push(Tensor::scalar(loss), op, "cross_entropy")
    }

    /// Mean negative log-likelihood over the positions whose mask is 1.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[u8]) -> Result<Var> {
        let count = mask.iter().filter(|&&m| m != 0).count();
        if count == 0 {
            return Err(Error::DegenerateBatch("loss mask selects no positions".into()));
        }
        let w = T::one() / T::of_usize(count);
        let weights: Vec<T> = mask.iter().map(|&m| if m != 0 { w } else { T::zero() }).collect();
        self.weighted_cross_entropy(logits, targets, &weights)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward operation was recorded".into()));
        }
        self.check(loss)?;
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.nodes[loss.0].value.shape().to_vec(), vec![T::one()])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    for x in [a, b] {
                        let gx = self.reduce_broadcast(&g, *x);
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga = mul_broadcast(&g, vb);
                    let gb = mul_broadcast(&g, va);
                    let ga = self.reduce_broadcast(&ga, *a);
                    let gb = self.reduce_broadcast(&gb, *b);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|x| x * c));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let data = g.data().iter().zip(y.data()).map(|(&gi, &yi)| gi * (T::one() - yi * yi)).collect();
                    accumulate(&mut grads, *a, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(g.shape().to_vec(), data)?);
                }
                Op::Sum(a) => {
                    let s = g.item()?;
                    let shape = self.nodes[a.0].value.shape().to_vec();
                    let n = self.nodes[a.0].value.len();
                    accumulate(&mut grads, *a, Tensor::new(shape, vec![s; n])?);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut grads, *a, tensor::matmul_nt(&g, vb));
                    accumulate(&mut grads, *b, tensor::matmul_tn(va, &g));
                }
                Op::AddBias(x, bias) => {
                    let n = self.nodes[bias.0].value.len();
                    let mut gb = vec![T::zero(); n];
                    for row in g.data().chunks(n) {
                        for (o, &v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    let bshape = self.nodes[bias.0].value.shape().to_vec();
                    accumulate(&mut grads, *bias, Tensor::new(bshape, gb)?);
                    accumulate(&mut grads, *x, g);
                }
                Op::Gather { table, ids, .. } => {
                    let tv = &self.nodes[table.0].value;
                    let e = tv.shape()[1];
                    let mut gt = Tensor::zeros(tv.shape());
                    let gd = g.data();
                    let td = gt.data_mut();
                    for (slot, &id) in ids.iter().enumerate() {
                        let src = &gd[slot * e..(slot + 1) * e];
                        for (o, &v) in td[id * e..(id + 1) * e].iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::CrossEntropy { logits, targets, weights, probs } => {
                    let s = g.item()?;
                    let shape = self.nodes[logits.0].value.shape().to_vec();
                    let v = shape[1];
                    let mut gl = vec![T::zero(); probs.len()];
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == T::zero() {
                            continue;
                        }
                        let ws = w * s;
                        let row = &mut gl[r * v..(r + 1) * v];
                        for (o, &p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                            *o = ws * p;
                        }
                        row[t] -= ws;
                    }
                    accumulate(&mut grads, *logits, Tensor::new(shape, gl)?);
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    // Sums a broadcast gradient back down to the shape of `target`.
    fn reduce_broadcast(&self, g: &Tensor<T>, target: Var) -> Tensor<T> {
        let tv = &self.nodes[target.0].value;
        if tv.len() == g.len() {
            g.clone()
        } else {
            let s: T = g.data().iter().copied().sum();
            Tensor::new(tv.shape().to_vec(), vec![s]).expect("scalar shape")
        }
    }
}

fn mul_broadcast<T: Scalar>(g: &Tensor<T>, other: &Tensor<T>) -> Tensor<T> {
    if other.len() == 1 {
        let c = other.data()[0];
        g.map(|x| x * c)
    } else {
        let data = g.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        Tensor::new(g.shape().to_vec(), data).expect("same shape")
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
