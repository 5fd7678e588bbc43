mod support;

use proptest::prelude::*;
use rand::Rng;

use tda_core::hvp::{hvp, BatchLoss, HvpMethod};
use tda_core::model::FeedForwardLm;
use tda_core::tape::{Elementwise, Tape, Var};
use tda_core::tensor::Tensor;

use support::*;

/// Builds a scalar from the given leaves; the closure is replayed for
/// every finite-difference evaluation.
type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

/// Compares reverse-mode gradients of every input against finite
/// differences on up to `coords` random coordinates.
fn check_op(inputs: Vec<Tensor<f64>>, build: &Build, coords: usize, seed: u64) -> f64 {
    let eval = |vals: &[Tensor<f64>]| -> (f64, Vec<Tensor<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
        let out = build(&mut tape, &vars);
        let value = tape.value(out).item().unwrap();
        let grads = tape.backward(out).unwrap();
        (value, vars.iter().map(|&v| grads.wrt(v)).collect())
    };
    let (_, grads) = eval(&inputs);
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let which = r.gen_range(0..inputs.len());
        let i = r.gen_range(0..inputs[which].len());
        let f = |x: &[f64]| {
            let mut vals = inputs.clone();
            vals[which] = Tensor::new(inputs[which].shape().to_vec(), x.to_vec()).unwrap();
            eval(&vals).0
        };
        let fd = fd_partial(&f, inputs[which].data(), i, 1e-3);
        worst = worst.max(rel_err(grads[which].data()[i], fd));
    }
    worst
}

fn random_tensor(r: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), random_vec(r, n)).unwrap()
}

/// Reduces a matrix-valued node to a scalar through fixed random weights.
fn contract(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let w = random_tensor(&mut rng(seed), &shape);
    let w = tape.leaf(w).unwrap();
    let p = tape.mul(x, w).unwrap();
    tape.sum(p).unwrap()
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let mut r = rng(1);
    let a = random_tensor(&mut r, &[3, 4]);
    let b = random_tensor(&mut r, &[3, 4]);
    let s = random_tensor(&mut r, &[1]);
    type Case = (&'static str, Vec<Tensor<f64>>, Box<Build>);
    let cases: Vec<Case> = vec![
        ("add", vec![a.clone(), b.clone()], Box::new(|t, v| { let x = t.add(v[0], v[1]).unwrap(); contract(t, x, 7) })),
        ("add broadcast", vec![a.clone(), s.clone()], Box::new(|t, v| { let x = t.add(v[0], v[1]).unwrap(); contract(t, x, 7) })),
        ("mul", vec![a.clone(), b.clone()], Box::new(|t, v| { let x = t.mul(v[0], v[1]).unwrap(); contract(t, x, 7) })),
        ("scale", vec![a.clone()], Box::new(|t, v| { let x = t.scale(v[0], -1.7).unwrap(); contract(t, x, 7) })),
        ("tanh", vec![a.clone()], Box::new(|t, v| { let x = t.tanh(v[0]).unwrap(); contract(t, x, 7) })),
        ("elementwise scale", vec![b.clone()], Box::new(|t, v| { let x = t.elementwise(Elementwise::Scale(0.3), &[v[0]]).unwrap(); contract(t, x, 7) })),
        ("sum", vec![a.clone()], Box::new(|t, v| { let x = t.tanh(v[0]).unwrap(); t.sum(x).unwrap() })),
    ];
    for (name, inputs, build) in cases {
        let worst = check_op(inputs, build.as_ref(), 100, 3);
        assert!(worst <= 1e-6, "{name}: {worst:e}");
    }
}

#[test]
fn relu_matches_finite_differences_away_from_the_kink() {
    let mut r = rng(2);
    let mut a = random_tensor(&mut r, &[4, 5]);
    // keep every entry at least 0.1 from zero
    a.data_mut().iter_mut().for_each(|x| *x += 0.1f64.copysign(*x));
    let worst = check_op(vec![a], &|t, v| { let x = t.relu(v[0]).unwrap(); contract(t, x, 9) }, 100, 4);
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn matmul_and_bias_match_finite_differences() {
    let mut r = rng(3);
    let x = random_tensor(&mut r, &[3, 4]);
    let w = random_tensor(&mut r, &[4, 5]);
    let b = random_tensor(&mut r, &[5]);
    let build = |t: &mut Tape<f64>, v: &[Var]| {
        let z = t.matmul(v[0], v[1]).unwrap();
        let z = t.add_bias(z, v[2]).unwrap();
        contract(t, z, 11)
    };
    let worst = check_op(vec![x, w, b], &build, 100, 5);
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn gather_concat_matches_finite_differences() {
    let mut r = rng(4);
    let table = random_tensor(&mut r, &[6, 3]);
    // repeated ids exercise gradient accumulation into one row
    let ids = vec![0, 2, 2, 5, 1, 0, 3, 3, 4];
    let build = move |t: &mut Tape<f64>, v: &[Var]| {
        let g = t.gather_concat(v[0], ids.clone(), 3).unwrap();
        contract(t, g, 13)
    };
    let worst = check_op(vec![table], &build, 100, 6);
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn cross_entropy_matches_finite_differences() {
    let mut r = rng(5);
    let logits = random_tensor(&mut r, &[4, 6]);
    let build = |t: &mut Tape<f64>, v: &[Var]| t.weighted_cross_entropy(v[0], &[1, 5, 0, 2], &[0.5, 1.5, 0.0, 2.0]).unwrap();
    assert!(check_op(vec![logits.clone()], &build, 100, 7) <= 1e-6);
    let masked = |t: &mut Tape<f64>, v: &[Var]| t.softmax_cross_entropy(v[0], &[3, 3, 4, 1], &[1, 0, 1, 1]).unwrap();
    assert!(check_op(vec![logits], &masked, 100, 8) <= 1e-6);
}

#[test]
fn saturated_logit_gives_near_zero_loss() {
    let mut data = vec![0.0; 5];
    data[2] = 1000.0;
    let mut tape = Tape::new();
    let l = tape.leaf(Tensor::new(vec![1, 5], data).unwrap()).unwrap();
    let loss = tape.softmax_cross_entropy(l, &[2], &[1]).unwrap();
    assert!(tape.value(loss).item().unwrap() < 1e-12);
}

#[test]
fn model_gradient_matches_finite_differences() {
    let mut r = rng(6);
    for _ in 0..3 {
        let cfg = small_config(&mut r);
        let model = FeedForwardLm::new(cfg.clone()).unwrap();
        let params = perturbed(&model, &mut r, 0.3);
        let batch = random_batch(&mut r, cfg.vocab_size, 3);
        let (_, g) = model.loss_grad(&params, &batch).unwrap();
        let f = |x: &[f64]| model.loss(&params.with_values(x.to_vec()).unwrap(), &batch).unwrap();
        for _ in 0..100 {
            let i = r.gen_range(0..params.len());
            let fd = fd_partial(&f, params.values(), i, 1e-3);
            assert!(rel_err(g.values()[i], fd) <= 1e-6, "coordinate {i}: {} vs {fd}", g.values()[i]);
        }
    }
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let mut r = rng(7);
    let cfg = small_config(&mut r);
    let model = FeedForwardLm::new(cfg.clone()).unwrap();
    let params = perturbed(&model, &mut r, 0.3);
    let batch = random_batch(&mut r, cfg.vocab_size, 5);
    let (l1, g1) = model.loss_grad(&params, &batch).unwrap();
    let (l2, g2) = model.loss_grad(&params, &batch).unwrap();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert!(g1.values().iter().zip(g2.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hvp_is_symmetric(seed in any::<u64>(), double in any::<bool>()) {
        let mut r = rng(seed);
        let cfg = small_config(&mut r);
        let model = FeedForwardLm::new(cfg.clone()).unwrap();
        let params = perturbed(&model, &mut r, 0.3);
        let batch = random_batch(&mut r, cfg.vocab_size, 3);
        let n = params.len();
        let u = params.with_values(random_vec(&mut r, n)).unwrap();
        let v = params.with_values(random_vec(&mut r, n)).unwrap();
        let method = if double { HvpMethod::DoubleBackward } else { HvpMethod::FdOfGrad };
        let obj = BatchLoss { model: &model, batch: &batch };
        let hu = hvp(&obj, &params, &u, method).unwrap();
        let hv = hvp(&obj, &params, &v, method).unwrap();
        let (a, b) = (v.dot(&hu), u.dot(&hv));
        prop_assert!(rel_err(a, b) <= 1e-6, "{} vs {}", a, b);
    }
}
