//! Reference computations for the acceptance checks. Everything here is
//! written from the definitions and shares no code with the library.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;

use tda_core::model::Example;

/// Central difference at step `h`, refined by one Richardson step.
pub fn richardson(f: &mut dyn FnMut(f64) -> f64, h: f64) -> f64 {
    let d = |f: &mut dyn FnMut(f64) -> f64, h: f64| (f(h) - f(-h)) / (2.0 * h);
    let coarse = d(f, h);
    let fine = d(f, h / 2.0);
    (4.0 * fine - coarse) / 3.0
}

pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            richardson(
                &mut |t| {
                    y[i] = x[i] + t;
                    let v = f(&y);
                    y[i] = x[i];
                    v
                },
                h,
            )
        })
        .collect()
}

/// Dense Hessian, column `j` from central differences of the gradient along `e_j`.
pub fn fd_hessian(g: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut y = x.to_vec();
    for j in 0..n {
        let mut at = |t: f64| {
            y[j] = x[j] + t;
            let v = g(&y);
            y[j] = x[j];
            v
        };
        let (p1, m1) = (at(h), at(-h));
        let (p2, m2) = (at(h / 2.0), at(-h / 2.0));
        cols.push(
            (0..n)
                .map(|i| {
                    let coarse = (p1[i] - m1[i]) / (2.0 * h);
                    let fine = (p2[i] - m2[i]) / h;
                    (4.0 * fine - coarse) / 3.0
                })
                .collect::<Vec<f64>>(),
        );
    }
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

pub fn symmetrize(a: &mut [Vec<f64>]) {
    let n = a.len();
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = m;
            a[j][i] = m;
        }
    }
}

pub fn matvec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Columns of a random orthogonal matrix (Gram-Schmidt of Gaussian-ish draws).
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for u in &q {
                let c = dot(u, &v);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
            }
        }
        let nv = norm(&v);
        if nv > 1e-8 {
            q.push(v.into_iter().map(|x| x / nv).collect());
        }
    }
    q
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn pearson_ref(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for i in 0..a.len() {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Rank = 1 + (number strictly below) + (ties − 1) / 2.
pub fn ranks_ref(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_ref(a: &[f64], b: &[f64]) -> f64 {
    pearson_ref(&ranks_ref(a), &ranks_ref(b))
}

pub fn standardize_ref(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    let sd = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt();
    x.iter().map(|v| (v - m) / sd).collect()
}

/// Random token sequences with a one- to three-token answer.
pub fn random_batch(rng: &mut impl Rng, vocab: usize, n: usize) -> Vec<Example> {
    (0..n)
        .map(|_| {
            let prompt: Vec<usize> = (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(1..vocab)).collect();
            let answer: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..vocab)).collect();
            Example::from_parts(&prompt, &answer)
        })
        .collect()
}
