//! Reference implementations used as oracles by the integration tests. They
//! share no code with the library beyond reading public fields.

#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use notmad::mixture::ContextEncoder;
use notmad::GraphGenerator;

/// Cycle detection through the transitive closure of the nonzero pattern.
pub fn has_cycle(w: &ArrayView2<f64>) -> bool {
    let p = w.nrows();
    let mut reach = vec![vec![false; p]; p];
    for i in 0..p {
        for j in 0..p {
            reach[i][j] = w[[i, j]] != 0.0;
        }
    }
    for k in 0..p {
        for i in 0..p {
            if reach[i][k] {
                for j in 0..p {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    (0..p).any(|i| reach[i][i])
}

/// `Σ_{k < terms} A^k / k!`.
pub fn series_exp(a: &ArrayView2<f64>, terms: usize) -> Array2<f64> {
    let p = a.nrows();
    let mut term = Array2::<f64>::eye(p);
    let mut sum = term.clone();
    for k in 1..terms {
        term = term.dot(a) / k as f64;
        sum += &term;
    }
    sum
}

/// `tr(exp(W ∘ W)) - p` through the power series.
pub fn h_oracle(w: &ArrayView2<f64>) -> f64 {
    let sq = w.mapv(|v| v * v);
    series_exp(&sq.view(), 60).diag().sum() - w.nrows() as f64
}

pub const FD_STEP: f64 = 1e-5;

pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over the listed indices.
pub fn worst_relative_gap(analytic: &[f64], numeric: &[f64], indices: &[usize], floor: f64) -> f64 {
    indices
        .iter()
        .map(|&i| (analytic[i] - numeric[i]).abs() / analytic[i].abs().max(numeric[i].abs()).max(floor))
        .fold(0.0, f64::max)
}

fn logits(enc: &ContextEncoder, c: ArrayView1<f64>) -> Array1<f64> {
    match enc {
        ContextEncoder::Linear { weight, bias } => weight.dot(&c) + bias,
        ContextEncoder::FeedForward { hidden_weight, hidden_bias, output_weight, output_bias } => {
            let hidden = (hidden_weight.dot(&c) + hidden_bias).mapv(f64::tanh);
            output_weight.dot(&hidden) + output_bias
        }
    }
}

fn softmax(v: &Array1<f64>) -> Array1<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = v.mapv(|x| (x - m).exp());
    let s = e.sum();
    e / s
}

/// Per-sample network of the mixture model, recomputed from public fields.
pub fn network_oracle(gen: &GraphGenerator, c: ArrayView1<f64>) -> Array2<f64> {
    let z = softmax(&logits(&gen.encoder, c));
    let p = gen.p();
    let mut w = Array2::<f64>::zeros((p, p));
    for (zk, a) in z.iter().zip(gen.dictionary.archetypes()) {
        w.scaled_add(*zk, a.weights());
    }
    for i in 0..p {
        w[[i, i]] = 0.0;
    }
    w
}

/// `Σ_i ||x_i - x_i W_i||² + α h(W_i)  +  Σ_k β ||W_k||_1 + γ h(W_k)`.
pub fn objective_oracle(gen: &GraphGenerator, x: &ArrayView2<f64>, c: &ArrayView2<f64>, alpha: f64, beta: f64, gamma: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..x.nrows() {
        let w = network_oracle(gen, c.row(i));
        let r = &x.row(i) - &x.row(i).dot(&w);
        total += r.dot(&r) + alpha * h_oracle(&w.view());
    }
    for a in gen.dictionary.archetypes() {
        let l1: f64 = a.weights().iter().map(|v| v.abs()).sum();
        total += beta * l1 + gamma * h_oracle(&a.view());
    }
    total
}

/// Directed-edge F1 on nonzero patterns, 1 for empty against empty.
pub fn edge_f1(est: &ArrayView2<f64>, truth: &ArrayView2<f64>) -> f64 {
    let mut tp = 0.0;
    let mut n_est = 0.0;
    let mut n_true = 0.0;
    for (e, t) in est.iter().zip(truth.iter()) {
        let (e, t) = (*e != 0.0, *t != 0.0);
        n_est += e as u8 as f64;
        n_true += t as u8 as f64;
        tp += (e && t) as u8 as f64;
    }
    let precision = if n_est == 0.0 { 1.0 } else { tp / n_est };
    let recall = if n_true == 0.0 { 1.0 } else { tp / n_true };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
