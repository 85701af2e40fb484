//! Quick invariant suite behind `notmad check`: finite-difference gradient
//! checks, the exhaustive small-p acyclicity oracle, the matrix exponential
//! against its power series and the projection contract.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::acyclicity::{h, h_gradient, matrix_exponential};
use crate::dag::{binarize, is_dag, project_to_dag, BinaryStructure, WeightedGraph};
use crate::error::Result;
use crate::mixture::{EncoderKind, GraphGenerator};
use crate::notmad::{notmad_objective, notmad_objective_gradient, TrainConfig};
use crate::sem::{sem_loss, sem_loss_gradient};

const FD_STEP: f64 = 1e-5;
const FD_RTOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &str, worst: f64, limit: f64) -> CheckOutcome {
    CheckOutcome { name: name.into(), passed: worst <= limit, detail: format!("worst {worst:.3e}, limit {limit:.1e}") }
}

/// `|a - n| / max(|a|, |n|, 1e-4)` maximized over entries.
fn relative_gap(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
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

fn random_graph(p: usize, rng: &mut ChaCha8Rng) -> WeightedGraph {
    WeightedGraph::with_clamped_diagonal(Array2::from_shape_fn((p, p), |_| rng.random_range(-0.6..0.6)))
        .expect("finite weights")
}

fn check_h_gradient(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for p in [3, 5] {
        let w = random_graph(p, rng);
        let g = h_gradient(&w.view())?;
        let numeric = central_difference(
            |v| h(&Array2::from_shape_vec((p, p), v.to_vec()).expect("shape").view()).expect("finite"),
            w.weights().as_slice().expect("standard layout"),
        );
        let off: Vec<usize> = (0..p * p).filter(|i| i / p != i % p).collect();
        let a: Vec<f64> = off.iter().map(|&i| g[[i / p, i % p]]).collect();
        let n: Vec<f64> = off.iter().map(|&i| numeric[i]).collect();
        worst = worst.max(relative_gap(&a, &n));
    }
    Ok(outcome("h gradient vs central differences", worst, FD_RTOL))
}

fn check_sem_gradient(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for p in [3, 5] {
        let x = Array2::from_shape_fn((7, p), |_| rng.random_range(-1.0..1.0));
        let w = random_graph(p, rng);
        let g = sem_loss_gradient(&x.view(), &w)?;
        let numeric = central_difference(
            |v| {
                let m = WeightedGraph::with_clamped_diagonal(Array2::from_shape_vec((p, p), v.to_vec()).expect("shape"))
                    .expect("finite");
                sem_loss(&x.view(), &m).expect("finite")
            },
            w.weights().as_slice().expect("standard layout"),
        );
        let off: Vec<usize> = (0..p * p).filter(|i| i / p != i % p).collect();
        let a: Vec<f64> = off.iter().map(|&i| g[[i / p, i % p]]).collect();
        let n: Vec<f64> = off.iter().map(|&i| numeric[i]).collect();
        worst = worst.max(relative_gap(&a, &n));
    }
    Ok(outcome("least-squares gradient vs central differences", worst, FD_RTOL))
}

fn check_objective_gradient(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for (kind, k) in [(EncoderKind::Linear, 1), (EncoderKind::Linear, 3), (EncoderKind::FeedForward, 3)] {
        let (p, m) = (4, 2);
        let mut gen = GraphGenerator::init(p, m, k, kind, 5, rng.random());
        let mut params = gen.flatten();
        for v in params.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        gen.unflatten(&params)?;
        params = gen.flatten();
        let x = Array2::from_shape_fn((5, p), |_| rng.random_range(-1.0..1.0));
        let c = Array2::from_shape_fn((5, m), |_| rng.random_range(-1.0..1.0));
        let cfg = TrainConfig { alpha: 0.7, beta: 0.05, gamma: 0.4, k, encoder_kind: kind, ..TrainConfig::default() };
        let (_, grad) = notmad_objective_gradient(&gen, x.view(), c.view(), &cfg)?;
        let numeric = central_difference(
            |v| {
                let mut probe = gen.clone();
                probe.unflatten(v).expect("same length");
                notmad_objective(&probe, x.view(), c.view(), &cfg).expect("finite").total
            },
            &params,
        );
        // Diagonal entries are clamped and kinks of the L1 term are skipped.
        let arch_len = k * p * p;
        let keep: Vec<usize> = (0..params.len())
            .filter(|&i| i >= arch_len || ((i % (p * p)) / p != i % p && params[i].abs() > 1e-3))
            .collect();
        let a: Vec<f64> = keep.iter().map(|&i| grad[i]).collect();
        let n: Vec<f64> = keep.iter().map(|&i| numeric[i]).collect();
        worst = worst.max(relative_gap(&a, &n));
    }
    Ok(outcome("full objective gradient vs central differences", worst, FD_RTOL))
}

fn check_acyclicity_oracle() -> Result<CheckOutcome> {
    let mut mismatches = 0usize;
    let mut total = 0usize;
    for p in 2..=3usize {
        let slots: Vec<(usize, usize)> = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).filter(|(i, j)| i != j).collect();
        for mask in 0u32..(1 << slots.len()) {
            let edges: Vec<(usize, usize)> = slots.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, e)| *e).collect();
            let s = BinaryStructure::from_edges(p, &edges)?;
            if (h(&s.to_matrix().view())? < 1e-8) != is_dag(&s) {
                mismatches += 1;
            }
            total += 1;
        }
    }
    Ok(CheckOutcome {
        name: "h(A) = 0 exactly on DAGs (p <= 3, exhaustive)".into(),
        passed: mismatches == 0,
        detail: format!("{mismatches} mismatches over {total} structures"),
    })
}

fn check_matrix_exponential(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let a = Array2::from_shape_fn((4, 4), |_| rng.random_range(-0.8..0.8));
        let e = matrix_exponential(&a.view())?;
        let mut term = Array2::<f64>::eye(4);
        let mut sum = term.clone();
        for k in 1..40 {
            term = term.dot(&a) / k as f64;
            sum += &term;
        }
        let scale = sum.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        worst = worst.max((&e - &sum).iter().fold(0.0_f64, |m, v| m.max(v.abs())) / scale);
    }
    Ok(outcome("matrix exponential vs power series", worst, 1e-10))
}

fn check_projection(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut failures = 0;
    for _ in 0..20 {
        let w = random_graph(6, rng);
        let proj = project_to_dag(&w);
        let acyclic = is_dag(&binarize(&proj, 0.0)?);
        let idempotent = project_to_dag(&proj) == proj;
        let preserving = proj.weights().iter().zip(w.weights()).all(|(a, b)| *a == 0.0 || a == b);
        if !(acyclic && idempotent && preserving) {
            failures += 1;
        }
    }
    Ok(CheckOutcome {
        name: "projection is acyclic, idempotent and weight-preserving".into(),
        passed: failures == 0,
        detail: format!("{failures} failures over 20 random graphs"),
    })
}

/// Runs every check with a fixed seed.
pub fn run_checks() -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    Ok(vec![
        check_matrix_exponential(&mut rng)?,
        check_acyclicity_oracle()?,
        check_h_gradient(&mut rng)?,
        check_sem_gradient(&mut rng)?,
        check_objective_gradient(rng.random())?,
        check_projection(&mut rng)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_checks().unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
