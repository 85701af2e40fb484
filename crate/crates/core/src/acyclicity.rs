//! Smooth acyclicity criterion `h(W) = tr(exp(W ∘ W)) - p` and its gradient.
//!
//! `h` is zero exactly when the support of `W` is acyclic and strictly positive
//! otherwise. The matrix exponential is evaluated by scaling and squaring
//! around a truncated Taylor series; for the entrywise non-negative argument
//! `W ∘ W` the series has no cancellation.

use ndarray::{Array2, ArrayView2};

use crate::error::Result;
use crate::linalg::{ensure_finite, ensure_square, norm_one};

/// Norm the argument is scaled down to before the series is summed.
const SCALED_NORM: f64 = 0.5;
/// Hard cap on Taylor terms. At norm 0.5 the 30th term is below 1e-40.
const MAX_TERMS: usize = 30;

/// `exp(A)` by scaling and squaring with a truncated Taylor core.
pub fn matrix_exponential(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = ensure_square(a, "matrix")?;
    ensure_finite(a, "matrix")?;

    let norm = norm_one(a);
    let squarings = if norm > SCALED_NORM {
        (norm / SCALED_NORM).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.mapv(|v| v * 2f64.powi(-squarings));

    let mut sum = Array2::<f64>::eye(n);
    let mut term = Array2::<f64>::eye(n);
    for k in 1..=MAX_TERMS {
        term = term.dot(&scaled) / k as f64;
        sum += &term;
        let term_norm = norm_one(&term.view());
        if term_norm <= f64::EPSILON * 1e-3 * norm_one(&sum.view()) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.dot(&sum);
    }
    Ok(sum)
}

/// `tr(exp(W ∘ W)) - p`.
pub fn h(w: &ArrayView2<f64>) -> Result<f64> {
    Ok(h_with_gradient(w)?.0)
}

/// `exp(W ∘ W)^T ∘ 2W`.
pub fn h_gradient(w: &ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(h_with_gradient(w)?.1)
}

/// Value and gradient of `h` sharing one matrix exponential.
pub fn h_with_gradient(w: &ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    let p = ensure_square(w, "weight matrix")?;
    ensure_finite(w, "weight matrix")?;
    let squared = w.mapv(|v| v * v);
    let e = matrix_exponential(&squared.view())?;
    let value = (e.diag().sum() - p as f64).max(0.0);
    let mut grad = e.reversed_axes();
    grad.zip_mut_with(w, |g, &x| *g *= 2.0 * x);
    Ok((value, grad))
}
