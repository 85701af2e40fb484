//! Small dense helpers shared by the numerical modules.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{NotmadError, Result};

pub(crate) fn ensure_square(a: &ArrayView2<f64>, what: &str) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(NotmadError::invalid(format!("{what} must be square, got {r}x{c}")));
    }
    if r == 0 {
        return Err(NotmadError::invalid(format!("{what} must have at least one row")));
    }
    Ok(r)
}

pub(crate) fn ensure_finite(a: &ArrayView2<f64>, what: &str) -> Result<()> {
    if let Some(((i, j), v)) = a.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(NotmadError::invalid(format!("{what} has non-finite entry {v} at ({i}, {j})")));
    }
    Ok(())
}

/// Maximum absolute column sum.
pub(crate) fn norm_one(a: &ArrayView2<f64>) -> f64 {
    a.columns()
        .into_iter()
        .map(|col| col.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solve `a x = b` for symmetric positive-definite `a` via Cholesky.
pub(crate) fn cholesky_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(NotmadError::invalid("matrix is not positive definite"));
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let x_true = array![1.0, -2.0, 0.5];
        let b = a.dot(&x_true);
        let x = cholesky_solve(&a, &b).unwrap();
        for (u, v) in x.iter().zip(x_true.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky_solve(&a, &array![1.0, 1.0]).is_err());
    }

    #[test]
    fn norm_one_is_max_column_sum() {
        let a = array![[1.0, -4.0], [-2.0, 1.0]];
        assert_eq!(norm_one(&a.view()), 5.0);
    }
}
