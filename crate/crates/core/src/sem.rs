//! Linear structural equation model `X = X W + E` with homoscedastic Gaussian
//! noise: sampling and the least-squares reconstruction loss.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dag::{binarize, topological_order, WeightedGraph};
use crate::error::{NotmadError, Result};
use crate::linalg::ensure_finite;

/// Paired observations `x` (n x p) and contexts `c` (n x m), with optional
/// integer group labels per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    c: Array2<f64>,
    groups: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, c: Array2<f64>, groups: Option<Vec<usize>>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(NotmadError::invalid("dataset must have at least one row"));
        }
        if x.nrows() != c.nrows() {
            return Err(NotmadError::invalid(format!(
                "observation rows ({}) and context rows ({}) differ",
                x.nrows(),
                c.nrows()
            )));
        }
        if let Some(g) = &groups {
            if g.len() != x.nrows() {
                return Err(NotmadError::invalid(format!(
                    "{} group labels for {} rows",
                    g.len(),
                    x.nrows()
                )));
            }
        }
        ensure_finite(&x.view(), "observations")?;
        ensure_finite(&c.view(), "contexts")?;
        Ok(Self { x, c, groups })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.c.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn c(&self) -> &Array2<f64> {
        &self.c
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    /// New dataset made of the given rows, in order, repeats allowed.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(ndarray::Axis(0), rows),
            c: self.c.select(ndarray::Axis(0), rows),
            groups: self.groups.as_ref().map(|g| rows.iter().map(|&r| g[r]).collect()),
        }
    }
}

/// Draws `n` rows from the SEM defined by `w`. Noise for the whole sample is
/// drawn row-major first, then propagated along a topological order.
pub fn sample_sem(w: &WeightedGraph, n: usize, noise_scale: f64, seed: u64) -> Result<Array2<f64>> {
    if !(noise_scale > 0.0) || !noise_scale.is_finite() {
        return Err(NotmadError::invalid(format!("noise scale must be > 0, got {noise_scale}")));
    }
    let order = topological_order(&binarize(w, 0.0)?)
        .ok_or_else(|| NotmadError::invalid("SEM graph must be acyclic"))?;
    let p = w.p();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::<f64>::zeros((n, p));
    for mut row in x.rows_mut() {
        for v in row.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v = noise_scale * e;
        }
    }
    for mut row in x.rows_mut() {
        propagate_row(w.view(), &order, row.as_slice_mut().expect("row is contiguous"));
    }
    Ok(x)
}

/// Turns a row of noise into an SEM sample in place, given a topological
/// order of `w`.
pub(crate) fn propagate_row(w: ArrayView2<f64>, order: &[usize], row: &mut [f64]) {
    for &j in order {
        let mut acc = row[j];
        for (i, &xi) in row.iter().enumerate() {
            let wij = w[[i, j]];
            if wij != 0.0 {
                acc += wij * xi;
            }
        }
        row[j] = acc;
    }
}

fn check_dims(x: &ArrayView2<f64>, w: &WeightedGraph) -> Result<()> {
    if x.ncols() != w.p() {
        return Err(NotmadError::invalid(format!(
            "data has {} columns but graph has {} nodes",
            x.ncols(),
            w.p()
        )));
    }
    if x.nrows() == 0 {
        return Err(NotmadError::invalid("data has no rows"));
    }
    Ok(())
}

/// `(1 / 2n) ||X - X W||_F^2`.
pub fn sem_loss(x: &ArrayView2<f64>, w: &WeightedGraph) -> Result<f64> {
    check_dims(x, w)?;
    let r = x - &x.dot(w.weights());
    Ok(r.iter().map(|v| v * v).sum::<f64>() / (2.0 * x.nrows() as f64))
}

/// `-(1 / n) X^T (X - X W)`, the gradient of [`sem_loss`] in every entry of
/// `W` including the diagonal.
pub fn sem_loss_gradient(x: &ArrayView2<f64>, w: &WeightedGraph) -> Result<Array2<f64>> {
    check_dims(x, w)?;
    let r = x - &x.dot(w.weights());
    Ok(x.t().dot(&r) / -(x.nrows() as f64))
}

/// Residual of one row, `x - x W`.
pub fn row_residual(x: ArrayView1<f64>, w: ArrayView2<f64>) -> Array1<f64> {
    &x - &x.dot(&w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_gradient(x: &Array2<f64>, w: &Array2<f64>, step: f64) -> Array2<f64> {
        let p = w.nrows();
        let mut g = Array2::zeros((p, p));
        // Raw loss, no WeightedGraph so the diagonal can be perturbed too.
        let loss = |w: &Array2<f64>| {
            let r = x - &x.dot(w);
            r.iter().map(|v| v * v).sum::<f64>() / (2.0 * x.nrows() as f64)
        };
        for i in 0..p {
            for j in 0..p {
                let mut plus = w.clone();
                plus[[i, j]] += step;
                let mut minus = w.clone();
                minus[[i, j]] -= step;
                g[[i, j]] = (loss(&plus) - loss(&minus)) / (2.0 * step);
            }
        }
        g
    }

    #[test]
    fn loss_hand_example() {
        let x = array![[1.0, 2.0]];
        let w = WeightedGraph::new(array![[0.0, 2.0], [0.0, 0.0]]).unwrap();
        assert_eq!(sem_loss(&x.view(), &w).unwrap(), 0.5);
    }

    #[test]
    fn loss_at_zero_is_half_mean_square() {
        let x = array![[1.0, -2.0, 0.5], [3.0, 0.0, 1.0]];
        let expect = (1.0 + 4.0 + 0.25 + 9.0 + 1.0) / 4.0;
        assert_eq!(sem_loss(&x.view(), &WeightedGraph::zeros(3)).unwrap(), expect);
        let g = sem_loss_gradient(&x.view(), &WeightedGraph::zeros(3)).unwrap();
        let expect_g = x.t().dot(&x) / -2.0;
        assert_eq!(g, expect_g);
    }

    #[test]
    fn loss_dimension_mismatch() {
        let x = Array2::<f64>::zeros((2, 3));
        assert!(sem_loss(&x.view(), &WeightedGraph::zeros(2)).is_err());
        assert!(sem_loss_gradient(&x.view(), &WeightedGraph::zeros(4)).is_err());
    }

    #[test]
    fn noiseless_children_leave_only_root_residual() {
        let w = WeightedGraph::new(array![[0.0, 1.5, 0.0], [0.0, 0.0, -0.7], [0.0, 0.0, 0.0]]).unwrap();
        let roots = [1.0, -0.3, 2.2, 0.7];
        let mut x = Array2::zeros((4, 3));
        for (r, v) in roots.iter().enumerate() {
            x[[r, 0]] = *v;
            x[[r, 1]] = 1.5 * v;
            x[[r, 2]] = -0.7 * 1.5 * v;
        }
        for r in 0..4 {
            let res = row_residual(x.row(r), w.view());
            assert_eq!(res[0], roots[r]);
            assert!(res[1].abs() < 1e-15 && res[2].abs() < 1e-15);
        }
        let expected = roots.iter().map(|v| v * v).sum::<f64>() / 8.0;
        assert!((sem_loss(&x.view(), &w).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let w = WeightedGraph::with_clamped_diagonal(Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0))).unwrap();
        let g = sem_loss_gradient(&x.view(), &w).unwrap();
        let fd = fd_gradient(&x, w.weights(), 1e-5);
        for (a, b) in g.iter().zip(fd.iter()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_vanishes_on_ols_support() {
        // Fit column 2 on columns 0 and 1 by least squares, then check the
        // gradient restricted to that support is zero.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((40, 3), |_| rng.random_range(-1.0..1.0));
        let xs = x.select(ndarray::Axis(1), &[0, 1]);
        let gram = xs.t().dot(&xs);
        let rhs = xs.t().dot(&x.column(2));
        let beta = crate::linalg::cholesky_solve(&gram, &rhs).unwrap();
        let mut w = Array2::zeros((3, 3));
        w[[0, 2]] = beta[0];
        w[[1, 2]] = beta[1];
        let g = sem_loss_gradient(&x.view(), &WeightedGraph::new(w).unwrap()).unwrap();
        assert!(g[[0, 2]].abs() < 1e-12 && g[[1, 2]].abs() < 1e-12);
    }

    #[test]
    fn sampling_rejects_cycles_and_bad_noise() {
        let cyc = WeightedGraph::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(sample_sem(&cyc, 10, 1.0, 0).is_err());
        assert!(sample_sem(&WeightedGraph::zeros(2), 10, 0.0, 0).is_err());
    }

    #[test]
    fn sampling_is_reproducible() {
        let w = WeightedGraph::new(array![[0.0, 0.8], [0.0, 0.0]]).unwrap();
        let a = sample_sem(&w, 100, 1.0, 42).unwrap();
        let b = sample_sem(&w, 100, 1.0, 42).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert_ne!(a, sample_sem(&w, 100, 1.0, 43).unwrap());
    }

    #[test]
    fn empty_graph_samples_white_noise() {
        let n = 10_000;
        let x = sample_sem(&WeightedGraph::zeros(3), n, 1.0, 1).unwrap();
        let cov = x.t().dot(&x) / n as f64;
        let tol = 3.0 / (n as f64).sqrt();
        for ((i, j), v) in cov.indexed_iter() {
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < tol, "cov[{i},{j}] = {v}");
        }
    }

    #[test]
    fn near_noiseless_propagation() {
        let w = WeightedGraph::new(array![[0.0, 2.0], [0.0, 0.0]]).unwrap();
        let x = sample_sem(&w, 50, 1e-12, 3).unwrap();
        for row in x.rows() {
            assert!((row[1] - 2.0 * row[0]).abs() < 1e-11);
        }
    }

    #[test]
    fn chain_variance_accumulates() {
        let w = WeightedGraph::new(array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]).unwrap();
        let n = 50_000;
        let x = sample_sem(&w, n, 1.0, 77).unwrap();
        let col = x.column(2);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 3.0).abs() < 0.15, "Var(X_2) = {var}");
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(Array2::zeros((2, 2)), Array2::zeros((3, 1)), None).is_err());
        assert!(Dataset::new(Array2::zeros((0, 2)), Array2::zeros((0, 1)), None).is_err());
        assert!(Dataset::new(Array2::zeros((2, 2)), Array2::zeros((2, 1)), Some(vec![0])).is_err());
        let mut x = Array2::zeros((2, 2));
        x[[1, 0]] = f64::INFINITY;
        assert!(Dataset::new(x, Array2::zeros((2, 1)), None).is_err());
        let d = Dataset::new(Array2::zeros((3, 2)), Array2::zeros((3, 0)), Some(vec![0, 1, 1])).unwrap();
        assert_eq!(d.select(&[2, 2]).groups(), Some(&[1, 1][..]));
    }
}
