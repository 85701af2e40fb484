//! Comparison estimators: a penalized continuous DAG learner fitted to the
//! whole population or to context clusters, and leave-one-out sample-specific
//! networks built from a ridge regression fit.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acyclicity::h_with_gradient;
use crate::dag::{project_to_dag, WeightedGraph};
use crate::error::{NotmadError, Result};
use crate::linalg::cholesky_solve;
use crate::sem::Dataset;

pub const KMEANS_RESTARTS: usize = 5;
const KMEANS_MAX_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NotearsConfig {
    pub l1_weight: f64,
    pub rho_init: f64,
    /// Applied when `h` fails to fall by `h_decrease` between rounds.
    pub rho_mult: f64,
    pub rho_max: f64,
    pub h_decrease: f64,
    pub h_tol: f64,
    pub max_rounds: usize,
    pub max_inner_iters: usize,
    /// Stop the inner solve once the proximal gradient mapping is this small.
    pub inner_tol: f64,
}

impl Default for NotearsConfig {
    fn default() -> Self {
        Self {
            l1_weight: 0.01,
            rho_init: 1.0,
            rho_mult: 10.0,
            rho_max: 1e10,
            h_decrease: 0.25,
            h_tol: 1e-10,
            max_rounds: 40,
            max_inner_iters: 5000,
            inner_tol: 1e-6,
        }
    }
}

impl NotearsConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("rho_init", self.rho_init), ("rho_max", self.rho_max), ("inner_tol", self.inner_tol)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NotmadError::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.l1_weight >= 0.0 && self.l1_weight.is_finite()) {
            return Err(NotmadError::invalid(format!("l1_weight must be finite and >= 0, got {}", self.l1_weight)));
        }
        if !(self.rho_mult > 1.0) {
            return Err(NotmadError::invalid(format!("rho_mult must exceed 1, got {}", self.rho_mult)));
        }
        if !(self.h_decrease > 0.0 && self.h_decrease < 1.0) {
            return Err(NotmadError::invalid(format!("h_decrease must lie in (0, 1), got {}", self.h_decrease)));
        }
        if !(self.h_tol >= 0.0) {
            return Err(NotmadError::invalid("h_tol must be >= 0"));
        }
        if self.max_rounds == 0 || self.max_inner_iters == 0 {
            return Err(NotmadError::invalid("max_rounds and max_inner_iters must be >= 1"));
        }
        Ok(())
    }
}

/// Second-moment matrix `XᵀX / n`.
fn second_moment(x: &ArrayView2<f64>) -> Array2<f64> {
    x.t().dot(x) / x.nrows() as f64
}

/// `(1/2n)||X - XW||² + rho h(W)` written in terms of `S = XᵀX / n`, and its gradient.
fn smooth_part(s: &Array2<f64>, w: &Array2<f64>, rho: f64) -> Result<(f64, Array2<f64>)> {
    let p = s.nrows();
    let resid = Array2::<f64>::eye(p) - w;
    let s_resid = s.dot(&resid);
    let loss = 0.5 * (&resid * &s_resid).sum();
    let (h, dh) = h_with_gradient(&w.view())?;
    Ok((loss + rho * h, dh * rho - s_resid))
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn diverged(round: usize) -> NotmadError {
    NotmadError::TrainingDiverged { epoch: round, term: "notears objective".into() }
}

/// Proximal gradient on the penalized objective with backtracking; returns the new iterate.
fn solve_inner(s: &Array2<f64>, mut w: Array2<f64>, rho: f64, cfg: &NotearsConfig, round: usize) -> Result<Array2<f64>> {
    let p = s.nrows();
    let mut step = 1.0;
    let (mut f, mut g) = smooth_part(s, &w, rho)?;
    for _ in 0..cfg.max_inner_iters {
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = Array2::<f64>::zeros((p, p));
            for ((i, j), c) in cand.indexed_iter_mut() {
                if i != j {
                    *c = soft_threshold(w[[i, j]] - step * g[[i, j]], step * cfg.l1_weight);
                }
            }
            let (fc, gc) = smooth_part(s, &cand, rho)?;
            if !fc.is_finite() {
                step *= 0.5;
                continue;
            }
            let diff = &cand - &w;
            let model = f + (&g * &diff).sum() + (&diff * &diff).sum() / (2.0 * step);
            if fc <= model + 1e-12 * f.abs().max(1.0) {
                accepted = Some((cand, fc, gc, diff));
                break;
            }
            step *= 0.5;
        }
        // No step length gives sufficient decrease: the iterate is
        // stationary up to rounding.
        let Some((cand, fc, gc, diff)) = accepted else {
            break;
        };
        let mapping = diff.iter().fold(0.0_f64, |m, d| m.max(d.abs())) / step;
        w = cand;
        f = fc;
        g = gc;
        if mapping < cfg.inner_tol {
            break;
        }
        step *= 1.25;
    }
    if !f.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(diverged(round));
    }
    Ok(w)
}

/// Penalized continuous DAG learner. The weights start at zero, so the
/// result is a deterministic function of `x` and `cfg`; the output is
/// projected onto the DAG set.
pub fn notears_fit(x: &ArrayView2<f64>, cfg: &NotearsConfig) -> Result<WeightedGraph> {
    cfg.validate()?;
    let (n, p) = x.dim();
    if n == 0 || p == 0 {
        return Err(NotmadError::invalid(format!("notears_fit needs n >= 1 and p >= 1, got {n}x{p}")));
    }
    crate::linalg::ensure_finite(x, "data")?;
    let s = second_moment(x);
    let mut w = Array2::<f64>::zeros((p, p));
    let mut rho = cfg.rho_init;
    let mut h_prev = f64::INFINITY;
    for round in 0..cfg.max_rounds {
        w = solve_inner(&s, w, rho, cfg, round)?;
        let (h, _) = h_with_gradient(&w.view())?;
        if h <= cfg.h_tol {
            break;
        }
        if h > cfg.h_decrease * h_prev {
            if rho >= cfg.rho_max {
                break;
            }
            rho = (rho * cfg.rho_mult).min(cfg.rho_max);
        }
        h_prev = h;
    }
    Ok(project_to_dag(&WeightedGraph::with_clamped_diagonal(w)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    pub graph: WeightedGraph,
}

impl PopulationModel {
    pub fn fit(x: &ArrayView2<f64>, cfg: &NotearsConfig) -> Result<Self> {
        Ok(Self { graph: notears_fit(x, cfg)? })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Array2<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center, lowest index on ties.
pub fn nearest_center(centers: &ArrayView2<f64>, c: ArrayView1<f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, center) in centers.rows().into_iter().enumerate() {
        let d = sq_dist(center, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

fn kmeans_once(c: &ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> KMeans {
    let (n, m) = c.dim();
    let mut centers = Array2::<f64>::zeros((k, m));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&c.row(first));
    let mut d2: Vec<f64> = c.rows().into_iter().map(|r| sq_dist(r, c.row(first))).collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(j).assign(&c.row(pick));
        for (i, r) in c.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, c.row(pick)));
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, r) in c.rows().into_iter().enumerate() {
            let a = nearest_center(&centers.view(), r);
            if assignment[i] != a {
                assignment[i] = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, m));
        let mut counts = vec![0usize; k];
        for (i, r) in c.rows().into_iter().enumerate() {
            sums.row_mut(assignment[i]).scaled_add(1.0, &r);
            counts[assignment[i]] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers.row_mut(j).assign(&(&sums.row(j) / counts[j] as f64));
            }
        }
    }
    let inertia = c.rows().into_iter().enumerate().map(|(i, r)| sq_dist(r, centers.row(assignment[i]))).sum();
    KMeans { centers, assignment, inertia }
}

/// Lloyd's algorithm from k-means++ seeds, best of [`KMEANS_RESTARTS`] by
/// inertia. Restart `r` draws from stream `r` of `seed`.
pub fn kmeans(c: &ArrayView2<f64>, k: usize, seed: u64) -> Result<KMeans> {
    let n = c.nrows();
    if k == 0 || n == 0 {
        return Err(NotmadError::invalid(format!("k-means needs k >= 1 and n >= 1, got k = {k}, n = {n}")));
    }
    let mut best: Option<KMeans> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let run = kmeans_once(c, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredModel {
    /// One row per cluster.
    pub centers: Array2<f64>,
    pub graphs: Vec<WeightedGraph>,
    /// Group label of each cluster when fitted from oracle labels.
    pub labels: Option<Vec<usize>>,
    pub warnings: Vec<String>,
}

impl ClusteredModel {
    pub fn n_clusters(&self) -> usize {
        self.graphs.len()
    }

    pub fn assign(&self, c: ArrayView1<f64>) -> usize {
        nearest_center(&self.centers.view(), c)
    }

    pub fn predict(&self, c: ArrayView1<f64>) -> &WeightedGraph {
        &self.graphs[self.assign(c)]
    }

    /// Graph of the cluster fitted to `label`, falling back to the nearest
    /// center for labels unseen in training or models without labels.
    pub fn predict_labeled(&self, c: ArrayView1<f64>, label: usize) -> &WeightedGraph {
        match self.labels.as_ref().and_then(|ls| ls.iter().position(|&l| l == label)) {
            Some(k) => &self.graphs[k],
            None => self.predict(c),
        }
    }
}

fn fit_partition(data: &Dataset, members: &[Vec<usize>], cfg: &NotearsConfig) -> Result<(Array2<f64>, Vec<WeightedGraph>)> {
    let m = data.m();
    let mut centers = Array2::<f64>::zeros((members.len(), m));
    for (k, rows) in members.iter().enumerate() {
        let sub = data.c().select(Axis(0), rows);
        centers.row_mut(k).assign(&sub.mean_axis(Axis(0)).expect("non-empty cluster"));
    }
    let graphs = members
        .par_iter()
        .map(|rows| notears_fit(&data.x().select(Axis(0), rows).view(), cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((centers, graphs))
}

/// Partitions rows by k-means on the contexts (or by the dataset's group
/// labels) and fits [`notears_fit`] per part. A k-means solution with an
/// empty cluster is replaced by a refit with one fewer cluster.
pub fn clustered_fit(
    data: &Dataset,
    n_clusters: usize,
    use_oracle_labels: bool,
    seed: u64,
    cfg: &NotearsConfig,
) -> Result<ClusteredModel> {
    if use_oracle_labels {
        let groups = data
            .groups()
            .ok_or_else(|| NotmadError::invalid("oracle clustering needs group labels"))?;
        let mut labels: Vec<usize> = groups.to_vec();
        labels.sort_unstable();
        labels.dedup();
        let members: Vec<Vec<usize>> = labels
            .iter()
            .map(|l| groups.iter().enumerate().filter(|(_, g)| *g == l).map(|(i, _)| i).collect())
            .collect();
        let (centers, graphs) = fit_partition(data, &members, cfg)?;
        return Ok(ClusteredModel { centers, graphs, labels: Some(labels), warnings: Vec::new() });
    }
    if n_clusters == 0 {
        return Err(NotmadError::invalid("n_clusters must be >= 1"));
    }
    let mut warnings = Vec::new();
    let mut k = n_clusters;
    loop {
        let km = kmeans(&data.c().view(), k, seed)?;
        let mut members = vec![Vec::new(); k];
        for (i, a) in km.assignment.iter().enumerate() {
            members[*a].push(i);
        }
        if members.iter().any(|m| m.is_empty()) {
            let msg = format!("k-means with {k} clusters left a cluster empty; refitting with {}", k - 1);
            log::warn!("{msg}");
            warnings.push(msg);
            k -= 1;
            continue;
        }
        let (centers, graphs) = fit_partition(data, &members, cfg)?;
        return Ok(ClusteredModel { centers, graphs, labels: None, warnings });
    }
}

/// Per-column ridge regression of each variable on all others. A fit is a
/// function of the second-moment matrix only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub lambda: f64,
}

impl Default for RidgeFit {
    fn default() -> Self {
        Self { lambda: 0.1 }
    }
}

impl RidgeFit {
    /// Column `j` solves `(S_{-j,-j} + λI) β = S_{-j,j}` with `S` the second moment.
    pub fn from_moments(&self, s: &Array2<f64>) -> Result<Array2<f64>> {
        let p = s.nrows();
        let mut w = Array2::<f64>::zeros((p, p));
        for j in 0..p {
            let others: Vec<usize> = (0..p).filter(|&i| i != j).collect();
            if others.is_empty() {
                continue;
            }
            let mut a = s.select(Axis(0), &others).select(Axis(1), &others);
            for d in 0..others.len() {
                a[[d, d]] += self.lambda;
            }
            let b: Array1<f64> = others.iter().map(|&i| s[[i, j]]).collect();
            let beta = cholesky_solve(&a, &b)?;
            for (idx, &i) in others.iter().enumerate() {
                w[[i, j]] = beta[idx];
            }
        }
        Ok(w)
    }
}

/// Estimator used inside [`lioness_networks`].
pub trait NetworkFit: Sync {
    fn fit(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>>;
}

impl NetworkFit for RidgeFit {
    fn fit(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if !(self.lambda > 0.0) {
            return Err(NotmadError::invalid(format!("ridge lambda must be > 0, got {}", self.lambda)));
        }
        self.from_moments(&second_moment(x))
    }
}

impl<F> NetworkFit for F
where
    F: Fn(&ArrayView2<f64>) -> Result<Array2<f64>> + Sync,
{
    fn fit(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self(x)
    }
}

fn lioness_combine(w_with: &Array2<f64>, w_without: &Array2<f64>, n_with: usize) -> Result<WeightedGraph> {
    WeightedGraph::with_clamped_diagonal((w_with - w_without) * n_with as f64 + w_without)
}

/// `W^(i) = n (W_all - W_{-i}) + W_{-i}` for every row `i` of `x`.
pub fn lioness_networks<F: NetworkFit>(x: &ArrayView2<f64>, fit: &F) -> Result<Vec<WeightedGraph>> {
    let n = x.nrows();
    if n < 2 {
        return Err(NotmadError::invalid(format!("LIONESS needs n >= 2, got {n}")));
    }
    let w_all = fit.fit(x)?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&r| r != i).collect();
            let w_minus = fit.fit(&x.select(Axis(0), &keep).view())?;
            lioness_combine(&w_all, &w_minus, n)
        })
        .collect()
}

/// Networks for rows not in the training set: row `x` is treated as the
/// `(n+1)`-th sample, so `W^(x) = (n+1)(W_{train+x} - W_train) + W_train`.
pub fn lioness_heldout<F: NetworkFit>(train: &ArrayView2<f64>, test: &ArrayView2<f64>, fit: &F) -> Result<Vec<WeightedGraph>> {
    if train.ncols() != test.ncols() {
        return Err(NotmadError::invalid("train and test must have the same number of columns"));
    }
    let n = train.nrows();
    let w_train = fit.fit(train)?;
    (0..test.nrows())
        .into_par_iter()
        .map(|i| {
            let mut aug = Array2::<f64>::zeros((n + 1, train.ncols()));
            aug.slice_mut(s![..n, ..]).assign(train);
            aug.row_mut(n).assign(&test.row(i));
            let w_aug = fit.fit(&aug.view())?;
            lioness_combine(&w_aug, &w_train, n + 1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::{binarize, is_dag, BinaryStructure};
    use crate::sem::{sample_sem, sem_loss};
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    fn gaussian(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        Array2::from_shape_fn((n, p), |_| normal.sample(&mut rng))
    }

    #[test]
    fn two_node_edge_is_recovered_with_orientation() {
        let root = gaussian(500, 1, 1);
        let mut x = Array2::zeros((500, 2));
        for i in 0..500 {
            x[[i, 0]] = root[[i, 0]];
            x[[i, 1]] = 1.5 * root[[i, 0]];
        }
        let w = notears_fit(&x.view(), &NotearsConfig::default()).unwrap();
        assert!((w.get(0, 1) - 1.5).abs() < 0.1, "weight {}", w.get(0, 1));
        assert!(w.get(1, 0).abs() < 1e-3, "reverse {}", w.get(1, 0));
    }

    #[test]
    fn pure_noise_with_strong_l1_is_empty() {
        let x = gaussian(400, 5, 2);
        let cfg = NotearsConfig { l1_weight: 0.5, ..NotearsConfig::default() };
        let w = notears_fit(&x.view(), &cfg).unwrap();
        assert_eq!(w.max_abs(), 0.0);
    }

    #[test]
    fn single_node_graph_is_empty_with_plain_loss() {
        let x = array![[1.0], [-2.0], [0.5]];
        let w = notears_fit(&x.view(), &NotearsConfig::default()).unwrap();
        assert_eq!(w.p(), 1);
        assert_eq!(w.get(0, 0), 0.0);
        let expected = (1.0 + 4.0 + 0.25) / 6.0;
        assert!((sem_loss(&x.view(), &w).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn notears_output_is_acyclic() {
        let x = gaussian(100, 6, 3);
        let cfg = NotearsConfig { l1_weight: 0.0, ..NotearsConfig::default() };
        let w = notears_fit(&x.view(), &cfg).unwrap();
        assert!(is_dag(&binarize(&w, 0.0).unwrap()));
    }

    #[test]
    fn notears_rejects_bad_config() {
        let x = gaussian(10, 2, 4);
        assert!(notears_fit(&x.view(), &NotearsConfig { rho_mult: 1.0, ..NotearsConfig::default() }).is_err());
        assert!(notears_fit(&x.view(), &NotearsConfig { l1_weight: -1.0, ..NotearsConfig::default() }).is_err());
    }

    #[test]
    fn chain_structure_is_recovered() {
        let truth = WeightedGraph::new(array![
            [0.0, 1.2, 0.0, 0.0],
            [0.0, 0.0, -1.0, 0.0],
            [0.0, 0.0, 0.0, 0.8],
            [0.0, 0.0, 0.0, 0.0]
        ])
        .unwrap();
        let x = sample_sem(&truth, 2000, 1.0, 9).unwrap();
        let w = notears_fit(&x.view(), &NotearsConfig::default()).unwrap();
        let est = binarize(&w, 0.3).unwrap();
        assert_eq!(est, BinaryStructure::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap());
    }

    fn blobs(seed: u64) -> Dataset {
        let noise = gaussian(60, 2, seed);
        let x = gaussian(60, 3, seed + 1);
        let mut c = Array2::zeros((60, 2));
        for i in 0..60 {
            let offset = if i % 2 == 0 { 20.0 } else { -20.0 };
            c[[i, 0]] = offset + noise[[i, 0]];
            c[[i, 1]] = noise[[i, 1]];
        }
        let groups = (0..60).map(|i| i % 2).collect();
        Dataset::new(x, c, Some(groups)).unwrap()
    }

    #[test]
    fn single_cluster_matches_population() {
        let data = blobs(10);
        let cfg = NotearsConfig::default();
        let clustered = clustered_fit(&data, 1, false, 7, &cfg).unwrap();
        let population = PopulationModel::fit(&data.x().view(), &cfg).unwrap();
        assert_eq!(clustered.graphs, vec![population.graph]);
    }

    #[test]
    fn separated_blobs_cluster_perfectly_and_match_oracle() {
        let data = blobs(20);
        let cfg = NotearsConfig::default();
        let km = kmeans(&data.c().view(), 2, 3).unwrap();
        let groups = data.groups().unwrap();
        let agree = (0..60).filter(|&i| (km.assignment[i] == km.assignment[0]) == (groups[i] == groups[0])).count();
        assert_eq!(agree, 60);

        let clustered = clustered_fit(&data, 2, false, 3, &cfg).unwrap();
        let oracle = clustered_fit(&data, 0, true, 3, &cfg).unwrap();
        for g in 0..2 {
            let rep = (0..60).find(|&i| groups[i] == g).unwrap();
            let c = data.c().row(rep);
            assert_eq!(clustered.predict(c), oracle.predict_labeled(c, g));
        }
    }

    #[test]
    fn oracle_clusters_equal_separate_group_fits() {
        let data = blobs(30);
        let cfg = NotearsConfig::default();
        let oracle = clustered_fit(&data, 0, true, 0, &cfg).unwrap();
        assert_eq!(oracle.labels, Some(vec![0, 1]));
        for g in 0..2 {
            let rows: Vec<usize> = (0..60).filter(|i| i % 2 == g).collect();
            let direct = notears_fit(&data.x().select(Axis(0), &rows).view(), &cfg).unwrap();
            assert_eq!(oracle.graphs[g], direct);
        }
    }

    #[test]
    fn oracle_without_labels_is_an_error() {
        let data = Dataset::new(gaussian(5, 2, 1), gaussian(5, 1, 2), None).unwrap();
        assert!(clustered_fit(&data, 1, true, 0, &NotearsConfig::default()).is_err());
    }

    #[test]
    fn too_many_clusters_shrink_with_warning() {
        let x = gaussian(4, 2, 5);
        let c = array![[0.0], [0.0], [5.0], [5.0]];
        let data = Dataset::new(x, c, None).unwrap();
        let model = clustered_fit(&data, 3, false, 1, &NotearsConfig::default()).unwrap();
        assert_eq!(model.n_clusters(), 2);
        assert_eq!(model.warnings.len(), 1);
    }

    #[test]
    fn kmeans_is_deterministic() {
        let c = gaussian(50, 3, 6);
        assert_eq!(kmeans(&c.view(), 4, 11).unwrap(), kmeans(&c.view(), 4, 11).unwrap());
    }

    #[test]
    fn lioness_identical_rows_give_population_network() {
        let row = array![0.3, -1.2, 0.8];
        let x = Array2::from_shape_fn((5, 3), |(_, j)| row[j]);
        let fit = RidgeFit::default();
        let w_all = fit.fit(&x.view()).unwrap();
        for w in lioness_networks(&x.view(), &fit).unwrap() {
            assert!((w.weights() - &w_all).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn lioness_two_rows_plug_in() {
        let x = array![[1.0, 0.5], [-0.3, 2.0]];
        let fit = RidgeFit::default();
        let w_all = fit.fit(&x.view()).unwrap();
        let w_minus_first = fit.fit(&x.slice(s![1..2, ..])).unwrap();
        let expected = &w_all * 2.0 - &w_minus_first;
        let nets = lioness_networks(&x.view(), &fit).unwrap();
        assert!((nets[0].weights() - &expected).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn lioness_mean_identity_for_moment_linear_fit() {
        // Off-diagonal second moments: linear in the sufficient statistics.
        let moment_fit = |x: &ArrayView2<f64>| -> Result<Array2<f64>> {
            let mut s = second_moment(x);
            s.diag_mut().fill(0.0);
            Ok(s)
        };
        let x = gaussian(40, 4, 8);
        let nets = lioness_networks(&x.view(), &moment_fit).unwrap();
        let mut mean = Array2::<f64>::zeros((4, 4));
        for w in &nets {
            mean += w.weights();
        }
        mean /= nets.len() as f64;
        let w_all = moment_fit(&x.view()).unwrap();
        assert!((mean - w_all).iter().all(|d| d.abs() < 1e-6));
    }

    #[test]
    fn lioness_ridge_mean_deviation_shrinks_with_n() {
        let fit = RidgeFit::default();
        let gap = |n: usize| {
            let x = gaussian(n, 3, 12);
            let nets = lioness_networks(&x.view(), &fit).unwrap();
            let mut mean = Array2::<f64>::zeros((3, 3));
            for w in &nets {
                mean += w.weights();
            }
            mean /= n as f64;
            (mean - fit.fit(&x.view()).unwrap()).iter().fold(0.0_f64, |m, d| m.max(d.abs()))
        };
        let (small, large) = (gap(50), gap(800));
        assert!(large < small / 4.0, "gap {small} -> {large}");
        assert!(large < 1e-2);
    }

    #[test]
    fn lioness_heldout_matches_leave_one_out_of_augmented_set() {
        let x = gaussian(30, 3, 13);
        let fit = RidgeFit::default();
        let train = x.slice(s![..29, ..]);
        let test = x.slice(s![29.., ..]);
        let held = lioness_heldout(&train, &test, &fit).unwrap();
        let loo = lioness_networks(&x.view(), &fit).unwrap();
        assert!((held[0].weights() - loo[29].weights()).iter().all(|d| d.abs() < 1e-10));
    }

    #[test]
    fn lioness_needs_two_rows() {
        let x = array![[1.0, 2.0]];
        assert!(lioness_networks(&x.view(), &RidgeFit::default()).is_err());
    }
}
