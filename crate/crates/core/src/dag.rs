//! Exact structural algorithms on weighted directed graphs: binarization,
//! cycle detection, projection onto the DAG set and the archetype
//! compatibility check.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NotmadError, Result};
use crate::linalg::{ensure_finite, ensure_square};

/// A `p x p` edge-weight matrix with an exactly-zero diagonal. Entry `(i, j)`
/// is the weight of the edge `i -> j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    weights: Array2<f64>,
}

impl WeightedGraph {
    /// Wraps `weights`, rejecting non-square, non-finite or self-loop input.
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        ensure_square(&weights.view(), "weight matrix")?;
        ensure_finite(&weights.view(), "weight matrix")?;
        if let Some(i) = (0..weights.nrows()).find(|&i| weights[[i, i]] != 0.0) {
            return Err(NotmadError::invalid(format!("diagonal entry ({i}, {i}) is nonzero")));
        }
        Ok(Self { weights })
    }

    /// Wraps `weights` after zeroing its diagonal.
    pub fn with_clamped_diagonal(mut weights: Array2<f64>) -> Result<Self> {
        ensure_square(&weights.view(), "weight matrix")?;
        weights.diag_mut().fill(0.0);
        Self::new(weights)
    }

    pub fn zeros(p: usize) -> Self {
        Self { weights: Array2::zeros((p, p)) }
    }

    pub fn p(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.weights
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.weights[[from, to]]
    }

    /// Largest absolute weight, 0 for the empty graph.
    pub fn max_abs(&self) -> f64 {
        self.weights.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Zeroes every entry with `|w| <= threshold`.
    pub fn thresholded(&self, threshold: f64) -> Self {
        Self { weights: self.weights.mapv(|v| if v.abs() > threshold { v } else { 0.0 }) }
    }
}

/// Boolean adjacency structure with a false diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryStructure {
    edges: Array2<bool>,
}

impl BinaryStructure {
    pub fn empty(p: usize) -> Self {
        Self { edges: Array2::from_elem((p, p), false) }
    }

    /// Builds a structure from `(from, to)` pairs. Self loops are rejected.
    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut s = Self::empty(p);
        for &(i, j) in edges {
            if i >= p || j >= p {
                return Err(NotmadError::invalid(format!("edge ({i}, {j}) out of range for p = {p}")));
            }
            if i == j {
                return Err(NotmadError::invalid(format!("self loop at node {i}")));
            }
            s.edges[[i, j]] = true;
        }
        Ok(s)
    }

    pub fn p(&self) -> usize {
        self.edges.nrows()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges[[from, to]]
    }

    pub fn set_edge(&mut self, from: usize, to: usize, present: bool) {
        assert_ne!(from, to, "self loops are not representable");
        self.edges[[from, to]] = present;
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    /// Edges in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.edges
            .indexed_iter()
            .filter(|(_, &e)| e)
            .map(|((i, j), _)| (i, j))
            .collect()
    }

    /// Union of two structures over the same node set.
    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.p() != other.p() {
            return Err(NotmadError::invalid(format!(
                "structure sizes differ: {} vs {}",
                self.p(),
                other.p()
            )));
        }
        let mut edges = self.edges.clone();
        edges.zip_mut_with(&other.edges, |a, &b| *a |= b);
        Ok(Self { edges })
    }

    /// 0/1 matrix of the structure.
    pub fn to_matrix(&self) -> Array2<f64> {
        self.edges.mapv(|e| if e { 1.0 } else { 0.0 })
    }

    /// Is `target` reachable from `start` along directed edges?
    fn reaches(&self, start: usize, target: usize) -> bool {
        let p = self.p();
        let mut seen = vec![false; p];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            if u == target {
                return true;
            }
            for v in 0..p {
                if self.edges[[u, v]] && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        false
    }
}

/// `edges[i][j] = |W_ij| > threshold`.
pub fn binarize(w: &WeightedGraph, threshold: f64) -> Result<BinaryStructure> {
    if !(threshold >= 0.0) {
        return Err(NotmadError::invalid(format!("threshold must be >= 0, got {threshold}")));
    }
    let mut edges = w.weights.mapv(|v| v.abs() > threshold);
    edges.diag_mut().fill(false);
    Ok(BinaryStructure { edges })
}

/// Topological order by Kahn's algorithm, smallest available index first.
/// `None` if the structure has a cycle.
pub fn topological_order(a: &BinaryStructure) -> Option<Vec<usize>> {
    let p = a.p();
    let mut indegree: Vec<usize> = (0..p)
        .map(|j| (0..p).filter(|&i| a.edges[[i, j]]).count())
        .collect();
    let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = (0..p)
        .filter(|&j| indegree[j] == 0)
        .map(std::cmp::Reverse)
        .collect();
    let mut order = Vec::with_capacity(p);
    while let Some(std::cmp::Reverse(u)) = ready.pop() {
        order.push(u);
        for v in 0..p {
            if a.edges[[u, v]] {
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    ready.push(std::cmp::Reverse(v));
                }
            }
        }
    }
    (order.len() == p).then_some(order)
}

pub fn is_dag(a: &BinaryStructure) -> bool {
    topological_order(a).is_some()
}

/// Projects `w` onto the DAG set.
///
/// First binary-searches the sorted distinct magnitudes of `w` for the
/// smallest threshold whose surviving edges are acyclic, then walks the
/// edges that threshold removed in order of decreasing magnitude (ties by
/// row, then column) and restores each one that does not close a cycle.
/// Retained edges keep their original weight.
pub fn project_to_dag(w: &WeightedGraph) -> WeightedGraph {
    let p = w.p();
    let mut magnitudes: Vec<f64> = w.weights.iter().map(|v| v.abs()).filter(|&m| m > 0.0).collect();
    magnitudes.sort_by(f64::total_cmp);
    magnitudes.dedup();

    // Candidate thresholds: 0 keeps every nonzero edge, the largest
    // magnitude removes all of them.
    let mut candidates = Vec::with_capacity(magnitudes.len() + 1);
    candidates.push(0.0);
    candidates.extend_from_slice(&magnitudes);

    let acyclic_at = |t: f64| is_dag(&binarize(w, t).expect("threshold is non-negative"));
    let (mut lo, mut hi) = (0usize, candidates.len() - 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if acyclic_at(candidates[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let threshold = candidates[lo];
    let mut kept = binarize(w, threshold).expect("threshold is non-negative");

    let mut excluded: Vec<(usize, usize)> = (0..p)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .filter(|&(i, j)| {
            let m = w.weights[[i, j]].abs();
            i != j && m > 0.0 && m <= threshold
        })
        .collect();
    excluded.sort_by(|&a, &b| {
        w.weights[[b.0, b.1]]
            .abs()
            .total_cmp(&w.weights[[a.0, a.1]].abs())
            .then(a.cmp(&b))
    });
    for (i, j) in excluded {
        if !kept.reaches(j, i) {
            kept.edges[[i, j]] = true;
        }
    }

    let mut out = w.weights.clone();
    out.zip_mut_with(&kept.edges, |v, &keep| {
        if !keep {
            *v = 0.0;
        }
    });
    WeightedGraph { weights: out }
}

/// Outcome of [`mixture_compatibility_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompatibilityReport {
    /// Whether `A(W1) + A(W2)` is acyclic. When false the implication has
    /// nothing to say and the check passes vacuously.
    pub union_acyclic: bool,
    /// Number of mixing coefficients that were tried.
    pub trials_run: usize,
    /// Number of sampled mixtures `a W1 + W2` that were cyclic.
    pub cyclic_mixtures: usize,
}

impl CompatibilityReport {
    pub fn holds(&self) -> bool {
        !self.union_acyclic || self.cyclic_mixtures == 0
    }
}

/// Samples `a ~ U[-10, 10]` and checks that `a W1 + W2` is a DAG whenever
/// the union of the two supports is.
pub fn mixture_compatibility_check(
    w1: &WeightedGraph,
    w2: &WeightedGraph,
    trials: usize,
    seed: u64,
) -> Result<CompatibilityReport> {
    if w1.p() != w2.p() {
        return Err(NotmadError::invalid(format!("graph sizes differ: {} vs {}", w1.p(), w2.p())));
    }
    if trials == 0 {
        return Err(NotmadError::invalid("trials must be >= 1"));
    }
    let union = binarize(w1, 0.0)?.union(&binarize(w2, 0.0)?)?;
    let union_acyclic = is_dag(&union);
    if !union_acyclic {
        return Ok(CompatibilityReport { union_acyclic, trials_run: 0, cyclic_mixtures: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cyclic_mixtures = 0;
    for _ in 0..trials {
        let a: f64 = rng.random_range(-10.0..=10.0);
        let mixed = WeightedGraph { weights: &w1.weights * a + &w2.weights };
        if !is_dag(&binarize(&mixed, 0.0)?) {
            cyclic_mixtures += 1;
        }
    }
    Ok(CompatibilityReport { union_acyclic, trials_run: trials, cyclic_mixtures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn wg(a: Array2<f64>) -> WeightedGraph {
        WeightedGraph::new(a).unwrap()
    }

    /// Every subset of the edges of `w` that is acyclic, largest total
    /// magnitude first. Brute force for tiny graphs.
    fn best_acyclic_subsets(w: &WeightedGraph) -> Vec<(f64, BinaryStructure)> {
        let edges = binarize(w, 0.0).unwrap().edges();
        let mut out = Vec::new();
        for mask in 0u32..(1 << edges.len()) {
            let chosen: Vec<_> = edges
                .iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, &e)| e)
                .collect();
            let s = BinaryStructure::from_edges(w.p(), &chosen).unwrap();
            if is_dag(&s) {
                let total: f64 = chosen.iter().map(|&(i, j)| w.get(i, j).abs()).sum();
                out.push((total, s));
            }
        }
        out.sort_by(|a, b| b.0.total_cmp(&a.0));
        out
    }

    #[test]
    fn binarize_examples() {
        let w = wg(array![[0.0, 0.5], [0.0, 0.0]]);
        assert_eq!(binarize(&w, 0.0).unwrap().edges(), vec![(0, 1)]);
        let w = wg(array![[0.0, 0.5], [0.05, 0.0]]);
        assert_eq!(binarize(&w, 0.1).unwrap().edges(), vec![(0, 1)]);
        assert_eq!(binarize(&WeightedGraph::zeros(3), 0.0).unwrap().edge_count(), 0);
        assert!(binarize(&w, -0.1).is_err());
    }

    #[test]
    fn weighted_graph_rejects_bad_input() {
        assert!(WeightedGraph::new(array![[1.0, 0.0], [0.0, 0.0]]).is_err());
        assert!(WeightedGraph::new(array![[0.0, f64::NAN], [0.0, 0.0]]).is_err());
        assert!(WeightedGraph::new(Array2::zeros((2, 3))).is_err());
        let w = WeightedGraph::with_clamped_diagonal(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(w.weights(), &array![[0.0, 2.0], [3.0, 0.0]]);
    }

    #[test]
    fn is_dag_examples() {
        assert!(is_dag(&BinaryStructure::from_edges(3, &[(0, 1), (1, 2)]).unwrap()));
        assert!(!is_dag(&BinaryStructure::from_edges(2, &[(0, 1), (1, 0)]).unwrap()));
        assert!(is_dag(&BinaryStructure::empty(6)));
        assert_eq!(
            topological_order(&BinaryStructure::from_edges(3, &[(2, 0), (0, 1)]).unwrap()),
            Some(vec![2, 0, 1])
        );
    }

    #[test]
    fn projection_keeps_dags() {
        let w = wg(array![[0.0, 0.3, -0.2], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]);
        assert_eq!(project_to_dag(&w), w);
    }

    #[test]
    fn projection_two_cycle_keeps_stronger_edge() {
        let w = wg(array![[0.0, 0.9], [0.1, 0.0]]);
        let best = best_acyclic_subsets(&w);
        assert_eq!(best[0].1.edges(), vec![(0, 1)]);
        assert_eq!(project_to_dag(&w).weights(), &array![[0.0, 0.9], [0.0, 0.0]]);
    }

    #[test]
    fn projection_three_cycle_drops_weakest() {
        let w = wg(array![[0.0, 0.5, 0.4], [0.0, 0.0, 0.3], [0.2, 0.0, 0.0]]);
        let best = best_acyclic_subsets(&w);
        assert_eq!(best[0].1.edges(), vec![(0, 1), (0, 2), (1, 2)]);
        let proj = project_to_dag(&w);
        assert_eq!(proj.weights(), &array![[0.0, 0.5, 0.4], [0.0, 0.0, 0.3], [0.0, 0.0, 0.0]]);
    }

    #[test]
    fn projection_reinserts_edges_below_threshold() {
        // Cycle 0->1->0 forces threshold 0.5; the weak edge 2->3 is
        // below it but compatible and must come back.
        let mut a = Array2::zeros((4, 4));
        a[[0, 1]] = 0.8;
        a[[1, 0]] = 0.5;
        a[[2, 3]] = 0.1;
        let proj = project_to_dag(&wg(a));
        assert_eq!(binarize(&proj, 0.0).unwrap().edges(), vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn projection_ties_break_lexicographically() {
        let w = wg(array![[0.0, 0.5], [0.5, 0.0]]);
        assert_eq!(binarize(&project_to_dag(&w), 0.0).unwrap().edges(), vec![(0, 1)]);
    }

    #[test]
    fn compatibility_examples() {
        let mut a = Array2::zeros((3, 3));
        a[[0, 1]] = 1.0;
        let mut b = Array2::zeros((3, 3));
        b[[1, 2]] = 1.0;
        let r = mixture_compatibility_check(&wg(a.clone()), &wg(b), 50, 1).unwrap();
        assert!(r.union_acyclic && r.holds());
        assert_eq!(r.trials_run, 50);

        let mut c = Array2::zeros((3, 3));
        c[[1, 0]] = 1.0;
        let r = mixture_compatibility_check(&wg(a), &wg(c), 50, 1).unwrap();
        assert!(!r.union_acyclic);
        assert!(r.holds());

        assert!(mixture_compatibility_check(&WeightedGraph::zeros(2), &WeightedGraph::zeros(3), 1, 0).is_err());
    }

    #[test]
    fn compatibility_upper_triangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut upper = || {
            Array2::from_shape_fn((8, 8), |(i, j)| {
                if j > i && rng.random_bool(0.3) {
                    rng.random_range(-2.0..2.0)
                } else {
                    0.0
                }
            })
        };
        let (a, b) = (wg(upper()), wg(upper()));
        assert!(mixture_compatibility_check(&a, &b, 100, 9).unwrap().holds());
    }

    fn small_graph() -> impl Strategy<Value = WeightedGraph> {
        (2usize..=5).prop_flat_map(|p| {
            proptest::collection::vec((0..p, 0..p, -2.0f64..2.0), 0..=8).prop_map(move |edges| {
                let mut a = Array2::zeros((p, p));
                for (i, j, v) in edges {
                    if i != j {
                        a[[i, j]] = v;
                    }
                }
                WeightedGraph::new(a).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn projection_is_acyclic_idempotent_and_preserving(w in small_graph()) {
            let proj = project_to_dag(&w);
            prop_assert!(is_dag(&binarize(&proj, 0.0).unwrap()));
            prop_assert_eq!(project_to_dag(&proj), proj.clone());
            for ((i, j), &v) in proj.weights().indexed_iter() {
                prop_assert!(v == 0.0 || v == w.get(i, j));
            }
        }

        #[test]
        fn greedy_result_contains_threshold_graph(w in small_graph()) {
            let proj = binarize(&project_to_dag(&w), 0.0).unwrap();
            let mut mags: Vec<f64> = w.weights().iter().map(|v| v.abs()).filter(|&m| m > 0.0).collect();
            mags.sort_by(f64::total_cmp);
            let t = std::iter::once(0.0)
                .chain(mags)
                .find(|&t| is_dag(&binarize(&w, t).unwrap()))
                .unwrap();
            for (i, j) in binarize(&w, t).unwrap().edges() {
                prop_assert!(proj.has_edge(i, j));
            }
        }
    }
}
