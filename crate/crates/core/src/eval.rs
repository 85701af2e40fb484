//! Held-out error, structure recovery and the bootstrap comparison protocol.
//!
//! Held-out MSE is the per-row squared residual norm divided by `p`,
//! averaged over rows. Every method's predicted networks go through the same
//! [`Postprocess`] before scoring; ground-truth networks are scored as given.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{clustered_fit, lioness_heldout, notears_fit, NotearsConfig, RidgeFit};
use crate::dag::{binarize, project_to_dag, BinaryStructure, WeightedGraph};
use crate::error::{NotmadError, Result};
use crate::io::{write_atomic, write_json};
use crate::mixture::ArchetypeDictionary;
use crate::notmad::{train, TrainConfig};
use crate::sem::{row_residual, Dataset};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const STRUCTURE_THRESHOLDS: [f64; 5] = [0.01, 0.05, 0.1, 0.2, 0.3];

fn per_row_errors(networks: &[WeightedGraph], x_test: &ArrayView2<f64>) -> Result<Vec<f64>> {
    let (n, p) = x_test.dim();
    if networks.len() != n {
        return Err(NotmadError::invalid(format!("{} networks for {n} test rows", networks.len())));
    }
    if n == 0 {
        return Err(NotmadError::invalid("test set is empty"));
    }
    networks
        .iter()
        .enumerate()
        .map(|(i, w)| {
            if w.p() != p {
                return Err(NotmadError::invalid(format!("network {i} has p = {}, data has p = {p}", w.p())));
            }
            let r = row_residual(x_test.row(i), w.view());
            Ok(r.dot(&r) / p as f64)
        })
        .collect()
}

/// Mean over rows of `||x - xW||² / p`, one network per row.
pub fn heldout_mse(networks: &[WeightedGraph], x_test: &ArrayView2<f64>) -> Result<f64> {
    let errs = per_row_errors(networks, x_test)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Edge insertions, deletions and reversals turning `estimated` into
/// `truth`; each unordered node pair contributes at most one.
pub fn structural_hamming(estimated: &BinaryStructure, truth: &BinaryStructure) -> Result<usize> {
    let p = truth.p();
    if estimated.p() != p {
        return Err(NotmadError::invalid(format!("structures have p = {} and p = {p}", estimated.p())));
    }
    let mut count = 0;
    for i in 0..p {
        for j in (i + 1)..p {
            let a = (estimated.has_edge(i, j), estimated.has_edge(j, i));
            let b = (truth.has_edge(i, j), truth.has_edge(j, i));
            if a != b {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Directed-edge precision, recall and F1. An empty prediction has
/// precision 1 and an empty truth has recall 1, so empty against empty
/// scores F1 = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn edge_scores(estimated: &BinaryStructure, truth: &BinaryStructure) -> Result<EdgeScores> {
    let p = truth.p();
    if estimated.p() != p {
        return Err(NotmadError::invalid(format!("structures have p = {} and p = {p}", estimated.p())));
    }
    let est = estimated.edges();
    let tp = est.iter().filter(|(i, j)| truth.has_edge(*i, *j)).count() as f64;
    let n_est = est.len() as f64;
    let n_true = truth.edge_count() as f64;
    let precision = if n_est == 0.0 { 1.0 } else { tp / n_est };
    let recall = if n_true == 0.0 { 1.0 } else { tp / n_true };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(EdgeScores { precision, recall, f1 })
}

/// Mean edge F1 after greedily matching each true archetype to a distinct
/// estimated one, best pair first. Ties go to the true archetype with the
/// lexicographically smallest edge list, then the lowest estimated index, so
/// the score does not depend on the order of `truth`.
pub fn archetype_recovery(estimated: &ArchetypeDictionary, truth: &ArchetypeDictionary, threshold: f64) -> Result<f64> {
    if estimated.k() < truth.k() {
        return Err(NotmadError::invalid(format!(
            "{} estimated archetypes cannot cover {} true ones",
            estimated.k(),
            truth.k()
        )));
    }
    if estimated.p() != truth.p() {
        return Err(NotmadError::invalid("archetype dictionaries differ in p"));
    }
    let est: Vec<BinaryStructure> = estimated.archetypes().iter().map(|w| binarize(w, threshold)).collect::<Result<_>>()?;
    let tru: Vec<BinaryStructure> = truth.archetypes().iter().map(|w| binarize(w, 0.0)).collect::<Result<_>>()?;
    let mut pairs = Vec::with_capacity(est.len() * tru.len());
    for (t, tb) in tru.iter().enumerate() {
        for (e, eb) in est.iter().enumerate() {
            pairs.push((edge_scores(eb, tb)?.f1, t, e));
        }
    }
    let keys: Vec<Vec<(usize, usize)>> = tru.iter().map(|t| t.edges()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(keys[a.1].cmp(&keys[b.1])).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; tru.len()];
    let mut used_e = vec![false; est.len()];
    let mut total = 0.0;
    for (f1, t, e) in pairs {
        if !used_t[t] && !used_e[e] {
            used_t[t] = true;
            used_e[e] = true;
            total += f1;
        }
    }
    Ok(total / tru.len() as f64)
}

/// Thresholding and DAG projection applied to predicted networks before
/// they are scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Postprocess {
    pub threshold: f64,
    pub project: bool,
}

impl Default for Postprocess {
    fn default() -> Self {
        Self { threshold: 0.05, project: true }
    }
}

impl Postprocess {
    pub fn apply(&self, w: &WeightedGraph) -> WeightedGraph {
        let t = w.thresholded(self.threshold);
        if self.project {
            project_to_dag(&t)
        } else {
            t
        }
    }
}

/// An estimator that produces one network per test row after fitting on
/// the training rows.
pub trait Method: Sync {
    fn name(&self) -> String;
    fn fit_predict(&self, train: &Dataset, test: &Dataset, seed: u64) -> Result<Vec<WeightedGraph>>;
    /// Whether [`Postprocess`] applies to this method's output.
    fn postprocessed(&self) -> bool {
        true
    }
}

/// Full archetype-mixture model; `config.seed` is replaced by the call's seed.
#[derive(Debug, Clone)]
pub struct NotmadMethod {
    pub label: String,
    pub config: TrainConfig,
}

impl Method for NotmadMethod {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn fit_predict(&self, train_data: &Dataset, test: &Dataset, seed: u64) -> Result<Vec<WeightedGraph>> {
        let cfg = TrainConfig { seed, batch_size: self.config.batch_size.min(train_data.n()), ..self.config.clone() };
        let model = train(train_data, &cfg)?;
        (0..test.n()).map(|i| model.generator.graph_for(test.c().row(i))).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct PopulationMethod {
    pub notears: NotearsConfig,
}

impl Method for PopulationMethod {
    fn name(&self) -> String {
        "population".into()
    }

    fn fit_predict(&self, train_data: &Dataset, test: &Dataset, _seed: u64) -> Result<Vec<WeightedGraph>> {
        let w = notears_fit(&train_data.x().view(), &self.notears)?;
        Ok(vec![w; test.n()])
    }
}

/// k-means on the contexts, one population fit per cluster.
#[derive(Debug, Clone)]
pub struct ClusteredMethod {
    pub n_clusters: usize,
    pub notears: NotearsConfig,
}

impl Method for ClusteredMethod {
    fn name(&self) -> String {
        "clustered".into()
    }

    fn fit_predict(&self, train_data: &Dataset, test: &Dataset, seed: u64) -> Result<Vec<WeightedGraph>> {
        let model = clustered_fit(train_data, self.n_clusters, false, seed, &self.notears)?;
        Ok((0..test.n()).map(|i| model.predict(test.c().row(i)).clone()).collect())
    }
}

/// One population fit per known group; test rows use their own group's graph.
#[derive(Debug, Clone, Default)]
pub struct OracleClusteredMethod {
    pub notears: NotearsConfig,
}

impl Method for OracleClusteredMethod {
    fn name(&self) -> String {
        "oracle_clustered".into()
    }

    fn fit_predict(&self, train_data: &Dataset, test: &Dataset, seed: u64) -> Result<Vec<WeightedGraph>> {
        let model = clustered_fit(train_data, 0, true, seed, &self.notears)?;
        let groups = test_groups(test)?;
        Ok((0..test.n()).map(|i| model.predict_labeled(test.c().row(i), groups[i]).clone()).collect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct LionessMethod {
    pub ridge: RidgeFit,
}

impl Method for LionessMethod {
    fn name(&self) -> String {
        "lioness".into()
    }

    fn fit_predict(&self, train_data: &Dataset, test: &Dataset, _seed: u64) -> Result<Vec<WeightedGraph>> {
        lioness_heldout(&train_data.x().view(), &test.x().view(), &self.ridge)
    }
}

/// Returns the same networks regardless of the training data.
#[derive(Debug, Clone)]
pub struct FixedMethod {
    pub label: String,
    pub networks: Vec<WeightedGraph>,
    pub postprocess: bool,
}

impl Method for FixedMethod {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn fit_predict(&self, _train: &Dataset, test: &Dataset, _seed: u64) -> Result<Vec<WeightedGraph>> {
        if self.networks.len() != test.n() {
            return Err(NotmadError::invalid(format!("{} fixed networks for {} test rows", self.networks.len(), test.n())));
        }
        Ok(self.networks.clone())
    }

    fn postprocessed(&self) -> bool {
        self.postprocess
    }
}

/// Single-archetype model fitted separately to each known group.
#[derive(Debug, Clone)]
pub struct PerGroupSingleArchetype {
    pub config: TrainConfig,
}

impl Method for PerGroupSingleArchetype {
    fn name(&self) -> String {
        "one_archetype_per_group".into()
    }

    fn fit_predict(&self, train_data: &Dataset, test: &Dataset, seed: u64) -> Result<Vec<WeightedGraph>> {
        let train_groups = test_groups(train_data)?;
        let groups = test_groups(test)?;
        let mut labels = train_groups.to_vec();
        labels.sort_unstable();
        labels.dedup();
        let fits: Vec<(usize, WeightedGraph)> = labels
            .par_iter()
            .map(|&g| {
                let rows: Vec<usize> = (0..train_data.n()).filter(|&i| train_groups[i] == g).collect();
                let sub = train_data.select(&rows);
                let cfg = TrainConfig { k: 1, seed, batch_size: self.config.batch_size.min(sub.n()), ..self.config.clone() };
                let model = train(&sub, &cfg)?;
                Ok((g, model.generator.graph_for(sub.c().row(0))?))
            })
            .collect::<Result<_>>()?;
        groups
            .iter()
            .map(|g| {
                fits.iter()
                    .find(|(l, _)| l == g)
                    .map(|(_, w)| w.clone())
                    .ok_or_else(|| NotmadError::invalid(format!("test group {g} has no training rows")))
            })
            .collect()
    }
}

/// Full mixture model whose per-sample networks are averaged within each
/// known group; test rows receive their group's average.
#[derive(Debug, Clone)]
pub struct GroupAveragedMixture {
    pub config: TrainConfig,
}

impl Method for GroupAveragedMixture {
    fn name(&self) -> String {
        "mixture_group_average".into()
    }

    fn fit_predict(&self, train_data: &Dataset, test: &Dataset, seed: u64) -> Result<Vec<WeightedGraph>> {
        let train_groups = test_groups(train_data)?;
        let groups = test_groups(test)?;
        let cfg = TrainConfig { seed, batch_size: self.config.batch_size.min(train_data.n()), ..self.config.clone() };
        let model = train(train_data, &cfg)?;
        let p = train_data.p();
        let mut sums: BTreeMap<usize, (Array2<f64>, usize)> = BTreeMap::new();
        for i in 0..train_data.n() {
            let w = model.generator.graph_for(train_data.c().row(i))?;
            let entry = sums.entry(train_groups[i]).or_insert_with(|| (Array2::zeros((p, p)), 0));
            entry.0 += w.weights();
            entry.1 += 1;
        }
        groups
            .iter()
            .map(|g| {
                let (sum, count) =
                    sums.get(g).ok_or_else(|| NotmadError::invalid(format!("test group {g} has no training rows")))?;
                WeightedGraph::with_clamped_diagonal(sum / *count as f64)
            })
            .collect()
    }
}

fn test_groups(data: &Dataset) -> Result<&[usize]> {
    data.groups().ok_or_else(|| NotmadError::invalid("method needs group labels"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mean: f64,
    /// Sample variance over resamples.
    pub variance: f64,
    pub values: Vec<f64>,
}

impl BootstrapSummary {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

fn finish(method: &dyn Method, nets: Vec<WeightedGraph>, post: &Postprocess) -> Vec<WeightedGraph> {
    if method.postprocessed() {
        nets.par_iter().map(|w| post.apply(w)).collect()
    } else {
        nets
    }
}

/// Refits `method` on `resamples` bootstrap copies of `train` and scores
/// each fit on the fixed `test` set. Resample `r` draws rows from stream `r`
/// of `seed` and fits with seed `seed + r`.
pub fn bootstrap_mse(
    method: &dyn Method,
    train_data: &Dataset,
    test: &Dataset,
    resamples: usize,
    seed: u64,
    post: &Postprocess,
) -> Result<BootstrapSummary> {
    if resamples < 2 {
        return Err(NotmadError::invalid(format!("need at least 2 resamples, got {resamples}")));
    }
    let n = train_data.n();
    let outcomes: Vec<Result<f64>> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let sample = train_data.select(&rows);
            let nets = method.fit_predict(&sample, test, seed.wrapping_add(r as u64))?;
            heldout_mse(&finish(method, nets, post), &test.x().view())
        })
        .collect();
    let mut values = Vec::with_capacity(resamples);
    for (index, outcome) in outcomes.into_iter().enumerate() {
        values.push(outcome.map_err(|e| NotmadError::Resample { index, source: Box::new(e) })?);
    }
    let mean = values.iter().sum::<f64>() / resamples as f64;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (resamples - 1) as f64;
    Ok(BootstrapSummary { mean, variance, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructurePoint {
    pub threshold: f64,
    /// Means over test rows.
    pub shd: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Structure metrics of `estimated` against `truth` (binarized at 0) at
/// each threshold, averaged over rows.
pub fn structure_curve(estimated: &[WeightedGraph], truth: &[WeightedGraph], thresholds: &[f64]) -> Result<Vec<StructurePoint>> {
    if estimated.len() != truth.len() || truth.is_empty() {
        return Err(NotmadError::invalid(format!("{} estimated vs {} true networks", estimated.len(), truth.len())));
    }
    let true_bin: Vec<BinaryStructure> = truth.iter().map(|w| binarize(w, 0.0)).collect::<Result<_>>()?;
    thresholds
        .iter()
        .map(|&t| {
            let mut acc = [0.0; 4];
            for (w, tb) in estimated.iter().zip(&true_bin) {
                let eb = binarize(w, t)?;
                let s = edge_scores(&eb, tb)?;
                acc[0] += structural_hamming(&eb, tb)? as f64;
                acc[1] += s.precision;
                acc[2] += s.recall;
                acc[3] += s.f1;
            }
            let n = truth.len() as f64;
            Ok(StructurePoint { threshold: t, shd: acc[0] / n, precision: acc[1] / n, recall: acc[2] / n, f1: acc[3] / n })
        })
        .collect()
}

/// Highest F1; the lowest threshold wins ties.
pub fn best_point(curve: &[StructurePoint]) -> Option<StructurePoint> {
    curve.iter().copied().fold(None, |best: Option<StructurePoint>, p| match best {
        Some(b) if b.f1 >= p.f1 => Some(b),
        _ => Some(p),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMse {
    pub group: usize,
    pub n: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    /// Held-out MSE of a single fit on the full training set.
    pub heldout_mse: f64,
    pub bootstrap: Option<BootstrapSummary>,
    pub per_group_mse: Vec<GroupMse>,
    pub structure: Vec<StructurePoint>,
    pub best_structure: Option<StructurePoint>,
    /// Only for models that carry an archetype dictionary.
    pub archetype_recovery: Option<f64>,
}

/// Scores already-postprocessed networks for MSE and the `raw` networks for
/// structure when `truth` is given.
pub fn score_networks(
    name: &str,
    scored: &[WeightedGraph],
    raw: &[WeightedGraph],
    test: &Dataset,
    truth: Option<&[WeightedGraph]>,
) -> Result<MethodReport> {
    let errs = per_row_errors(scored, &test.x().view())?;
    let heldout = errs.iter().sum::<f64>() / errs.len() as f64;
    let mut per_group_mse = Vec::new();
    if let Some(groups) = test.groups() {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (e, g) in errs.iter().zip(groups) {
            let entry = acc.entry(*g).or_insert((0.0, 0));
            entry.0 += e;
            entry.1 += 1;
        }
        per_group_mse = acc.into_iter().map(|(group, (s, n))| GroupMse { group, n, mse: s / n as f64 }).collect();
    }
    let structure = match truth {
        Some(t) => structure_curve(raw, t, &STRUCTURE_THRESHOLDS)?,
        None => Vec::new(),
    };
    Ok(MethodReport {
        name: name.to_string(),
        heldout_mse: heldout,
        bootstrap: None,
        best_structure: best_point(&structure),
        per_group_mse,
        structure,
        archetype_recovery: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Zero skips the bootstrap.
    pub resamples: usize,
    pub seed: u64,
    pub postprocess: Postprocess,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { resamples: 10, seed: 0, postprocess: Postprocess::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub config: EvalConfig,
    pub methods: Vec<MethodReport>,
}

impl EvalReport {
    pub fn new(config: EvalConfig) -> Self {
        Self { format_version: REPORT_FORMAT_VERSION, config, methods: Vec::new() }
    }

    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// Long-format rows `method,metric,group,threshold,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,metric,group,threshold,value\n");
        let mut row = |method: &str, metric: &str, group: Option<usize>, threshold: Option<f64>, value: f64| {
            let g = group.map(|g| g.to_string()).unwrap_or_default();
            let t = threshold.map(|t| format!("{t:?}")).unwrap_or_default();
            out.push_str(&format!("{method},{metric},{g},{t},{value:?}\n"));
        };
        for m in &self.methods {
            row(&m.name, "heldout_mse", None, None, m.heldout_mse);
            if let Some(b) = &m.bootstrap {
                row(&m.name, "bootstrap_mse_mean", None, None, b.mean);
                row(&m.name, "bootstrap_mse_variance", None, None, b.variance);
            }
            for g in &m.per_group_mse {
                row(&m.name, "group_mse", Some(g.group), None, g.mse);
            }
            for s in &m.structure {
                row(&m.name, "shd", None, Some(s.threshold), s.shd);
                row(&m.name, "precision", None, Some(s.threshold), s.precision);
                row(&m.name, "recall", None, Some(s.threshold), s.recall);
                row(&m.name, "f1", None, Some(s.threshold), s.f1);
            }
            if let Some(a) = m.archetype_recovery {
                row(&m.name, "archetype_recovery", None, None, a);
            }
        }
        out
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let json = dir.join("report.json");
        let csv = dir.join("report.csv");
        write_json(&json, self)?;
        write_atomic(&csv, self.to_csv().as_bytes())?;
        Ok((json, csv))
    }
}

/// Fits every method on the full training set and, when
/// `config.resamples > 0`, on bootstrap resamples as well.
pub fn evaluate_methods(
    methods: &[&dyn Method],
    train_data: &Dataset,
    test: &Dataset,
    truth: Option<&[WeightedGraph]>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let mut report = EvalReport::new(*config);
    for method in methods {
        let raw = method.fit_predict(train_data, test, config.seed)?;
        let scored = finish(*method, raw.clone(), &config.postprocess);
        let mut m = score_networks(&method.name(), &scored, &raw, test, truth)?;
        if config.resamples > 0 {
            m.bootstrap = Some(bootstrap_mse(*method, train_data, test, config.resamples, config.seed, &config.postprocess)?);
        }
        log::info!("{}: held-out MSE {:.5}", m.name, m.heldout_mse);
        report.methods.push(m);
    }
    Ok(report)
}

/// The four ablation variants of the mixture model, in reporting order.
pub fn ablation_methods(config: &TrainConfig) -> (PerGroupSingleArchetype, GroupAveragedMixture, NotmadMethod, NotmadMethod) {
    (
        PerGroupSingleArchetype { config: config.clone() },
        GroupAveragedMixture { config: config.clone() },
        NotmadMethod { label: "one_archetype_global".into(), config: TrainConfig { k: 1, ..config.clone() } },
        NotmadMethod { label: "notmad".into(), config: config.clone() },
    )
}

/// Single-archetype model per group, group-averaged mixture, global single
/// archetype and the full model, scored per group on `test`.
pub fn run_ablation(train_data: &Dataset, test: &Dataset, train_config: &TrainConfig, config: &EvalConfig) -> Result<EvalReport> {
    if train_data.groups().is_none() || test.groups().is_none() {
        return Err(NotmadError::invalid("ablation needs group labels on train and test data"));
    }
    let (a, b, c, d) = ablation_methods(train_config);
    evaluate_methods(&[&a, &b, &c, &d], train_data, test, None, config)
}
