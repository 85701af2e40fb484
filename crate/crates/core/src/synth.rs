//! Ground-truth synthetic experiments: archetype DAGs sharing one
//! topological order, context-driven mixing weights, and SEM observations.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dag::WeightedGraph;
use crate::error::{NotmadError, Result};
use crate::io::{read_json, write_json};
use crate::mixture::{generate_graph, ArchetypeDictionary, SubtypeWeights};
use crate::sem::{propagate_row, Dataset};

pub const TRUTH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingKind {
    /// Every sample uses exactly one archetype, the argmax of its logits.
    OneHot,
    /// Softmax of the logits.
    SimplexSmooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub p: usize,
    pub m: usize,
    pub k_true: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Probability of each order-compatible edge in each archetype.
    pub edge_density: f64,
    /// Edge magnitudes are uniform in this range; signs are random.
    pub weight_range: [f64; 2],
    pub noise_scale: f64,
    pub mixing_kind: MixingKind,
    /// Standard deviation of the entries of the context-to-logit matrix.
    #[serde(default = "default_mixing_scale")]
    pub mixing_scale: f64,
    pub seed: u64,
}

fn default_mixing_scale() -> f64 {
    1.0
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.m == 0 || self.k_true == 0 || self.n_train == 0 || self.n_test == 0 {
            return Err(NotmadError::invalid("all counts in the synthetic spec must be >= 1"));
        }
        if !(self.edge_density > 0.0 && self.edge_density < 1.0) {
            return Err(NotmadError::invalid("edge_density must lie in (0, 1)"));
        }
        let [lo, hi] = self.weight_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(NotmadError::invalid("weight_range must satisfy 0 < lo <= hi"));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(NotmadError::invalid("noise_scale must be > 0"));
        }
        if !(self.mixing_scale >= 0.0 && self.mixing_scale.is_finite()) {
            return Err(NotmadError::invalid("mixing_scale must be >= 0"));
        }
        Ok(())
    }
}

/// Everything the generator drew, train and test rows alike.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub spec: SynthSpec,
    /// Topological order shared by every archetype.
    pub order: Vec<usize>,
    pub archetypes: ArchetypeDictionary,
    /// `k_true x m` context-to-logit matrix.
    pub mixing: Array2<f64>,
    pub train: Dataset,
    pub test: Dataset,
    /// Per-row mixing weights, `n x k_true`.
    pub train_weights: Array2<f64>,
    pub test_weights: Array2<f64>,
    pub train_networks: Vec<WeightedGraph>,
    pub test_networks: Vec<WeightedGraph>,
}

fn mix(archetypes: &ArchetypeDictionary, z: &Array2<f64>) -> Result<Vec<WeightedGraph>> {
    z.rows()
        .into_iter()
        .map(|row| generate_graph(archetypes, &SubtypeWeights::new(row.to_owned())?))
        .collect()
}

fn weights_for(kind: MixingKind, logits: &Array1<f64>) -> Array1<f64> {
    let soft = SubtypeWeights::softmax(logits.view());
    match kind {
        MixingKind::SimplexSmooth => soft.values().clone(),
        MixingKind::OneHot => {
            let mut z = Array1::zeros(logits.len());
            z[soft.argmax()] = 1.0;
            z
        }
    }
}

fn argmax_rows(z: &Array2<f64>) -> Vec<usize> {
    z.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Draws a synthetic experiment. Draw order: node permutation, archetype
/// edges, mixing matrix, then per row its context followed by its noise.
pub fn generate(spec: &SynthSpec) -> Result<SynthTruth> {
    spec.validate()?;
    let (p, m, k) = (spec.p, spec.m, spec.k_true);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);

    let [lo, hi] = spec.weight_range;
    let mut archetypes = Vec::with_capacity(k);
    for _ in 0..k {
        let mut a = Array2::<f64>::zeros((p, p));
        for s in 0..p {
            for t in (s + 1)..p {
                if rng.random_bool(spec.edge_density) {
                    let mag = if hi > lo { rng.random_range(lo..hi) } else { lo };
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    a[[order[s], order[t]]] = sign * mag;
                }
            }
        }
        archetypes.push(WeightedGraph::new(a)?);
    }
    let archetypes = ArchetypeDictionary::new(archetypes)?;

    let mixing = Array2::from_shape_fn((k, m), |_| {
        let e: f64 = rng.sample(StandardNormal);
        e * spec.mixing_scale
    });

    let n = spec.n_train + spec.n_test;
    let mut x = Array2::<f64>::zeros((n, p));
    let mut c = Array2::<f64>::zeros((n, m));
    let mut z = Array2::<f64>::zeros((n, k));
    for i in 0..n {
        for v in c.row_mut(i).iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let zi = weights_for(spec.mixing_kind, &mixing.dot(&c.row(i)));
        z.row_mut(i).assign(&zi);
        let w = generate_graph(&archetypes, &SubtypeWeights::new(zi)?)?;
        let mut row: Vec<f64> = (0..p)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                e * spec.noise_scale
            })
            .collect();
        propagate_row(w.view(), &order, &mut row);
        x.row_mut(i).assign(&Array1::from(row));
    }

    assemble(spec.clone(), order, archetypes, mixing, x, c, z)
}

fn assemble(
    spec: SynthSpec,
    order: Vec<usize>,
    archetypes: ArchetypeDictionary,
    mixing: Array2<f64>,
    x: Array2<f64>,
    c: Array2<f64>,
    z: Array2<f64>,
) -> Result<SynthTruth> {
    let split = spec.n_train;
    let groups = argmax_rows(&z);
    let rows = |from: usize, to: usize| (from..to).collect::<Vec<_>>();
    let full = Dataset::new(x, c, Some(groups))?;
    let n = full.n();
    let train = full.select(&rows(0, split));
    let test = full.select(&rows(split, n));
    let train_weights = z.slice(ndarray::s![..split, ..]).to_owned();
    let test_weights = z.slice(ndarray::s![split.., ..]).to_owned();
    let train_networks = mix(&archetypes, &train_weights)?;
    let test_networks = mix(&archetypes, &test_weights)?;
    Ok(SynthTruth {
        spec,
        order,
        archetypes,
        mixing,
        train,
        test,
        train_weights,
        test_weights,
        train_networks,
        test_networks,
    })
}

/// JSON layout of the ground truth. Observations live in the dataset CSVs;
/// per-row networks are rebuilt from the stored weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRecord {
    pub format_version: u32,
    pub spec: SynthSpec,
    pub order: Vec<usize>,
    pub archetypes: Vec<Vec<Vec<f64>>>,
    pub mixing: Vec<Vec<f64>>,
    pub train_weights: Vec<Vec<f64>>,
    pub test_weights: Vec<Vec<f64>>,
}

fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix_of(rows: &[Vec<f64>], cols: usize) -> Result<Array2<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(NotmadError::invalid("ragged matrix in truth file"));
    }
    Ok(Array2::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j]))
}

impl TruthRecord {
    pub fn read(path: &Path) -> Result<Self> {
        let rec: TruthRecord = read_json(path)?;
        if rec.format_version != TRUTH_FORMAT_VERSION {
            return Err(NotmadError::invalid(format!("unsupported truth format version {}", rec.format_version)));
        }
        Ok(rec)
    }

    pub fn archetype_dictionary(&self) -> Result<ArchetypeDictionary> {
        let p = self.spec.p;
        ArchetypeDictionary::new(
            self.archetypes
                .iter()
                .map(|a| WeightedGraph::new(matrix_of(a, p)?))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn test_networks(&self) -> Result<Vec<WeightedGraph>> {
        mix(&self.archetype_dictionary()?, &matrix_of(&self.test_weights, self.spec.k_true)?)
    }
}

impl SynthTruth {
    pub fn to_record(&self) -> TruthRecord {
        TruthRecord {
            format_version: TRUTH_FORMAT_VERSION,
            spec: self.spec.clone(),
            order: self.order.clone(),
            archetypes: self.archetypes.archetypes().iter().map(|a| rows_of(a.weights())).collect(),
            mixing: rows_of(&self.mixing),
            train_weights: rows_of(&self.train_weights),
            test_weights: rows_of(&self.test_weights),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_record())
    }

    /// Rebuilds the truth from its JSON record and the two dataset files.
    pub fn load(path: &Path, train: Dataset, test: Dataset) -> Result<Self> {
        let rec = TruthRecord::read(path)?;
        let k = rec.spec.k_true;
        let archetypes = rec.archetype_dictionary()?;
        let train_weights = matrix_of(&rec.train_weights, k)?;
        let test_weights = matrix_of(&rec.test_weights, k)?;
        if train_weights.nrows() != train.n() || test_weights.nrows() != test.n() {
            return Err(NotmadError::invalid("truth file does not match the datasets"));
        }
        Ok(SynthTruth {
            train_networks: mix(&archetypes, &train_weights)?,
            test_networks: mix(&archetypes, &test_weights)?,
            mixing: matrix_of(&rec.mixing, rec.spec.m)?,
            spec: rec.spec,
            order: rec.order,
            archetypes,
            train,
            test,
            train_weights,
            test_weights,
        })
    }
}
