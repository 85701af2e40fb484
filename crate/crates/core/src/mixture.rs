//! The graph generator: a context encoder produces softmax weights over a
//! dictionary of archetype graphs, and the context-specific graph is the
//! corresponding convex combination of archetypes with clamped diagonals.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dag::WeightedGraph;
use crate::error::{NotmadError, Result};
use crate::notmad::TrainConfig;

/// Version written to and required from model files.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Standard deviation of initial archetype entries.
pub const ARCHETYPE_INIT_STD: f64 = 0.1;
/// Probability that an initial archetype entry is nonzero.
pub const ARCHETYPE_INIT_DENSITY: f64 = 0.3;
pub const DEFAULT_HIDDEN_WIDTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Affine map from context to logits.
    Linear,
    /// One tanh hidden layer followed by an affine output layer.
    FeedForward,
}

/// Maps a context vector to `K` pre-softmax logits.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextEncoder {
    Linear {
        weight: Array2<f64>,
        bias: Array1<f64>,
    },
    FeedForward {
        hidden_weight: Array2<f64>,
        hidden_bias: Array1<f64>,
        output_weight: Array2<f64>,
        output_bias: Array1<f64>,
    },
}

impl ContextEncoder {
    /// Encoder with every parameter zero; its logits are always zero.
    pub fn zeros(kind: EncoderKind, m: usize, k: usize, hidden: usize) -> Self {
        match kind {
            EncoderKind::Linear => ContextEncoder::Linear {
                weight: Array2::zeros((k, m)),
                bias: Array1::zeros(k),
            },
            EncoderKind::FeedForward => ContextEncoder::FeedForward {
                hidden_weight: Array2::zeros((hidden, m)),
                hidden_bias: Array1::zeros(hidden),
                output_weight: Array2::zeros((k, hidden)),
                output_bias: Array1::zeros(k),
            },
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng>(kind: EncoderKind, m: usize, k: usize, hidden: usize, rng: &mut R) -> Self {
        let mut enc = Self::zeros(kind, m, k, hidden);
        let mut fill = |a: &mut Array2<f64>| {
            let bound = 1.0 / (a.ncols().max(1) as f64).sqrt();
            a.mapv_inplace(|_| rng.random_range(-bound..=bound));
        };
        match &mut enc {
            ContextEncoder::Linear { weight, .. } => fill(weight),
            ContextEncoder::FeedForward { hidden_weight, output_weight, .. } => {
                fill(hidden_weight);
                fill(output_weight);
            }
        }
        enc
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            ContextEncoder::Linear { .. } => EncoderKind::Linear,
            ContextEncoder::FeedForward { .. } => EncoderKind::FeedForward,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ContextEncoder::Linear { weight, .. } => weight.ncols(),
            ContextEncoder::FeedForward { hidden_weight, .. } => hidden_weight.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ContextEncoder::Linear { bias, .. } => bias.len(),
            ContextEncoder::FeedForward { output_bias, .. } => output_bias.len(),
        }
    }

    pub fn hidden_width(&self) -> Option<usize> {
        match self {
            ContextEncoder::Linear { .. } => None,
            ContextEncoder::FeedForward { hidden_bias, .. } => Some(hidden_bias.len()),
        }
    }

    /// Pre-softmax logits.
    pub fn logits(&self, c: ArrayView1<f64>) -> Array1<f64> {
        match self {
            ContextEncoder::Linear { weight, bias } => weight.dot(&c) + bias,
            ContextEncoder::FeedForward {
                hidden_weight,
                hidden_bias,
                output_weight,
                output_bias,
            } => {
                let h = (hidden_weight.dot(&c) + hidden_bias).mapv(f64::tanh);
                output_weight.dot(&h) + output_bias
            }
        }
    }

    /// Gradient of a scalar loss with respect to every encoder parameter,
    /// given its gradient with respect to the logits. Returned with the same
    /// shape as `self`.
    pub fn backward(&self, c: ArrayView1<f64>, d_logits: ArrayView1<f64>) -> ContextEncoder {
        let outer = |a: ArrayView1<f64>, b: ArrayView1<f64>| {
            Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
        };
        match self {
            ContextEncoder::Linear { .. } => ContextEncoder::Linear {
                weight: outer(d_logits, c),
                bias: d_logits.to_owned(),
            },
            ContextEncoder::FeedForward {
                hidden_weight,
                hidden_bias,
                output_weight,
                ..
            } => {
                let h = (hidden_weight.dot(&c) + hidden_bias).mapv(f64::tanh);
                let dh = output_weight.t().dot(&d_logits);
                let da = &dh * &h.mapv(|v| 1.0 - v * v);
                ContextEncoder::FeedForward {
                    hidden_weight: outer(da.view(), c),
                    hidden_bias: da.clone(),
                    output_weight: outer(d_logits, h.view()),
                    output_bias: d_logits.to_owned(),
                }
            }
        }
    }

    fn blocks(&self) -> Vec<&[f64]> {
        fn s(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn v(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        match self {
            ContextEncoder::Linear { weight, bias } => vec![s(weight), v(bias)],
            ContextEncoder::FeedForward {
                hidden_weight,
                hidden_bias,
                output_weight,
                output_bias,
            } => vec![s(hidden_weight), v(hidden_bias), s(output_weight), v(output_bias)],
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            ContextEncoder::Linear { weight, bias } => vec![
                weight.as_slice_mut().expect("standard layout"),
                bias.as_slice_mut().expect("standard layout"),
            ],
            ContextEncoder::FeedForward {
                hidden_weight,
                hidden_bias,
                output_weight,
                output_bias,
            } => vec![
                hidden_weight.as_slice_mut().expect("standard layout"),
                hidden_bias.as_slice_mut().expect("standard layout"),
                output_weight.as_slice_mut().expect("standard layout"),
                output_bias.as_slice_mut().expect("standard layout"),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Softmax weights over the archetypes.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtypeWeights(Array1<f64>);

impl SubtypeWeights {
    /// Max-shifted softmax of `logits`.
    pub fn softmax(logits: ArrayView1<f64>) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = logits.mapv(|v| (v - max).exp());
        let total = e.sum();
        SubtypeWeights(e / total)
    }

    /// Wraps weights that already lie on the simplex.
    pub fn new(z: Array1<f64>) -> Result<Self> {
        if z.is_empty() || z.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(NotmadError::invalid("subtype weights must be finite and non-negative"));
        }
        if (z.sum() - 1.0).abs() > 1e-9 {
            return Err(NotmadError::invalid(format!("subtype weights sum to {}", z.sum())));
        }
        Ok(SubtypeWeights(z))
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest weight, first on ties.
    pub fn argmax(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    }
}

/// `softmax(f_θ(c))`.
pub fn encode(encoder: &ContextEncoder, c: ArrayView1<f64>) -> Result<SubtypeWeights> {
    if c.len() != encoder.input_dim() {
        return Err(NotmadError::invalid(format!(
            "context has dimension {} but encoder expects {}",
            c.len(),
            encoder.input_dim()
        )));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(NotmadError::invalid("context has non-finite entries"));
    }
    Ok(SubtypeWeights::softmax(encoder.logits(c).view()))
}

/// Ordered archetype graphs. Diagonals are held at exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchetypeDictionary {
    archetypes: Vec<WeightedGraph>,
}

impl ArchetypeDictionary {
    pub fn new(archetypes: Vec<WeightedGraph>) -> Result<Self> {
        let Some(first) = archetypes.first() else {
            return Err(NotmadError::invalid("dictionary needs at least one archetype"));
        };
        let p = first.p();
        if archetypes.iter().any(|a| a.p() != p) {
            return Err(NotmadError::invalid("archetypes have different sizes"));
        }
        Ok(Self { archetypes })
    }

    /// Sparse Gaussian initialization with zero diagonal.
    pub fn init<R: Rng>(p: usize, k: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, ARCHETYPE_INIT_STD).expect("valid std");
        let archetypes = (0..k)
            .map(|_| {
                let mut a = Array2::<f64>::zeros((p, p));
                for ((i, j), v) in a.indexed_iter_mut() {
                    let draw = normal.sample(rng);
                    let keep = rng.random_bool(ARCHETYPE_INIT_DENSITY);
                    if i != j && keep {
                        *v = draw;
                    }
                }
                WeightedGraph::new(a).expect("finite with zero diagonal")
            })
            .collect();
        Self { archetypes }
    }

    pub fn k(&self) -> usize {
        self.archetypes.len()
    }

    pub fn p(&self) -> usize {
        self.archetypes[0].p()
    }

    pub fn archetypes(&self) -> &[WeightedGraph] {
        &self.archetypes
    }

    pub fn get(&self, k: usize) -> &WeightedGraph {
        &self.archetypes[k]
    }

    /// Sum of absolute archetype entries.
    pub fn l1(&self) -> f64 {
        self.archetypes.iter().map(|a| a.weights().iter().map(|v| v.abs()).sum::<f64>()).sum()
    }
}

/// `Σ_k z_k (W_k ∘ (1 - I))`.
pub fn generate_graph(dict: &ArchetypeDictionary, z: &SubtypeWeights) -> Result<WeightedGraph> {
    if z.k() != dict.k() {
        return Err(NotmadError::invalid(format!(
            "{} subtype weights for {} archetypes",
            z.k(),
            dict.k()
        )));
    }
    let p = dict.p();
    let mut w = Array2::<f64>::zeros((p, p));
    for (zk, a) in z.values().iter().zip(dict.archetypes()) {
        w.scaled_add(*zk, a.weights());
    }
    WeightedGraph::with_clamped_diagonal(w)
}

/// Gradients of a scalar loss for every trainable parameter of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureGradient {
    pub archetypes: Vec<Array2<f64>>,
    pub encoder: ContextEncoder,
}

impl MixtureGradient {
    pub fn zeros_like(generator: &GraphGenerator) -> Self {
        let enc = &generator.encoder;
        Self {
            archetypes: vec![Array2::zeros((generator.p(), generator.p())); generator.k()],
            encoder: ContextEncoder::zeros(
                enc.kind(),
                enc.input_dim(),
                enc.output_dim(),
                enc.hidden_width().unwrap_or(0),
            ),
        }
    }

    /// Same layout as [`GraphGenerator::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for a in &self.archetypes {
            out.extend(a.iter());
        }
        for b in self.encoder.blocks() {
            out.extend_from_slice(b);
        }
        out
    }
}

/// Chain rule through `z = softmax(f_θ(c))` and `W = Σ_k z_k W_k ∘ (1 - I)`,
/// given `dL/dW`.
pub fn backward(
    dict: &ArchetypeDictionary,
    encoder: &ContextEncoder,
    c: ArrayView1<f64>,
    dl_dw: &Array2<f64>,
) -> Result<MixtureGradient> {
    let p = dict.p();
    if dl_dw.dim() != (p, p) {
        return Err(NotmadError::invalid(format!(
            "upstream gradient is {:?}, expected ({p}, {p})",
            dl_dw.dim()
        )));
    }
    if encoder.output_dim() != dict.k() {
        return Err(NotmadError::invalid("encoder output does not match archetype count"));
    }
    if dl_dw.iter().any(|v| !v.is_finite()) {
        return Err(NotmadError::invalid("upstream gradient has non-finite entries"));
    }
    let z = encode(encoder, c)?;
    let mut masked = dl_dw.clone();
    masked.diag_mut().fill(0.0);

    let archetypes = z.values().iter().map(|&zk| &masked * zk).collect();
    // dL/dz_k = <W_k ∘ (1 - I), dL/dW>; archetype diagonals are already zero.
    let dz: Array1<f64> = dict
        .archetypes()
        .iter()
        .map(|a| (a.weights() * &masked).sum())
        .collect();
    let zv = z.values();
    let d_logits = zv * &(&dz - zv.dot(&dz));
    Ok(MixtureGradient { archetypes, encoder: encoder.backward(c, d_logits.view()) })
}

/// Archetype dictionary together with its context encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphGenerator {
    pub dictionary: ArchetypeDictionary,
    pub encoder: ContextEncoder,
}

impl GraphGenerator {
    pub fn new(dictionary: ArchetypeDictionary, encoder: ContextEncoder) -> Result<Self> {
        if encoder.output_dim() != dictionary.k() {
            return Err(NotmadError::invalid(format!(
                "encoder has {} outputs for {} archetypes",
                encoder.output_dim(),
                dictionary.k()
            )));
        }
        if !encoder.is_finite() {
            return Err(NotmadError::invalid("encoder parameters must be finite"));
        }
        Ok(Self { dictionary, encoder })
    }

    /// Fresh random generator. Archetypes are drawn before the encoder from
    /// one stream seeded by `seed`.
    pub fn init(p: usize, m: usize, k: usize, kind: EncoderKind, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dictionary = ArchetypeDictionary::init(p, k, &mut rng);
        let encoder = ContextEncoder::init(kind, m, k, hidden, &mut rng);
        Self { dictionary, encoder }
    }

    pub fn p(&self) -> usize {
        self.dictionary.p()
    }

    pub fn m(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn k(&self) -> usize {
        self.dictionary.k()
    }

    pub fn weights_for(&self, c: ArrayView1<f64>) -> Result<SubtypeWeights> {
        encode(&self.encoder, c)
    }

    pub fn graph_for(&self, c: ArrayView1<f64>) -> Result<WeightedGraph> {
        generate_graph(&self.dictionary, &self.weights_for(c)?)
    }

    pub fn param_count(&self) -> usize {
        self.k() * self.p() * self.p() + self.encoder.param_count()
    }

    /// All parameters: archetypes row-major in order, then encoder blocks.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for a in self.dictionary.archetypes() {
            out.extend(a.weights().iter());
        }
        for b in self.encoder.blocks() {
            out.extend_from_slice(b);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten). Archetype diagonals are
    /// clamped to zero on the way in.
    pub fn unflatten(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(NotmadError::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let (p, k) = (self.p(), self.k());
        let block = p * p;
        let mut archetypes = Vec::with_capacity(k);
        for idx in 0..k {
            let a = Array2::from_shape_vec((p, p), params[idx * block..(idx + 1) * block].to_vec())
                .expect("block has p*p entries");
            archetypes.push(WeightedGraph::with_clamped_diagonal(a)?);
        }
        self.dictionary = ArchetypeDictionary { archetypes };
        let mut offset = k * block;
        for b in self.encoder.blocks_mut() {
            let len = b.len();
            b.copy_from_slice(&params[offset..offset + len]);
            offset += len;
        }
        if !self.encoder.is_finite() {
            return Err(NotmadError::invalid("encoder parameters must be finite"));
        }
        Ok(())
    }

    pub fn to_record(&self, config: Option<TrainConfig>) -> ModelRecord {
        let mat = |a: &Array2<f64>| a.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
        let encoder = match &self.encoder {
            ContextEncoder::Linear { weight, bias } => EncoderRecord {
                kind: EncoderKind::Linear,
                hidden_width: None,
                weight: mat(weight),
                bias: bias.to_vec(),
                output_weight: None,
                output_bias: None,
            },
            ContextEncoder::FeedForward {
                hidden_weight,
                hidden_bias,
                output_weight,
                output_bias,
            } => EncoderRecord {
                kind: EncoderKind::FeedForward,
                hidden_width: Some(hidden_bias.len()),
                weight: mat(hidden_weight),
                bias: hidden_bias.to_vec(),
                output_weight: Some(mat(output_weight)),
                output_bias: Some(output_bias.to_vec()),
            },
        };
        ModelRecord {
            format_version: MODEL_FORMAT_VERSION,
            p: self.p(),
            m: self.m(),
            k: self.k(),
            encoder,
            archetypes: self.dictionary.archetypes().iter().map(|a| mat(a.weights())).collect(),
            config,
        }
    }

    pub fn from_record(record: &ModelRecord) -> Result<Self> {
        if record.format_version != MODEL_FORMAT_VERSION {
            return Err(NotmadError::invalid(format!(
                "unsupported model format version {}",
                record.format_version
            )));
        }
        let mat = |rows: &[Vec<f64>], r: usize, c: usize, what: &str| -> Result<Array2<f64>> {
            if rows.len() != r || rows.iter().any(|row| row.len() != c) {
                return Err(NotmadError::invalid(format!("{what} must be {r}x{c}")));
            }
            Ok(Array2::from_shape_fn((r, c), |(i, j)| rows[i][j]))
        };
        let vec = |v: &[f64], n: usize, what: &str| -> Result<Array1<f64>> {
            if v.len() != n {
                return Err(NotmadError::invalid(format!("{what} must have length {n}")));
            }
            Ok(Array1::from(v.to_vec()))
        };
        let (p, m, k) = (record.p, record.m, record.k);
        if record.archetypes.len() != k {
            return Err(NotmadError::invalid(format!("expected {k} archetypes")));
        }
        let archetypes = record
            .archetypes
            .iter()
            .map(|a| WeightedGraph::new(mat(a, p, p, "archetype")?))
            .collect::<Result<Vec<_>>>()?;
        let e = &record.encoder;
        let encoder = match e.kind {
            EncoderKind::Linear => ContextEncoder::Linear {
                weight: mat(&e.weight, k, m, "encoder weight")?,
                bias: vec(&e.bias, k, "encoder bias")?,
            },
            EncoderKind::FeedForward => {
                let h = e.hidden_width.ok_or_else(|| NotmadError::invalid("missing hidden_width"))?;
                let ow = e.output_weight.as_deref().ok_or_else(|| NotmadError::invalid("missing output_weight"))?;
                let ob = e.output_bias.as_deref().ok_or_else(|| NotmadError::invalid("missing output_bias"))?;
                ContextEncoder::FeedForward {
                    hidden_weight: mat(&e.weight, h, m, "hidden weight")?,
                    hidden_bias: vec(&e.bias, h, "hidden bias")?,
                    output_weight: mat(ow, k, h, "output weight")?,
                    output_bias: vec(ob, k, "output bias")?,
                }
            }
        };
        Self::new(ArchetypeDictionary::new(archetypes)?, encoder)
    }

    /// Writes the generator (and optionally its training config) as JSON.
    pub fn save(&self, path: &Path, config: Option<TrainConfig>) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_record(config))?;
        crate::io::write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<TrainConfig>)> {
        let record: ModelRecord = crate::io::read_json(path)?;
        Ok((Self::from_record(&record)?, record.config))
    }
}

/// On-disk model layout. Matrices are stored as lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub format_version: u32,
    pub p: usize,
    pub m: usize,
    pub k: usize,
    pub encoder: EncoderRecord,
    pub archetypes: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
}

/// Encoder parameters. For the feed-forward kind `weight`/`bias` are the
/// hidden layer and `output_*` the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderRecord {
    pub kind: EncoderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_width: Option<usize>,
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_weight: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_bias: Option<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn graph(p: usize, edges: &[(usize, usize, f64)]) -> WeightedGraph {
        let mut a = Array2::zeros((p, p));
        for &(i, j, v) in edges {
            a[[i, j]] = v;
        }
        WeightedGraph::new(a).unwrap()
    }

    #[test]
    fn zero_encoder_is_uniform() {
        let enc = ContextEncoder::zeros(EncoderKind::Linear, 3, 4, 0);
        let z = encode(&enc, array![1.0, -5.0, 2.0].view()).unwrap();
        assert!(z.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_is_stable_and_exact_on_hand_example() {
        let z = SubtypeWeights::softmax(array![1000.0, 0.0, 0.0].view());
        assert!((z.values()[0] - 1.0).abs() < 1e-12);
        assert!(z.values().iter().all(|v| v.is_finite()));
        let z = SubtypeWeights::softmax(array![2f64.ln(), 0.0].view());
        assert!((z.values()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((z.values()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariance() {
        let l = array![0.3, -1.2, 2.0];
        let a = SubtypeWeights::softmax(l.view());
        let b = SubtypeWeights::softmax((&l + 17.5).view());
        for (x, y) in a.values().iter().zip(b.values().iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_rejects_bad_context() {
        let enc = ContextEncoder::zeros(EncoderKind::FeedForward, 2, 3, 4);
        assert!(encode(&enc, array![1.0].view()).is_err());
        assert!(encode(&enc, array![1.0, f64::NAN].view()).is_err());
    }

    #[test]
    fn single_archetype_ignores_weights() {
        let dict = ArchetypeDictionary::new(vec![graph(3, &[(0, 1, 0.4), (2, 1, -1.0)])]).unwrap();
        let z = SubtypeWeights::new(array![1.0]).unwrap();
        assert_eq!(&generate_graph(&dict, &z).unwrap(), dict.get(0));
    }

    #[test]
    fn one_hot_selects_archetype() {
        let dict = ArchetypeDictionary::new(vec![
            graph(3, &[(0, 1, 1.0)]),
            graph(3, &[(1, 2, 3.0)]),
            graph(3, &[(0, 2, -2.0)]),
        ])
        .unwrap();
        let z = SubtypeWeights::new(array![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(&generate_graph(&dict, &z).unwrap(), dict.get(2));
    }

    #[test]
    fn half_half_mixture() {
        let dict =
            ArchetypeDictionary::new(vec![graph(3, &[(0, 1, 1.0)]), graph(3, &[(1, 2, 3.0)])]).unwrap();
        let z = SubtypeWeights::new(array![0.5, 0.5]).unwrap();
        let w = generate_graph(&dict, &z).unwrap();
        assert_eq!(w, graph(3, &[(0, 1, 0.5), (1, 2, 1.5)]));
        assert!(generate_graph(&dict, &SubtypeWeights::new(array![1.0]).unwrap()).is_err());
    }

    #[test]
    fn backward_zero_upstream_gives_zero() {
        let gen = GraphGenerator::init(4, 2, 3, EncoderKind::FeedForward, 5, 9);
        let g = backward(&gen.dictionary, &gen.encoder, array![0.3, -0.2].view(), &Array2::zeros((4, 4))).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_single_archetype_has_no_encoder_gradient() {
        let gen = GraphGenerator::init(3, 2, 1, EncoderKind::Linear, 0, 2);
        let up = Array2::from_elem((3, 3), 0.7);
        let g = backward(&gen.dictionary, &gen.encoder, array![1.5, -2.0].view(), &up).unwrap();
        assert!(g.encoder.blocks().iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert!(g.archetypes[0].diag().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_bad_shapes() {
        let gen = GraphGenerator::init(3, 2, 2, EncoderKind::Linear, 0, 2);
        assert!(backward(&gen.dictionary, &gen.encoder, array![0.0, 0.0].view(), &Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn init_is_sparse_with_zero_diagonal() {
        let gen = GraphGenerator::init(12, 3, 4, EncoderKind::Linear, 0, 1);
        let mut nonzero = 0;
        for a in gen.dictionary.archetypes() {
            assert!(a.weights().diag().iter().all(|&v| v == 0.0));
            nonzero += a.weights().iter().filter(|&&v| v != 0.0).count();
        }
        let frac = nonzero as f64 / (4.0 * 132.0);
        assert!((frac - ARCHETYPE_INIT_DENSITY).abs() < 0.08, "density {frac}");
    }

    #[test]
    fn flatten_roundtrip() {
        let gen = GraphGenerator::init(4, 3, 2, EncoderKind::FeedForward, 6, 4);
        let flat = gen.flatten();
        assert_eq!(flat.len(), gen.param_count());
        let mut other = GraphGenerator::init(4, 3, 2, EncoderKind::FeedForward, 6, 99);
        other.unflatten(&flat).unwrap();
        assert_eq!(other, gen);
        assert!(other.unflatten(&flat[1..]).is_err());
    }

    #[test]
    fn record_roundtrip_is_bit_exact() {
        for kind in [EncoderKind::Linear, EncoderKind::FeedForward] {
            let gen = GraphGenerator::init(5, 3, 3, kind, 7, 21);
            let json = serde_json::to_string(&gen.to_record(None)).unwrap();
            let back: ModelRecord = serde_json::from_str(&json).unwrap();
            let restored = GraphGenerator::from_record(&back).unwrap();
            let a = gen.flatten();
            let b = restored.flatten();
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn record_version_is_checked() {
        let gen = GraphGenerator::init(2, 1, 1, EncoderKind::Linear, 0, 0);
        let mut rec = gen.to_record(None);
        rec.format_version = 99;
        assert!(GraphGenerator::from_record(&rec).is_err());
    }
}
