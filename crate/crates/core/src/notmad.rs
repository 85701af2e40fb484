//! End-to-end training of the archetype-mixture objective
//!
//! ```text
//! Σ_i ||x_i - x_i W_i||² + α h(W_i)  +  Σ_k β ||W_k||_1 + γ h(W_k),   W_i = φ(c_i)
//! ```
//!
//! by mini-batch Adam over the encoder parameters and the archetype
//! dictionary jointly.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acyclicity::{h, h_with_gradient};
use crate::dag::{project_to_dag, WeightedGraph};
use crate::error::{NotmadError, Result};
use crate::mixture::{backward, EncoderKind, GraphGenerator, DEFAULT_HIDDEN_WIDTH};
use crate::sem::Dataset;

/// Rows handled by one parallel task. Fixed so that the reduction order, and
/// therefore every bit of the result, does not depend on the thread count.
const ROWS_PER_TASK: usize = 16;

/// Hyperparameters for [`train`]. Every field has a default so config files
/// only need to name what they change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the per-sample acyclicity penalty.
    pub alpha: f64,
    /// Weight of the archetype L1 penalty.
    pub beta: f64,
    /// Weight of the archetype acyclicity penalty.
    pub gamma: f64,
    /// Number of archetypes.
    pub k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub encoder_kind: EncoderKind,
    /// Hidden width of the feed-forward encoder; ignored for linear.
    pub hidden_width: usize,
    /// Edges with `|w|` at or below this are dropped at prediction time.
    pub eval_threshold: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.01,
            gamma: 1.0,
            k: 3,
            learning_rate: 1e-2,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            encoder_kind: EncoderKind::Linear,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            eval_threshold: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("eval_threshold", self.eval_threshold)];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(NotmadError::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(NotmadError::invalid("learning_rate must be > 0"));
        }
        if self.k == 0 {
            return Err(NotmadError::invalid("k must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(NotmadError::invalid("batch_size must be >= 1"));
        }
        if self.encoder_kind == EncoderKind::FeedForward && self.hidden_width == 0 {
            return Err(NotmadError::invalid("hidden_width must be >= 1 for the feed-forward encoder"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_epsilon > 0.0) {
            return Err(NotmadError::invalid("Adam constants out of range"));
        }
        Ok(())
    }
}

/// The four terms of the objective, unweighted, plus their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ObjectiveBreakdown {
    /// `Σ_i ||x_i - x_i W_i||²`
    pub prediction: f64,
    /// `Σ_i h(W_i)`
    pub sample_dagness: f64,
    /// `Σ_k ||W_k||_1`
    pub archetype_l1: f64,
    /// `Σ_k h(W_k)`
    pub archetype_dagness: f64,
    /// Weighted sum actually optimized.
    pub total: f64,
}

impl ObjectiveBreakdown {
    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("prediction loss", self.prediction),
            ("sample acyclicity penalty", self.sample_dagness),
            ("archetype l1", self.archetype_l1),
            ("archetype acyclicity penalty", self.archetype_dagness),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

fn check_batch(gen: &GraphGenerator, x: &ArrayView2<f64>, c: &ArrayView2<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(NotmadError::invalid("batch is empty"));
    }
    if x.nrows() != c.nrows() {
        return Err(NotmadError::invalid("observation and context batches differ in length"));
    }
    if x.ncols() != gen.p() || c.ncols() != gen.m() {
        return Err(NotmadError::invalid(format!(
            "batch is p={}, m={} but model is p={}, m={}",
            x.ncols(),
            c.ncols(),
            gen.p(),
            gen.m()
        )));
    }
    Ok(())
}

struct Accumulator {
    prediction: f64,
    dagness: f64,
    grad: Vec<f64>,
}

/// Objective and flat gradient with the per-sample terms multiplied by
/// `sample_scale`. `sample_scale = 1` is the plain sum over the batch.
fn evaluate(
    gen: &GraphGenerator,
    x: ArrayView2<f64>,
    c: ArrayView2<f64>,
    alpha: f64,
    beta: f64,
    gamma: f64,
    sample_scale: f64,
    with_grad: bool,
) -> Result<(ObjectiveBreakdown, Vec<f64>)> {
    check_batch(gen, &x, &c)?;
    let n_params = gen.param_count();
    let rows: Vec<usize> = (0..x.nrows()).collect();

    let partials = rows
        .par_chunks(ROWS_PER_TASK)
        .map(|chunk| -> Result<Accumulator> {
            let mut acc = Accumulator {
                prediction: 0.0,
                dagness: 0.0,
                grad: if with_grad { vec![0.0; n_params] } else { Vec::new() },
            };
            for &i in chunk {
                let (xi, ci) = (x.row(i), c.row(i));
                let w = gen.graph_for(ci)?;
                let r = &xi - &xi.dot(w.weights());
                let pred = r.dot(&r);
                acc.prediction += pred;
                if !with_grad {
                    acc.dagness += h(&w.view())?;
                } else {
                    let (hv, hg) = h_with_gradient(&w.view())?;
                    acc.dagness += hv;
                    // d/dW ||x - xW||² = -2 x^T r
                    let mut dl_dw = hg * (alpha * sample_scale);
                    let factor = -2.0 * sample_scale;
                    for a in 0..xi.len() {
                        let xa = xi[a] * factor;
                        if xa != 0.0 {
                            for b in 0..r.len() {
                                dl_dw[[a, b]] += xa * r[b];
                            }
                        }
                    }
                    let g = backward(&gen.dictionary, &gen.encoder, ci, &dl_dw)?.flatten();
                    for (dst, src) in acc.grad.iter_mut().zip(g) {
                        *dst += src;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut prediction = 0.0;
    let mut sample_dagness = 0.0;
    let mut grad = if with_grad { vec![0.0; n_params] } else { Vec::new() };
    for part in partials {
        prediction += part.prediction;
        sample_dagness += part.dagness;
        for (dst, src) in grad.iter_mut().zip(part.grad) {
            *dst += src;
        }
    }

    let p = gen.p();
    let mut archetype_l1 = 0.0;
    let mut archetype_dagness = 0.0;
    for (k, a) in gen.dictionary.archetypes().iter().enumerate() {
        let (hv, hg) = h_with_gradient(&a.view())?;
        archetype_l1 += a.weights().iter().map(|v| v.abs()).sum::<f64>();
        archetype_dagness += hv;
        if with_grad {
            let block = &mut grad[k * p * p..(k + 1) * p * p];
            for (((i, j), &w), (dst, &g)) in a.weights().indexed_iter().zip(block.iter_mut().zip(hg.iter())) {
                if i != j {
                    let sign = if w > 0.0 {
                        1.0
                    } else if w < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    *dst += beta * sign + gamma * g;
                }
            }
        }
    }

    let total = sample_scale * (prediction + alpha * sample_dagness) + beta * archetype_l1 + gamma * archetype_dagness;
    Ok((
        ObjectiveBreakdown { prediction, sample_dagness, archetype_l1, archetype_dagness, total },
        grad,
    ))
}

/// The objective summed over the batch rows.
pub fn notmad_objective(
    gen: &GraphGenerator,
    x: ArrayView2<f64>,
    c: ArrayView2<f64>,
    config: &TrainConfig,
) -> Result<ObjectiveBreakdown> {
    Ok(evaluate(gen, x, c, config.alpha, config.beta, config.gamma, 1.0, false)?.0)
}

/// [`notmad_objective`] and its gradient with respect to
/// [`GraphGenerator::flatten`]. The L1 term contributes `β sign(w)` with
/// `sign(0) = 0`.
pub fn notmad_objective_gradient(
    gen: &GraphGenerator,
    x: ArrayView2<f64>,
    c: ArrayView2<f64>,
    config: &TrainConfig,
) -> Result<(ObjectiveBreakdown, Vec<f64>)> {
    evaluate(gen, x, c, config.alpha, config.beta, config.gamma, 1.0, true)
}

/// Objective with per-sample terms averaged rather than summed, the form
/// minimized by [`train`].
pub fn training_objective(gen: &GraphGenerator, data: &Dataset, config: &TrainConfig) -> Result<f64> {
    let scale = 1.0 / data.n() as f64;
    Ok(evaluate(gen, data.x().view(), data.c().view(), config.alpha, config.beta, config.gamma, scale, false)?.0.total)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            epsilon: cfg.adam_epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Returns false when a moment estimate or parameter stops being finite.
    fn step(&mut self, params: &mut [f64], grad: &[f64]) -> bool {
        self.t += 1;
        let mut finite = true;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
            finite &= m.is_finite() && v.is_finite() && p.is_finite();
        }
        finite
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared residual norm over the epoch's samples.
    pub pred_loss: f64,
    /// Mean `h(W_i)` over the epoch's samples.
    pub mean_h: f64,
    /// `Σ_k ||W_k||_1` at the end of the epoch.
    pub arch_l1: f64,
    /// `Σ_k h(W_k)` at the end of the epoch.
    pub arch_h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub generator: GraphGenerator,
    pub config: TrainConfig,
    pub log: Vec<EpochRecord>,
    /// [`training_objective`] over the training data before the first step.
    pub initial_objective: f64,
    /// [`training_objective`] over the training data after the last step.
    pub final_objective: f64,
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        self.generator.save(path, Some(self.config.clone()))
    }

    /// Graph for context `c`, with `|w| <= threshold` zeroed and, when
    /// `project` is set, projected onto the DAG set.
    pub fn predict_network(&self, c: ArrayView1<f64>, project: bool, threshold: f64) -> Result<WeightedGraph> {
        predict_network(&self.generator, c, project, threshold)
    }
}

pub fn predict_network(gen: &GraphGenerator, c: ArrayView1<f64>, project: bool, threshold: f64) -> Result<WeightedGraph> {
    if !(threshold >= 0.0) {
        return Err(NotmadError::invalid(format!("threshold must be >= 0, got {threshold}")));
    }
    let w = gen.graph_for(c)?.thresholded(threshold);
    Ok(if project { project_to_dag(&w) } else { w })
}

/// Trains a generator on `data`. Initialization depends only on the
/// dimensions and `config.seed`; batches come from a separate shuffle stream
/// of the same seed.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let n = data.n();
    if config.batch_size > n {
        return Err(NotmadError::invalid(format!("batch_size {} exceeds {n} samples", config.batch_size)));
    }
    let mut gen = GraphGenerator::init(data.p(), data.m(), config.k, config.encoder_kind, config.hidden_width, config.seed);
    let initial_objective = training_objective(&gen, data, config)?;
    if !initial_objective.is_finite() {
        return Err(NotmadError::TrainingDiverged { epoch: 0, term: "initial objective".into() });
    }

    let mut params = gen.flatten();
    let mut adam = Adam::new(params.len(), config);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut pred_sum = 0.0;
        let mut h_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = data.x().select(Axis(0), batch);
            let c = data.c().select(Axis(0), batch);
            let scale = 1.0 / batch.len() as f64;
            let (terms, grad) =
                evaluate(&gen, x.view(), c.view(), config.alpha, config.beta, config.gamma, scale, true)?;
            if let Some(term) = terms.first_non_finite() {
                return Err(NotmadError::TrainingDiverged { epoch, term: term.into() });
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(NotmadError::TrainingDiverged { epoch, term: "gradient".into() });
            }
            pred_sum += terms.prediction;
            h_sum += terms.sample_dagness;
            if !adam.step(&mut params, &grad) {
                return Err(NotmadError::TrainingDiverged { epoch, term: "optimizer state".into() });
            }
            gen.unflatten(&params).map_err(|_| NotmadError::TrainingDiverged {
                epoch,
                term: "parameters".into(),
            })?;
        }
        let mut arch_h = 0.0;
        for a in gen.dictionary.archetypes() {
            arch_h += h(&a.view())?;
        }
        let record = EpochRecord {
            epoch,
            pred_loss: pred_sum / n as f64,
            mean_h: h_sum / n as f64,
            arch_l1: gen.dictionary.l1(),
            arch_h,
        };
        if !(record.arch_l1.is_finite() && record.arch_h.is_finite()) {
            return Err(NotmadError::TrainingDiverged { epoch, term: "archetype penalties".into() });
        }
        log::debug!(
            "epoch {epoch}: pred {:.5} mean_h {:.3e} arch_l1 {:.4} arch_h {:.3e}",
            record.pred_loss,
            record.mean_h,
            record.arch_l1,
            record.arch_h
        );
        log.push(record);
    }

    let final_objective = training_objective(&gen, data, config)?;
    if !final_objective.is_finite() {
        return Err(NotmadError::TrainingDiverged { epoch: config.epochs, term: "final objective".into() });
    }
    Ok(TrainedModel { generator: gen, config: config.clone(), log, initial_objective, final_objective })
}

/// Per-row networks for every context row of `c`.
pub fn predict_all(gen: &GraphGenerator, c: ArrayView2<f64>, project: bool, threshold: f64) -> Result<Vec<WeightedGraph>> {
    let rows: Vec<usize> = (0..c.nrows()).collect();
    rows.par_iter().map(|&i| predict_network(gen, c.row(i), project, threshold)).collect()
}

/// Unprojected networks straight from the generator.
pub fn raw_networks(gen: &GraphGenerator, c: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
    (0..c.nrows()).map(|i| Ok(gen.graph_for(c.row(i))?.into_inner())).collect()
}
