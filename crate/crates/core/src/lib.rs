//! Context-specific Bayesian networks estimated as learned mixtures of
//! archetypal DAGs.
//!
//! A context encoder maps covariates to softmax weights over a dictionary
//! of archetype graphs; each sample's network is the weighted combination.
//! Training balances a least-squares SEM fit against the smooth acyclicity
//! penalty `h(W) = tr(exp(W ∘ W)) - p` on both sample and archetype graphs.

pub mod acyclicity;
pub mod baselines;
pub mod cli;
pub mod dag;
pub mod error;
pub mod eval;
pub mod io;
mod linalg;
pub mod mixture;
pub mod notmad;
pub mod selfcheck;
pub mod sem;
pub mod synth;

pub use dag::{BinaryStructure, WeightedGraph};
pub use error::{NotmadError, Result};
pub use mixture::{ArchetypeDictionary, ContextEncoder, EncoderKind, GraphGenerator, SubtypeWeights};
pub use notmad::{train, TrainConfig, TrainedModel};
pub use sem::Dataset;
