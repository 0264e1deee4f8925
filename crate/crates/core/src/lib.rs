//! Search-based structured prediction with ensemble knowledge distillation.
//!
//! Two tasks are provided on top of a generic search engine:
//!
//! * [`parser`]: arc-standard transition-based dependency parsing with a
//!   static oracle, an exact dynamic oracle, CoNLL I/O and LAS.
//! * [`transducer`]: word-by-word sequence transduction with corpus-level
//!   BLEU and a synthetic ambiguous translation corpus.
//!
//! A small feed-forward softmax [`classifier`] parameterises the policy.
//! [`ensemble`] averages differently-seeded classifiers, and [`distill`]
//! trains a single student from the ensemble on reference states,
//! exploration states, or both. [`eval`] holds the analyses (MAP on
//! problematic states, seed stability, paired bootstrap, sweeps).

pub mod classifier;
pub mod distill;
pub mod ensemble;
mod error;
pub mod eval;
pub mod parser;
pub mod search;
pub mod seed;
pub mod transducer;
pub mod vocab;

pub use classifier::{ClassifierModel, Example, FeatureLayout, Gradients, LossConfig, ModelConfig};
pub use distill::{DistillConfig, Regime, TrainConfig, TrainOutcome};
pub use ensemble::{anneal, EnsembleModel};
pub use error::{Error, Result};
pub use search::{ActionDistribution, ActionId, Origin, Policy, PolicyMode, Scorer, StateRecord, Task};
pub use vocab::Vocab;
