//! Local model-agnostic explanations for sequence models with temporal predicates.
//!
//! Explanations are built from predicates over feature sequences. Besides the
//! positional predicate `f_j op c`, the vocabulary includes 1-D temporal
//! predicates (some feature satisfies a condition at or after a position) and
//! 2-D temporal predicates (two features satisfy conditions in a given order
//! with a minimum gap). A length-varying perturbation model deletes and swaps
//! features so that explanations are exercised on inputs of other lengths.

pub mod anchors;
pub mod bandit;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod lime;
pub mod models;
pub mod perturb;
pub mod predicate;
pub mod text;
pub mod types;

pub use anchors::{anchor_decide, estimate_precision, explain_anchors, AnchorConfig};
pub use dataset::Dataset;
pub use error::{Error, ModelError, Result};
pub use evaluate::{run_benchmark, BenchConfig, EvalReport, Method};
pub use lime::{explain_lime, lime_decide, LimeConfig};
pub use perturb::{conditional_sample, sample, Lexicon, PerturbationSpec};
pub use predicate::{enumerate_vocabulary, Bound, Op, Predicate, VocabConfig, VocabMode, Vocabulary};
pub use types::{
    Anchor, Decision, Explanation, Feature, Label, LinearExplanation, Model, SequenceInput, Task, Term,
};
