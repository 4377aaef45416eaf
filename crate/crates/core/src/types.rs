//! Inputs, labels, the black-box model contract and explanation values.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, ModelError, Result};
use crate::predicate::Predicate;

/// A single feature value, also used as the constant of a predicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Feature {
    Token(String),
    Value(f64),
}

impl Feature {
    pub fn kind(&self) -> FeatureKind {
        match self {
            Feature::Token(_) => FeatureKind::Token,
            Feature::Value(_) => FeatureKind::Value,
        }
    }

    pub fn token(s: impl Into<String>) -> Self {
        Feature::Token(s.into())
    }
}

// Values compare by bit pattern so predicates can be hashed and ordered.
impl PartialEq for Feature {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Feature {}

impl Hash for Feature {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Feature::Token(s) => {
                0u8.hash(state);
                s.hash(state);
            }
            Feature::Value(v) => {
                1u8.hash(state);
                v.to_bits().hash(state);
            }
        }
    }
}

impl PartialOrd for Feature {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Feature {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Feature::Token(a), Feature::Token(b)) => a.cmp(b),
            (Feature::Value(a), Feature::Value(b)) => a.total_cmp(b),
            (Feature::Token(_), Feature::Value(_)) => Ordering::Less,
            (Feature::Value(_), Feature::Token(_)) => Ordering::Greater,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::Token(s) => f.write_str(s),
            Feature::Value(v) => write!(f, "{v:.2}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Token,
    Value,
}

/// A variable-length sequence consumed by the model.
///
/// The two variants keep every sequence homogeneous. Positions exposed by
/// [`SequenceInput::feature`] are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "lowercase")]
pub enum SequenceInput {
    Tokens(Vec<String>),
    Values(Vec<f64>),
}

impl SequenceInput {
    pub fn tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SequenceInput::Tokens(tokens.into_iter().map(Into::into).collect())
    }

    pub fn values(values: impl Into<Vec<f64>>) -> Self {
        SequenceInput::Values(values.into())
    }

    /// Builds a sequence from individual features, rejecting mixed kinds.
    pub fn from_features(features: Vec<Feature>) -> Result<Self> {
        let Some(first) = features.first() else {
            return Ok(SequenceInput::Tokens(Vec::new()));
        };
        match first.kind() {
            FeatureKind::Token => features
                .into_iter()
                .map(|f| match f {
                    Feature::Token(s) => Ok(s),
                    Feature::Value(_) => Err(Error::TypeMismatch("mixed sequence".into())),
                })
                .collect::<Result<Vec<_>>>()
                .map(SequenceInput::Tokens),
            FeatureKind::Value => features
                .into_iter()
                .map(|f| match f {
                    Feature::Value(v) => Ok(v),
                    Feature::Token(_) => Err(Error::TypeMismatch("mixed sequence".into())),
                })
                .collect::<Result<Vec<_>>>()
                .map(SequenceInput::Values),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SequenceInput::Tokens(t) => t.len(),
            SequenceInput::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            SequenceInput::Tokens(_) => FeatureKind::Token,
            SequenceInput::Values(_) => FeatureKind::Value,
        }
    }

    /// Feature at 1-based `pos`.
    pub fn feature(&self, pos: usize) -> Option<Feature> {
        let idx = pos.checked_sub(1)?;
        match self {
            SequenceInput::Tokens(t) => t.get(idx).cloned().map(Feature::Token),
            SequenceInput::Values(v) => v.get(idx).copied().map(Feature::Value),
        }
    }

    pub fn features(&self) -> Vec<Feature> {
        (1..=self.len()).filter_map(|p| self.feature(p)).collect()
    }
}

impl fmt::Display for SequenceInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SequenceInput::Tokens(t) => f.write_str(&t.join(" ")),
            SequenceInput::Values(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
                f.write_str(&parts.join(" "))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    /// Sign convention shared by the linear surrogate: `>= 0` is positive.
    pub fn from_sign(x: f64) -> Self {
        if x >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "Positive",
            Label::Negative => "Negative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    BinaryClassification { threshold: f64 },
    Regression,
}

impl Task {
    /// Thresholds a raw output. A tie at the threshold is `Positive`.
    pub fn label(&self, output: f64) -> Option<Label> {
        match *self {
            Task::BinaryClassification { threshold } => Some(Label::from_sign(output - threshold)),
            Task::Regression => None,
        }
    }

    /// Regression target used by linear surrogates.
    pub fn margin(&self, output: f64) -> f64 {
        match *self {
            Task::BinaryClassification { threshold } => output - threshold,
            Task::Regression => output,
        }
    }
}

/// Whether a model may be queried from several threads at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Concurrent,
    Serial,
}

/// A black-box model over sequences. `predict` must be a pure function.
pub trait Model: Send + Sync {
    fn predict(&self, input: &SequenceInput) -> Result<f64, ModelError>;

    fn task(&self) -> Task;

    fn predict_batch(&self, inputs: &[SequenceInput]) -> Result<Vec<f64>, ModelError> {
        inputs.iter().map(|i| self.predict(i)).collect()
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

impl<M: Model + ?Sized> Model for &M {
    fn predict(&self, input: &SequenceInput) -> Result<f64, ModelError> {
        (**self).predict(input)
    }
    fn task(&self) -> Task {
        (**self).task()
    }
    fn predict_batch(&self, inputs: &[SequenceInput]) -> Result<Vec<f64>, ModelError> {
        (**self).predict_batch(inputs)
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

impl<M: Model + ?Sized> Model for Box<M> {
    fn predict(&self, input: &SequenceInput) -> Result<f64, ModelError> {
        (**self).predict(input)
    }
    fn task(&self) -> Task {
        (**self).task()
    }
    fn predict_batch(&self, inputs: &[SequenceInput]) -> Result<Vec<f64>, ModelError> {
        (**self).predict_batch(inputs)
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

/// Label assigned by a classification model.
pub fn label(model: &dyn Model, input: &SequenceInput) -> Result<Label> {
    let output = model.predict(input)?;
    labels_of(model.task(), &[output]).map(|mut v| v.remove(0))
}

pub(crate) fn labels_of(task: Task, outputs: &[f64]) -> Result<Vec<Label>> {
    outputs
        .iter()
        .map(|&o| {
            task.label(o).ok_or_else(|| {
                Error::UnsupportedTask("labels require a binary classification model".into())
            })
        })
        .collect()
}

/// Outcome of applying an explanation to an input as a decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Covered(Label),
    NotCovered,
}

/// Anchor explanation: a conjunction that is sufficient for `label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub label: Label,
    pub precision_lcb: f64,
    pub coverage: f64,
    pub predicates: Vec<Predicate>,
    /// Empirical precision over the conditional samples drawn for the anchor.
    pub precision: f64,
    /// Set when no candidate reached the precision target.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub low_precision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub predicate: Predicate,
    pub weight: f64,
}

/// Sparse linear surrogate over predicate indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearExplanation {
    pub intercept: f64,
    pub terms: Vec<Term>,
    /// Set when every sample featurized identically and only the intercept was fit.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Explanation {
    Anchor(Anchor),
    Linear(LinearExplanation),
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(f64);

    impl Model for Fixed {
        fn predict(&self, _: &SequenceInput) -> Result<f64, ModelError> {
            Ok(self.0)
        }
        fn task(&self) -> Task {
            Task::BinaryClassification { threshold: 0.5 }
        }
    }

    #[test]
    fn label_sign_rule() {
        let input = SequenceInput::tokens(["a"]);
        assert_eq!(label(&Fixed(0.7), &input).unwrap(), Label::Positive);
        assert_eq!(label(&Fixed(0.3), &input).unwrap(), Label::Negative);
    }

    #[test]
    fn label_tie_is_positive() {
        let input = SequenceInput::tokens(["a"]);
        assert_eq!(label(&Fixed(0.5), &input).unwrap(), Label::Positive);
    }

    #[test]
    fn regression_has_no_label() {
        assert_eq!(Task::Regression.label(1.0), None);
    }

    #[test]
    fn positions_are_one_based() {
        let input = SequenceInput::tokens(["he", "never"]);
        assert_eq!(input.feature(0), None);
        assert_eq!(input.feature(1), Some(Feature::token("he")));
        assert_eq!(input.feature(3), None);
    }

    #[test]
    fn mixed_features_rejected() {
        let mixed = vec![Feature::token("a"), Feature::Value(1.0)];
        assert!(SequenceInput::from_features(mixed).is_err());
    }

    #[test]
    fn wire_shape_of_inputs() {
        let t = serde_json::to_string(&SequenceInput::tokens(["he", "never"])).unwrap();
        assert_eq!(t, r#"{"kind":"tokens","data":["he","never"]}"#);
        let v = serde_json::to_string(&SequenceInput::values(vec![0.1, 2.0])).unwrap();
        assert_eq!(v, r#"{"kind":"values","data":[0.1,2.0]}"#);
    }

    proptest::proptest! {
        #[test]
        fn first_feature_is_position_one(tokens in proptest::collection::vec("[a-d]", 1..8)) {
            let input = SequenceInput::tokens(tokens.clone());
            proptest::prop_assert_eq!(input.feature(1), Some(Feature::Token(tokens[0].clone())));
        }
    }
}
