use std::collections::HashSet;

use crate::error::ModelError;
use crate::types::{Model, SequenceInput, Task};

pub const POSITIVE_WORDS: &[&str] = &[
    "good", "great", "terrific", "brilliant", "wonderful", "engaging", "fun", "funny", "charming",
    "clever", "fresh", "beautiful", "moving", "enjoy", "works", "succeeds", "wins", "excellent",
    "lovely", "touching", "delight", "impresses", "saves", "strong", "lively", "love", "stylish",
];

pub const NEGATIVE_WORDS: &[&str] = &[
    "bad", "fails", "loses", "disappoints", "boring", "dull", "tedious", "mess", "ruins",
    "pretentious", "awful", "terrible", "weak", "flat", "flunks", "poor", "stale", "ugly", "hate",
    "annoying", "disaster", "spoils", "bland", "silly",
];

pub const NEGATORS: &[&str] = &["not", "never", "no", "hardly", "nothing", "n't", "without"];

/// Lexicon-based sentiment scorer with negation scope.
///
/// Each sentiment word contributes its polarity, flipped when a negator
/// precedes it within `scope` positions with no other sentiment word in
/// between. Scores `>= 0` are positive.
#[derive(Debug, Clone)]
pub struct ToySentimentModel {
    pub positive: HashSet<String>,
    pub negative: HashSet<String>,
    pub negators: HashSet<String>,
    pub scope: usize,
}

impl Default for ToySentimentModel {
    fn default() -> Self {
        let set = |words: &[&str]| words.iter().map(|w| w.to_string()).collect();
        Self {
            positive: set(POSITIVE_WORDS),
            negative: set(NEGATIVE_WORDS),
            negators: set(NEGATORS),
            scope: 3,
        }
    }
}

impl ToySentimentModel {
    fn polarity(&self, word: &str) -> i32 {
        if self.positive.contains(word) {
            1
        } else if self.negative.contains(word) {
            -1
        } else {
            0
        }
    }

    pub fn score(&self, tokens: &[String]) -> f64 {
        let mut total = 0i32;
        for (k, word) in tokens.iter().enumerate() {
            let polarity = self.polarity(word);
            if polarity == 0 {
                continue;
            }
            let mut flip = false;
            for j in (k.saturating_sub(self.scope)..k).rev() {
                if self.polarity(&tokens[j]) != 0 {
                    break;
                }
                if self.negators.contains(tokens[j].as_str()) {
                    flip = true;
                    break;
                }
            }
            total += if flip { -polarity } else { polarity };
        }
        f64::from(total)
    }
}

impl Model for ToySentimentModel {
    fn predict(&self, input: &SequenceInput) -> Result<f64, ModelError> {
        match input {
            SequenceInput::Tokens(t) => Ok(self.score(t)),
            SequenceInput::Values(v) if v.is_empty() => Ok(0.0),
            SequenceInput::Values(_) => Err(ModelError::MalformedResponse(
                "sentiment model expects tokens".into(),
            )),
        }
    }

    fn task(&self) -> Task {
        Task::BinaryClassification { threshold: 0.0 }
    }
}
