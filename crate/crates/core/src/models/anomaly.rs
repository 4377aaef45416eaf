use crate::error::ModelError;
use crate::types::{Model, SequenceInput, Task};

/// Steps before a detected anomaly that explanations may refer to.
pub const DEFAULT_WINDOW: usize = 20;

/// Flags a spike above `spike` followed within `window` steps by a drop
/// below `drop`. Outputs 1.0 for an anomaly and 0.0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyAnomalyModel {
    pub spike: f64,
    pub drop: f64,
    pub window: usize,
}

impl Default for ToyAnomalyModel {
    fn default() -> Self {
        Self {
            spike: 3.0,
            drop: -3.0,
            window: 5,
        }
    }
}

impl ToyAnomalyModel {
    /// 1-based position of the earliest drop that completes the pattern.
    pub fn detection_point(&self, values: &[f64]) -> Option<usize> {
        (0..values.len()).find_map(|k| {
            let lo = k.saturating_sub(self.window);
            (values[k] < self.drop && (lo..k).any(|j| values[j] > self.spike)).then_some(k + 1)
        })
    }

    pub fn is_anomalous(&self, values: &[f64]) -> bool {
        self.detection_point(values).is_some()
    }
}

impl Model for ToyAnomalyModel {
    fn predict(&self, input: &SequenceInput) -> Result<f64, ModelError> {
        match input {
            SequenceInput::Values(v) => Ok(if self.is_anomalous(v) { 1.0 } else { 0.0 }),
            SequenceInput::Tokens(t) if t.is_empty() => Ok(0.0),
            SequenceInput::Tokens(_) => Err(ModelError::MalformedResponse(
                "anomaly model expects values".into(),
            )),
        }
    }

    fn task(&self) -> Task {
        Task::BinaryClassification { threshold: 0.5 }
    }
}

/// The `width` steps ending at 1-based position `end` (inclusive).
pub fn explanation_window(values: &[f64], end: usize, width: usize) -> SequenceInput {
    let end = end.min(values.len());
    let start = end.saturating_sub(width);
    SequenceInput::values(values[start..end].to_vec())
}
