//! Benchmark datasets: labelled sentences, labelled series, and synthetic
//! spike-drop series for the anomaly model.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::models::{explanation_window, ToyAnomalyModel};
use crate::text::tokenize;
use crate::types::{Label, SequenceInput};

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    /// Reference label from the dataset, if given. Evaluation uses model labels.
    pub label: Option<Label>,
    pub input: SequenceInput,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub items: Vec<Item>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Parses `label<TAB>sentence` lines.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut items = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (label, sentence) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("line {}: expected label<TAB>sentence", lineno + 1)))?;
            items.push(Item {
                id: items.len().to_string(),
                label: parse_label(label, lineno)?,
                input: tokenize(sentence),
            });
        }
        Ok(Self { items })
    }

    /// Parses `label,v1,v2,...` lines.
    pub fn parse_series(text: &str) -> Result<Self> {
        let mut items = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',').map(str::trim);
            let label = parse_label(fields.next().unwrap_or_default(), lineno)?;
            let values = fields
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Parse(format!("line {}: bad value {f:?}", lineno + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            items.push(Item {
                id: items.len().to_string(),
                label,
                input: SequenceInput::values(values),
            });
        }
        Ok(Self { items })
    }

    /// Loads a dataset; `.csv` files are series, anything else is text.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        let ds = if is_csv { Self::parse_series(&text)? } else { Self::parse_text(&text)? };
        if ds.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(ds)
    }

    /// The bundled 20-sentence review fixture.
    pub fn builtin_sentences() -> Self {
        Self::parse_text(include_str!("../data/sentences.tsv")).expect("bundled fixture parses")
    }
}

fn parse_label(s: &str, lineno: usize) -> Result<Option<Label>> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "?" => Ok(None),
        "positive" | "pos" | "1" | "+1" | "anomaly" => Ok(Some(Label::Positive)),
        "negative" | "neg" | "0" | "-1" | "normal" => Ok(Some(Label::Negative)),
        other => Err(Error::Parse(format!("line {}: unknown label {other:?}", lineno + 1))),
    }
}

/// Noisy series with one spike followed by a drop a few steps later.
pub fn synthetic_spike_drop(model: &ToyAnomalyModel, n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).expect("valid sd");
    let max_gap = model.window.clamp(1, 4);
    (0..n)
        .map(|_| {
            let mut v: Vec<f64> = (0..len).map(|_| noise.sample(&mut rng)).collect();
            let gap = rng.random_range(1..=max_gap);
            let spike_at = rng.random_range(len / 3..len - gap);
            v[spike_at] = model.spike + rng.random_range(2.5..4.0);
            v[spike_at + gap] = model.drop - rng.random_range(2.5..4.0);
            v
        })
        .collect()
}

/// Windows of the anomaly-flagged series, ending at each detection point.
/// Series the model does not flag are skipped.
pub fn anomaly_dataset(model: &ToyAnomalyModel, series: &[Vec<f64>], window: usize) -> Dataset {
    let items = series
        .iter()
        .enumerate()
        .filter_map(|(i, v)| {
            let end = model.detection_point(v)?;
            Some(Item {
                id: i.to_string(),
                label: Some(Label::Positive),
                input: explanation_window(v, end, window),
            })
        })
        .collect();
    Dataset { items }
}
