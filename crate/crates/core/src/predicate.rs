//! Explanation vocabulary: positional feature predicates plus 1-D and 2-D
//! temporal predicates, their evaluation, and per-input enumeration.
//!
//! A 1-D temporal predicate asks whether *some* position `j` carries a
//! matching feature with `j >= d` (or `j <= d`). A 2-D temporal predicate
//! asks for two distinct positions `j`, `k` carrying matching features with
//! `k - j >= d`; `d = -1` accepts adjacent witnesses in either order.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Feature, SequenceInput};

/// Half-width of the interval used when `Eq` is applied to real values.
pub const VALUE_EQ_EPS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Eq,
    Gt,
    Lt,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Eq => "=",
            Op::Gt => ">",
            Op::Lt => "<",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    AtLeast,
    AtMost,
}

/// A condition over a [`SequenceInput`]. Positions are 1-based.
///
/// The derived ordering (variant, then fields in declaration order) is the
/// lexicographic order used to break ties between explanations.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Predicate {
    #[serde(rename = "pos")]
    Positional { j: usize, op: Op, c: Feature },
    #[serde(rename = "t1d")]
    Temporal1D {
        op: Op,
        c: Feature,
        bound: Bound,
        d: usize,
    },
    #[serde(rename = "t2d")]
    Temporal2D {
        c1: Feature,
        op1: Op,
        c2: Feature,
        op2: Op,
        d: i64,
    },
}

fn check_condition(op: Op, c: &Feature) -> Result<()> {
    match c {
        Feature::Token(_) if op != Op::Eq => Err(Error::InvalidPredicate(format!(
            "token constant '{c}' only supports '=', got '{op}'"
        ))),
        Feature::Value(v) if !v.is_finite() => {
            Err(Error::InvalidPredicate(format!("non-finite constant {v}")))
        }
        _ => Ok(()),
    }
}

/// Tests one feature (0-based `idx`) against `op c`. Kinds must already match.
#[inline]
fn holds_at(op: Op, c: &Feature, input: &SequenceInput, idx: usize) -> bool {
    match (input, c) {
        (SequenceInput::Tokens(t), Feature::Token(s)) => op == Op::Eq && t[idx] == *s,
        (SequenceInput::Values(v), Feature::Value(c)) => {
            let x = v[idx];
            match op {
                Op::Eq => (x - c).abs() <= VALUE_EQ_EPS,
                Op::Gt => x > *c,
                Op::Lt => x < *c,
            }
        }
        _ => false,
    }
}

impl Predicate {
    pub fn t2d_tokens(c1: &str, c2: &str, d: i64) -> Self {
        Predicate::Temporal2D {
            c1: Feature::token(c1),
            op1: Op::Eq,
            c2: Feature::token(c2),
            op2: Op::Eq,
            d,
        }
    }

    pub fn t1d_token(c: &str) -> Self {
        Predicate::Temporal1D {
            op: Op::Eq,
            c: Feature::token(c),
            bound: Bound::AtLeast,
            d: 1,
        }
    }

    pub fn positional_token(j: usize, c: &str) -> Self {
        Predicate::Positional {
            j,
            op: Op::Eq,
            c: Feature::token(c),
        }
    }

    pub fn is_temporal(&self) -> bool {
        !matches!(self, Predicate::Positional { .. })
    }

    fn constants(&self) -> Vec<(&Feature, Op)> {
        match self {
            Predicate::Positional { op, c, .. } | Predicate::Temporal1D { op, c, .. } => {
                vec![(c, *op)]
            }
            Predicate::Temporal2D { c1, op1, c2, op2, .. } => vec![(c1, *op1), (c2, *op2)],
        }
    }

    /// Checks the structural invariants of the predicate itself.
    pub fn validate(&self) -> Result<()> {
        for (c, op) in self.constants() {
            check_condition(op, c)?;
        }
        match self {
            Predicate::Positional { j: 0, .. } => {
                Err(Error::InvalidPredicate("positions are 1-based".into()))
            }
            Predicate::Temporal1D { d: 0, .. } => {
                Err(Error::InvalidPredicate("1-D distance must be positive".into()))
            }
            Predicate::Temporal2D { c1, c2, d, .. } => {
                if *d < -1 {
                    return Err(Error::InvalidPredicate(format!("2-D distance {d} < -1")));
                }
                if c1.kind() != c2.kind() {
                    return Err(Error::InvalidPredicate("mixed constant kinds".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn check_input(&self, input: &SequenceInput) -> Result<()> {
        self.validate()?;
        let kind = input.kind();
        for (c, _) in self.constants() {
            if c.kind() != kind && !input.is_empty() {
                return Err(Error::TypeMismatch(format!(
                    "{:?} predicate on a {:?} sequence",
                    c.kind(),
                    kind
                )));
            }
        }
        Ok(())
    }

    /// Evaluates the predicate on `input`.
    pub fn eval(&self, input: &SequenceInput) -> Result<bool> {
        self.check_input(input)?;
        Ok(self.eval_unchecked(input))
    }

    /// Evaluation without validation; used on hot paths after a vocabulary
    /// has been checked once against the explained input.
    pub(crate) fn eval_unchecked(&self, input: &SequenceInput) -> bool {
        if input.is_empty() {
            return false;
        }
        match self {
            Predicate::Positional { j, op, c } => {
                *j >= 1 && *j <= input.len() && holds_at(*op, c, input, j - 1)
            }
            Predicate::Temporal1D { op, c, bound, d } => {
                let n = input.len();
                match bound {
                    Bound::AtLeast => (d.saturating_sub(1)..n).any(|i| holds_at(*op, c, input, i)),
                    Bound::AtMost => (0..n.min(*d)).any(|i| holds_at(*op, c, input, i)),
                }
            }
            Predicate::Temporal2D { .. } => self.t2d_witness(input).is_some(),
        }
    }

    fn t2d_witness(&self, input: &SequenceInput) -> Option<(usize, usize)> {
        let Predicate::Temporal2D { c1, op1, c2, op2, d } = self else {
            return None;
        };
        let n = input.len();
        if n < 2 {
            return None;
        }
        let first: Vec<usize> = (0..n).filter(|&i| holds_at(*op1, c1, input, i)).collect();
        if first.is_empty() {
            return None;
        }
        let second: Vec<usize> = (0..n).filter(|&i| holds_at(*op2, c2, input, i)).collect();
        // Earliest first witness against latest second witness maximizes k - j.
        for &j in &first {
            for &k in second.iter().rev() {
                if j != k && k as i64 - j as i64 >= *d {
                    return Some((j + 1, k + 1));
                }
            }
        }
        None
    }

    /// Positions (1-based) that make the predicate true on `input`, if any.
    pub fn witnesses(&self, input: &SequenceInput) -> Result<Option<Vec<usize>>> {
        self.check_input(input)?;
        if input.is_empty() {
            return Ok(None);
        }
        Ok(match self {
            Predicate::Positional { j, .. } => self.eval_unchecked(input).then(|| vec![*j]),
            Predicate::Temporal1D { op, c, bound, d } => {
                let n = input.len();
                let pos = match bound {
                    Bound::AtLeast => (d.saturating_sub(1)..n).find(|&i| holds_at(*op, c, input, i)),
                    Bound::AtMost => (0..n.min(*d)).find(|&i| holds_at(*op, c, input, i)),
                };
                pos.map(|i| vec![i + 1])
            }
            Predicate::Temporal2D { .. } => self.t2d_witness(input).map(|(j, k)| vec![j, k]),
        })
    }
}

fn fmt_distance(d: i64) -> String {
    if d < 0 {
        format!("\u{2212}{}", -d)
    } else {
        d.to_string()
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Positional { j, op, c } => write!(f, "f_{j} {op} {c}"),
            Predicate::Temporal1D { op, c, bound, d } => {
                let rel = match bound {
                    Bound::AtLeast => "\u{2265}",
                    Bound::AtMost => "\u{2264}",
                };
                match c {
                    Feature::Token(t) if *bound == Bound::AtLeast && *d == 1 => write!(f, "{{{t}}}"),
                    Feature::Token(t) => write!(f, "{{{t}}} \u{2227} Pos_{t} {rel} {d}"),
                    Feature::Value(_) => {
                        write!(f, "\u{2203}j. f_j {op} {c} \u{2227} j {rel} {d}")
                    }
                }
            }
            Predicate::Temporal2D { c1, op1, c2, op2, d } => match (c1, c2) {
                (Feature::Token(a), Feature::Token(b)) => write!(
                    f,
                    "{{{a}, {b}}} \u{2227} Pos_{b} \u{2212} Pos_{a} \u{2265} {}",
                    fmt_distance(*d)
                ),
                _ => write!(
                    f,
                    "\u{2203}j,k. f_j {op1} {c1} \u{2227} f_k {op2} {c2} \u{2227} k \u{2212} j \u{2265} {}",
                    fmt_distance(*d)
                ),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabMode {
    Classic,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabConfig {
    /// Distances enumerated for 1-D predicates (`j >= d`).
    pub t1d_distances: Vec<usize>,
    /// Also enumerate `j <= d` variants of 1-D predicates.
    pub include_at_most: bool,
    /// Offset of the `>`/`<` bands that stand in for equality on real values.
    pub value_band: f64,
    /// Skip 2-D pairs further apart than this.
    pub max_pair_gap: Option<usize>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            t1d_distances: vec![1],
            include_at_most: false,
            value_band: 2.0,
            max_pair_gap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub predicates: Vec<Predicate>,
    pub mode: VocabMode,
}

impl Vocabulary {
    /// Builds a vocabulary, dropping duplicates while keeping first occurrence.
    pub fn new(predicates: Vec<Predicate>, mode: VocabMode) -> Result<Self> {
        for p in &predicates {
            p.validate()?;
            if mode == VocabMode::Classic && p.is_temporal() {
                return Err(Error::InvalidPredicate(
                    "classic vocabularies hold positional predicates only".into(),
                ));
            }
        }
        let mut seen = HashSet::new();
        let predicates = predicates.into_iter().filter(|p| seen.insert(p.clone())).collect();
        Ok(Self { predicates, mode })
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Predicate> {
        self.predicates.iter()
    }
}

/// `(op, constant)` describing a real value: a band above or below it,
/// pointing away from the sequence median.
fn value_condition(v: f64, median: f64, band: f64) -> (Op, Feature) {
    if v >= median {
        (Op::Gt, Feature::Value(v - band))
    } else {
        (Op::Lt, Feature::Value(v + band))
    }
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Enumerates the candidate predicates for explaining `input`.
///
/// Every enumerated predicate holds on `input`.
pub fn enumerate_vocabulary(
    input: &SequenceInput,
    mode: VocabMode,
    config: &VocabConfig,
) -> Result<Vocabulary> {
    if input.is_empty() {
        return Err(Error::EmptyInput);
    }
    let conditions: Vec<(Op, Feature)> = match input {
        SequenceInput::Tokens(t) => t.iter().map(|s| (Op::Eq, Feature::token(s.as_str()))).collect(),
        SequenceInput::Values(v) => {
            let m = median(v);
            v.iter().map(|&x| value_condition(x, m, config.value_band)).collect()
        }
    };

    let mut out = Vec::new();
    match mode {
        VocabMode::Classic => {
            for (i, (op, c)) in conditions.iter().enumerate() {
                out.push(Predicate::Positional {
                    j: i + 1,
                    op: *op,
                    c: c.clone(),
                });
            }
        }
        VocabMode::Temporal => {
            let mut bounds = vec![Bound::AtLeast];
            if config.include_at_most {
                bounds.push(Bound::AtMost);
            }
            for (op, c) in &conditions {
                for &bound in &bounds {
                    for &d in &config.t1d_distances {
                        if d == 0 {
                            continue;
                        }
                        let p = Predicate::Temporal1D {
                            op: *op,
                            c: c.clone(),
                            bound,
                            d,
                        };
                        if p.eval_unchecked(input) {
                            out.push(p);
                        }
                    }
                }
            }
            let n = conditions.len();
            for j in 0..n {
                for k in j + 1..n {
                    let gap = k - j;
                    if config.max_pair_gap.is_some_and(|g| gap > g) {
                        continue;
                    }
                    let ((op1, c1), (op2, c2)) = (&conditions[j], &conditions[k]);
                    if c1 == c2 && op1 == op2 {
                        continue;
                    }
                    for d in [-1, 1, gap as i64] {
                        out.push(Predicate::Temporal2D {
                            c1: c1.clone(),
                            op1: *op1,
                            c2: c2.clone(),
                            op2: *op2,
                            d,
                        });
                    }
                }
            }
        }
    }
    Vocabulary::new(out, mode)
}

/// Indicator vector of `vocab` on `input`.
pub fn featurize(input: &SequenceInput, vocab: &Vocabulary) -> Result<Vec<bool>> {
    vocab.iter().map(|p| p.eval(input)).collect()
}

pub(crate) fn featurize_unchecked(input: &SequenceInput, vocab: &[Predicate]) -> Vec<bool> {
    vocab.iter().map(|p| p.eval_unchecked(input)).collect()
}

/// True when every predicate of the conjunction holds.
pub(crate) fn conjunction_holds(preds: &[Predicate], input: &SequenceInput) -> bool {
    preds.iter().all(|p| p.eval_unchecked(input))
}
