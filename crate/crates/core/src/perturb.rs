//! Perturbation models.
//!
//! The base models change feature values in place (word substitution from a
//! static lexicon, Gaussian jitter on reals). The length-varying model wraps a
//! base model with a preprocessor that first deletes random features and then
//! applies at most one swap of two features at distance `<= pi`; the base
//! model runs on the preprocessed input.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::predicate::{conjunction_holds, Bound, Predicate};
use crate::types::SequenceInput;

/// Replacement token available to every word when the lexicon has a `*` entry.
pub const UNK: &str = "UNK";

const WILDCARD: &str = "*";

/// Word substitution table: `word -> [alternatives]`.
///
/// The `*` entry lists replacements offered for every word.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Parses `word<TAB>alt1,alt2,...` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, alts) = line.split_once('\t').ok_or_else(|| {
                Error::Parse(format!("lexicon line {}: expected word<TAB>alternatives", lineno + 1))
            })?;
            let word = word.trim();
            if word.is_empty() {
                return Err(Error::Parse(format!("lexicon line {}: empty word", lineno + 1)));
            }
            let slot = entries.entry(word.to_string()).or_default();
            for alt in alts.split(',').map(str::trim).filter(|a| !a.is_empty()) {
                if alt != word && !slot.iter().any(|s| s == alt) {
                    slot.push(alt.to_string());
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The lexicon shipped with the crate (with an `UNK` fallback for every word).
    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/lexicon.tsv")).expect("bundled lexicon parses")
    }

    pub fn insert(&mut self, word: &str, alternatives: &[&str]) {
        let slot = self.entries.entry(word.to_string()).or_default();
        for alt in alternatives {
            if *alt != word && !slot.iter().any(|s| s == alt) {
                slot.push(alt.to_string());
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Replacement candidates for `word`, in a fixed order.
    pub fn alternatives(&self, word: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        let specific = self.entries.get(word).into_iter().flatten();
        let wildcard = self.entries.get(WILDCARD).into_iter().flatten();
        for alt in specific.chain(wildcard) {
            if alt != word && !out.contains(&alt.as_str()) {
                out.push(alt);
            }
        }
        out
    }
}

fn lexicon_size<S: serde::Serializer>(lex: &Arc<Lexicon>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u64(lex.len() as u64)
}

/// Value-level perturbation applied after preprocessing.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseModel {
    TextSubstitution {
        #[serde(serialize_with = "lexicon_size")]
        lexicon: Arc<Lexicon>,
        replace_prob: f64,
    },
    GaussianJitter {
        sd: f64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationSpec {
    pub base: BaseModel,
    /// Maximum distance between swapped features; 0 disables swaps.
    pub pi: usize,
    /// Cap on deletions; `None` means `ceil(len / 3)`.
    pub max_deletions: Option<usize>,
    /// Probability of continuing with one more deletion.
    pub delete_prob: f64,
    /// Probability of performing a swap when one is possible.
    pub swap_prob: f64,
    pub sample_budget: usize,
    pub seed: u64,
}

pub const DEFAULT_DELETE_PROB: f64 = 0.8;
pub const DEFAULT_SWAP_PROB: f64 = 0.5;
pub const DEFAULT_REPLACE_PROB: f64 = 0.5;

impl PerturbationSpec {
    /// Length-varying text model with the default parameters.
    pub fn text(lexicon: Lexicon) -> Self {
        Self {
            base: BaseModel::TextSubstitution {
                lexicon: Arc::new(lexicon),
                replace_prob: DEFAULT_REPLACE_PROB,
            },
            pi: 1,
            max_deletions: None,
            delete_prob: DEFAULT_DELETE_PROB,
            swap_prob: DEFAULT_SWAP_PROB,
            sample_budget: 1000,
            seed: 42,
        }
    }

    /// Length-varying series model: Gaussian jitter with unit deviation.
    pub fn series() -> Self {
        Self {
            base: BaseModel::GaussianJitter { sd: 1.0 },
            ..Self::text(Lexicon::empty())
        }
    }

    /// The same base model without deletions or swaps (length preserving).
    pub fn classic(&self) -> Self {
        Self {
            pi: 0,
            delete_prob: 0.0,
            max_deletions: Some(0),
            ..self.clone()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.sample_budget = budget;
        self
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn max_deletions_for(&self, len: usize) -> usize {
        self.max_deletions.unwrap_or(len.div_ceil(3))
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        prob("delete_prob", self.delete_prob)?;
        prob("swap_prob", self.swap_prob)?;
        match &self.base {
            BaseModel::TextSubstitution { replace_prob, .. } => prob("replace_prob", *replace_prob)?,
            BaseModel::GaussianJitter { sd } if !(sd.is_finite() && *sd >= 0.0) => {
                return Err(Error::InvalidConfig(format!("sd must be finite and >= 0, got {sd}")))
            }
            _ => {}
        }
        if self.sample_budget == 0 {
            return Err(Error::InvalidConfig("sample budget must be positive".into()));
        }
        Ok(())
    }
}

/// One perturbed input with a record of how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub sample: SequenceInput,
    /// Original (1-based) positions removed, in removal order.
    pub deleted: Vec<usize>,
    /// Positions (1-based, after deletion) that were swapped.
    pub swap: Option<(usize, usize)>,
}

/// Constraints used by the repair path of conditional sampling. All
/// positions refer to the original input.
#[derive(Debug, Default)]
struct Pins {
    keep: HashSet<usize>,
    frozen: HashSet<usize>,
}

/// Working copy of an input that tracks where each feature came from.
struct Draft<T> {
    items: Vec<T>,
    origin: Vec<usize>,
}

impl<T: Clone> Draft<T> {
    fn new(items: &[T]) -> Self {
        Self {
            items: items.to_vec(),
            origin: (1..=items.len()).collect(),
        }
    }

    fn delete<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        max: usize,
        prob: f64,
        pins: Option<&Pins>,
    ) -> Vec<usize> {
        let mut deleted = Vec::new();
        while deleted.len() < max {
            let eligible: Vec<usize> = (0..self.items.len())
                .filter(|&i| pins.is_none_or(|p| !p.keep.contains(&self.origin[i])))
                .collect();
            if eligible.is_empty() || !rng.random_bool(prob) {
                break;
            }
            let i = eligible[rng.random_range(0..eligible.len())];
            self.items.remove(i);
            deleted.push(self.origin.remove(i));
        }
        deleted
    }

    fn swap<R: Rng + ?Sized>(&mut self, rng: &mut R, pi: usize, prob: f64) -> Option<(usize, usize)> {
        let n = self.items.len();
        if pi == 0 || n < 2 || !rng.random_bool(prob) {
            return None;
        }
        // Valid pairs (m, n) with 1 <= m < n <= len and n - m <= pi, drawn uniformly.
        let pairs: Vec<(usize, usize)> = (1..n)
            .flat_map(|m| (m + 1..=n.min(m + pi)).map(move |k| (m, k)))
            .collect();
        let (m, k) = pairs[rng.random_range(0..pairs.len())];
        self.items.swap(m - 1, k - 1);
        self.origin.swap(m - 1, k - 1);
        Some((m, k))
    }
}

/// Removes between 0 and `max_deletions` features; each continuation happens
/// with probability `delete_prob` and removes a uniformly chosen survivor.
pub fn delete_features<R: Rng + ?Sized>(
    input: &SequenceInput,
    rng: &mut R,
    max_deletions: usize,
    delete_prob: f64,
) -> SequenceInput {
    match input {
        SequenceInput::Tokens(t) => {
            let mut d = Draft::new(t);
            d.delete(rng, max_deletions, delete_prob, None);
            SequenceInput::Tokens(d.items)
        }
        SequenceInput::Values(v) => {
            let mut d = Draft::new(v);
            d.delete(rng, max_deletions, delete_prob, None);
            SequenceInput::Values(d.items)
        }
    }
}

/// Exchanges the features at 1-based positions `m < n`.
pub fn swap_features(input: &SequenceInput, m: usize, n: usize) -> Result<SequenceInput> {
    let len = input.len();
    if m == 0 || m >= n || n > len {
        return Err(Error::InvalidSwap { m, n, len });
    }
    let mut out = input.clone();
    match &mut out {
        SequenceInput::Tokens(t) => t.swap(m - 1, n - 1),
        SequenceInput::Values(v) => v.swap(m - 1, n - 1),
    }
    Ok(out)
}

/// Deletion followed by at most one bounded swap.
pub fn preprocess<R: Rng + ?Sized>(input: &SequenceInput, rng: &mut R, spec: &PerturbationSpec) -> SequenceInput {
    let max = spec.max_deletions_for(input.len());
    match input {
        SequenceInput::Tokens(t) => {
            let mut d = Draft::new(t);
            d.delete(rng, max, spec.delete_prob, None);
            d.swap(rng, spec.pi, spec.swap_prob);
            SequenceInput::Tokens(d.items)
        }
        SequenceInput::Values(v) => {
            let mut d = Draft::new(v);
            d.delete(rng, max, spec.delete_prob, None);
            d.swap(rng, spec.pi, spec.swap_prob);
            SequenceInput::Values(d.items)
        }
    }
}

fn substitute<R: Rng + ?Sized>(
    tokens: &mut [String],
    origin: &[usize],
    lexicon: &Lexicon,
    replace_prob: f64,
    frozen: Option<&HashSet<usize>>,
    rng: &mut R,
) {
    for (tok, pos) in tokens.iter_mut().zip(origin) {
        if frozen.is_some_and(|f| f.contains(pos)) {
            continue;
        }
        let alts = lexicon.alternatives(tok);
        if alts.is_empty() || !rng.random_bool(replace_prob) {
            continue;
        }
        let choice = alts.choose(rng).expect("non-empty").to_string();
        *tok = choice;
    }
}

fn jitter<R: Rng + ?Sized>(values: &mut [f64], origin: &[usize], sd: f64, frozen: Option<&HashSet<usize>>, rng: &mut R) {
    if sd == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sd).expect("validated sd");
    for (v, pos) in values.iter_mut().zip(origin) {
        if frozen.is_some_and(|f| f.contains(pos)) {
            continue;
        }
        *v += normal.sample(rng);
    }
}

fn draw<R: Rng + ?Sized>(
    input: &SequenceInput,
    spec: &PerturbationSpec,
    rng: &mut R,
    pins: Option<&Pins>,
    anchor: &[Predicate],
) -> Perturbation {
    let max = spec.max_deletions_for(input.len());
    macro_rules! run {
        ($items:expr, $variant:ident, $base:expr) => {{
            let mut d = Draft::new($items);
            let deleted = d.delete(rng, max, spec.delete_prob, pins);
            let before = (d.items.clone(), d.origin.clone());
            let mut swap = d.swap(rng, spec.pi, spec.swap_prob);
            if pins.is_some()
                && swap.is_some()
                && !conjunction_holds(anchor, &SequenceInput::$variant(d.items.clone()))
            {
                (d.items, d.origin) = before;
                swap = None;
            }
            let frozen = pins.map(|p| &p.frozen);
            $base(&mut d.items, &d.origin, frozen);
            Perturbation {
                sample: SequenceInput::$variant(d.items),
                deleted,
                swap,
            }
        }};
    }
    match (input, &spec.base) {
        (SequenceInput::Tokens(t), BaseModel::TextSubstitution { lexicon, replace_prob }) => {
            run!(t, Tokens, |items: &mut Vec<String>, origin: &Vec<usize>, frozen| {
                substitute(items, origin, lexicon, *replace_prob, frozen, rng)
            })
        }
        (SequenceInput::Values(v), BaseModel::GaussianJitter { sd }) => {
            run!(v, Values, |items: &mut Vec<f64>, origin: &Vec<usize>, frozen| {
                jitter(items, origin, *sd, frozen, rng)
            })
        }
        // A base model of the other kind leaves values untouched.
        (SequenceInput::Tokens(t), _) => run!(t, Tokens, |_: &mut Vec<String>, _: &Vec<usize>, _| {}),
        (SequenceInput::Values(v), _) => run!(v, Values, |_: &mut Vec<f64>, _: &Vec<usize>, _| {}),
    }
}

/// Draws one sample and reports the deletions and swap that produced it.
pub fn sample_traced<R: Rng + ?Sized>(input: &SequenceInput, spec: &PerturbationSpec, rng: &mut R) -> Perturbation {
    draw(input, spec, rng, None, &[])
}

/// Draws `spec.sample_budget` samples: preprocessing first, then the base model.
pub fn sample<R: Rng + ?Sized>(input: &SequenceInput, spec: &PerturbationSpec, rng: &mut R) -> Vec<SequenceInput> {
    sample_n(input, spec, spec.sample_budget, rng)
}

pub fn sample_n<R: Rng + ?Sized>(
    input: &SequenceInput,
    spec: &PerturbationSpec,
    n: usize,
    rng: &mut R,
) -> Vec<SequenceInput> {
    (0..n).map(|_| draw(input, spec, rng, None, &[]).sample).collect()
}

/// Rejection attempts allowed per requested sample before switching to repair.
const REJECTION_FACTOR: usize = 20;
const MIN_REJECTION_ATTEMPTS: usize = 200;
const REPAIR_ATTEMPTS: usize = 100;

fn pins_for(anchor: &[Predicate], input: &SequenceInput) -> Result<Pins> {
    let mut pins = Pins::default();
    for p in anchor {
        let w = p.witnesses(input)?.ok_or_else(|| {
            Error::BudgetExhausted(format!("anchor predicate {p} does not hold on the input"))
        })?;
        for &pos in &w {
            pins.keep.insert(pos);
            pins.frozen.insert(pos);
        }
        match p {
            Predicate::Positional { j, .. } => pins.keep.extend(1..*j),
            Predicate::Temporal1D {
                bound: Bound::AtLeast,
                d,
                ..
            } if *d > 1 => pins.keep.extend(1..w[0]),
            Predicate::Temporal2D { d, .. } if *d >= 2 => {
                let (lo, hi) = (w[0].min(w[1]), w[0].max(w[1]));
                pins.keep.extend(lo + 1..hi);
            }
            _ => {}
        }
    }
    Ok(pins)
}

/// Draws `n` samples that all satisfy the conjunction `anchor`.
///
/// Samples come from rejection over [`sample`]; when acceptance is too rare
/// the remainder is produced by a repair sampler that pins the witnesses of
/// each predicate.
pub fn conditional_sample<R: Rng + ?Sized>(
    input: &SequenceInput,
    anchor: &[Predicate],
    spec: &PerturbationSpec,
    n: usize,
    rng: &mut R,
) -> Result<Vec<SequenceInput>> {
    for p in anchor {
        if !p.eval(input)? {
            return Err(Error::BudgetExhausted(format!(
                "anchor predicate {p} does not hold on the input"
            )));
        }
    }
    let mut out = Vec::with_capacity(n);
    if anchor.is_empty() {
        return Ok(sample_n(input, spec, n, rng));
    }
    let max_attempts = (n * REJECTION_FACTOR).max(MIN_REJECTION_ATTEMPTS);
    let mut attempts = 0;
    while out.len() < n && attempts < max_attempts {
        attempts += 1;
        let s = draw(input, spec, rng, None, &[]).sample;
        if conjunction_holds(anchor, &s) {
            out.push(s);
        }
    }
    if out.len() < n {
        let pins = pins_for(anchor, input)?;
        while out.len() < n {
            let mut ok = false;
            for _ in 0..REPAIR_ATTEMPTS {
                let s = draw(input, spec, rng, Some(&pins), anchor).sample;
                if conjunction_holds(anchor, &s) {
                    out.push(s);
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(Error::BudgetExhausted(format!(
                    "acceptance below {}/{} and repair failed",
                    out.len(),
                    attempts
                )));
            }
        }
    }
    Ok(out)
}
