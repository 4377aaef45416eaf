//! Anchor search.
//!
//! Beam search over conjunctions of vocabulary predicates that hold on the
//! explained input. Candidate precision is estimated from conditional samples
//! with KL-LUCB; coverage is the fraction of a fixed unconditional sample set
//! that satisfies the conjunction.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{kl_lucb_select, ArmStats, LucbConfig};
use crate::error::{Error, Result};
use crate::perturb::{conditional_sample, sample_n, PerturbationSpec};
use crate::predicate::{conjunction_holds, Predicate, Vocabulary};
use crate::types::{labels_of, Anchor, Decision, Label, Model, SequenceInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub tau: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub beam_width: usize,
    pub max_anchor_size: usize,
    pub batch: usize,
    /// Conditional samples drawn for every new candidate before the bandit runs.
    pub init_samples: usize,
    /// Size of the unconditional sample set used to estimate coverage.
    pub coverage_samples: usize,
    /// Per-candidate cap on conditional samples.
    pub max_arm_samples: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            tau: 0.95,
            delta: 0.1,
            epsilon: 0.05,
            beam_width: 4,
            max_anchor_size: 4,
            batch: 100,
            init_samples: 10,
            coverage_samples: 10_000,
            max_arm_samples: 2000,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.beam_width == 0 || self.max_anchor_size == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig(
                "beam width, anchor size and batch must be positive".into(),
            ));
        }
        if self.coverage_samples == 0 {
            return Err(Error::InvalidConfig("coverage sample count must be positive".into()));
        }
        Ok(())
    }

    fn lucb(&self, top_n: usize) -> LucbConfig {
        LucbConfig {
            epsilon: self.epsilon,
            delta: self.delta,
            batch: self.batch,
            top_n,
            target: Some(self.tau),
            max_pulls: self.max_arm_samples,
            ..LucbConfig::default()
        }
    }
}

/// Fraction of `n` conditional samples under `anchor` that keep the label of `input`.
pub fn estimate_precision<R: Rng + ?Sized>(
    anchor: &[Predicate],
    model: &dyn Model,
    input: &SequenceInput,
    spec: &PerturbationSpec,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("precision needs at least one sample".into()));
    }
    let target = crate::types::label(model, input)?;
    let samples = conditional_sample(input, anchor, spec, n, rng)?;
    let hits = count_matching(model, &samples, target)?;
    Ok(hits as f64 / n as f64)
}

fn count_matching(model: &dyn Model, samples: &[SequenceInput], target: Label) -> Result<usize> {
    let outputs = model.predict_batch(samples)?;
    Ok(labels_of(model.task(), &outputs)?
        .into_iter()
        .filter(|&l| l == target)
        .count())
}

/// Applies an anchor as a decision rule.
pub fn anchor_decide(anchor: &Anchor, input: &SequenceInput) -> Decision {
    if conjunction_holds(&anchor.predicates, input) {
        Decision::Covered(anchor.label)
    } else {
        Decision::NotCovered
    }
}

/// Per-predicate satisfaction bitsets over the coverage sample set.
struct CoverageTable {
    bits: Vec<Vec<u64>>,
    n: usize,
}

impl CoverageTable {
    fn new(preds: &[Predicate], samples: &[SequenceInput]) -> Self {
        let words = samples.len().div_ceil(64);
        let bits = preds
            .iter()
            .map(|p| {
                let mut row = vec![0u64; words];
                for (i, s) in samples.iter().enumerate() {
                    if p.eval_unchecked(s) {
                        row[i / 64] |= 1 << (i % 64);
                    }
                }
                row
            })
            .collect();
        Self { bits, n: samples.len() }
    }

    fn coverage(&self, anchor: &[usize]) -> f64 {
        let Some((&first, rest)) = anchor.split_first() else {
            return 1.0;
        };
        let count: u32 = (0..self.bits[first].len())
            .map(|w| rest.iter().fold(self.bits[first][w], |acc, &i| acc & self.bits[i][w]).count_ones())
            .sum();
        count as f64 / self.n as f64
    }
}

/// Sum of temporal distances; larger means a stricter ordering requirement.
fn distance_key(preds: &[Predicate]) -> i64 {
    preds
        .iter()
        .map(|p| match p {
            Predicate::Temporal1D { d, .. } => *d as i64,
            Predicate::Temporal2D { d, .. } => *d,
            Predicate::Positional { .. } => 0,
        })
        .sum()
}

/// The conjunction with every 2-D distance erased.
fn shape(preds: &[Predicate]) -> Vec<Predicate> {
    preds
        .iter()
        .map(|p| match p {
            Predicate::Temporal2D { c1, op1, c2, op2, .. } => Predicate::Temporal2D {
                c1: c1.clone(),
                op1: *op1,
                c2: c2.clone(),
                op2: *op2,
                d: 0,
            },
            other => other.clone(),
        })
        .collect()
}

struct Search<'a, R: ?Sized> {
    model: &'a dyn Model,
    input: &'a SequenceInput,
    spec: &'a PerturbationSpec,
    candidates: Vec<Predicate>,
    target: Label,
    rng: &'a mut R,
    arms: HashMap<Vec<usize>, ArmStats>,
}

impl<R: Rng + ?Sized> Search<'_, R> {
    fn predicates(&self, anchor: &[usize]) -> Vec<Predicate> {
        anchor.iter().map(|&i| self.candidates[i].clone()).collect()
    }

    fn pull(&mut self, anchor: &[usize], n: usize) -> Result<usize> {
        let preds = self.predicates(anchor);
        let samples = conditional_sample(self.input, &preds, self.spec, n, self.rng)?;
        count_matching(self.model, &samples, self.target)
    }

    /// Runs the bandit over `anchors` and returns the kept ones with their bounds.
    fn select(
        &mut self,
        anchors: &[Vec<usize>],
        coverage: &CoverageTable,
        config: &AnchorConfig,
        top_n: usize,
    ) -> Result<Vec<(Vec<usize>, ArmStats, f64)>> {
        let mut live: Vec<Vec<usize>> = Vec::with_capacity(anchors.len());
        for a in anchors {
            if !self.arms.contains_key(a) {
                match self.pull(a, config.init_samples.max(1)) {
                    Ok(hits) => {
                        let stats = ArmStats {
                            pulls: config.init_samples.max(1),
                            positives: hits,
                            priority: coverage.coverage(a),
                        };
                        self.arms.insert(a.clone(), stats);
                    }
                    Err(Error::BudgetExhausted(msg)) => {
                        log::debug!("dropping candidate {:?}: {msg}", self.predicates(a));
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
            live.push(a.clone());
        }
        if live.is_empty() {
            return Ok(Vec::new());
        }
        let mut stats: Vec<ArmStats> = live.iter().map(|a| self.arms[a].clone()).collect();
        let selections = kl_lucb_select(&mut stats, |i, n| self.pull(&live[i], n), &config.lucb(top_n))?;
        for (a, s) in live.iter().zip(&stats) {
            self.arms.insert(a.clone(), s.clone());
        }
        Ok(selections
            .into_iter()
            .map(|s| (live[s.index].clone(), stats[s.index].clone(), s.lcb))
            .collect())
    }
}

/// Searches for a high-precision anchor for the model's label on `input`.
pub fn explain_anchors<R: Rng + ?Sized>(
    model: &dyn Model,
    input: &SequenceInput,
    vocab: &Vocabulary,
    spec: &PerturbationSpec,
    config: &AnchorConfig,
    rng: &mut R,
) -> Result<Anchor> {
    config.validate()?;
    spec.validate()?;
    if vocab.is_empty() {
        return Err(Error::VocabularyEmpty);
    }
    let mut candidates: BTreeSet<Predicate> = BTreeSet::new();
    for p in vocab.iter() {
        if p.eval(input)? {
            candidates.insert(p.clone());
        }
    }
    let candidates: Vec<Predicate> = candidates.into_iter().collect();
    let target = crate::types::label(model, input)?;

    let coverage_set = sample_n(input, spec, config.coverage_samples, rng);
    let coverage = CoverageTable::new(&candidates, &coverage_set);
    let mut search = Search {
        model,
        input,
        spec,
        candidates,
        target,
        rng,
        arms: HashMap::new(),
    };

    let empty = search.select(&[Vec::new()], &coverage, config, 1)?;
    let (_, empty_stats, empty_lcb) = empty.into_iter().next().expect("empty anchor always samples");
    if empty_lcb >= config.tau {
        return Ok(Anchor {
            label: target,
            precision_lcb: empty_lcb,
            coverage: 1.0,
            predicates: Vec::new(),
            precision: empty_stats.mean(),
            low_precision: false,
        });
    }
    if search.candidates.is_empty() {
        return Err(Error::VocabularyEmpty);
    }

    let mut beam: Vec<Vec<usize>> = vec![Vec::new()];
    for size in 1..=config.max_anchor_size {
        let mut next: BTreeSet<Vec<usize>> = BTreeSet::new();
        for member in &beam {
            for i in 0..search.candidates.len() {
                if member.contains(&i) {
                    continue;
                }
                let mut a = member.clone();
                a.push(i);
                a.sort_unstable();
                next.insert(a);
            }
        }
        if next.is_empty() {
            break;
        }
        let next: Vec<Vec<usize>> = next.into_iter().collect();
        let kept = search.select(&next, &coverage, config, config.beam_width)?;
        let mut stoppers: Vec<&(Vec<usize>, ArmStats, f64)> =
            kept.iter().filter(|(_, _, lcb)| *lcb >= config.tau).collect();
        // Variants of one conjunction that differ only in a 2-D distance keep
        // the largest distance that reached the target.
        let shapes: Vec<Vec<Predicate>> = stoppers.iter().map(|(a, _, _)| shape(&search.predicates(a))).collect();
        let dists: Vec<i64> = stoppers.iter().map(|(a, _, _)| distance_key(&search.predicates(a))).collect();
        let n = stoppers.len();
        let keep: Vec<bool> = (0..n)
            .map(|i| !(0..n).any(|j| shapes[j] == shapes[i] && (dists[j], i) > (dists[i], j)))
            .collect();
        let mut keep = keep.into_iter();
        stoppers.retain(|_| keep.next().unwrap_or(false));
        if !stoppers.is_empty() {
            // Index order follows predicate order, so comparing index lists is lexicographic.
            stoppers.sort_by(|(a, _, _), (b, _, _)| {
                coverage
                    .coverage(b)
                    .total_cmp(&coverage.coverage(a))
                    .then(a.len().cmp(&b.len()))
                    .then(distance_key(&search.predicates(b)).cmp(&distance_key(&search.predicates(a))))
                    .then(a.cmp(b))
            });
            let (best, stats, lcb) = stoppers[0];
            log::debug!("anchor found at size {size} after {} candidates", search.arms.len());
            return Ok(Anchor {
                label: target,
                precision_lcb: *lcb,
                coverage: coverage.coverage(best),
                predicates: search.predicates(best),
                precision: stats.mean(),
                low_precision: false,
            });
        }
        beam = kept.into_iter().map(|(a, _, _)| a).collect();
    }

    log::warn!("no anchor reached precision {}; returning the empty anchor", config.tau);
    Ok(Anchor {
        label: target,
        precision_lcb: empty_lcb,
        coverage: 1.0,
        predicates: Vec::new(),
        precision: empty_stats.mean(),
        low_precision: true,
    })
}
