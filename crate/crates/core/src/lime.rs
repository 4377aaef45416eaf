//! Linear surrogate explanations over predicate indicators.
//!
//! Samples from a perturbation model are featurized against the vocabulary,
//! weighted by an exponential kernel on their normalized Hamming distance to
//! the explained input, and fit with weighted ridge regression after greedy
//! forward selection of at most `sparsity` predicates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::{sample, PerturbationSpec};
use crate::predicate::{featurize_unchecked, Vocabulary};
use crate::types::{Decision, Label, LinearExplanation, Model, SequenceInput, Term};

/// Coverage threshold used for text models.
pub const TEXT_THRESHOLD: f64 = 0.1;
/// Coverage threshold used for time-series models.
pub const SERIES_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    /// Kernel width; `None` means `0.75 * sqrt(|vocab|)`.
    pub kernel_width: Option<f64>,
    pub ridge: f64,
    pub sparsity: usize,
    pub coverage_threshold: f64,
    /// Add the intercept to the value the decision rule thresholds. Off by
    /// default: the rule reads the explanation as `sum_j w_j p_j`.
    #[serde(default)]
    pub intercept_in_decision: bool,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            kernel_width: None,
            ridge: 1.0,
            sparsity: 6,
            coverage_threshold: TEXT_THRESHOLD,
            intercept_in_decision: false,
        }
    }
}

impl LimeConfig {
    pub fn series() -> Self {
        Self {
            coverage_threshold: SERIES_THRESHOLD,
            ..Self::default()
        }
    }

    pub fn width_for(&self, vocab_len: usize) -> f64 {
        self.kernel_width.unwrap_or(0.75 * (vocab_len as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.kernel_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!("kernel width must be > 0, got {w}")));
            }
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidConfig(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if self.sparsity == 0 {
            return Err(Error::InvalidConfig("sparsity must be at least 1".into()));
        }
        Ok(())
    }
}

/// Source of perturbed neighbours for the surrogate fit.
pub trait Sampler {
    fn draw(&mut self, input: &SequenceInput) -> Result<Vec<SequenceInput>>;
}

/// Draws `spec.sample_budget` samples from a perturbation model.
pub struct SpecSampler<'a, R> {
    pub spec: &'a PerturbationSpec,
    pub rng: R,
}

impl<'a, R: Rng> SpecSampler<'a, R> {
    pub fn new(spec: &'a PerturbationSpec, rng: R) -> Self {
        Self { spec, rng }
    }
}

impl<R: Rng> Sampler for SpecSampler<'_, R> {
    fn draw(&mut self, input: &SequenceInput) -> Result<Vec<SequenceInput>> {
        Ok(sample(input, self.spec, &mut self.rng))
    }
}

/// Replays a fixed list of samples.
pub struct FixedSampler(pub Vec<SequenceInput>);

impl Sampler for FixedSampler {
    fn draw(&mut self, _: &SequenceInput) -> Result<Vec<SequenceInput>> {
        Ok(self.0.clone())
    }
}

/// Kernel weight of a sample at normalized Hamming distance `distance`.
pub fn kernel_weight(distance: f64, width: f64) -> f64 {
    (-(distance * distance) / (width * width)).exp()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Weighted second moments of a centred design, shared by every subset fit.
struct Moments {
    x_mean: Vec<f64>,
    y_mean: f64,
    gram: Vec<Vec<f64>>,
    cross: Vec<f64>,
    y_ss: f64,
}

impl Moments {
    fn new(rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> Self {
        let p = rows.first().map_or(0, Vec::len);
        let total: f64 = w.iter().sum();
        let mut x_mean = vec![0.0; p];
        let mut y_mean = 0.0;
        for ((row, &yi), &wi) in rows.iter().zip(y).zip(w) {
            for (m, &x) in x_mean.iter_mut().zip(row) {
                *m += wi * x;
            }
            y_mean += wi * yi;
        }
        x_mean.iter_mut().for_each(|m| *m /= total);
        y_mean /= total;

        let mut gram = vec![vec![0.0; p]; p];
        let mut cross = vec![0.0; p];
        let mut y_ss = 0.0;
        let mut centred = vec![0.0; p];
        for ((row, &yi), &wi) in rows.iter().zip(y).zip(w) {
            for (c, (&x, &m)) in centred.iter_mut().zip(row.iter().zip(&x_mean)) {
                *c = x - m;
            }
            let yc = yi - y_mean;
            y_ss += wi * yc * yc;
            for a in 0..p {
                if centred[a] == 0.0 {
                    continue;
                }
                let wa = wi * centred[a];
                cross[a] += wa * yc;
                for b in a..p {
                    gram[a][b] += wa * centred[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[a][b] = gram[b][a];
            }
        }
        Self {
            x_mean,
            y_mean,
            gram,
            cross,
            y_ss,
        }
    }

    /// Ridge fit restricted to `cols`: `(intercept, coefficients, weighted R^2)`.
    fn fit(&self, cols: &[usize], ridge: f64) -> Option<(f64, Vec<f64>, f64)> {
        let a: Vec<Vec<f64>> = cols
            .iter()
            .map(|&i| {
                cols.iter()
                    .map(|&j| self.gram[i][j] + if i == j { ridge } else { 0.0 })
                    .collect()
            })
            .collect();
        let b: Vec<f64> = cols.iter().map(|&i| self.cross[i]).collect();
        let beta = if cols.is_empty() { Vec::new() } else { solve(a, b.clone())? };
        let intercept = self.y_mean - cols.iter().zip(&beta).map(|(&i, c)| self.x_mean[i] * c).sum::<f64>();
        // Residual sum of squares of the centred fit, expanded from the moments.
        let mut quad = 0.0;
        for (ia, &i) in cols.iter().enumerate() {
            for (ib, &j) in cols.iter().enumerate() {
                quad += beta[ia] * self.gram[i][j] * beta[ib];
            }
        }
        let explained: f64 = beta.iter().zip(&b).map(|(c, bi)| c * bi).sum();
        let rss = self.y_ss - 2.0 * explained + quad;
        let r2 = if self.y_ss > 0.0 { 1.0 - rss / self.y_ss } else { 0.0 };
        Some((intercept, beta, r2))
    }
}

/// Weighted ridge regression with an unpenalized intercept.
///
/// Returns `(intercept, coefficients)` or `None` if the system is singular.
pub fn weighted_ridge(rows: &[Vec<f64>], y: &[f64], weights: &[f64], ridge: f64) -> Option<(f64, Vec<f64>)> {
    let p = rows.first().map_or(0, Vec::len);
    let cols: Vec<usize> = (0..p).collect();
    Moments::new(rows, y, weights).fit(&cols, ridge).map(|(b0, beta, _)| (b0, beta))
}

/// Greedy forward selection by weighted R^2 gain.
fn forward_select(m: &Moments, p: usize, k: usize, ridge: f64) -> Vec<usize> {
    if p <= k {
        return (0..p).collect();
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for cand in (0..p).filter(|c| !chosen.contains(c)) {
            let mut cols = chosen.clone();
            cols.push(cand);
            let Some((_, _, r2)) = m.fit(&cols, ridge) else { continue };
            if best.is_none_or(|(_, s)| r2 > s + 1e-12) {
                best = Some((cand, r2));
            }
        }
        match best {
            Some((c, _)) => chosen.push(c),
            None => break,
        }
    }
    chosen
}

/// Fits a sparse linear surrogate of `model` around `input`.
pub fn explain_lime(
    model: &dyn Model,
    input: &SequenceInput,
    vocab: &Vocabulary,
    sampler: &mut dyn Sampler,
    config: &LimeConfig,
) -> Result<LinearExplanation> {
    config.validate()?;
    if vocab.is_empty() {
        return Err(Error::VocabularyEmpty);
    }
    for p in vocab.iter() {
        p.eval(input)?;
    }
    let mut samples = vec![input.clone()];
    samples.extend(sampler.draw(input)?);

    let task = model.task();
    let y: Vec<f64> = model.predict_batch(&samples)?.into_iter().map(|o| task.margin(o)).collect();
    let bits: Vec<Vec<bool>> = samples.iter().map(|s| featurize_unchecked(s, &vocab.predicates)).collect();
    let p = vocab.len();
    let width = config.width_for(p);
    let origin = &bits[0];
    let weights: Vec<f64> = bits
        .iter()
        .map(|row| {
            let diff = row.iter().zip(origin).filter(|(a, b)| a != b).count();
            kernel_weight(diff as f64 / p as f64, width)
        })
        .collect();

    let rows: Vec<Vec<f64>> = bits
        .iter()
        .map(|r| r.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
        .collect();
    let moments = Moments::new(&rows, &y, &weights);

    if bits.iter().all(|r| r == origin) {
        log::warn!("all samples featurize identically; returning an intercept-only surrogate");
        return Ok(LinearExplanation {
            intercept: moments.y_mean,
            terms: Vec::new(),
            degenerate: true,
        });
    }

    let chosen = forward_select(&moments, p, config.sparsity, config.ridge);
    let (intercept, beta, _) = moments
        .fit(&chosen, config.ridge)
        .ok_or_else(|| Error::InvalidConfig("singular surrogate design; use ridge > 0".into()))?;
    let mut terms: Vec<(usize, Term)> = chosen
        .iter()
        .zip(beta)
        .map(|(&i, weight)| {
            (
                i,
                Term {
                    predicate: vocab.predicates[i].clone(),
                    weight,
                },
            )
        })
        .collect();
    terms.sort_by(|(ia, a), (ib, b)| b.weight.abs().total_cmp(&a.weight.abs()).then(ia.cmp(ib)));
    Ok(LinearExplanation {
        intercept,
        terms: terms.into_iter().map(|(_, t)| t).collect(),
        degenerate: false,
    })
}

/// Weighted sum of the terms that hold on `input`, plus the intercept if asked.
pub fn linear_value(expl: &LinearExplanation, input: &SequenceInput, with_intercept: bool) -> f64 {
    let offset = if with_intercept { expl.intercept } else { 0.0 };
    offset
        + expl
            .terms
            .iter()
            .filter(|t| t.predicate.eval_unchecked(input))
            .map(|t| t.weight)
            .sum::<f64>()
}

/// Applies the surrogate as a decision rule: it predicts the sign of
/// `sum_j w_j p_j(input)` when that value is strictly further than
/// `threshold` from zero.
pub fn lime_decide(expl: &LinearExplanation, input: &SequenceInput, threshold: f64) -> Decision {
    decide_value(linear_value(expl, input, false), threshold)
}

/// [`lime_decide`] with the intercept optionally added to the value.
pub fn lime_decide_with(
    expl: &LinearExplanation,
    input: &SequenceInput,
    threshold: f64,
    with_intercept: bool,
) -> Decision {
    decide_value(linear_value(expl, input, with_intercept), threshold)
}

pub(crate) fn decide_value(value: f64, threshold: f64) -> Decision {
    if value.abs() > threshold {
        Decision::Covered(if value > 0.0 { Label::Positive } else { Label::Negative })
    } else {
        Decision::NotCovered
    }
}
