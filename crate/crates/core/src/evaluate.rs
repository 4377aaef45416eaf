//! Simulated-user evaluation.
//!
//! Every explanation is applied as a decision rule to a set of length-varying
//! perturbations of its input. Coverage is the fraction of samples on which
//! the rule makes a prediction; precision is the fraction of those predictions
//! that agree with the model.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{anchor_decide, explain_anchors, AnchorConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::lime::{explain_lime, lime_decide_with, LimeConfig, SpecSampler};
use crate::perturb::{sample_n, PerturbationSpec};
use crate::predicate::{enumerate_vocabulary, VocabConfig, VocabMode};
use crate::types::{labels_of, Concurrency, Decision, Explanation, Label, Model, SequenceInput};

/// Default number of evaluation samples per input.
pub const DEFAULT_EVAL_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "anchors")]
    Anchors,
    #[serde(rename = "anchors-t")]
    AnchorsT,
    #[serde(rename = "lime")]
    Lime,
    #[serde(rename = "lime-t")]
    LimeT,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Anchors, Method::AnchorsT, Method::Lime, Method::LimeT];

    pub fn name(self) -> &'static str {
        match self {
            Method::Anchors => "anchors",
            Method::AnchorsT => "anchors-t",
            Method::Lime => "lime",
            Method::LimeT => "lime-t",
        }
    }

    pub fn is_temporal(self) -> bool {
        matches!(self, Method::AnchorsT | Method::LimeT)
    }

    pub fn vocab_mode(self) -> VocabMode {
        if self.is_temporal() {
            VocabMode::Temporal
        } else {
            VocabMode::Classic
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown method {s:?}")))
    }
}

/// Settings shared by explanation and evaluation.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    /// Length-varying model used for evaluation and by the temporal methods.
    /// Classic methods explain under its fixed-length restriction.
    pub spec: PerturbationSpec,
    pub n_samples: usize,
    pub seed: u64,
    pub anchor: AnchorConfig,
    pub lime: LimeConfig,
    pub vocab: VocabConfig,
    /// Record wall-clock seconds in the report (makes it non-deterministic).
    pub timings: bool,
}

impl BenchConfig {
    pub fn new(spec: PerturbationSpec) -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            seed: spec.seed,
            spec,
            n_samples: DEFAULT_EVAL_SAMPLES,
            anchor: AnchorConfig::default(),
            lime: LimeConfig::default(),
            vocab: VocabConfig::default(),
            timings: false,
        }
    }

    /// Perturbation model a method explains under.
    pub fn explain_spec(&self, method: Method) -> PerturbationSpec {
        if method.is_temporal() {
            self.spec.clone()
        } else {
            self.spec.classic()
        }
    }
}

/// Explains `input` with `method`.
pub fn explain_with(
    method: Method,
    model: &dyn Model,
    input: &SequenceInput,
    config: &BenchConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Explanation> {
    let vocab = enumerate_vocabulary(input, method.vocab_mode(), &config.vocab)?;
    let spec = config.explain_spec(method);
    match method {
        Method::Anchors | Method::AnchorsT => {
            explain_anchors(model, input, &vocab, &spec, &config.anchor, rng).map(Explanation::Anchor)
        }
        Method::Lime | Method::LimeT => {
            let mut sampler = SpecSampler::new(&spec, rng);
            explain_lime(model, input, &vocab, &mut sampler, &config.lime).map(Explanation::Linear)
        }
    }
}

/// Applies an explanation to one input.
pub fn decide(expl: &Explanation, input: &SequenceInput, lime: &LimeConfig) -> Decision {
    match expl {
        Explanation::Anchor(a) => anchor_decide(a, input),
        Explanation::Linear(l) => lime_decide_with(l, input, lime.coverage_threshold, lime.intercept_in_decision),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub coverage: f64,
    /// `None` when nothing was covered.
    pub precision: Option<f64>,
    pub n_covered: usize,
    pub n_samples: usize,
}

/// Coverage and precision of `expl` on samples with known model labels.
pub fn evaluate_on(
    expl: &Explanation,
    samples: &[SequenceInput],
    labels: &[Label],
    lime: &LimeConfig,
) -> EvalOutcome {
    assert_eq!(samples.len(), labels.len(), "one label per sample");
    let mut covered = 0;
    let mut correct = 0;
    for (s, &truth) in samples.iter().zip(labels) {
        if let Decision::Covered(pred) = decide(expl, s, lime) {
            covered += 1;
            if pred == truth {
                correct += 1;
            }
        }
    }
    let n = samples.len();
    EvalOutcome {
        coverage: if n == 0 { 0.0 } else { covered as f64 / n as f64 },
        precision: (covered > 0).then(|| correct as f64 / covered as f64),
        n_covered: covered,
        n_samples: n,
    }
}

/// Draws `n` length-varying samples of `input` and evaluates `expl` on them.
pub fn evaluate_explanation<R: rand::Rng + ?Sized>(
    expl: &Explanation,
    model: &dyn Model,
    input: &SequenceInput,
    spec: &PerturbationSpec,
    n: usize,
    lime: &LimeConfig,
    rng: &mut R,
) -> Result<EvalOutcome> {
    let samples = sample_n(input, spec, n, rng);
    let labels = labels_of(model.task(), &model.predict_batch(&samples)?)?;
    Ok(evaluate_on(expl, &samples, &labels, lime))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub input_id: String,
    pub method: Method,
    pub coverage: Option<f64>,
    pub precision: Option<f64>,
    pub n_covered: usize,
    pub n_samples: usize,
    pub seconds: Option<f64>,
    pub explanation: Option<Explanation>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub mean_coverage: Option<f64>,
    /// Mean over inputs with at least one covered sample.
    pub mean_precision: Option<f64>,
    pub n_inputs: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub n_samples: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub spec: serde_json::Value,
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: Metadata,
    pub per_input: Vec<Row>,
    pub aggregates: Vec<Aggregate>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregates rows per method, in the order methods are listed.
pub fn aggregate(rows: &[Row], methods: &[Method]) -> Vec<Aggregate> {
    methods
        .iter()
        .map(|&m| {
            let rows: Vec<&Row> = rows.iter().filter(|r| r.method == m).collect();
            Aggregate {
                method: m,
                mean_coverage: mean(rows.iter().filter_map(|r| r.coverage)),
                mean_precision: mean(rows.iter().filter_map(|r| r.precision)),
                n_inputs: rows.len(),
                n_failed: rows.iter().filter(|r| r.error.is_some()).count(),
            }
        })
        .collect()
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn bench_input(index: usize, id: &str, input: &SequenceInput, model: &dyn Model, config: &BenchConfig) -> Vec<Row> {
    let failed = |method: Method, e: &Error| Row {
        input_id: id.to_string(),
        method,
        coverage: None,
        precision: None,
        n_covered: 0,
        n_samples: 0,
        seconds: None,
        explanation: None,
        error: Some(e.to_string()),
    };
    let base = 2 * index as u64;
    // One sample set per input, shared by every method.
    let samples = sample_n(input, &config.spec, config.n_samples, &mut rng_for(config.seed, base));
    let labels = match model
        .predict_batch(&samples)
        .map_err(Error::from)
        .and_then(|o| labels_of(model.task(), &o))
    {
        Ok(l) => l,
        Err(e) => {
            log::warn!("input {id}: {e}");
            return config.methods.iter().map(|&m| failed(m, &e)).collect();
        }
    };
    config
        .methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let mut rng = rng_for(config.seed, base + 1);
            let result = explain_with(method, model, input, config, &mut rng);
            let seconds = start.elapsed().as_secs_f64();
            log::info!("input {id} {method}: {seconds:.3}s");
            match result {
                Ok(expl) => {
                    let out = evaluate_on(&expl, &samples, &labels, &config.lime);
                    Row {
                        input_id: id.to_string(),
                        method,
                        coverage: Some(out.coverage),
                        precision: out.precision,
                        n_covered: out.n_covered,
                        n_samples: out.n_samples,
                        seconds: config.timings.then_some(seconds),
                        explanation: Some(expl),
                        error: None,
                    }
                }
                Err(e) => {
                    log::warn!("input {id} {method}: {e}");
                    failed(method, &e)
                }
            }
        })
        .collect()
}

/// Explains and evaluates every input with every configured method.
pub fn run_benchmark(dataset: &Dataset, model: &dyn Model, config: &BenchConfig) -> Result<EvalReport> {
    run_benchmark_until(dataset, model, config, &AtomicBool::new(false))
}

/// Like [`run_benchmark`], but inputs not started before `cancel` is set are
/// skipped and the report is flagged incomplete.
pub fn run_benchmark_until(
    dataset: &Dataset,
    model: &dyn Model,
    config: &BenchConfig,
    cancel: &AtomicBool,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput);
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }
    config.spec.validate()?;
    config.anchor.validate()?;
    config.lime.validate()?;
    let run = |(i, item): (usize, &crate::dataset::Item)| {
        if cancel.load(Ordering::Relaxed) {
            return None;
        }
        Some(bench_input(i, &item.id, &item.input, model, config))
    };
    let per_item: Vec<Option<Vec<Row>>> = match model.concurrency() {
        Concurrency::Concurrent => dataset.items.par_iter().enumerate().map(run).collect(),
        Concurrency::Serial => dataset.items.iter().enumerate().map(run).collect(),
    };
    let incomplete = per_item.iter().any(Option::is_none);
    let per_input: Vec<Row> = per_item.into_iter().flatten().flatten().collect();
    let mut methods = config.methods.clone();
    methods.dedup();
    Ok(EvalReport {
        metadata: Metadata {
            n_samples: config.n_samples,
            seed: config.seed,
            methods: methods.clone(),
            spec: serde_json::to_value(&config.spec).map_err(|e| Error::Parse(e.to_string()))?,
            incomplete,
        },
        aggregates: aggregate(&per_input, &methods),
        per_input,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "input_id,method,coverage,precision,n_covered,n_samples,seconds";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.per_input {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.input_id,
                r.method,
                opt(r.coverage),
                opt(r.precision),
                r.n_covered,
                r.n_samples,
                opt(r.seconds)
            )?;
        }
        Ok(())
    }

    /// Pretty JSON with keys in sorted order, so parsing and re-serializing
    /// reproduces the same bytes.
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    /// Aligned per-method summary.
    pub fn summary(&self) -> String {
        let mut out = format!("{:<10} {:>9} {:>9} {:>6}\n", "method", "coverage", "precision", "failed");
        for a in &self.aggregates {
            let pct = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{:.1}%", 100.0 * v));
            out.push_str(&format!(
                "{:<10} {:>9} {:>9} {:>6}\n",
                a.method.name(),
                pct(a.mean_coverage),
                pct(a.mean_precision),
                a.n_failed
            ));
        }
        if self.metadata.incomplete {
            out.push_str("(incomplete: interrupted)\n");
        }
        out
    }
}

/// Serializes through `serde_json::Value`, whose maps keep keys sorted.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Parse(e.to_string()))?;
    serde_json::to_string_pretty(&v).map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Item;
    use crate::error::ModelError;
    use crate::predicate::Predicate;
    use crate::types::{Anchor, Task};

    struct Constant;

    impl Model for Constant {
        fn predict(&self, _: &SequenceInput) -> Result<f64, ModelError> {
            Ok(1.0)
        }
        fn task(&self) -> Task {
            Task::BinaryClassification { threshold: 0.5 }
        }
    }

    fn anchor(preds: Vec<Predicate>) -> Explanation {
        Explanation::Anchor(Anchor {
            label: Label::Positive,
            precision_lcb: 1.0,
            coverage: 1.0,
            predicates: preds,
            precision: 1.0,
            low_precision: false,
        })
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("anchors*".parse::<Method>().is_err());
    }

    #[test]
    fn empty_anchor_constant_model() {
        let input = SequenceInput::tokens(["a", "b", "c"]);
        let spec = PerturbationSpec::text(crate::perturb::Lexicon::builtin());
        let out = evaluate_explanation(
            &anchor(vec![]),
            &Constant,
            &input,
            &spec,
            500,
            &LimeConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(out.coverage, 1.0);
        assert_eq!(out.precision, Some(1.0));
    }

    #[test]
    fn positional_anchor_off_length_is_uncovered() {
        let expl = anchor(vec![Predicate::positional_token(4, "d")]);
        let samples: Vec<SequenceInput> = (0..3).map(|n| SequenceInput::tokens(vec!["d"; n])).collect();
        let labels = vec![Label::Positive; 3];
        let out = evaluate_on(&expl, &samples, &labels, &LimeConfig::default());
        assert_eq!(out.coverage, 0.0);
        assert_eq!(out.precision, None);
    }

    #[test]
    fn over_covering_cannot_raise_precision() {
        // A correct rule covers only positives; widening it to everything
        // admits negatives.
        let samples = vec![
            SequenceInput::tokens(["good"]),
            SequenceInput::tokens(["good", "film"]),
            SequenceInput::tokens(["bad"]),
        ];
        let labels = vec![Label::Positive, Label::Positive, Label::Negative];
        let tight = evaluate_on(&anchor(vec![Predicate::t1d_token("good")]), &samples, &labels, &LimeConfig::default());
        let wide = evaluate_on(&anchor(vec![]), &samples, &labels, &LimeConfig::default());
        assert!(wide.coverage >= tight.coverage);
        assert!(wide.precision.unwrap() <= tight.precision.unwrap());
    }

    #[test]
    fn single_input_all_methods() {
        let ds = Dataset {
            items: vec![Item {
                id: "0".into(),
                label: None,
                input: SequenceInput::tokens(["a", "b", "c"]),
            }],
        };
        let mut cfg = BenchConfig::new(PerturbationSpec::text(crate::perturb::Lexicon::builtin()));
        cfg.n_samples = 200;
        cfg.anchor.coverage_samples = 200;
        cfg.spec.sample_budget = 200;
        let report = run_benchmark(&ds, &Constant, &cfg).unwrap();
        assert_eq!(report.per_input.len(), 4);
        for r in &report.per_input {
            // A constant model leaves every LIME weight at zero, so only the
            // intercept can make the linear rule predict.
            let expected = if matches!(r.method, Method::Lime | Method::LimeT) { 0.0 } else { 1.0 };
            assert_eq!(r.coverage, Some(expected), "{r:?}");
        }
        cfg.lime.intercept_in_decision = true;
        let report = run_benchmark(&ds, &Constant, &cfg).unwrap();
        assert!(report.per_input.iter().all(|r| r.coverage == Some(1.0)));
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
    }

    #[test]
    fn aggregates_are_means() {
        let row = |m, c, p| Row {
            input_id: "x".into(),
            method: m,
            coverage: Some(c),
            precision: p,
            n_covered: 0,
            n_samples: 0,
            seconds: None,
            explanation: None,
            error: None,
        };
        let rows = vec![
            row(Method::Lime, 0.2, Some(1.0)),
            row(Method::Lime, 0.4, None),
            row(Method::Lime, 0.6, Some(0.5)),
        ];
        let agg = aggregate(&rows, &[Method::Lime]);
        assert!((agg[0].mean_coverage.unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(agg[0].mean_precision, Some(0.75));
    }

    #[test]
    fn canonical_json_round_trips() {
        let agg = Aggregate {
            method: Method::AnchorsT,
            mean_coverage: Some(0.1234567891234),
            mean_precision: None,
            n_inputs: 3,
            n_failed: 0,
        };
        let text = to_canonical_json(&agg).unwrap();
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), text);
    }
}
