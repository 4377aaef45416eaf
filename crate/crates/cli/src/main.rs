use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use tempex::dataset::{anomaly_dataset, synthetic_spike_drop, Dataset};
use tempex::evaluate::{explain_with, run_benchmark_until, to_canonical_json, BenchConfig, Method};
use tempex::lime::{SERIES_THRESHOLD, TEXT_THRESHOLD};
use tempex::models::{explanation_window, ExternalModel, ToyAnomalyModel, ToySentimentModel, DEFAULT_WINDOW};
use tempex::perturb::{sample_traced, BaseModel, Lexicon, PerturbationSpec};
use tempex::text::tokenize;
use tempex::{Error, Explanation, Model, SequenceInput, Task};

const EXIT_USAGE: u8 = 2;
const EXIT_MODEL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "tempex", version, about = "Temporal local explanations for sequence models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Explain one input.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "anchors-t")]
        method: Method,
        /// Input text, comma-separated values, a file path with --file, or `-` for stdin.
        input: Option<String>,
        /// Read the input from this file.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Explain and evaluate every input of a dataset.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of anchors,anchors-t,lime,lime-t.
        #[arg(long, value_delimiter = ',', default_value = "anchors,anchors-t,lime,lime-t")]
        methods: Vec<Method>,
        /// `label<TAB>sentence` text or `label,v1,v2,...` CSV. Defaults to the bundled
        /// sentences (text models) or synthetic spike-drop series (anomaly model).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Evaluation samples per input.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Record per-row wall-clock seconds (output is then not reproducible).
        #[arg(long)]
        timings: bool,
    },
    /// Print perturbations of an input.
    Perturb {
        #[command(flatten)]
        common: Common,
        input: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
        /// Number of samples to print.
        #[arg(long, default_value_t = 10)]
        samples: usize,
    },
    /// Probe a model with fixture inputs and validate its responses.
    CheckModel {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputKind {
    Tokens,
    Values,
}

#[derive(Args, Debug)]
struct Common {
    /// toy-sentiment, toy-anomaly, or external:<command>
    #[arg(long, default_value = "toy-sentiment")]
    model: String,
    /// Input kind expected by an external model.
    #[arg(long, value_enum, default_value = "tokens")]
    input_kind: InputKind,
    /// Decision threshold of an external classifier.
    #[arg(long, default_value_t = 0.0)]
    model_threshold: f64,
    /// Seconds to wait for an external model's response.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Maximum swap distance.
    #[arg(long)]
    pi: Option<usize>,
    #[arg(long)]
    delete_prob: Option<f64>,
    #[arg(long)]
    max_deletions: Option<usize>,
    #[arg(long)]
    swap_prob: Option<f64>,
    #[arg(long)]
    replace_prob: Option<f64>,
    /// Samples drawn by the explainers (LIME fit size).
    #[arg(long)]
    budget: Option<usize>,
    /// Substitution lexicon (`word<TAB>alt,alt`); defaults to the bundled one.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    kernel_width: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
    /// LIME coverage threshold (default 0.1 for text, 0.05 for series).
    #[arg(long)]
    threshold: Option<f64>,
    /// Add the LIME intercept to the value the decision rule thresholds.
    #[arg(long)]
    lime_intercept: bool,
    /// Unconditional samples used to estimate anchor coverage.
    #[arg(long)]
    coverage_samples: Option<usize>,
    #[arg(long, value_enum, default_value = "text")]
    output: Output,
}

enum ModelChoice {
    Sentiment(ToySentimentModel),
    Anomaly(ToyAnomalyModel),
    External(ExternalModel, InputKind),
}

impl ModelChoice {
    fn model(&self) -> &dyn Model {
        match self {
            ModelChoice::Sentiment(m) => m,
            ModelChoice::Anomaly(m) => m,
            ModelChoice::External(m, _) => m,
        }
    }

    fn takes_values(&self) -> bool {
        match self {
            ModelChoice::Sentiment(_) => false,
            ModelChoice::Anomaly(_) => true,
            ModelChoice::External(_, kind) => *kind == InputKind::Values,
        }
    }
}

/// Failure with the process exit code it maps to.
struct Failure(u8, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Model(_)) { EXIT_MODEL } else { EXIT_USAGE };
        Failure(code, e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure(EXIT_USAGE, e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure(EXIT_USAGE, msg.into())
}

impl Common {
    fn load_model(&self) -> Result<ModelChoice, Failure> {
        match self.model.as_str() {
            "toy-sentiment" => Ok(ModelChoice::Sentiment(ToySentimentModel::default())),
            "toy-anomaly" => Ok(ModelChoice::Anomaly(ToyAnomalyModel::default())),
            other => {
                let cmd = other
                    .strip_prefix("external:")
                    .ok_or_else(|| usage(format!("unknown model {other:?}")))?;
                let task = Task::BinaryClassification {
                    threshold: self.model_threshold,
                };
                let model = ExternalModel::spawn(cmd, task)
                    .map_err(|e| Failure(EXIT_MODEL, e.to_string()))?
                    .with_timeout(Duration::from_secs(self.timeout));
                Ok(ModelChoice::External(model, self.input_kind))
            }
        }
    }

    fn spec(&self, values: bool) -> Result<PerturbationSpec, Failure> {
        let mut spec = if values {
            PerturbationSpec::series()
        } else {
            let lexicon = match &self.lexicon {
                Some(path) => Lexicon::load(path)?,
                None => Lexicon::builtin(),
            };
            PerturbationSpec::text(lexicon)
        };
        spec.seed = self.seed;
        if let Some(pi) = self.pi {
            spec.pi = pi;
        }
        if let Some(p) = self.delete_prob {
            spec.delete_prob = p;
        }
        if self.max_deletions.is_some() {
            spec.max_deletions = self.max_deletions;
        }
        if let Some(p) = self.swap_prob {
            spec.swap_prob = p;
        }
        if let Some(b) = self.budget {
            spec.sample_budget = b;
        }
        if let Some(p) = self.replace_prob {
            match &mut spec.base {
                BaseModel::TextSubstitution { replace_prob, .. } => *replace_prob = p,
                BaseModel::GaussianJitter { .. } => {
                    return Err(usage("--replace-prob applies to text models only"));
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    fn bench_config(&self, values: bool) -> Result<BenchConfig, Failure> {
        let mut cfg = BenchConfig::new(self.spec(values)?);
        cfg.seed = self.seed;
        if let Some(t) = self.tau {
            cfg.anchor.tau = t;
        }
        if let Some(d) = self.delta {
            cfg.anchor.delta = d;
        }
        if let Some(n) = self.coverage_samples {
            cfg.anchor.coverage_samples = n;
        }
        cfg.lime.kernel_width = self.kernel_width;
        if let Some(r) = self.ridge {
            cfg.lime.ridge = r;
        }
        cfg.lime.coverage_threshold = self
            .threshold
            .unwrap_or(if values { SERIES_THRESHOLD } else { TEXT_THRESHOLD });
        cfg.lime.intercept_in_decision = self.lime_intercept;
        cfg.anchor.validate()?;
        cfg.lime.validate()?;
        Ok(cfg)
    }
}

fn read_input(input: &Option<String>, file: &Option<PathBuf>) -> Result<String, Failure> {
    match (input.as_deref(), file) {
        (Some(_), Some(_)) => Err(usage("give either an input or --file, not both")),
        (_, Some(path)) => Ok(std::fs::read_to_string(path)?),
        (Some("-"), None) | (None, None) => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            Ok(s)
        }
        (Some(text), None) => Ok(text.to_string()),
    }
}

fn parse_input(raw: &str, values: bool) -> Result<SequenceInput, Failure> {
    let input = if values {
        let parsed: Result<Vec<f64>, _> = raw
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse::<f64>)
            .collect();
        SequenceInput::values(parsed.map_err(|e| usage(format!("bad value: {e}")))?)
    } else {
        tokenize(raw)
    };
    if input.is_empty() {
        return Err(usage("input is empty"));
    }
    Ok(input)
}

fn render_text(expl: &Explanation) -> String {
    match expl {
        Explanation::Anchor(a) => {
            let body = if a.predicates.is_empty() {
                "true".to_string()
            } else {
                a.predicates.iter().map(ToString::to_string).collect::<Vec<_>>().join(" \u{2227} ")
            };
            let mut out = format!("{body} \u{21d2} {}\n", a.label);
            out.push_str(&format!(
                "precision {:.3} (lower bound {:.3}), coverage {:.3}\n",
                a.precision, a.precision_lcb, a.coverage
            ));
            if a.low_precision {
                out.push_str("warning: no anchor reached the precision target\n");
            }
            out
        }
        Explanation::Linear(l) => {
            let mut out = format!("intercept {:+.4}\n", l.intercept);
            for t in &l.terms {
                out.push_str(&format!("{:+.4}  {}\n", t.weight, t.predicate));
            }
            if l.degenerate {
                out.push_str("warning: every sample featurized identically\n");
            }
            out
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_csv(expl: &Explanation) -> String {
    let mut out = String::from("term,weight\n");
    match expl {
        Explanation::Anchor(a) => {
            for p in &a.predicates {
                out.push_str(&format!("{},\n", csv_field(&p.to_string())));
            }
        }
        Explanation::Linear(l) => {
            out.push_str(&format!("intercept,{}\n", l.intercept));
            for t in &l.terms {
                out.push_str(&format!("{},{}\n", csv_field(&t.predicate.to_string()), t.weight));
            }
        }
    }
    out
}

fn cmd_explain(common: &Common, method: Method, input: &Option<String>, file: &Option<PathBuf>) -> Result<String, Failure> {
    let choice = common.load_model()?;
    let values = choice.takes_values();
    let mut input = parse_input(&read_input(input, file)?, values)?;
    if let (ModelChoice::Anomaly(m), SequenceInput::Values(v)) = (&choice, &input) {
        if v.len() > DEFAULT_WINDOW {
            let end = m.detection_point(v).unwrap_or(v.len());
            input = explanation_window(v, end, DEFAULT_WINDOW);
        }
    }
    let cfg = common.bench_config(values)?;
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    let expl = explain_with(method, choice.model(), &input, &cfg, &mut rng)?;
    Ok(match common.output {
        Output::Text => render_text(&expl),
        Output::Json => to_canonical_json(&expl)? + "\n",
        Output::Csv => render_csv(&expl),
    })
}

fn cmd_bench(
    common: &Common,
    methods: &[Method],
    dataset: &Option<PathBuf>,
    samples: usize,
    timings: bool,
    cancel: &AtomicBool,
) -> Result<String, Failure> {
    let choice = common.load_model()?;
    let values = choice.takes_values();
    let data = match (dataset, &choice) {
        (Some(path), _) => Dataset::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        (None, ModelChoice::Anomaly(m)) => {
            anomaly_dataset(m, &synthetic_spike_drop(m, 5, 60, common.seed), DEFAULT_WINDOW)
        }
        (None, _) if values => return Err(usage("--dataset is required for series models")),
        (None, _) => Dataset::builtin_sentences(),
    };
    let data = match &choice {
        // Only flagged series are explained, on the window before detection.
        ModelChoice::Anomaly(m) if dataset.is_some() => {
            let series: Vec<Vec<f64>> = data
                .items
                .iter()
                .filter_map(|it| match &it.input {
                    SequenceInput::Values(v) => Some(v.clone()),
                    SequenceInput::Tokens(_) => None,
                })
                .collect();
            anomaly_dataset(m, &series, DEFAULT_WINDOW)
        }
        _ => data,
    };
    if data.is_empty() {
        return Err(usage("dataset has no inputs to explain"));
    }
    let mut cfg = common.bench_config(values)?;
    let mut methods = methods.to_vec();
    let mut seen = Vec::new();
    methods.retain(|m| {
        let fresh = !seen.contains(m);
        seen.push(*m);
        fresh
    });
    cfg.methods = methods;
    cfg.n_samples = samples;
    cfg.timings = timings;
    let report = run_benchmark_until(&data, choice.model(), &cfg, cancel)?;
    for row in report.per_input.iter().filter(|r| r.error.is_some()) {
        let err = row.error.as_deref().unwrap_or_default();
        if err.contains("model") {
            log::error!("input {} {}: {err}", row.input_id, row.method);
        }
    }
    let out = match common.output {
        Output::Text => report.summary(),
        Output::Json => report.to_json()? + "\n",
        Output::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            String::from_utf8(buf).expect("csv is utf-8")
        }
    };
    Ok(out)
}

fn cmd_perturb(common: &Common, input: &Option<String>, file: &Option<PathBuf>, k: usize) -> Result<String, Failure> {
    let values = match common.model.as_str() {
        "toy-anomaly" => true,
        "toy-sentiment" => false,
        _ => common.input_kind == InputKind::Values,
    };
    let input = parse_input(&read_input(input, file)?, values)?;
    let spec = common.spec(values)?;
    let mut rng = spec.rng();
    let draws: Vec<_> = (0..k).map(|_| sample_traced(&input, &spec, &mut rng)).collect();
    let swap_text = |s: Option<(usize, usize)>| s.map_or_else(|| "none".to_string(), |(m, n)| format!("swap({m},{n})"));
    let deleted_text = |d: &[usize]| {
        if d.is_empty() {
            "none".to_string()
        } else {
            d.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
        }
    };
    Ok(match common.output {
        Output::Text => draws
            .iter()
            .map(|p| format!("{}\t(deleted: {}, {})\n", p.sample, deleted_text(&p.deleted), swap_text(p.swap)))
            .collect(),
        Output::Json => {
            let list: Vec<_> = draws
                .iter()
                .map(|p| json!({"sample": p.sample, "deleted": p.deleted, "swap": p.swap}))
                .collect();
            to_canonical_json(&list)? + "\n"
        }
        Output::Csv => {
            let mut out = String::from("sample,deleted,swap\n");
            for p in &draws {
                out.push_str(&format!(
                    "{},{},{}\n",
                    csv_field(&p.sample.to_string()),
                    deleted_text(&p.deleted),
                    swap_text(p.swap)
                ));
            }
            out
        }
    })
}

fn cmd_check_model(common: &Common) -> Result<String, Failure> {
    let choice = common.load_model()?;
    let fixtures: Vec<SequenceInput> = if choice.takes_values() {
        vec![
            SequenceInput::values(vec![0.0, 0.1, -0.2, 0.3]),
            SequenceInput::values(vec![0.0, 6.0, 0.2, -6.0, 0.1]),
            SequenceInput::values(vec![1.5]),
        ]
    } else {
        vec![
            tokenize("He never fails in any exam ."),
            tokenize("The weather is not good ."),
            tokenize("ok"),
        ]
    };
    let model = choice.model();
    let batch = model.predict_batch(&fixtures).map_err(|e| Failure(EXIT_MODEL, e.to_string()))?;
    let mut out = String::new();
    for (input, &y) in fixtures.iter().zip(&batch) {
        let single = model.predict(input).map_err(|e| Failure(EXIT_MODEL, e.to_string()))?;
        if single.to_bits() != y.to_bits() {
            return Err(Failure(
                EXIT_MODEL,
                format!("batched and single predictions differ on {input:?}: {y} vs {single}"),
            ));
        }
        let label = model.task().label(y).map_or_else(|| "-".to_string(), |l| l.to_string());
        out.push_str(&format!("{y}\t{label}\t{input}\n"));
    }
    out.push_str(&format!("ok: {} fixtures\n", fixtures.len()));
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cancel = Arc::new(AtomicBool::new(false));
    let result = match &cli.command {
        Command::Explain {
            common,
            method,
            input,
            file,
        } => cmd_explain(common, *method, input, file),
        Command::Bench {
            common,
            methods,
            dataset,
            samples,
            report,
            timings,
        } => {
            let flag = Arc::clone(&cancel);
            if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed)) {
                log::warn!("cannot install interrupt handler: {e}");
            }
            cmd_bench(common, methods, dataset, *samples, *timings, &cancel).and_then(|text| match report {
                Some(path) => {
                    std::fs::write(path, text)?;
                    Ok(String::new())
                }
                None => Ok(text),
            })
        }
        Command::Perturb {
            common,
            input,
            file,
            samples,
        } => cmd_perturb(common, input, file, *samples),
        Command::CheckModel { common } => cmd_check_model(common),
    };
    match result {
        Ok(text) => {
            let mut stdout = io::stdout().lock();
            if stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
