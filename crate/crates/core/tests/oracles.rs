use std::collections::HashMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tempex::bandit::{kl_lower_bound, kl_upper_bound};
use tempex::lime::{kernel_weight, lime_decide, weighted_ridge};
use tempex::models::{ToyAnomalyModel, ToySentimentModel};
use tempex::predicate::{enumerate_vocabulary, featurize, VocabConfig, VocabMode};
use tempex::perturb::{sample_traced, BaseModel};
use tempex::text::tokenize;
use tempex::types::label;
use tempex::{
    estimate_precision, Bound, Decision, Feature, Label, Lexicon, LinearExplanation, Model, Op, PerturbationSpec,
    Predicate, SequenceInput, Term,
};

const SMALL_LEXICON: &str = "good\tbad,fine\nnot\tvery\nfilm\tplot\nis\twas\n*\tUNK\n";
const EXAM_LEXICON: &str = "he\tshe\nnever\talways,often\nfails\tflunks,wins\nin\tat\nany\tevery\nexam\ttest\n*\tUNK\n";

/// Alternatives as the lexicon file describes them: own entry, then `*`.
fn alternatives(lexicon: &str, word: &str) -> Vec<String> {
    let mut own = Vec::new();
    let mut wild = Vec::new();
    for line in lexicon.lines() {
        let (w, alts) = line.split_once('\t').unwrap();
        let alts = alts.split(',').map(str::to_string);
        if w == word {
            own.extend(alts);
        } else if w == "*" {
            wild.extend(alts);
        }
    }
    let mut out: Vec<String> = Vec::new();
    for a in own.into_iter().chain(wild) {
        if a != word && !out.contains(&a) {
            out.push(a);
        }
    }
    out
}

/// Exact distribution over perturbed token sequences.
fn exact(input: &[&str], lexicon: &str, spec: &PerturbationSpec, replace_prob: f64) -> HashMap<Vec<String>, f64> {
    let n = input.len();
    let max = spec.max_deletions_for(n);
    assert_eq!(max, 1, "enumeration below handles at most one deletion");
    let mut prep: Vec<(Vec<String>, f64)> = Vec::new();
    let mut kept_sets = vec![(input.iter().map(|s| s.to_string()).collect::<Vec<_>>(), 1.0 - spec.delete_prob)];
    for i in 0..n {
        let kept = input.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, s)| s.to_string()).collect();
        kept_sets.push((kept, spec.delete_prob / n as f64));
    }
    for (kept, p) in kept_sets {
        let pairs: Vec<(usize, usize)> = (0..kept.len())
            .flat_map(|m| (m + 1..kept.len().min(m + spec.pi + 1)).map(move |k| (m, k)))
            .collect();
        if pairs.is_empty() {
            prep.push((kept, p));
            continue;
        }
        prep.push((kept.clone(), p * (1.0 - spec.swap_prob)));
        for (m, k) in &pairs {
            let mut s = kept.clone();
            s.swap(*m, *k);
            prep.push((s, p * spec.swap_prob / pairs.len() as f64));
        }
    }
    let mut out: HashMap<Vec<String>, f64> = HashMap::new();
    for (seq, p) in prep {
        let mut partial: Vec<(Vec<String>, f64)> = vec![(Vec::new(), p)];
        for tok in &seq {
            let alts = alternatives(lexicon, tok);
            let mut choices = vec![(tok.clone(), if alts.is_empty() { 1.0 } else { 1.0 - replace_prob })];
            choices.extend(alts.iter().map(|a| (a.clone(), replace_prob / alts.len() as f64)));
            partial = partial
                .into_iter()
                .flat_map(|(s, q)| {
                    choices.iter().map(move |(c, r)| {
                        let mut t = s.clone();
                        t.push(c.clone());
                        (t, q * r)
                    })
                })
                .collect();
        }
        for (s, q) in partial {
            *out.entry(s).or_default() += q;
        }
    }
    out
}

fn check_precision(words: &[&str], lexicon: &str, anchors: &[Vec<Predicate>], seed: u64) {
    let input = SequenceInput::tokens(words.iter().copied());
    let model = ToySentimentModel::default();
    let target = label(&model, &input).unwrap();
    let mut spec = PerturbationSpec::text(Lexicon::parse(lexicon).unwrap());
    spec.max_deletions = Some(1);
    let BaseModel::TextSubstitution { replace_prob, .. } = spec.base else { unreachable!() };
    let dist = exact(words, lexicon, &spec, replace_prob);
    assert!((dist.values().sum::<f64>() - 1.0).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for anchor in anchors {
        let (mut cov, mut hit) = (0.0, 0.0);
        for (tokens, p) in &dist {
            let s = SequenceInput::tokens(tokens.clone());
            if anchor.iter().all(|a| a.eval(&s).unwrap()) {
                cov += p;
                if label(&model, &s).unwrap() == target {
                    hit += p;
                }
            }
        }
        let want = hit / cov;
        let got = estimate_precision(anchor, &model, &input, &spec, 4000, &mut rng).unwrap();
        assert!((got - want).abs() <= 0.03, "{anchor:?}: estimated {got}, exact {want}");
    }
}

#[test]
fn precision_estimate_matches_exact_enumeration() {
    check_precision(
        &["the", "film", "is", "not", "good"],
        SMALL_LEXICON,
        &[
            vec![Predicate::t1d_token("good")],
            vec![Predicate::t2d_tokens("not", "good", 1)],
            vec![Predicate::t1d_token("the")],
            vec![Predicate::t1d_token("not"), Predicate::t1d_token("film")],
        ],
        5,
    );
}

#[test]
fn never_fails_anchor_precision_matches_exact_enumeration() {
    check_precision(
        &["he", "never", "fails", "in", "any", "exam", "."],
        EXAM_LEXICON,
        &[
            vec![Predicate::t2d_tokens("never", "fails", 1)],
            vec![Predicate::t2d_tokens("never", "fails", -1)],
            vec![Predicate::t1d_token("fails")],
        ],
        6,
    );
}

fn tokens_strategy() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec("[a-d]", 0..8)
}

/// Quadratic scan: some drop below the threshold has a spike within the window before it.
fn brute_force_anomaly(m: &ToyAnomalyModel, v: &[f64]) -> bool {
    for k in 0..v.len() {
        for j in 0..k {
            if k - j <= m.window && v[j] > m.spike && v[k] < m.drop {
                return true;
            }
        }
    }
    false
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]
    #[test]
    fn anomaly_model_matches_brute_force(v in proptest::collection::vec(-6.0f64..6.0, 0..=30)) {
        let m = ToyAnomalyModel::default();
        let want = brute_force_anomaly(&m, &v);
        prop_assert_eq!(m.is_anomalous(&v), want);
        prop_assert_eq!(m.predict(&SequenceInput::values(v)).unwrap(), if want { 1.0 } else { 0.0 });
    }
}

proptest! {
    #[test]
    fn featurize_maps_eval(t in proptest::collection::vec("[a-c]", 1..7), probe in tokens_strategy()) {
        let input = SequenceInput::tokens(t);
        let vocab = enumerate_vocabulary(&input, VocabMode::Temporal, &VocabConfig::default()).unwrap();
        let probe = SequenceInput::tokens(probe);
        let bits = featurize(&probe, &vocab).unwrap();
        let direct: Vec<bool> = vocab.iter().map(|p| p.eval(&probe).unwrap()).collect();
        prop_assert_eq!(bits, direct);
    }

    #[test]
    fn pair_predicate_is_monotone_in_distance(t in tokens_strategy(), d in -1i64..6) {
        let input = SequenceInput::tokens(t);
        let loose = Predicate::t2d_tokens("a", "b", d);
        let tight = Predicate::t2d_tokens("a", "b", d + 1);
        prop_assert!(!tight.eval(&input).unwrap() || loose.eval(&input).unwrap());
    }

    #[test]
    fn witnesses_exist_iff_predicate_holds(t in tokens_strategy(), j in 1usize..8, d in -1i64..5) {
        let input = SequenceInput::tokens(t);
        for p in [
            Predicate::positional_token(j, "c"),
            Predicate::Temporal1D { op: Op::Eq, c: Feature::token("a"), bound: Bound::AtLeast, d: j },
            Predicate::t2d_tokens("d", "a", d),
        ] {
            let holds = p.eval(&input).unwrap();
            prop_assert_eq!(p.witnesses(&input).unwrap().is_some(), holds);
        }
    }

    #[test]
    fn positional_predicates_are_false_past_the_end(t in tokens_strategy(), extra in 1usize..4) {
        let input = SequenceInput::tokens(t.clone());
        for c in ["a", "b", "c", "d"] {
            prop_assert!(!Predicate::positional_token(t.len() + extra, c).eval(&input).unwrap());
        }
    }

    #[test]
    fn samples_respect_deletion_cap(t in proptest::collection::vec("[a-f]", 1..12), seed in 0u64..500) {
        let input = SequenceInput::tokens(t.clone());
        let spec = PerturbationSpec::text(Lexicon::builtin());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = sample_traced(&input, &spec, &mut rng);
        let cap = t.len().div_ceil(3);
        prop_assert!(p.deleted.len() <= cap);
        prop_assert_eq!(p.sample.len(), t.len() - p.deleted.len());
        let mut seen = p.deleted.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), p.deleted.len());
        prop_assert!(p.deleted.iter().all(|&i| i >= 1 && i <= t.len()));
        if let Some((m, n)) = p.swap {
            prop_assert!(m < n && n - m <= spec.pi && n <= p.sample.len());
        }
    }

    #[test]
    fn classic_spec_preserves_length(t in proptest::collection::vec("[a-f]", 1..12), seed in 0u64..500) {
        let input = SequenceInput::tokens(t.clone());
        let spec = PerturbationSpec::text(Lexicon::builtin()).classic();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = sample_traced(&input, &spec, &mut rng);
        prop_assert_eq!(p.sample.len(), t.len());
        prop_assert!(p.swap.is_none());
    }

    #[test]
    fn kernel_weight_decreases_with_distance(a in 0.0f64..1.0, b in 0.0f64..1.0, width in 0.05f64..4.0) {
        let (near, far) = if a <= b { (a, b) } else { (b, a) };
        let (wn, wf) = (kernel_weight(near, width), kernel_weight(far, width));
        prop_assert!(wn >= wf && wf > 0.0 && wn <= 1.0);
    }

    #[test]
    fn lime_decision_is_odd_in_the_weights(w in -1.0f64..1.0, intercept in -1.0f64..1.0) {
        let make = |w: f64, b: f64| LinearExplanation {
            intercept: b,
            terms: vec![Term { predicate: Predicate::t1d_token("x"), weight: w }],
            degenerate: false,
        };
        let input = SequenceInput::tokens(["x"]);
        let flip = |d: Decision| match d {
            Decision::Covered(Label::Positive) => Decision::Covered(Label::Negative),
            Decision::Covered(Label::Negative) => Decision::Covered(Label::Positive),
            Decision::NotCovered => Decision::NotCovered,
        };
        prop_assert_eq!(
            lime_decide(&make(w, intercept), &input, 0.1),
            flip(lime_decide(&make(-w, -intercept), &input, 0.1))
        );
    }

    #[test]
    fn ridge_fit_recovers_exact_linear_data(b0 in -2.0f64..2.0, b1 in -2.0f64..2.0, b2 in -2.0f64..2.0) {
        let rows: Vec<Vec<f64>> = (0..4).map(|m| vec![f64::from(m & 1), f64::from((m >> 1) & 1)]).collect();
        let y: Vec<f64> = rows.iter().map(|r| b0 + b1 * r[0] + b2 * r[1]).collect();
        let (c0, c) = weighted_ridge(&rows, &y, &[1.0, 0.5, 2.0, 1.5], 0.0).unwrap();
        prop_assert!((c0 - b0).abs() < 1e-9 && (c[0] - b1).abs() < 1e-9 && (c[1] - b2).abs() < 1e-9);
    }

    #[test]
    fn kl_bounds_bracket_the_mean(mean in 0.0f64..=1.0, level in 0.0f64..5.0) {
        let lo = kl_lower_bound(mean, level);
        let hi = kl_upper_bound(mean, level);
        prop_assert!(lo <= mean + 1e-9 && mean <= hi + 1e-9);
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
    }

    #[test]
    fn sentiment_model_ignores_unknown_padding(t in proptest::collection::vec("[a-d]", 0..6)) {
        let model = ToySentimentModel::default();
        let base = tokenize("the cast is great");
        let SequenceInput::Tokens(mut padded) = base.clone() else { unreachable!() };
        padded.extend(t);
        prop_assert_eq!(model.predict(&base).unwrap(), model.predict(&SequenceInput::Tokens(padded)).unwrap());
    }
}
