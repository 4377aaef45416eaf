use std::io::Write;
use std::process::{Command, Output, Stdio};

const EXAM: &str = "He never fails in any exam .";

// Small budgets keep the benchmark runs quick; determinism does not depend on them.
const FAST: &[&str] = &["--samples", "300", "--budget", "300", "--coverage-samples", "2000"];

fn tempex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tempex")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

// The stub model binary lives in the core package, next to ours in the target directory.
fn stub() -> String {
    let bin = std::path::Path::new(env!("CARGO_BIN_EXE_tempex"));
    let path = bin.with_file_name(format!("tempex-stub-model{}", std::env::consts::EXE_SUFFIX));
    if !path.exists() {
        let status = Command::new(env!("CARGO"))
            .args(["build", "-p", "tempex", "--bin", "tempex-stub-model", "--profile", "test"])
            .status()
            .unwrap();
        assert!(status.success());
    }
    path.to_str().unwrap().to_string()
}

#[test]
fn explain_renders_temporal_anchor() {
    let text = stdout(&tempex(&["explain", EXAM]));
    assert!(text.contains("Pos_fails − Pos_never ≥ 1"), "{text}");
    assert!(text.contains("⇒ Positive"), "{text}");
}

#[test]
fn classic_anchor_is_positional() {
    let text = stdout(&tempex(&["explain", "--method", "anchors", EXAM]));
    assert!(text.contains("f_2 = never"), "{text}");
    assert!(text.contains("f_3 = fails"), "{text}");
}

#[test]
fn lime_json_is_linear() {
    let text = stdout(&tempex(&["explain", "--method", "lime-t", "--output", "json", "--budget", "300", EXAM]));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["type"], "linear");
    assert!(v["terms"].as_array().unwrap().len() <= 6);
}

#[test]
fn input_from_stdin_and_file() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_tempex"))
        .args(["explain", "--method", "lime", "--budget", "200"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(EXAM.as_bytes()).unwrap();
    let piped = stdout(&child.wait_with_output().unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("input.txt");
    std::fs::write(&path, EXAM).unwrap();
    let from_file = stdout(&tempex(&[
        "explain",
        "--method",
        "lime",
        "--budget",
        "200",
        "--file",
        path.to_str().unwrap(),
    ]));
    let inline = stdout(&tempex(&["explain", "--method", "lime", "--budget", "200", EXAM]));
    assert_eq!(piped, inline);
    assert_eq!(from_file, inline);
}

#[test]
fn every_subcommand_is_deterministic() {
    let mut bench = vec!["bench", "--seed", "7", "--output", "json", "--methods", "anchors-t,lime"];
    bench.extend_from_slice(FAST);
    let runs: Vec<Vec<&str>> = vec![
        vec!["explain", "--seed", "7", EXAM],
        vec!["explain", "--seed", "7", "--method", "lime-t", "--output", "json", EXAM],
        vec!["perturb", "--seed", "7", "--samples", "50", EXAM],
        vec!["perturb", "--seed", "7", "--model", "toy-anomaly", "0,1,5,0,-4,0"],
        bench,
        vec!["check-model"],
    ];
    for args in runs {
        let a = tempex(&args);
        let b = tempex(&args);
        assert_eq!(stdout(&a), stdout(&b), "{args:?}");
    }
}

#[test]
fn seed_changes_perturbations() {
    let a = stdout(&tempex(&["perturb", "--seed", "1", "--samples", "20", EXAM]));
    let b = stdout(&tempex(&["perturb", "--seed", "2", "--samples", "20", EXAM]));
    assert_ne!(a, b);
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("input_id,method,coverage,precision,n_covered,n_samples,seconds"));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn bench_csv_has_a_row_per_input_and_method() {
    let mut args = vec!["bench", "--output", "csv"];
    args.extend_from_slice(FAST);
    let rows = parse_csv(&stdout(&tempex(&args)));
    assert_eq!(rows.len(), 80);
    assert!(rows.iter().all(|r| r.len() == 7 && r[6].is_empty()));

    let mut args = vec!["bench", "--output", "csv", "--methods", "anchors-t,lime-t"];
    args.extend_from_slice(FAST);
    let rows = parse_csv(&stdout(&tempex(&args)));
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| r[1] == "anchors-t" || r[1] == "lime-t"));
}

#[test]
fn json_aggregates_match_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("rows.csv");
    let mut common = vec!["bench", "--methods", "anchors,lime-t", "--seed", "3"];
    common.extend_from_slice(FAST);

    let mut args = common.clone();
    args.extend_from_slice(&["--output", "csv", "--report", csv_path.to_str().unwrap()]);
    assert_eq!(stdout(&tempex(&args)), "");
    let rows = parse_csv(&std::fs::read_to_string(&csv_path).unwrap());

    let mut args = common.clone();
    args.extend_from_slice(&["--output", "json"]);
    let report: serde_json::Value = serde_json::from_str(&stdout(&tempex(&args))).unwrap();
    assert_eq!(report["metadata"]["incomplete"], false);
    assert_eq!(report["per_input"].as_array().unwrap().len(), rows.len());

    for agg in report["aggregates"].as_array().unwrap() {
        let method = agg["method"].as_str().unwrap();
        let mean_of = |col: usize| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r[1] == method && !r[col].is_empty())
                .map(|r| r[col].parse().unwrap())
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let cov = agg["mean_coverage"].as_f64().unwrap();
        assert!((cov - mean_of(2)).abs() < 1e-12, "{method}");
        if let Some(prec) = agg["mean_precision"].as_f64() {
            assert!((prec - mean_of(3)).abs() < 1e-12, "{method}");
        }
    }
}

#[test]
fn bench_reads_series_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("series.csv");
    let mut spiky = vec![0.0; 30];
    spiky[20] = 6.0;
    spiky[22] = -6.0;
    let line = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    std::fs::write(&path, format!("anomaly,{}\nnormal,{}\n", line(&spiky), line(&[0.0; 30]))).unwrap();
    let mut args = vec!["bench", "--model", "toy-anomaly", "--methods", "anchors-t", "--output", "csv"];
    args.extend_from_slice(&["--dataset", path.to_str().unwrap()]);
    args.extend_from_slice(FAST);
    let rows = parse_csv(&stdout(&tempex(&args)));
    // The unflagged series is not explained.
    assert_eq!(rows.len(), 1);
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["explain", "--model", "bogus", EXAM],
        vec!["explain", "--tau", "1.5", EXAM],
        vec!["explain", "--method", "shap", EXAM],
        vec!["explain", "--model", "toy-anomaly", "1,x,3"],
        vec!["bench", "--dataset", "/nonexistent/data.tsv"],
        vec!["perturb", "--delete-prob", "2", EXAM],
    ] {
        let out = tempex(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn model_failures_exit_3() {
    for mode in ["garbage", "exit", "wrong-id"] {
        let model = format!("external:{} {mode}", stub());
        let out = tempex(&["explain", "--model", &model, "--timeout", "5", EXAM]);
        assert_eq!(out.status.code(), Some(3), "{mode}");
    }
    let model = format!("external:{} sleep", stub());
    let out = tempex(&["check-model", "--model", &model, "--timeout", "1"]);
    assert_eq!(out.status.code(), Some(3));
    let out = tempex(&["check-model", "--model", "external:/nonexistent/model"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn external_model_matches_builtin() {
    let model = format!("external:{} sentiment", stub());
    let external = stdout(&tempex(&["explain", "--model", &model, "--method", "lime", "--budget", "200", EXAM]));
    let builtin = stdout(&tempex(&["explain", "--method", "lime", "--budget", "200", EXAM]));
    assert_eq!(external, builtin);
    assert!(stdout(&tempex(&["check-model", "--model", &model])).contains("ok: 3 fixtures"));
}

#[test]
fn perturb_reports_forced_swap() {
    let text = stdout(&tempex(&[
        "perturb",
        "--swap-prob",
        "1",
        "--delete-prob",
        "0",
        "--replace-prob",
        "0",
        "--samples",
        "3",
        "a b",
    ]));
    for line in text.lines() {
        assert_eq!(line, "b a\t(deleted: none, swap(1,2))");
    }
}

#[test]
fn degenerate_spec_reproduces_input() {
    let text = stdout(&tempex(&[
        "perturb",
        "--pi",
        "0",
        "--delete-prob",
        "0",
        "--replace-prob",
        "0",
        "--samples",
        "5",
        EXAM,
    ]));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().all(|l| *l == "he never fails in any exam .\t(deleted: none, none)"));
}

#[test]
fn perturb_output_stays_in_the_enumerated_support() {
    // Lexicon with one substitution for "a" and an UNK fallback.
    let dir = tempfile::tempdir().unwrap();
    let lex = dir.path().join("lex.tsv");
    std::fs::write(&lex, "a\tz\n*\tUNK\n").unwrap();
    let text = stdout(&tempex(&[
        "perturb",
        "--lexicon",
        lex.to_str().unwrap(),
        "--samples",
        "1000",
        "--output",
        "csv",
        "a b c d",
    ]));
    // Preprocessed forms: drop at most two of four, then at most one adjacent swap.
    let input = ["a", "b", "c", "d"];
    let mut prep: std::collections::HashSet<Vec<&str>> = std::collections::HashSet::new();
    for mask in 0u32..16 {
        if mask.count_ones() > 2 {
            continue;
        }
        let kept: Vec<&str> = (0..4).filter(|i| mask & (1 << i) == 0).map(|i| input[i]).collect();
        for m in 0..kept.len() {
            if m + 1 < kept.len() {
                let mut s = kept.clone();
                s.swap(m, m + 1);
                prep.insert(s);
            }
        }
        prep.insert(kept);
    }
    let support = |tok: &str, orig: &str| tok == orig || tok == "UNK" || (orig == "a" && tok == "z");
    let lines: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(lines.len(), 1000);
    for line in lines {
        let sample: Vec<&str> = line.split(',').next().unwrap().split(' ').filter(|s| !s.is_empty()).collect();
        let ok = prep
            .iter()
            .any(|p| p.len() == sample.len() && p.iter().zip(&sample).all(|(o, t)| support(t, o)));
        assert!(ok, "{line}");
    }
}
