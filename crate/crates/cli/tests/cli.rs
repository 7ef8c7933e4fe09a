use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn demo() -> PathBuf {
    root().join("grammars/demo.gr")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_problr"))
        .args(args)
        .current_dir(root())
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const TINY: &str = "terminals a b\nstart S\nrule s1: S -> A b\nrule s2: S -> a b\nrule a: A -> a\n";

#[test]
fn compile_matches_golden_and_is_stable() {
    let a = run(&["compile", "--grammar", demo().to_str().unwrap()]);
    assert!(a.status.success());
    let golden = fs::read_to_string(root().join("crates/cli/tests/golden/demo.artifact")).unwrap();
    assert_eq!(stdout(&a), golden);
    let b = run(&["compile", "--grammar", demo().to_str().unwrap()]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn grammar_found_through_data_dir() {
    let o = Command::new(env!("CARGO_BIN_EXE_problr"))
        .args(["compile", "--grammar", "demo.gr"])
        .env("PROBLR_DATA", root().join("grammars"))
        .current_dir(std::env::temp_dir())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn malformed_grammar_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "bad.gr", "start S\nrule s: S -> a [\n");
    let o = run(&["compile", "--grammar", &g]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("2:"), "{err}");
}

#[test]
fn unambiguous_sentence() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.txt", "John_NP1 left_VVD ._pfs\n");
    let o = run(&["parse", &s]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "1\tok\t1\tn=3\n");
}

#[test]
fn forced_timeout() {
    let dir = tempfile::tempdir().unwrap();
    let line = format!("w_w{} ._pfs\n", " ,_pco w_w".repeat(30));
    let s = write(dir.path(), "s.txt", &line);
    let o = run(&["parse", "--mode", "text", "--timeout", "0.001", &s]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("1\ttimeout\t"), "{}", stdout(&o));
}

#[test]
fn unknown_label_reported_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.txt", "John_NP1 left_VVD ._pfs\nit_XX ._pfs\n");
    let o = run(&["parse", "--format", "json", &s]);
    assert_eq!(o.status.code(), Some(1));
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["status"], "ok");
    assert_eq!(lines[1]["status"], "unknown-label");
}

#[test]
fn nbest_with_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.txt");
    let o = run(&[
        "train",
        "data/demo.txt",
        "--brackets",
        "data/demo.gold",
        "--auto",
        "-o",
        model.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = write(
        dir.path(),
        "s.txt",
        "John_NP1 saw_VVD the_AT man_NN1 in_II the_AT park_NN1 with_II a_AT1 telescope_NN1 ._pfs\n",
    );
    let o = run(&[
        "parse",
        "--model",
        model.to_str().unwrap(),
        "--nbest",
        "3",
        "--format",
        "json",
        &s,
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let lps: Vec<f64> = v["analyses"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["log_prob"].as_f64().unwrap())
        .collect();
    assert_eq!(lps.len(), 3);
    assert!(lps.windows(2).all(|w| w[0] >= w[1]), "{lps:?}");
}

fn model_lines(path: &Path, kind: &str) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| l.starts_with(kind))
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect()
}

#[test]
fn train_tiny_treebank_with_selection() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "tiny.gr", TINY);
    let s = write(dir.path(), "s.txt", "x_a y_b\nx_a y_b\n");
    let b = write(dir.path(), "b.txt", "\n\n");
    let sel = write(dir.path(), "sel.txt", "0\n1\n");
    let m = dir.path().join("m.txt");
    let o = run(&[
        "train",
        "--mode",
        "syntax",
        "--grammar",
        &g,
        &s,
        "--brackets",
        &b,
        "--select",
        &sel,
        "-o",
        m.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    // The only conflict: after `a` before `b`, shift or reduce A -> a. One
    // derivation of each kind, so the context splits evenly.
    let events = model_lines(&m, "event ");
    let shared = |e: &Vec<String>| events.iter().filter(|f| f[1..3] == e[1..3]).count();
    for e in &events {
        let lp: f64 = e[5].parse().unwrap();
        if shared(e) == 2 {
            assert_eq!(e[4], "1");
            assert!((lp - 0.5f64.ln()).abs() < 1e-12, "{e:?}");
        } else {
            assert_eq!(lp, 0.0, "{e:?}");
        }
    }
    assert_eq!(events.iter().filter(|e| shared(e) == 2).count(), 2);
}

#[test]
fn empty_treebank_gives_uniform_model() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(dir.path(), "tiny.gr", TINY);
    let e = write(dir.path(), "e.txt", "");
    let m = dir.path().join("m.txt");
    let o = run(&[
        "train",
        "--mode",
        "syntax",
        "--grammar",
        &g,
        &e,
        "--brackets",
        &e,
        "-o",
        m.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(model_lines(&m, "event ").is_empty());
    let unseen = model_lines(&m, "unseen ");
    assert!(!unseen.is_empty());
    let halves = unseen
        .iter()
        .filter(|u| (u[3].parse::<f64>().unwrap() - 0.5f64.ln()).abs() < 1e-12)
        .count();
    assert_eq!(halves, 1);
    assert!(unseen.iter().all(|u| {
        let lp: f64 = u[3].parse().unwrap();
        lp == 0.0 || (lp - 0.5f64.ln()).abs() < 1e-12
    }));
}

#[test]
fn crossing_training_brackets_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(
        dir.path(),
        "s.txt",
        "John_NP1 saw_VVD Mary_NP1 ._pfs\nJohn_NP1 left_VVD ._pfs\n",
    );
    let b = write(dir.path(), "b.txt", "(0 2) (1 3)\n(0 2)\n");
    let m = dir.path().join("m.txt");
    let o = run(&["train", &s, "--brackets", &b, "-o", m.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("skipped sentence 1") && err.contains("ill-nested"),
        "{err}"
    );
    assert!(err.contains("trained on 1 of 2"), "{err}");
}

#[test]
fn eval_identical_and_shortfall() {
    let dir = tempfile::tempdir().unwrap();
    let parsed = "1\tok\t1\tn=5\n\t1\t-1.0\t(0 2) (2 4) (0 4)\t(S)\n2\tok\t1\tn=4\n\t1\t-1.0\t(1 3)\t(S)\n";
    let c = write(dir.path(), "c.txt", parsed);
    let g = write(dir.path(), "g.txt", "(0 2) (2 4) (0 4)\n(1 3)\n");
    let o = run(&["eval", &c, &g, "-k", "1"]);
    assert!(o.status.success());
    let row = stdout(&o).lines().find(|l| l.starts_with("top 1")).unwrap().to_string();
    assert_eq!(
        row.split_whitespace().skip(4).collect::<Vec<_>>(),
        ["0", "0.00", "100.00", "100.00"]
    );
    let o = run(&["eval", &c, &g, "-k", "3", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["shortfall"], 2);
    assert_eq!(v["recall"], 1.0);
}

#[test]
fn eval_misaligned_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.txt", "1\tok\t1\tn=5\n");
    let g = write(dir.path(), "g.txt", "(0 2)\n(1 3)\n");
    assert_eq!(run(&["eval", &c, &g]).status.code(), Some(2));
}

#[test]
fn parse_output_feeds_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["parse", "data/demo.txt", "--nbest", "3", "--format", "json"]);
    let c = write(dir.path(), "c.jsonl", &stdout(&out));
    let o = run(&["eval", &c, "data/demo.gold"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = run(&["parse", "data/demo.txt", "--nbest", "3"]);
    let t = write(dir.path(), "c.txt", &stdout(&out));
    assert_eq!(run(&["eval", &t, "data/demo.gold"]).stdout, o.stdout);
}

#[test]
fn jobs_do_not_change_output() {
    let one = run(&["parse", "data/demo.txt", "--nbest", "2"]);
    let four = run(&["parse", "data/demo.txt", "--nbest", "2", "--jobs", "4"]);
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn no_internal_punctuation_no_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(
        dir.path(),
        "s.txt",
        "John_NP1 saw_VVD the_AT man_NN1 in_II the_AT park_NN1 ._pfs\nMary_NP1 left_VVD ._pfs\n",
    );
    let g = write(
        dir.path(),
        "g.txt",
        "(0 1) (0 7) (0 8) (1 7) (2 4) (2 7) (3 4) (4 7) (5 7) (6 7)\n(0 2) (0 3)\n",
    );
    let o = run(&["punct-experiment", &s, &g]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for line in stdout(&o).lines().skip(1) {
        let delta: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
        assert_eq!(delta, 0.0, "{line}");
    }
}

#[test]
fn depunct_flag_strips_commas() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(
        dir.path(),
        "s.txt",
        "John_NP1 left_VVD ,_pco when_CS Mary_NP1 arrived_VVD ._pfs\n",
    );
    let o = run(&["parse", "--depunct", &s]);
    assert_eq!(stdout(&o), "1\tok\t2\tn=6\n");
}
