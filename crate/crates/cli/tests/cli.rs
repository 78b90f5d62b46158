use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn neurotopo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neurotopo"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Asserts exit status 1 and a single `ERROR:<stage>:<code>:` line.
fn assert_error(o: &Output, stage: &str, code: &str) {
    assert_eq!(o.status.code(), Some(1), "stderr: {}", stderr(o));
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("ERROR:{stage}:{code}:")), "{err}");
}

const TINY: &str = r#"{
  "globalSeed": 3,
  "synth": {"nSubjects": 1, "trialsPerHand": 2},
  "cnn": {"epochs": 1},
  "aae": {"epochs": 1, "channels": [4, 8, 16], "labeledFraction": 0.5}
}"#;

#[test]
fn version_names_the_formats() {
    let dir = TempDir::new().unwrap();
    let o = neurotopo(&["--version"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    for needle in [
        "NTW1",
        "PGM P5",
        "manifest JSON-lines v1",
        env!("CARGO_PKG_VERSION"),
    ] {
        assert!(text.contains(needle), "{text}");
    }
}

#[test]
fn unknown_flag_is_badflag() {
    let dir = TempDir::new().unwrap();
    assert_error(&neurotopo(&["--frobnicate"], dir.path()), "cli", "badflag");
    assert_error(
        &neurotopo(&["synth", "--out", "x", "--frobnicate"], dir.path()),
        "cli",
        "badflag",
    );
    assert!(!dir.path().join("x").exists());
}

#[test]
fn missing_arguments_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    assert_error(&neurotopo(&[], dir.path()), "cli", "usage");
    assert_error(&neurotopo(&["synth"], dir.path()), "cli", "usage");
    assert_error(
        &neurotopo(&["synth", "--out", "x", "--subjects", "many"], dir.path()),
        "cli",
        "usage",
    );
}

#[test]
fn synth_and_preprocess_write_trial_files() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let o = neurotopo(
        &[
            "synth",
            "--subjects",
            "1",
            "--trials-per-hand",
            "1",
            "--seed",
            "4",
            "--out",
            "raw",
        ],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let names: Vec<String> = fs::read_dir(p.join("raw"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 2);
    let text = fs::read_to_string(p.join("raw/trial_s000_t001.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("fs=1000,channels=Fp1,"), "{header}");
    assert!(header.ends_with(",label=1,subject=0,trial=1"), "{header}");
    assert_eq!(text.lines().count(), 1 + 10_000);
    assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 32);

    let o = neurotopo(
        &[
            "preprocess",
            "--in",
            "raw",
            "--out",
            "clean",
            "--dump-filters",
            "filters.csv",
        ],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(p.join("clean/trial_s000_t000.csv").exists());
    let csv = fs::read_to_string(p.join("filters.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "filter,section,b0,b1,b2,a1,a2");
    assert_eq!(csv.lines().filter(|l| l.starts_with("notch,")).count(), 1);
    assert_eq!(
        csv.lines().filter(|l| l.starts_with("bandpass,")).count(),
        5
    );
    // 12 significant digits: one leading digit and 11 decimals.
    let b0 = csv.lines().nth(1).unwrap().split(',').nth(2).unwrap();
    let mantissa = b0.trim_start_matches('-').split('e').next().unwrap();
    assert_eq!(mantissa.replace('.', "").len(), 12, "{b0}");
}

#[test]
fn failed_stage_removes_its_outputs() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    assert!(neurotopo(
        &[
            "synth",
            "--subjects",
            "1",
            "--trials-per-hand",
            "1",
            "--out",
            "raw"
        ],
        p
    )
    .status
    .success());
    fs::write(
        p.join("raw/trial_s000_t001.csv"),
        "fs=1000,channels=Fp1\n1.0\n",
    )
    .unwrap();
    let o = neurotopo(
        &[
            "preprocess",
            "--in",
            "raw",
            "--out",
            "clean/deeper",
            "--dump-filters",
            "f.csv",
        ],
        p,
    );
    assert_error(&o, "preprocess", "format");
    assert!(!p.join("clean").exists());
    assert!(!p.join("f.csv").exists());

    let o = neurotopo(&["preprocess", "--in", "nowhere", "--out", "clean"], p);
    assert_error(&o, "preprocess", "io");
    assert!(!p.join("clean").exists());

    let o = neurotopo(
        &[
            "train-cnn",
            "--manifest",
            "missing.jsonl",
            "--out",
            "m/model.ntw",
        ],
        p,
    );
    assert_error(&o, "train-cnn", "io");
    assert!(!p.join("m").exists());
}

#[test]
fn bad_config_is_rejected_before_writing() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    fs::write(
        p.join("cfg.json"),
        r#"{"synth": {"nSubjects": 1, "colour": "blue"}}"#,
    )
    .unwrap();
    assert_error(
        &neurotopo(&["all", "--config", "cfg.json", "--out", "run"], p),
        "all",
        "format",
    );
    assert!(!p.join("run").exists());
    fs::write(p.join("cfg.json"), r#"{"cnn": {"lr": -1}}"#).unwrap();
    assert_error(
        &neurotopo(&["all", "--config", "cfg.json", "--out", "run"], p),
        "all",
        "domain",
    );
    assert!(!p.join("run").exists());
}

#[test]
fn domain_errors_carry_the_stage() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let o = neurotopo(&["synth", "--subjects", "0", "--out", "raw"], p);
    assert_error(&o, "synth", "domain");
    assert!(!p.join("raw").exists());
    assert_error(
        &neurotopo(&["gradcheck", "--seeds", "0"], p),
        "gradcheck",
        "domain",
    );
}

#[test]
fn gradcheck_prints_a_passing_table() {
    let dir = TempDir::new().unwrap();
    let o = neurotopo(&["gradcheck", "--seeds", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), neurotopo::tensor::gradcheck::op_names().len());
    assert!(rows.iter().all(|r| r.ends_with(" ok")), "{text}");
}

#[test]
fn stages_chain_through_files_in_isolated_directories() {
    let work = TempDir::new().unwrap();
    let p = work.path();
    fs::write(p.join("cfg.json"), TINY).unwrap();
    let steps: [&[&str]; 7] = [
        &["synth", "--config", "cfg.json", "--out", "raw"],
        &[
            "preprocess",
            "--config",
            "cfg.json",
            "--in",
            "raw",
            "--out",
            "clean",
        ],
        &[
            "dataset", "--config", "cfg.json", "--in", "clean", "--out", "data",
        ],
        &[
            "train-cnn",
            "--config",
            "cfg.json",
            "--manifest",
            "data/manifest.jsonl",
            "--out",
            "cnn.ntw",
            "--report",
            "cnn.json",
        ],
        &[
            "eval-cnn",
            "--model",
            "cnn.ntw",
            "--manifest",
            "data/manifest.jsonl",
            "--report",
            "cnn_eval.json",
        ],
        &[
            "train-aae",
            "--config",
            "cfg.json",
            "--manifest",
            "data/manifest.jsonl",
            "--out",
            "aae.ntw",
            "--history",
            "hist.json",
        ],
        &[
            "eval-aae",
            "--model",
            "aae.ntw",
            "--manifest",
            "data/manifest.jsonl",
            "--report",
            "aae_eval.json",
        ],
    ];
    for args in steps {
        let o = neurotopo(args, p);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let lines = fs::read_to_string(p.join("data/manifest.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 4 * 4 * 2);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    for key in [
        "path", "label", "split", "subject", "trial", "window", "baseline",
    ] {
        assert!(first.get(key).is_some(), "{key} missing in {first}");
    }
    for f in [
        "cnn.confusion.csv",
        "cnn.confusion.pgm",
        "cnn_eval.confusion.csv",
        "aae_eval.confusion.csv",
    ] {
        assert!(p.join(f).exists(), "{f}");
    }
    let hist: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("hist.json")).unwrap()).unwrap();
    assert_eq!(hist["perEpoch"].as_array().unwrap().len(), 1);
    let model = fs::read(p.join("aae.ntw")).unwrap();
    assert_eq!(&model[..4], b"NTW1");

    // A stage reads only its declared inputs: the dataset stage run from a copy of
    // the filtered trials elsewhere produces the same manifest.
    let other = TempDir::new().unwrap();
    let q = other.path();
    fs::create_dir(q.join("in")).unwrap();
    for e in fs::read_dir(p.join("clean")).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), q.join("in").join(e.file_name())).unwrap();
    }
    fs::copy(p.join("cfg.json"), q.join("c.json")).unwrap();
    let o = neurotopo(
        &["dataset", "--config", "c.json", "--in", "in", "--out", "d"],
        q,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(q.join("d/manifest.jsonl")).unwrap(),
        lines.as_bytes()
    );
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn all_twice_is_byte_identical() {
    let work = TempDir::new().unwrap();
    let p = work.path();
    fs::write(p.join("cfg.json"), TINY).unwrap();
    for run in ["a", "b"] {
        let o = neurotopo(
            &[
                "all",
                "--config",
                "cfg.json",
                "--out",
                run,
                "--threads",
                "1",
            ],
            p,
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (a, b) = (tree(&p.join("a")), tree(&p.join("b")));
    assert!(a.len() > 20);
    assert_eq!(a, b);
}
