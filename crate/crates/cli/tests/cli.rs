use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use specdiff::checkpoint::Container;
use specdiff::model::GsdnetModel;
use specdiff_cli::RunConfig;
use tempfile::TempDir;

const SMALL: &str = r#"
[data]
num_samples = 40
[model]
d = 8
score_hidden = [16]
decoder_hidden = [8]
gcn_hidden = 8
[train]
steps = 6
checkpoint_every = 4
[eval]
rates = [0.0, 0.3]
[eval.plan]
num_steps = 4
[compare]
num_graphs = 3
times = [0.001, 0.5, 1.0]
[recover]
limit = 3
"#;

struct Run {
    _dir: TempDir,
    config: PathBuf,
    out: PathBuf,
}

impl Run {
    fn new(extra: &str) -> Self {
        let dir = TempDir::new().unwrap();
        let out = dir.path().join("run");
        let config = dir.path().join("run.toml");
        fs::write(&config, format!("out = {:?}\n{SMALL}{extra}", out.to_str().unwrap())).unwrap();
        Self { _dir: dir, config, out }
    }

    fn cmd(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_specdiff"))
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.cmd(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn report(p: &Path) -> Vec<Value> {
    let v: Value = serde_json::from_str(&read(p)).unwrap();
    v["rows"].as_array().unwrap().clone()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn generate_writes_splits_and_is_deterministic() {
    let a = Run::new("");
    let b = Run::new("");
    a.ok(&["generate"]);
    b.ok(&["generate"]);
    for f in ["train.json", "val.json", "test.json", "manifest.json", "resolved_config.sha256"] {
        assert!(a.path("data").join(f).is_file(), "{f}");
    }
    for f in ["train.json", "val.json", "test.json"] {
        assert_eq!(fs::read(a.path("data").join(f)).unwrap(), fs::read(b.path("data").join(f)).unwrap());
    }
    let m: Value = serde_json::from_str(&read(&a.path("data/manifest.json"))).unwrap();
    let n: Value = serde_json::from_str(&read(&b.path("data/manifest.json"))).unwrap();
    assert_eq!(m["dataset_hash"], n["dataset_hash"]);
    assert_eq!(m["counts"]["train"].as_u64().unwrap() + m["counts"]["val"].as_u64().unwrap() + m["counts"]["test"].as_u64().unwrap(), 40);

    a.ok(&["--seed", "9", "generate"]);
    let m2: Value = serde_json::from_str(&read(&a.path("data/manifest.json"))).unwrap();
    assert_ne!(m["dataset_hash"], m2["dataset_hash"]);
}

#[test]
fn unknown_key_is_a_config_error_naming_the_key() {
    let run = Run::new("[model.extra]\nsurplus_knob = 1\n");
    let o = run.cmd(&["generate"]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("extra"), "{err}");

    let run = Run::new("[train]\nbatch = 3\n");
    let o = run.cmd(&["generate"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn invalid_values_are_rejected() {
    let run = Run::new("");
    assert_eq!(code(&run.cmd(&["eval", "--missing-rate", "0.9"])), 2);
    assert_eq!(code(&run.cmd(&["--threads", "0", "generate"])), 2);
    // No dataset yet.
    assert_eq!(code(&run.cmd(&["train"])), 4);
}

#[test]
fn one_step_log_has_one_row_of_six_columns() {
    let run = Run::new("");
    run.ok(&["generate"]);
    run.ok(&["train", "--steps", "1"]);
    let log = read(&run.path("train/loss.csv"));
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "#version=1");
    assert_eq!(lines[1], "step,L_s_theta,L_s_phi,L_rec,L_pred,L_total");
    assert_eq!(lines.len(), 3);
    let cols: Vec<f64> = lines[2].split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(cols.len(), 6);
    assert_eq!(cols[0], 1.0);
    assert!(cols.iter().all(|v| v.is_finite()));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let full = Run::new("");
    full.ok(&["generate"]);
    full.ok(&["train"]);
    let split = Run::new("");
    split.ok(&["generate"]);
    split.ok(&["train", "--steps", "4"]);
    split.ok(&["train", "--resume"]);
    assert_eq!(read(&full.path("train/loss.csv")), read(&split.path("train/loss.csv")));
    let load = |r: &Run| {
        let c = Container::load(&r.path("train/checkpoint.sdck")).unwrap();
        (GsdnetModel::from_container(&c).unwrap(), c.manifest["run"]["rng"].clone())
    };
    let (a, b) = (load(&full), load(&split));
    assert!(a == b, "resumed state differs");
}

#[test]
fn resume_rejects_changed_model_settings() {
    let run = Run::new("");
    run.ok(&["generate"]);
    run.ok(&["train", "--steps", "2"]);
    assert_eq!(code(&run.cmd(&["train", "--resume", "--beta", "0.5"])), 2);
}

#[test]
fn overrides_reach_the_snapshot() {
    let run = Run::new("");
    run.ok(&["generate"]);
    run.ok(&["--seed", "3", "train", "--beta", "0.25", "--steps", "1"]);
    let snap = read(&run.path("train/resolved_config.toml"));
    let cfg = RunConfig::parse(&snap).unwrap();
    assert_eq!(cfg.model.beta, 0.25);
    assert_eq!(cfg.train.steps, 1);
    assert_eq!(cfg.seed, 3);
    assert_eq!(read(&run.path("train/resolved_config.sha256")).trim(), cfg.hash().unwrap());
}

#[test]
fn eval_reports_every_pattern_with_averages() {
    let run = Run::new("");
    run.ok(&["generate"]);
    run.ok(&["train"]);
    run.ok(&["eval"]);
    let rows = report(&run.path("eval/patterns.json"));
    // Seven patterns and an average, for both methods.
    assert_eq!(rows.len(), 16);
    for method in ["recovery", "mean-imputation"] {
        let mine: Vec<&Value> = rows.iter().filter(|r| r["method"] == method).collect();
        let (avg, rest): (Vec<&Value>, Vec<&Value>) = mine.iter().partition(|r| r["setting"] == "Average");
        assert_eq!(rest.len(), 7);
        for key in ["acc2", "f1", "acc7", "recovery_mse"] {
            let mean = rest.iter().map(|r| r[key].as_f64().unwrap()).sum::<f64>() / 7.0;
            assert!((avg[0][key].as_f64().unwrap() - mean).abs() < 1e-12, "{method} {key}");
        }
    }
    let complete: Vec<&Value> = rows.iter().filter(|r| r["setting"] == "{t,a,v}").collect();
    assert_eq!(complete.len(), 2);
    for r in &complete {
        assert_eq!(r["recovery_mse"], 0.0);
        assert_eq!(r["missing_entries"], 0);
    }
    assert_eq!(complete[0]["acc2"], complete[1]["acc2"]);
    let rates = report(&run.path("eval/rates.json"));
    assert_eq!(rates.len(), 6);
    let csv = read(&run.path("eval/patterns.csv"));
    assert_eq!(csv.lines().count(), 2 + 16);
    assert!(csv.lines().any(|l| l.starts_with("recovery,\"{t,a}\",")));
}

#[test]
fn eval_flags_narrow_the_settings() {
    let run = Run::new("");
    run.ok(&["generate"]);
    run.ok(&["train", "--steps", "2"]);
    run.ok(&["eval", "--pattern", "{a,v}"]);
    let rows = report(&run.path("eval/patterns.json"));
    assert!(rows.iter().all(|r| r["setting"] == "{a,v}" || r["setting"] == "Average"));
    assert!(!run.path("eval/rates.json").exists());
    run.ok(&["eval", "--missing-rate", "0.2"]);
    let rows = report(&run.path("eval/rates.json"));
    assert!(rows.iter().any(|r| r["setting"] == "rate=0.2"));
}

#[test]
fn eval_refuses_a_checkpoint_from_another_dataset() {
    let run = Run::new("");
    run.ok(&["generate"]);
    run.ok(&["train", "--steps", "1"]);
    run.ok(&["--seed", "5", "generate"]);
    let o = run.cmd(&["eval"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn compare_curves_shape_and_reproducibility() {
    let run = Run::new("");
    run.ok(&["compare"]);
    let path = run.path("compare/curves.csv");
    let first = fs::read(&path).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    // graphs x spaces x times x metrics
    assert_eq!(text.lines().count(), 2 + 3 * 2 * 3 * 4);
    for line in text.lines().skip(2) {
        let f: Vec<&str> = line.split(',').collect();
        if f[2] == "0.001" && f[3] == "relative_frobenius" {
            assert!(f[4].parse::<f64>().unwrap() < 0.05, "{line}");
        }
    }
    run.ok(&["compare"]);
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn recover_exports_per_sample_rows_and_embeddings() {
    let run = Run::new("");
    run.ok(&["generate"]);
    run.ok(&["train", "--steps", "2"]);
    run.ok(&["recover", "--pattern", "{t,v}"]);
    let per = read(&run.path("recover/per_sample.csv"));
    let rows: Vec<&str> = per.lines().skip(2).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        // Only audio is missing, so only its error is filled.
        let tail: Vec<&str> = r.rsplitn(4, ',').collect();
        assert!(tail[0].is_empty() && !tail[1].is_empty() && tail[2].is_empty(), "{r}");
    }
    let emb = read(&run.path("recover/embeddings.csv"));
    assert_eq!(emb.lines().nth(1).unwrap().split(',').count(), 4 + 8);
    assert!(emb.lines().any(|l| l.split(',').nth(2) == Some("recovered") && l.split(',').nth(1) == Some("a")));
}

#[test]
fn divergence_exits_numeric_and_keeps_the_checkpoint() {
    let run = Run::new("");
    let text = read(&run.config)
        .replace("checkpoint_every = 4", "checkpoint_every = 1\nsteps = 40")
        .replace("steps = 6\n", "")
        .replace("gcn_hidden = 8", "gcn_hidden = 8\n[model.adam]\nlr = 1e300");
    fs::write(&run.config, text).unwrap();
    run.ok(&["generate"]);
    let o = run.cmd(&["train"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("last good checkpoint"));
    assert!(run.path("train/checkpoint.sdck").is_file());
}
