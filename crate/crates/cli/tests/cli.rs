use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use cfx_core::data::load_dataset;
use cfx_core::eval::{combinations, top1};
use cfx_core::model::{load_checkpoint, train};
use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn cfx(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfx"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("CFX_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = cfx(out, args);
    assert!(
        o.status.success(),
        "cfx {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Toy ratings ingested and a 2-d pointwise model trained in a fresh dir.
fn toy() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let ratings = fixture("toy_ratings.tsv");
    ok(
        dir.path(),
        &["ingest", "--ratings", ratings.to_str().unwrap(), "--min-pos", "2", "--min-neg", "2"],
    );
    ok(dir.path(), &["train", "--dim", "2"]);
    dir
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn missing_ratings_file_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = cfx(dir.path(), &["ingest", "--ratings", "/no/such/ratings.dat"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/ratings.dat"), "{}", stderr(&o));
}

#[test]
fn malformed_ratings_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "1\t2\tfive\t0\n").unwrap();
    let o = cfx(dir.path(), &["ingest", "--ratings", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn default_pruning_thresholds_apply() {
    let dir = tempfile::tempdir().unwrap();
    let ratings = fixture("toy_ratings.tsv");
    // Every toy user has four positives and three negatives, below the
    // default minimum of ten each.
    let o = cfx(dir.path(), &["ingest", "--ratings", ratings.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));

    let dir = toy();
    let report: Value = serde_json::from_str(&read(dir.path().join("ingest_report.json"))).unwrap();
    assert_eq!(report["schema"], "cfx.ingest/v1");
    assert_eq!(report["config"]["threshold"], 3);
    assert_eq!(report["prune"]["users_after"], 6);
    assert_eq!(report["prune"]["interactions_after"], 42);
}

#[test]
fn unknown_user_exits_3() {
    let dir = toy();
    let o = cfx(dir.path(), &["explain", "--user", "999", "--output", "-"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("999"));
}

#[test]
fn divergent_training_exits_4() {
    let dir = toy();
    let o = cfx(dir.path(), &["train", "--dim", "2", "--learning-rate", "1e9"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn attention_on_pointwise_dataset_is_a_kind_mismatch() {
    let dir = toy();
    let ds = dir.path().join("dataset.pointwise.json");
    let o = cfx(dir.path(), &["train", "--model", "attention", "--dataset", ds.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not match"), "{}", stderr(&o));
}

#[test]
fn training_is_reproducible_and_logged() {
    let a = toy();
    let b = toy();
    let ck = "checkpoint.pointwise.json";
    assert_eq!(read(a.path().join(ck)), read(b.path().join(ck)));
    let log: Value = serde_json::from_str(&read(a.path().join("train_log.pointwise.json"))).unwrap();
    assert_eq!(log["schema"], "cfx.train_log/v1");
    assert_eq!(log["epoch_loss"].as_array().unwrap().len(), 300);
    let trend = &log["trend"];
    assert!(trend["last"].as_f64().unwrap() < trend["first"].as_f64().unwrap());
    assert_eq!(log["config"]["dim"], 2);
}

#[test]
fn accent_k5_matches_golden() {
    let dir = toy();
    let out = dir.path().join("accent.jsonl");
    ok(
        dir.path(),
        &[
            "explain",
            "--all-users",
            "--method",
            "accent",
            "--k",
            "5",
            "--damping",
            "0.001",
            "--output",
            out.to_str().unwrap(),
        ],
    );
    let got = read(&out);
    let want = read(fixture("toy_accent_k5.golden.jsonl"));
    assert_eq!(got, want);

    // Toy user 4 has exactly five unseen items, so the list is all of them;
    // removing item 9 alone is estimated to close the gap to item 12.
    let lines: Vec<Value> = got.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 7);
    let hit = lines.iter().find(|l| l["user_original"] == 4).unwrap();
    assert_eq!(hit["success"], true);
    assert_eq!(hit["rec_star_original"], 12);
    assert_eq!(hit["set"][0]["item_original"], 9);
    for l in &lines[1..] {
        let initial = l["estimated_gap_initial"].as_f64().unwrap();
        let sum: f64 = l["set"].as_array().unwrap().iter().map(|e| e["gap_influence"].as_f64().unwrap()).sum();
        assert_eq!(l["success"].as_bool().unwrap(), sum > initial);
        if l["success"] == false {
            assert!(l["rec_star"].is_null());
        }
    }
}

#[test]
fn explanation_output_to_stdout_has_header_and_one_line() {
    let dir = toy();
    let o = ok(dir.path(), &["explain", "--user", "4", "--method", "fia", "--k", "5", "--output", "-"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["schema"], "cfx.explanation/v1");
    assert_eq!(lines[0]["config"]["methods"][0], "fia");
    assert_eq!(lines[1]["method"], "fia");
    assert!(lines[1].get("rec").is_some() && lines[1].get("rec_star").is_some());
}

#[test]
fn evaluate_is_byte_stable_and_has_one_row_per_method_and_k() {
    let dir = toy();
    let args = ["evaluate", "--k", "5,10,20", "--damping", "0.001"];
    let o = ok(dir.path(), &args);
    assert!(stderr(&o).contains("skipping attention"));
    let names = ["summary.csv", "tests.csv", "outcomes.jsonl"];
    let first: Vec<String> = names.iter().map(|n| read(dir.path().join(n))).collect();
    ok(dir.path(), &["--jobs", "2", args[0], args[1], args[2], args[3], args[4]]);
    for (n, before) in names.iter().zip(&first) {
        assert_eq!(&read(dir.path().join(n)), before, "{n} changed between runs");
    }
    let summary = &first[0];
    assert!(summary.starts_with("# schema: cfx.summary/v1\n# config: {"));
    let rows = data_rows(summary);
    // Four influence methods run on the pointwise model.
    assert_eq!(rows.len(), 4 * 3);
    for m in ["accent", "accent_ova", "pure_fia", "fia"] {
        assert_eq!(rows.iter().filter(|r| r.starts_with(&format!("{m},"))).count(), 3);
    }
    assert_eq!(data_rows(&first[1]).len(), 6 * 3);
}

#[test]
fn single_method_has_no_pairwise_rows() {
    let dir = toy();
    ok(dir.path(), &["evaluate", "--method", "accent", "--k", "5"]);
    assert_eq!(data_rows(&read(dir.path().join("summary.csv"))).len(), 1);
    assert!(data_rows(&read(dir.path().join("tests.csv"))).is_empty());
}

#[test]
fn config_file_with_flag_override_and_env_out_dir() {
    let dir = toy();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "k = [5, 10]\nmethods = [\"accent\", \"fia\"]\ndamping = 0.5\n").unwrap();
    let env_out = dir.path().join("from-env");
    let ck = dir.path().join("checkpoint.pointwise.json");
    let o = Command::new(env!("CARGO_BIN_EXE_cfx"))
        .args(["--config", cfg.to_str().unwrap(), "evaluate", "--damping", "0.001"])
        .args(["--checkpoint", ck.to_str().unwrap()])
        .env("CFX_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = read(env_out.join("summary.csv"));
    let config_line = summary.lines().nth(1).unwrap().trim_start_matches("# config: ");
    let config: Value = serde_json::from_str(config_line).unwrap();
    assert_eq!(config["damping"], 0.001);
    assert_eq!(config["k"], serde_json::json!([5, 10]));
    assert!(config.get("out_dir").is_none());
    assert_eq!(data_rows(&summary).len(), 4);

    std::fs::write(&cfg, "damp = 1\n").unwrap();
    let o = cfx(dir.path(), &["--config", cfg.to_str().unwrap(), "evaluate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.toml"));
}

#[test]
fn bad_k_is_rejected() {
    let dir = toy();
    let o = cfx(dir.path(), &["evaluate", "--k", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

/// Smallest removal set found by retraining every subset directly.
fn brute_force_oracle(dir: &Path, user_original: u32, max_size: usize) -> Option<usize> {
    let model = load_checkpoint(dir.join("checkpoint.pointwise.json")).unwrap();
    let ds = load_dataset(dir.join("dataset.pointwise.json")).unwrap();
    let u = ds.id_map.user_index(user_original).unwrap();
    let rec = top1(&model.scores(u).unwrap(), ds.seen(u)).unwrap();
    let profile = ds.profile(u).to_vec();
    for size in 1..=max_size.min(profile.len()) {
        for subset in combinations(profile.len(), size) {
            let items: Vec<_> = subset.iter().map(|&k| profile[k]).collect();
            let retrained = train(Arc::new(ds.without_actions(u, &items)), &model.config).unwrap();
            if top1(&retrained.scores(u).unwrap(), ds.seen(u)).unwrap() != rec {
                return Some(size);
            }
        }
    }
    None
}

#[test]
fn oracle_matches_enumeration_and_reports_skips() {
    let dir = toy();
    ok(dir.path(), &["oracle", "--method", "accent", "--k", "5", "--damping", "0.001"]);
    let lines: Vec<Value> = read(dir.path().join("oracle.jsonl"))
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    for l in &lines {
        let u = l["user_original"].as_u64().unwrap() as u32;
        let want = brute_force_oracle(dir.path(), u, 3);
        assert_eq!(l["oracle_size"].as_u64().map(|s| s as usize), want, "user {u}");
        for m in l["methods"].as_array().unwrap() {
            if m["verified"] == true && want.is_some() {
                assert!(want.unwrap() <= m["size"].as_u64().unwrap() as usize);
                assert_eq!(m["status"], "dominated");
            }
        }
    }
    let summary: Value = serde_json::from_str(&read(dir.path().join("oracle_summary.json"))).unwrap();
    assert_eq!(summary["eligible"], 6);
    assert_eq!(summary["methods"][0]["violations"], 0);

    ok(dir.path(), &["oracle", "--method", "accent", "--k", "5", "--max-profile", "3"]);
    let first: Value = serde_json::from_str(read(dir.path().join("oracle.jsonl")).lines().nth(1).unwrap()).unwrap();
    assert_eq!(first["oracle"], "skipped");
    assert!(first["reason"].as_str().unwrap().contains("cap"));
}
