use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use cfx_core::data::synthetic::{self, SyntheticConfig};
use cfx_core::data::{self, load_dataset, save_dataset, UserId};
use cfx_core::eval::{
    self, combinations, exhaustive_counterfactual, outcomes_jsonl, summary_csv, tests_csv, verify_and_resume, EvalConfig,
    Retrainer,
};
use cfx_core::explain::{run_method, InfluenceTable, Method, EXPLANATION_SCHEMA};
use cfx_core::influence::InfluenceConfig;
use cfx_core::model::{self, load_checkpoint, save_checkpoint, TrainedModel};
use cfx_core::par::{self, Parallelism};
use cfx_core::Error;
use serde_json::json;

use crate::config::Resolved;
use crate::CliError;

pub const INGEST_SCHEMA: &str = "cfx.ingest/v1";
pub const TRAIN_LOG_SCHEMA: &str = "cfx.train_log/v1";
pub const ORACLE_SCHEMA: &str = "cfx.oracle/v1";
pub const ORACLE_SUMMARY_SCHEMA: &str = "cfx.oracle_summary/v1";

fn write_out(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn ensure_dir(r: &Resolved) -> Result<(), CliError> {
    std::fs::create_dir_all(&r.out_dir).map_err(|e| CliError::io(&r.out_dir, e))
}

pub fn ingest(r: &Resolved) -> Result<(), CliError> {
    let ratings = match (&r.ratings, r.synthetic) {
        (Some(path), _) => data::load_ratings(path)?,
        (None, true) => synthetic::generate(&SyntheticConfig {
            users: r.synthetic_users,
            items: r.synthetic_items,
            seed: r.synthetic_seed(),
            ..SyntheticConfig::default()
        }),
        (None, false) => return Err(CliError::Parse("ingest needs --ratings FILE or --synthetic".into())),
    };
    let interactions = data::binarize(&ratings, r.threshold)?;
    let (set, stats) = data::prune_users(&interactions, r.min_pos, r.min_neg)?;
    let pointwise = data::build_pointwise(&set)?;
    let pairwise = data::pair_negatives(&set, r.pairing_seed())?;
    ensure_dir(r)?;
    let mut written = Vec::new();
    for ds in [&pointwise, &pairwise] {
        let path = r.out(&format!("dataset.{}.json", ds.kind.as_str()));
        save_dataset(&path, ds)?;
        eprintln!("wrote {}", path.display());
        written.push(json!({"kind": ds.kind.as_str(), "path": path.file_name().map(|f| f.to_string_lossy()), "points": ds.n()}));
    }
    let report = json!({
        "schema": INGEST_SCHEMA,
        "config": r.to_json(),
        "ratings": ratings.len(),
        "prune": stats,
        "datasets": written,
    });
    eprintln!(
        "users {} -> {}, items {} -> {}, interactions {} -> {}",
        stats.users_before,
        stats.users_after,
        stats.items_before,
        stats.items_after,
        stats.interactions_before,
        stats.interactions_after
    );
    write_out(&r.out("ingest_report.json"), &pretty(&report))
}

/// Fraction of epochs whose loss did not rise, and the largest rise.
fn loss_trend(losses: &[f64]) -> serde_json::Value {
    let steps = losses.len().saturating_sub(1);
    let rises: Vec<f64> = losses.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).collect();
    json!({
        "first": losses.first(),
        "last": losses.last(),
        "non_increasing_steps": steps - rises.len(),
        "steps": steps,
        "monotone": rises.is_empty(),
        "largest_rise": rises.iter().copied().fold(0.0, f64::max),
    })
}

pub fn train(r: &Resolved) -> Result<(), CliError> {
    let path = r.dataset_path();
    let ds = load_dataset(&path).map_err(CliError::at(&path))?;
    let expected = r.model.dataset_kind();
    if ds.kind != expected {
        return Err(Error::KindMismatch {
            expected: r.model.as_str(),
            found: ds.kind.as_str(),
        }
        .into());
    }
    let m = model::train(Arc::new(ds), &r.train_config())?;
    ensure_dir(r)?;
    let ckpt = r.out(&format!("checkpoint.{}.json", r.model.as_str()));
    save_checkpoint(&ckpt, &m)?;
    eprintln!("wrote {}", ckpt.display());
    let log = json!({
        "schema": TRAIN_LOG_SCHEMA,
        "config": r.to_json(),
        "train_config": m.config,
        "epoch_loss": m.report.epoch_loss,
        "final_loss": m.report.final_loss,
        "grad_norm": m.report.grad_norm,
        "trend": loss_trend(&m.report.epoch_loss),
    });
    eprintln!("final loss {:.6}, gradient norm {:.3e}", m.report.final_loss, m.report.grad_norm);
    write_out(&r.out(&format!("train_log.{}.json", r.model.as_str())), &pretty(&log))
}

/// Loads the checkpoint and rewrites the model fields of the resolved
/// config so the embedded copy describes the model actually used.
fn load_model(r: &mut Resolved) -> Result<TrainedModel, CliError> {
    let path = r.checkpoint_path();
    let m = load_checkpoint(&path).map_err(CliError::at(&path))?;
    // A default checkpoint is recorded by file name so the embedded config
    // does not depend on where the output directory lives.
    if r.checkpoint.is_none() {
        r.checkpoint = path.file_name().map(Into::into);
    }
    r.model = m.config.kind;
    r.dim = m.config.dim;
    r.epochs = m.config.epochs;
    r.learning_rate = m.config.learning_rate;
    r.l2_reg = m.config.l2_reg;
    Ok(m)
}

fn supported_methods(r: &Resolved, m: &TrainedModel) -> Vec<Method> {
    let (ok, skipped): (Vec<Method>, Vec<Method>) = r.methods.iter().partition(|x| x.supports(m.kind()));
    for s in skipped {
        eprintln!("warning: skipping {s}: not supported by the {} model", m.kind().as_str());
    }
    ok
}

fn lookup_user(m: &TrainedModel, original: u32) -> Result<UserId, CliError> {
    m.dataset().id_map.user_index(original).ok_or_else(|| {
        Error::UnknownId {
            kind: "user",
            id: original as u64,
        }
        .into()
    })
}

fn influence_config(r: &Resolved) -> InfluenceConfig {
    InfluenceConfig::with_damping(r.damping)
}

pub fn explain(mut r: Resolved, user: Option<u32>, output: Option<&Path>) -> Result<(), CliError> {
    let m = load_model(&mut r)?;
    let users: Vec<UserId> = match user {
        Some(u) => vec![lookup_user(&m, u)?],
        None => (0..m.dataset().num_users as UserId).collect(),
    };
    let methods = supported_methods(&r, &m);
    let icfg = influence_config(&r);
    let kmax = *r.k.iter().max().expect("k list is nonempty");
    let influence = methods.iter().any(|x| x.uses_influence());
    let per_user = par::try_map(Parallelism::from_jobs(r.jobs), &users, |&u| -> Result<Vec<String>, CliError> {
        let table = if influence {
            InfluenceTable::for_user(&m, u, kmax, &icfg)?
        } else {
            InfluenceTable::scores_only(&m, u, kmax)?
        };
        let mut lines = Vec::new();
        for &method in &methods {
            for &k in &r.k {
                let e = run_method(&m, method, &table, k)?;
                let mut v: serde_json::Value = serde_json::from_str(&e.to_json_line(&m)?).expect("own json");
                v["k"] = json!(k);
                lines.push(serde_json::to_string(&v).expect("json value serializes"));
            }
        }
        Ok(lines)
    })?;
    let header = json!({"schema": EXPLANATION_SCHEMA, "config": r.to_json()});
    let mut text = serde_json::to_string(&header).expect("json value serializes");
    text.push('\n');
    for line in per_user.into_iter().flatten() {
        text.push_str(&line);
        text.push('\n');
    }
    match output {
        Some(p) if p == Path::new("-") => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
        Some(p) => write_out(p, &text),
        None => {
            ensure_dir(&r)?;
            write_out(&r.out("explanations.jsonl"), &text)
        }
    }
}

pub fn evaluate(mut r: Resolved) -> Result<(), CliError> {
    let m = load_model(&mut r)?;
    let methods = supported_methods(&r, &m);
    if methods.is_empty() {
        return Err(Error::Unsupported(format!("no selected method runs on the {} model", m.kind().as_str())).into());
    }
    let cfg = EvalConfig {
        influence: influence_config(&r),
        parallelism: Parallelism::from_jobs(r.jobs),
        ..EvalConfig::new(methods, r.k.clone())
    };
    let ev = eval::evaluate(&m, &cfg)?;
    let config = r.to_json();
    ensure_dir(&r)?;
    write_out(&r.out("summary.csv"), &summary_csv(&ev.summary, &config)?)?;
    write_out(&r.out("tests.csv"), &tests_csv(&ev.tests, &config)?)?;
    write_out(&r.out("outcomes.jsonl"), &outcomes_jsonl(&ev.outcomes, &config)?)?;
    for row in &ev.summary {
        eprintln!(
            "{:>15} k={:<3} cf {:5.1}%  mean size {}",
            row.method.as_str(),
            row.k,
            row.cf_percentage,
            row.mean_size_returned.map_or("-".to_string(), |s| format!("{s:.3}"))
        );
    }
    Ok(())
}

#[derive(Debug, Clone, serde::Serialize)]
struct MethodCheck {
    method: Method,
    claimed: bool,
    verified: bool,
    size: usize,
    items: Vec<u32>,
    resumed: usize,
    /// Relation to the oracle: `dominated`, `violation`, `oracle_inconclusive`,
    /// `method_failed`, or `oracle_skipped`.
    status: &'static str,
}

#[derive(Debug, Clone, serde::Serialize)]
struct OracleLine {
    user: UserId,
    user_original: u32,
    profile_size: usize,
    rec_original: Option<u32>,
    /// `found`, `none_within_cap`, or `skipped`.
    oracle: &'static str,
    reason: Option<String>,
    oracle_size: Option<usize>,
    oracle_items: Vec<u32>,
    oracle_new_top1: Option<u32>,
    /// Subsets the oracle retrained on.
    subsets_tried: usize,
    methods: Vec<MethodCheck>,
}

fn oracle_user(
    r: &Resolved,
    m: &TrainedModel,
    retrainer: &Retrainer<'_>,
    methods: &[Method],
    u: UserId,
) -> Result<OracleLine, CliError> {
    let ds = m.dataset();
    let ids = &ds.id_map;
    let k = r.k[0];
    let mut line = OracleLine {
        user: u,
        user_original: ids.original_user(u),
        profile_size: ds.profile(u).len(),
        rec_original: None,
        oracle: "skipped",
        reason: None,
        oracle_size: None,
        oracle_items: Vec::new(),
        oracle_new_top1: None,
        subsets_tried: 0,
        methods: Vec::new(),
    };
    let hit = match exhaustive_counterfactual(retrainer, u, r.caps(), Parallelism::Sequential) {
        Ok(h) => {
            line.oracle = if h.is_some() { "found" } else { "none_within_cap" };
            let size = line.profile_size;
            line.subsets_tried = match &h {
                Some(h) => h.tried,
                None => (1..=r.max_size.min(size)).map(|s| combinations(size, s).len()).sum(),
            };
            h
        }
        Err(Error::Refused(reason)) => {
            line.reason = Some(reason);
            None
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(h) = &hit {
        line.oracle_size = Some(h.items.len());
        line.oracle_items = h.items.iter().map(|&i| ids.original_item(i)).collect();
        line.oracle_new_top1 = Some(ids.original_item(h.new_top1));
    }
    let table = if methods.iter().any(|x| x.uses_influence()) {
        match InfluenceTable::for_user(m, u, k, &influence_config(r)) {
            Ok(t) => Some(t),
            Err(Error::Numeric(msg)) => {
                line.reason.get_or_insert(format!("influence unavailable: {msg}"));
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    let scores = InfluenceTable::scores_only(m, u, k)?;
    line.rec_original = Some(ids.original_item(scores.rec));
    for &method in methods {
        let t = match (&table, method.uses_influence()) {
            (Some(t), true) => t,
            (None, true) => continue,
            (_, false) => &scores,
        };
        let e = run_method(m, method, t, k)?;
        let mut check = MethodCheck {
            method,
            claimed: e.success(),
            verified: false,
            size: e.set.len(),
            items: e.items().iter().map(|&i| ids.original_item(i)).collect(),
            resumed: 0,
            status: "method_failed",
        };
        if e.success() {
            let budget = if t.has_influence() { r.retry_budget } else { 0 };
            let v = verify_and_resume(retrainer, t, &e, budget)?;
            check.verified = v.verified;
            check.size = v.explanation.set.len();
            check.items = v.explanation.items().iter().map(|&i| ids.original_item(i)).collect();
            check.resumed = v.resumed;
        }
        check.status = match (line.oracle, check.verified) {
            (_, false) => "method_failed",
            ("skipped", true) => "oracle_skipped",
            ("none_within_cap", true) if check.size > r.max_size => "oracle_inconclusive",
            ("none_within_cap", true) => "violation",
            (_, true) if line.oracle_size.is_some_and(|s| s <= check.size) => "dominated",
            (_, true) => "violation",
        };
        line.methods.push(check);
    }
    Ok(line)
}

pub fn oracle(mut r: Resolved, user: Option<u32>) -> Result<(), CliError> {
    let m = load_model(&mut r)?;
    let methods = supported_methods(&r, &m);
    let users: Vec<UserId> = match user {
        Some(u) => vec![lookup_user(&m, u)?],
        None => (0..m.dataset().num_users as UserId).collect(),
    };
    let retrainer = Retrainer::new(&m);
    let lines = par::try_map(Parallelism::from_jobs(r.jobs), &users, |&u| {
        oracle_user(&r, &m, &retrainer, &methods, u)
    })?;
    let config = r.to_json();
    let mut text = serde_json::to_string(&json!({"schema": ORACLE_SCHEMA, "config": config})).expect("json");
    text.push('\n');
    for l in &lines {
        text.push_str(&serde_json::to_string(l).expect("oracle line serializes"));
        text.push('\n');
    }
    let count = |p: &dyn Fn(&OracleLine) -> bool| lines.iter().filter(|l| p(l)).count();
    let per_method: Vec<serde_json::Value> = methods
        .iter()
        .map(|&method| {
            let checks: Vec<&MethodCheck> = lines
                .iter()
                .flat_map(|l| l.methods.iter().filter(move |c| c.method == method))
                .collect();
            let status = |s: &str| checks.iter().filter(|c| c.status == s).count();
            let verified = checks.iter().filter(|c| c.verified).count();
            let compared = status("dominated") + status("violation");
            json!({
                "method": method,
                "users": checks.len(),
                "verified": verified,
                "compared": compared,
                "dominated": status("dominated"),
                "violations": status("violation"),
                "oracle_inconclusive": status("oracle_inconclusive"),
                "dominance_rate": (compared > 0).then(|| status("dominated") as f64 / compared as f64),
            })
        })
        .collect();
    let summary = json!({
        "schema": ORACLE_SUMMARY_SCHEMA,
        "config": config,
        "users": lines.len(),
        "eligible": count(&|l| l.oracle != "skipped"),
        "found": count(&|l| l.oracle == "found"),
        "none_within_cap": count(&|l| l.oracle == "none_within_cap"),
        "skipped": count(&|l| l.oracle == "skipped"),
        "methods": per_method,
    });
    ensure_dir(&r)?;
    write_out(&r.out("oracle.jsonl"), &text)?;
    write_out(&r.out("oracle_summary.json"), &pretty(&summary))?;
    let violations: usize = lines
        .iter()
        .flat_map(|l| &l.methods)
        .filter(|c| c.status == "violation")
        .count();
    if violations > 0 {
        eprintln!("warning: {violations} verified explanations smaller than the oracle's");
    }
    Ok(())
}
