//! Retrain-and-verify evaluation, paired significance tests, influence
//! diagnostics, and the exhaustive counterfactual oracle.

mod oracle;
mod report;
mod retrain;
mod stats;
mod verify;

use serde::{Deserialize, Serialize};

pub use oracle::{combinations, exhaustive_counterfactual, OracleCaps, OracleHit};
pub use report::{outcomes_jsonl, summary_csv, tests_csv, OUTCOMES_SCHEMA, SUMMARY_SCHEMA, TESTS_SCHEMA};
pub use retrain::{top1, Retrained, Retrainer};
pub use stats::{mcnemar, mcnemar_counts, paired_t_test, rmse_and_correlation, McNemar, PairedT, EXACT_LIMIT};
pub use verify::{verify_and_resume, Verified};

use crate::data::{ItemId, UserId};
use crate::explain::{run_method, Explanation, InfluenceTable, Method};
use crate::influence::InfluenceConfig;
use crate::model::TrainedModel;
use crate::par::{self, Parallelism};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub ks: Vec<usize>,
    pub influence: InfluenceConfig,
    pub parallelism: Parallelism,
    /// Users to evaluate; every user when `None`.
    pub users: Option<Vec<UserId>>,
}

impl EvalConfig {
    pub fn new(methods: Vec<Method>, ks: Vec<usize>) -> Self {
        Self {
            methods,
            ks,
            influence: InfluenceConfig::default(),
            parallelism: Parallelism::Sequential,
            users: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub user: UserId,
    pub method: Method,
    pub k: usize,
    pub explanation: Explanation,
    pub retrained_top1: Option<ItemId>,
    /// Retrained top-1 is `rec_star`.
    pub strict_success: bool,
    /// Retrained top-1 is not `rec`.
    pub displaced: bool,
    pub set_size: usize,
    pub estimated_set_influence: f64,
    /// Observed drop of `ŷ_rec − ŷ_alt` after retraining.
    pub true_gap_influence: Option<f64>,
    pub retrain_failed: bool,
    /// Why the influence table for this user could not be built; the
    /// influence methods then report failure.
    pub influence_error: Option<String>,
}

impl EvalOutcome {
    pub fn returned_set(&self) -> bool {
        self.set_size > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub k: usize,
    pub users: usize,
    /// Users for whom the method returned a nonempty set.
    pub returned: usize,
    /// Users for whom the method claimed success.
    pub claimed: usize,
    pub strict_successes: usize,
    pub displaced: usize,
    pub retrain_failures: usize,
    pub cf_percentage: f64,
    pub displaced_percentage: f64,
    /// Mean set size over users with a returned set.
    pub mean_size_returned: Option<f64>,
    /// Mean set size over strict successes.
    pub mean_size_strict: Option<f64>,
    pub influence_rmse: Option<f64>,
    pub influence_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub k: usize,
    pub method_a: Method,
    pub method_b: Method,
    /// Users where both methods returned a set.
    pub n: usize,
    pub mcnemar: Option<McNemar>,
    /// Alternative: sizes of `method_a` are smaller.
    pub paired_t: Option<PairedT>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub outcomes: Vec<EvalOutcome>,
    pub summary: Vec<SummaryRow>,
    pub tests: Vec<PairwiseRow>,
    /// Methods left out because the model cannot run them.
    pub skipped_methods: Vec<Method>,
}

impl Evaluation {
    pub fn row(&self, method: Method, k: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method && r.k == k)
    }
}

fn check_config(model: &TrainedModel, cfg: &EvalConfig) -> Result<Vec<UserId>> {
    if cfg.methods.is_empty() || cfg.ks.is_empty() {
        return Err(Error::contract("need at least one method and one k"));
    }
    if let Some(&k) = cfg.ks.iter().find(|&&k| k < 2) {
        return Err(Error::contract(format!("k = {k}: every k must be at least 2")));
    }
    let ds = model.dataset();
    let users = match &cfg.users {
        Some(us) => {
            for &u in us {
                ds.check_user(u)?;
            }
            us.clone()
        }
        None => (0..ds.num_users as UserId).collect(),
    };
    Ok(users)
}

/// Runs every method at every k for every user, retrains on each claimed
/// success, and aggregates.
pub fn evaluate(model: &TrainedModel, cfg: &EvalConfig) -> Result<Evaluation> {
    let users = check_config(model, cfg)?;
    let (methods, skipped_methods): (Vec<Method>, Vec<Method>) =
        cfg.methods.iter().partition(|m| m.supports(model.kind()));
    let retrainer = Retrainer::new(model);
    let per_user = par::try_map(cfg.parallelism, &users, |&u| {
        evaluate_user(model, &retrainer, u, &methods, &cfg.ks, &cfg.influence)
    })?;
    let outcomes: Vec<EvalOutcome> = per_user.into_iter().flatten().collect();
    let mut summary = Vec::new();
    let mut tests = Vec::new();
    for &k in &cfg.ks {
        for &m in &methods {
            summary.push(summarize(&outcomes, m, k));
        }
        for (x, &a) in methods.iter().enumerate() {
            for &b in &methods[x + 1..] {
                tests.push(compare(&outcomes, a, b, k)?);
            }
        }
    }
    Ok(Evaluation {
        outcomes,
        summary,
        tests,
        skipped_methods,
    })
}

fn evaluate_user(
    model: &TrainedModel,
    retrainer: &Retrainer<'_>,
    u: UserId,
    methods: &[Method],
    ks: &[usize],
    icfg: &InfluenceConfig,
) -> Result<Vec<EvalOutcome>> {
    let kmax = ks.iter().copied().max().expect("checked nonempty");
    let mut influence_error = None;
    let table = if methods.iter().any(|m| m.uses_influence()) {
        match InfluenceTable::for_user(model, u, kmax, icfg) {
            Ok(t) => t,
            Err(Error::Numeric(msg)) => {
                influence_error = Some(msg);
                InfluenceTable::scores_only(model, u, kmax)?
            }
            Err(e) => return Err(e),
        }
    } else {
        InfluenceTable::scores_only(model, u, kmax)?
    };
    let mut out = Vec::new();
    for &method in methods {
        for &k in ks {
            if method.uses_influence() && influence_error.is_some() {
                let view = table.truncated(k - 1);
                let e = Explanation::failure(u, method, view.rec, view.candidates[0], view.gap(0));
                let mut o = outcome(model, retrainer, method, k, e)?;
                o.influence_error = influence_error.clone();
                out.push(o);
                continue;
            }
            let e = run_method(model, method, &table, k)?;
            out.push(outcome(model, retrainer, method, k, e)?);
        }
    }
    Ok(out)
}

/// Retrains (when the explanation claims success) and records the result.
pub fn outcome(
    model: &TrainedModel,
    retrainer: &Retrainer<'_>,
    method: Method,
    k: usize,
    e: Explanation,
) -> Result<EvalOutcome> {
    let u = e.user;
    let mut o = EvalOutcome {
        user: u,
        method,
        k,
        set_size: e.set.len(),
        estimated_set_influence: e.estimated_set_influence(),
        explanation: e,
        retrained_top1: None,
        strict_success: false,
        displaced: false,
        true_gap_influence: None,
        retrain_failed: false,
        influence_error: None,
    };
    let (rec, alt, rec_star) = (o.explanation.rec, o.explanation.alt, o.explanation.rec_star);
    if rec_star.is_none() {
        return Ok(o);
    }
    match retrainer.scores_without(u, &o.explanation.points()) {
        Retrained::Scores(after) => {
            let top = top1(&after, model.dataset().seen(u))?;
            let before = model.score(u, rec)? - model.score(u, alt)?;
            let now = after[rec as usize] - after[alt as usize];
            o.retrained_top1 = Some(top);
            o.strict_success = Some(top) == rec_star;
            o.displaced = top != rec;
            o.true_gap_influence = Some(before - now);
        }
        Retrained::Failed(_) => o.retrain_failed = true,
    }
    Ok(o)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn summarize(outcomes: &[EvalOutcome], method: Method, k: usize) -> SummaryRow {
    let rows: Vec<&EvalOutcome> = outcomes.iter().filter(|o| o.method == method && o.k == k).collect();
    let users = rows.len();
    let pct = |c: usize| if users == 0 { 0.0 } else { 100.0 * c as f64 / users as f64 };
    let returned: Vec<f64> = rows.iter().filter(|o| o.returned_set()).map(|o| o.set_size as f64).collect();
    let strict: Vec<f64> = rows.iter().filter(|o| o.strict_success).map(|o| o.set_size as f64).collect();
    let strict_successes = strict.len();
    let displaced = rows.iter().filter(|o| o.displaced).count();
    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|o| o.true_gap_influence.map(|t| (o.estimated_set_influence, t)))
        .collect();
    let rmse = (!pairs.is_empty())
        .then(|| (pairs.iter().map(|(e, t)| (e - t) * (e - t)).sum::<f64>() / pairs.len() as f64).sqrt());
    SummaryRow {
        method,
        k,
        users,
        returned: returned.len(),
        claimed: rows.iter().filter(|o| o.explanation.success()).count(),
        strict_successes,
        displaced,
        retrain_failures: rows.iter().filter(|o| o.retrain_failed).count(),
        cf_percentage: pct(strict_successes),
        displaced_percentage: pct(displaced),
        mean_size_returned: mean(&returned),
        mean_size_strict: mean(&strict),
        influence_rmse: rmse,
        influence_correlation: rmse_and_correlation(&pairs).ok().map(|d| d.1),
    }
}

fn compare(outcomes: &[EvalOutcome], a: Method, b: Method, k: usize) -> Result<PairwiseRow> {
    let pick = |m: Method| -> Vec<&EvalOutcome> {
        outcomes.iter().filter(|o| o.method == m && o.k == k && o.returned_set()).collect()
    };
    let (xs, ys) = (pick(a), pick(b));
    let mut succ = Vec::new();
    let mut sa = Vec::new();
    let mut sb = Vec::new();
    for x in &xs {
        if let Some(y) = ys.iter().find(|y| y.user == x.user) {
            succ.push((x.strict_success, y.strict_success));
            sa.push(x.set_size as f64);
            sb.push(y.set_size as f64);
        }
    }
    Ok(PairwiseRow {
        k,
        method_a: a,
        method_b: b,
        n: succ.len(),
        mcnemar: if succ.is_empty() { None } else { Some(mcnemar(&succ)?) },
        paired_t: if sa.len() < 2 { None } else { Some(paired_t_test(&sa, &sb)?) },
    })
}

/// One action's estimated and observed effect on `ŷ_rec − ŷ_runner-up`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleRemoval {
    pub user: UserId,
    pub item: ItemId,
    pub estimated: f64,
    pub observed: f64,
}

/// Removes each of `u`'s actions alone (at most `per_user`, in profile
/// order), retrains, and pairs the estimated gap influence against the
/// runner-up with the observed change.
pub fn single_removals(
    retrainer: &Retrainer<'_>,
    users: &[UserId],
    per_user: usize,
    icfg: &InfluenceConfig,
    parallelism: Parallelism,
) -> Result<Vec<SingleRemoval>> {
    let model = retrainer.model();
    let per = par::try_map(parallelism, users, |&u| -> Result<Vec<SingleRemoval>> {
        let table = InfluenceTable::for_user(model, u, 2, icfg)?;
        let alt = table.candidates[0];
        let before = table.gap(0);
        let mut out = Vec::new();
        for (a, act) in table.actions.iter().enumerate().take(per_user) {
            let after = match retrainer.scores_without(u, &[act.point]) {
                Retrained::Scores(s) => s,
                Retrained::Failed(msg) => return Err(Error::Numeric(msg)),
            };
            out.push(SingleRemoval {
                user: u,
                item: act.item,
                estimated: table.gap_influence(a, 0),
                observed: before - (after[table.rec as usize] - after[alt as usize]),
            });
        }
        Ok(out)
    })?;
    Ok(per.into_iter().flatten().collect())
}

/// RMSE and Pearson correlation between estimated and retrained set
/// influences of the outcomes that were retrained.
pub fn influence_diagnostics(outcomes: &[EvalOutcome]) -> Result<(f64, f64)> {
    let pairs: Vec<(f64, f64)> = outcomes
        .iter()
        .filter_map(|o| o.true_gap_influence.map(|t| (o.estimated_set_influence, t)))
        .collect();
    rmse_and_correlation(&pairs)
}

#[cfg(test)]
mod tests;
