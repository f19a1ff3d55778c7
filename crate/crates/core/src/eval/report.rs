//! Versioned, byte-stable report formats.
//!
//! CSV files open with two `#` lines (schema, resolved config as JSON)
//! followed by a header row. Outcome files are JSON lines whose first line
//! carries the schema and config. Floats use Rust's shortest round-trip
//! formatting; missing or non-finite values are empty CSV fields.

use std::fmt::Write;

use super::{EvalOutcome, PairwiseRow, SummaryRow};
use crate::Result;

pub const SUMMARY_SCHEMA: &str = "cfx.summary/v1";
pub const TESTS_SCHEMA: &str = "cfx.tests/v1";
pub const OUTCOMES_SCHEMA: &str = "cfx.outcomes/v1";

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Non-finite floats (a degenerate t statistic) are written as missing.
fn num(v: Option<f64>) -> String {
    opt(v.filter(|x| x.is_finite()))
}

fn preamble(schema: &str, config: &serde_json::Value) -> Result<String> {
    Ok(format!("# schema: {schema}\n# config: {}\n", serde_json::to_string(config)?))
}

pub fn summary_csv(rows: &[SummaryRow], config: &serde_json::Value) -> Result<String> {
    let mut s = preamble(SUMMARY_SCHEMA, config)?;
    s.push_str(
        "method,k,users,returned,claimed,strict_successes,displaced,retrain_failures,\
         cf_percentage,displaced_percentage,mean_size_returned,mean_size_strict,\
         influence_rmse,influence_correlation\n",
    );
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.k,
            r.users,
            r.returned,
            r.claimed,
            r.strict_successes,
            r.displaced,
            r.retrain_failures,
            r.cf_percentage,
            r.displaced_percentage,
            num(r.mean_size_returned),
            num(r.mean_size_strict),
            num(r.influence_rmse),
            num(r.influence_correlation),
        )
        .expect("write to string");
    }
    Ok(s)
}

pub fn tests_csv(rows: &[PairwiseRow], config: &serde_json::Value) -> Result<String> {
    let mut s = preamble(TESTS_SCHEMA, config)?;
    s.push_str(
        "k,method_a,method_b,n,mcnemar_b,mcnemar_c,mcnemar_statistic,mcnemar_p,mcnemar_exact,\
         mcnemar_degenerate,t_mean_diff,t_statistic,t_p,t_degenerate\n",
    );
    for r in rows {
        let m = r.mcnemar;
        let t = r.paired_t;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.k,
            r.method_a,
            r.method_b,
            r.n,
            opt(m.map(|m| m.b)),
            opt(m.map(|m| m.c)),
            num(m.map(|m| m.statistic)),
            num(m.map(|m| m.p_value)),
            opt(m.map(|m| m.exact)),
            opt(m.map(|m| m.degenerate)),
            num(t.map(|t| t.mean_diff)),
            num(t.map(|t| t.statistic)),
            num(t.map(|t| t.p_value)),
            opt(t.map(|t| t.degenerate)),
        )
        .expect("write to string");
    }
    Ok(s)
}

pub fn outcomes_jsonl(outcomes: &[EvalOutcome], config: &serde_json::Value) -> Result<String> {
    let header = serde_json::json!({ "schema": OUTCOMES_SCHEMA, "config": config });
    let mut s = serde_json::to_string(&header)?;
    s.push('\n');
    for o in outcomes {
        s.push_str(&serde_json::to_string(o)?);
        s.push('\n');
    }
    Ok(s)
}
