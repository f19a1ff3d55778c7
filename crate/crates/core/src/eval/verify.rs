use serde::{Deserialize, Serialize};

use super::retrain::Retrainer;
use crate::data::ItemId;
use crate::explain::{resume_once, Explanation, InfluenceTable};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verified {
    pub explanation: Explanation,
    /// Retraining without the final set moved `rec` off the top.
    pub verified: bool,
    pub retrained_top1: Option<ItemId>,
    /// Actions added after the first retraining check.
    pub resumed: usize,
}

/// Retrains without the explanation's set; while `rec` stays on top, adds
/// the next positive-influence action against `alt` and checks again, at
/// most `budget` times.
pub fn verify_and_resume(
    retrainer: &Retrainer<'_>,
    table: &InfluenceTable,
    explanation: &Explanation,
    budget: usize,
) -> Result<Verified> {
    if !explanation.success() {
        return Err(Error::contract("only successful explanations can be verified"));
    }
    if explanation.user != table.user || explanation.rec != table.rec {
        return Err(Error::contract("explanation and influence table disagree"));
    }
    let mut current = explanation.clone();
    let mut resumed = 0;
    loop {
        let top = retrainer.top1_without(current.user, &current.points())?;
        if top != current.rec {
            return Ok(Verified {
                explanation: current,
                verified: true,
                retrained_top1: Some(top),
                resumed,
            });
        }
        let next = if resumed < budget { resume_once(table, &current) } else { None };
        match next {
            Some(more) => {
                current = more;
                resumed += 1;
            }
            None => {
                return Ok(Verified {
                    explanation: current,
                    verified: false,
                    retrained_top1: Some(top),
                    resumed,
                })
            }
        }
    }
}
