//! Closed-testing oracle with Bonferroni intersection tests.
//!
//! Rejects a hypothesis exactly when every intersection hypothesis containing
//! it is rejected, i.e. the minimum p-value inside each such intersection
//! clears alpha divided by the intersection size. Used as an independent
//! comparison point for the composed procedure and for Holm.

use crate::error::{CoveringError, Result};
use crate::family::{HypothesisId, IdSet};
use crate::local::PValueVector;

/// Largest member count before 2^m intersection enumeration is refused.
pub const MAX_CLOSURE_MEMBERS: usize = 20;

/// Closed testing over `members` at level `alpha`.
#[allow(clippy::needless_range_loop)]
pub fn closure_oracle(p: &PValueVector, alpha: f64, members: &IdSet) -> Result<IdSet> {
    let member_list: Vec<HypothesisId> = members.iter().copied().collect();
    let m = member_list.len();
    if m > MAX_CLOSURE_MEMBERS {
        return Err(CoveringError::TooLarge {
            what: "closed-testing member set",
            limit: MAX_CLOSURE_MEMBERS,
            actual: m,
        });
    }
    if m == 0 {
        return Ok(IdSet::new());
    }
    for id in &member_list {
        if id.index() >= p.len() {
            return Err(CoveringError::DimensionMismatch {
                expected: id.index() + 1,
                actual: p.len(),
                context: format!("p-value vector too short for hypothesis {id}"),
            });
        }
    }

    let values: Vec<f64> = member_list.iter().map(|id| p.get(*id)).collect();
    let total_masks = 1usize << m;
    // min p over each intersection, built from the lowest set bit.
    let mut min_p = vec![f64::INFINITY; total_masks];
    for mask in 1..total_masks {
        let low = mask.trailing_zeros() as usize;
        let rest = mask & (mask - 1);
        min_p[mask] = values[low].min(min_p[rest]);
    }

    let mut rejected = vec![true; m];
    for mask in 1..total_masks {
        let size = mask.count_ones() as f64;
        if min_p[mask] > alpha / size {
            let mut bits = mask;
            while bits != 0 {
                let low = bits.trailing_zeros() as usize;
                rejected[low] = false;
                bits &= bits - 1;
            }
        }
    }
    Ok(member_list
        .into_iter()
        .enumerate()
        .filter(|(idx, _)| rejected[*idx])
        .map(|(_, id)| id)
        .collect())
}
