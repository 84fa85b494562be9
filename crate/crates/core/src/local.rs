//! Local multiple tests applied to each leaf sub-family.
//!
//! Every procedure here strongly controls the familywise error rate at level
//! alpha on the members it is run on, which is the contract the composed
//! decision rule relies on. Hochberg is only valid under nonnegative
//! dependence, so it stays behind an explicit acknowledgment flag.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{CoveringError, Result};
use crate::family::{HypothesisId, IdSet};

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Raw per-hypothesis p-values for the whole family, indexed by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueVector {
    values: Vec<f64>,
}

impl PValueVector {
    /// Validates that every entry lies in [0,1].
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (idx, &p) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(CoveringError::InvalidPValue {
                    id: idx as u32 + 1,
                    value: p,
                });
            }
        }
        Ok(PValueVector { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: HypothesisId) -> f64 {
        self.values[id.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Preallocated vector for in-place refills on the simulation hot path.
    pub(crate) fn zeros(n: usize) -> Self {
        PValueVector {
            values: vec![0.0; n],
        }
    }

    /// Callers must keep every entry inside [0,1].
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Which alpha-level multiple test runs on each leaf.
///
/// `order` and `weights` are declared over the full family; restriction to a
/// leaf keeps the induced order and renormalizes the member weights to sum
/// to one.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalTest {
    Bonferroni,
    Holm,
    Hochberg {
        dependence_acknowledged: bool,
    },
    FixedSequence {
        order: Vec<HypothesisId>,
    },
    WeightedBonferroni {
        weights: BTreeMap<HypothesisId, f64>,
    },
}

impl LocalTest {
    pub fn hochberg_acknowledged() -> Self {
        LocalTest::Hochberg {
            dependence_acknowledged: true,
        }
    }

    /// Checks this test's shape against the member set it will run on.
    pub fn validate_for(&self, members: &IdSet) -> Result<()> {
        if members.is_empty() {
            return Err(CoveringError::InvalidLocalTest(
                "member set must be nonempty".into(),
            ));
        }
        match self {
            LocalTest::Bonferroni | LocalTest::Holm => Ok(()),
            LocalTest::Hochberg {
                dependence_acknowledged,
            } => {
                if !dependence_acknowledged {
                    Err(CoveringError::HochbergNotAcknowledged)
                } else {
                    Ok(())
                }
            }
            LocalTest::FixedSequence { order } => {
                let as_set: IdSet = order.iter().copied().collect();
                if as_set.len() != order.len() {
                    return Err(CoveringError::InvalidLocalTest(
                        "fixed-sequence order contains a duplicate".into(),
                    ));
                }
                if &as_set != members {
                    return Err(CoveringError::InvalidLocalTest(
                        "fixed-sequence order must be a permutation of the members".into(),
                    ));
                }
                Ok(())
            }
            LocalTest::WeightedBonferroni { weights } => {
                let keys: IdSet = weights.keys().copied().collect();
                if &keys != members {
                    return Err(CoveringError::InvalidLocalTest(
                        "weights must cover exactly the members".into(),
                    ));
                }
                if weights.values().any(|w| *w <= 0.0 || !w.is_finite()) {
                    return Err(CoveringError::InvalidLocalTest(
                        "weights must be strictly positive".into(),
                    ));
                }
                let sum: f64 = weights.values().sum();
                if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                    return Err(CoveringError::InvalidLocalTest(format!(
                        "weights must sum to 1, got {sum}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Restricts a full-family test to a leaf: induced order for
    /// fixed-sequence, renormalized weights for weighted Bonferroni.
    pub fn restrict_to(&self, members: &IdSet) -> Result<LocalTest> {
        let restricted = match self {
            LocalTest::FixedSequence { order } => {
                let induced: Vec<HypothesisId> = order
                    .iter()
                    .copied()
                    .filter(|id| members.contains(id))
                    .collect();
                LocalTest::FixedSequence { order: induced }
            }
            LocalTest::WeightedBonferroni { weights } => {
                let mut sub: BTreeMap<HypothesisId, f64> = BTreeMap::new();
                for id in members {
                    match weights.get(id) {
                        Some(w) => {
                            sub.insert(*id, *w);
                        }
                        None => {
                            return Err(CoveringError::InvalidLocalTest(format!(
                                "no weight declared for hypothesis {id}"
                            )));
                        }
                    }
                }
                let total: f64 = sub.values().sum();
                for w in sub.values_mut() {
                    *w /= total;
                }
                LocalTest::WeightedBonferroni { weights: sub }
            }
            other => other.clone(),
        };
        restricted.validate_for(members)?;
        Ok(restricted)
    }
}

impl fmt::Display for LocalTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocalTest::Bonferroni => write!(f, "bonferroni"),
            LocalTest::Holm => write!(f, "holm"),
            LocalTest::Hochberg { .. } => write!(f, "hochberg"),
            LocalTest::FixedSequence { order } => {
                let ids: Vec<String> = order.iter().map(|id| id.to_string()).collect();
                write!(f, "fixed:{}", ids.join(","))
            }
            LocalTest::WeightedBonferroni { weights } => {
                let ws: Vec<String> = weights.values().map(|w| w.to_string()).collect();
                write!(f, "wbonf:{}", ws.join(","))
            }
        }
    }
}

impl Serialize for LocalTest {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl FromStr for LocalTest {
    type Err = CoveringError;

    /// Parses the CLI textual form: `bonferroni` | `holm` | `hochberg` |
    /// `fixed:3,1,2` | `wbonf:0.5,0.25,0.25`. Positional lists refer to
    /// hypothesis ids 1..n of the full family.
    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        match text {
            "bonferroni" => return Ok(LocalTest::Bonferroni),
            "holm" => return Ok(LocalTest::Holm),
            "hochberg" => {
                return Ok(LocalTest::Hochberg {
                    dependence_acknowledged: false,
                })
            }
            _ => {}
        }
        if let Some(rest) = text.strip_prefix("fixed:") {
            let mut order = Vec::new();
            for part in rest.split(',') {
                let id: u32 = part.trim().parse().map_err(|_| {
                    CoveringError::InvalidLocalTest(format!("bad id `{part}` in fixed order"))
                })?;
                if id == 0 {
                    return Err(CoveringError::InvalidLocalTest(
                        "hypothesis ids are 1-based".into(),
                    ));
                }
                order.push(HypothesisId::new(id));
            }
            return Ok(LocalTest::FixedSequence { order });
        }
        if let Some(rest) = text.strip_prefix("wbonf:") {
            let mut weights = BTreeMap::new();
            for (idx, part) in rest.split(',').enumerate() {
                let w: f64 = part
                    .trim()
                    .parse()
                    .map_err(|_| CoveringError::InvalidLocalTest(format!("bad weight `{part}`")))?;
                weights.insert(HypothesisId::new(idx as u32 + 1), w);
            }
            return Ok(LocalTest::WeightedBonferroni { weights });
        }
        Err(CoveringError::InvalidLocalTest(format!(
            "unknown local test `{text}` (expected bonferroni, holm, hochberg, fixed:..., wbonf:...)"
        )))
    }
}

/// Runs one local test on `members` at level `alpha` and returns the
/// rejected subset.
///
/// The test must already match the members (see [`LocalTest::restrict_to`]).
/// Ties in sorted procedures break by ascending id; comparisons reject at
/// equality.
pub fn run_local_test(
    test: &LocalTest,
    members: &IdSet,
    p: &PValueVector,
    alpha: f64,
) -> Result<IdSet> {
    let tester = LeafTester::new(test.clone(), members.clone())?;
    check_alpha(alpha)?;
    check_members_in_range(members, p)?;
    let mut scratch = Vec::new();
    let mask = tester.rejected_mask(p, alpha, &mut scratch);
    Ok(tester.mask_to_set(mask))
}

fn check_alpha(alpha: f64) -> Result<()> {
    // The upper end is closed so adjusted p-values can probe alpha = 1.
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(CoveringError::AlphaOutOfRange {
            value: alpha,
            range: "(0,1]",
        })
    }
}

fn check_members_in_range(members: &IdSet, p: &PValueVector) -> Result<()> {
    for id in members {
        if id.index() >= p.len() {
            return Err(CoveringError::DimensionMismatch {
                expected: id.index() + 1,
                actual: p.len(),
                context: format!("p-value vector too short for hypothesis {id}"),
            });
        }
    }
    Ok(())
}

/// A leaf's members paired with its (already restricted) local test.
///
/// The hot simulation path works on bit masks over the leaf's sorted member
/// list, so a leaf may hold at most 64 members.
#[derive(Debug, Clone)]
pub struct LeafTester {
    members: Vec<HypothesisId>,
    test: LocalTest,
    /// Positions into `members` in fixed-sequence order (empty otherwise).
    sequence_positions: Vec<usize>,
    /// Per-member weight, aligned with `members` (weighted Bonferroni only).
    member_weights: Vec<f64>,
}

impl LeafTester {
    pub fn new(test: LocalTest, members: IdSet) -> Result<Self> {
        test.validate_for(&members)?;
        if members.len() > 64 {
            return Err(CoveringError::TooLarge {
                what: "local test member set",
                limit: 64,
                actual: members.len(),
            });
        }
        let members: Vec<HypothesisId> = members.into_iter().collect();
        let sequence_positions = match &test {
            LocalTest::FixedSequence { order } => order
                .iter()
                .map(|id| members.binary_search(id).expect("validated permutation"))
                .collect(),
            _ => Vec::new(),
        };
        let member_weights = match &test {
            LocalTest::WeightedBonferroni { weights } => {
                members.iter().map(|id| weights[id]).collect()
            }
            _ => Vec::new(),
        };
        Ok(LeafTester {
            members,
            test,
            sequence_positions,
            member_weights,
        })
    }

    pub fn members(&self) -> &[HypothesisId] {
        &self.members
    }

    pub fn mask_to_set(&self, mask: u64) -> IdSet {
        self.members
            .iter()
            .enumerate()
            .filter(|(pos, _)| mask & (1 << pos) != 0)
            .map(|(_, id)| *id)
            .collect()
    }

    /// Nominal per-member threshold at the member's position in the
    /// procedure (diagnostic; rank thresholds for step procedures).
    pub fn thresholds(&self, p: &PValueVector, alpha: f64) -> BTreeMap<HypothesisId, f64> {
        let m = self.members.len();
        let mut out = BTreeMap::new();
        match &self.test {
            LocalTest::Bonferroni => {
                for id in &self.members {
                    out.insert(*id, alpha / m as f64);
                }
            }
            LocalTest::Holm | LocalTest::Hochberg { .. } => {
                let mut sorted: Vec<(f64, HypothesisId)> =
                    self.members.iter().map(|id| (p.get(*id), *id)).collect();
                sorted.sort_by(|a, b| a.partial_cmp(b).expect("p-values are not NaN"));
                for (rank, (_, id)) in sorted.iter().enumerate() {
                    out.insert(*id, alpha / (m - rank) as f64);
                }
            }
            LocalTest::FixedSequence { order } => {
                for id in order {
                    out.insert(*id, alpha);
                }
            }
            LocalTest::WeightedBonferroni { weights } => {
                for (id, w) in weights {
                    out.insert(*id, w * alpha);
                }
            }
        }
        out
    }

    /// Rejection set as a bit mask over `members` order. `scratch` is reused
    /// between calls to avoid per-call allocation.
    pub fn rejected_mask(
        &self,
        p: &PValueVector,
        alpha: f64,
        scratch: &mut Vec<(f64, u32)>,
    ) -> u64 {
        let m = self.members.len();
        match &self.test {
            LocalTest::Bonferroni => {
                let threshold = alpha / m as f64;
                let mut mask = 0u64;
                for (pos, id) in self.members.iter().enumerate() {
                    if p.get(*id) <= threshold {
                        mask |= 1 << pos;
                    }
                }
                mask
            }
            LocalTest::Holm => {
                self.fill_sorted(p, scratch);
                let mut mask = 0u64;
                for (rank, (pv, pos)) in scratch.iter().enumerate() {
                    if *pv <= alpha / (m - rank) as f64 {
                        mask |= 1 << pos;
                    } else {
                        break;
                    }
                }
                mask
            }
            LocalTest::Hochberg { .. } => {
                self.fill_sorted(p, scratch);
                let mut cut = 0usize;
                for (rank, (pv, _)) in scratch.iter().enumerate().rev() {
                    if *pv <= alpha / (m - rank) as f64 {
                        cut = rank + 1;
                        break;
                    }
                }
                let mut mask = 0u64;
                for &(_, pos) in &scratch[..cut] {
                    mask |= 1 << pos;
                }
                mask
            }
            LocalTest::FixedSequence { .. } => {
                let mut mask = 0u64;
                for &pos in &self.sequence_positions {
                    if p.get(self.members[pos]) <= alpha {
                        mask |= 1 << pos;
                    } else {
                        break;
                    }
                }
                mask
            }
            LocalTest::WeightedBonferroni { .. } => {
                let mut mask = 0u64;
                for (pos, id) in self.members.iter().enumerate() {
                    if p.get(*id) <= self.member_weights[pos] * alpha {
                        mask |= 1 << pos;
                    }
                }
                mask
            }
        }
    }

    /// Sorts member p-values ascending, ties broken by ascending id (members
    /// are stored ascending, so position order is id order).
    fn fill_sorted(&self, p: &PValueVector, scratch: &mut Vec<(f64, u32)>) {
        scratch.clear();
        scratch.extend(
            self.members
                .iter()
                .enumerate()
                .map(|(pos, id)| (p.get(*id), pos as u32)),
        );
        scratch.sort_by(|a, b| a.partial_cmp(b).expect("p-values are not NaN"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::id_set;

    fn pv(values: &[f64]) -> PValueVector {
        PValueVector::new(values.to_vec()).unwrap()
    }

    fn run(test: &LocalTest, members: &[u32], p: &[f64], alpha: f64) -> IdSet {
        run_local_test(test, &id_set(members), &pv(p), alpha).unwrap()
    }

    #[test]
    fn bonferroni_thresholds_by_member_count() {
        assert_eq!(
            run(&LocalTest::Bonferroni, &[1, 2], &[0.02, 0.60], 0.05),
            id_set(&[1])
        );
    }

    #[test]
    fn holm_steps_down() {
        assert_eq!(
            run(&LocalTest::Holm, &[1, 2], &[0.01, 0.04], 0.05),
            id_set(&[1, 2])
        );
        // Stops at the first failure (rank 2: 0.03 > 0.025) even though the
        // last p would pass its own rank threshold (0.04 <= 0.05).
        assert_eq!(
            run(&LocalTest::Holm, &[1, 2, 3], &[0.03, 0.04, 0.012], 0.05),
            id_set(&[3])
        );
    }

    #[test]
    fn hochberg_steps_up() {
        let hochberg = LocalTest::hochberg_acknowledged();
        assert_eq!(
            run(&hochberg, &[1, 2], &[0.03, 0.04], 0.05),
            id_set(&[1, 2])
        );
        assert_eq!(run(&hochberg, &[1, 2], &[0.02, 0.30], 0.05), id_set(&[1]));
    }

    #[test]
    fn hochberg_requires_acknowledgment() {
        let err = run_local_test(
            &LocalTest::Hochberg {
                dependence_acknowledged: false,
            },
            &id_set(&[1, 2]),
            &pv(&[0.01, 0.01]),
            0.05,
        )
        .unwrap_err();
        assert!(matches!(err, CoveringError::HochbergNotAcknowledged));
    }

    #[test]
    fn fixed_sequence_walks_in_order() {
        let test = LocalTest::FixedSequence {
            order: vec![
                HypothesisId::new(3),
                HypothesisId::new(1),
                HypothesisId::new(2),
            ],
        };
        // 3 passes, 1 passes, 2 fails.
        assert_eq!(
            run(&test, &[1, 2, 3], &[0.04, 0.2, 0.01], 0.05),
            id_set(&[1, 3])
        );
        // First in order fails: nothing is rejected.
        assert_eq!(
            run(&test, &[1, 2, 3], &[0.001, 0.001, 0.9], 0.05),
            id_set(&[])
        );
    }

    #[test]
    fn weighted_bonferroni_uses_per_member_weights() {
        let test: LocalTest = "wbonf:0.5,0.25,0.25".parse().unwrap();
        assert_eq!(
            run(&test, &[1, 2, 3], &[0.02, 0.02, 0.002], 0.05),
            id_set(&[1, 3])
        );
    }

    #[test]
    fn restriction_induces_order_and_renormalizes_weights() {
        let fixed: LocalTest = "fixed:3,1,2".parse().unwrap();
        let restricted = fixed.restrict_to(&id_set(&[1, 3])).unwrap();
        match &restricted {
            LocalTest::FixedSequence { order } => {
                assert_eq!(order, &vec![HypothesisId::new(3), HypothesisId::new(1)]);
            }
            other => panic!("unexpected {other:?}"),
        }

        let weighted: LocalTest = "wbonf:0.5,0.25,0.25".parse().unwrap();
        let restricted = weighted.restrict_to(&id_set(&[2, 3])).unwrap();
        match &restricted {
            LocalTest::WeightedBonferroni { weights } => {
                assert!((weights[&HypothesisId::new(2)] - 0.5).abs() < 1e-12);
                assert!((weights[&HypothesisId::new(3)] - 0.5).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn restriction_rejects_missing_members() {
        let fixed = LocalTest::FixedSequence {
            order: vec![HypothesisId::new(1)],
        };
        assert!(fixed.restrict_to(&id_set(&[1, 2])).is_err());
    }

    #[test]
    fn textual_forms_round_trip() {
        for text in [
            "bonferroni",
            "holm",
            "hochberg",
            "fixed:3,1,2",
            "wbonf:0.5,0.25,0.25",
        ] {
            let test: LocalTest = text.parse().unwrap();
            assert_eq!(test.to_string(), text);
        }
        assert!("tukey".parse::<LocalTest>().is_err());
    }

    #[test]
    fn invalid_pvalues_are_rejected() {
        assert!(PValueVector::new(vec![0.5, -0.1]).is_err());
        assert!(PValueVector::new(vec![1.2]).is_err());
        assert!(PValueVector::new(vec![f64::NAN]).is_err());
        assert!(PValueVector::new(vec![0.0, 1.0, 0.5]).is_ok());
    }

    #[test]
    fn singleton_member_reduces_to_plain_threshold() {
        for test in [
            LocalTest::Bonferroni,
            LocalTest::Holm,
            LocalTest::hochberg_acknowledged(),
        ] {
            assert_eq!(run(&test, &[2], &[0.9, 0.04], 0.05), id_set(&[2]));
            assert_eq!(run(&test, &[2], &[0.9, 0.06], 0.05), id_set(&[]));
        }
    }
}
