//! Composed decision rule over the decomposed leaves.
//!
//! A hypothesis is rejected when it is rejected in every leaf sub-family
//! containing it and, if it is gated, some gate member has already been
//! rejected. Gates are resolved in topological order of the gate graph, so
//! chains propagate: a tertiary hypothesis needs its whole ancestry rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::decomposition::{decompose, DecompositionPlan};
use crate::error::{CoveringError, Result};
use crate::family::{format_id_set, FamilySpec, HypothesisId, IdSet};
use crate::local::{LeafTester, LocalTest, PValueVector};

/// Maximum bisection refinements for adjusted p-values.
const MAX_BISECTION_ITERATIONS: u32 = 60;

/// Verdict of one leaf's local test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafOutcome {
    pub leaf: IdSet,
    pub rejected: IdSet,
    /// Effective per-member cutoff at each member's position in the
    /// procedure (diagnostic only).
    pub thresholds: BTreeMap<HypothesisId, f64>,
}

/// Verdict of one leaf for one hypothesis, as recorded in explanations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafVerdict {
    pub leaf: IdSet,
    pub rejected: bool,
}

/// Gate resolution for a gated hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateStatus {
    /// Smallest-id gate member that was itself rejected, if any.
    pub satisfied_by: Option<HypothesisId>,
}

/// Why one hypothesis was or was not rejected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub id: HypothesisId,
    pub leaves: Vec<LeafVerdict>,
    /// `None` for ungated hypotheses.
    pub gate: Option<GateStatus>,
}

/// The composed test: one boolean per hypothesis plus its justification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionResult {
    pub alpha: f64,
    pub local_test: LocalTest,
    pub psi: Vec<bool>,
    pub explanations: Vec<Explanation>,
}

impl DecisionResult {
    pub fn rejected_ids(&self) -> IdSet {
        self.psi
            .iter()
            .enumerate()
            .filter(|(_, r)| **r)
            .map(|(idx, _)| HypothesisId::new(idx as u32 + 1))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("decision serialization cannot fail")
    }

    pub fn to_text(&self, spec: &FamilySpec) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "alpha: {}", self.alpha);
        let _ = writeln!(out, "local test: {}", self.local_test);
        for explanation in &self.explanations {
            let id = explanation.id;
            let verdict = if self.psi[id.index()] {
                "REJECT"
            } else {
                "accept"
            };
            let label = spec
                .label_of(id)
                .map(|l| format!(" ({l})"))
                .unwrap_or_default();
            let leaves: Vec<String> = explanation
                .leaves
                .iter()
                .map(|v| {
                    format!(
                        "{} {}",
                        format_id_set(&v.leaf),
                        if v.rejected { "yes" } else { "no" }
                    )
                })
                .collect();
            let gate = match &explanation.gate {
                None => "ungated".to_string(),
                Some(GateStatus {
                    satisfied_by: Some(g),
                }) => format!("gate satisfied by H{g}"),
                Some(GateStatus { satisfied_by: None }) => "gate unsatisfied".to_string(),
            };
            let _ = writeln!(
                out,
                "H{id}{label}: {verdict}  leaves: {}; {gate}",
                leaves.join(", ")
            );
        }
        out
    }
}

/// Adjusted p-values: the smallest level at which each hypothesis falls.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjustedPValues {
    pub adj: Vec<f64>,
    pub tolerance: f64,
}

impl AdjustedPValues {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("adjusted-p serialization cannot fail")
    }
}

/// Decomposition plus per-leaf restricted tests, reusable across many
/// p-vectors and alpha levels.
pub struct PreparedFamily<'a> {
    spec: &'a FamilySpec,
    plan: &'a DecompositionPlan,
    test: LocalTest,
    leaf_testers: Vec<LeafTester>,
    topological: Vec<HypothesisId>,
    /// Per hypothesis: (leaf index, bit position inside that leaf's mask).
    occurrences: Vec<Vec<(usize, u32)>>,
}

/// Reusable buffers for the per-repetition hot path.
#[derive(Default)]
pub struct EvalScratch {
    sort: Vec<(f64, u32)>,
    leaf_masks: Vec<u64>,
}

impl<'a> PreparedFamily<'a> {
    pub fn new(
        spec: &'a FamilySpec,
        plan: &'a DecompositionPlan,
        test: &LocalTest,
    ) -> Result<Self> {
        let mut leaf_testers = Vec::with_capacity(plan.leaves.len());
        for leaf in &plan.leaves {
            let restricted = test.restrict_to(leaf)?;
            leaf_testers.push(LeafTester::new(restricted, leaf.clone())?);
        }
        let topological = spec.topological_order()?;
        let mut occurrences: Vec<Vec<(usize, u32)>> = vec![Vec::new(); spec.n as usize];
        for (leaf_idx, tester) in leaf_testers.iter().enumerate() {
            for (bit, id) in tester.members().iter().enumerate() {
                occurrences[id.index()].push((leaf_idx, bit as u32));
            }
        }
        Ok(PreparedFamily {
            spec,
            plan,
            test: test.clone(),
            leaf_testers,
            topological,
            occurrences,
        })
    }

    pub fn plan(&self) -> &DecompositionPlan {
        self.plan
    }

    fn check_dimensions(&self, p: &PValueVector) -> Result<()> {
        if p.len() != self.spec.n as usize {
            return Err(CoveringError::DimensionMismatch {
                expected: self.spec.n as usize,
                actual: p.len(),
                context: "p-value vector vs family size".into(),
            });
        }
        Ok(())
    }

    /// Fast path: fills `psi` (indexed by hypothesis) without explanations.
    pub fn psi_into(
        &self,
        p: &PValueVector,
        alpha: f64,
        scratch: &mut EvalScratch,
        psi: &mut Vec<bool>,
    ) {
        scratch.leaf_masks.clear();
        for tester in &self.leaf_testers {
            scratch
                .leaf_masks
                .push(tester.rejected_mask(p, alpha, &mut scratch.sort));
        }
        psi.clear();
        psi.resize(self.spec.n as usize, false);
        for &id in &self.topological {
            let idx = id.index();
            let everywhere = self.occurrences[idx]
                .iter()
                .all(|&(leaf, bit)| scratch.leaf_masks[leaf] & (1u64 << bit) != 0);
            let gates = self.spec.gates_of(id);
            let gate_open = gates.is_empty() || gates.iter().any(|g| psi[g.index()]);
            psi[idx] = everywhere && gate_open;
        }
    }

    /// Full evaluation with per-hypothesis explanations.
    pub fn evaluate(&self, p: &PValueVector, alpha: f64) -> Result<DecisionResult> {
        self.check_dimensions(p)?;
        check_level(alpha)?;
        let mut scratch = EvalScratch::default();
        let mut psi = Vec::new();
        self.psi_into(p, alpha, &mut scratch, &mut psi);
        let mut explanations = Vec::with_capacity(self.spec.n as usize);
        for id in self.spec.all_ids() {
            let leaves = self.occurrences[id.index()]
                .iter()
                .map(|&(leaf, bit)| LeafVerdict {
                    leaf: self.plan.leaves[leaf].clone(),
                    rejected: scratch.leaf_masks[leaf] & (1u64 << bit) != 0,
                })
                .collect();
            let gates = self.spec.gates_of(id);
            let gate = if gates.is_empty() {
                None
            } else {
                Some(GateStatus {
                    satisfied_by: gates.iter().copied().find(|g| psi[g.index()]),
                })
            };
            explanations.push(Explanation { id, leaves, gate });
        }
        Ok(DecisionResult {
            alpha,
            local_test: self.test.clone(),
            psi,
            explanations,
        })
    }

    /// Leaf-by-leaf outcomes with diagnostic thresholds.
    pub fn leaf_outcomes(
        &self,
        p: &PValueVector,
        alpha: f64,
    ) -> Result<BTreeMap<IdSet, LeafOutcome>> {
        self.check_dimensions(p)?;
        check_level(alpha)?;
        let mut scratch = Vec::new();
        let mut outcomes = BTreeMap::new();
        for (leaf, tester) in self.plan.leaves.iter().zip(&self.leaf_testers) {
            let mask = tester.rejected_mask(p, alpha, &mut scratch);
            outcomes.insert(
                leaf.clone(),
                LeafOutcome {
                    leaf: leaf.clone(),
                    rejected: tester.mask_to_set(mask),
                    thresholds: tester.thresholds(p, alpha),
                },
            );
        }
        Ok(outcomes)
    }
}

fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(CoveringError::AlphaOutOfRange {
            value: alpha,
            range: "(0,1]",
        })
    }
}

/// Runs the restricted local test on every leaf of the plan.
pub fn evaluate_leaves(
    plan: &DecompositionPlan,
    test: &LocalTest,
    p: &PValueVector,
    alpha: f64,
    spec: &FamilySpec,
) -> Result<BTreeMap<IdSet, LeafOutcome>> {
    PreparedFamily::new(spec, plan, test)?.leaf_outcomes(p, alpha)
}

/// Combines leaf outcomes into the composed decision vector.
///
/// `outcomes` must cover exactly the plan's leaves.
pub fn combine(
    spec: &FamilySpec,
    plan: &DecompositionPlan,
    outcomes: &BTreeMap<IdSet, LeafOutcome>,
    alpha: f64,
    test: &LocalTest,
) -> Result<DecisionResult> {
    let plan_leaves: std::collections::BTreeSet<&IdSet> = plan.leaves.iter().collect();
    let outcome_leaves: std::collections::BTreeSet<&IdSet> = outcomes.keys().collect();
    if plan_leaves != outcome_leaves {
        return Err(CoveringError::Internal(
            "leaf outcomes do not cover exactly the plan's leaves".into(),
        ));
    }
    let mut psi = vec![false; spec.n as usize];
    for id in spec.topological_order()? {
        let everywhere = plan
            .leaves_containing(id)
            .iter()
            .all(|&leaf_idx| outcomes[&plan.leaves[leaf_idx]].rejected.contains(&id));
        let gates = spec.gates_of(id);
        let gate_open = gates.is_empty() || gates.iter().any(|g| psi[g.index()]);
        psi[id.index()] = everywhere && gate_open;
    }
    let mut explanations = Vec::with_capacity(spec.n as usize);
    for id in spec.all_ids() {
        let leaves = plan
            .leaves_containing(id)
            .iter()
            .map(|&leaf_idx| {
                let leaf = &plan.leaves[leaf_idx];
                LeafVerdict {
                    leaf: leaf.clone(),
                    rejected: outcomes[leaf].rejected.contains(&id),
                }
            })
            .collect();
        let gates = spec.gates_of(id);
        let gate = if gates.is_empty() {
            None
        } else {
            Some(GateStatus {
                satisfied_by: gates.iter().copied().find(|g| psi[g.index()]),
            })
        };
        explanations.push(Explanation { id, leaves, gate });
    }
    Ok(DecisionResult {
        alpha,
        local_test: test.clone(),
        psi,
        explanations,
    })
}

/// Single-call pipeline: decompose, evaluate all leaves, combine.
pub fn test_family(
    spec: &FamilySpec,
    p: &PValueVector,
    alpha: f64,
    test: &LocalTest,
) -> Result<DecisionResult> {
    spec.ensure_valid()?;
    let plan = decompose(spec)?;
    PreparedFamily::new(spec, &plan, test)?.evaluate(p, alpha)
}

/// Smallest alpha at which each hypothesis is rejected, by bisection over
/// (0,1]. Reported at the upper bracket end, so `adj[i] <= alpha` implies
/// rejection at `alpha` exactly; 1 when unrejectable even at alpha = 1.
pub fn adjusted_pvalues(
    spec: &FamilySpec,
    p: &PValueVector,
    test: &LocalTest,
    tolerance: f64,
) -> Result<AdjustedPValues> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(CoveringError::InvalidArgument(format!(
            "bisection tolerance must be positive, got {tolerance}"
        )));
    }
    spec.ensure_valid()?;
    let plan = decompose(spec)?;
    let prepared = PreparedFamily::new(spec, &plan, test)?;
    prepared.check_dimensions(p)?;
    let mut scratch = EvalScratch::default();
    let mut psi = Vec::new();
    let mut adj = vec![1.0f64; spec.n as usize];
    for idx in 0..spec.n as usize {
        prepared.psi_into(p, 1.0, &mut scratch, &mut psi);
        if !psi[idx] {
            adj[idx] = 1.0;
            continue;
        }
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        for _ in 0..MAX_BISECTION_ITERATIONS {
            if hi - lo <= tolerance {
                break;
            }
            let mid = 0.5 * (lo + hi);
            prepared.psi_into(p, mid, &mut scratch, &mut psi);
            if psi[idx] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        adj[idx] = hi;
    }
    Ok(AdjustedPValues { adj, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::id_set;

    fn example1() -> FamilySpec {
        FamilySpec::from_gates(vec![vec![], vec![], vec![1, 2]])
    }

    fn example2() -> FamilySpec {
        FamilySpec::from_gates(vec![vec![], vec![], vec![1], vec![2], vec![3], vec![4]])
    }

    fn pv(values: &[f64]) -> PValueVector {
        PValueVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn leaf_outcomes_for_parallel_gatekeeper() {
        let spec = example1();
        let plan = decompose(&spec).unwrap();
        let outcomes = evaluate_leaves(
            &plan,
            &LocalTest::Bonferroni,
            &pv(&[0.01, 0.5, 0.02]),
            0.05,
            &spec,
        )
        .unwrap();
        assert_eq!(outcomes[&id_set(&[1, 2])].rejected, id_set(&[1]));
        assert_eq!(outcomes[&id_set(&[2, 3])].rejected, id_set(&[3]));
        assert_eq!(outcomes[&id_set(&[1, 3])].rejected, id_set(&[1, 3]));
        let thresholds = &outcomes[&id_set(&[1, 2])].thresholds;
        assert!((thresholds[&HypothesisId::new(1)] - 0.025).abs() < 1e-15);
    }

    #[test]
    fn all_ones_reject_nothing() {
        let spec = example1();
        let plan = decompose(&spec).unwrap();
        let outcomes = evaluate_leaves(
            &plan,
            &LocalTest::Bonferroni,
            &pv(&[1.0, 1.0, 1.0]),
            0.05,
            &spec,
        )
        .unwrap();
        assert!(outcomes.values().all(|o| o.rejected.is_empty()));
        let decision = combine(&spec, &plan, &outcomes, 0.05, &LocalTest::Bonferroni).unwrap();
        assert_eq!(decision.psi, vec![false, false, false]);
    }

    #[test]
    fn gate_satisfied_decision() {
        let spec = example1();
        let result =
            test_family(&spec, &pv(&[0.01, 0.5, 0.02]), 0.05, &LocalTest::Bonferroni).unwrap();
        assert_eq!(result.psi, vec![true, false, true]);
        let gate = result.explanations[2].gate.as_ref().unwrap();
        assert_eq!(gate.satisfied_by, Some(HypothesisId::new(1)));
    }

    #[test]
    fn gate_blocked_decision() {
        // H3 clears both of its leaves but neither gate member is rejected.
        let spec = example1();
        let result =
            test_family(&spec, &pv(&[0.9, 0.9, 0.001]), 0.05, &LocalTest::Bonferroni).unwrap();
        assert_eq!(result.psi, vec![false, false, false]);
        let expl = &result.explanations[2];
        assert!(expl.leaves.iter().all(|v| v.rejected));
        assert_eq!(expl.gate.as_ref().unwrap().satisfied_by, None);
    }

    #[test]
    fn serial_chain_decision() {
        let spec = example2();
        let result = test_family(
            &spec,
            &pv(&[0.001, 0.001, 0.001, 0.9, 0.001, 0.9]),
            0.05,
            &LocalTest::Bonferroni,
        )
        .unwrap();
        assert_eq!(result.psi, vec![true, true, true, false, true, false]);
        // H5's gate is satisfied by H3, which in turn needed H1.
        let gate = result.explanations[4].gate.as_ref().unwrap();
        assert_eq!(gate.satisfied_by, Some(HypothesisId::new(3)));
    }

    #[test]
    fn all_zero_pvalues_reject_everything() {
        for spec in [example1(), example2()] {
            let p = pv(&vec![0.0; spec.n as usize]);
            let result = test_family(&spec, &p, 0.05, &LocalTest::Holm).unwrap();
            assert!(result.psi.iter().all(|r| *r));
        }
    }

    #[test]
    fn gate_free_family_equals_bare_local_test() {
        let spec = FamilySpec::from_gates(vec![vec![], vec![], vec![], vec![]]);
        let p = pv(&[0.001, 0.02, 0.009, 0.2]);
        let result = test_family(&spec, &p, 0.05, &LocalTest::Holm).unwrap();
        let bare =
            crate::local::run_local_test(&LocalTest::Holm, &spec.all_ids(), &p, 0.05).unwrap();
        assert_eq!(result.rejected_ids(), bare);
    }

    #[test]
    fn adjusted_pvalues_parallel_gatekeeper() {
        let spec = example1();
        let adjusted =
            adjusted_pvalues(&spec, &pv(&[0.01, 0.5, 0.02]), &LocalTest::Bonferroni, 1e-9).unwrap();
        assert!((adjusted.adj[0] - 0.02).abs() < 1e-6);
        assert!((adjusted.adj[1] - 1.0).abs() < 1e-12);
        assert!((adjusted.adj[2] - 0.04).abs() < 1e-6);
    }

    #[test]
    fn adjusted_pvalues_degenerate_ends() {
        let spec = example1();
        let adjusted =
            adjusted_pvalues(&spec, &pv(&[0.0, 0.0, 0.0]), &LocalTest::Bonferroni, 1e-9).unwrap();
        assert!(adjusted.adj.iter().all(|a| *a <= 1e-9));

        let adjusted =
            adjusted_pvalues(&spec, &pv(&[1.0, 1.0, 1.0]), &LocalTest::Bonferroni, 1e-9).unwrap();
        assert!(adjusted.adj.iter().all(|a| (*a - 1.0).abs() < 1e-12));
    }

    #[test]
    fn decision_json_shape() {
        let spec = example1();
        let result =
            test_family(&spec, &pv(&[0.01, 0.5, 0.02]), 0.05, &LocalTest::Bonferroni).unwrap();
        let json = result.to_json();
        assert!(json.starts_with(
            "{\"alpha\":0.05,\"local_test\":\"bonferroni\",\"psi\":[true,false,true],"
        ));
        assert!(json.contains(
            "\"explanations\":[{\"id\":1,\"leaves\":[{\"leaf\":[1,2],\"rejected\":true}"
        ));
        assert!(json.contains("\"gate\":null"));
        assert!(json.contains("\"gate\":{\"satisfied_by\":1}"));
    }

    #[test]
    fn combine_requires_exact_leaf_cover() {
        let spec = example1();
        let plan = decompose(&spec).unwrap();
        let mut outcomes = evaluate_leaves(
            &plan,
            &LocalTest::Bonferroni,
            &pv(&[0.01, 0.5, 0.02]),
            0.05,
            &spec,
        )
        .unwrap();
        outcomes.remove(&id_set(&[1, 2]));
        let err = combine(&spec, &plan, &outcomes, 0.05, &LocalTest::Bonferroni).unwrap_err();
        assert!(matches!(err, CoveringError::Internal(_)));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = example1();
        let err = test_family(&spec, &pv(&[0.5, 0.5]), 0.05, &LocalTest::Bonferroni).unwrap_err();
        assert!(matches!(err, CoveringError::DimensionMismatch { .. }));
    }
}
