//! Recursive covering decomposition of a gated family.
//!
//! A family F splits along the canonical rule: I collects every member whose
//! full gate set lies inside F, J collects the undominated transitive gate
//! ancestors of I inside F, and F is replaced by the |J|+1 children F\I and
//! F\{j} for each j in J. Families with no internally dominated member are
//! leaves and get tested directly. Structurally identical families reached
//! through different branches decompose once.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{CoveringError, Result};
use crate::family::{format_id_set, FamilySpec, HypothesisId, IdSet};

/// One covering split of a family into overlapping children.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoveringStep {
    /// The family being split, ascending ids.
    pub family: IdSet,
    /// Members dominated within the family (gate sets fully inside).
    #[serde(rename = "I")]
    pub dominated: IdSet,
    /// Undominated gate ancestors of `dominated` inside the family.
    #[serde(rename = "J")]
    pub dominating: IdSet,
    /// `family \ dominated` first, then `family \ {j}` for each j ascending.
    pub children: Vec<IdSet>,
}

/// Result of attempting one covering split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    /// The family splits further.
    Step(CoveringStep),
    /// No member is dominated within the family; test it directly.
    Leaf,
}

/// The full decomposition: memoized steps and deduplicated leaves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecompositionPlan {
    #[serde(skip)]
    pub root: IdSet,
    /// Leaf sub-families in lexicographic order, duplicate-free.
    pub leaves: Vec<IdSet>,
    /// Every covering step keyed by the family it splits.
    #[serde(serialize_with = "serialize_steps")]
    pub steps: BTreeMap<IdSet, CoveringStep>,
    /// Hypothesis id -> indices into `leaves` of the leaves containing it.
    #[serde(skip)]
    pub membership: BTreeMap<HypothesisId, Vec<usize>>,
}

fn serialize_steps<S>(
    steps: &BTreeMap<IdSet, CoveringStep>,
    serializer: S,
) -> std::result::Result<S::Ok, S::Error>
where
    S: serde::Serializer,
{
    serializer.collect_seq(steps.values())
}

impl DecompositionPlan {
    /// Leaf indices for the leaves containing `id`.
    pub fn leaves_containing(&self, id: HypothesisId) -> &[usize] {
        self.membership.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Canonical JSON form; identical plans serialize to identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serialization cannot fail")
    }
}

/// Members of `family` whose entire (nonempty) gate set lies inside `family`.
pub fn dominated_within(spec: &FamilySpec, family: &IdSet) -> IdSet {
    family
        .iter()
        .filter(|id| {
            let gates = spec.gates_of(**id);
            !gates.is_empty() && gates.is_subset(family)
        })
        .copied()
        .collect()
}

/// Applies the canonical covering rule to one family.
pub fn covering_step(spec: &FamilySpec, family: &IdSet) -> Result<StepOutcome> {
    let dominated = dominated_within(spec, family);
    if dominated.is_empty() {
        return Ok(StepOutcome::Leaf);
    }
    let remainder: IdSet = family.difference(&dominated).copied().collect();
    let dominating: IdSet = spec
        .gate_ancestors(&dominated)
        .intersection(&remainder)
        .copied()
        .collect();
    if dominating.is_empty() {
        // Acyclic validated specs always push some ancestor outside I; an
        // empty J here means the spec was mutated behind our back.
        return Err(CoveringError::Internal(format!(
            "family {} has dominated members {} but no dominating ancestors",
            format_id_set(family),
            format_id_set(&dominated)
        )));
    }
    let mut children = Vec::with_capacity(dominating.len() + 1);
    children.push(remainder);
    for j in &dominating {
        children.push(family.iter().copied().filter(|m| m != j).collect());
    }
    Ok(StepOutcome::Step(CoveringStep {
        family: family.clone(),
        dominated,
        dominating,
        children,
    }))
}

/// Decomposes the whole family {1..n} down to its leaf sub-families.
pub fn decompose(spec: &FamilySpec) -> Result<DecompositionPlan> {
    spec.ensure_valid()?;
    let root = spec.all_ids();
    let mut steps: BTreeMap<IdSet, CoveringStep> = BTreeMap::new();
    let mut leaves: std::collections::BTreeSet<IdSet> = std::collections::BTreeSet::new();
    let mut stack = vec![root.clone()];
    while let Some(family) = stack.pop() {
        if steps.contains_key(&family) || leaves.contains(&family) {
            continue;
        }
        match covering_step(spec, &family)? {
            StepOutcome::Leaf => {
                leaves.insert(family);
            }
            StepOutcome::Step(step) => {
                stack.extend(step.children.iter().cloned());
                steps.insert(family, step);
            }
        }
    }
    let leaves: Vec<IdSet> = leaves.into_iter().collect();
    let mut membership: BTreeMap<HypothesisId, Vec<usize>> = BTreeMap::new();
    for (idx, leaf) in leaves.iter().enumerate() {
        for id in leaf {
            membership.entry(*id).or_default().push(idx);
        }
    }
    Ok(DecompositionPlan {
        root,
        leaves,
        steps,
        membership,
    })
}

/// Symbolically certifies the coverage condition of one step: every dominated
/// member's rejection demand resolves inside the dominating set after
/// repeated gate expansion.
pub fn verify_coverage(spec: &FamilySpec, step: &CoveringStep) -> bool {
    fn expands_into_dominating(
        spec: &FamilySpec,
        id: HypothesisId,
        dominated: &IdSet,
        dominating: &IdSet,
    ) -> bool {
        let gates = spec.gates_of(id);
        if gates.is_empty() {
            return false;
        }
        gates.iter().all(|g| {
            if dominating.contains(g) {
                true
            } else if dominated.contains(g) {
                expands_into_dominating(spec, *g, dominated, dominating)
            } else {
                false
            }
        })
    }
    step.dominated
        .iter()
        .all(|i| expands_into_dominating(spec, *i, &step.dominated, &step.dominating))
}

/// Renders the plan as a DOT digraph: one cluster for the decomposition tree
/// (leaf families boxed), one for the gate DAG.
pub fn export_dot(plan: &DecompositionPlan, spec: &FamilySpec) -> String {
    fn node_name(family: &IdSet) -> String {
        let ids: Vec<String> = family.iter().map(|id| id.to_string()).collect();
        format!("f_{}", ids.join("_"))
    }

    let mut out = String::from("digraph covering {\n");
    out.push_str("  rankdir=TB;\n");
    out.push_str("  subgraph cluster_decomposition {\n");
    out.push_str("    label=\"covering decomposition\";\n");
    let mut families: Vec<&IdSet> = plan.steps.keys().collect();
    families.extend(plan.leaves.iter());
    families.sort();
    families.dedup();
    for family in &families {
        let name = node_name(family);
        let label = format_id_set(family);
        if plan.steps.contains_key(*family) {
            let _ = writeln!(out, "    {name} [label=\"{label}\"];");
        } else {
            let _ = writeln!(
                out,
                "    {name} [label=\"{label}\", shape=box, style=filled, fillcolor=lightgrey];"
            );
        }
    }
    for step in plan.steps.values() {
        let parent = node_name(&step.family);
        for child in &step.children {
            let _ = writeln!(out, "    {parent} -> {};", node_name(child));
        }
    }
    out.push_str("  }\n");
    out.push_str("  subgraph cluster_gates {\n");
    out.push_str("    label=\"gate graph\";\n");
    for id in spec.all_ids() {
        let label = match spec.label_of(id) {
            Some(text) => format!("H{id}: {}", text.replace('"', "\\\"")),
            None => format!("H{id}"),
        };
        let _ = writeln!(out, "    h{id} [label=\"{label}\"];");
    }
    for id in spec.all_ids() {
        for gate in spec.gates_of(id) {
            let _ = writeln!(out, "    h{gate} -> h{id};");
        }
    }
    out.push_str("  }\n}\n");
    out
}

/// Plain-text summary used by the CLI.
pub fn plan_to_text(plan: &DecompositionPlan) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "decomposition of {}: {} covering step(s), {} leaf sub-families",
        format_id_set(&plan.root),
        plan.steps.len(),
        plan.leaves.len()
    );
    for step in plan.steps.values() {
        let children: Vec<String> = step.children.iter().map(format_id_set).collect();
        let _ = writeln!(
            out,
            "step {}: I={} J={} -> {}",
            format_id_set(&step.family),
            format_id_set(&step.dominated),
            format_id_set(&step.dominating),
            children.join(" ")
        );
    }
    for leaf in &plan.leaves {
        let _ = writeln!(out, "leaf {}", format_id_set(leaf));
    }
    out
}
