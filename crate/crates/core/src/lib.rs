//! Multiple hypothesis testing for gate-structured families.
//!
//! A family of null hypotheses with gate (dominance) declarations is
//! decomposed into overlapping leaf sub-families, each leaf is tested with an
//! ordinary alpha-level multiple test, and the verdicts recombine into one
//! familywise-error-controlling decision per hypothesis: rejected in every
//! leaf that contains it, and only after some gate member fell first.
//!
//! The crate provides:
//! - [`family`]: the family model, its textual grammar and validation;
//! - [`decomposition`]: the recursive covering decomposition and DOT export;
//! - [`local`]: Bonferroni, Holm, Hochberg, fixed-sequence and weighted
//!   Bonferroni leaf tests;
//! - [`decision`]: the composed decision rule and adjusted p-values;
//! - [`sim`]: Monte Carlo familywise error verification, subset-wise sweeps
//!   and a closed-testing comparison oracle.

pub mod decision;
pub mod decomposition;
pub mod error;
pub mod family;
pub mod local;
pub mod sim;

pub use decision::{
    adjusted_pvalues, combine, evaluate_leaves, test_family, AdjustedPValues, DecisionResult,
    Explanation, GateStatus, LeafOutcome, LeafVerdict, PreparedFamily,
};
pub use decomposition::{
    covering_step, decompose, dominated_within, export_dot, plan_to_text, verify_coverage,
    CoveringStep, DecompositionPlan, StepOutcome,
};
pub use error::{CoveringError, Result};
pub use family::{
    format_id_set, id_set, parse_family_spec, FamilySpec, HypothesisId, IdSet, ValidationReport,
    Violation,
};
pub use local::{run_local_test, LocalTest, PValueVector};
pub use sim::{
    cholesky, closure_oracle, estimate_fwer, exchangeable, normal_cdf, normal_sf, parse_scenario,
    power_report, sample_pvalues, subsetwise_check, FwerReport, PowerReport, Sampler,
    ScenarioConfig, SubsetCheck, SubsetwiseReport,
};
