//! Property suites over randomly generated gated families.
//!
//! Specs are built acyclic by construction: hypotheses are laid out in a
//! random order and each one may only gate on hypotheses earlier in that
//! order.

use proptest::prelude::*;

use covering_core::{
    adjusted_pvalues, closure_oracle, decompose, dominated_within, parse_family_spec,
    run_local_test, test_family, verify_coverage, FamilySpec, HypothesisId, IdSet, LocalTest,
    PValueVector,
};

fn arb_spec(max_n: u32) -> impl Strategy<Value = FamilySpec> {
    (1..=max_n).prop_flat_map(|n| {
        let order = Just((1..=n).collect::<Vec<u32>>()).prop_shuffle();
        let masks = proptest::collection::vec(any::<u32>(), n as usize);
        (order, masks).prop_map(move |(order, masks)| {
            let mut gates = vec![Vec::new(); n as usize];
            for position in 1..n as usize {
                let mask = masks[position] % (1u32 << position);
                gates[(order[position] - 1) as usize] = (0..position)
                    .filter(|j| mask & (1 << j) != 0)
                    .map(|j| order[j])
                    .collect();
            }
            FamilySpec::from_gates(gates)
        })
    })
}

fn arb_spec_and_pvalues(max_n: u32) -> impl Strategy<Value = (FamilySpec, PValueVector)> {
    arb_spec(max_n).prop_flat_map(|spec| {
        let n = spec.n as usize;
        (
            Just(spec),
            proptest::collection::vec(0.0f64..=1.0, n).prop_map(|v| PValueVector::new(v).unwrap()),
        )
    })
}

fn rejected_set(spec: &FamilySpec, p: &PValueVector, alpha: f64, test: &LocalTest) -> IdSet {
    test_family(spec, p, alpha, test).unwrap().rejected_ids()
}

proptest! {
    #[test]
    fn family_text_round_trips(spec in arb_spec(6), alpha in proptest::option::of(0.001f64..0.999)) {
        let mut spec = spec;
        spec.alpha_default = alpha;
        spec.labels[0] = Some("first endpoint \"quoted\"".into());
        let reparsed = parse_family_spec(&spec.to_text()).unwrap();
        prop_assert_eq!(spec, reparsed);
    }

    #[test]
    fn gate_ancestors_is_monotone(spec in arb_spec(6), mask1 in any::<u32>(), mask2 in any::<u32>()) {
        let n = spec.n;
        let small = mask1 % (1 << n);
        let large = small | (mask2 % (1 << n));
        let seed_of = |mask: u32| -> IdSet {
            (0..n).filter(|i| mask & (1 << i) != 0).map(|i| HypothesisId::new(i + 1)).collect()
        };
        let a = spec.gate_ancestors(&seed_of(small));
        let b = spec.gate_ancestors(&seed_of(large));
        prop_assert!(a.is_subset(&b));
    }

    #[test]
    fn plans_are_sound(spec in arb_spec(6)) {
        let plan = decompose(&spec).unwrap();

        // Leaf closure: nothing is dominated inside a leaf.
        for leaf in &plan.leaves {
            prop_assert!(dominated_within(&spec, leaf).is_empty());
        }
        // No duplicate leaves, every hypothesis reaches one.
        let distinct: std::collections::BTreeSet<_> = plan.leaves.iter().collect();
        prop_assert_eq!(distinct.len(), plan.leaves.len());
        for id in spec.all_ids() {
            prop_assert!(!plan.leaves_containing(id).is_empty());
        }
        // Steps cover with strictly shrinking children and certified coverage.
        for step in plan.steps.values() {
            prop_assert!(verify_coverage(&spec, step));
            prop_assert_eq!(step.children.len(), step.dominating.len() + 1);
            for child in &step.children {
                prop_assert!(child.is_subset(&step.family));
                prop_assert!(child.len() < step.family.len());
            }
        }
        // Determinism down to the serialized bytes.
        let again = decompose(&spec).unwrap();
        prop_assert_eq!(plan.to_json(), again.to_json());
    }

    #[test]
    fn local_tests_are_monotone(
        p in proptest::collection::vec(0.0f64..=1.0, 5),
        alpha_lo in 0.01f64..0.5,
        alpha_gap in 0.0f64..0.49,
        shrink_idx in 0usize..5,
        shrink_factor in 0.0f64..1.0,
    ) {
        let members: IdSet = (1..=5).map(HypothesisId::new).collect();
        let p = PValueVector::new(p).unwrap();
        let alpha_hi = alpha_lo + alpha_gap;
        let tests = [
            LocalTest::Bonferroni,
            LocalTest::Holm,
            LocalTest::hochberg_acknowledged(),
            "fixed:2,4,1,5,3".parse::<LocalTest>().unwrap(),
            "wbonf:0.4,0.1,0.2,0.2,0.1".parse::<LocalTest>().unwrap(),
        ];
        for test in &tests {
            // Alpha-monotonicity.
            let lo = run_local_test(test, &members, &p, alpha_lo).unwrap();
            let hi = run_local_test(test, &members, &p, alpha_hi).unwrap();
            prop_assert!(lo.is_subset(&hi), "{test} not alpha-monotone");

            // p-monotonicity under a single-coordinate decrease.
            let mut smaller = p.as_slice().to_vec();
            smaller[shrink_idx] *= shrink_factor;
            let smaller = PValueVector::new(smaller).unwrap();
            let before = run_local_test(test, &members, &p, alpha_lo).unwrap();
            let after = run_local_test(test, &members, &smaller, alpha_lo).unwrap();
            prop_assert!(before.is_subset(&after), "{test} not p-monotone");
        }
    }

    #[test]
    fn rejection_chain_bonferroni_holm_hochberg(
        p in proptest::collection::vec(0.0f64..=1.0, 4),
        alpha in 0.01f64..0.99,
    ) {
        let members: IdSet = (1..=4).map(HypothesisId::new).collect();
        let p = PValueVector::new(p).unwrap();
        let bonferroni = run_local_test(&LocalTest::Bonferroni, &members, &p, alpha).unwrap();
        let holm = run_local_test(&LocalTest::Holm, &members, &p, alpha).unwrap();
        let hochberg =
            run_local_test(&LocalTest::hochberg_acknowledged(), &members, &p, alpha).unwrap();
        prop_assert!(bonferroni.is_subset(&holm));
        prop_assert!(holm.is_subset(&hochberg));
    }

    #[test]
    fn holm_equals_closure_oracle(
        p in proptest::collection::vec(0.0f64..=1.0, 5),
        alpha in 0.01f64..0.99,
    ) {
        let members: IdSet = (1..=5).map(HypothesisId::new).collect();
        let p = PValueVector::new(p).unwrap();
        let holm = run_local_test(&LocalTest::Holm, &members, &p, alpha).unwrap();
        let closed = closure_oracle(&p, alpha, &members).unwrap();
        prop_assert_eq!(holm, closed);
    }

    #[test]
    fn pipeline_invariants(( spec, p) in arb_spec_and_pvalues(6), alpha in 0.01f64..0.5) {
        let result = test_family(&spec, &p, alpha, &LocalTest::Holm).unwrap();

        // Gate coherence: a rejected gated hypothesis has a rejected gate.
        for id in spec.all_ids() {
            if result.psi[id.index()] && !spec.gates_of(id).is_empty() {
                prop_assert!(
                    spec.gates_of(id).iter().any(|g| result.psi[g.index()]),
                    "gate coherence violated at H{id}"
                );
            }
        }

        // Leaf bound: rejection requires rejection in every containing leaf.
        for explanation in &result.explanations {
            if result.psi[explanation.id.index()] {
                prop_assert!(explanation.leaves.iter().all(|v| v.rejected));
            }
        }

        // Top-level max identity: a rejection implies a rejection outside the
        // root step's dominated set.
        let plan = decompose(&spec).unwrap();
        if let Some(root_step) = plan.steps.get(&spec.all_ids()) {
            let any = result.psi.iter().any(|r| *r);
            let any_outside = spec
                .all_ids()
                .iter()
                .filter(|id| !root_step.dominated.contains(id))
                .any(|id| result.psi[id.index()]);
            prop_assert_eq!(any, any_outside);
        }
    }

    #[test]
    fn pipeline_is_monotone(
        (spec, p) in arb_spec_and_pvalues(5),
        alpha_lo in 0.01f64..0.5,
        alpha_gap in 0.0f64..0.45,
        shrink_seed in any::<u64>(),
        shrink_factor in 0.0f64..1.0,
    ) {
        let test = LocalTest::Bonferroni;
        let lo = rejected_set(&spec, &p, alpha_lo, &test);
        let hi = rejected_set(&spec, &p, alpha_lo + alpha_gap, &test);
        prop_assert!(lo.is_subset(&hi));

        let idx = (shrink_seed % spec.n as u64) as usize;
        let mut smaller = p.as_slice().to_vec();
        smaller[idx] *= shrink_factor;
        let smaller = PValueVector::new(smaller).unwrap();
        let after = rejected_set(&spec, &smaller, alpha_lo, &test);
        prop_assert!(lo.is_subset(&after));
    }

    #[test]
    fn adjusted_pvalues_are_consistent(
        (spec, p) in arb_spec_and_pvalues(5),
        alphas in proptest::collection::vec(0.001f64..0.999, 4),
    ) {
        let test = LocalTest::Holm;
        let tol = 1e-9;
        let adjusted = adjusted_pvalues(&spec, &p, &test, tol).unwrap();
        for (idx, adj) in adjusted.adj.iter().enumerate() {
            // Bounded below by the raw p-value, above by one.
            prop_assert!(*adj >= p.as_slice()[idx] - tol);
            prop_assert!(*adj <= 1.0);
        }
        for alpha in alphas {
            let result = test_family(&spec, &p, alpha, &test).unwrap();
            for idx in 0..spec.n as usize {
                if adjusted.adj[idx] <= alpha {
                    prop_assert!(result.psi[idx], "adj <= alpha must imply rejection");
                }
                if result.psi[idx] {
                    prop_assert!(
                        adjusted.adj[idx] <= alpha + tol,
                        "rejection must imply adj <= alpha within tol"
                    );
                }
            }
        }
    }

    #[test]
    fn adjusted_pvalues_bracket_raw_under_every_test_kind(
        (spec, p) in arb_spec_and_pvalues(4),
    ) {
        let n = spec.n;
        let tol = 1e-9;
        let order: Vec<String> = (1..=n).rev().map(|i| i.to_string()).collect();
        let weights: Vec<String> = (0..n).map(|_| (1.0 / n as f64).to_string()).collect();
        let tests: Vec<LocalTest> = vec![
            LocalTest::Bonferroni,
            LocalTest::Holm,
            LocalTest::hochberg_acknowledged(),
            format!("fixed:{}", order.join(",")).parse().unwrap(),
            format!("wbonf:{}", weights.join(",")).parse().unwrap(),
        ];
        for test in &tests {
            let adjusted = adjusted_pvalues(&spec, &p, test, tol).unwrap();
            for (idx, adj) in adjusted.adj.iter().enumerate() {
                prop_assert!(*adj >= p.as_slice()[idx] - tol, "{test}");
                prop_assert!(*adj <= 1.0, "{test}");
            }
        }
    }
}
