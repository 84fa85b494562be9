//! Simulation checks that every local test keeps its familywise error
//! promise on its own, leaf-sized problems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use covering_core::{run_local_test, HypothesisId, IdSet, LocalTest, PValueVector};

/// Every local test kind, shaped for members 1..=m.
fn all_kinds(m: u32) -> Vec<LocalTest> {
    let order: Vec<String> = (1..=m).map(|i| i.to_string()).collect();
    let weights: Vec<String> = (0..m).map(|_| format!("{}", 1.0 / m as f64)).collect();
    vec![
        LocalTest::Bonferroni,
        LocalTest::Holm,
        LocalTest::hochberg_acknowledged(),
        format!("fixed:{}", order.join(",")).parse().unwrap(),
        format!("wbonf:{}", weights.join(",")).parse().unwrap(),
    ]
}

/// For independent uniforms on the true nulls and near-zero p-values on the
/// false ones, the estimated probability of rejecting any true null must
/// stay under alpha + 3se for every test kind and every null subset.
#[test]
fn leaf_level_fwer_is_controlled_for_every_null_subset() {
    let alpha = 0.05;
    let reps = 20_000u64;
    let mut failures = Vec::new();
    for m in 1u32..=4 {
        let members: IdSet = (1..=m).map(HypothesisId::new).collect();
        for null_mask in 1u32..(1 << m) {
            for (kind_idx, test) in all_kinds(m).iter().enumerate() {
                let mut hits = 0u64;
                let seed = ((m as u64) << 32) | ((null_mask as u64) << 8) | kind_idx as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..reps {
                    let values: Vec<f64> = (0..m)
                        .map(|i| {
                            if null_mask & (1 << i) != 0 {
                                rng.gen::<f64>()
                            } else {
                                rng.gen::<f64>() * 1e-9
                            }
                        })
                        .collect();
                    let p = PValueVector::new(values).unwrap();
                    let rejected = run_local_test(test, &members, &p, alpha).unwrap();
                    if rejected
                        .iter()
                        .any(|id| null_mask & (1 << (id.get() - 1)) != 0)
                    {
                        hits += 1;
                    }
                }
                let fwer_hat = hits as f64 / reps as f64;
                let se = (fwer_hat * (1.0 - fwer_hat) / reps as f64).sqrt();
                if fwer_hat > alpha + 3.0 * se {
                    failures.push(format!(
                        "m={m} nulls={null_mask:#b} {test}: fwer_hat={fwer_hat:.4}"
                    ));
                }
            }
        }
    }
    assert!(failures.is_empty(), "leaf FWER violations: {failures:?}");
}

/// Sharding repetitions across workers must not change a single count:
/// a one-thread pool and the default pool have to agree byte for byte.
#[test]
fn worker_sharding_does_not_change_reports() {
    let spec = covering_core::FamilySpec::from_gates(vec![vec![], vec![], vec![1, 2]]);
    let scenario = covering_core::ScenarioConfig::exchangeable(
        vec![true, false, true],
        vec![0.0, 5.0, 0.0],
        0.5,
        30_000,
        99,
        0.05,
    )
    .unwrap();
    let parallel = covering_core::estimate_fwer(&spec, &scenario, &LocalTest::Holm).unwrap();
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| covering_core::estimate_fwer(&spec, &scenario, &LocalTest::Holm).unwrap());
    assert_eq!(parallel.to_json(), single.to_json());
}

/// Closed testing with Bonferroni locals is exactly Holm, here spot-checked
/// on dense grids for pairs and triples (the acceptance suite runs the full
/// resolution sweep up to quintuples).
#[test]
fn closure_oracle_equals_holm_on_small_grids() {
    fn sweep(m: u32, alpha: f64) {
        let members: IdSet = (1..=m).map(HypothesisId::new).collect();
        let grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let mut indices = vec![0usize; m as usize];
        'cases: loop {
            let values: Vec<f64> = indices.iter().map(|&i| grid[i]).collect();
            let p = PValueVector::new(values.clone()).unwrap();
            let holm = run_local_test(&LocalTest::Holm, &members, &p, alpha).unwrap();
            let closed = covering_core::closure_oracle(&p, alpha, &members).unwrap();
            assert_eq!(holm, closed, "mismatch at {values:?}");
            // Odometer over the grid.
            let mut pos = 0;
            loop {
                if pos == indices.len() {
                    break 'cases;
                }
                indices[pos] += 1;
                if indices[pos] < grid.len() {
                    break;
                }
                indices[pos] = 0;
                pos += 1;
            }
        }
    }
    sweep(2, 0.05);
    sweep(3, 0.05);
    sweep(3, 0.37);
}
