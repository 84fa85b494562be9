//! Monte Carlo verification of familywise error control.
//!
//! Test statistics are jointly normal: z = delta + L * g with L the Cholesky
//! factor of the correlation matrix and g independent standard normals drawn
//! from a (seed, repetition)-keyed stream. One-sided upper p-values feed the
//! composed procedure; repetitions are independent and may be sharded across
//! workers without changing any count.

mod chol;
mod closure;
mod normal;

pub use chol::{cholesky, exchangeable, PIVOT_THRESHOLD};
pub use closure::{closure_oracle, MAX_CLOSURE_MEMBERS};
pub use normal::{erfc, normal_cdf, normal_sf};

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::decision::{EvalScratch, PreparedFamily};
use crate::decomposition::decompose;
use crate::error::{CoveringError, Result};
use crate::family::{FamilySpec, HypothesisId, IdSet};
use crate::local::{LocalTest, PValueVector};

/// Largest family for exhaustive subset-wise verification (2^n - 1 subsets).
pub const MAX_SUBSETWISE_HYPOTHESES: u32 = 12;

/// Truth configuration, effect sizes and sampling parameters for one
/// Monte Carlo study.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// true = the null hypothesis holds.
    pub truth: Vec<bool>,
    /// Mean shift of the test statistic where the null is false; forced to
    /// zero where it is true.
    pub effect: Vec<f64>,
    /// Correlation matrix of the test statistics.
    pub correlation: Vec<Vec<f64>>,
    pub reps: u64,
    pub seed: u64,
    pub alpha: f64,
}

impl ScenarioConfig {
    pub fn new(
        truth: Vec<bool>,
        effect: Vec<f64>,
        correlation: Vec<Vec<f64>>,
        reps: u64,
        seed: u64,
        alpha: f64,
    ) -> Result<Self> {
        let n = truth.len();
        if n == 0 {
            return Err(CoveringError::InvalidScenario(
                "truth vector must be nonempty".into(),
            ));
        }
        if effect.len() != n {
            return Err(CoveringError::DimensionMismatch {
                expected: n,
                actual: effect.len(),
                context: "effect vector vs truth vector".into(),
            });
        }
        if correlation.len() != n {
            return Err(CoveringError::DimensionMismatch {
                expected: n,
                actual: correlation.len(),
                context: "correlation matrix vs truth vector".into(),
            });
        }
        for (idx, delta) in effect.iter().enumerate() {
            if !delta.is_finite() || *delta < 0.0 {
                return Err(CoveringError::InvalidScenario(format!(
                    "effect for hypothesis {} must be a nonnegative real, got {delta}",
                    idx + 1
                )));
            }
        }
        if reps < 1 {
            return Err(CoveringError::InvalidScenario("reps must be >= 1".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CoveringError::AlphaOutOfRange {
                value: alpha,
                range: "(0,1)",
            });
        }
        // Symmetry, unit diagonal and positive definiteness.
        chol::cholesky(&correlation)?;
        let mut effect = effect;
        for (is_null, delta) in truth.iter().zip(effect.iter_mut()) {
            if *is_null {
                *delta = 0.0;
            }
        }
        Ok(ScenarioConfig {
            truth,
            effect,
            correlation,
            reps,
            seed,
            alpha,
        })
    }

    /// Convenience constructor with an exchangeable correlation.
    pub fn exchangeable(
        truth: Vec<bool>,
        effect: Vec<f64>,
        rho: f64,
        reps: u64,
        seed: u64,
        alpha: f64,
    ) -> Result<Self> {
        let n = truth.len();
        ScenarioConfig::new(truth, effect, chol::exchangeable(n, rho), reps, seed, alpha)
    }

    pub fn n(&self) -> usize {
        self.truth.len()
    }
}

/// Deterministic per-repetition substream: identical (seed, rep) pairs give
/// identical draws no matter how repetitions are sharded.
fn rep_rng(seed: u64, rep_index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&rep_index.to_le_bytes());
    key[16..24].copy_from_slice(b"covering");
    ChaCha8Rng::from_seed(key)
}

/// Scenario bound to its Cholesky factor, ready to draw repetitions.
pub struct Sampler<'a> {
    scenario: &'a ScenarioConfig,
    factor: Vec<Vec<f64>>,
}

impl<'a> Sampler<'a> {
    pub fn new(scenario: &'a ScenarioConfig) -> Result<Self> {
        Ok(Sampler {
            scenario,
            factor: chol::cholesky(&scenario.correlation)?,
        })
    }

    /// Draws one repetition into `p` (one-sided upper p-values).
    #[allow(clippy::needless_range_loop)]
    pub fn sample_into(&self, rep_index: u64, gaussian: &mut Vec<f64>, p: &mut PValueVector) {
        let n = self.scenario.n();
        let mut rng = rep_rng(self.scenario.seed, rep_index);
        gaussian.clear();
        for _ in 0..n {
            gaussian.push(StandardNormal.sample(&mut rng));
        }
        let values = p.values_mut();
        for i in 0..n {
            let mut z = self.scenario.effect[i];
            for k in 0..=i {
                z += self.factor[i][k] * gaussian[k];
            }
            values[i] = normal_sf(z);
        }
    }
}

/// One repetition's p-values; deterministic in (seed, rep_index).
pub fn sample_pvalues(scenario: &ScenarioConfig, rep_index: u64) -> Result<PValueVector> {
    if rep_index >= scenario.reps {
        return Err(CoveringError::InvalidScenario(format!(
            "rep_index {rep_index} out of range for reps {}",
            scenario.reps
        )));
    }
    let sampler = Sampler::new(scenario)?;
    let mut gaussian = Vec::new();
    let mut p = PValueVector::zeros(scenario.n());
    sampler.sample_into(rep_index, &mut gaussian, &mut p);
    Ok(p)
}

/// Estimated familywise error rate under one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FwerReport {
    pub fwer_hat: f64,
    pub se: f64,
    pub per_hypothesis_rejection_rate: Vec<f64>,
    pub reps: u64,
    pub seed: u64,
    pub alpha: f64,
}

impl FwerReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization cannot fail")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "reps: {}  seed: {}  alpha: {}",
            self.reps, self.seed, self.alpha
        );
        let _ = writeln!(
            out,
            "fwer_hat: {:.6}  se: {:.6}  alpha+3se: {:.6}",
            self.fwer_hat,
            self.se,
            self.alpha + 3.0 * self.se
        );
        let _ = writeln!(out, "per-hypothesis rejection rates:");
        for (idx, rate) in self.per_hypothesis_rejection_rate.iter().enumerate() {
            let _ = writeln!(out, "  H{:<3} {rate:.6}", idx + 1);
        }
        out
    }
}

fn binomial_se(p_hat: f64, reps: u64) -> f64 {
    (p_hat * (1.0 - p_hat) / reps as f64).sqrt()
}

struct McCounts {
    any_true_null_rejection: u64,
    per_hypothesis: Vec<u64>,
}

/// Shards repetitions across workers; counts merge by addition, so the
/// result is identical to a sequential run.
fn monte_carlo_counts(
    prepared: &PreparedFamily<'_>,
    sampler: &Sampler<'_>,
    scenario: &ScenarioConfig,
) -> McCounts {
    let n = scenario.n();
    let alpha = scenario.alpha;
    (0..scenario.reps)
        .into_par_iter()
        .fold(
            || {
                (
                    0u64,
                    vec![0u64; n],
                    EvalScratch::default(),
                    Vec::new(),
                    PValueVector::zeros(n),
                    Vec::new(),
                )
            },
            |(mut any, mut per_hyp, mut scratch, mut gaussian, mut p, mut psi), rep| {
                sampler.sample_into(rep, &mut gaussian, &mut p);
                prepared.psi_into(&p, alpha, &mut scratch, &mut psi);
                let mut hit = false;
                for i in 0..n {
                    if psi[i] {
                        per_hyp[i] += 1;
                        if scenario.truth[i] {
                            hit = true;
                        }
                    }
                }
                if hit {
                    any += 1;
                }
                (any, per_hyp, scratch, gaussian, p, psi)
            },
        )
        .map(|(any, per_hyp, ..)| (any, per_hyp))
        .reduce(
            || (0u64, vec![0u64; n]),
            |(any_a, mut per_a), (any_b, per_b)| {
                for (a, b) in per_a.iter_mut().zip(per_b) {
                    *a += b;
                }
                (any_a + any_b, per_a)
            },
        )
        .into()
}

impl From<(u64, Vec<u64>)> for McCounts {
    fn from((any_true_null_rejection, per_hypothesis): (u64, Vec<u64>)) -> Self {
        McCounts {
            any_true_null_rejection,
            per_hypothesis,
        }
    }
}

/// Runs the composed procedure on every sampled repetition and estimates the
/// probability of rejecting at least one true null.
pub fn estimate_fwer(
    spec: &FamilySpec,
    scenario: &ScenarioConfig,
    test: &LocalTest,
) -> Result<FwerReport> {
    spec.ensure_valid()?;
    if scenario.n() != spec.n as usize {
        return Err(CoveringError::DimensionMismatch {
            expected: spec.n as usize,
            actual: scenario.n(),
            context: "scenario dimension vs family size".into(),
        });
    }
    let plan = decompose(spec)?;
    let prepared = PreparedFamily::new(spec, &plan, test)?;
    let sampler = Sampler::new(scenario)?;
    let counts = monte_carlo_counts(&prepared, &sampler, scenario);
    let reps = scenario.reps;
    let fwer_hat = counts.any_true_null_rejection as f64 / reps as f64;
    Ok(FwerReport {
        fwer_hat,
        se: binomial_se(fwer_hat, reps),
        per_hypothesis_rejection_rate: counts
            .per_hypothesis
            .iter()
            .map(|c| *c as f64 / reps as f64)
            .collect(),
        reps,
        seed: scenario.seed,
        alpha: scenario.alpha,
    })
}

/// One subset's estimate in the subset-wise verification sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetCheck {
    pub subset: IdSet,
    pub fwer_hat: f64,
    pub se: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Exhaustive sweep over every nonempty null configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetwiseReport {
    pub alpha: f64,
    pub reps: u64,
    pub seed: u64,
    pub delta_false: f64,
    pub local_test: LocalTest,
    pub subsets: Vec<SubsetCheck>,
    pub all_pass: bool,
}

impl SubsetwiseReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization cannot fail")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "subset-wise check: alpha={}  reps={}  seed={}  delta_false={}  local test: {}",
            self.alpha, self.reps, self.seed, self.delta_false, self.local_test
        );
        let _ = writeln!(
            out,
            "{:<18} {:>10} {:>10} {:>10}  result",
            "null subset", "fwer_hat", "se", "bound"
        );
        for check in &self.subsets {
            let _ = writeln!(
                out,
                "{:<18} {:>10.6} {:>10.6} {:>10.6}  {}",
                crate::family::format_id_set(&check.subset),
                check.fwer_hat,
                check.se,
                check.bound,
                if check.pass { "pass" } else { "FAIL" }
            );
        }
        let failures = self.subsets.iter().filter(|c| !c.pass).count();
        if self.all_pass {
            let _ = writeln!(out, "all {} subsets pass", self.subsets.len());
        } else {
            let _ = writeln!(out, "{failures} of {} subsets FAIL", self.subsets.len());
        }
        out
    }
}

/// For every nonempty subset S, treats S as the true nulls, gives every
/// other hypothesis mean shift `delta_false`, and estimates the probability
/// of rejecting anything in S. Each estimate is flagged against
/// alpha + 3 * se.
#[allow(clippy::too_many_arguments)]
pub fn subsetwise_check(
    spec: &FamilySpec,
    test: &LocalTest,
    alpha: f64,
    reps: u64,
    delta_false: f64,
    correlation: &[Vec<f64>],
    seed: u64,
) -> Result<SubsetwiseReport> {
    spec.ensure_valid()?;
    let n = spec.n as usize;
    if spec.n > MAX_SUBSETWISE_HYPOTHESES {
        return Err(CoveringError::TooLarge {
            what: "subset-wise verification family",
            limit: MAX_SUBSETWISE_HYPOTHESES as usize,
            actual: n,
        });
    }
    let plan = decompose(spec)?;
    let prepared = PreparedFamily::new(spec, &plan, test)?;
    let mut subsets = Vec::with_capacity((1usize << n) - 1);
    let mut all_pass = true;
    for mask in 1u32..(1u32 << n) {
        let truth: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        let effect: Vec<f64> = truth
            .iter()
            .map(|is_null| if *is_null { 0.0 } else { delta_false })
            .collect();
        let scenario = ScenarioConfig::new(truth, effect, correlation.to_vec(), reps, seed, alpha)?;
        let sampler = Sampler::new(&scenario)?;
        let counts = monte_carlo_counts(&prepared, &sampler, &scenario);
        let fwer_hat = counts.any_true_null_rejection as f64 / reps as f64;
        let se = binomial_se(fwer_hat, reps);
        let bound = alpha + 3.0 * se;
        let pass = fwer_hat <= bound;
        all_pass &= pass;
        subsets.push(SubsetCheck {
            subset: (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| HypothesisId::new(i as u32 + 1))
                .collect(),
            fwer_hat,
            se,
            bound,
            pass,
        });
    }
    Ok(SubsetwiseReport {
        alpha,
        reps,
        seed,
        delta_false,
        local_test: test.clone(),
        subsets,
        all_pass,
    })
}

/// Per-hypothesis rejection rates of the composed procedure next to plain
/// closed testing on the full family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerReport {
    pub alpha: f64,
    pub reps: u64,
    pub seed: u64,
    pub truth: Vec<bool>,
    pub covering_rate: Vec<f64>,
    pub closed_rate: Vec<f64>,
    pub fwer_covering: f64,
    pub fwer_closed: f64,
}

impl PowerReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization cannot fail")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "power comparison: alpha={}  reps={}  seed={}",
            self.alpha, self.reps, self.seed
        );
        let _ = writeln!(
            out,
            "{:<5} {:>6} {:>12} {:>12}",
            "hyp", "null?", "covering", "closed"
        );
        for i in 0..self.truth.len() {
            let _ = writeln!(
                out,
                "H{:<4} {:>6} {:>12.6} {:>12.6}",
                i + 1,
                if self.truth[i] { "yes" } else { "no" },
                self.covering_rate[i],
                self.closed_rate[i]
            );
        }
        let _ = writeln!(
            out,
            "fwer: covering {:.6}, closed {:.6}",
            self.fwer_covering, self.fwer_closed
        );
        out
    }
}

/// Runs the covering procedure and the closed-testing oracle on the same
/// sampled repetitions.
pub fn power_report(
    spec: &FamilySpec,
    scenario: &ScenarioConfig,
    test: &LocalTest,
) -> Result<PowerReport> {
    spec.ensure_valid()?;
    if scenario.n() != spec.n as usize {
        return Err(CoveringError::DimensionMismatch {
            expected: spec.n as usize,
            actual: scenario.n(),
            context: "scenario dimension vs family size".into(),
        });
    }
    let n = scenario.n();
    let plan = decompose(spec)?;
    let prepared = PreparedFamily::new(spec, &plan, test)?;
    let sampler = Sampler::new(scenario)?;
    let members = spec.all_ids();
    let alpha = scenario.alpha;

    let (cov_any, cov_counts, cls_any, cls_counts) = (0..scenario.reps)
        .into_par_iter()
        .fold(
            || {
                (
                    (0u64, vec![0u64; n], 0u64, vec![0u64; n]),
                    (
                        EvalScratch::default(),
                        Vec::new(),
                        PValueVector::zeros(n),
                        Vec::new(),
                    ),
                )
            },
            |(
                (mut cov_any, mut cov, mut cls_any, mut cls),
                (mut scratch, mut gaussian, mut p, mut psi),
            ),
             rep| {
                sampler.sample_into(rep, &mut gaussian, &mut p);
                prepared.psi_into(&p, alpha, &mut scratch, &mut psi);
                let closed =
                    closure_oracle(&p, alpha, &members).expect("member count validated at entry");
                let mut cov_hit = false;
                let mut cls_hit = false;
                for i in 0..n {
                    if psi[i] {
                        cov[i] += 1;
                        cov_hit |= scenario.truth[i];
                    }
                }
                for id in &closed {
                    cls[id.index()] += 1;
                    cls_hit |= scenario.truth[id.index()];
                }
                if cov_hit {
                    cov_any += 1;
                }
                if cls_hit {
                    cls_any += 1;
                }
                ((cov_any, cov, cls_any, cls), (scratch, gaussian, p, psi))
            },
        )
        .map(|(counts, _)| counts)
        .reduce(
            || (0u64, vec![0u64; n], 0u64, vec![0u64; n]),
            |(a1, mut v1, a2, mut v2), (b1, w1, b2, w2)| {
                for (a, b) in v1.iter_mut().zip(w1) {
                    *a += b;
                }
                for (a, b) in v2.iter_mut().zip(w2) {
                    *a += b;
                }
                (a1 + b1, v1, a2 + b2, v2)
            },
        );

    let reps = scenario.reps as f64;
    Ok(PowerReport {
        alpha,
        reps: scenario.reps,
        seed: scenario.seed,
        truth: scenario.truth.clone(),
        covering_rate: cov_counts.iter().map(|c| *c as f64 / reps).collect(),
        closed_rate: cls_counts.iter().map(|c| *c as f64 / reps).collect(),
        fwer_covering: cov_any as f64 / reps,
        fwer_closed: cls_any as f64 / reps,
    })
}

// ---------------------------------------------------------------------------
// Scenario document parser
// ---------------------------------------------------------------------------
//
// Line-oriented like the family grammar, '#' comments, keys:
//   truth=[0,1,...]   effect=[...]   rho=FLOAT | corr=[[...],...]
//   reps=INT   seed=INT   alpha=FLOAT

/// Parses a scenario document. `truth` is required; effect defaults to all
/// zeros, correlation to identity, reps to 10000, seed to 0, alpha to 0.05.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let mut truth: Option<Vec<bool>> = None;
    let mut effect: Option<Vec<f64>> = None;
    let mut rho: Option<f64> = None;
    let mut corr: Option<Vec<Vec<f64>>> = None;
    let mut reps: u64 = 10_000;
    let mut seed: u64 = 0;
    let mut alpha: f64 = 0.05;

    for (line_idx, raw_line) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(CoveringError::Syntax {
            line: line_no,
            column: 1,
            message: "expected key = value".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        let syntax = |message: String| CoveringError::Syntax {
            line: line_no,
            column: key.len() + 2,
            message,
        };
        match key {
            "truth" => {
                let flags = parse_number_list(value).map_err(&syntax)?;
                let mut bools = Vec::with_capacity(flags.len());
                for flag in flags {
                    if flag == 0.0 {
                        bools.push(false);
                    } else if flag == 1.0 {
                        bools.push(true);
                    } else {
                        return Err(syntax(format!("truth entries must be 0 or 1, got {flag}")));
                    }
                }
                truth = Some(bools);
            }
            "effect" => effect = Some(parse_number_list(value).map_err(&syntax)?),
            "rho" => {
                rho = Some(
                    value
                        .parse::<f64>()
                        .map_err(|_| syntax(format!("malformed rho value `{value}`")))?,
                )
            }
            "corr" => corr = Some(parse_matrix(value).map_err(&syntax)?),
            "reps" => {
                reps = value
                    .parse::<u64>()
                    .map_err(|_| syntax(format!("malformed reps value `{value}`")))?
            }
            "seed" => {
                seed = value
                    .parse::<u64>()
                    .map_err(|_| syntax(format!("malformed seed value `{value}`")))?
            }
            "alpha" => {
                alpha = value
                    .parse::<f64>()
                    .map_err(|_| syntax(format!("malformed alpha value `{value}`")))?
            }
            other => return Err(syntax(format!("unknown scenario key `{other}`"))),
        }
    }

    let truth = truth.ok_or_else(|| {
        CoveringError::InvalidScenario("scenario must declare truth=[...]".into())
    })?;
    let n = truth.len();
    if rho.is_some() && corr.is_some() {
        return Err(CoveringError::InvalidScenario(
            "declare either rho or corr, not both".into(),
        ));
    }
    let correlation = match (rho, corr) {
        (Some(r), None) => chol::exchangeable(n, r),
        (None, Some(m)) => m,
        (None, None) => chol::exchangeable(n, 0.0),
        (Some(_), Some(_)) => unreachable!(),
    };
    let effect = effect.unwrap_or_else(|| vec![0.0; n]);
    ScenarioConfig::new(truth, effect, correlation, reps, seed, alpha)
}

fn parse_number_list(text: &str) -> std::result::Result<Vec<f64>, String> {
    let inner = text
        .strip_prefix('[')
        .and_then(|rest| rest.strip_suffix(']'))
        .ok_or_else(|| format!("expected [..] list, got `{text}`"))?;
    let inner = inner.trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| format!("malformed number `{}`", part.trim()))
        })
        .collect()
}

fn parse_matrix(text: &str) -> std::result::Result<Vec<Vec<f64>>, String> {
    let inner = text
        .strip_prefix('[')
        .and_then(|rest| rest.strip_suffix(']'))
        .ok_or_else(|| format!("expected [[..],..] matrix, got `{text}`"))?;
    let mut rows = Vec::new();
    let mut depth = 0usize;
    let mut start = None;
    for (idx, c) in inner.char_indices() {
        match c {
            '[' => {
                if depth == 0 {
                    start = Some(idx);
                }
                depth += 1;
            }
            ']' => {
                if depth == 0 {
                    return Err("unbalanced brackets in matrix".into());
                }
                depth -= 1;
                if depth == 0 {
                    let row_text = &inner[start.unwrap()..=idx];
                    rows.push(parse_number_list(row_text)?);
                    start = None;
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err("unbalanced brackets in matrix".into());
    }
    if rows.is_empty() {
        return Err("matrix must have at least one row".into());
    }
    Ok(rows)
}
