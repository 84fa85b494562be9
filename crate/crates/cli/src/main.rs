//! `covering` — decompose gated hypothesis families, test them, and verify
//! familywise error control by simulation.
//!
//! Exit codes: 0 success, 2 validation or parse failure, 3 when `verify`
//! observes a subset exceeding its alpha + 3se bound.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use covering_core::{
    adjusted_pvalues, decompose, estimate_fwer, exchangeable, export_dot, parse_family_spec,
    parse_scenario, plan_to_text, power_report, subsetwise_check, test_family, CoveringError,
    FamilySpec, LocalTest, PValueVector, ScenarioConfig,
};

const EXIT_USAGE: u8 = 2;
const EXIT_VERIFY_FAILED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "covering",
    version,
    about = "Gate-structured multiple hypothesis testing by covering decomposition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct SpecArg {
    /// Family-spec file (`hypothesis 3 gates=[1,2]` grammar).
    #[arg(long, value_name = "PATH")]
    spec: PathBuf,
}

#[derive(Args)]
struct PArgs {
    /// Inline comma-separated p-values, one per hypothesis.
    #[arg(long, value_name = "LIST", conflicts_with = "p_file")]
    p: Option<String>,
    /// File with one p-value per line.
    #[arg(long, value_name = "PATH")]
    p_file: Option<PathBuf>,
}

#[derive(Args)]
struct LocalArg {
    /// Local test: bonferroni | holm | hochberg | fixed:3,1,2 | wbonf:0.5,0.25,0.25
    #[arg(long, default_value = "bonferroni", value_name = "TEST")]
    local: String,
    /// Accept Hochberg's nonnegative-dependence requirement.
    #[arg(long)]
    acknowledge_dependence: bool,
}

impl LocalArg {
    fn parse(&self) -> Result<LocalTest, CoveringError> {
        let mut test: LocalTest = self.local.parse()?;
        if let LocalTest::Hochberg {
            dependence_acknowledged,
        } = &mut test
        {
            *dependence_acknowledged = self.acknowledge_dependence;
        }
        Ok(test)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Decompose a family into its leaf sub-families.
    Decompose {
        #[command(flatten)]
        spec: SpecArg,
        /// Also write the decomposition and gate graph as DOT.
        #[arg(long, value_name = "PATH")]
        dot: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Run the composed test on observed p-values.
    Test {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        p: PArgs,
        /// Significance level (default: spec file's alpha, then 0.05).
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        local: LocalArg,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Compute adjusted p-values by bisection over the level.
    Adjust {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        p: PArgs,
        #[command(flatten)]
        local: LocalArg,
        /// Absolute bisection tolerance.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Estimate the familywise error rate under a scenario.
    Simulate {
        #[command(flatten)]
        spec: SpecArg,
        /// Scenario file: truth=[...], effect=[...], rho=... etc.
        #[arg(long, value_name = "PATH")]
        scenario: PathBuf,
        #[command(flatten)]
        local: LocalArg,
        /// Override the scenario's repetition count.
        #[arg(long)]
        reps: Option<u64>,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's alpha.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Check every null subset against its alpha + 3se bound.
    Verify {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 10_000)]
        reps: u64,
        /// Mean shift applied to false nulls.
        #[arg(long, default_value_t = 6.0)]
        delta_false: f64,
        /// Exchangeable correlation among test statistics.
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        local: LocalArg,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Compare per-hypothesis power against plain closed testing.
    Compare {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long, value_name = "PATH")]
        scenario: PathBuf,
        #[command(flatten)]
        local: LocalArg,
        #[arg(long)]
        reps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn run(command: Command) -> Result<ExitCode, CoveringError> {
    match command {
        Command::Decompose { spec, dot, format } => {
            let spec = load_spec(&spec.spec)?;
            let plan = decompose(&spec)?;
            if let Some(path) = dot {
                fs::write(path, export_dot(&plan, &spec))?;
            }
            match format {
                Format::Text => print!("{}", plan_to_text(&plan)),
                Format::Json => println!("{}", plan.to_json()),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Test {
            spec,
            p,
            alpha,
            local,
            format,
        } => {
            let spec = load_spec(&spec.spec)?;
            let p = load_pvalues(&p, spec.n as usize)?;
            let alpha = resolve_alpha(alpha, &spec);
            let test = local.parse()?;
            let result = test_family(&spec, &p, alpha, &test)?;
            match format {
                Format::Text => print!("{}", result.to_text(&spec)),
                Format::Json => println!("{}", result.to_json()),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Adjust {
            spec,
            p,
            local,
            tol,
            format,
        } => {
            let spec = load_spec(&spec.spec)?;
            let p = load_pvalues(&p, spec.n as usize)?;
            let test = local.parse()?;
            let adjusted = adjusted_pvalues(&spec, &p, &test, tol)?;
            match format {
                Format::Text => {
                    println!("adjusted p-values (tolerance {}):", adjusted.tolerance);
                    for (idx, adj) in adjusted.adj.iter().enumerate() {
                        println!("  H{:<3} {adj:.9}", idx + 1);
                    }
                }
                Format::Json => println!("{}", adjusted.to_json()),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            spec,
            scenario,
            local,
            reps,
            seed,
            alpha,
            format,
        } => {
            let spec = load_spec(&spec.spec)?;
            let scenario = load_scenario(&scenario, reps, seed, alpha)?;
            let test = local.parse()?;
            let report = estimate_fwer(&spec, &scenario, &test)?;
            match format {
                Format::Text => print!("{}", report.to_text()),
                Format::Json => println!("{}", report.to_json()),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            spec,
            alpha,
            reps,
            delta_false,
            rho,
            seed,
            local,
            format,
        } => {
            let spec = load_spec(&spec.spec)?;
            let test = local.parse()?;
            let correlation = exchangeable(spec.n as usize, rho);
            let report =
                subsetwise_check(&spec, &test, alpha, reps, delta_false, &correlation, seed)?;
            match format {
                Format::Text => print!("{}", report.to_text()),
                Format::Json => println!("{}", report.to_json()),
            }
            if report.all_pass {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(EXIT_VERIFY_FAILED))
            }
        }
        Command::Compare {
            spec,
            scenario,
            local,
            reps,
            seed,
            alpha,
            format,
        } => {
            let spec = load_spec(&spec.spec)?;
            let scenario = load_scenario(&scenario, reps, seed, alpha)?;
            let test = local.parse()?;
            let report = power_report(&spec, &scenario, &test)?;
            match format {
                Format::Text => print!("{}", report.to_text()),
                Format::Json => println!("{}", report.to_json()),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_spec(path: &PathBuf) -> Result<FamilySpec, CoveringError> {
    let text = fs::read_to_string(path)?;
    parse_family_spec(&text)
}

fn load_pvalues(args: &PArgs, n: usize) -> Result<PValueVector, CoveringError> {
    let values: Vec<f64> = match (&args.p, &args.p_file) {
        (Some(inline), None) => parse_float_list(inline)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)?;
            let mut values = Vec::new();
            for (idx, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                values.push(line.parse::<f64>().map_err(|_| CoveringError::Syntax {
                    line: idx + 1,
                    column: 1,
                    message: format!("malformed p-value `{line}`"),
                })?);
            }
            values
        }
        _ => {
            return Err(CoveringError::InvalidScenario(
                "provide p-values with exactly one of --p or --p-file".into(),
            ))
        }
    };
    if values.len() != n {
        return Err(CoveringError::DimensionMismatch {
            expected: n,
            actual: values.len(),
            context: "p-values vs family size".into(),
        });
    }
    PValueVector::new(values)
}

fn parse_float_list(text: &str) -> Result<Vec<f64>, CoveringError> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| CoveringError::Syntax {
                    line: 1,
                    column: 1,
                    message: format!("malformed p-value `{}`", part.trim()),
                })
        })
        .collect()
}

fn resolve_alpha(flag: Option<f64>, spec: &FamilySpec) -> f64 {
    flag.or(spec.alpha_default).unwrap_or(0.05)
}

fn load_scenario(
    path: &PathBuf,
    reps: Option<u64>,
    seed: Option<u64>,
    alpha: Option<f64>,
) -> Result<ScenarioConfig, CoveringError> {
    let text = fs::read_to_string(path)?;
    let parsed = parse_scenario(&text)?;
    ScenarioConfig::new(
        parsed.truth.clone(),
        parsed.effect.clone(),
        parsed.correlation.clone(),
        reps.unwrap_or(parsed.reps),
        seed.unwrap_or(parsed.seed),
        alpha.unwrap_or(parsed.alpha),
    )
}
