//! Command-line front end: load/save assemblages and count tables, run the
//! analyses, emit JSON and human-readable reports.
//!
//! Exit codes: 0 = analysis completed, 1 = domain error (invalid input
//! data), 2 = usage error, 3 = solver failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use std::path::PathBuf;
use std::process::ExitCode;

use steering_core::assemblage::{
    assemblage_fidelity, realize, validate_with_tol, Assemblage, AssemblageError, Povm,
};
use steering_core::empirical::{sweep_statistic, CountTable, EmpiricalError, Statistic};
use steering_core::assemblage::behavior_from_assemblage;
use steering_core::exposure::{
    charlie_chsh_povm, chsh_value, ghz_assemblage, noisy_w_assemblage, universal_initial, wire,
    FamilyParams, Wiring, DEFAULT_ETA,
};
use steering_core::presets::{eq56_witness, ns_lhs_witness, sigma_lambda_table};
use steering_core::steering::{
    gms_test, lhs_test, ns_lhs_test, optimal_witness, robustness, to_lhs_test, witness_evaluate,
    Model, NoiseModel, SteeringError, Witness,
};

#[derive(Parser)]
#[command(name = "steering-lab", version, about = "Steering assemblage analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Path to an assemblage JSON file.
    input: Option<PathBuf>,
    /// Use a built-in dataset instead of a file (see `presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Visibility for the noisyW preset.
    #[arg(long)]
    v: Option<f64>,
    /// Measurement parameter for the noisyW preset.
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args, Clone)]
struct OutputArgs {
    /// Emit the machine-readable JSON report instead of the human one.
    #[arg(long)]
    json: bool,
    /// Write the JSON report to a file.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatArg {
    WitnessEq56,
    NslhsWitness,
    Robustness,
    Chsh,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Lhs,
    Nslhs,
}

#[derive(Subcommand)]
enum Command {
    /// Check PSD, normalization and no-signaling of an assemblage.
    Validate {
        #[command(flatten)]
        input: InputArgs,
        /// Validation tolerance (applied to PSD and no-signaling checks).
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Compute the assemblage of a state under local measurements.
    /// Input JSON: { "state": matrix, "povms": [povm, ...] }.
    Realize {
        input: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Apply the y = a wiring to a tripartite assemblage.
    Wire {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Universal exposure: the LHS-member tripartite initial assemblage
    /// whose wiring reproduces the given bipartite target.
    Expose {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// LHS membership test.
    Lhs {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// NS-LHS membership test.
    Nslhs {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// TO-LHS membership test.
    Tolhs {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Genuine-multipartite-steering (biseparability) test.
    Gms {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Evaluate a steering witness on an assemblage.
    Witness {
        #[command(flatten)]
        input: InputArgs,
        /// Witness JSON file (alternative to --preset eq56-witness /
        /// nslhs-witness).
        #[arg(long, value_name = "PATH")]
        witness: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Extract the optimal witness for a model from the membership dual.
    Optwitness {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value = "lhs")]
        model: ModelArg,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// LHS-noise steering robustness.
    Robustness {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// CHSH value of a bipartite assemblage under the built-in trusted
    /// bases.
    Chsh {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Fidelity between two assemblages.
    Fidelity {
        input1: PathBuf,
        input2: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Monte-Carlo sweep over Poisson resamples of a count table.
    Mc {
        /// Count table JSON file.
        input: PathBuf,
        #[arg(long, value_enum)]
        statistic: StatArg,
        /// RNG seed (mandatory; no wall-clock entropy).
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        /// Write the histogram CSV to a file.
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// List the built-in datasets, or print one as JSON.
    Presets {
        name: Option<String>,
        #[command(flatten)]
        output: OutputArgs,
    },
}

enum CliError {
    Domain(String),
    Usage(String),
    Solver(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Solver(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Domain(m) | CliError::Usage(m) | CliError::Solver(m) => m,
        }
    }
}

impl From<AssemblageError> for CliError {
    fn from(e: AssemblageError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<SteeringError> for CliError {
    fn from(e: SteeringError) -> Self {
        match e {
            SteeringError::SolverFailure(_) | SteeringError::Sdp(_) => {
                CliError::Solver(e.to_string())
            }
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<EmpiricalError> for CliError {
    fn from(e: EmpiricalError) -> Self {
        match e {
            EmpiricalError::ProjectionFailed => CliError::Solver(e.to_string()),
            EmpiricalError::Steering(s) => s.into(),
            other => CliError::Domain(other.to_string()),
        }
    }
}

fn read_json(path: &PathBuf) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Domain(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Domain(format!("{} is not valid JSON: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(v: Value, what: &str) -> Result<T, CliError> {
    serde_json::from_value(v).map_err(|e| CliError::Domain(format!("bad {what}: {e}")))
}

fn load_assemblage(input: &InputArgs) -> Result<Assemblage, CliError> {
    match (&input.input, &input.preset) {
        (Some(path), None) => parse_json(read_json(path)?, "assemblage"),
        (None, Some(name)) => match name.as_str() {
            "ghz" => Ok(ghz_assemblage()),
            "noisyW" | "noisyw" => {
                let v = input
                    .v
                    .ok_or_else(|| CliError::Usage("preset noisyW needs --v".into()))?;
                let eta = input.eta.unwrap_or(DEFAULT_ETA);
                let params =
                    FamilyParams::new(v, eta).map_err(|e| CliError::Usage(e.to_string()))?;
                Ok(noisy_w_assemblage(params)?)
            }
            other => Err(CliError::Usage(format!("unknown assemblage preset '{other}'"))),
        },
        _ => Err(CliError::Usage(
            "provide exactly one of an input file or --preset".into(),
        )),
    }
}

fn emit(report: Value, human: String, output: &OutputArgs) -> Result<(), CliError> {
    if let Some(path) = &output.out {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(path, text)
            .map_err(|e| CliError::Domain(format!("cannot write {}: {e}", path.display())))?;
    }
    // Ignore stdout write failures (e.g. a closed pipe) instead of
    // panicking.
    use std::io::Write;
    let text = if output.json {
        serde_json::to_string_pretty(&report).expect("report serializes")
    } else {
        human
    };
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

/// Six significant digits for human reports; full precision stays in JSON.
fn sig6(x: f64) -> String {
    format!("{x:.5e}")
        .parse::<f64>()
        .map(|v| format!("{v}"))
        .unwrap_or_else(|_| format!("{x}"))
}

fn membership_command(
    input: &InputArgs,
    output: &OutputArgs,
    name: &str,
    run: impl Fn(&Assemblage) -> Result<steering_core::steering::MembershipResult, SteeringError>,
) -> Result<(), CliError> {
    let asm = load_assemblage(input)?;
    let result = run(&asm)?;
    let verdict = if result.member { "MEMBER" } else { "NOT A MEMBER" };
    let human = format!(
        "{name}: {verdict}\noptimum (mu*): {}\nsolver gap: {:.1e}",
        sig6(result.optimum),
        result.diagnostics.gap
    );
    emit(result.to_json(), human, output)
}

fn preset_witness(name: &str) -> Result<Witness, CliError> {
    match name {
        "eq56-witness" | "eq56" => Ok(eq56_witness()),
        "nslhs-witness" => Ok(ns_lhs_witness()),
        other => Err(CliError::Usage(format!("unknown witness preset '{other}'"))),
    }
}

fn builtin_catalog() -> Vec<(&'static str, &'static str)> {
    vec![
        ("ghz", "tripartite GHZ assemblage under the Z/X measurement pair"),
        (
            "eq56-witness",
            "bound-1 bipartite steering witness (reference data)",
        ),
        (
            "nslhs-witness",
            "tripartite NS-LHS witness table, violated if positive",
        ),
        (
            "tolhs-sigmalambda",
            "tabulated A-to-B time-ordered decomposition of noisy-W at v = 0.64",
        ),
        (
            "noisyW",
            "noisy W-state assemblage, parameters --v and --eta (default 0.97177)",
        ),
    ]
}

/// Names the first element failing PSD, or the first no-signaling /
/// normalization deviation, for the validate error message.
fn first_failure(asm: &Assemblage, psd_tol: f64) -> String {
    for (k, m) in asm.elements() {
        let min = m.min_eigenvalue();
        if min < -psd_tol {
            return format!("element {k} is not PSD (min eigenvalue {min:.3e})");
        }
    }
    format!(
        "no-signaling or normalization violation {:.3e}",
        steering_core::assemblage::ns_violation(asm)
    )
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { input, tol, output } => {
            let asm = load_assemblage(&input)?;
            let t = tol.unwrap_or(0.0);
            let report = if tol.is_some() {
                validate_with_tol(&asm, t, t)
            } else {
                steering_core::assemblage::validate(&asm)
            };
            let json = serde_json::to_value(report).expect("report serializes");
            let human = format!(
                "psd: {}\nnormalized: {}\nno-signaling: {}\nmax violation: {:.3e}",
                report.psd_ok, report.normalized_ok, report.ns_ok, report.max_violation
            );
            emit(json, human, &output)?;
            if !report.all_ok() {
                return Err(CliError::Domain(format!(
                    "assemblage is invalid: {}",
                    first_failure(&asm, t.max(1e-9))
                )));
            }
            Ok(())
        }
        Command::Realize { input, output } => {
            let v = read_json(&input)?;
            let state = parse_json(
                v.get("state")
                    .cloned()
                    .ok_or_else(|| CliError::Domain("missing 'state'".into()))?,
                "state",
            )?;
            let povms: Vec<Povm> = parse_json(
                v.get("povms")
                    .cloned()
                    .ok_or_else(|| CliError::Domain("missing 'povms'".into()))?,
                "povms",
            )?;
            let asm = realize(&state, &povms)?;
            let json = serde_json::to_value(&asm).expect("assemblage serializes");
            emit(json, format!("realized {} elements", asm.elements().len()), &output)
        }
        Command::Wire { input, output } => {
            let asm = load_assemblage(&input)?;
            let wired = wire(&asm, Wiring::default())?;
            let json = serde_json::to_value(&wired).expect("assemblage serializes");
            emit(json, "wired to a bipartite assemblage".into(), &output)
        }
        Command::Expose { input, output } => {
            let target = load_assemblage(&input)?;
            let initial = universal_initial(&target)?;
            let json = serde_json::to_value(&initial).expect("assemblage serializes");
            emit(
                json,
                "universal LHS-member initial assemblage (wire with y = a to recover the target)"
                    .into(),
                &output,
            )
        }
        Command::Lhs { input, output } => membership_command(&input, &output, "LHS", lhs_test),
        Command::Nslhs { input, output } => {
            membership_command(&input, &output, "NS-LHS", ns_lhs_test)
        }
        Command::Tolhs { input, output } => {
            membership_command(&input, &output, "TO-LHS", to_lhs_test)
        }
        Command::Gms { input, output } => {
            membership_command(&input, &output, "biseparable (no genuine steering)", gms_test)
        }
        Command::Witness {
            input,
            witness,
            output,
        } => {
            let w = match (&witness, &input.preset) {
                (Some(path), None) => parse_json(read_json(path)?, "witness")?,
                (None, Some(name)) => preset_witness(name)?,
                _ => {
                    return Err(CliError::Usage(
                        "provide exactly one of --witness or --preset".into(),
                    ))
                }
            };
            // --preset selects the witness here; the assemblage comes from
            // the positional file.
            let asm_input = InputArgs {
                preset: None,
                ..input.clone()
            };
            let asm = load_assemblage(&asm_input)?;
            let (value, violated) = witness_evaluate(&w, &asm)?;
            let json = json!({
                "value": value,
                "bound": w.bound,
                "violated": violated,
            });
            let human = format!(
                "witness value: {} (bound {})\n{}",
                sig6(value),
                sig6(w.bound),
                if violated { "VIOLATED: steering detected" } else { "satisfied" }
            );
            emit(json, human, &output)
        }
        Command::Optwitness {
            input,
            model,
            output,
        } => {
            let asm = load_assemblage(&input)?;
            let m = match model {
                ModelArg::Lhs => Model::Lhs,
                ModelArg::Nslhs => Model::NsLhs,
            };
            let w = optimal_witness(&asm, m)?;
            let (value, violated) = witness_evaluate(&w, &asm)?;
            let json = serde_json::to_value(&w).expect("witness serializes");
            let human = format!(
                "optimal witness extracted; value on input: {} ({})",
                sig6(value),
                if violated { "VIOLATED" } else { "satisfied" }
            );
            emit(json, human, &output)
        }
        Command::Robustness { input, output } => {
            let asm = load_assemblage(&input)?;
            let r = robustness(&asm, NoiseModel::Lhs)?;
            emit(
                json!({ "robustness": r }),
                format!("LHS robustness: {}", sig6(r)),
                &output,
            )
        }
        Command::Chsh { input, output } => {
            let asm = load_assemblage(&input)?;
            let asm = if asm.scenario().n_untrusted == 2 {
                wire(&asm, Wiring::default())?
            } else {
                asm
            };
            let s = chsh_value(&behavior_from_assemblage(&asm, &charlie_chsh_povm())?)?;
            emit(
                json!({ "chsh": s }),
                format!("CHSH value: {} (local bound 2)", sig6(s)),
                &output,
            )
        }
        Command::Fidelity {
            input1,
            input2,
            output,
        } => {
            let a1: Assemblage = parse_json(read_json(&input1)?, "assemblage")?;
            let a2: Assemblage = parse_json(read_json(&input2)?, "assemblage")?;
            let f = assemblage_fidelity(&a1, &a2)?;
            emit(
                json!({ "fidelity": f }),
                format!("assemblage fidelity: {}", sig6(f)),
                &output,
            )
        }
        Command::Mc {
            input,
            statistic,
            seed,
            samples,
            csv,
            output,
        } => {
            let ct = CountTable::from_json(&read_json(&input)?)?;
            let stat = match statistic {
                StatArg::WitnessEq56 => Statistic::WitnessEq56,
                StatArg::NslhsWitness => Statistic::NsLhsWitness,
                StatArg::Robustness => Statistic::Robustness,
                StatArg::Chsh => Statistic::Chsh,
            };
            let summary = sweep_statistic(&ct, samples, seed, stat)?;
            if let Some(path) = &csv {
                std::fs::write(path, summary.histogram_csv()).map_err(|e| {
                    CliError::Domain(format!("cannot write {}: {e}", path.display()))
                })?;
            }
            let human = format!(
                "{}: mean {} +- {} over {} samples",
                summary.statistic,
                sig6(summary.mean),
                sig6(summary.std),
                summary.samples
            );
            emit(summary.to_json(), human, &output)
        }
        Command::Presets { name, output } => match name {
            None => {
                let catalog: Vec<Value> = builtin_catalog()
                    .iter()
                    .map(|(n, d)| json!({ "name": n, "description": d }))
                    .collect();
                let human = builtin_catalog()
                    .iter()
                    .map(|(n, d)| format!("{n}: {d}"))
                    .collect::<Vec<_>>()
                    .join("\n");
                emit(Value::Array(catalog), human, &output)
            }
            Some(name) => {
                let json = match name.as_str() {
                    "ghz" => serde_json::to_value(ghz_assemblage()).unwrap(),
                    "eq56-witness" => serde_json::to_value(eq56_witness()).unwrap(),
                    "nslhs-witness" => serde_json::to_value(ns_lhs_witness()).unwrap(),
                    "tolhs-sigmalambda" => serde_json::to_value(sigma_lambda_table()).unwrap(),
                    other => {
                        return Err(CliError::Usage(format!("unknown preset '{other}'")))
                    }
                };
                emit(json.clone(), serde_json::to_string_pretty(&json).unwrap(), &output)
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
