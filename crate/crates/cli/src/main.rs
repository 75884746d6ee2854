use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use rhlqr::certificate::DEFAULT_T_MAX;
use rhlqr::lifting::{choose_depth, lift};
use rhlqr::workbench::{
    certify, generate_scenario, input_digest, parse_problem_str, policy, reference_solution, run_closed_loop,
    synthesize_horizon, to_canonical_json, verify_problem, write_base_csv, write_problem, write_trajectory_csv,
    CheckResult, CheckStatus, LiftedDump, ProblemFile, RunOptions, RunReport, RunSummary, ScenarioKind, ScenarioSpec,
    VerifyOptions, REPORT_SCHEMA_VERSION,
};
use rhlqr::{Error, ErrorClass, LiftedProblem, ProblemData, Result};

const D_MAX: usize = 8;

#[derive(Parser)]
#[command(
    name = "rhlqr",
    version,
    about = "Certified receding-horizon control for time-varying LQR problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Input {
    /// Problem file (JSON)
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Lifting depth; the smallest admissible depth up to 8 when omitted
    #[arg(long)]
    d: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the lifted data and its uniformity margins
    Lift {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Emit the certificate for a given horizon
    Certify {
        #[command(flatten)]
        input: Input,
        #[arg(long = "T", value_name = "T")]
        horizon: usize,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Pick the horizon for a performance-loss tolerance
    Synthesize {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = DEFAULT_T_MAX)]
        t_max: usize,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run the closed loop and write a report plus trajectory CSVs
    Simulate {
        #[command(flatten)]
        input: Input,
        #[arg(long = "T", value_name = "T")]
        horizon: usize,
        /// Initial state, comma separated
        #[arg(long, value_name = "V", allow_hyphen_values = true)]
        x0: String,
        /// Report path; the trajectories go next to it as .csv and .base.csv
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Stop once the certified remaining cost is below this multiple of |x0|²
        #[arg(long, default_value_t = rhlqr::workbench::LOSS_STOP)]
        stop: f64,
    },
    /// Run the verification suite on a problem
    Verify {
        #[command(flatten)]
        input: Input,
        /// Random draws per check
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Write a generated problem file
    Generate {
        /// scalar-unit, time-invariant-random or periodic-random
        #[arg(long)]
        kind: String,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 4)]
        period: usize,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

struct Loaded {
    digest: String,
    lp: LiftedProblem,
}

fn load(input: &Input) -> Result<Loaded> {
    let bytes = fs::read(&input.input)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Schema {
        path: "$".into(),
        message: format!("file is not UTF-8: {e}"),
    })?;
    let pd: ProblemData = parse_problem_str(&text)?;
    let d = match input.d {
        Some(d) => d,
        None => choose_depth(&pd, D_MAX)?,
    };
    Ok(Loaded {
        digest: input_digest(&bytes),
        lp: lift(&pd, d)?,
    })
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_x0(text: &str, n: usize) -> Result<DVector<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("--x0 entry {s:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != n {
        return Err(Error::DimensionMismatch {
            context: "--x0".into(),
            expected: n.to_string(),
            found: values.len().to_string(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("--x0 entries must be finite".into()));
    }
    Ok(DVector::from_vec(values))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn simulate(input: &Input, horizon: usize, x0: &str, out: &Path, stop: f64) -> Result<bool> {
    let started = Instant::now();
    let Loaded { digest, lp } = load(input)?;
    let xi = parse_x0(x0, lp.n())?;
    let ra = reference_solution(&lp)?;
    let cert = certify(&lp, horizon, ra.as_ref())?;
    let pol = policy(&lp, horizon)?;
    let run = run_closed_loop(
        &lp,
        &pol,
        &xi,
        ra.as_ref(),
        &RunOptions {
            relative_stop: stop,
            min_steps: 0,
        },
    )?;

    let mut checks = vec![
        CheckResult::new(
            "lyapunov-decrease",
            run.report.decrease_violations.is_empty(),
            format!("{} violations", run.report.decrease_violations.len()),
        ),
        CheckResult::new(
            "state-envelope",
            run.report.envelope_violations.is_empty(),
            format!("{} violations", run.report.envelope_violations.len()),
        ),
    ];
    let lifted = run.report.realized_cost;
    checks.push(CheckResult::new(
        "cost-equivalence",
        (run.base.cost - lifted).abs() <= 1e-8 * lifted.max(f64::MIN_POSITIVE),
        format!("base {:.12e}, lifted {lifted:.12e}", run.base.cost),
    ));
    match run.loss {
        Some(loss) => {
            let bound = cert.beta_bound * xi.norm_squared();
            checks.push(CheckResult::new(
                "performance-loss",
                loss.hi <= bound,
                format!("loss in [{:.6e}, {:.6e}], bound {bound:.6e}", loss.lo, loss.hi),
            ));
        }
        None => checks.push(CheckResult::skipped(
            "performance-loss",
            "no infinite-horizon reference",
        )),
    }

    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        input_digest: digest,
        d: lp.d(),
        horizon,
        runs: vec![RunSummary::new(&run.report, &cert, run.loss, Some(&run.base))],
        certificate: cert,
        checks,
        timing_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    fs::write(out, report.to_json()?)?;
    write_trajectory_csv(&sibling(out, "csv"), &run.report)?;
    write_base_csv(&sibling(out, "base.csv"), lp.d(), &run.base, &run.report.w1)?;
    print_checks(&report.checks);
    Ok(report.passed())
}

fn print_checks(checks: &[CheckResult]) {
    for c in checks {
        let status = match c.status {
            CheckStatus::Passed => "PASS",
            CheckStatus::Failed => "FAIL",
            CheckStatus::Skipped => "SKIP",
        };
        println!("{status} {}: {}", c.name, c.detail);
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Lift { input, out } => {
            let Loaded { lp, .. } = load(&input)?;
            fs::write(&out, LiftedDump::new(&lp).to_json()?)?;
            let m = lp.margins();
            println!(
                "d = {}, lifted length {}, margins q_min = {:.6e}, b_min = {:.6e}, a_min = {:.6e}",
                lp.d(),
                lp.len(),
                m.q_min,
                m.b_min,
                m.a_min
            );
            Ok(true)
        }
        Command::Certify { input, horizon, out } => {
            let Loaded { lp, .. } = load(&input)?;
            let ra = reference_solution(&lp)?;
            let cert = certify(&lp, horizon, ra.as_ref())?;
            emit(&to_canonical_json(&cert)?, out.as_deref())?;
            Ok(true)
        }
        Command::Synthesize {
            input,
            beta,
            t_max,
            out,
        } => {
            let Loaded { lp, .. } = load(&input)?;
            let ra = reference_solution(&lp)?;
            let s = synthesize_horizon(&lp, beta, t_max, ra.as_ref())?;
            emit(&to_canonical_json(&s)?, out.as_deref())?;
            if !s.certified {
                return Err(Error::Certification {
                    reason: format!(
                        "horizon cap {t_max} reached with loss bound {:.6e} above tolerance {beta}",
                        s.certificate.beta_bound
                    ),
                    index: None,
                });
            }
            Ok(true)
        }
        Command::Simulate {
            input,
            horizon,
            x0,
            out,
            stop,
        } => simulate(&input, horizon, &x0, &out, stop),
        Command::Verify { input, seeds, out } => {
            let bytes = fs::read(&input.input)?;
            let text = String::from_utf8(bytes).map_err(|e| Error::Schema {
                path: "$".into(),
                message: format!("file is not UTF-8: {e}"),
            })?;
            let pd = parse_problem_str(&text)?;
            let report = verify_problem(
                &pd,
                &VerifyOptions {
                    d: input.d,
                    seeds,
                    ..VerifyOptions::default()
                },
            )?;
            print_checks(&report.checks);
            if let Some(out) = out {
                fs::write(out, to_canonical_json(&report)?)?;
            }
            Ok(report.passed())
        }
        Command::Generate {
            kind,
            seed,
            n,
            m,
            period,
            out,
        } => {
            let kind: ScenarioKind = kind.parse()?;
            let spec = ScenarioSpec {
                kind,
                n,
                m,
                period,
                seed,
            };
            let pd = generate_scenario(&spec)?;
            let mut file = ProblemFile::from_data(&pd);
            file.name = Some(format!("{kind}-{seed}"));
            write_problem(&out, &file)?;
            Ok(true)
        }
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Input => 2,
        ErrorClass::Certification => 3,
        ErrorClass::Verification => 4,
        ErrorClass::Numerical => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: verification failed");
            ExitCode::from(exit_code(ErrorClass::Verification))
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
