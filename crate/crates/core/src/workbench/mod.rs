//! File formats, scenario generation, run orchestration and batch
//! verification.

mod pipeline;
mod problem_file;
mod report;
mod scenario;
mod verify;

pub use pipeline::{
    certify, policy, reference_solution, run_closed_loop, synthesize_horizon, Run, RunOptions, LOSS_STOP, REFERENCE_TOL,
};
pub use problem_file::{
    parse_problem, parse_problem_str, to_canonical_json, write_problem, CanonicalFormatter, ProblemFile, SCHEMA_VERSION,
};
pub use report::{
    input_digest, write_base_csv, write_trajectory_csv, CheckResult, CheckStatus, LiftedDump, LiftedStepDump,
    RunReport, RunSummary, REPORT_SCHEMA_VERSION,
};
pub use scenario::{generate_scenario, ScenarioKind, ScenarioSpec, GENERATED_D_MAX};
pub use verify::{verify_problem, VerificationReport, VerifyOptions, VERIFY_D_MAX};
