use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::lifting::{choose_depth, HorizonMode, ProblemData};
use crate::{Error, Result};

/// Largest lifting depth a generated problem may need.
pub const GENERATED_D_MAX: usize = 4;

const MAX_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    ScalarUnit,
    TimeInvariantRandom,
    PeriodicRandom,
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar-unit" => Ok(ScenarioKind::ScalarUnit),
            "time-invariant-random" => Ok(ScenarioKind::TimeInvariantRandom),
            "periodic-random" => Ok(ScenarioKind::PeriodicRandom),
            _ => Err(Error::InvalidArgument(format!(
                "unknown scenario kind {s:?} (expected scalar-unit, time-invariant-random or periodic-random)"
            ))),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::ScalarUnit => "scalar-unit",
            ScenarioKind::TimeInvariantRandom => "time-invariant-random",
            ScenarioKind::PeriodicRandom => "periodic-random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n: usize,
    pub m: usize,
    pub period: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn scalar_unit() -> Self {
        ScenarioSpec {
            kind: ScenarioKind::ScalarUnit,
            n: 1,
            m: 1,
            period: 1,
            seed: 0,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `U S Uᵀ` with `U` orthogonal and `|S_ii| ∈ [0.5, 1.5]`.
fn random_dynamics(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let u = gaussian(rng, n, n).qr().q();
    let magnitude = Uniform::new_inclusive(0.5, 1.5).expect("valid range");
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| {
        let v: f64 = rng.sample(magnitude);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    }));
    let a = &u * s * u.transpose();
    (&a + a.transpose()) * 0.5
}

/// `GᵀG/n + 0.1 I`
fn random_weight(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = gaussian(rng, n, n) / (n as f64).sqrt();
    let w = g.transpose() * &g + DMatrix::identity(n, n) * 0.1;
    (&w + w.transpose()) * 0.5
}

fn draw(rng: &mut ChaCha8Rng, n: usize, m: usize, period: usize) -> Result<ProblemData> {
    let mut a = Vec::with_capacity(period);
    let mut b = Vec::with_capacity(period);
    let mut q = Vec::with_capacity(period);
    let mut r = Vec::with_capacity(period);
    for _ in 0..period {
        a.push(random_dynamics(rng, n));
        b.push(gaussian(rng, n, m));
        q.push(random_weight(rng, n));
        r.push(random_weight(rng, m));
    }
    ProblemData::new(HorizonMode::Periodic { period }, a, b, q, r)
}

/// Deterministic problem generation. Random draws are repeated (from the
/// same stream) until the problem lifts with positive margins at some depth
/// up to [`GENERATED_D_MAX`].
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<ProblemData> {
    match spec.kind {
        ScenarioKind::ScalarUnit => {
            let one = DMatrix::from_element(1, 1, 1.0);
            return ProblemData::time_invariant(one.clone(), one.clone(), one.clone(), one);
        }
        ScenarioKind::TimeInvariantRandom | ScenarioKind::PeriodicRandom => {}
    }
    if spec.n == 0 || spec.m == 0 {
        return Err(Error::InvalidArgument("scenario dimensions must be at least 1".into()));
    }
    if spec.m > spec.n {
        return Err(Error::InvalidArgument(format!(
            "scenario needs m <= n, got n = {}, m = {}",
            spec.n, spec.m
        )));
    }
    let period = match spec.kind {
        ScenarioKind::PeriodicRandom if spec.period == 0 => {
            return Err(Error::InvalidArgument("period must be at least 1".into()))
        }
        ScenarioKind::PeriodicRandom => spec.period,
        _ => 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..MAX_ATTEMPTS {
        let pd = draw(&mut rng, spec.n, spec.m, period)?;
        if choose_depth(&pd, GENERATED_D_MAX).is_ok() {
            return Ok(pd);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no admissible problem found for {spec:?} after {MAX_ATTEMPTS} draws"
    )))
}
