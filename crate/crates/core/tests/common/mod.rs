//! Helpers and independent reference computations shared by the integration
//! tests. Nothing in here calls the library's geometry or Riccati code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rhlqr::lifting::{choose_depth, lift, LiftedProblem};
use rhlqr::workbench::{generate_scenario, ScenarioKind, ScenarioSpec};
use rhlqr::{ProblemData, SpdMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = v.norm();
    v / norm
}

/// `GᵀG/n + shift·I`, symmetrized.
pub fn random_spd_matrix(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let g = gaussian(rng, n, n);
    let m = g.transpose() * &g / n as f64 + DMatrix::identity(n, n) * shift;
    (&m + m.transpose()) * 0.5
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SpdMatrix {
    SpdMatrix::new(random_spd_matrix(rng, n, 0.1)).unwrap()
}

pub fn scalar_unit() -> ProblemData {
    let one = DMatrix::from_element(1, 1, 1.0);
    ProblemData::time_invariant(one.clone(), one.clone(), one.clone(), one).unwrap()
}

pub fn periodic_problem(seed: u64, n: usize, m: usize, period: usize) -> ProblemData {
    generate_scenario(&ScenarioSpec {
        kind: ScenarioKind::PeriodicRandom,
        n,
        m,
        period,
        seed,
    })
    .unwrap()
}

pub fn time_invariant_problem(seed: u64, n: usize, m: usize) -> ProblemData {
    generate_scenario(&ScenarioSpec {
        kind: ScenarioKind::TimeInvariantRandom,
        n,
        m,
        period: 1,
        seed,
    })
    .unwrap()
}

/// Lifts at the smallest admissible depth.
pub fn lifted(pd: &ProblemData) -> LiftedProblem {
    let d = choose_depth(pd, 8).unwrap();
    lift(pd, d).unwrap()
}

/// Dimensions drawn for seed `s` within desk-scale limits.
pub fn dims(seed: u64) -> (usize, usize, usize) {
    let mut r = rng(seed ^ 0xd1d1);
    let n = r.random_range(1..=4);
    let m = r.random_range(1..=n);
    let period = r.random_range(1..=4);
    (n, m, period)
}

/// Riemannian distance from the eigenvalues of the non-symmetric product
/// `Y Z⁻¹`.
pub fn distance_by_product(y: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    let prod = y * z.clone().try_inverse().unwrap();
    prod.complex_eigenvalues()
        .iter()
        .map(|c| {
            assert!(c.im.abs() <= 1e-8 * c.norm(), "complex eigenvalue {c}");
            c.re.ln().powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Matrix exponential by scaling and squaring with a Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().row_sum().max();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Smallest eigenvalue of the symmetric part by a dense solver independent
/// of the library helpers.
pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

/// One step of the textbook discrete Riccati recursion on base data.
pub fn base_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> DMatrix<f64> {
    let h = r + b.transpose() * p * b;
    let k = h.try_inverse().unwrap() * b.transpose() * p * a;
    let next = q + a.transpose() * p * a - a.transpose() * p * b * k;
    (&next + next.transpose()) * 0.5
}

/// Value iteration on the base problem: `P_k = 𝓡_k(P_{k+1})` swept backward
/// over `sweeps` periods from zero, returning `P_0`.
pub fn base_value_iteration(pd: &ProblemData, sweeps: usize) -> DMatrix<f64> {
    let period = pd.mode().len();
    let n = pd.n();
    let mut p = DMatrix::zeros(n, n);
    for _ in 0..sweeps {
        for k in (0..period).rev() {
            p = base_riccati(
                pd.a(k).unwrap(),
                pd.b(k).unwrap(),
                pd.q(k).unwrap(),
                pd.r(k).unwrap(),
                &p,
            );
        }
    }
    p
}

/// Closed-loop forward simulation of the base system with the given base
/// inputs; returns the states `x_0, …, x_K`.
pub fn forward(pd: &ProblemData, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut xs = vec![x0.clone()];
    for (k, u) in inputs.iter().enumerate() {
        let x = xs.last().unwrap();
        xs.push(pd.a(k).unwrap() * x + pd.b(k).unwrap() * u);
    }
    xs
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
