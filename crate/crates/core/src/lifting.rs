//! Base-domain problem data and the `d`-step lifted reformulation.
//!
//! For a lifted step `t` the base indices `dt, …, dt + d − 1` are collapsed
//! into one step. With `C_k = Q_k^{1/2}` the block matrices
//!
//! ```text
//! Â_t = I − [0 0; diag(A_dt … A_{dt+d−1}) 0]      (n(d+1) × n(d+1))
//! B̂_t = [0; diag(B_dt … B_{dt+d−1})]               (n(d+1) × md)
//! Ĉ_t = [diag(C_dt … C_{dt+d−1}) 0]                (nd × n(d+1))
//! ```
//!
//! give `Φ_t, Γ_t, Ξ_t, Δ_t` through solves with `Â_t`, and from those the
//! lifted data
//!
//! ```text
//! R̃_t = diag(R) + ΔᵀΔ
//! Q̃_t = ΞᵀΞ − ΞᵀΔ R̃⁻¹ ΔᵀΞ
//! Ã_t = Φ − Γ R̃⁻¹ ΔᵀΞ
//! B̃_t = Γ
//! ```
//!
//! Because `Â_t` is unit lower block triangular, all solves are plain block
//! forward substitution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, symmetrize};
use crate::{Error, Result, Tolerances};

/// How time indices beyond the stored data are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HorizonMode {
    /// Data repeats with the given period; index `k` resolves to `k mod period`.
    Periodic { period: usize },
    /// Data is only known on `0..len`.
    Window { len: usize },
}

impl HorizonMode {
    pub fn len(&self) -> usize {
        match *self {
            HorizonMode::Periodic { period } => period,
            HorizonMode::Window { len } => len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, HorizonMode::Periodic { .. })
    }

    pub fn resolve(&self, k: usize) -> Result<usize> {
        match *self {
            HorizonMode::Periodic { period } => Ok(k % period),
            HorizonMode::Window { len } if k < len => Ok(k),
            HorizonMode::Window { len } => Err(Error::IndexOutOfWindow { index: k, len }),
        }
    }
}

/// Supremum norms of the stored data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataBounds {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
}

/// Time-varying base-domain data `(A_k, B_k, Q_k, R_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    n: usize,
    m: usize,
    mode: HorizonMode,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    q: Vec<DMatrix<f64>>,
    r: Vec<DMatrix<f64>>,
    bounds: DataBounds,
    tol: Tolerances,
}

impl ProblemData {
    pub fn new(
        mode: HorizonMode,
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        q: Vec<DMatrix<f64>>,
        r: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        Self::with_tolerances(mode, a, b, q, r, Tolerances::default())
    }

    /// Validates and stores the data. `Q_k` must be positive semi-definite,
    /// `R_k` positive definite and `A_k` invertible.
    pub fn with_tolerances(
        mode: HorizonMode,
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        q: Vec<DMatrix<f64>>,
        r: Vec<DMatrix<f64>>,
        tol: Tolerances,
    ) -> Result<Self> {
        let len = mode.len();
        if len == 0 {
            return Err(Error::InvalidProblem("period/window length must be at least 1".into()));
        }
        for (name, seq) in [("A", &a), ("B", &b), ("Q", &q), ("R", &r)] {
            if seq.len() != len {
                return Err(Error::InvalidProblem(format!(
                    "{name} has {} entries but the {} is {len}",
                    seq.len(),
                    if mode.is_periodic() { "period" } else { "window length" }
                )));
            }
        }
        let n = a[0].nrows();
        let m = b[0].ncols();
        if n == 0 || m == 0 {
            return Err(Error::InvalidProblem(
                "state and input dimensions must be at least 1".into(),
            ));
        }
        let shape_check = |name: &str, k: usize, mat: &DMatrix<f64>, rows: usize, cols: usize| {
            if mat.shape() != (rows, cols) {
                return Err(Error::InvalidProblem(format!(
                    "{name}[{k}] is {}x{}, expected {rows}x{cols}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            if !linalg::all_finite(mat) {
                return Err(Error::InvalidProblem(format!("{name}[{k}] has non-finite entries")));
            }
            Ok(())
        };

        let mut bounds = DataBounds {
            a: 0.0,
            b: 0.0,
            q: 0.0,
            r: 0.0,
        };
        for k in 0..len {
            shape_check("A", k, &a[k], n, n)?;
            shape_check("B", k, &b[k], n, m)?;
            shape_check("Q", k, &q[k], n, n)?;
            shape_check("R", k, &r[k], m, m)?;

            let sv = linalg::singular_values(&a[k])?;
            let (smin, smax) = (sv.min(), sv.max());
            if smin < tol.inv_tol * smax.max(1.0) {
                return Err(Error::InvalidProblem(format!(
                    "A[{k}] is singular (smallest singular value {smin:.3e})"
                )));
            }
            bounds.a = bounds.a.max(smax);
            bounds.b = bounds.b.max(linalg::norm2(&b[k])?);

            for (name, mat, strict) in [("Q", &q[k], false), ("R", &r[k], true)] {
                let scale = linalg::norm2(mat)?;
                let asym = linalg::norm2(&(mat - mat.transpose()))?;
                if asym > tol.sym_tol * scale.max(f64::MIN_POSITIVE) {
                    return Err(Error::InvalidProblem(format!("{name}[{k}] is not symmetric")));
                }
                let lmin = linalg::lambda_min(mat)?;
                if strict && !(lmin > tol.psd_tol * scale) {
                    return Err(Error::InvalidProblem(format!(
                        "{name}[{k}] is not positive definite (smallest eigenvalue {lmin:.3e})"
                    )));
                }
                if !strict && lmin < -tol.psd_tol * scale {
                    return Err(Error::InvalidProblem(format!(
                        "{name}[{k}] is not positive semi-definite (smallest eigenvalue {lmin:.3e})"
                    )));
                }
            }
            bounds.q = bounds.q.max(linalg::norm2(&q[k])?);
            bounds.r = bounds.r.max(linalg::norm2(&r[k])?);
        }

        Ok(Self {
            n,
            m,
            mode,
            a,
            b,
            q: q.iter().map(symmetrize).collect(),
            r: r.iter().map(symmetrize).collect(),
            bounds,
            tol,
        })
    }

    /// Time-invariant data stored as a period-one periodic problem.
    pub fn time_invariant(a: DMatrix<f64>, b: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        Self::new(HorizonMode::Periodic { period: 1 }, vec![a], vec![b], vec![q], vec![r])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mode(&self) -> HorizonMode {
        self.mode
    }

    pub fn bounds(&self) -> DataBounds {
        self.bounds
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    pub fn a_seq(&self) -> &[DMatrix<f64>] {
        &self.a
    }

    pub fn b_seq(&self) -> &[DMatrix<f64>] {
        &self.b
    }

    pub fn q_seq(&self) -> &[DMatrix<f64>] {
        &self.q
    }

    pub fn r_seq(&self) -> &[DMatrix<f64>] {
        &self.r
    }

    pub fn a(&self, k: usize) -> Result<&DMatrix<f64>> {
        Ok(&self.a[self.mode.resolve(k)?])
    }

    pub fn b(&self, k: usize) -> Result<&DMatrix<f64>> {
        Ok(&self.b[self.mode.resolve(k)?])
    }

    pub fn q(&self, k: usize) -> Result<&DMatrix<f64>> {
        Ok(&self.q[self.mode.resolve(k)?])
    }

    pub fn r(&self, k: usize) -> Result<&DMatrix<f64>> {
        Ok(&self.r[self.mode.resolve(k)?])
    }

    /// `C_k = Q_k^{1/2}` (positive semi-definite square root).
    pub fn c(&self, k: usize) -> Result<DMatrix<f64>> {
        linalg::psd_sqrt(self.q(k)?)
    }

    /// Repeats a periodic sequence `times` times, keeping the same dynamics.
    fn repeated(&self, times: usize) -> Self {
        let HorizonMode::Periodic { period } = self.mode else {
            return self.clone();
        };
        let cycle = |v: &Vec<DMatrix<f64>>| v.iter().cycle().take(period * times).cloned().collect();
        Self {
            mode: HorizonMode::Periodic { period: period * times },
            a: cycle(&self.a),
            b: cycle(&self.b),
            q: cycle(&self.q),
            r: cycle(&self.r),
            ..self.clone()
        }
    }
}

/// `Θ_{k,d} = A_{k+d−1} ⋯ A_k`, with `Θ_{k,0} = I`.
pub fn state_transition(pd: &ProblemData, k: usize, d: usize) -> Result<DMatrix<f64>> {
    let mut theta = DMatrix::identity(pd.n, pd.n);
    for j in k..k + d {
        theta = pd.a(j)? * theta;
    }
    Ok(theta)
}

/// `[Θ_{k+1,d−1}B_k, Θ_{k+2,d−2}B_{k+1}, …, Θ_{k+d,0}B_{k+d−1}]`, size `n × md`.
pub fn controllability_matrix(pd: &ProblemData, k: usize, d: usize) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(pd.n, pd.m * d);
    for i in 0..d {
        let block = state_transition(pd, k + i + 1, d - i - 1)? * pd.b(k + i)?;
        out.view_mut((0, i * pd.m), (pd.n, pd.m)).copy_from(&block);
    }
    Ok(out)
}

/// `[C_kΘ_{k,0}; C_{k+1}Θ_{k,1}; …; C_{k+d}Θ_{k,d}]`, size `n(d+1) × n`.
pub fn observability_matrix(pd: &ProblemData, k: usize, d: usize) -> Result<DMatrix<f64>> {
    let n = pd.n;
    let mut out = DMatrix::zeros(n * (d + 1), n);
    let mut theta = DMatrix::identity(n, n);
    for i in 0..=d {
        if i > 0 {
            theta = pd.a(k + i - 1)? * theta;
        }
        out.view_mut((i * n, 0), (n, n)).copy_from(&(pd.c(k + i)? * &theta));
    }
    Ok(out)
}

/// Base indices at which the rank conditions have to hold for depth `d`.
fn representable_indices(pd: &ProblemData, d: usize) -> std::ops::Range<usize> {
    match pd.mode {
        HorizonMode::Periodic { period } => 0..period,
        // the observability matrix reaches index k + d
        HorizonMode::Window { len } => 0..len.saturating_sub(d),
    }
}

/// Whether depth `d` passes the rank conditions; returns the first failing
/// base index otherwise.
pub fn check_depth(pd: &ProblemData, d: usize) -> Result<Option<usize>> {
    let range = representable_indices(pd, d);
    if range.is_empty() {
        return Ok(Some(0));
    }
    for k in range {
        let ctrb = controllability_matrix(pd, k, d)?;
        let obsv = observability_matrix(pd, k, d)?;
        if linalg::numerical_rank(&ctrb, pd.tol.rank_factor)? < pd.n
            || linalg::numerical_rank(&obsv, pd.tol.rank_factor)? < pd.n
        {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// Smallest depth `d ≤ d_max` for which every controllability matrix has full
/// row rank and every observability matrix full column rank.
pub fn find_min_d(pd: &ProblemData, d_max: usize) -> Result<usize> {
    if d_max == 0 {
        return Err(Error::InvalidArgument("d_max must be at least 1".into()));
    }
    let mut first_failure = 0;
    for d in 1..=d_max {
        match check_depth(pd, d)? {
            None => return Ok(d),
            Some(k) if d == 1 => first_failure = k,
            Some(_) => {}
        }
    }
    Err(Error::NoUniformD {
        d_max,
        failing_k: first_failure,
    })
}

/// Smallest depth in `find_min_d(pd, d_max)..=d_max` whose lifted problem
/// also has positive margins.
///
/// The rank test on the `(d+1)`-block observability matrix does not by itself
/// guarantee `Q̃_t ≻ 0`, since `Q̃_t` only sees `d` output blocks; this keeps
/// increasing `d` until the lifted data is usable.
pub fn choose_depth(pd: &ProblemData, d_max: usize) -> Result<usize> {
    let d_min = find_min_d(pd, d_max)?;
    let mut last_err = None;
    for d in d_min..=d_max {
        if check_depth(pd, d)?.is_some() {
            continue;
        }
        match lift(pd, d) {
            Ok(_) => return Ok(d),
            Err(e @ Error::MarginViolation { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or(Error::NoUniformD { d_max, failing_k: 0 }))
}

/// Block matrices of one lifted step, kept for inspection and unlifting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingBlocks {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub c_hat: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    pub delta: DMatrix<f64>,
}

/// One lifted step `(Ã_t, B̃_t, Q̃_t, R̃_t)` with cached derived quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedStep {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// `R̃⁻¹ΔᵀΞ`: maps a lifted input back to the base input block via
    /// `u = ũ − correction · x_dt`.
    pub correction: DMatrix<f64>,
    /// `B̃ R̃⁻¹ B̃ᵀ`.
    pub brb: DMatrix<f64>,
    pub blocks: LiftingBlocks,
}

/// Uniformity margins of the lifted data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// `inf_t λ_min(Q̃_t)`
    pub q_min: f64,
    /// `inf_t λ_min(B̃_t B̃_tᵀ)`
    pub b_min: f64,
    /// `inf_t λ_min(Ã_t Ã_tᵀ)`
    pub a_min: f64,
}

/// The `d`-step lifted problem.
#[derive(Debug, Clone)]
pub struct LiftedProblem {
    n: usize,
    m: usize,
    d: usize,
    mode: HorizonMode,
    steps: Vec<LiftedStep>,
    margins: Margins,
    discarded_tail: usize,
    base: ProblemData,
}

impl LiftedProblem {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Base input dimension.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Lifted input dimension `m·d`.
    pub fn input_dim(&self) -> usize {
        self.m * self.d
    }

    /// Lifted period (periodic mode) or number of complete lifted steps (window mode).
    pub fn mode(&self) -> HorizonMode {
        self.mode
    }

    pub fn is_periodic(&self) -> bool {
        self.mode.is_periodic()
    }

    /// Number of distinct lifted steps stored.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn margins(&self) -> Margins {
        self.margins
    }

    /// Base steps dropped at the end of a window because they do not fill a
    /// complete lifted step.
    pub fn discarded_tail(&self) -> usize {
        self.discarded_tail
    }

    /// Base data, with a periodic sequence extended to a multiple of `d`.
    pub fn base(&self) -> &ProblemData {
        &self.base
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.base.tol
    }

    pub fn step(&self, t: usize) -> Result<&LiftedStep> {
        Ok(&self.steps[self.mode.resolve(t)?])
    }

    pub fn steps(&self) -> &[LiftedStep] {
        &self.steps
    }
}

fn lift_step(pd: &ProblemData, t: usize, d: usize) -> Result<LiftedStep> {
    let (n, m) = (pd.n, pd.m);
    let k0 = d * t;
    let c: Vec<DMatrix<f64>> = (0..d).map(|i| pd.c(k0 + i)).collect::<Result<_>>()?;

    // Â y = [I; 0]: y_0 = I, y_{i+1} = A_{k0+i} y_i
    let mut y = DMatrix::identity(n, n);
    let mut xi = DMatrix::zeros(n * d, n);
    // Â Y = B̂: Y_0 = 0, Y_{i+1} = A_{k0+i} Y_i + B_{k0+i} E_i
    let mut big_y = DMatrix::zeros(n, m * d);
    let mut delta = DMatrix::zeros(n * d, m * d);
    for (i, ci) in c.iter().enumerate() {
        xi.view_mut((i * n, 0), (n, n)).copy_from(&(ci * &y));
        delta.view_mut((i * n, 0), (n, m * d)).copy_from(&(ci * &big_y));
        let a = pd.a(k0 + i)?;
        y = a * &y;
        big_y = a * &big_y;
        let mut cols = big_y.view_mut((0, i * m), (n, m));
        cols += pd.b(k0 + i)?;
    }
    let phi = y;
    let gamma = big_y;

    let r_blocks: Vec<&DMatrix<f64>> = (0..d).map(|i| pd.r(k0 + i)).collect::<Result<_>>()?;
    let r_tilde = symmetrize(&(linalg::block_diag(&r_blocks) + delta.transpose() * &delta));
    let chol = linalg::cholesky(&r_tilde, "Cholesky factor of the lifted input weight")?;
    let dt_xi = delta.transpose() * &xi;
    let correction = chol.solve(&dt_xi);
    let q_tilde = symmetrize(&(xi.transpose() * &xi - dt_xi.transpose() * &correction));
    let a_tilde = &phi - &gamma * &correction;
    let brb = symmetrize(&(&gamma * chol.solve(&gamma.transpose())));

    let mut a_hat = DMatrix::identity(n * (d + 1), n * (d + 1));
    let mut b_hat = DMatrix::zeros(n * (d + 1), m * d);
    let mut c_hat = DMatrix::zeros(n * d, n * (d + 1));
    for (i, ci) in c.iter().enumerate() {
        a_hat
            .view_mut(((i + 1) * n, i * n), (n, n))
            .copy_from(&(-pd.a(k0 + i)?.clone()));
        b_hat.view_mut(((i + 1) * n, i * m), (n, m)).copy_from(pd.b(k0 + i)?);
        c_hat.view_mut((i * n, i * n), (n, n)).copy_from(ci);
    }

    Ok(LiftedStep {
        a: a_tilde,
        b: gamma.clone(),
        q: q_tilde,
        r: r_tilde,
        correction,
        brb,
        blocks: LiftingBlocks {
            a_hat,
            b_hat,
            c_hat,
            phi,
            gamma,
            xi,
            delta,
        },
    })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Builds the `d`-step lifted problem and verifies its uniformity margins.
///
/// A periodic base sequence whose period is not a multiple of `d` is repeated
/// until it is, so the lifted problem has period `lcm(p, d)/d`. In window mode
/// only complete `d`-blocks are lifted.
pub fn lift(pd: &ProblemData, d: usize) -> Result<LiftedProblem> {
    if d == 0 {
        return Err(Error::InvalidArgument("lifting depth must be at least 1".into()));
    }
    let (base, mode, discarded_tail) = match pd.mode {
        HorizonMode::Periodic { period } => {
            let times = d / gcd(period, d);
            let base = pd.repeated(times);
            (
                base,
                HorizonMode::Periodic {
                    period: period * times / d,
                },
                0,
            )
        }
        HorizonMode::Window { len } => {
            if len < d {
                return Err(Error::InsufficientPreview {
                    required: d,
                    available: len,
                });
            }
            (pd.clone(), HorizonMode::Window { len: len / d }, len % d)
        }
    };

    let steps: Vec<LiftedStep> = (0..mode.len()).map(|t| lift_step(&base, t, d)).collect::<Result<_>>()?;

    let tol = base.tol;
    let mut margins = Margins {
        q_min: f64::INFINITY,
        b_min: f64::INFINITY,
        a_min: f64::INFINITY,
    };
    for (t, s) in steps.iter().enumerate() {
        let q_min = linalg::lambda_min(&s.q)?;
        let b_min = linalg::lambda_min(&(&s.b * s.b.transpose()))?;
        let a_min = linalg::lambda_min(&(&s.a * s.a.transpose()))?;
        for (margin, value) in [("q_min", q_min), ("b_min", b_min), ("a_min", a_min)] {
            if !(value > tol.margin_tol) {
                return Err(Error::MarginViolation { margin, value, step: t });
            }
        }
        margins.q_min = margins.q_min.min(q_min);
        margins.b_min = margins.b_min.min(b_min);
        margins.a_min = margins.a_min.min(a_min);
    }

    Ok(LiftedProblem {
        n: pd.n,
        m: pd.m,
        d,
        mode,
        steps,
        margins,
        discarded_tail,
        base,
    })
}

/// Propagates `x_{k+1} = A_k x_k + B_k u_k` over one `d`-block.
pub(crate) fn propagate_block(
    base: &ProblemData,
    t: usize,
    d: usize,
    x: &DVector<f64>,
    u_block: &DVector<f64>,
) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    let m = base.m;
    let mut out = Vec::with_capacity(d);
    let mut xk = x.clone();
    for i in 0..d {
        let k = d * t + i;
        let uk = u_block.rows(i * m, m).into_owned();
        let next = base.a(k)? * &xk + base.b(k)? * &uk;
        out.push((xk, uk));
        xk = next;
    }
    out.push((xk, DVector::zeros(0)));
    Ok(out)
}
