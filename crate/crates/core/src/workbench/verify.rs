//! Batch verification of one problem: every stability and optimality claim
//! the certificate makes is checked on seeded random draws.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::pipeline::{certify, reference_solution, run_closed_loop, synthesize_horizon, RunOptions};
use super::report::CheckResult;
use crate::certificate::{terminal_candidate, DEFAULT_T_MAX};
use crate::closed_loop::{candidate_policy, feedback_gain};
use crate::lifting::{choose_depth, lift, LiftedProblem, ProblemData};
use crate::oracle::{build_stacked, first_block, solve_stacked};
use crate::riccati::{contraction_constants, riccati_apply, riccati_compose, RiccatiApprox};
use crate::spd::{log_congruence_distance, riemannian_distance, SpdMatrix};
use crate::Result;

/// Largest depth tried when the depth is not given.
pub const VERIFY_D_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub d: Option<usize>,
    /// Random draws per check.
    pub seeds: usize,
    /// Steps every stability run covers.
    pub stability_steps: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            d: None,
            seeds: 3,
            stability_steps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub d: usize,
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        !self.checks.iter().any(CheckResult::failed)
    }
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SpdMatrix {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let m = g.transpose() * &g + DMatrix::identity(n, n) * 0.1;
    SpdMatrix::new((&m + m.transpose()) * 0.5).expect("Gram matrix plus a shift is SPD")
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Collects failures as messages; errors count as failures.
struct Check {
    name: &'static str,
    failures: Vec<String>,
    count: usize,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Check {
            name,
            failures: Vec::new(),
            count: 0,
        }
    }

    fn expect(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.count += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    fn run(&mut self, f: impl FnOnce(&mut Self) -> Result<()>) {
        if let Err(e) = f(self) {
            self.failures.push(e.to_string());
        }
    }

    fn finish(self) -> CheckResult {
        if self.failures.is_empty() {
            CheckResult::new(self.name, true, format!("{} comparisons", self.count))
        } else {
            let shown: Vec<_> = self.failures.iter().take(3).cloned().collect();
            CheckResult::new(
                self.name,
                false,
                format!(
                    "{} of {} failed: {}",
                    self.failures.len(),
                    self.count.max(1),
                    shown.join("; ")
                ),
            )
        }
    }
}

fn geometry(rng: &mut ChaCha8Rng, n: usize, seeds: usize) -> CheckResult {
    let mut c = Check::new("spd-geometry");
    c.run(|c| {
        for _ in 0..seeds {
            let (x, y, z) = (random_spd(rng, n), random_spd(rng, n), random_spd(rng, n));
            let dyz = riemannian_distance(&y, &z)?;
            let alt = log_congruence_distance(&y, &z)?;
            c.expect((dyz - alt).abs() <= 1e-9 * dyz.max(1.0), || {
                format!("distance routes differ: {dyz} vs {alt}")
            });
            let dzy = riemannian_distance(&z, &y)?;
            c.expect((dyz - dzy).abs() <= 1e-9 * dyz.max(1.0), || {
                "distance is not symmetric".into()
            });
            let tri = riemannian_distance(&y, &x)? + riemannian_distance(&x, &z)?;
            c.expect(dyz <= tri + 1e-9, || "triangle inequality fails".into());
            c.expect(riemannian_distance(&y, &y)? <= 1e-12, || {
                "distance to itself is not zero".into()
            });
        }
        Ok(())
    });
    c.finish()
}

fn lifting_identity(pd: &ProblemData, lp: &LiftedProblem) -> CheckResult {
    if lp.d() != 1 {
        return CheckResult::skipped("lifting-identity", format!("depth is {}", lp.d()));
    }
    let mut c = Check::new("lifting-identity");
    c.run(|c| {
        for t in 0..lp.len() {
            let s = lp.step(t)?;
            let pairs = [(&s.a, pd.a(t)?), (&s.b, pd.b(t)?), (&s.q, pd.q(t)?), (&s.r, pd.r(t)?)];
            for (lifted, base) in pairs {
                let diff = (lifted - base).abs().max();
                c.expect(diff <= 1e-10, || {
                    format!("lifted data differs by {diff:.3e} at t = {t}")
                });
            }
        }
        Ok(())
    });
    c.finish()
}

fn contraction(rng: &mut ChaCha8Rng, lp: &LiftedProblem, seeds: usize) -> CheckResult {
    let mut c = Check::new("riccati-contraction");
    c.run(|c| {
        let cc = contraction_constants(lp)?;
        for t in 0..lp.len().min(10) {
            let rho = cc.per_step[t].rho;
            for _ in 0..seeds {
                let (y, z) = (random_spd(rng, lp.n()), random_spd(rng, lp.n()));
                let before = riemannian_distance(&y, &z)?;
                let after =
                    riemannian_distance(&riccati_apply(lp, t, y.matrix())?, &riccati_apply(lp, t, z.matrix())?)?;
                c.expect(after <= rho * before + 1e-8, || {
                    format!("t = {t}: {after:.6e} > {rho:.6} · {before:.6e}")
                });
            }
        }
        Ok(())
    });
    c.finish()
}

fn oracle_equivalence(rng: &mut ChaCha8Rng, lp: &LiftedProblem, seeds: usize) -> CheckResult {
    let mut c = Check::new("oracle-equivalence");
    c.run(|c| {
        for horizon in 1..=4usize {
            if !lp.is_periodic() && horizon >= lp.len() {
                break;
            }
            let x = terminal_candidate(lp, horizon)?;
            let composed = riccati_compose(lp, 0, &x, horizon)?;
            let next = riccati_compose(lp, 1, &x, horizon - 1)?;
            let k = feedback_gain(lp.step(0)?, &next)?;
            for _ in 0..seeds {
                let chi = random_unit(rng, lp.n());
                let (w, value) = solve_stacked(&build_stacked(lp, 0, horizon, &chi, &x)?)?;
                let expected = composed.quad_form(&chi);
                c.expect((value - expected).abs() <= 1e-8 * expected, || {
                    format!("T = {horizon}: oracle value {value:.12e} vs {expected:.12e}")
                });
                let action = -(&k * &chi);
                let w0 = first_block(&build_stacked(lp, 0, horizon, &chi, &x)?, &w);
                let diff = (&w0 - &action).norm();
                c.expect(diff <= 1e-8 * action.norm().max(1.0), || {
                    format!("T = {horizon}: first input block differs by {diff:.3e}")
                });
            }
        }
        Ok(())
    });
    c.finish()
}

fn infinite_horizon(lp: &LiftedProblem, ra: Option<&RiccatiApprox>) -> CheckResult {
    let Some(ra) = ra else {
        return CheckResult::skipped("infinite-horizon", "window too short for a certified reference");
    };
    let mut c = Check::new("infinite-horizon");
    c.run(|c| {
        for t in ra.t0..ra.t1 {
            let (p, p_next) = (ra.at(t).expect("in range"), ra.at(t + 1).expect("in range"));
            let image = riccati_apply(lp, t, p_next.matrix())?;
            let diff = crate::linalg::norm2(&(image.matrix() - p.matrix()))?;
            let slack = 2.0 * ra.spectral_gap(t)? + 1e-12 * p.norm2()?;
            c.expect(diff <= slack, || {
                format!("t = {t}: P̂_t − 𝓡_t(P̂_(t+1)) has norm {diff:.3e}")
            });
        }
        if lp.is_periodic() {
            let (first, last) = (ra.at(0).expect("in range"), ra.at(lp.len()).expect("in range"));
            let diff = crate::linalg::norm2(&(first.matrix() - last.matrix()))?;
            let slack = ra.spectral_gap(0)? + ra.spectral_gap(lp.len())? + 1e-12 * first.norm2()?;
            c.expect(diff <= slack, || {
                format!("P̂_0 and P̂_L differ by {diff:.3e} (slack {slack:.3e})")
            });
        }
        Ok(())
    });
    c.finish()
}

fn closed_loop_checks(
    rng: &mut ChaCha8Rng,
    lp: &LiftedProblem,
    ra: Option<&RiccatiApprox>,
    opts: &VerifyOptions,
) -> Vec<CheckResult> {
    let mut stability = Check::new("stability");
    let mut loss = Check::new("performance-loss");
    let mut cost = Check::new("cost-equivalence");
    let mut synthesis = Check::new("horizon-synthesis");
    let run_opts = RunOptions {
        min_steps: if lp.is_periodic() { opts.stability_steps } else { 0 },
        ..RunOptions::default()
    };

    let horizons: Vec<usize> = [1usize, 2, 4]
        .into_iter()
        .filter(|&h| lp.is_periodic() || h < lp.len())
        .collect();
    for horizon in horizons {
        let outcome = (|| -> Result<()> {
            let cert = certify(lp, horizon, ra)?;
            let pol = candidate_policy(lp, horizon)?;
            for _ in 0..opts.seeds {
                let xi = random_unit(rng, lp.n());
                let run = run_closed_loop(lp, &pol, &xi, ra, &run_opts)?;
                stability.expect(run.report.passed(), || {
                    format!(
                        "T = {horizon}: {} decrease and {} envelope violations",
                        run.report.decrease_violations.len(),
                        run.report.envelope_violations.len()
                    )
                });
                let lifted = run.report.realized_cost;
                cost.expect((run.base.cost - lifted).abs() <= 1e-8 * lifted.max(1e-300), || {
                    format!(
                        "T = {horizon}: base cost {:.12e} vs lifted {lifted:.12e}",
                        run.base.cost
                    )
                });
                if let Some(l) = run.loss {
                    let bound = cert.beta_bound * xi.norm_squared();
                    loss.expect(l.hi <= bound, || {
                        format!("T = {horizon}: loss up to {:.6e} above bound {bound:.6e}", l.hi)
                    });
                    loss.expect(l.lo >= -2.0 * (l.p_gap + l.rounding), || {
                        format!("T = {horizon}: loss interval starts at {:.6e}", l.lo)
                    });
                }
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            stability.failures.push(format!("T = {horizon}: {e}"));
        }
    }

    if lp.is_periodic() && ra.is_some() {
        for beta in [1.0, 0.1] {
            synthesis.run(|c| {
                let s = synthesize_horizon(lp, beta, DEFAULT_T_MAX, ra)?;
                c.expect(s.certificate.beta_bound <= beta, || {
                    format!("β̄ = {beta}: bound {}", s.certificate.beta_bound)
                });
                let pol = candidate_policy(lp, s.horizon)?;
                for _ in 0..opts.seeds {
                    let xi = random_unit(rng, lp.n());
                    let run = run_closed_loop(lp, &pol, &xi, ra, &RunOptions::default())?;
                    let hi = run.loss.map_or(f64::INFINITY, |l| l.hi);
                    c.expect(hi <= beta * xi.norm_squared(), || {
                        format!("β̄ = {beta}, T = {}: measured loss up to {hi:.6e}", s.horizon)
                    });
                }
                Ok(())
            });
        }
    }

    let mut out = vec![stability.finish()];
    out.push(if ra.is_some() && lp.is_periodic() {
        loss.finish()
    } else {
        CheckResult::skipped("performance-loss", "no infinite-horizon reference")
    });
    out.push(cost.finish());
    out.push(if lp.is_periodic() && ra.is_some() {
        synthesis.finish()
    } else {
        CheckResult::skipped("horizon-synthesis", "needs a periodic problem")
    });
    out
}

/// Runs every check on `pd`. Errors are returned only when the problem
/// cannot be lifted at all.
pub fn verify_problem(pd: &ProblemData, opts: &VerifyOptions) -> Result<VerificationReport> {
    let d = match opts.d {
        Some(d) => d,
        None => choose_depth(pd, VERIFY_D_MAX)?,
    };
    let lp = lift(pd, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let seeds = opts.seeds.max(1);

    let mut checks = vec![
        geometry(&mut rng, pd.n(), seeds),
        lifting_identity(pd, &lp),
        contraction(&mut rng, &lp, seeds),
        oracle_equivalence(&mut rng, &lp, seeds),
    ];
    let ra = reference_solution(&lp);
    match &ra {
        Ok(ra) => checks.push(infinite_horizon(&lp, ra.as_ref())),
        Err(e) => checks.push(CheckResult::new("infinite-horizon", false, e.to_string())),
    }
    let ra = ra.ok().flatten();
    checks.extend(closed_loop_checks(&mut rng, &lp, ra.as_ref(), opts));
    Ok(VerificationReport { d, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workbench::scenario::{generate_scenario, ScenarioKind, ScenarioSpec};

    #[test]
    fn scalar_unit_passes() {
        let pd = generate_scenario(&ScenarioSpec::scalar_unit()).unwrap();
        let rep = verify_problem(&pd, &VerifyOptions::default()).unwrap();
        assert!(rep.passed(), "{:#?}", rep.checks);
    }

    #[test]
    fn periodic_random_passes() {
        let pd = generate_scenario(&ScenarioSpec {
            kind: ScenarioKind::PeriodicRandom,
            n: 3,
            m: 2,
            period: 3,
            seed: 5,
        })
        .unwrap();
        let rep = verify_problem(&pd, &VerifyOptions::default()).unwrap();
        assert!(rep.passed(), "{:#?}", rep.checks);
    }
}
