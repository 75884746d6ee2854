//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Tolerances, sample counts and time limits are fixed here.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use common::{
    base_value_iteration, distance_by_product, min_eig, random_spd_matrix, random_unit, rng, scalar_unit, spectral_norm,
};
use rhlqr::certificate::{hat_x_sequence, horizon_for_tolerance, terminal_candidate, CertificateConstants};
use rhlqr::closed_loop::{
    candidate_policy, performance_loss, rh_gains, simulate_with, unlift_controls, PenaltySource, SimulationOptions,
};
use rhlqr::lifting::{choose_depth, lift, LiftedProblem};
use rhlqr::oracle::{build_stacked, first_block, solve_stacked};
use rhlqr::riccati::{contraction_constants, riccati_apply, riccati_compose, solve_infinite_horizon, step_contraction};
use rhlqr::spd::{log_congruence_distance, riemannian_distance, spd_gap_bound, spd_log};
use rhlqr::workbench::{
    certify, generate_scenario, reference_solution, run_closed_loop, synthesize_horizon, RunOptions, ScenarioKind,
    ScenarioSpec,
};
use rhlqr::{ProblemData, SpdMatrix};

type Outcome = Result<String, String>;

/// Name, time limit in seconds, check.
type Criterion = (&'static str, u64, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Desk-scale random problem: n ≤ 6, m ≤ 4, base period ≤ 4, depth ≤ 4.
fn problem(seed: u64) -> ProblemData {
    let mut r = rng(seed ^ 0x00ac_ce55);
    let n: usize = r.random_range(1..=6);
    let m = r.random_range(n.div_ceil(4)..=n.min(4));
    let period = r.random_range(1..=4);
    let kind = if period == 1 {
        ScenarioKind::TimeInvariantRandom
    } else {
        ScenarioKind::PeriodicRandom
    };
    generate_scenario(&ScenarioSpec {
        kind,
        n,
        m,
        period,
        seed,
    })
    .unwrap()
}

fn lifted(pd: &ProblemData) -> LiftedProblem {
    lift(pd, choose_depth(pd, 4).unwrap()).unwrap()
}

fn unit_states(seed: u64, n: usize, count: usize) -> Vec<DVector<f64>> {
    let mut r = rng(seed ^ 0x5eed);
    (0..count).map(|_| random_unit(&mut r, n)).collect()
}

fn spd(m: &DMatrix<f64>) -> SpdMatrix {
    SpdMatrix::new(m.clone()).unwrap()
}

fn geometry() -> Outcome {
    let mut r = rng(1);
    let (mut worst_distance, mut worst_log, mut gap_violations) = (0.0f64, 0.0f64, 0);
    for i in 0..200 {
        let n = r.random_range(1..=8);
        let shift = if i % 2 == 0 { 0.05 } else { 1.0 };
        let (x, y, z) = (
            random_spd_matrix(&mut r, n, shift),
            random_spd_matrix(&mut r, n, shift),
            random_spd_matrix(&mut r, n, shift),
        );
        let (sx, sy, sz) = (spd(&x), spd(&y), spd(&z));

        let d = riemannian_distance(&sy, &sz).map_err(|e| e.to_string())?;
        let by_log = log_congruence_distance(&sy, &sz).map_err(|e| e.to_string())?;
        let by_product = distance_by_product(&y, &z);
        worst_distance = worst_distance
            .max((d - by_log).abs() / d.max(1.0))
            .max((d - by_product).abs() / d.max(1.0));

        let dzy = riemannian_distance(&sz, &sy).unwrap();
        ensure(d >= 0.0 && (d - dzy).abs() <= 1e-10 * d.max(1.0), || {
            format!("symmetry fails at draw {i}")
        })?;
        ensure(riemannian_distance(&sy, &sy).unwrap() <= 1e-12, || {
            format!("δ(Y, Y) ≠ 0 at draw {i}")
        })?;
        let via = riemannian_distance(&sy, &sx).unwrap() + riemannian_distance(&sx, &sz).unwrap();
        ensure(d <= via + 1e-9, || format!("triangle inequality fails at draw {i}"))?;

        // λ_min ≥ 1
        let big = &x + DMatrix::identity(n, n) * (1.0 - min_eig(&x)).max(0.0);
        let lhs = spectral_norm(&spd_log(&spd(&big)).unwrap());
        let rhs = spectral_norm(&big).ln();
        worst_log = worst_log.max((lhs - rhs).abs() / rhs.max(1.0));

        // Y ⪰ Z
        let upper = &z + &y * r.random_range(0.0..3.0);
        let bound = spd_gap_bound(&spd(&upper), &sz).unwrap();
        if spectral_norm(&(&upper - &z)) > bound * (1.0 + 1e-12) + 1e-14 {
            gap_violations += 1;
        }
    }
    ensure(worst_distance <= 1e-9, || {
        format!("distance disagreement {worst_distance:.3e}")
    })?;
    ensure(worst_log <= 1e-10, || format!("log-norm disagreement {worst_log:.3e}"))?;
    ensure(gap_violations == 0, || format!("{gap_violations} gap-bound violations"))?;
    Ok(format!(
        "200 draws, distance {worst_distance:.1e}, log-norm {worst_log:.1e}, 0 gap violations"
    ))
}

fn lifting_identity() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let mut r = rng(seed ^ 0x1d);
        let n = r.random_range(1..=4);
        let period = r.random_range(1..=4);
        let kind = if period == 1 {
            ScenarioKind::TimeInvariantRandom
        } else {
            ScenarioKind::PeriodicRandom
        };
        let pd = generate_scenario(&ScenarioSpec {
            kind,
            n,
            m: n,
            period,
            seed,
        })
        .unwrap();
        let lp = lift(&pd, 1).map_err(|e| format!("seed {seed}: {e}"))?;
        for t in 0..lp.len() {
            let s = lp.step(t).unwrap();
            for (lifted, base) in [
                (&s.a, pd.a(t).unwrap()),
                (&s.b, pd.b(t).unwrap()),
                (&s.q, pd.q(t).unwrap()),
                (&s.r, pd.r(t).unwrap()),
            ] {
                worst = worst.max((lifted - base).amax());
            }
        }
    }
    ensure(worst <= 1e-10, || format!("entrywise gap {worst:.3e}"))?;
    Ok(format!("50 problems, max entrywise gap {worst:.1e}"))
}

fn contraction() -> Outcome {
    let lp = lift(&scalar_unit(), 1).unwrap();
    let sc = step_contraction(lp.step(0).unwrap()).unwrap();
    for (name, v) in [("ζ", sc.zeta), ("ε", sc.eps), ("ρ", sc.rho)] {
        ensure((v - 0.5).abs() <= 1e-12, || format!("scalar {name} = {v}"))?;
    }
    let mut r = rng(3);
    let mut worst = f64::NEG_INFINITY;
    for draw in 0..100u64 {
        let lp = lifted(&problem(1000 + draw));
        let cc = contraction_constants(&lp).unwrap();
        let t = r.random_range(0..lp.len());
        let y = random_spd_matrix(&mut r, lp.n(), 0.1);
        let z = random_spd_matrix(&mut r, lp.n(), 0.1);
        let before = riemannian_distance(&spd(&y), &spd(&z)).unwrap();
        let after =
            riemannian_distance(&riccati_apply(&lp, t, &y).unwrap(), &riccati_apply(&lp, t, &z).unwrap()).unwrap();
        let excess = after - cc.per_step[t].rho * before;
        worst = worst.max(excess);
        ensure(excess <= 1e-8, || format!("draw {draw}: excess {excess:.3e}"))?;
    }
    Ok(format!("scalar ζ = ε = ρ = 0.5, 100 draws, worst excess {worst:.1e}"))
}

fn oracle() -> Outcome {
    let (mut worst_value, mut worst_action) = (0.0f64, 0.0f64);
    for inst in 0..100u64 {
        let pd = problem(2000 + inst);
        let lp = lifted(&pd);
        let chi = unit_states(inst, lp.n(), 1).remove(0);
        for horizon in 1..=6 {
            let t = (inst as usize) % lp.len();
            let x = terminal_candidate(&lp, t + horizon).unwrap();
            let sq = build_stacked(&lp, t, horizon, &chi, &x).map_err(|e| e.to_string())?;
            let (w, value) = solve_stacked(&sq).map_err(|e| e.to_string())?;
            let composed = riccati_compose(&lp, t, &x, horizon).unwrap().quad_form(&chi);
            worst_value = worst_value.max((value - composed).abs() / composed.abs());
            let u = candidate_policy(&lp, horizon).unwrap().action(t, &chi).unwrap();
            worst_action = worst_action.max((first_block(&sq, &w) - &u).amax() / u.amax().max(1.0));
        }
    }
    ensure(worst_value <= 1e-8, || format!("value gap {worst_value:.3e}"))?;
    ensure(worst_action <= 1e-8, || format!("first-block gap {worst_action:.3e}"))?;
    Ok(format!(
        "100 instances × T = 1..6, value {worst_value:.1e}, action {worst_action:.1e}"
    ))
}

fn stability() -> Outcome {
    let mut runs = 0;
    let mut worst_margin = f64::INFINITY;
    for seed in 0..50u64 {
        let lp = lifted(&problem(3000 + seed));
        for horizon in [1, 3] {
            let pol = candidate_policy(&lp, horizon).unwrap();
            for xi in unit_states(seed, lp.n(), 2) {
                let opts = SimulationOptions {
                    stop: Some(0.0),
                    min_steps: 200,
                    max_steps: 200,
                    ..Default::default()
                };
                let report = simulate_with(&lp, &pol, &xi, &opts).map_err(|e| format!("seed {seed}: {e}"))?;
                ensure(report.steps() == 200, || {
                    format!("seed {seed}: only {} steps", report.steps())
                })?;
                ensure(report.decrease_violations.is_empty(), || {
                    format!(
                        "seed {seed}, T = {horizon}: decrease violated at {:?}",
                        report.decrease_violations
                    )
                })?;
                ensure(report.envelope_violations.is_empty(), || {
                    format!(
                        "seed {seed}, T = {horizon}: envelope violated at {:?}",
                        report.envelope_violations
                    )
                })?;
                for (t, m) in report.decrease_margins.iter().enumerate() {
                    let x_sq = report.states[t].norm_squared();
                    if x_sq > 1e-200 {
                        worst_margin = worst_margin.min(m / (report.omega_max * x_sq));
                    }
                }
                runs += 1;
            }
        }
    }
    Ok(format!(
        "{runs} runs × 200 steps, 0 violations, worst relative margin {worst_margin:.1e}"
    ))
}

fn performance_bound() -> Outcome {
    let (mut runs, mut tightest) = (0, f64::INFINITY);
    for seed in 0..50u64 {
        let lp = lifted(&problem(4000 + seed));
        let ra = reference_solution(&lp)
            .map_err(|e| e.to_string())?
            .ok_or("no reference")?;
        for horizon in [1, 2, 4, 8] {
            let cert = certify(&lp, horizon, Some(&ra)).map_err(|e| format!("seed {seed}, T = {horizon}: {e}"))?;
            let pol = candidate_policy(&lp, horizon).unwrap();
            for xi in unit_states(seed, lp.n(), 5) {
                let run =
                    run_closed_loop(&lp, &pol, &xi, Some(&ra), &RunOptions::default()).map_err(|e| e.to_string())?;
                let loss = run.loss.ok_or("missing loss interval")?;
                let bound = cert.beta_bound * xi.norm_squared();
                ensure(loss.hi <= bound, || {
                    format!(
                        "seed {seed}, T = {horizon}: loss ≤ {:.6e} exceeds bound {bound:.6e}",
                        loss.hi
                    )
                })?;
                ensure(loss.hi >= 0.0, || {
                    format!("seed {seed}, T = {horizon}: negative loss interval {loss:?}")
                })?;
                tightest = tightest.min(bound - loss.hi);
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} runs, smallest bound slack {tightest:.2e}"))
}

fn horizon_selection() -> Outcome {
    let worked = CertificateConstants {
        omega_max: 2.0,
        omega_min: 1.0,
        lambda_min: 1.0,
        lambda_max: 2.0,
        delta_bar: 1.0,
        zeta_bar: 1.0,
        eps_min: 1.0,
    };
    let t = horizon_for_tolerance(&worked, 0.1).map_err(|e| e.to_string())?;
    ensure(t == 8, || format!("worked example gives T = {t}"))?;

    let (mut horizons, mut capped) = (Vec::new(), 0);
    for seed in 0..20u64 {
        let lp = lifted(&problem(5000 + seed));
        let ra = reference_solution(&lp)
            .map_err(|e| e.to_string())?
            .ok_or("no reference")?;
        let mut prev = 0;
        for beta in [1.0, 0.1, 0.01] {
            let s = synthesize_horizon(&lp, beta, rhlqr::certificate::DEFAULT_T_MAX, Some(&ra))
                .map_err(|e| format!("seed {seed}, β̄ = {beta}: {e}"))?;
            ensure(s.horizon >= prev, || format!("seed {seed}: T not monotone in β̄"))?;
            capped += usize::from(!s.certified);
            prev = s.horizon;
            let pol = candidate_policy(&lp, s.horizon).unwrap();
            for xi in unit_states(seed, lp.n(), 3) {
                let run =
                    run_closed_loop(&lp, &pol, &xi, Some(&ra), &RunOptions::default()).map_err(|e| e.to_string())?;
                let loss = run.loss.ok_or("missing loss interval")?;
                ensure(loss.hi <= beta * xi.norm_squared(), || {
                    format!("seed {seed}, β̄ = {beta}, T = {}: loss ≤ {:.3e}", s.horizon, loss.hi)
                })?;
            }
        }
        horizons.push(prev);
    }
    Ok(format!(
        "worked example T = 8, 20 problems, T at β̄ = 0.01 up to {}, {capped} of 60 syntheses at the cap",
        horizons.iter().max().unwrap()
    ))
}

fn cost_equivalence() -> Outcome {
    let (mut found, mut worst_rel) = (0, 0.0f64);
    let mut seed = 6000u64;
    while found < 30 {
        seed += 1;
        if seed > 6400 {
            return Err(format!("only {found} problems admit d = 2"));
        }
        let pd = problem(seed);
        let Ok(lp) = lift(&pd, 2) else { continue };
        found += 1;
        let xi = unit_states(seed, lp.n(), 1).remove(0);

        let pol = candidate_policy(&lp, 3).unwrap();
        let opts = SimulationOptions {
            stop: Some(1e-16),
            ..Default::default()
        };
        let report = simulate_with(&lp, &pol, &xi, &opts).map_err(|e| e.to_string())?;
        let base = unlift_controls(&lp, &pol, &report).map_err(|e| e.to_string())?;
        let rel = (base.cost - report.realized_cost).abs() / report.realized_cost;
        worst_rel = worst_rel.max(rel);
        ensure(rel <= 1e-8, || format!("seed {seed}: relative cost gap {rel:.3e}"))?;

        // penalties from the infinite-horizon approximation
        let len = lp.len();
        let ra = solve_infinite_horizon(&lp, 0, len, 1e-13).map_err(|e| e.to_string())?;
        let hat: Vec<SpdMatrix> = (0..=len).map(|t| ra.at(t).unwrap().clone()).collect();
        let near = rh_gains(&lp, &hat, 1, PenaltySource::Custom).map_err(|e| e.to_string())?;
        let report = simulate_with(&lp, &near, &xi, &opts).map_err(|e| e.to_string())?;
        let loss = performance_loss(&report, &ra, &xi).map_err(|e| e.to_string())?;
        ensure(loss.lo <= 0.0 && 0.0 <= loss.hi, || {
            format!("seed {seed}: optimal cost outside {loss:?}")
        })?;
    }
    Ok(format!(
        "30 problems, worst relative gap {worst_rel:.1e}, optimal cost inside every interval"
    ))
}

fn infinite_horizon() -> Outcome {
    let lp = lift(&scalar_unit(), 1).unwrap();
    let ra = solve_infinite_horizon(&lp, 0, 0, 1e-13).map_err(|e| e.to_string())?;
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let p = ra.at(0).unwrap().matrix()[(0, 0)];
    ensure((p - golden).abs() <= 1e-9, || format!("scalar fixture gives {p}"))?;

    let mut worst_ti = 0.0f64;
    for seed in 0..10u64 {
        let n = 1 + (seed as usize % 4);
        let pd = generate_scenario(&ScenarioSpec {
            kind: ScenarioKind::TimeInvariantRandom,
            n,
            m: 1 + (seed as usize % n),
            period: 1,
            seed: 7000 + seed,
        })
        .unwrap();
        let lp = lifted(&pd);
        let ra = solve_infinite_horizon(&lp, 0, 0, 1e-12).map_err(|e| format!("seed {seed}: {e}"))?;
        let oracle = base_value_iteration(&pd, 20_000);
        let rel = spectral_norm(&(ra.at(0).unwrap().matrix() - &oracle)) / spectral_norm(&oracle);
        worst_ti = worst_ti.max(rel);
        ensure(rel <= 1e-7, || {
            format!("time-invariant seed {seed}: relative gap {rel:.3e}")
        })?;
    }

    for seed in 0..10u64 {
        let lp = lifted(&problem(7100 + seed));
        let len = lp.len();
        let ra = solve_infinite_horizon(&lp, 0, 2 * len, 1e-12).map_err(|e| e.to_string())?;
        for t in 0..=len {
            let gap = spectral_norm(&(ra.at(t).unwrap().matrix() - ra.at(t + len).unwrap().matrix()));
            let slack = ra.spectral_gap(t).unwrap() + ra.spectral_gap(t + len).unwrap();
            ensure(gap <= slack, || {
                format!("periodic seed {seed}, t = {t}: {gap:.3e} > {slack:.3e}")
            })?;
        }
        // the penalties approach the same limit from above
        let hat = hat_x_sequence(&lp, 1, 0, 0).unwrap();
        ensure(
            min_eig(&(hat[0].matrix() - ra.at(0).unwrap().matrix())) >= -ra.spectral_gap(0).unwrap() - 1e-12,
            || format!("periodic seed {seed}: candidate below P̂"),
        )?;
    }
    Ok(format!(
        "golden ratio to {:.1e}, time-invariant gap {worst_ti:.1e}, periodic consistent",
        (p - golden).abs()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 matrix geometry", 5, geometry),
        ("2 depth-one lifting identity", 2, lifting_identity),
        ("3 Riccati contraction", 10, contraction),
        ("4 oracle equivalence", 30, oracle),
        ("5 stability", 60, stability),
        ("6 performance-loss bound", 300, performance_bound),
        ("7 horizon selection", 300, horizon_selection),
        ("8 cost equivalence", 120, cost_equivalence),
        ("9 infinite-horizon approximation", 10, infinite_horizon),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= Duration::from_secs(limit) {
                Ok(detail)
            } else {
                Err(format!(
                    "{detail}; took {:.1} s, limit {limit} s",
                    elapsed.as_secs_f64()
                ))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS {name} ({:.2} s): {detail}", elapsed.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({:.2} s): {detail}", elapsed.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
