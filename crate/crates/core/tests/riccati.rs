mod common;

use nalgebra::DMatrix;

use common::{
    base_value_iteration, lifted, min_eig, periodic_problem, random_spd, random_unit, rng, scalar_unit, spectral_norm,
    time_invariant_problem,
};
use rhlqr::certificate::terminal_candidate;
use rhlqr::lifting::lift;
use rhlqr::riccati::{contraction_constants, riccati_apply, riccati_compose, solve_infinite_horizon};
use rhlqr::spd::riemannian_distance;
use rhlqr::SpdMatrix;

#[test]
fn scalar_fixed_point_from_value_iteration() {
    let lp = lift(&scalar_unit(), 1).unwrap();
    let ra = solve_infinite_horizon(&lp, 0, 0, 1e-12).unwrap();
    let oracle = base_value_iteration(&scalar_unit(), 200)[(0, 0)];
    assert!((oracle - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-14);
    assert!((ra.at(0).unwrap().matrix()[(0, 0)] - oracle).abs() < 1e-9);
}

#[test]
fn time_invariant_solution_matches_long_iteration() {
    for seed in 0..8 {
        let pd = time_invariant_problem(seed, 3, 1);
        let lp = lifted(&pd);
        let ra = solve_infinite_horizon(&lp, 0, 0, 1e-12).unwrap();
        let oracle = base_value_iteration(&pd, 20_000);
        let p = ra.at(0).unwrap().matrix();
        assert!(
            spectral_norm(&(p - &oracle)) <= 1e-7 * spectral_norm(&oracle),
            "seed {seed}"
        );
    }
}

#[test]
fn periodic_solution_is_period_consistent() {
    for seed in 0..6 {
        let pd = periodic_problem(seed, 3, 2, 3);
        let lp = lifted(&pd);
        let len = lp.len();
        let ra = solve_infinite_horizon(&lp, 0, len, 1e-10).unwrap();
        let gap = spectral_norm(&(ra.at(0).unwrap().matrix() - ra.at(len).unwrap().matrix()));
        let slack = ra.spectral_gap(0).unwrap() + ra.spectral_gap(len).unwrap();
        assert!(gap <= slack + 1e-13, "seed {seed}: {gap} > {slack}");
        // P̂ from the candidate dominates the long-iteration solution
        let oracle = base_value_iteration(&pd, 20_000);
        assert!(min_eig(&(ra.at(0).unwrap().matrix() - &oracle)) >= -1e-9 * spectral_norm(&oracle));
    }
}

#[test]
fn operator_order_properties() {
    let mut r = rng(21);
    for seed in 0..10 {
        let lp = lifted(&periodic_problem(seed, 3, 2, 2));
        let n = lp.n();
        for t in 0..lp.len() {
            let p = random_spd(&mut r, n);
            let extra = random_spd(&mut r, n);
            let x = SpdMatrix::new(p.matrix() + extra.matrix()).unwrap();
            let (rx, rp) = (
                riccati_apply(&lp, t, x.matrix()).unwrap(),
                riccati_apply(&lp, t, p.matrix()).unwrap(),
            );
            let scale = rx.norm2().unwrap();
            // monotone
            assert!(min_eig(&(rx.matrix() - rp.matrix())) >= -1e-10 * scale);
            // bounded below by Q̃ and above by the candidate
            let q = &lp.step(t).unwrap().q;
            assert!(min_eig(&(rp.matrix() - q)) >= -1e-10 * scale);
            let cand = terminal_candidate(&lp, t).unwrap();
            assert!(min_eig(&(cand.matrix() - rx.matrix())) >= -1e-10 * cand.norm2().unwrap());
            // value gap
            let delta = riemannian_distance(&x, &p).unwrap();
            for _ in 0..3 {
                let chi = random_unit(&mut r, n);
                let gap = rx.quad_form(&chi) - rp.quad_form(&chi);
                assert!(gap <= p.norm2().unwrap() * delta.exp_m1() * (1.0 + 1e-10) + 1e-12);
            }
        }
    }
}

#[test]
fn contraction_on_random_pairs() {
    let mut r = rng(99);
    for seed in 0..20 {
        let lp = lifted(&periodic_problem(seed, 3, 1, 2));
        let cc = contraction_constants(&lp).unwrap();
        for t in 0..lp.len() {
            for _ in 0..5 {
                let (y, z) = (random_spd(&mut r, lp.n()), random_spd(&mut r, lp.n()));
                let before = riemannian_distance(&y, &z).unwrap();
                let after = riemannian_distance(
                    &riccati_apply(&lp, t, y.matrix()).unwrap(),
                    &riccati_apply(&lp, t, z.matrix()).unwrap(),
                )
                .unwrap();
                assert!(after <= cc.per_step[t].rho * before + 1e-8);
            }
        }
    }
}

#[test]
fn composition_keeps_fixed_point() {
    let lp = lift(&scalar_unit(), 1).unwrap();
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let p = SpdMatrix::new(DMatrix::from_element(1, 1, golden)).unwrap();
    for steps in [1, 2, 7] {
        let out = riccati_compose(&lp, 0, &p, steps).unwrap();
        assert!((out.matrix()[(0, 0)] - golden).abs() < 1e-14);
    }
}
