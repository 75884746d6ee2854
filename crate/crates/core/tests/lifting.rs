mod common;

use nalgebra::DMatrix;

use common::{gaussian, min_eig, periodic_problem, rng, time_invariant_problem};
use rhlqr::lifting::{controllability_matrix, lift, state_transition};
use rhlqr::{HorizonMode, ProblemData};

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let tol = sv.max() * 1e-10;
    sv.iter().filter(|&&s| s > tol).count()
}

#[test]
fn depth_one_is_the_identity() {
    for seed in 0..20 {
        let pd = periodic_problem(seed, 3, 3, 3);
        let lp = lift(&pd, 1).unwrap();
        for t in 0..3 {
            let s = lp.step(t).unwrap();
            assert!((&s.a - pd.a(t).unwrap()).abs().max() <= 1e-10);
            assert!((&s.b - pd.b(t).unwrap()).abs().max() <= 1e-10);
            assert!((&s.q - pd.q(t).unwrap()).abs().max() <= 1e-10);
            assert!((&s.r - pd.r(t).unwrap()).abs().max() <= 1e-10);
            assert!(s.correction.abs().max() <= 1e-12);
        }
    }
}

#[test]
fn transition_matches_product_loop() {
    let pd = periodic_problem(7, 3, 1, 4);
    let manual = pd.a(1).unwrap() * pd.a(0).unwrap();
    assert!((state_transition(&pd, 0, 2).unwrap() - manual).abs().max() <= 1e-14);
    assert_eq!(state_transition(&pd, 2, 0).unwrap(), DMatrix::identity(3, 3));
}

#[test]
fn phi_is_the_block_transition() {
    let pd = periodic_problem(11, 3, 1, 4);
    let d = 3;
    let lp = lift(&pd, d).unwrap();
    let base = lp.base();
    for t in 0..lp.len() {
        let theta = state_transition(base, d * t, d).unwrap();
        let phi = &lp.step(t).unwrap().blocks.phi;
        assert!((phi - theta).abs().max() <= 1e-12 * phi.abs().max().max(1.0));
    }
}

#[test]
fn two_step_controllability_rank() {
    let mut r = rng(3);
    for _ in 0..10 {
        let a: Vec<_> = (0..2)
            .map(|_| gaussian(&mut r, 2, 2) + DMatrix::identity(2, 2) * 3.0)
            .collect();
        let b: Vec<_> = (0..2).map(|_| gaussian(&mut r, 2, 1)).collect();
        let q = vec![DMatrix::identity(2, 2); 2];
        let rr = vec![DMatrix::identity(1, 1); 2];
        let pd = ProblemData::new(HorizonMode::Periodic { period: 2 }, a.clone(), b.clone(), q, rr).unwrap();
        let mut brute = DMatrix::zeros(2, 2);
        brute.set_column(0, &(&a[1] * &b[0]).column(0));
        brute.set_column(1, &b[1].column(0));
        let c = controllability_matrix(&pd, 0, 2).unwrap();
        assert!((&c - &brute).abs().max() <= 1e-12);
        assert_eq!(rank(&c), rank(&brute));
    }
}

#[test]
fn lifted_data_is_uniformly_definite() {
    for seed in 0..10 {
        let pd = periodic_problem(seed, 2, 1, 2);
        let lp = lift(&pd, 2).unwrap();
        for s in lp.steps() {
            assert!(min_eig(&s.q) > 0.0);
            assert!(min_eig(&(&s.b * s.b.transpose())) > 0.0);
            assert!(min_eig(&s.r) > 0.0);
        }
    }
}

#[test]
fn lifted_input_weight_dominates_block_diagonal() {
    let pd = time_invariant_problem(5, 3, 1);
    let d = 3;
    let lp = lift(&pd, d).unwrap();
    let m = pd.m();
    for (t, s) in lp.steps().iter().enumerate() {
        let mut diag = DMatrix::zeros(m * d, m * d);
        for i in 0..d {
            diag.view_mut((i * m, i * m), (m, m))
                .copy_from(pd.r(d * t + i).unwrap());
        }
        assert!(min_eig(&(&s.r - diag)) >= -1e-12);
    }
}

#[test]
fn window_keeps_complete_blocks() {
    let pd = periodic_problem(2, 2, 1, 1);
    let k = 7;
    let seq = |f: &dyn Fn(usize) -> DMatrix<f64>| (0..k).map(f).collect::<Vec<_>>();
    let window = ProblemData::new(
        HorizonMode::Window { len: k },
        seq(&|i| pd.a(i).unwrap().clone()),
        seq(&|i| pd.b(i).unwrap().clone()),
        seq(&|i| pd.q(i).unwrap().clone()),
        seq(&|i| pd.r(i).unwrap().clone()),
    )
    .unwrap();
    let lp = lift(&window, 2).unwrap();
    assert_eq!(lp.len(), 3);
    assert_eq!(lp.discarded_tail(), 1);
    assert!(lp.step(3).is_err());
}
