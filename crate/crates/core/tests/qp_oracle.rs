//! The dual active-set solver against exhaustive active-set enumeration on
//! small random problems.

mod common;

use common::{brute_force, random_problem, rng};
use nalgebra::DVector;
use rand::Rng;
use teleop_core::qp::{self, kkt_residual};
use teleop_core::{QpSolver, QpStatus};

#[test]
fn matches_exhaustive_enumeration() {
    let mut rng = rng(31);
    let (mut optimal, mut infeasible) = (0, 0);
    for case in 0..200 {
        let p = random_problem(&mut rng);
        let sol = qp::solve(&p).unwrap();
        match brute_force(&p) {
            Some(x) => {
                optimal += 1;
                assert_eq!(sol.status, QpStatus::Optimal, "case {case}");
                assert!((&sol.x - &x).amax() < 1e-7, "case {case}: {} vs {}", sol.x, x);
                assert!(sol.kkt_residual < 1e-8, "case {case}: kkt {:e}", sol.kkt_residual);
                assert!(kkt_residual(&p, &sol.x, &sol.multipliers) < 1e-8);
            }
            None => {
                infeasible += 1;
                assert_eq!(sol.status, QpStatus::Infeasible, "case {case}");
                let y = sol.certificate.expect("infeasible solution carries a certificate");
                assert!(y.iter().all(|&v| v >= 0.0));
                assert!((p.w_mat.transpose() * &y).amax() < 1e-8 * y.amax().max(1.0));
                assert!(y.dot(&p.w_vec) < 0.0);
            }
        }
    }
    assert!(optimal >= 150, "{optimal} optimal cases");
    assert!(infeasible >= 1, "{infeasible} infeasible cases");
}

#[test]
fn warm_started_sequence_matches_enumeration() {
    let mut rng = rng(32);
    for _ in 0..10 {
        let base = random_problem(&mut rng);
        let mut solver = QpSolver::new();
        for _ in 0..20 {
            let mut p = base.clone();
            p.linear += DVector::from_fn(p.dim(), |_, _| rng.gen_range(-0.05..0.05));
            p.w_vec += DVector::from_fn(p.rows(), |_, _| rng.gen_range(-0.05..0.05));
            let sol = solver.solve(&p).unwrap();
            if let Some(x) = brute_force(&p) {
                assert_eq!(sol.status, QpStatus::Optimal);
                assert!((&sol.x - &x).amax() < 1e-7);
                assert!(sol.kkt_residual < 1e-8);
            } else {
                assert_eq!(sol.status, QpStatus::Infeasible);
            }
        }
    }
}

#[test]
fn feasible_origin_problems_are_never_infeasible() {
    // w ≥ 0 makes q̇ = 0 feasible, as the joint and VFI rows do inside the box
    let mut rng = rng(33);
    for _ in 0..200 {
        let mut p = random_problem(&mut rng);
        p.w_vec.iter_mut().for_each(|v| *v = v.abs());
        let sol = qp::solve(&p).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(p.max_violation(&sol.x) < 1e-10);
        assert!(sol.kkt_residual < 1e-8);
    }
}
