mod common;

use std::time::Instant;

use common::*;

#[test]
fn gradients_match_finite_differences() {
    let t = Instant::now();
    let worst = gradient_check(50);
    assert!(worst <= 1e-6, "worst relative error {worst:e}");
    assert!(t.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn hvps_match_gradient_differences() {
    let worst = hvp_check(50);
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn lanczos_matches_dense_hessian() {
    let worst = lanczos_check(12);
    assert!(worst <= 1e-5, "worst relative error {worst:e}");
}

#[test]
fn tridiagonal_solver_matches_jacobi() {
    let worst = tridiag_check(40);
    assert!(worst <= 1e-12, "worst error {worst:e}");
}

#[test]
fn radius_matches_closed_form() {
    let worst = radius_check(40);
    assert!(worst <= 1e-6, "worst error {worst:e}");
}

#[test]
fn unit_ball_log_volumes() {
    assert!(log_volume_check() <= 1e-10);
}

#[test]
fn cutoff_is_exact() {
    assert!(cutoff_check());
}

#[test]
fn taylor_is_exact_on_quadratics() {
    let worst = taylor_check(30);
    assert!(worst <= 1e-8, "worst error {worst:e}");
}

#[test]
fn jacobi_oracle_on_known_matrix() {
    // [[2,1],[1,2]] has eigenvalues 3 and 1.
    let e = jacobi_eigenvalues(vec![2.0, 1.0, 1.0, 2.0], 2);
    assert!((e[0] - 3.0).abs() < 1e-14 && (e[1] - 1.0).abs() < 1e-14);
}

#[test]
fn floor_rule_oracle() {
    assert_eq!(
        floor_rule_counts(4416, 1, 5, 10),
        [4416, 3533, 2827, 2262, 1810, 1448, 1159, 928, 743, 595, 476]
    );
}
