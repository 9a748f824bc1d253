mod common;

use common::*;
use crown_core::lasso::kkt_violation;
use crown_core::nodewise::{assemble_omega, nodewise_fit, NodewiseConfig, NodewiseFit, SelectionRule};
use nalgebra::{DMatrix, DVector};

fn toeplitz(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32))
}

/// `p x T` draws with covariance `sigma`.
fn draws(sigma: &DMatrix<f64>, t: usize, seed: u64) -> DMatrix<f64> {
    let l = sigma.clone().cholesky().unwrap().l();
    l * normal_matrix(&mut rng(seed), sigma.nrows(), t)
}

fn design_without(residuals: &DMatrix<f64>, j: usize) -> (DMatrix<f64>, DVector<f64>) {
    let p = residuals.nrows();
    let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
    let design = residuals.select_rows(&others).transpose();
    (design, residuals.row(j).transpose())
}

#[test]
fn toeplitz_precision_recovered() {
    let sigma = toeplitz(10, 0.25);
    let u = draws(&sigma, 500, 0);
    let fit = nodewise_fit(&u, &NodewiseConfig::default()).unwrap();
    let omega = assemble_omega(&fit);
    let truth = sigma.try_inverse().unwrap();
    let err = (&omega.omega_sym - &truth).amax();
    assert!(err < 0.15, "max error {err}");
    // no worse than inverting the sample covariance
    let sample = (&u * u.transpose() / 500.0).try_inverse().unwrap();
    assert!(err <= (&sample - &truth).amax());
    // symmetrized copy by an independent transpose-and-average
    let manual = DMatrix::from_fn(10, 10, |i, j| 0.5 * (omega.omega[(i, j)] + omega.omega[(j, i)]));
    assert_eq!(omega.omega_sym, manual);
}

#[test]
fn every_regression_satisfies_kkt() {
    let sigma = toeplitz(40, 0.25);
    let u = draws(&sigma, 200, 32);
    let fit = nodewise_fit(&u, &NodewiseConfig::default()).unwrap();
    assert_eq!(fit.selection_rule, SelectionRule::CrossValidation);
    for j in 0..40 {
        let (x, y) = design_without(&u, j);
        let v = kkt_violation(&x, &y, &fit.gammas[j], fit.lambdas[j]);
        assert!(v < 1e-6, "asset {j}: KKT residual {v:e}");
    }
}

#[test]
fn independent_errors_give_near_diagonal_precision() {
    let sigma = DMatrix::identity(8, 8);
    let u = draws(&sigma, 2000, 33);
    let fit = nodewise_fit(&u, &NodewiseConfig::default()).unwrap();
    for g in &fit.gammas {
        assert!(g.abs().sum() < 0.15);
    }
    let omega = assemble_omega(&fit);
    let off = DMatrix::from_fn(8, 8, |i, j| if i == j { 0.0 } else { omega.omega[(i, j)] });
    assert!(off.amax() < 0.1);
}

#[test]
fn two_assets() {
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let u = draws(&sigma, 300, 34);
    let fit = nodewise_fit(&u, &NodewiseConfig::fixed(0.01)).unwrap();
    assert!(fit.gammas.iter().all(|g| g.len() == 1));
    let omega = assemble_omega(&fit);
    assert_eq!(omega.omega[(0, 1)], -fit.gammas[0][0] / fit.taus_sq[0]);
    assert_eq!(omega.omega[(0, 0)], 1.0 / fit.taus_sq[0]);
}

fn manual_fit(gammas: Vec<DVector<f64>>, taus: Vec<f64>) -> NodewiseFit {
    let p = taus.len();
    NodewiseFit {
        gammas,
        taus_sq: DVector::from_vec(taus),
        lambdas: DVector::zeros(p),
        selection_rule: SelectionRule::FixedLambda,
        floored: Vec::new(),
    }
}

#[test]
fn assembly_arithmetic() {
    let fit = manual_fit(vec![DVector::from_vec(vec![0.5]); 2], vec![0.75, 0.75]);
    let omega = assemble_omega(&fit);
    assert!((omega.omega[(0, 0)] - 4.0 / 3.0).abs() < 1e-15);
    assert!((omega.omega[(0, 1)] + 2.0 / 3.0).abs() < 1e-15);

    let fit = manual_fit(vec![DVector::zeros(3); 4], vec![1.0; 4]);
    assert_eq!(assemble_omega(&fit).omega, DMatrix::identity(4, 4));
}

#[test]
fn degenerate_residual_rejected() {
    let mut u = normal_matrix(&mut rng(35), 4, 50);
    u.row_mut(2).fill(0.0);
    assert!(nodewise_fit(&u, &NodewiseConfig::default()).is_err());
}
