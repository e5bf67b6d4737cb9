mod common;

use common::*;
use infosplit_core::model::{CovarianceModel, ParamKind};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn bumped(kappa: &[f64], k: usize, h: f64) -> Vec<f64> {
    let mut out = kappa.to_vec();
    out[k] += h;
    out
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = rng(1);
    for _ in 0..60 {
        let kind = any_kind(&mut rng);
        let inst = random_instance(&mut rng, kind, 4, 20);
        let kappa = &inst.theta.kappa;
        for k in 0..inst.model.m() {
            let h = 1e-6;
            let fd = (inst.model.cov_matrix(&bumped(kappa, k, h)).unwrap()
                - inst.model.cov_matrix(&bumped(kappa, k, -h)).unwrap())
                / (2.0 * h);
            let analytic = inst.model.cov_grad(kappa, k).unwrap();
            assert!(rel_mat(&fd, &analytic) < 1e-6, "{kind:?} k={k}");
        }
    }
}

#[test]
fn hessian_matches_differences_of_gradient() {
    let mut rng = rng(2);
    for _ in 0..60 {
        let kind = any_kind(&mut rng);
        let inst = random_instance(&mut rng, kind, 4, 20);
        let kappa = &inst.theta.kappa;
        let m = inst.model.m();
        for k in 0..m {
            for l in 0..m {
                let h = 1e-6;
                let fd = (inst.model.cov_grad(&bumped(kappa, l, h), k).unwrap()
                    - inst.model.cov_grad(&bumped(kappa, l, -h), k).unwrap())
                    / (2.0 * h);
                let analytic = inst.model.cov_hess(kappa, k, l).unwrap();
                if inst.model.hess_is_zero(k, l) {
                    assert_eq!(analytic, DMatrix::zeros(inst.model.n(), inst.model.n()));
                    assert!(fd.amax() < 1e-8);
                } else {
                    assert!(rel_mat(&fd, &analytic) < 1e-6, "{kind:?} ({k},{l})");
                }
            }
        }
    }
}

#[test]
fn variance_component_second_derivatives_vanish() {
    let mut rng = rng(3);
    for _ in 0..30 {
        let inst = random_instance(&mut rng, Kind::Linear, 4, 20);
        assert!(inst.model.is_linear());
        let m = inst.model.m();
        for k in 0..m {
            for l in 0..m {
                assert!(inst.model.hess_is_zero(k, l));
                let v = normal_vec(&mut rng, inst.model.n());
                assert_eq!(
                    inst.model.hess_matvec(&inst.theta.kappa, k, l, &v).unwrap(),
                    None
                );
            }
        }
    }
}

#[test]
fn matvecs_agree_with_dense_derivatives() {
    let mut rng = rng(4);
    for _ in 0..40 {
        let kind = any_kind(&mut rng);
        let inst = random_instance(&mut rng, kind, 4, 25);
        let kappa = &inst.theta.kappa;
        let v = normal_vec(&mut rng, inst.model.n());
        for k in 0..inst.model.m() {
            let dense = inst.model.cov_grad(kappa, k).unwrap() * &v;
            let fast = inst.model.grad_matvec(kappa, k, &v).unwrap();
            assert!(rel_vec(&fast, &dense) < 1e-13);
            if let Some(fast) = inst.model.hess_matvec(kappa, k, k, &v).unwrap() {
                let dense = inst.model.cov_hess(kappa, k, k).unwrap() * &v;
                assert!(rel_vec(&fast, &dense) < 1e-13);
            }
        }
    }
}

fn feasible_kappa(model: &CovarianceModel, raw: &[f64]) -> Vec<f64> {
    let bounds = model.bounds();
    (0..model.m())
        .map(|k| match model.param_kind(k).unwrap() {
            ParamKind::Gamma(_) => bounds.gamma_min + raw[k] * 10.0,
            ParamKind::Phi => (2.0 * raw[k] - 1.0) * bounds.phi_max(),
        })
        .collect()
}

fn assert_cholesky(model: &CovarianceModel, raw: &[f64]) {
    let kappa = feasible_kappa(model, raw);
    let h = model.cov_matrix(&kappa).unwrap();
    assert!(h.clone().cholesky().is_some());
    assert_eq!(h, h.transpose());
}

fn groups(n: usize, levels: usize) -> DMatrix<f64> {
    let assign: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % levels).collect();
    indicator(&assign, levels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn feasible_variance_components_factor(n in 2usize..=20, levels in 1usize..5, raw in prop::collection::vec(0.0f64..1.0, 2)) {
        let model = CovarianceModel::variance_components(n, vec![groups(n, levels), DMatrix::identity(n, n)]).unwrap();
        assert_cholesky(&model, &raw);
    }

    #[test]
    fn feasible_ar1_factors(n in 1usize..=20, raw in 0.0f64..1.0) {
        assert_cholesky(&CovarianceModel::ar1(n).unwrap(), &[raw]);
    }

    #[test]
    fn feasible_composite_factors(n in 2usize..=20, levels in 1usize..5, raw in prop::collection::vec(0.0f64..1.0, 2)) {
        let model = CovarianceModel::composite(n, vec![groups(n, levels)]).unwrap();
        assert_cholesky(&model, &raw);
    }

    #[test]
    fn ar1_edge_of_box_factors(n in 2usize..=20, sign in prop::bool::ANY) {
        let model = CovarianceModel::ar1(n).unwrap();
        let phi = if sign { model.bounds().phi_max() } else { -model.bounds().phi_max() };
        let h = model.cov_matrix(&[phi]).unwrap();
        prop_assert!(h.cholesky().is_some());
    }
}

#[test]
fn toeplitz_matvec_on_unit_vectors_recovers_columns() {
    let model = CovarianceModel::ar1(7).unwrap();
    let r = model.cov_matrix(&[0.6]).unwrap();
    for j in 0..7 {
        let mut e = DVector::zeros(7);
        e[j] = 1.0;
        let col = model.grad_matvec(&[0.6], 0, &e).unwrap();
        let dense = model.cov_grad(&[0.6], 0).unwrap();
        assert!((col - dense.column(j)).amax() < 1e-15);
        assert!((r[(0, j)] - 0.6f64.powi(j as i32)).abs() < 1e-15);
    }
}
