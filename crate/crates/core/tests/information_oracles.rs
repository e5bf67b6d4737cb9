mod common;

use common::*;
use infosplit_core::information::{
    average_information, observed_information, InformationSet, QuadraticTerms, TraceTerms,
};
use infosplit_core::likelihood::{fd_hessian, RemlPoint};
use proptest::prelude::*;

#[test]
fn observed_matches_negated_fd_hessian() {
    let mut rng = rng(30);
    for kind in [Kind::Linear, Kind::Ar1, Kind::Composite] {
        for _ in 0..100 {
            let inst = random_instance(&mut rng, kind, 5, 30);
            let io = observed_information(&inst.data, &inst.model, &inst.theta).unwrap();
            let fd = fd_hessian(&inst.data, &inst.model, &inst.theta, 1e-4).unwrap();
            let err = (&io.entries + &fd).amax() / fd.amax();
            assert!(err <= 1e-4, "{kind:?}: {err:e}");
        }
    }
}

#[test]
fn all_matrices_match_dense_oracle() {
    let mut rng = rng(31);
    for _ in 0..150 {
        let kind = any_kind(&mut rng);
        let inst = random_instance(&mut rng, kind, 5, 30);
        let set = InformationSet::compute(&inst.data, &inst.model, &inst.theta).unwrap();
        let oracle = dense_info(&inst);
        assert!(rel_mat(&set.average.entries, &oracle.average) <= 1e-10);
        assert!(rel_mat(&set.observed.entries, &oracle.observed) <= 1e-10);
        assert!(rel_mat(&set.fisher.entries, &oracle.fisher) <= 1e-10);
    }
}

#[test]
fn average_information_costs_m_plus_one_projections() {
    let mut rng = rng(32);
    for _ in 0..40 {
        let kind = any_kind(&mut rng);
        let inst = random_instance(&mut rng, kind, 5, 30);
        let point = RemlPoint::new(&inst.data, &inst.model, &inst.theta).unwrap();
        let before = point.ctx().p_applications();
        QuadraticTerms::compute(&point, inst.data.y()).unwrap();
        let quad = point.ctx().p_applications() - before;
        assert_eq!(quad, inst.model.m() + 1);
        TraceTerms::compute(&point).unwrap();
        let traces = point.ctx().p_applications() - before - quad;
        assert!(traces >= inst.model.m() * inst.data.n());
    }
}

#[test]
fn fisher_and_average_are_positive_semidefinite_and_symmetric() {
    let mut rng = rng(33);
    for _ in 0..150 {
        let kind = any_kind(&mut rng);
        let inst = random_instance(&mut rng, kind, 5, 30);
        let set = InformationSet::compute(&inst.data, &inst.model, &inst.theta).unwrap();
        for info in [&set.fisher, &set.average] {
            let scale = info.entries.amax();
            assert!(info.min_eigenvalue() >= -1e-10 * scale);
        }
        for info in [&set.observed, &set.fisher, &set.average, &set.remainder] {
            let e = &info.entries;
            assert!((e - e.transpose()).amax() <= 1e-12 * (1.0 + e.amax()));
        }
    }
}

#[test]
fn linear_models_split_exactly() {
    let mut rng = rng(34);
    for _ in 0..200 {
        let inst = random_instance(&mut rng, Kind::Linear, 5, 50);
        let set = InformationSet::compute(&inst.data, &inst.model, &inst.theta).unwrap();
        let m = inst.model.m();
        let z = &set.remainder.entries;
        let mean = (&set.observed.entries + &set.fisher.entries) * 0.5;
        for k in 1..=m {
            for l in 1..=m {
                assert_eq!(z[(k, l)], 0.0);
                let a = set.average.entries[(k, l)];
                assert!(
                    (a - mean[(k, l)]).abs() <= 1e-12 * mean[(k, l)].abs().max(f64::MIN_POSITIVE)
                );
            }
        }
        assert_eq!(z[(0, 0)], 0.0);
    }
}

#[test]
fn average_ignores_second_derivatives() {
    let mut rng = rng(35);
    let inst = random_instance(&mut rng, Kind::Ar1, 12, 12);
    let ia = average_information(&inst.data, &inst.model, &inst.theta).unwrap();
    let oracle = dense_info(&inst);
    assert!(rel_mat(&ia.entries, &oracle.average) <= 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn splitting_identity_holds(seed in any::<u64>(), kind in 0u8..3) {
        let kind = [Kind::Linear, Kind::Ar1, Kind::Composite][kind as usize];
        let inst = random_instance(&mut rng(seed), kind, 5, 50);
        let set = InformationSet::compute(&inst.data, &inst.model, &inst.theta).unwrap();
        prop_assert!(set.splitting_residual().max_scaled <= 1e-10);
    }

    #[test]
    fn splitting_holds_away_from_the_truth(seed in any::<u64>(), scale in 0.2f64..5.0) {
        let mut r = rng(seed);
        let kind = any_kind(&mut r);
        let mut inst = random_instance(&mut r, kind, 5, 30);
        inst.theta.sigma2 *= scale;
        let set = InformationSet::compute(&inst.data, &inst.model, &inst.theta).unwrap();
        prop_assert!(set.splitting_residual().max_scaled <= 1e-10);
    }
}
