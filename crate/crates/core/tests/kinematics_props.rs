use gausstube::kinematics::{ik_solve, IkOptions, KinematicChain};
use gausstube::rigid::RigidTransform;
use gausstube::synth::chain_by_name;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn config_from_units(chain: &KinematicChain, units: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        chain.n_joints(),
        chain.joints.iter().zip(units).map(|(j, u)| {
            // Keep a sliver away from the limits so central differences stay
            // inside the valid range.
            let span = j.q_max - j.q_min;
            j.q_min + span * (0.01 + 0.98 * u)
        }),
    )
}

fn fd_jacobian(
    chain: &KinematicChain,
    q: &DVector<f64>,
    target: &RigidTransform,
) -> DMatrix<f64> {
    let n = chain.n_joints();
    let mut out = DMatrix::zeros(6, n);
    let eps = 1e-6;
    for i in 0..n {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[i] += eps;
        qm[i] -= eps;
        let ep = chain.pose_error(&qp, target).unwrap();
        let em = chain.pose_error(&qm, target).unwrap();
        for row in 0..6 {
            out[(row, i)] = (ep[row] - em[row]) / (2.0 * eps);
        }
    }
    out
}

fn check_jacobian(chain: &KinematicChain, units: &[f64]) -> Result<(), TestCaseError> {
    let q = config_from_units(chain, units);
    let target = chain.fk(&chain.home()).unwrap();
    let analytic = chain.error_jacobian(&q, &target).unwrap();
    let numeric = fd_jacobian(chain, &q, &target);
    let gap = (analytic - numeric).abs().max();
    prop_assert!(gap < 1e-6, "{}: jacobian gap {gap:.2e}", chain.name);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn planar_jacobian_matches_finite_differences(u in prop::collection::vec(0.0f64..1.0, 3)) {
        check_jacobian(&chain_by_name("planar3").unwrap(), &u)?;
    }

    #[test]
    fn six_dof_jacobian_matches_finite_differences(u in prop::collection::vec(0.0f64..1.0, 6)) {
        check_jacobian(&chain_by_name("arm6").unwrap(), &u)?;
    }

    #[test]
    fn seven_dof_jacobian_matches_finite_differences(u in prop::collection::vec(0.0f64..1.0, 7)) {
        check_jacobian(&chain_by_name("arm7").unwrap(), &u)?;
    }

    #[test]
    fn ik_recovers_nearby_targets(u in prop::collection::vec(-1.0f64..1.0, 6)) {
        let chain = chain_by_name("arm6").unwrap();
        let mut q_goal = chain.home();
        for (i, v) in u.iter().enumerate() {
            q_goal[i] += 0.25 * v;
        }
        let q_goal = chain.clamp(&q_goal);
        let target = chain.fk(&q_goal).unwrap();
        let solved = ik_solve(&chain, &target, &chain.home(), &IkOptions::default()).unwrap();
        let err = chain.pose_error(&solved, &target).unwrap().norm();
        prop_assert!(err < 1e-6, "residual {err:.2e}");
        for (i, j) in chain.joints.iter().enumerate() {
            prop_assert!(solved[i] >= j.q_min - 1e-12 && solved[i] <= j.q_max + 1e-12);
        }
    }

    #[test]
    fn clamp_respects_limits(u in prop::collection::vec(-3.0f64..3.0, 7)) {
        let chain = chain_by_name("arm7").unwrap();
        let wild = DVector::from_iterator(7, u.iter().map(|v| v * 4.0));
        let q = chain.clamp(&wild);
        for (i, j) in chain.joints.iter().enumerate() {
            prop_assert!(q[i] >= j.q_min && q[i] <= j.q_max);
        }
    }
}
