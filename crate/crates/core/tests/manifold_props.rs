use gausstube::manifold::{
    exp_map_coords, frechet_mean, geodesic_distance, interpolate, log_map, FrechetOptions,
    ManifoldPoint,
};
use gausstube::rigid::RigidTransform;
use nalgebra::DVector;
use proptest::prelude::*;

fn normalize4(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

fn pose() -> impl Strategy<Value = ManifoldPoint> {
    (
        prop::array::uniform3(-2.0f64..2.0),
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("quat too short", |q| q.iter().map(|x| x * x).sum::<f64>() > 0.09),
    )
        .prop_map(|(p, q)| ManifoldPoint::pose(p, normalize4(q)).unwrap())
}

// Tangent displacements short of the orientation cut locus, where exp is
// injective and the round trip is exact.
fn tangent6() -> impl Strategy<Value = DVector<f64>> {
    (prop::array::uniform3(-2.0f64..2.0), prop::array::uniform3(-0.9f64..0.9))
        .prop_map(|(p, w)| DVector::from_vec(vec![p[0], p[1], p[2], w[0], w[1], w[2]]))
}

proptest! {
    #[test]
    fn exp_log_round_trip(a in pose(), v in tangent6()) {
        let b = exp_map_coords(&a, &v).unwrap();
        let back = log_map(&a, &b).unwrap();
        let err = (&back.coords - &v).norm();
        prop_assert!(err < 1e-9, "tangent gap {err:.2e}");
        let c = exp_map_coords(&a, &back.coords).unwrap();
        prop_assert!(geodesic_distance(&b, &c).unwrap() < 1e-9);
    }

    #[test]
    fn log_norm_matches_distance(a in pose(), b in pose()) {
        let v = log_map(&a, &b).unwrap();
        let d = geodesic_distance(&a, &b).unwrap();
        prop_assert!((v.coords.norm() - d).abs() < 1e-9);
    }

    #[test]
    fn distance_is_symmetric_and_triangular(a in pose(), b in pose(), c in pose()) {
        let ab = geodesic_distance(&a, &b).unwrap();
        let ba = geodesic_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
        let ac = geodesic_distance(&a, &c).unwrap();
        let bc = geodesic_distance(&b, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn quaternion_sign_is_invisible(a in pose(), b in pose()) {
        let mut flipped = b.coords().clone();
        for i in 3..7 {
            flipped[i] = -flipped[i];
        }
        let b_neg = ManifoldPoint::new(b.spec().clone(), flipped).unwrap();
        let d = geodesic_distance(&a, &b).unwrap();
        let d_neg = geodesic_distance(&a, &b_neg).unwrap();
        prop_assert!((d - d_neg).abs() < 1e-12);
        let v = log_map(&a, &b).unwrap();
        let v_neg = log_map(&a, &b_neg).unwrap();
        prop_assert!((&v.coords - &v_neg.coords).norm() < 1e-12);
    }

    #[test]
    fn interpolation_hits_endpoints(a in pose(), v in tangent6()) {
        let b = exp_map_coords(&a, &v).unwrap();
        let at0 = interpolate(&a, &b, 0.0).unwrap();
        let at1 = interpolate(&a, &b, 1.0).unwrap();
        prop_assert!(geodesic_distance(&a, &at0).unwrap() < 1e-12);
        prop_assert!(geodesic_distance(&b, &at1).unwrap() < 1e-9);
    }

    #[test]
    fn frechet_mean_zeroes_the_gradient(
        base in pose(),
        offsets in prop::collection::vec(prop::array::uniform6(-0.5f64..0.5), 2..6),
    ) {
        let points: Vec<ManifoldPoint> = offsets
            .iter()
            .map(|o| exp_map_coords(&base, &DVector::from_row_slice(o)).unwrap())
            .collect();
        let mean = frechet_mean(&points, &FrechetOptions::default()).unwrap();
        let mut grad = DVector::zeros(6);
        for p in &points {
            grad += log_map(&mean, p).unwrap().coords;
        }
        grad /= points.len() as f64;
        prop_assert!(grad.norm() < 1e-8, "gradient norm {:.2e}", grad.norm());
    }

    #[test]
    fn rigid_inverse_cancels(
        t in prop::array::uniform3(-2.0f64..2.0),
        q in prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("quat too short", |q| q.iter().map(|x| x * x).sum::<f64>() > 0.09),
        p in prop::array::uniform3(-3.0f64..3.0),
    ) {
        let g = RigidTransform::new(t, normalize4(q)).unwrap();
        let round = g.inverse().transform_point(&g.transform_point(&p));
        for i in 0..3 {
            prop_assert!((round[i] - p[i]).abs() < 1e-12);
        }
        let id = g.compose(&g.inverse());
        for i in 0..3 {
            prop_assert!(id.translation[i].abs() < 1e-12);
        }
    }

    #[test]
    fn rigid_composition_associates(
        t1 in prop::array::uniform3(-1.0f64..1.0),
        t2 in prop::array::uniform3(-1.0f64..1.0),
        t3 in prop::array::uniform3(-1.0f64..1.0),
        q1 in prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("quat too short", |q| q.iter().map(|x| x * x).sum::<f64>() > 0.09),
        q2 in prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("quat too short", |q| q.iter().map(|x| x * x).sum::<f64>() > 0.09),
        q3 in prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("quat too short", |q| q.iter().map(|x| x * x).sum::<f64>() > 0.09),
        p in prop::array::uniform3(-3.0f64..3.0),
    ) {
        let a = RigidTransform::new(t1, normalize4(q1)).unwrap();
        let b = RigidTransform::new(t2, normalize4(q2)).unwrap();
        let c = RigidTransform::new(t3, normalize4(q3)).unwrap();
        let left = a.compose(&b).compose(&c).transform_point(&p);
        let right = a.compose(&b.compose(&c)).transform_point(&p);
        for i in 0..3 {
            prop_assert!((left[i] - right[i]).abs() < 1e-10);
        }
    }
}
