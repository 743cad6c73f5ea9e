use gausstube::gp::DiscreteGp;
use gausstube::manifold::{ManifoldPoint, ManifoldSpec};
use gausstube::mixture::{GpMixture, Mode};
use gausstube::updating::{apply_convex, moment_match, Constraint, LqNorm, UpdateOptions};
use nalgebra::DVector;

fn scalar_gp(mu: &[f64], var: f64) -> DiscreteGp {
    let spec = ManifoldSpec::euclidean(1);
    let means = mu
        .iter()
        .map(|v| ManifoldPoint::new(spec.clone(), DVector::from_vec(vec![*v])).unwrap())
        .collect();
    let vars = vec![DVector::from_vec(vec![var]); mu.len()];
    DiscreteGp::from_parts(means, vars, 20.0).unwrap()
}

fn half_space(at: f64) -> Constraint {
    Constraint::HalfSpace { point: vec![at], normal: vec![1.0], d_safe: 0.0 }
}

#[test]
fn vacuous_constraints_change_nothing() {
    let spec = ManifoldSpec::euclidean(1);
    let mean = ManifoldPoint::new(spec, DVector::from_vec(vec![0.3])).unwrap();
    let var = DVector::from_vec(vec![0.25]);
    let mut r = gausstube::rng::rng(1);
    let tr = moment_match(&mean, &var, &half_space(-40.0), 50_000, &mut r).unwrap();
    assert_eq!(tr.p_keep, 1.0);
    assert_eq!(tr.kept, 50_000);
    let (pm, pv) = tr.posterior.unwrap();
    assert!((pm.coords()[0] - 0.3).abs() < 0.01);
    assert!((pv[0] - 0.25).abs() / 0.25 < 0.05);
}

#[test]
fn truncation_strictly_contracts_variance() {
    let spec = ManifoldSpec::euclidean(1);
    let mean = ManifoldPoint::new(spec, DVector::from_vec(vec![0.0])).unwrap();
    let var = DVector::from_vec(vec![1.0]);
    let mut r = gausstube::rng::rng(2);
    let tr = moment_match(&mean, &var, &half_space(0.0), 50_000, &mut r).unwrap();
    let (pm, pv) = tr.posterior.unwrap();
    assert!(pm.coords()[0] > 0.0);
    // Halving a Gaussian leaves 1 - 2/pi of the variance; well under the prior.
    assert!(pv[0] < 0.5);
}

#[test]
fn priors_renormalize_after_confidence_zeroing() {
    let mixture = GpMixture::from_modes(
        vec![
            Mode { prior: 0.5, model: scalar_gp(&[-5.0, -5.0], 0.01) },
            Mode { prior: 0.5, model: scalar_gp(&[1.0, 1.0], 0.01) },
        ],
        None,
    )
    .unwrap();
    let opts = UpdateOptions { z: 1.96, q: LqNorm::Power(1.0), n_samples: 5_000, seed: 0 };
    let (post, report) = apply_convex(&mixture, &half_space(0.0), &opts).unwrap();
    assert!(report.per_mode[0].zeroed_by_ci);
    assert_eq!(post.mode(0).prior, 0.0);
    assert_eq!(post.mode(1).prior, 1.0);
    let total: f64 = post.priors().iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn unit_power_weight_is_the_mean_survival() {
    let mu: Vec<f64> = (0..30).map(|t| -0.5 + t as f64 / 29.0).collect();
    let mixture = GpMixture::single(scalar_gp(&mu, 0.09));
    let opts = UpdateOptions { z: 3.0, q: LqNorm::Power(1.0), n_samples: 2_000, seed: 3 };
    let (_, report) = apply_convex(&mixture, &half_space(0.0), &opts).unwrap();
    let m = &report.per_mode[0];
    let mean_p: f64 = m.p_keep.iter().sum::<f64>() / m.p_keep.len() as f64;
    assert!((m.weight_factor - mean_p).abs() < 1e-12);
    assert!(mean_p > 0.0 && mean_p < 1.0);
}

#[test]
fn tighter_sets_never_gain_weight() {
    let mu: Vec<f64> = (0..30).map(|t| 0.2 + 0.3 * (t as f64 / 29.0)).collect();
    let mixture = GpMixture::single(scalar_gp(&mu, 0.09));
    let mut factors = Vec::new();
    for at in [-0.5, 0.0, 0.25, 0.5] {
        let opts = UpdateOptions { z: 3.0, q: LqNorm::Power(1.0), n_samples: 4_000, seed: 9 };
        let (_, report) = apply_convex(&mixture, &half_space(at), &opts).unwrap();
        factors.push(report.per_mode[0].weight_factor);
    }
    for w in factors.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "shrinking the set raised the weight: {factors:?}");
    }
}

#[test]
fn max_aggregation_dominates_the_mean() {
    let mu: Vec<f64> = (0..30).map(|t| -0.5 + t as f64 / 29.0).collect();
    let mixture = GpMixture::single(scalar_gp(&mu, 0.09));
    let base = UpdateOptions { z: 3.0, q: LqNorm::Power(1.0), n_samples: 2_000, seed: 4 };
    let (_, mean_rep) = apply_convex(&mixture, &half_space(0.0), &base).unwrap();
    let opts = UpdateOptions { q: LqNorm::Max, ..base };
    let (_, max_rep) = apply_convex(&mixture, &half_space(0.0), &opts).unwrap();
    assert!(
        max_rep.per_mode[0].weight_factor >= mean_rep.per_mode[0].weight_factor - 1e-12
    );
}
