use gausstube::gp::DiscreteGp;
use gausstube::manifold::{ManifoldPoint, ManifoldSpec};
use gausstube::mixture::{kl_chain, learn_transitions, GpMixture, Mode, SkillChain};
use gausstube::partition::{Partition, PartitionMethod};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn scalar_gp(mu: &[f64], var: f64) -> DiscreteGp {
    let spec = ManifoldSpec::euclidean(1);
    let means = mu
        .iter()
        .map(|v| ManifoldPoint::new(spec.clone(), DVector::from_vec(vec![*v])).unwrap())
        .collect();
    let vars = vec![DVector::from_vec(vec![var]); mu.len()];
    DiscreteGp::from_parts(means, vars, 20.0).unwrap()
}

fn mixture_with_priors(priors: &[f64]) -> GpMixture {
    let modes = priors
        .iter()
        .enumerate()
        .map(|(i, &p)| Mode { prior: p, model: scalar_gp(&[i as f64, i as f64 + 1.0], 0.01) })
        .collect();
    GpMixture::from_modes(modes, None).unwrap()
}

fn random_labels(r: &mut impl Rng, n: usize, parts: usize) -> Vec<usize> {
    // Every part index appears at least once so the labeling is contiguous.
    let mut labels: Vec<usize> = (0..n).map(|i| if i < parts { i } else { r.gen_range(0..parts) }).collect();
    for i in (1..n).rev() {
        labels.swap(i, r.gen_range(0..=i));
    }
    labels
}

#[test]
fn learned_transition_rows_are_distributions() {
    let mut r = gausstube::rng::rng(17);
    for _ in 0..20 {
        let n = 8 + r.gen_range(0..12);
        let chain: Vec<Partition> = (0..4)
            .map(|_| {
                let parts = 1 + r.gen_range(0..4usize.min(n));
                Partition::new(random_labels(&mut r, n, parts), PartitionMethod::KMeansBic, 20, vec![])
                    .unwrap()
            })
            .collect();
        let refs: Vec<&Partition> = chain.iter().collect();
        for t in learn_transitions(&refs).unwrap() {
            for k in 0..t.nrows() {
                let row: f64 = (0..t.ncols()).map(|l| t[(k, l)]).sum();
                assert!((row - 1.0).abs() < 1e-12, "row sums to {row}");
            }
        }
    }
}

#[test]
fn enumeration_agrees_with_per_path_probability() {
    let mut r = gausstube::rng::rng(29);
    for _ in 0..10 {
        let n_skills = 2 + (r.gen::<u64>() % 4) as usize;
        let counts: Vec<usize> = (0..n_skills).map(|_| 1 + (r.gen::<u64>() % 4) as usize).collect();
        let skills: Vec<GpMixture> = counts
            .iter()
            .map(|&m| {
                let mut priors: Vec<f64> = (0..m).map(|_| r.gen::<f64>() + 0.05).collect();
                let total: f64 = priors.iter().sum();
                for p in &mut priors {
                    *p /= total;
                }
                mixture_with_priors(&priors)
            })
            .collect();
        let transitions: Vec<DMatrix<f64>> = counts
            .windows(2)
            .map(|w| {
                let mut t = DMatrix::zeros(w[0], w[1]);
                for k in 0..w[0] {
                    let row: Vec<f64> = (0..w[1]).map(|_| r.gen::<f64>() + 0.05).collect();
                    let total: f64 = row.iter().sum();
                    for (l, v) in row.iter().enumerate() {
                        t[(k, l)] = v / total;
                    }
                }
                t
            })
            .collect();
        let chain = SkillChain::new(skills, transitions).unwrap();
        let paths = chain.enumerate_paths();
        assert_eq!(paths.len(), counts.iter().product::<usize>());
        let mut total = 0.0;
        for p in &paths {
            let direct = chain.modal_path_probability(&p.modes).unwrap();
            assert!((p.probability - direct).abs() < 1e-15);
            total += p.probability;
        }
        assert!((total - 1.0).abs() < 1e-9, "paths sum to {total}");
    }
}

#[test]
fn kl_rows_ignore_a_common_divergence_offset() {
    let v = 0.04;
    let a = GpMixture::single(scalar_gp(&[0.0, 0.0], v));
    let gaps = [0.1, 0.3, 0.5];
    let make = |extra: f64| {
        let modes = gaps
            .iter()
            .map(|g| {
                let start = (g * g + 2.0 * v * extra).sqrt();
                Mode { prior: 1.0 / 3.0, model: scalar_gp(&[start, start], v) }
            })
            .collect();
        GpMixture::from_modes(modes, None).unwrap()
    };
    // Equal variances make each divergence a pure quadratic gap; growing
    // every squared gap by the same 2*v*c adds the constant c to each row
    // entry's divergence and must leave the softmax untouched.
    let base = kl_chain(&a, &make(0.0)).unwrap();
    let shifted = kl_chain(&a, &make(3.0)).unwrap();
    for l in 0..3 {
        assert!((base[(0, l)] - shifted[(0, l)]).abs() < 1e-9);
    }
    let row: f64 = (0..3).map(|l| base[(0, l)]).sum();
    assert!((row - 1.0).abs() < 1e-12);
}

#[test]
fn zero_prior_modes_are_never_drawn() {
    let mixture = mixture_with_priors(&[0.0, 0.3, 0.7]);
    let mut r = gausstube::rng::rng(5);
    for _ in 0..20_000 {
        assert_ne!(mixture.sample_mode(&mut r), 0);
    }

    let skills = vec![mixture_with_priors(&[1.0]), mixture_with_priors(&[0.4, 0.6])];
    let t = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
    let chain = SkillChain::new(skills, vec![t]).unwrap();
    let mut r = gausstube::rng::rng(6);
    for _ in 0..5_000 {
        let path = chain.sample_modal_path(&mut r).unwrap();
        assert_eq!(path.modes[1], 1, "sampled a zero-probability transition");
    }
}
