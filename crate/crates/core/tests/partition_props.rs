use gausstube::metrics::adjusted_rand_index;
use gausstube::partition::{
    cluster_dbscan, cluster_gmm_bic, cluster_kmeans_bic, vectorize, DbscanOptions, GmmOptions,
    KMeansOptions, Partition, DEFAULT_SUBSAMPLE_LEN,
};
use gausstube::synth::{generate, Family, SynthSpec};

fn three_mode_vectors() -> (Vec<gausstube::manifold::ManifoldPoint>, Vec<usize>) {
    let data = generate(&SynthSpec {
        family: Family::MultiModePose { modes: 3, separation: 10.0, gripper: false },
        n_demos: 15,
        len: 40,
        noise_sigma: 0.01,
        smooth_jitter: 0.0,
        seed: 2,
        sample_rate_hz: 20.0,
    })
    .unwrap();
    let v = vectorize(&data.demos, DEFAULT_SUBSAMPLE_LEN).unwrap();
    (v, data.mode_labels)
}

fn assert_valid(p: &Partition, n: usize) {
    assert_eq!(p.labels().len(), n);
    let parts = p.parts();
    assert_eq!(parts.len(), p.n_parts());
    let mut seen = vec![false; n];
    for part in &parts {
        assert!(!part.is_empty());
        for &d in part {
            assert!(!seen[d], "demo {d} in two parts");
            seen[d] = true;
        }
    }
    assert!(seen.iter().all(|s| *s), "some demo unassigned");
}

#[test]
fn every_method_yields_a_valid_partition() {
    let (v, _) = three_mode_vectors();
    let km = cluster_kmeans_bic(&v, DEFAULT_SUBSAMPLE_LEN, &KMeansOptions::default()).unwrap();
    let gm = cluster_gmm_bic(&v, DEFAULT_SUBSAMPLE_LEN, &GmmOptions::default()).unwrap();
    let db = cluster_dbscan(&v, DEFAULT_SUBSAMPLE_LEN, &DbscanOptions::default()).unwrap();
    for p in [&km, &gm, &db] {
        assert_valid(p, v.len());
    }
}

#[test]
fn clustering_is_seed_deterministic() {
    let (v, _) = three_mode_vectors();
    let opts = KMeansOptions::default();
    let a = cluster_kmeans_bic(&v, DEFAULT_SUBSAMPLE_LEN, &opts).unwrap();
    let b = cluster_kmeans_bic(&v, DEFAULT_SUBSAMPLE_LEN, &opts).unwrap();
    assert_eq!(a.labels(), b.labels());
    assert_eq!(a.bic_table, b.bic_table);

    let gopts = GmmOptions::default();
    let ga = cluster_gmm_bic(&v, DEFAULT_SUBSAMPLE_LEN, &gopts).unwrap();
    let gb = cluster_gmm_bic(&v, DEFAULT_SUBSAMPLE_LEN, &gopts).unwrap();
    assert_eq!(ga.labels(), gb.labels());

    let da = cluster_dbscan(&v, DEFAULT_SUBSAMPLE_LEN, &DbscanOptions::default()).unwrap();
    let db = cluster_dbscan(&v, DEFAULT_SUBSAMPLE_LEN, &DbscanOptions::default()).unwrap();
    assert_eq!(da.labels(), db.labels());
}

#[test]
fn quality_is_judged_up_to_relabeling() {
    let (v, truth) = three_mode_vectors();
    let km = cluster_kmeans_bic(&v, DEFAULT_SUBSAMPLE_LEN, &KMeansOptions::default()).unwrap();
    assert_eq!(adjusted_rand_index(km.labels(), &truth).unwrap(), 1.0);

    // The same grouping under any renaming of the labels scores identically.
    let renamed: Vec<usize> = truth.iter().map(|&l| (l + 2) % 3).collect();
    assert_eq!(adjusted_rand_index(&renamed, &truth).unwrap(), 1.0);

    let mut corrupted = truth.clone();
    corrupted[0] = (corrupted[0] + 1) % 3;
    assert!(adjusted_rand_index(&corrupted, &truth).unwrap() < 1.0);
}
