//! Modal partitioning of demonstration sets.
//!
//! Multimodal tasks show up as demonstrations that cannot be averaged: the
//! per-step mean of "go left around the obstacle" and "go right" passes
//! through the obstacle. Before fitting, demos are therefore partitioned by
//! whole-trajectory similarity: each demo is subsampled to `T'` steps and
//! treated as a single point on the product manifold `M^{T'}`, where
//! geodesic distance is a trajectory metric. Three clustering routes are
//! provided:
//!
//! * k-means with geodesic assignments and Fréchet centroids, model order
//!   chosen by BIC over an isotropic Gaussian surrogate likelihood;
//! * EM for a Gaussian mixture with diagonal tangent covariances, model
//!   order by BIC;
//! * DBSCAN over the (once-computed) geodesic distance matrix, which needs
//!   no k but is sensitive to its density threshold.
//!
//! All routes are deterministic given their seed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gp::{resample_to_length, sample_at, Trajectory};
use crate::manifold::{
    frechet_mean, frechet_mean_weighted, geodesic_distance, log_map, FrechetOptions, ManifoldPoint,
};
use crate::rng;

/// Default subsample length for vectorization.
pub const DEFAULT_SUBSAMPLE_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMethod {
    #[serde(rename = "kmeans_bic")]
    KMeansBic,
    GmmBic,
    Dbscan,
}

/// Result of modal partitioning: a label per demonstration.
#[derive(Clone, Debug)]
pub struct Partition {
    labels: Vec<usize>,
    n_parts: usize,
    pub method: PartitionMethod,
    pub subsample_len: usize,
    /// (k, BIC) per candidate model order; empty for DBSCAN.
    pub bic_table: Vec<(usize, f64)>,
}

impl Partition {
    pub fn new(
        labels: Vec<usize>,
        method: PartitionMethod,
        subsample_len: usize,
        bic_table: Vec<(usize, f64)>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty { what: "partition labels" });
        }
        let n_parts = labels.iter().copied().max().unwrap() + 1;
        for part in 0..n_parts {
            if !labels.contains(&part) {
                return Err(Error::InvalidValue {
                    what: "partition labels",
                    detail: format!("part {part} is empty"),
                });
            }
        }
        Ok(Self { labels, n_parts, method, subsample_len, bic_table })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_parts(&self) -> usize {
        self.n_parts
    }

    /// Demo indices belonging to each part.
    pub fn parts(&self) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); self.n_parts];
        for (i, l) in self.labels.iter().enumerate() {
            parts[*l].push(i);
        }
        parts
    }
}

/// Subsample each demo to `subsample_len` steps and stack the samples into
/// one point on `M^{subsample_len}`. `subsample_len = 1` reduces each demo
/// to its midpoint sample.
pub fn vectorize(demos: &[Trajectory], subsample_len: usize) -> Result<Vec<ManifoldPoint>> {
    if demos.is_empty() {
        return Err(Error::Empty { what: "demo list" });
    }
    if subsample_len == 0 {
        return Err(Error::InvalidValue {
            what: "subsample length",
            detail: "must be >= 1".into(),
        });
    }
    let mut out = Vec::with_capacity(demos.len());
    for d in demos {
        let points: Vec<ManifoldPoint> = if subsample_len == 1 {
            vec![sample_at(d, (d.len() - 1) as f64 / 2.0)?]
        } else {
            resample_to_length(d, subsample_len)?.points().to_vec()
        };
        out.push(ManifoldPoint::concat(&points)?);
    }
    Ok(out)
}

/// Geodesic distances between all vector pairs; symmetric with zero diagonal.
pub fn geodesic_distance_matrix(vectors: &[ManifoldPoint]) -> Result<DMatrix<f64>> {
    let n = vectors.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = geodesic_distance(&vectors[i], &vectors[j])?;
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug)]
pub struct KMeansOptions {
    /// Largest model order to consider; default `min(10, N-1)`.
    pub k_max: Option<usize>,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { k_max: None, restarts: 10, max_iter: 100, seed: 0 }
    }
}

fn effective_k_max(requested: Option<usize>, n: usize) -> usize {
    requested.unwrap_or_else(|| 10.min(n.saturating_sub(1))).clamp(1, n)
}

/// k-means++ style seeding with geodesic distances.
fn seed_centroids(
    vectors: &[ManifoldPoint],
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ManifoldPoint>> {
    let n = vectors.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(vectors[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = Vec::with_capacity(n);
    while centroids.len() < k {
        d2.clear();
        for v in vectors {
            let mut best = f64::INFINITY;
            for c in &centroids {
                best = best.min(geodesic_distance(v, c)?);
            }
            d2.push(best * best);
        }
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            // all remaining mass at existing centroids; pick uniformly
            rng.gen_range(0..n)
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        };
        centroids.push(vectors[idx].clone());
    }
    Ok(centroids)
}

struct KMeansRun {
    labels: Vec<usize>,
    centroids: Vec<ManifoldPoint>,
    wcss: f64,
}

fn kmeans_run(
    vectors: &[ManifoldPoint],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KMeansRun> {
    let n = vectors.len();
    let mut rng = rng::rng(seed);
    let mut centroids = seed_centroids(vectors, k, &mut rng)?;
    let mut labels = vec![usize::MAX; n];
    let frechet = FrechetOptions::default();
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, v) in vectors.iter().enumerate() {
            let mut best = (0usize, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = geodesic_distance(v, c)?;
                if d < best.1 {
                    best = (j, d);
                }
            }
            if labels[i] != best.0 {
                labels[i] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for j in 0..centroids.len() {
            let members: Vec<ManifoldPoint> = labels
                .iter()
                .zip(vectors)
                .filter(|(l, _)| **l == j)
                .map(|(_, v)| v.clone())
                .collect();
            if !members.is_empty() {
                centroids[j] = frechet_mean(&members, &frechet)?;
            }
        }
    }
    // compact away empty clusters
    let mut remap = vec![usize::MAX; centroids.len()];
    let mut kept = Vec::new();
    for (i, l) in labels.iter_mut().enumerate() {
        let _ = i;
        if remap[*l] == usize::MAX {
            remap[*l] = kept.len();
            kept.push(centroids[*l].clone());
        }
        *l = remap[*l];
    }
    let mut wcss = 0.0;
    for (l, v) in labels.iter().zip(vectors) {
        let d = geodesic_distance(v, &kept[*l])?;
        wcss += d * d;
    }
    Ok(KMeansRun { labels, centroids: kept, wcss })
}

/// BIC over the isotropic Gaussian surrogate: clusters share a pooled
/// spherical variance (mean squared geodesic residual with the k fitted
/// centroids deducted), hard assignments contribute their mixing
/// proportions. Parameter count is `k (D + 1) + (k - 1)` for D tangent
/// dimensions.
fn kmeans_bic(run: &KMeansRun, vectors: &[ManifoldPoint]) -> f64 {
    let n = vectors.len() as f64;
    let d = vectors[0].spec().tangent_dim() as f64;
    let k = run.centroids.len();
    let dof = (n - k as f64).max(1.0);
    let sigma2 = (run.wcss / (d * dof)).max(1e-12);
    let mut ll =
        -0.5 * n * d * (2.0 * std::f64::consts::PI * sigma2).ln() - run.wcss / (2.0 * sigma2);
    for j in 0..k {
        let nj = run.labels.iter().filter(|&&l| l == j).count() as f64;
        ll += nj * (nj / n).ln();
    }
    let params = (k as f64) * (d + 1.0) + (k as f64 - 1.0);
    -2.0 * ll + params * n.ln()
}

/// Riemannian k-means over vectorized demos with BIC model selection.
///
/// For each k in `1..=k_max`, the best of `restarts` seeded runs (lowest
/// within-cluster scatter) is scored by BIC; the k with the lowest BIC wins,
/// ties going to the smaller k.
pub fn cluster_kmeans_bic(
    vectors: &[ManifoldPoint],
    subsample_len: usize,
    opts: &KMeansOptions,
) -> Result<Partition> {
    if vectors.is_empty() {
        return Err(Error::Empty { what: "vectorized demos" });
    }
    let k_max = effective_k_max(opts.k_max, vectors.len());
    let mut best: Option<(f64, KMeansRun)> = None;
    let mut bic_table = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let mut best_run: Option<KMeansRun> = None;
        for r in 0..opts.restarts {
            let seed = rng::derive(rng::derive(opts.seed, k as u64), r as u64);
            let run = kmeans_run(vectors, k, seed, opts.max_iter)?;
            if best_run.as_ref().map_or(true, |b| run.wcss < b.wcss) {
                best_run = Some(run);
            }
        }
        let run = best_run.expect("restarts >= 1");
        let bic = kmeans_bic(&run, vectors);
        bic_table.push((k, bic));
        if best.as_ref().map_or(true, |(b, _)| bic < *b) {
            best = Some((bic, run));
        }
    }
    let (_, run) = best.expect("k_max >= 1");
    Partition::new(run.labels, PartitionMethod::KMeansBic, subsample_len, bic_table)
}

#[derive(Clone, Copy, Debug)]
pub struct GmmOptions {
    pub k_max: Option<usize>,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self { k_max: None, restarts: 10, max_iter: 200, seed: 0 }
    }
}

struct GmmRun {
    labels: Vec<usize>,
    log_likelihood: f64,
    n_components: usize,
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn gmm_run(
    vectors: &[ManifoldPoint],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<GmmRun> {
    let n = vectors.len();
    let d = vectors[0].spec().tangent_dim();
    let frechet = FrechetOptions::default();

    // Hard k-means initialization, then soft EM with diagonal tangent
    // covariances charted at each component's Fréchet mean.
    let init = kmeans_run(vectors, k, rng::derive(seed, 0x6d6d), 100)?;
    let k_eff = init.centroids.len();
    let mut weights = vec![0.0f64; k_eff];
    for l in &init.labels {
        weights[*l] += 1.0 / n as f64;
    }
    let mut means = init.centroids;
    let mut vars: Vec<DVector<f64>> = Vec::with_capacity(k_eff);
    for j in 0..k_eff {
        let mut var = DVector::zeros(d);
        let mut nj = 0.0f64;
        for (l, v) in init.labels.iter().zip(vectors) {
            if *l == j {
                let t = log_map(&means[j], v)?;
                for i in 0..d {
                    var[i] += t.coords[i] * t.coords[i];
                }
                nj += 1.0;
            }
        }
        var /= nj.max(1.0);
        for x in var.iter_mut() {
            *x = x.max(1e-8);
        }
        vars.push(var);
    }

    let mut resp = DMatrix::zeros(n, k_eff);
    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll;
    for _ in 0..max_iter {
        // E step
        ll = 0.0;
        let mut row = vec![0.0f64; k_eff];
        for (i, v) in vectors.iter().enumerate() {
            for j in 0..k_eff {
                let t = log_map(&means[j], v)?;
                let mut lp = weights[j].max(1e-300).ln();
                for idx in 0..d {
                    let s2 = vars[j][idx];
                    lp += -0.5 * (t.coords[idx] * t.coords[idx] / s2 + s2.ln() + (2.0 * std::f64::consts::PI).ln());
                }
                row[j] = lp;
            }
            let norm = logsumexp(&row);
            ll += norm;
            for j in 0..k_eff {
                resp[(i, j)] = (row[j] - norm).exp();
            }
        }
        // M step
        for j in 0..k_eff {
            let mass: f64 = (0..n).map(|i| resp[(i, j)]).sum();
            // a diagonal variance estimated from fewer than three effective
            // members is dominated by selection bias during model search:
            // the init picks the closest pairs, their variances come out
            // crushed, and BIC rewards the collapse
            if mass < 3.0 {
                return Err(Error::EmDegenerate {
                    detail: format!("component {j} responsibility mass {mass:.3} too small"),
                });
            }
            weights[j] = mass / n as f64;
            let w: Vec<f64> = (0..n).map(|i| resp[(i, j)]).collect();
            means[j] = frechet_mean_weighted(vectors, Some(&w), &frechet)?;
            let mut var = DVector::zeros(d);
            for (i, v) in vectors.iter().enumerate() {
                let t = log_map(&means[j], v)?;
                for idx in 0..d {
                    var[idx] += resp[(i, j)] * t.coords[idx] * t.coords[idx];
                }
            }
            var /= mass;
            for x in var.iter_mut() {
                *x = x.max(1e-8);
            }
            vars[j] = var;
        }
        if (ll - prev_ll).abs() < 1e-8 * (1.0 + ll.abs()) {
            prev_ll = ll;
            break;
        }
        prev_ll = ll;
    }

    // hard labels, compacting components that won no point
    let mut labels = vec![0usize; n];
    for i in 0..n {
        let mut best = (0usize, f64::NEG_INFINITY);
        for j in 0..k_eff {
            if resp[(i, j)] > best.1 {
                best = (j, resp[(i, j)]);
            }
        }
        labels[i] = best.0;
    }
    let mut remap = vec![usize::MAX; k_eff];
    let mut next = 0usize;
    for l in labels.iter_mut() {
        if remap[*l] == usize::MAX {
            remap[*l] = next;
            next += 1;
        }
        *l = remap[*l];
    }
    Ok(GmmRun { labels, log_likelihood: prev_ll, n_components: k_eff })
}

/// Gaussian-mixture EM over vectorized demos with BIC model selection.
/// Covariances are diagonal in the tangent space at each component mean.
pub fn cluster_gmm_bic(
    vectors: &[ManifoldPoint],
    subsample_len: usize,
    opts: &GmmOptions,
) -> Result<Partition> {
    if vectors.is_empty() {
        return Err(Error::Empty { what: "vectorized demos" });
    }
    let n = vectors.len() as f64;
    let d = vectors[0].spec().tangent_dim() as f64;
    let k_max = effective_k_max(opts.k_max, vectors.len());
    let mut best: Option<(f64, GmmRun)> = None;
    let mut bic_table = Vec::with_capacity(k_max);
    let mut last_err = None;
    for k in 1..=k_max {
        let mut best_run: Option<GmmRun> = None;
        for r in 0..opts.restarts {
            let seed = rng::derive(rng::derive(opts.seed, 0x47 + k as u64), r as u64);
            match gmm_run(vectors, k, seed, opts.max_iter) {
                Ok(run) => {
                    if best_run
                        .as_ref()
                        .map_or(true, |b| run.log_likelihood > b.log_likelihood)
                    {
                        best_run = Some(run);
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        let Some(run) = best_run else { continue };
        let params = run.n_components as f64 * 2.0 * d + (run.n_components as f64 - 1.0);
        let bic = -2.0 * run.log_likelihood + params * n.ln();
        bic_table.push((k, bic));
        if best.as_ref().map_or(true, |(b, _)| bic < *b) {
            best = Some((bic, run));
        }
    }
    match best {
        Some((_, run)) => {
            Partition::new(run.labels, PartitionMethod::GmmBic, subsample_len, bic_table)
        }
        None => Err(last_err.unwrap_or(Error::EmDegenerate {
            detail: "every model order degenerated".into(),
        })),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DbscanOptions {
    /// Neighborhood radius; `None` selects a data-driven default
    /// (1.5 x median distance to the min_pts-th nearest neighbor).
    pub eps: Option<f64>,
    pub min_pts: usize,
}

impl Default for DbscanOptions {
    fn default() -> Self {
        Self { eps: None, min_pts: 4 }
    }
}

/// Data-driven DBSCAN radius: 1.5 x the median over points of the distance
/// to their `min_pts`-th nearest neighbor.
pub fn default_dbscan_eps(distances: &DMatrix<f64>, min_pts: usize) -> f64 {
    let n = distances.nrows();
    let mut kth = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<f64> = (0..n).filter(|j| *j != i).map(|j| distances[(i, j)]).collect();
        row.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        let idx = min_pts.saturating_sub(1).min(row.len().saturating_sub(1));
        kth.push(row.get(idx).copied().unwrap_or(0.0));
    }
    kth.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    1.5 * kth[kth.len() / 2]
}

/// DBSCAN over the geodesic distance matrix. The matrix is computed exactly
/// once; expansion and noise attachment reuse it. Noise points are attached
/// to the cluster with the nearest Fréchet centroid so every demo gets a
/// label. Errors if no core point exists at the chosen radius.
pub fn cluster_dbscan(
    vectors: &[ManifoldPoint],
    subsample_len: usize,
    opts: &DbscanOptions,
) -> Result<Partition> {
    if vectors.is_empty() {
        return Err(Error::Empty { what: "vectorized demos" });
    }
    let distances = geodesic_distance_matrix(vectors)?;
    cluster_dbscan_with_matrix(vectors, &distances, subsample_len, opts)
}

/// DBSCAN over a precomputed distance matrix (see [`cluster_dbscan`]).
pub fn cluster_dbscan_with_matrix(
    vectors: &[ManifoldPoint],
    distances: &DMatrix<f64>,
    subsample_len: usize,
    opts: &DbscanOptions,
) -> Result<Partition> {
    let n = vectors.len();
    let eps = opts.eps.unwrap_or_else(|| default_dbscan_eps(distances, opts.min_pts));
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidValue { what: "eps", detail: format!("{eps}") });
    }
    let neighbor_count = |i: usize| (0..n).filter(|j| distances[(i, *j)] <= eps).count();
    let is_core: Vec<bool> = (0..n).map(|i| neighbor_count(i) >= opts.min_pts).collect();
    if !is_core.iter().any(|c| *c) {
        return Err(Error::AllNoise { eps });
    }

    const UNLABELED: usize = usize::MAX;
    let mut labels = vec![UNLABELED; n];
    let mut next_cluster = 0usize;
    for start in 0..n {
        if labels[start] != UNLABELED || !is_core[start] {
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        let mut queue = vec![start];
        labels[start] = cluster;
        while let Some(i) = queue.pop() {
            if !is_core[i] {
                continue;
            }
            for j in 0..n {
                if distances[(i, j)] <= eps && labels[j] == UNLABELED {
                    labels[j] = cluster;
                    queue.push(j);
                }
            }
        }
    }

    // attach noise to the cluster with the nearest centroid
    let frechet = FrechetOptions::default();
    let mut centroids = Vec::with_capacity(next_cluster);
    for c in 0..next_cluster {
        let members: Vec<ManifoldPoint> = labels
            .iter()
            .zip(vectors)
            .filter(|(l, _)| **l == c)
            .map(|(_, v)| v.clone())
            .collect();
        centroids.push(frechet_mean(&members, &frechet)?);
    }
    for i in 0..n {
        if labels[i] == UNLABELED {
            let mut best = (0usize, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = geodesic_distance(&vectors[i], centroid)?;
                if d < best.1 {
                    best = (c, d);
                }
            }
            labels[i] = best.0;
        }
    }
    Partition::new(labels, PartitionMethod::Dbscan, subsample_len, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::ManifoldSpec;

    fn traj_1d(id: &str, values: &[f64]) -> Trajectory {
        let spec = ManifoldSpec::euclidean(1);
        let points = values
            .iter()
            .map(|v| ManifoldPoint::new(spec.clone(), DVector::from_vec(vec![*v])).unwrap())
            .collect();
        Trajectory::new(id, points).unwrap()
    }

    fn blob_demos() -> Vec<Trajectory> {
        // three constant levels, Gaussian within-level scatter
        use rand::Rng;
        let mut rng = crate::rng::rng(41);
        let mut demos = Vec::new();
        for (m, level) in [0.0f64, 10.0, 20.0].iter().enumerate() {
            for i in 0..5 {
                let vals: Vec<f64> = (0..30)
                    .map(|t| {
                        level + 0.001 * t as f64 + 0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal)
                    })
                    .collect();
                demos.push(traj_1d(&format!("m{m}i{i}"), &vals));
            }
        }
        demos
    }

    #[test]
    fn vectorize_midpoint_when_len_one() {
        let d = traj_1d("a", &[0.0, 2.0, 4.0]);
        let v = vectorize(&[d], 1).unwrap();
        assert_eq!(v[0].coords().len(), 1);
        assert!((v[0].coords()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn vectorize_concatenates_subsamples() {
        let d = traj_1d("a", &[0.0, 1.0, 2.0, 3.0]);
        let v = vectorize(&[d], 4).unwrap();
        assert_eq!(v[0].coords().len(), 4);
        for t in 0..4 {
            assert!((v[0].coords()[t] - t as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn tight_blob_selects_one_mode() {
        use rand::Rng;
        let mut rng = crate::rng::rng(17);
        let demos: Vec<Trajectory> = (0..8)
            .map(|i| {
                let vals: Vec<f64> = (0..20)
                    .map(|t| 0.01 * t as f64 + 0.003 * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                traj_1d(&format!("d{i}"), &vals)
            })
            .collect();
        let v = vectorize(&demos, DEFAULT_SUBSAMPLE_LEN).unwrap();
        let p = cluster_kmeans_bic(&v, DEFAULT_SUBSAMPLE_LEN, &KMeansOptions::default()).unwrap();
        assert_eq!(p.n_parts(), 1);
        let g = cluster_gmm_bic(&v, DEFAULT_SUBSAMPLE_LEN, &GmmOptions::default()).unwrap();
        assert_eq!(g.n_parts(), 1);
    }

    #[test]
    fn three_blobs_recovered_by_all_methods() {
        let demos = blob_demos();
        let v = vectorize(&demos, DEFAULT_SUBSAMPLE_LEN).unwrap();
        let truth: Vec<usize> = (0..15).map(|i| i / 5).collect();

        let km = cluster_kmeans_bic(&v, DEFAULT_SUBSAMPLE_LEN, &KMeansOptions::default()).unwrap();
        assert_eq!(km.n_parts(), 3);
        assert!((crate::metrics::adjusted_rand_index(km.labels(), &truth).unwrap() - 1.0).abs() < 1e-12);

        let gm = cluster_gmm_bic(&v, DEFAULT_SUBSAMPLE_LEN, &GmmOptions::default()).unwrap();
        assert_eq!(gm.n_parts(), 3);
        assert!((crate::metrics::adjusted_rand_index(gm.labels(), &truth).unwrap() - 1.0).abs() < 1e-12);

        let db = cluster_dbscan(
            &v,
            DEFAULT_SUBSAMPLE_LEN,
            &DbscanOptions { eps: Some(1.0), min_pts: 4 },
        )
        .unwrap();
        assert_eq!(db.n_parts(), 3);
        assert!((crate::metrics::adjusted_rand_index(db.labels(), &truth).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dbscan_all_noise_errors() {
        let demos = blob_demos();
        let v = vectorize(&demos, DEFAULT_SUBSAMPLE_LEN).unwrap();
        let r = cluster_dbscan(
            &v,
            DEFAULT_SUBSAMPLE_LEN,
            &DbscanOptions { eps: Some(1e-9), min_pts: 4 },
        );
        assert!(matches!(r, Err(Error::AllNoise { .. })));
    }

    #[test]
    fn kmeans_is_deterministic_per_seed() {
        let demos = blob_demos();
        let v = vectorize(&demos, DEFAULT_SUBSAMPLE_LEN).unwrap();
        let a = cluster_kmeans_bic(&v, DEFAULT_SUBSAMPLE_LEN, &KMeansOptions::default()).unwrap();
        let b = cluster_kmeans_bic(&v, DEFAULT_SUBSAMPLE_LEN, &KMeansOptions::default()).unwrap();
        assert_eq!(a.labels(), b.labels());
    }
}
