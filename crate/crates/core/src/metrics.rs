//! Evaluation metrics: geodesic RMSE, path smoothness, clustering agreement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{resample_to_length, rmse_to, Trajectory};

/// Root-mean-square geodesic distance between a predicted and a reference
/// trajectory. Lengths may differ; the prediction is then resampled onto
/// the reference length and the returned flag records that.
pub fn rmse(predicted: &Trajectory, reference: &Trajectory) -> Result<(f64, bool)> {
    if predicted.len() == reference.len() {
        Ok((rmse_to(predicted, reference)?, false))
    } else {
        let resampled = resample_to_length(predicted, reference.len())?;
        Ok((rmse_to(&resampled, reference)?, true))
    }
}

/// Norms of the position-block second differences scaled to acceleration
/// units: `||(x_{t+1} - 2 x_t + x_{t-1})|| * rate^2` for interior steps.
pub fn second_difference_accelerations(traj: &Trajectory, sample_rate_hz: f64) -> Vec<f64> {
    let n = traj.len();
    if n < 3 {
        return Vec::new();
    }
    let r2 = sample_rate_hz * sample_rate_hz;
    let pos = |t: usize| traj.point(t).position().to_vec();
    (1..n - 1)
        .map(|t| {
            let (a, b, c) = (pos(t - 1), pos(t), pos(t + 1));
            let sq: f64 = (0..a.len())
                .map(|i| {
                    let d = c[i] - 2.0 * b[i] + a[i];
                    d * d
                })
                .sum();
            sq.sqrt() * r2
        })
        .collect()
}

/// Sum of per-step positional acceleration magnitudes over one trajectory.
pub fn total_acceleration(traj: &Trajectory, sample_rate_hz: f64) -> f64 {
    second_difference_accelerations(traj, sample_rate_hz).iter().sum()
}

/// Largest per-step positional acceleration magnitude.
pub fn max_acceleration(traj: &Trajectory, sample_rate_hz: f64) -> f64 {
    second_difference_accelerations(traj, sample_rate_hz)
        .into_iter()
        .fold(0.0, f64::max)
}

fn pairs(n: f64) -> f64 {
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items: 1 for
/// identical partitions (up to relabeling), ~0 for independent ones.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "label vectors",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Empty { what: "label vectors" });
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0.0f64; kb]; ka];
    for (x, y) in a.iter().zip(b) {
        table[*x][*y] += 1.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let index: f64 = table.iter().flatten().map(|n| pairs(*n)).sum();
    let sum_rows: f64 = rows.iter().map(|n| pairs(*n)).sum();
    let sum_cols: f64 = cols.iter().map(|n| pairs(*n)).sum();
    let total = pairs(a.len() as f64);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// Flat report emitted by the evaluation stage. Wall-clock timings live in
/// the run manifest, not here, so reports stay byte-identical across runs.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse_resampled: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_acceleration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth_total_acceleration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ari: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_modes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraints_satisfied: Option<bool>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_identical_is_one() {
        let a = vec![0, 0, 1, 1, 2, 2];
        assert!((adjusted_rand_index(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        // invariant to relabeling
        let b = vec![2, 2, 0, 0, 1, 1];
        assert!((adjusted_rand_index(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_disagreement_below_one() {
        let a = vec![0, 0, 0, 1, 1, 1];
        let b = vec![0, 0, 1, 1, 0, 1];
        let ari = adjusted_rand_index(&a, &b).unwrap();
        assert!(ari < 0.5, "got {ari}");
    }

    #[test]
    fn quadratic_path_has_constant_acceleration() {
        use crate::manifold::{ManifoldPoint, ManifoldSpec};
        use nalgebra::DVector;
        let spec = ManifoldSpec::euclidean(1);
        let rate = 10.0;
        // x(t) = 0.5 * a * (t/rate)^2 with a = 2.0
        let points: Vec<ManifoldPoint> = (0..20)
            .map(|t| {
                let time = t as f64 / rate;
                ManifoldPoint::new(spec.clone(), DVector::from_vec(vec![time * time])).unwrap()
            })
            .collect();
        let traj = Trajectory::new("q", points).unwrap();
        let acc = second_difference_accelerations(&traj, rate);
        assert_eq!(acc.len(), 18);
        for a in acc {
            assert!((a - 2.0).abs() < 1e-9);
        }
    }
}
