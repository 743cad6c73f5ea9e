//! End-to-end runs driven by one JSON config: generate data, discover modes,
//! fit the mixture, optionally condition on constraints and optimize a joint
//! path, then score the result. The CLI `pipeline` subcommand is a thin
//! wrapper around [`run`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::FitOptions;
use crate::io::{self, Manifest};
use crate::metrics::{adjusted_rand_index, rmse, total_acceleration, MetricsReport};
use crate::mixture::{fit_mixture, GpMixture};
use crate::partition::{
    cluster_dbscan, cluster_gmm_bic, cluster_kmeans_bic, vectorize, DbscanOptions, GmmOptions,
    KMeansOptions, Partition, PartitionMethod, DEFAULT_SUBSAMPLE_LEN,
};
use crate::rigid::RigidTransform;
use crate::rng;
use crate::synth::{chain_by_name, generate, SynthSpec};
use crate::trajopt::{optimize_path, trajectory_nll, OptimizeOptions, OptimizedPath};
use crate::updating::{apply_convex, apply_modal, LqNorm, UpdateOptions, UpdateReport};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionConfig {
    #[serde(default = "default_method")]
    pub method: PartitionMethod,
    #[serde(default = "default_subsample_len")]
    pub subsample_len: usize,
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_min_pts")]
    pub min_pts: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_method() -> PartitionMethod {
    PartitionMethod::KMeansBic
}

fn default_subsample_len() -> usize {
    DEFAULT_SUBSAMPLE_LEN
}

fn default_min_pts() -> usize {
    4
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            method: default_method(),
            subsample_len: default_subsample_len(),
            k_max: None,
            eps: None,
            min_pts: default_min_pts(),
            seed: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FitConfig {
    #[serde(default)]
    pub variance_floor: Option<f64>,
    #[serde(default)]
    pub target_len: Option<usize>,
}

impl FitConfig {
    pub fn to_options(&self, sample_rate_hz: f64) -> FitOptions {
        let mut opts = FitOptions { sample_rate_hz, ..FitOptions::default() };
        if let Some(floor) = self.variance_floor {
            opts.variance_floor = floor;
        }
        opts.target_len = self.target_len;
        opts
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UpdateConfig {
    /// Path to a constraints file; relative paths resolve against the config
    /// file's directory.
    pub constraints: PathBuf,
    #[serde(default = "default_z")]
    pub z: f64,
    #[serde(default = "default_q")]
    pub q: LqNorm,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Reweight modes only, leaving each Gaussian untouched.
    #[serde(default)]
    pub modal: bool,
}

fn default_z() -> f64 {
    1.96
}

fn default_q() -> LqNorm {
    LqNorm::Power(1.0)
}

fn default_n_samples() -> usize {
    1000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizeConfig {
    /// Built-in chain name (planar3 | arm6 | arm7) or a path to a chain file.
    pub chain: String,
    #[serde(default)]
    pub lambda_tracking: Option<f64>,
    #[serde(default)]
    pub lambda_smooth: Option<f64>,
    #[serde(default)]
    pub z: Option<f64>,
    #[serde(default)]
    pub outer_iters: Option<usize>,
    #[serde(default)]
    pub inner_iters: Option<usize>,
    #[serde(default)]
    pub tol_violation: Option<f64>,
    #[serde(default)]
    pub q0: Option<Vec<f64>>,
}

impl OptimizeConfig {
    pub fn to_options(&self) -> OptimizeOptions {
        let mut opts = OptimizeOptions::default();
        if let Some(v) = self.lambda_tracking {
            opts.lambda_tracking = v;
        }
        if let Some(v) = self.lambda_smooth {
            opts.lambda_smooth = v;
        }
        if let Some(v) = self.z {
            opts.z = v;
        }
        if let Some(v) = self.outer_iters {
            opts.outer_iters = v;
        }
        if let Some(v) = self.inner_iters {
            opts.inner_iters = v;
        }
        if let Some(v) = self.tol_violation {
            opts.tol_violation = v;
        }
        opts.q0 = self.q0.clone().map(DVector::from_vec);
        opts
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub synth: SynthSpec,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub update: Option<UpdateConfig>,
    #[serde(default)]
    pub optimize: Option<OptimizeConfig>,
    /// Default output directory; the CLI flag overrides it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let config: Self = serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Ok(config)
    }
}

pub fn run_partition(
    vectors: &[crate::manifold::ManifoldPoint],
    subsample_len: usize,
    config: &PartitionConfig,
    seed: u64,
) -> Result<Partition> {
    match config.method {
        PartitionMethod::KMeansBic => cluster_kmeans_bic(
            vectors,
            subsample_len,
            &KMeansOptions { k_max: config.k_max, seed, ..KMeansOptions::default() },
        ),
        PartitionMethod::GmmBic => cluster_gmm_bic(
            vectors,
            subsample_len,
            &GmmOptions { k_max: config.k_max, seed, ..GmmOptions::default() },
        ),
        PartitionMethod::Dbscan => cluster_dbscan(
            vectors,
            subsample_len,
            &DbscanOptions { eps: config.eps, min_pts: config.min_pts },
        ),
    }
}

pub fn load_chain_arg(arg: &str) -> Result<crate::kinematics::KinematicChain> {
    if arg.contains('.') || arg.contains('/') || arg.contains('\\') {
        io::load_kinematic_chain(Path::new(arg))
    } else {
        chain_by_name(arg)
    }
}

/// Summary of one `optimize` run, written as plain JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathReportFile {
    pub schema: String,
    pub version: u32,
    pub chain: String,
    pub n_steps: usize,
    pub objective: f64,
    pub tracking_nll: f64,
    pub max_violation: f64,
    pub outer_iterations: usize,
    pub wall_ms: f64,
    pub joint_path: Vec<Vec<f64>>,
    pub poses: Vec<RigidTransform>,
}

pub const PATH_SCHEMA: &str = "gausstube.path";

pub fn path_report(chain_name: &str, path: &OptimizedPath, wall_ms: f64) -> PathReportFile {
    PathReportFile {
        schema: PATH_SCHEMA.into(),
        version: 1,
        chain: chain_name.into(),
        n_steps: path.joint_path.len(),
        objective: path.report.objective,
        tracking_nll: path.report.tracking_nll,
        max_violation: path.report.max_violation,
        outer_iterations: path.report.outer_iterations,
        wall_ms,
        joint_path: path.joint_path.iter().map(|q| q.as_slice().to_vec()).collect(),
        poses: path.poses.clone(),
    }
}

pub fn save_path_report(path: &Path, report: &PathReportFile) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("serializable");
    io::write_atomic(path, &format!("{text}\n"))
}

pub struct PipelineOutcome {
    pub out_dir: PathBuf,
    pub mixture: GpMixture,
    pub partition: Partition,
    pub metrics: MetricsReport,
    pub update_report: Option<UpdateReport>,
    pub manifest: Manifest,
}

/// Run every configured stage, writing artifacts and a manifest under
/// `out_dir`. Relative constraint paths resolve against `config_dir` when
/// given.
pub fn run(
    config: &PipelineConfig,
    out_dir: &Path,
    config_dir: Option<&Path>,
) -> Result<PipelineOutcome> {
    let mut manifest = Manifest::new(Some(config.synth.seed));
    let mut outputs: Vec<PathBuf> = Vec::new();
    let record = |manifest: &mut Manifest, name: &str, start: Instant| {
        manifest
            .timings_ms
            .insert(name.to_string(), start.elapsed().as_secs_f64() * 1e3);
    };

    let start = Instant::now();
    let data = generate(&config.synth)?;
    record(&mut manifest, "synth", start);
    let dataset_path = out_dir.join("dataset.jsonl");
    io::save_dataset(
        &dataset_path,
        &data.demos,
        &data.frame_poses,
        &data.mode_labels,
        data.sample_rate_hz,
    )?;
    outputs.push(dataset_path);

    let start = Instant::now();
    let vectors = vectorize(&data.demos, config.partition.subsample_len)?;
    let partition_seed = config
        .partition
        .seed
        .unwrap_or_else(|| rng::derive_named(config.synth.seed, "partition"));
    let partition = run_partition(&vectors, config.partition.subsample_len, &config.partition, partition_seed)?;
    record(&mut manifest, "partition", start);
    let partition_path = out_dir.join("partition.jsonl");
    let demo_ids: Vec<String> = data.demos.iter().map(|d| d.demo_id().to_string()).collect();
    io::save_partition(&partition_path, &partition, &demo_ids)?;
    outputs.push(partition_path);

    let start = Instant::now();
    let fit_opts = config.fit.to_options(data.sample_rate_hz);
    let mut mixture = fit_mixture(&data.demos, &partition, &fit_opts)?;
    record(&mut manifest, "fit", start);
    let mixture_path = out_dir.join("mixture.jsonl");
    io::save_mixture(&mixture_path, &mixture)?;
    outputs.push(mixture_path);

    let mut update_report = None;
    if let Some(update) = &config.update {
        let constraints_path = match config_dir {
            Some(dir) if update.constraints.is_relative() => dir.join(&update.constraints),
            _ => update.constraints.clone(),
        };
        manifest.inputs.push(constraints_path.display().to_string());
        let constraints = io::load_constraints(&constraints_path)?;
        let opts = UpdateOptions {
            z: update.z,
            q: update.q,
            n_samples: update.n_samples,
            seed: update
                .seed
                .unwrap_or_else(|| rng::derive_named(config.synth.seed, "update")),
        };
        let start = Instant::now();
        let mut posterior_report = None;
        for constraint in &constraints {
            let (next, report) = if update.modal {
                apply_modal(&mixture, constraint, &opts)?
            } else {
                apply_convex(&mixture, constraint, &opts)?
            };
            mixture = next;
            posterior_report = Some(report);
        }
        record(&mut manifest, "update", start);
        let posterior_path = out_dir.join("posterior.jsonl");
        io::save_mixture(&posterior_path, &mixture)?;
        outputs.push(posterior_path);
        update_report = posterior_report;
        if let Some(report) = &update_report {
            let report_path = out_dir.join("update_report.json");
            let text = serde_json::to_string_pretty(report).expect("serializable");
            io::write_atomic(&report_path, &format!("{text}\n"))?;
            outputs.push(report_path);
        }
    }

    let mut nll = None;
    let mut constraints_satisfied = None;
    if let Some(optimize) = &config.optimize {
        let chain = load_chain_arg(&optimize.chain)?;
        let opts = optimize.to_options();
        let best = (0..mixture.n_modes())
            .max_by(|&a, &b| {
                mixture
                    .mode(a)
                    .prior
                    .partial_cmp(&mixture.mode(b).prior)
                    .expect("finite priors")
            })
            .expect("nonempty mixture");
        let start = Instant::now();
        let path = optimize_path(&chain, &mixture.mode(best).model, &opts)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        manifest.timings_ms.insert("optimize".into(), wall_ms);
        nll = Some(trajectory_nll(&mixture.mode(best).model, &path.poses)?);
        constraints_satisfied = Some(path.report.max_violation <= opts.tol_violation);
        let path_path = out_dir.join("path.json");
        save_path_report(&path_path, &path_report(&optimize.chain, &path, wall_ms))?;
        outputs.push(path_path);
    }

    let start = Instant::now();
    let metrics = evaluate(&data, &partition, &mixture, nll, constraints_satisfied)?;
    record(&mut manifest, "eval", start);
    let metrics_path = out_dir.join("metrics.json");
    let text = serde_json::to_string_pretty(&metrics).expect("serializable");
    io::write_atomic(&metrics_path, &format!("{text}\n"))?;
    outputs.push(metrics_path);

    manifest.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
    let manifest_path = out_dir.join("manifest.json");
    io::save_manifest(&manifest_path, &manifest)?;

    Ok(PipelineOutcome {
        out_dir: out_dir.to_path_buf(),
        mixture,
        partition,
        metrics,
        update_report,
        manifest,
    })
}

fn evaluate(
    data: &crate::synth::SynthDataset,
    partition: &Partition,
    mixture: &GpMixture,
    nll: Option<f64>,
    constraints_satisfied: Option<bool>,
) -> Result<MetricsReport> {
    let predictions: Vec<_> = mixture.predict_all();

    // each demo scores its assigned mode's mean against the clean curve of
    // the demo's true mode (clean holds one curve per true mode)
    let mut rmse_sum = 0.0;
    let mut resampled_any = false;
    for (d, label) in partition.labels().iter().enumerate() {
        let truth = &data.clean[data.mode_labels[d]];
        let (value, resampled) = rmse(&predictions[*label].1, truth)?;
        rmse_sum += value;
        resampled_any |= resampled;
    }
    let mean_rmse = rmse_sum / partition.labels().len() as f64;

    let ari = if data.mode_labels.iter().any(|&l| l != 0) || partition.n_parts() > 1 {
        Some(adjusted_rand_index(partition.labels(), &data.mode_labels)?)
    } else {
        None
    };

    let best = mixture.predict_best();
    let accel = total_acceleration(&best, data.sample_rate_hz);
    let best_mode = (0..mixture.n_modes())
        .max_by(|&a, &b| {
            mixture
                .mode(a)
                .prior
                .partial_cmp(&mixture.mode(b).prior)
                .expect("finite priors")
        })
        .expect("nonempty mixture");
    let truth_accel = partition
        .labels()
        .iter()
        .position(|&l| l == best_mode)
        .map(|d| total_acceleration(&data.clean[data.mode_labels[d]], data.sample_rate_hz));

    Ok(MetricsReport {
        rmse: Some(mean_rmse),
        rmse_resampled: Some(resampled_any),
        total_acceleration: Some(accel),
        ground_truth_total_acceleration: truth_accel,
        ari,
        n_modes: Some(partition.n_parts()),
        nll,
        constraints_satisfied,
    })
}

/// Windows covering the whole trajectory for every frame present in the data,
/// for fitting task-parameterized models when no schedule is given.
pub fn full_windows(
    frames: &[String],
    len: usize,
) -> BTreeMap<String, (usize, usize)> {
    frames.iter().map(|f| (f.clone(), (0, len))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Family;

    fn three_mode_config(seed: u64) -> PipelineConfig {
        PipelineConfig {
            synth: SynthSpec {
                family: Family::MultiModePose { modes: 3, separation: 10.0, gripper: false },
                n_demos: 15,
                len: 40,
                noise_sigma: 0.01,
                smooth_jitter: 0.0,
                seed,
                sample_rate_hz: 20.0,
            },
            partition: PartitionConfig::default(),
            fit: FitConfig::default(),
            update: None,
            optimize: None,
            out_dir: None,
        }
    }

    #[test]
    fn three_mode_run_recovers_modes_and_writes_artifacts() {
        let out = std::env::temp_dir().join(format!("gausstube-pipe-{}", std::process::id()));
        let outcome = run(&three_mode_config(5), &out, None).unwrap();
        assert_eq!(outcome.metrics.ari, Some(1.0));
        assert_eq!(outcome.metrics.n_modes, Some(3));
        assert!(outcome.metrics.rmse.unwrap() < 0.05);
        for file in ["dataset.jsonl", "partition.jsonl", "mixture.jsonl", "metrics.json", "manifest.json"] {
            assert!(out.join(file).exists(), "{file} missing");
        }
        let manifest = outcome.manifest;
        assert!(manifest.timings_ms.contains_key("fit"));
        assert_eq!(manifest.seed, Some(5));
        std::fs::remove_dir_all(&out).ok();
    }

    #[test]
    fn config_json_round_trip_applies_defaults() {
        let text = r#"{
            "synth": {
                "family": {"kind": "sine"},
                "n_demos": 5,
                "len": 30,
                "noise_sigma": 0.05,
                "seed": 3
            },
            "partition": {"method": "gmm_bic"}
        }"#;
        let config: PipelineConfig = serde_json::from_str(text).unwrap();
        assert_eq!(config.partition.method, PartitionMethod::GmmBic);
        assert_eq!(config.partition.subsample_len, DEFAULT_SUBSAMPLE_LEN);
        assert!(config.update.is_none());
        assert_eq!(config.synth.sample_rate_hz, 20.0);
    }
}
