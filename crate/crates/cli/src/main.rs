use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use gausstube::error::{Error, Result};
use gausstube::gp::{fit, fit_framed, mean_length, FitOptions, Trajectory};
use gausstube::io::{self, Manifest};
use gausstube::metrics::{adjusted_rand_index, rmse, total_acceleration, MetricsReport};
use gausstube::mixture::GpMixture;
use gausstube::partition::PartitionMethod;
use gausstube::pipeline::{self, PipelineConfig, PartitionConfig};
use gausstube::synth::{generate, SynthSpec};
use gausstube::trajopt::optimize_path;
use gausstube::updating::{apply_convex, apply_modal, LqNorm, UpdateOptions, UpdateReport};

#[derive(Parser)]
#[command(
    name = "gausstube",
    version,
    about = "Few-shot trajectory imitation: synthetic data, mode discovery, per-step Gaussian models, constraint conditioning, and joint-path optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ManifestArg {
    /// Manifest output path (default: next to the primary output).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic demonstration dataset from a generator spec.
    Synth {
        /// JSON file holding the generator spec.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the seed in the generator config.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Fit a per-step Gaussian model (single, partitioned mixture, or framed).
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Partition file; fits one mode per part into a mixture.
        #[arg(long)]
        partition: Option<PathBuf>,
        /// Fit one model per task frame (dataset must carry frame poses).
        #[arg(long)]
        framed: bool,
        /// Resample every demo to this length before fitting.
        #[arg(long)]
        target_len: Option<usize>,
        #[arg(long)]
        variance_floor: Option<f64>,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Cluster demonstrations into modes.
    Partition {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// kmeans_bic | gmm_bic | dbscan
        #[arg(long, default_value = "kmeans_bic")]
        method: String,
        #[arg(long, default_value_t = gausstube::partition::DEFAULT_SUBSAMPLE_LEN)]
        subsample_len: usize,
        #[arg(long)]
        k_max: Option<usize>,
        /// DBSCAN radius; omitted selects a data-driven default.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 4)]
        min_pts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Write model mean trajectories as a dataset file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// best | all | a mode index
        #[arg(long, default_value = "best")]
        mode: String,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Condition a model on constraints, reweighting and truncating modes.
    Update {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        constraints: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Weight-change report path (default: printed to stdout).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 1.96)]
        z: f64,
        /// Keep-probability aggregation: an exponent, or "max".
        #[arg(long, default_value = "1")]
        q: String,
        #[arg(long, default_value_t = 1000)]
        n_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reweight mode priors only, leaving each Gaussian untouched.
        #[arg(long)]
        modal: bool,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Track a model's tube with a kinematic chain, minimizing variance-weighted deviation.
    Optimize {
        #[arg(long)]
        model: PathBuf,
        /// Built-in chain name (planar3 | arm6 | arm7) or a chain file path.
        #[arg(long)]
        chain: String,
        #[arg(long)]
        out: PathBuf,
        /// Initial joint configuration, comma-separated.
        #[arg(long)]
        q0: Option<String>,
        #[arg(long)]
        lambda_tracking: Option<f64>,
        #[arg(long)]
        lambda_smooth: Option<f64>,
        #[arg(long)]
        z: Option<f64>,
        #[arg(long)]
        outer_iters: Option<usize>,
        #[arg(long)]
        inner_iters: Option<usize>,
        #[arg(long)]
        tol_violation: Option<f64>,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Score a model against a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Partition file for mode assignment and label agreement.
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Run synth, partition, fit, optional update/optimize, and eval from one config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn manifest_path_for(out: &Path, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| out.with_extension("manifest.json"))
}

fn write_manifest(
    path: &Path,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[&Path],
    started: Instant,
) -> Result<()> {
    let mut manifest = Manifest::new(seed);
    manifest.inputs = inputs.iter().map(|p| p.display().to_string()).collect();
    manifest.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
    manifest
        .timings_ms
        .insert("total".into(), started.elapsed().as_secs_f64() * 1e3);
    io::save_manifest(path, &manifest)
}

fn parse_method(s: &str) -> Result<PartitionMethod> {
    match s {
        "kmeans_bic" | "kmeans" => Ok(PartitionMethod::KMeansBic),
        "gmm_bic" | "gmm" => Ok(PartitionMethod::GmmBic),
        "dbscan" => Ok(PartitionMethod::Dbscan),
        other => Err(Error::InvalidValue {
            what: "partition method",
            detail: format!("{other:?}; expected kmeans_bic, gmm_bic, or dbscan"),
        }),
    }
}

fn parse_q(s: &str) -> Result<LqNorm> {
    if s.eq_ignore_ascii_case("max") {
        return Ok(LqNorm::Max);
    }
    let q: f64 = s.parse().map_err(|_| Error::InvalidValue {
        what: "aggregation exponent",
        detail: format!("{s:?}; expected a number or \"max\""),
    })?;
    if !q.is_finite() || q <= 0.0 {
        return Err(Error::InvalidValue {
            what: "aggregation exponent",
            detail: format!("{q}; must be positive"),
        });
    }
    Ok(LqNorm::Power(q))
}

fn parse_q0(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim().parse::<f64>().map_err(|_| Error::InvalidValue {
                what: "initial joint configuration",
                detail: format!("bad entry {p:?}"),
            })
        })
        .collect()
}

/// A model file as either a single tube or a mixture, normalized to a mixture.
fn load_model_any(path: &Path) -> Result<GpMixture> {
    match io::sniff_schema(path)?.as_str() {
        io::MODEL_SCHEMA => Ok(GpMixture::single(io::load_model(path)?)),
        io::MIXTURE_SCHEMA => io::load_mixture(path),
        other => Err(Error::Schema {
            path: path.display().to_string(),
            detail: format!("expected a model or mixture file, found {other:?}"),
        }),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, out, seed, manifest } => {
            let started = Instant::now();
            let text = std::fs::read_to_string(&config).map_err(|e| Error::Io {
                path: config.display().to_string(),
                source: e,
            })?;
            let mut spec: SynthSpec = serde_json::from_str(&text).map_err(|e| Error::Schema {
                path: config.display().to_string(),
                detail: e.to_string(),
            })?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let data = generate(&spec)?;
            io::save_dataset(&out, &data.demos, &data.frame_poses, &data.mode_labels, data.sample_rate_hz)?;
            let mpath = manifest_path_for(&out, manifest.manifest);
            write_manifest(&mpath, Some(spec.seed), &[&config], &[&out], started)?;
            println!("wrote {} ({} demos)", out.display(), data.demos.len());
            Ok(())
        }
        Command::Fit { dataset, out, partition, framed, target_len, variance_floor, manifest } => {
            let started = Instant::now();
            let loaded = io::load_dataset(&dataset)?;
            let mut opts = FitOptions {
                sample_rate_hz: loaded.header.sample_rate_hz,
                ..FitOptions::default()
            };
            if let Some(floor) = variance_floor {
                opts.variance_floor = floor;
            }
            opts.target_len = target_len;
            let mut inputs: Vec<&Path> = vec![&dataset];
            match (&partition, framed) {
                (Some(_), true) => {
                    return Err(Error::InvalidValue {
                        what: "fit flags",
                        detail: "--partition and --framed are mutually exclusive".into(),
                    })
                }
                (Some(ppath), false) => {
                    inputs.push(ppath);
                    let (part, ids) = io::load_partition(ppath)?;
                    let file_ids: Vec<String> = loaded
                        .demos
                        .iter()
                        .map(|d| d.traj.demo_id().to_string())
                        .collect();
                    if ids != file_ids {
                        return Err(Error::InvalidValue {
                            what: "partition file",
                            detail: "demo ids do not match the dataset".into(),
                        });
                    }
                    let trajs = loaded.trajectories();
                    let mixture = gausstube::mixture::fit_mixture(&trajs, &part, &opts)?;
                    io::save_mixture(&out, &mixture)?;
                }
                (None, true) => {
                    let target = opts.target_len.unwrap_or_else(|| {
                        mean_length(&loaded.trajectories())
                    });
                    let windows = pipeline::full_windows(&loaded.header.frames, target);
                    let model = fit_framed(&loaded.demos, windows, &opts)?;
                    io::save_framed(&out, &model)?;
                }
                (None, false) => {
                    let model = fit(&loaded.trajectories(), &opts)?;
                    io::save_model(&out, &model)?;
                }
            }
            let mpath = manifest_path_for(&out, manifest.manifest);
            write_manifest(&mpath, None, &inputs, &[&out], started)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Partition {
            dataset,
            out,
            method,
            subsample_len,
            k_max,
            eps,
            min_pts,
            seed,
            manifest,
        } => {
            let started = Instant::now();
            let loaded = io::load_dataset(&dataset)?;
            let trajs = loaded.trajectories();
            let vectors = gausstube::partition::vectorize(&trajs, subsample_len)?;
            let config = PartitionConfig {
                method: parse_method(&method)?,
                subsample_len,
                k_max,
                eps,
                min_pts,
                seed: Some(seed),
            };
            let part = pipeline::run_partition(&vectors, subsample_len, &config, seed)?;
            let ids: Vec<String> = trajs.iter().map(|t| t.demo_id().to_string()).collect();
            io::save_partition(&out, &part, &ids)?;
            let mpath = manifest_path_for(&out, manifest.manifest);
            write_manifest(&mpath, Some(seed), &[&dataset], &[&out], started)?;
            println!("wrote {} ({} modes)", out.display(), part.n_parts());
            Ok(())
        }
        Command::Predict { model, out, mode, manifest } => {
            let started = Instant::now();
            let mixture = load_model_any(&model)?;
            let rate = mixture.mode(0).model.sample_rate_hz();
            let trajs: Vec<Trajectory> = match mode.as_str() {
                "best" => vec![named(mixture.predict_best(), "best")?],
                "all" => mixture
                    .predict_all()
                    .into_iter()
                    .enumerate()
                    .map(|(m, (_, t))| named(t, &format!("mode{m}")))
                    .collect::<Result<_>>()?,
                idx => {
                    let m: usize = idx.parse().map_err(|_| Error::InvalidValue {
                        what: "prediction mode",
                        detail: format!("{idx:?}; expected best, all, or a mode index"),
                    })?;
                    if m >= mixture.n_modes() {
                        return Err(Error::InvalidValue {
                            what: "prediction mode",
                            detail: format!("index {m} out of range for {} modes", mixture.n_modes()),
                        });
                    }
                    vec![named(mixture.mode(m).model.predict(), &format!("mode{m}"))?]
                }
            };
            io::save_dataset(&out, &trajs, &[], &[], rate)?;
            let mpath = manifest_path_for(&out, manifest.manifest);
            write_manifest(&mpath, None, &[&model], &[&out], started)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Update {
            model,
            constraints,
            out,
            report,
            z,
            q,
            n_samples,
            seed,
            modal,
            manifest,
        } => {
            let started = Instant::now();
            let mut mixture = load_model_any(&model)?;
            let constraint_list = io::load_constraints(&constraints)?;
            if constraint_list.is_empty() {
                return Err(Error::Empty { what: "constraint file" });
            }
            let opts = UpdateOptions { z, q: parse_q(&q)?, n_samples, seed };
            let mut reports: Vec<UpdateReport> = Vec::new();
            for constraint in &constraint_list {
                let (next, rep) = if modal {
                    apply_modal(&mixture, constraint, &opts)?
                } else {
                    apply_convex(&mixture, constraint, &opts)?
                };
                mixture = next;
                reports.push(rep);
            }
            io::save_mixture(&out, &mixture)?;
            let report_text =
                serde_json::to_string_pretty(&reports).expect("serializable");
            let mut outputs: Vec<&Path> = vec![&out];
            if let Some(rp) = &report {
                io::write_atomic(rp, &format!("{report_text}\n"))?;
                outputs.push(rp);
            } else {
                println!("{report_text}");
            }
            let mpath = manifest_path_for(&out, manifest.manifest);
            write_manifest(&mpath, Some(seed), &[&model, &constraints], &outputs, started)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Optimize {
            model,
            chain,
            out,
            q0,
            lambda_tracking,
            lambda_smooth,
            z,
            outer_iters,
            inner_iters,
            tol_violation,
            manifest,
        } => {
            let started = Instant::now();
            let mixture = load_model_any(&model)?;
            let kin = pipeline::load_chain_arg(&chain)?;
            let mut opts = gausstube::trajopt::OptimizeOptions::default();
            if let Some(v) = lambda_tracking {
                opts.lambda_tracking = v;
            }
            if let Some(v) = lambda_smooth {
                opts.lambda_smooth = v;
            }
            if let Some(v) = z {
                opts.z = v;
            }
            if let Some(v) = outer_iters {
                opts.outer_iters = v;
            }
            if let Some(v) = inner_iters {
                opts.inner_iters = v;
            }
            if let Some(v) = tol_violation {
                opts.tol_violation = v;
            }
            if let Some(s) = &q0 {
                opts.q0 = Some(DVector::from_vec(parse_q0(s)?));
            }
            let best = (0..mixture.n_modes())
                .max_by(|&a, &b| {
                    mixture
                        .mode(a)
                        .prior
                        .partial_cmp(&mixture.mode(b).prior)
                        .expect("finite priors")
                })
                .expect("nonempty mixture");
            let solve_start = Instant::now();
            let path = optimize_path(&kin, &mixture.mode(best).model, &opts)?;
            let wall_ms = solve_start.elapsed().as_secs_f64() * 1e3;
            pipeline::save_path_report(&out, &pipeline::path_report(&chain, &path, wall_ms))?;
            let mpath = manifest_path_for(&out, manifest.manifest);
            write_manifest(&mpath, None, &[&model], &[&out], started)?;
            println!(
                "wrote {} (objective {:.6}, max violation {:.2e})",
                out.display(),
                path.report.objective,
                path.report.max_violation
            );
            Ok(())
        }
        Command::Eval { model, dataset, partition, out, manifest } => {
            let started = Instant::now();
            let mixture = load_model_any(&model)?;
            let loaded = io::load_dataset(&dataset)?;
            let trajs = loaded.trajectories();
            let mut inputs: Vec<&Path> = vec![&model, &dataset];
            let part = partition
                .as_ref()
                .map(|p| -> Result<_> { Ok(io::load_partition(p)?.0) })
                .transpose()?;
            if let Some(p) = &partition {
                inputs.push(p);
            }
            let metrics = eval_metrics(&mixture, &trajs, &loaded, part.as_ref())?;
            let text = serde_json::to_string_pretty(&metrics).expect("serializable");
            io::write_atomic(&out, &format!("{text}\n"))?;
            let mpath = manifest_path_for(&out, manifest.manifest);
            write_manifest(&mpath, None, &inputs, &[&out], started)?;
            println!("{text}");
            Ok(())
        }
        Command::Pipeline { config, out_dir } => {
            let cfg = PipelineConfig::from_json(&config)?;
            let dir = out_dir
                .or_else(|| cfg.out_dir.clone())
                .ok_or(Error::InvalidValue {
                    what: "pipeline output directory",
                    detail: "pass --out-dir or set out_dir in the config".into(),
                })?;
            let config_dir = config.parent().map(Path::to_path_buf);
            let outcome = pipeline::run(&cfg, &dir, config_dir.as_deref())?;
            let text = serde_json::to_string_pretty(&outcome.metrics).expect("serializable");
            println!("{text}");
            println!("artifacts in {}", outcome.out_dir.display());
            Ok(())
        }
    }
}

fn named(traj: Trajectory, id: &str) -> Result<Trajectory> {
    Trajectory::new(id.to_string(), traj.points().to_vec())
}

fn eval_metrics(
    mixture: &GpMixture,
    trajs: &[Trajectory],
    loaded: &io::LoadedDataset,
    part: Option<&gausstube::partition::Partition>,
) -> Result<MetricsReport> {
    let predictions = mixture.predict_all();
    let best_mode = (0..mixture.n_modes())
        .max_by(|&a, &b| {
            mixture
                .mode(a)
                .prior
                .partial_cmp(&mixture.mode(b).prior)
                .expect("finite priors")
        })
        .expect("nonempty mixture");

    let mut rmse_sum = 0.0;
    let mut resampled_any = false;
    for (d, traj) in trajs.iter().enumerate() {
        let mode = part.map_or(best_mode, |p| p.labels()[d]);
        let (value, resampled) = rmse(&predictions[mode].1, traj)?;
        rmse_sum += value;
        resampled_any |= resampled;
    }

    let ari = match part {
        Some(p) if !loaded.header.mode_labels.is_empty() => {
            Some(adjusted_rand_index(p.labels(), &loaded.header.mode_labels)?)
        }
        _ => None,
    };

    let rate = loaded.header.sample_rate_hz;
    let accel = total_acceleration(&predictions[best_mode].1, rate);
    let truth_accel =
        trajs.iter().map(|t| total_acceleration(t, rate)).sum::<f64>() / trajs.len() as f64;

    Ok(MetricsReport {
        rmse: Some(rmse_sum / trajs.len() as f64),
        rmse_resampled: Some(resampled_any),
        total_acceleration: Some(accel),
        ground_truth_total_acceleration: Some(truth_accel),
        ari,
        n_modes: Some(mixture.n_modes()),
        nll: None,
        constraints_satisfied: None,
    })
}
