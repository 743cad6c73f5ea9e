//! Synthetic demonstration generators with known ground truth, for
//! benchmarking fitting, partitioning, and path optimization.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{FramedDemo, Trajectory};
use crate::kinematics::{arm6, arm7, planar3, KinematicChain};
use crate::manifold::{exp_map_coords, quat, ManifoldPoint, ManifoldSpec};
use crate::rigid::RigidTransform;
use crate::rng;

/// Signal family to synthesize.
///
/// The scalar families trace one channel; `MultiModePose` produces full
/// poses that branch into `modes` spatially separated variants (separation
/// measured in noise standard deviations); `ArmTraced` runs a smooth joint
/// script through a built-in chain and records the end-effector poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Sine,
    PiecewiseLinear,
    Oscillatory,
    NonStationary,
    Chaotic,
    Discontinuous,
    MultiModePose { modes: usize, separation: f64, gripper: bool },
    ArmTraced { chain: String },
}

impl Family {
    pub fn is_scalar(&self) -> bool {
        !matches!(self, Family::MultiModePose { .. } | Family::ArmTraced { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub family: Family,
    pub n_demos: usize,
    pub len: usize,
    /// Standard deviation of iid per-step noise (tangent space).
    #[serde(default)]
    pub noise_sigma: f64,
    /// Relative strength of smooth per-demo variation (amplitude, phase and
    /// offset modulation); 0 disables it.
    #[serde(default)]
    pub smooth_jitter: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
}

fn default_rate() -> f64 {
    20.0
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub demos: Vec<Trajectory>,
    /// Noiseless, jitter-free reference: one per mode for the branching
    /// family, otherwise a single entry.
    pub clean: Vec<Trajectory>,
    /// Ground-truth mode label per demo (all zero for unimodal families).
    pub mode_labels: Vec<usize>,
    /// For `ArmTraced`: the joint path behind each demo, before noise.
    pub joint_truth: Option<Vec<Vec<DVector<f64>>>>,
    /// Per demo, named frame poses per step (empty unless the family
    /// defines frames).
    pub frame_poses: Vec<BTreeMap<String, Vec<RigidTransform>>>,
    pub sample_rate_hz: f64,
}

impl SynthDataset {
    /// Demos zipped with their frame poses, for task-parameterized fitting.
    pub fn framed_demos(&self) -> Result<Vec<FramedDemo>> {
        self.demos
            .iter()
            .zip(&self.frame_poses)
            .map(|(traj, frames)| {
                let d = FramedDemo { traj: traj.clone(), frame_poses: frames.clone() };
                d.validate()?;
                Ok(d)
            })
            .collect()
    }
}

pub fn chain_by_name(name: &str) -> Result<KinematicChain> {
    match name {
        "planar3" => Ok(planar3()),
        "arm6" => Ok(arm6()),
        "arm7" => Ok(arm7()),
        other => Err(Error::InvalidValue {
            what: "chain name",
            detail: format!("{other:?} (built-ins: planar3, arm6, arm7)"),
        }),
    }
}

fn scalar_value(family: &Family, s: f64) -> f64 {
    use std::f64::consts::PI;
    match family {
        Family::Sine => (2.0 * PI * s).sin(),
        Family::PiecewiseLinear => {
            let knots = [0.0, 0.25, 0.5, 0.75, 1.0];
            let values = [0.0, 1.0, 0.2, 0.8, 0.4];
            let s = s.clamp(0.0, 1.0);
            let i = knots.iter().rposition(|k| *k <= s).unwrap_or(0).min(3);
            let u = (s - knots[i]) / (knots[i + 1] - knots[i]);
            values[i] + u * (values[i + 1] - values[i])
        }
        Family::Oscillatory => (8.0 * PI * s).sin(),
        Family::NonStationary => {
            (0.4 + 0.6 * s) * (2.0 * PI * (s + 2.5 * s * s * s)).sin()
        }
        Family::Discontinuous => {
            if s < 1.0 / 3.0 {
                0.0
            } else if s < 2.0 / 3.0 {
                1.0
            } else {
                0.3
            }
        }
        _ => unreachable!("not a closed-form scalar family"),
    }
}

fn chaotic_curve(t_len: usize) -> Vec<f64> {
    let mut x = 0.4123;
    let mut out = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        out.push(x);
        x = 3.9 * x * (1.0 - x);
    }
    out
}

fn scalar_point(spec: &ManifoldSpec, v: f64) -> ManifoldPoint {
    ManifoldPoint::new(spec.clone(), DVector::from_vec(vec![v])).expect("scalar point")
}

fn generate_scalar(spec: &SynthSpec) -> Result<SynthDataset> {
    let manifold = ManifoldSpec::euclidean(1);
    let t_len = spec.len;
    let chaotic_base = matches!(spec.family, Family::Chaotic).then(|| chaotic_curve(t_len));
    let base_at = |t: usize| -> f64 {
        match &chaotic_base {
            Some(c) => c[t],
            None => scalar_value(&spec.family, t as f64 / (t_len - 1) as f64),
        }
    };

    let clean_points: Vec<ManifoldPoint> = (0..t_len).map(|t| scalar_point(&manifold, base_at(t))).collect();
    let clean = Trajectory::new("clean", clean_points)?;

    let mut demos = Vec::with_capacity(spec.n_demos);
    for d in 0..spec.n_demos {
        let mut r = rng::rng(rng::derive(spec.seed, d as u64));
        let j = spec.smooth_jitter;
        let amp: f64 = 1.0 + j * r.sample::<f64, _>(StandardNormal);
        let phase: f64 = 0.05 * j * r.sample::<f64, _>(StandardNormal);
        let offset: f64 = 0.5 * j * r.sample::<f64, _>(StandardNormal);
        let mut points = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let base = match &chaotic_base {
                // the iterated map has no meaningful phase shift
                Some(c) => c[t],
                None => {
                    let s = (t as f64 / (t_len - 1) as f64 + phase).clamp(0.0, 1.0);
                    scalar_value(&spec.family, s)
                }
            };
            let noise: f64 = spec.noise_sigma * r.sample::<f64, _>(StandardNormal);
            points.push(scalar_point(&manifold, amp * base + offset + noise));
        }
        demos.push(Trajectory::new(format!("demo{d:03}"), points)?);
    }

    Ok(SynthDataset {
        mode_labels: vec![0; demos.len()],
        frame_poses: vec![BTreeMap::new(); demos.len()],
        demos,
        clean: vec![clean],
        joint_truth: None,
        sample_rate_hz: spec.sample_rate_hz,
    })
}

/// Branch offset of mode `m` out of `modes`, centered around zero.
fn mode_offset(m: usize, modes: usize) -> f64 {
    m as f64 - (modes as f64 - 1.0) / 2.0
}

fn multi_mode_pose(t: usize, t_len: usize, delta: f64) -> ([f64; 3], [f64; 4]) {
    let s = t as f64 / (t_len - 1) as f64;
    let ramp = if s <= 0.5 { 0.0 } else { (s - 0.5) / 0.5 };
    let pos = [0.3 * s, delta * ramp, 0.05 * (std::f64::consts::PI * s).sin()];
    let yaw = 4.0 * delta * ramp;
    (pos, quat::about_z(yaw))
}

fn generate_multi_mode(spec: &SynthSpec, modes: usize, separation: f64, gripper: bool) -> Result<SynthDataset> {
    if modes == 0 {
        return Err(Error::InvalidValue { what: "mode count", detail: "0".into() });
    }
    let aux = usize::from(gripper);
    let manifold = ManifoldSpec::pose_with_aux(aux);
    let t_len = spec.len;
    let tangent = manifold.tangent_dim();

    let clean_for = |m: usize| -> Result<Trajectory> {
        let u = mode_offset(m, modes);
        let delta = separation * spec.noise_sigma * u;
        let mut points = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (pos, q) = multi_mode_pose(t, t_len, delta);
            let mut c = Vec::with_capacity(manifold.ambient_dim());
            c.extend_from_slice(&pos);
            c.extend_from_slice(&q);
            if gripper {
                let s = t as f64 / (t_len - 1) as f64;
                c.push(if s < 0.6 { 1.0 } else { 0.0 });
            }
            points.push(ManifoldPoint::new(manifold.clone(), DVector::from_vec(c))?);
        }
        Trajectory::new(format!("mode{m}"), points)
    };
    let clean: Vec<Trajectory> = (0..modes).map(clean_for).collect::<Result<_>>()?;

    let mut demos = Vec::with_capacity(spec.n_demos);
    let mut labels = Vec::with_capacity(spec.n_demos);
    let mut frames = Vec::with_capacity(spec.n_demos);
    for d in 0..spec.n_demos {
        let m = d % modes;
        labels.push(m);
        let mut r = rng::rng(rng::derive(spec.seed, d as u64));
        let mut points = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let base = clean[m].point(t);
            let mut v = DVector::zeros(tangent);
            for i in 0..tangent {
                v[i] = spec.noise_sigma * r.sample::<f64, _>(StandardNormal);
            }
            points.push(exp_map_coords(base, &v)?);
        }
        let traj = Trajectory::new(format!("demo{d:03}"), points)?;

        let last = clean[m].point(t_len - 1).coords();
        let goal = RigidTransform::new([last[0], last[1], last[2]], [last[3], last[4], last[5], last[6]])?;
        let mut fp = BTreeMap::new();
        fp.insert("base".to_string(), vec![RigidTransform::identity(); t_len]);
        fp.insert("goal".to_string(), vec![goal; t_len]);
        frames.push(fp);
        demos.push(traj);
    }

    Ok(SynthDataset {
        demos,
        clean,
        mode_labels: labels,
        joint_truth: None,
        frame_poses: frames,
        sample_rate_hz: spec.sample_rate_hz,
    })
}

fn arm_script(chain: &KinematicChain, t_len: usize) -> Vec<DVector<f64>> {
    let n = chain.n_joints();
    (0..t_len)
        .map(|t| {
            let s = t as f64 / (t_len - 1) as f64;
            DVector::from_iterator(
                n,
                chain.joints.iter().enumerate().map(|(j, joint)| {
                    let c = chain.q_home[j];
                    let margin = (c - joint.q_min).min(joint.q_max - c);
                    let a = 0.3 * margin;
                    let f = 1.0 + 0.25 * j as f64;
                    let phi = 0.7 * j as f64;
                    c + a * (2.0 * std::f64::consts::PI * f * s + phi).sin()
                }),
            )
        })
        .collect()
}

fn generate_arm_traced(spec: &SynthSpec, chain_name: &str) -> Result<SynthDataset> {
    let chain = chain_by_name(chain_name)?;
    let n = chain.n_joints();
    let t_len = spec.len;
    let base = arm_script(&chain, t_len);

    let pose_point = |q: &DVector<f64>| -> Result<ManifoldPoint> {
        let ee = chain.fk(q)?;
        ManifoldPoint::pose(ee.translation, ee.rotation)
    };
    let clean_points: Vec<ManifoldPoint> = base.iter().map(&pose_point).collect::<Result<_>>()?;
    let clean = Trajectory::new("clean", clean_points)?;

    let mut demos = Vec::with_capacity(spec.n_demos);
    let mut joint_truth = Vec::with_capacity(spec.n_demos);
    for d in 0..spec.n_demos {
        let mut r = rng::rng(rng::derive(spec.seed, d as u64));
        let j = spec.smooth_jitter;
        // one slow sinusoid per joint, scaled relative to the script motion
        let params: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                let a: f64 = j * 0.1 * r.sample::<f64, _>(StandardNormal);
                let f: f64 = 0.5 + r.gen::<f64>();
                let phi: f64 = r.gen::<f64>() * std::f64::consts::TAU;
                (a, f, phi)
            })
            .collect();
        let mut truth = Vec::with_capacity(t_len);
        let mut points = Vec::with_capacity(t_len);
        for (t, q_base) in base.iter().enumerate() {
            let s = t as f64 / (t_len - 1) as f64;
            let mut q = q_base.clone();
            for (jj, (a, f, phi)) in params.iter().enumerate() {
                q[jj] += a * (std::f64::consts::TAU * f * s + phi).sin();
            }
            let q = chain.clamp(&q);
            truth.push(q.clone());
            let mut q_noisy = q.clone();
            for jj in 0..n {
                let g: f64 = r.sample(StandardNormal);
                q_noisy[jj] += spec.noise_sigma * g;
            }
            points.push(pose_point(&chain.clamp(&q_noisy))?);
        }
        joint_truth.push(truth);
        demos.push(Trajectory::new(format!("demo{d:03}"), points)?);
    }

    Ok(SynthDataset {
        mode_labels: vec![0; demos.len()],
        frame_poses: vec![BTreeMap::new(); demos.len()],
        demos,
        clean: vec![clean],
        joint_truth: Some(joint_truth),
        sample_rate_hz: spec.sample_rate_hz,
    })
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    if spec.n_demos == 0 {
        return Err(Error::Empty { what: "demo count" });
    }
    if spec.len < 2 {
        return Err(Error::TooShort { got: spec.len, need: 2 });
    }
    if !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
        return Err(Error::InvalidValue { what: "noise sigma", detail: format!("{}", spec.noise_sigma) });
    }
    match &spec.family {
        Family::MultiModePose { modes, separation, gripper } => {
            generate_multi_mode(spec, *modes, *separation, *gripper)
        }
        Family::ArmTraced { chain } => generate_arm_traced(spec, chain),
        _ => generate_scalar(spec),
    }
}
