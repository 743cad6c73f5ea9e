//! Per-step Gaussian trajectory models.
//!
//! A [`DiscreteGp`] is a length-T sequence of independent Gaussians on a
//! product manifold, each with a mean point and a diagonal covariance over
//! tangent coordinates. Fitting is closed-form per step: Fréchet mean of the
//! demonstrations' step-t samples, then the diagonal of the tangent-space
//! scatter with an unbiased 1/(N-1) normalizer. There are no latent
//! variables and no iterative training beyond the Fréchet fixed point, which
//! is what makes few-shot fitting cheap and deterministic.
//!
//! Task parameterization ([`FramedGp`]) fits one model per reference frame
//! from demonstrations expressed in that frame; at inference each per-frame
//! model is mapped to the world by the current frame pose and the models are
//! fused as a product of Gaussians.

use nalgebra::DVector;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::manifold::{
    exp_map_coords, frechet_mean, geodesic_distance, interpolate, log_map, quat, Factor,
    FrechetOptions, ManifoldPoint, ManifoldSpec,
};
use crate::rigid::RigidTransform;

/// Smallest admissible per-dimension variance. Keeps precisions finite when
/// demonstrations agree exactly on some coordinate.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// An observed trajectory: a uniform sequence of points on one manifold.
#[derive(Clone, Debug)]
pub struct Trajectory {
    demo_id: String,
    points: Vec<ManifoldPoint>,
}

impl Trajectory {
    pub fn new(demo_id: impl Into<String>, points: Vec<ManifoldPoint>) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty { what: "trajectory" })?;
        let spec = first.spec().clone();
        if points.iter().any(|p| p.spec() != &spec) {
            return Err(Error::InvalidValue {
                what: "trajectory",
                detail: "points on different manifolds".into(),
            });
        }
        Ok(Self { demo_id: demo_id.into(), points })
    }

    pub fn demo_id(&self) -> &str {
        &self.demo_id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spec(&self) -> &ManifoldSpec {
        self.points[0].spec()
    }

    pub fn points(&self) -> &[ManifoldPoint] {
        &self.points
    }

    pub fn point(&self, t: usize) -> &ManifoldPoint {
        &self.points[t]
    }
}

/// Resample to `target_len` by linear interpolation in index space, with
/// geodesic interpolation between neighboring samples. Integer index hits
/// (including both endpoints, and every index when `target_len` equals the
/// current length) are copied exactly.
pub fn resample_to_length(traj: &Trajectory, target_len: usize) -> Result<Trajectory> {
    if traj.len() < 2 {
        return Err(Error::TooShort { got: traj.len(), need: 2 });
    }
    if target_len < 2 {
        return Err(Error::TooShort { got: target_len, need: 2 });
    }
    let src = traj.points();
    let scale = (src.len() - 1) as f64 / (target_len - 1) as f64;
    let mut points = Vec::with_capacity(target_len);
    for i in 0..target_len {
        let s = i as f64 * scale;
        let near = s.round();
        if (s - near).abs() < 1e-12 {
            points.push(src[near as usize].clone());
            continue;
        }
        let k = (s.floor() as usize).min(src.len() - 2);
        points.push(interpolate(&src[k], &src[k + 1], s - k as f64)?);
    }
    Trajectory::new(traj.demo_id.clone(), points)
}

/// Fractional-index sample at `s` (geodesic between neighbors). `s = 0`
/// gives the first point, `s = len-1` the last.
pub fn sample_at(traj: &Trajectory, s: f64) -> Result<ManifoldPoint> {
    let src = traj.points();
    let near = s.round();
    if (s - near).abs() < 1e-12 && near >= 0.0 && (near as usize) < src.len() {
        return Ok(src[near as usize].clone());
    }
    if !(0.0..=(src.len() - 1) as f64).contains(&s) {
        return Err(Error::InvalidValue {
            what: "sample index",
            detail: format!("{s} outside [0, {}]", src.len() - 1),
        });
    }
    let k = (s.floor() as usize).min(src.len() - 2);
    interpolate(&src[k], &src[k + 1], s - k as f64)
}

/// Arithmetic mean of demo lengths, rounded to the nearest integer.
pub fn mean_length(demos: &[Trajectory]) -> usize {
    let sum: usize = demos.iter().map(Trajectory::len).sum();
    (sum as f64 / demos.len() as f64).round() as usize
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub sample_rate_hz: f64,
    pub variance_floor: f64,
    /// Common length to resample demos to; default is the rounded mean of
    /// the demo lengths.
    pub target_len: Option<usize>,
    pub frechet: FrechetOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            sample_rate_hz: 20.0,
            variance_floor: VARIANCE_FLOOR,
            target_len: None,
            frechet: FrechetOptions::default(),
        }
    }
}

/// Per-step Gaussian sequence on a product manifold: mean point plus
/// diagonal tangent-space variances for each of `len()` steps.
#[derive(Clone, Debug)]
pub struct DiscreteGp {
    spec: ManifoldSpec,
    means: Vec<ManifoldPoint>,
    vars: Vec<DVector<f64>>,
    sample_rate_hz: f64,
}

impl DiscreteGp {
    pub fn from_parts(
        means: Vec<ManifoldPoint>,
        vars: Vec<DVector<f64>>,
        sample_rate_hz: f64,
    ) -> Result<Self> {
        let first = means.first().ok_or(Error::Empty { what: "model steps" })?;
        let spec = first.spec().clone();
        if means.len() != vars.len() {
            return Err(Error::DimensionMismatch {
                context: "model variances",
                expected: means.len(),
                got: vars.len(),
            });
        }
        let td = spec.tangent_dim();
        for (m, v) in means.iter().zip(&vars) {
            if m.spec() != &spec {
                return Err(Error::SpecMismatch {
                    expected: spec.to_string(),
                    got: m.spec().to_string(),
                });
            }
            if v.len() != td {
                return Err(Error::DimensionMismatch {
                    context: "step variance",
                    expected: td,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                return Err(Error::InvalidValue {
                    what: "step variance",
                    detail: "entries must be positive and finite".into(),
                });
            }
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidValue {
                what: "sample rate",
                detail: format!("{sample_rate_hz}"),
            });
        }
        Ok(Self { spec, means, vars, sample_rate_hz })
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn mean(&self, t: usize) -> &ManifoldPoint {
        &self.means[t]
    }

    pub fn var(&self, t: usize) -> &DVector<f64> {
        &self.vars[t]
    }

    pub fn means(&self) -> &[ManifoldPoint] {
        &self.means
    }

    pub fn vars(&self) -> &[DVector<f64>] {
        &self.vars
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// The mean trajectory. This is the model's prediction; it takes no
    /// optimization and is O(T).
    pub fn predict(&self) -> Trajectory {
        Trajectory::new("prediction", self.means.clone()).expect("model is non-empty and uniform")
    }

    /// Map a model fitted in a task frame into the world given the frame's
    /// current pose: positions are rotated and translated, orientations
    /// left-multiplied. Position variances are re-diagonalized as
    /// `diag(R diag(v) R^T)`; orientation variances are expressed in the
    /// body frame of their mean and are invariant under a global rotation;
    /// trailing scalar channels pass through unchanged.
    pub fn transform_to_world(&self, frame_pose: &RigidTransform) -> Result<DiscreteGp> {
        let factors = self.spec.factors();
        let pose_prefix = factors.len() >= 2
            && factors[0] == Factor::Euclidean(3)
            && factors[1] == Factor::UnitQuaternion;
        if !pose_prefix {
            return Err(Error::SpecMismatch {
                expected: "R3xS3 (optionally with trailing factors)".into(),
                got: self.spec.to_string(),
            });
        }
        let rows: Vec<[f64; 3]> = (0..3).map(|i| frame_pose.rotation_row(i)).collect();
        let mut means = Vec::with_capacity(self.len());
        let mut vars = Vec::with_capacity(self.len());
        for (m, v) in self.means.iter().zip(&self.vars) {
            let c = m.coords().as_slice();
            let p = frame_pose.transform_point(&[c[0], c[1], c[2]]);
            let q = frame_pose.transform_orientation(&c[3..7]);
            let mut coords = Vec::with_capacity(c.len());
            coords.extend_from_slice(&p);
            coords.extend_from_slice(&q);
            coords.extend_from_slice(&c[7..]);
            means.push(ManifoldPoint::new(self.spec.clone(), DVector::from_vec(coords))?);

            let mut nv = v.clone();
            for i in 0..3 {
                nv[i] = (0..3).map(|j| rows[i][j] * rows[i][j] * v[j]).sum();
            }
            vars.push(nv);
        }
        DiscreteGp::from_parts(means, vars, self.sample_rate_hz)
    }
}

/// Fit a per-step Gaussian sequence to demonstrations (at least two).
///
/// Demos are resampled to a common length first — the rounded mean of their
/// lengths unless `opts.target_len` overrides it.
pub fn fit(demos: &[Trajectory], opts: &FitOptions) -> Result<DiscreteGp> {
    if demos.len() < 2 {
        return Err(Error::InsufficientDemos { got: demos.len(), need: 2 });
    }
    let spec = demos[0].spec().clone();
    for d in demos {
        if d.spec() != &spec {
            return Err(Error::SpecMismatch {
                expected: spec.to_string(),
                got: d.spec().to_string(),
            });
        }
    }
    let target = opts.target_len.unwrap_or_else(|| mean_length(demos));
    let mut resampled = Vec::with_capacity(demos.len());
    for d in demos {
        resampled.push(if d.len() == target { d.clone() } else { resample_to_length(d, target)? });
    }

    let n = demos.len() as f64;
    let td = spec.tangent_dim();
    let mut means = Vec::with_capacity(target);
    let mut vars = Vec::with_capacity(target);
    let mut column: Vec<ManifoldPoint> = Vec::with_capacity(demos.len());
    for t in 0..target {
        column.clear();
        column.extend(resampled.iter().map(|d| d.point(t).clone()));
        let mu = frechet_mean(&column, &opts.frechet)?;
        let mut var = DVector::zeros(td);
        for p in &column {
            let v = log_map(&mu, p)?;
            for i in 0..td {
                var[i] += v.coords[i] * v.coords[i];
            }
        }
        var /= n - 1.0;
        for x in var.iter_mut() {
            *x = x.max(opts.variance_floor);
        }
        means.push(mu);
        vars.push(var);
    }
    DiscreteGp::from_parts(means, vars, opts.sample_rate_hz)
}

/// One fusion step: product of Gaussians at a single time index.
///
/// Euclidean blocks fuse in closed form (precisions add). Quaternion blocks
/// have no closed form; the fused mean is the fixed point of the
/// precision-weighted tangent average, seeded at the member with the
/// smallest total orientation variance, iterated until the update norm
/// drops below 1e-10. Fused variances are 1/(sum of precisions) in both
/// cases, so fusing any set never inflates variance beyond the tightest
/// member.
fn fuse_step(
    spec: &ManifoldSpec,
    means: &[&ManifoldPoint],
    vars: &[&DVector<f64>],
) -> Result<(ManifoldPoint, DVector<f64>)> {
    debug_assert_eq!(means.len(), vars.len());
    let m = means.len();
    let mut coords = DVector::zeros(spec.ambient_dim());
    let mut var_out = DVector::zeros(spec.tangent_dim());

    for (f, ar, tr) in spec.blocks() {
        match f {
            Factor::Euclidean(_) => {
                for (offset, (ai, ti)) in ar.clone().zip(tr.clone()).enumerate() {
                    let _ = offset;
                    let mut prec = 0.0;
                    let mut num = 0.0;
                    for k in 0..m {
                        let w = 1.0 / vars[k][ti];
                        prec += w;
                        num += w * means[k].coords()[ai];
                    }
                    coords[ai] = num / prec;
                    var_out[ti] = 1.0 / prec;
                }
            }
            Factor::UnitQuaternion => {
                let block_var = |k: usize| -> [f64; 3] {
                    [vars[k][tr.start], vars[k][tr.start + 1], vars[k][tr.start + 2]]
                };
                let seed = (0..m)
                    .min_by(|&a, &b| {
                        let sa: f64 = block_var(a).iter().sum();
                        let sb: f64 = block_var(b).iter().sum();
                        sa.partial_cmp(&sb).expect("finite variances")
                    })
                    .expect("at least one model");
                let q_of = |k: usize| -> [f64; 4] {
                    means[k].coords().as_slice()[ar.clone()].try_into().expect("quat block")
                };
                let mut est = q_of(seed);
                let mut denom = [0.0f64; 3];
                for k in 0..m {
                    let w = block_var(k);
                    for i in 0..3 {
                        denom[i] += 1.0 / w[i];
                    }
                }
                let mut converged = false;
                let mut residual = f64::INFINITY;
                for _ in 0..100 {
                    let mut num = [0.0f64; 3];
                    for k in 0..m {
                        let qk = q_of(k);
                        let d = quat::dot(&est, &qk);
                        if d.abs() < 1e-12 {
                            return Err(Error::AntipodalQuaternion);
                        }
                        let qk = if d < 0.0 { [-qk[0], -qk[1], -qk[2], -qk[3]] } else { qk };
                        let rel = quat::log(&quat::normalize(&quat::mul(&quat::conjugate(&est), &qk)));
                        let w = block_var(k);
                        for i in 0..3 {
                            num[i] += rel[i] / w[i];
                        }
                    }
                    let step = [num[0] / denom[0], num[1] / denom[1], num[2] / denom[2]];
                    residual = (step[0] * step[0] + step[1] * step[1] + step[2] * step[2]).sqrt();
                    if residual < 1e-10 {
                        converged = true;
                        break;
                    }
                    est = quat::normalize(&quat::mul(&est, &quat::exp(&step)));
                }
                if !converged {
                    return Err(Error::FusionNonConvergence { iterations: 100, residual });
                }
                let est = quat::canonical(&est);
                coords.as_mut_slice()[ar].copy_from_slice(&est);
                for i in 0..3 {
                    var_out[tr.start + i] = 1.0 / denom[i];
                }
            }
        }
    }
    let mean = ManifoldPoint::new(spec.clone(), coords)?;
    Ok((mean, var_out))
}

/// Product-of-Gaussians fusion of models over the same manifold, length, and
/// sample rate. Fusing a model with itself halves every variance and keeps
/// the means.
pub fn fuse_product(models: &[&DiscreteGp]) -> Result<DiscreteGp> {
    let first = *models.first().ok_or(Error::Empty { what: "model list" })?;
    for m in models {
        if m.spec() != first.spec() {
            return Err(Error::SpecMismatch {
                expected: first.spec().to_string(),
                got: m.spec().to_string(),
            });
        }
        if m.len() != first.len() {
            return Err(Error::DimensionMismatch {
                context: "fusion model length",
                expected: first.len(),
                got: m.len(),
            });
        }
    }
    let mut means = Vec::with_capacity(first.len());
    let mut vars = Vec::with_capacity(first.len());
    for t in 0..first.len() {
        let ms: Vec<&ManifoldPoint> = models.iter().map(|m| m.mean(t)).collect();
        let vs: Vec<&DVector<f64>> = models.iter().map(|m| m.var(t)).collect();
        let (mu, var) = fuse_step(first.spec(), &ms, &vs)?;
        means.push(mu);
        vars.push(var);
    }
    DiscreteGp::from_parts(means, vars, first.sample_rate_hz())
}

/// A demonstration together with the per-step poses of its task frames.
#[derive(Clone, Debug)]
pub struct FramedDemo {
    pub traj: Trajectory,
    /// frame name -> pose per step (same length as the trajectory)
    pub frame_poses: BTreeMap<String, Vec<RigidTransform>>,
}

impl FramedDemo {
    pub fn validate(&self) -> Result<()> {
        for (name, poses) in &self.frame_poses {
            if poses.len() != self.traj.len() {
                return Err(Error::InvalidValue {
                    what: "frame poses",
                    detail: format!(
                        "frame {name:?} has {} poses for {} steps",
                        poses.len(),
                        self.traj.len()
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Task-parameterized model: one per-frame [`DiscreteGp`] fitted from
/// demonstrations expressed in that frame, with optional per-frame active
/// windows `[start, end)` in step indices. Frames without a window are
/// active everywhere.
#[derive(Clone, Debug)]
pub struct FramedGp {
    models: BTreeMap<String, DiscreteGp>,
    windows: BTreeMap<String, (usize, usize)>,
}

impl FramedGp {
    pub fn from_parts(
        models: BTreeMap<String, DiscreteGp>,
        windows: BTreeMap<String, (usize, usize)>,
    ) -> Result<Self> {
        let mut iter = models.values();
        let first = iter.next().ok_or(Error::Empty { what: "framed model" })?;
        for m in iter {
            if m.len() != first.len() || m.spec() != first.spec() {
                return Err(Error::InvalidValue {
                    what: "framed model",
                    detail: "per-frame models must share manifold and length".into(),
                });
            }
        }
        for (name, (s, e)) in &windows {
            if !models.contains_key(name) {
                return Err(Error::InvalidValue {
                    what: "frame window",
                    detail: format!("unknown frame {name:?}"),
                });
            }
            if s >= e || *e > first.len() {
                return Err(Error::InvalidValue {
                    what: "frame window",
                    detail: format!("[{s}, {e}) out of range for length {}", first.len()),
                });
            }
        }
        Ok(Self { models, windows })
    }

    pub fn models(&self) -> &BTreeMap<String, DiscreteGp> {
        &self.models
    }

    pub fn windows(&self) -> &BTreeMap<String, (usize, usize)> {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.models.values().next().map_or(0, DiscreteGp::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Transform every per-frame model to the world using the given frame
    /// poses and fuse them, honoring active windows per step.
    pub fn predict_world(
        &self,
        frame_poses: &BTreeMap<String, RigidTransform>,
    ) -> Result<DiscreteGp> {
        let mut world = Vec::new();
        for (name, model) in &self.models {
            let pose = frame_poses.get(name).ok_or_else(|| Error::InvalidValue {
                what: "frame poses",
                detail: format!("missing pose for frame {name:?}"),
            })?;
            world.push((name.clone(), model.transform_to_world(pose)?));
        }
        let len = self.len();
        let spec = world[0].1.spec().clone();
        let rate = world[0].1.sample_rate_hz();
        let mut means = Vec::with_capacity(len);
        let mut vars = Vec::with_capacity(len);
        for t in 0..len {
            let mut ms = Vec::new();
            let mut vs = Vec::new();
            for (name, model) in &world {
                let active = match self.windows.get(name) {
                    Some((s, e)) => t >= *s && t < *e,
                    None => true,
                };
                if active {
                    ms.push(model.mean(t));
                    vs.push(model.var(t));
                }
            }
            if ms.is_empty() {
                return Err(Error::InvalidValue {
                    what: "frame windows",
                    detail: format!("no frame active at step {t}"),
                });
            }
            let (mu, var) = fuse_step(&spec, &ms, &vs)?;
            means.push(mu);
            vars.push(var);
        }
        DiscreteGp::from_parts(means, vars, rate)
    }
}

/// Fit one model per task frame from framed demonstrations. All demos must
/// name the same frames; each demo is expressed in a frame via that frame's
/// per-step inverse pose before fitting.
pub fn fit_framed(
    demos: &[FramedDemo],
    windows: BTreeMap<String, (usize, usize)>,
    opts: &FitOptions,
) -> Result<FramedGp> {
    if demos.len() < 2 {
        return Err(Error::InsufficientDemos { got: demos.len(), need: 2 });
    }
    let frame_names: Vec<String> = demos[0].frame_poses.keys().cloned().collect();
    if frame_names.is_empty() {
        return Err(Error::Empty { what: "frame set" });
    }
    for d in demos {
        d.validate()?;
        let names: Vec<String> = d.frame_poses.keys().cloned().collect();
        if names != frame_names {
            return Err(Error::InvalidValue {
                what: "framed demos",
                detail: "demos name different frame sets".into(),
            });
        }
    }
    let target = opts.target_len.unwrap_or_else(|| {
        let trajs: Vec<Trajectory> = demos.iter().map(|d| d.traj.clone()).collect();
        mean_length(&trajs)
    });
    let mut fit_opts = opts.clone();
    fit_opts.target_len = Some(target);

    let mut models = BTreeMap::new();
    for name in &frame_names {
        let mut expressed = Vec::with_capacity(demos.len());
        for d in demos {
            let poses = &d.frame_poses[name];
            let mut points = Vec::with_capacity(d.traj.len());
            for (t, p) in d.traj.points().iter().enumerate() {
                points.push(express_in_frame(p, &poses[t])?);
            }
            expressed.push(Trajectory::new(d.traj.demo_id().to_string(), points)?);
        }
        models.insert(name.clone(), fit(&expressed, &fit_opts)?);
    }
    FramedGp::from_parts(models, windows)
}

/// Express a world-frame pose point in a frame with the given world pose.
fn express_in_frame(p: &ManifoldPoint, frame_pose: &RigidTransform) -> Result<ManifoldPoint> {
    let factors = p.spec().factors();
    if factors.len() < 2 || factors[0] != Factor::Euclidean(3) || factors[1] != Factor::UnitQuaternion {
        return Err(Error::SpecMismatch {
            expected: "R3xS3 (optionally with trailing factors)".into(),
            got: p.spec().to_string(),
        });
    }
    let inv = frame_pose.inverse();
    let c = p.coords().as_slice();
    let pos = inv.transform_point(&[c[0], c[1], c[2]]);
    let q = inv.transform_orientation(&c[3..7]);
    let mut coords = Vec::with_capacity(c.len());
    coords.extend_from_slice(&pos);
    coords.extend_from_slice(&q);
    coords.extend_from_slice(&c[7..]);
    ManifoldPoint::new(p.spec().clone(), DVector::from_vec(coords))
}

/// Root-mean-square geodesic distance between two equal-length trajectories.
pub fn rmse_to(traj: &Trajectory, reference: &Trajectory) -> Result<f64> {
    if traj.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            context: "rmse trajectory length",
            expected: reference.len(),
            got: traj.len(),
        });
    }
    let mut sq = 0.0;
    for (a, b) in traj.points().iter().zip(reference.points()) {
        let d = geodesic_distance(a, b)?;
        sq += d * d;
    }
    Ok((sq / traj.len() as f64).sqrt())
}

/// Draw one trajectory from the model: independent per-step tangent noise.
/// Used by synthetic benchmarks, not by prediction.
pub fn sample_trajectory(
    model: &DiscreteGp,
    rng: &mut impl rand::Rng,
    demo_id: impl Into<String>,
) -> Result<Trajectory> {
    use rand_distr::{Distribution, StandardNormal};
    let mut points = Vec::with_capacity(model.len());
    for t in 0..model.len() {
        let mu = model.mean(t);
        let var = model.var(t);
        let mut v = DVector::zeros(var.len());
        for i in 0..var.len() {
            let z: f64 = StandardNormal.sample(rng);
            v[i] = z * var[i].sqrt();
        }
        points.push(exp_map_coords(mu, &v)?);
    }
    Trajectory::new(demo_id, points)
}
