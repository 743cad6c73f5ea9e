//! Inference-time conditioning of fitted models on geometric evidence.
//!
//! Evidence arrives as a constraint on the position factor (or an arbitrary
//! membership test). Convex constraints update both the per-step Gaussians
//! (Monte Carlo moment matching of the truncated distributions) and the mode
//! weights; non-convex constraints only reweight modes, since a truncated
//! unimodal Gaussian stops being well approximated by one Gaussian there.
//!
//! Smoothness proxy bound: a convex update of a smooth prior keeps the
//! posterior mean trajectory smooth up to sampling noise. Concretely, the
//! maximum second difference of the posterior means stays within the prior's
//! maximum second difference plus three times the Monte Carlo standard error
//! of a second difference, `3 * sqrt(6) * max_t sqrt(var_t / kept_t)` (the
//! sqrt(6) propagates the 1, -2, 1 stencil weights).

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gp::{DiscreteGp, VARIANCE_FLOOR};
use crate::manifold::{exp_map_coords, frechet_mean, log_map, FrechetOptions, ManifoldPoint, ManifoldSpec};
use crate::mixture::{GpMixture, Mode, SkillChain};
use crate::rng;

/// One bounding plane: points x with `normal . (x - point) >= d_safe` are
/// on the safe side. Normals need not be pre-normalized.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Plane {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
}

/// Regular grid of occupancy values over the position factor, trilinearly
/// interpolated between cell centers. Queries outside the grid read as free.
/// Values are laid out x-major: `values[ix + dims[0]*(iy + dims[1]*iz)]`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OccupancyGrid {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub cell_size: f64,
    pub values: Vec<f64>,
}

impl OccupancyGrid {
    pub fn new(dims: [usize; 3], origin: [f64; 3], cell_size: f64, values: Vec<f64>) -> Result<Self> {
        let expect = dims[0] * dims[1] * dims[2];
        if values.len() != expect {
            return Err(Error::DimensionMismatch {
                context: "occupancy values",
                expected: expect,
                got: values.len(),
            });
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::InvalidValue { what: "cell size", detail: format!("{cell_size}") });
        }
        Ok(Self { dims, origin, cell_size, values })
    }

    fn cell(&self, ix: i64, iy: i64, iz: i64) -> f64 {
        if ix < 0 || iy < 0 || iz < 0 {
            return 0.0;
        }
        let (ix, iy, iz) = (ix as usize, iy as usize, iz as usize);
        if ix >= self.dims[0] || iy >= self.dims[1] || iz >= self.dims[2] {
            return 0.0;
        }
        self.values[ix + self.dims[0] * (iy + self.dims[1] * iz)]
    }

    /// Interpolated occupancy at a position (first three coordinates used).
    pub fn value_at(&self, p: &[f64]) -> f64 {
        let mut idx = [0i64; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let u = (p[a] - self.origin[a]) / self.cell_size - 0.5;
            let f = u.floor();
            idx[a] = f as i64;
            frac[a] = u - f;
        }
        let mut acc = 0.0;
        for dz in 0..2i64 {
            for dy in 0..2i64 {
                for dx in 0..2i64 {
                    let w = (if dx == 0 { 1.0 - frac[0] } else { frac[0] })
                        * (if dy == 0 { 1.0 - frac[1] } else { frac[1] })
                        * (if dz == 0 { 1.0 - frac[2] } else { frac[2] });
                    acc += w * self.cell(idx[0] + dx, idx[1] + dy, idx[2] + dz);
                }
            }
        }
        acc
    }
}

/// Geometric evidence. Built-in kinds act on the position factor of the
/// manifold; `Custom` sees the full ambient coordinates.
#[derive(Clone)]
pub enum Constraint {
    /// Stay within `radius` of `center`.
    ReachSphere { center: Vec<f64>, radius: f64 },
    /// Stay at least `d_safe` beyond a plane, on its normal side.
    HalfSpace { point: Vec<f64>, normal: Vec<f64>, d_safe: f64 },
    /// Intersection of half-spaces, one per obstacle. Construct through
    /// [`Constraint::half_space_set`], which checks the obstacle spacing
    /// needed for the intersection to stay meaningful.
    HalfSpaceSet { halves: Vec<Plane>, d_safe: f64, d_uni: f64 },
    /// Keep at least `d_min` away from a point (non-convex).
    SelfCollision { center: Vec<f64>, d_min: f64 },
    /// Stay where interpolated occupancy is below `tau` (non-convex).
    Occupancy { grid: OccupancyGrid, tau: f64 },
    /// Arbitrary membership test over the full ambient coordinates
    /// (treated as non-convex).
    Custom(Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>),
}

impl fmt::Debug for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::ReachSphere { center, radius } => f
                .debug_struct("ReachSphere")
                .field("center", center)
                .field("radius", radius)
                .finish(),
            Constraint::HalfSpace { point, normal, d_safe } => f
                .debug_struct("HalfSpace")
                .field("point", point)
                .field("normal", normal)
                .field("d_safe", d_safe)
                .finish(),
            Constraint::HalfSpaceSet { halves, d_safe, d_uni } => f
                .debug_struct("HalfSpaceSet")
                .field("halves", &halves.len())
                .field("d_safe", d_safe)
                .field("d_uni", d_uni)
                .finish(),
            Constraint::SelfCollision { center, d_min } => f
                .debug_struct("SelfCollision")
                .field("center", center)
                .field("d_min", d_min)
                .finish(),
            Constraint::Occupancy { grid, tau } => f
                .debug_struct("Occupancy")
                .field("dims", &grid.dims)
                .field("tau", tau)
                .finish(),
            Constraint::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn plane_margin(x: &[f64], point: &[f64], normal: &[f64]) -> f64 {
    let n = unit(normal);
    x.iter().zip(point).zip(&n).map(|((x, p), n)| (x - p) * n).sum()
}

impl Constraint {
    /// Half-space-per-obstacle evidence. Obstacle reference points must be
    /// pairwise at least `d_safe + d_uni` apart, otherwise the planes cut
    /// away each other's safe regions.
    pub fn half_space_set(halves: Vec<Plane>, d_safe: f64, d_uni: f64) -> Result<Self> {
        if halves.is_empty() {
            return Err(Error::Empty { what: "half-space set" });
        }
        let required = d_safe + d_uni;
        for i in 0..halves.len() {
            for j in i + 1..halves.len() {
                let dist = halves[i]
                    .point
                    .iter()
                    .zip(&halves[j].point)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if dist < required {
                    return Err(Error::ObstacleMargin { i, j, dist, required });
                }
            }
        }
        Ok(Constraint::HalfSpaceSet { halves, d_safe, d_uni })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Constraint::ReachSphere { .. } => "reach_sphere",
            Constraint::HalfSpace { .. } => "half_space",
            Constraint::HalfSpaceSet { .. } => "half_space_set",
            Constraint::SelfCollision { .. } => "self_collision",
            Constraint::Occupancy { .. } => "occupancy",
            Constraint::Custom(_) => "custom",
        }
    }

    /// Convex constraints admit the full Gaussian update; the rest only
    /// reweight modes.
    pub fn is_convex(&self) -> bool {
        matches!(
            self,
            Constraint::ReachSphere { .. }
                | Constraint::HalfSpace { .. }
                | Constraint::HalfSpaceSet { .. }
        )
    }

    /// Check the constraint's dimensions against a manifold.
    pub fn validate_for(&self, spec: &ManifoldSpec) -> Result<()> {
        if matches!(self, Constraint::Custom(_)) {
            return Ok(());
        }
        let block = spec.position_block().ok_or(Error::InvalidValue {
            what: "constraint manifold",
            detail: "no Euclidean position factor".into(),
        })?;
        let dim = block.len();
        let check = |what: &'static str, len: usize| -> Result<()> {
            if len != dim {
                return Err(Error::DimensionMismatch { context: what, expected: dim, got: len });
            }
            Ok(())
        };
        match self {
            Constraint::ReachSphere { center, radius } => {
                check("sphere center", center.len())?;
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidValue { what: "sphere radius", detail: format!("{radius}") });
                }
            }
            Constraint::HalfSpace { point, normal, .. } => {
                check("plane point", point.len())?;
                check("plane normal", normal.len())?;
                if normal.iter().map(|x| x * x).sum::<f64>() <= 0.0 {
                    return Err(Error::InvalidValue { what: "plane normal", detail: "zero".into() });
                }
            }
            Constraint::HalfSpaceSet { halves, .. } => {
                for h in halves {
                    check("plane point", h.point.len())?;
                    check("plane normal", h.normal.len())?;
                    if h.normal.iter().map(|x| x * x).sum::<f64>() <= 0.0 {
                        return Err(Error::InvalidValue { what: "plane normal", detail: "zero".into() });
                    }
                }
            }
            Constraint::SelfCollision { center, .. } => check("keep-out center", center.len())?,
            Constraint::Occupancy { grid, .. } => {
                if dim < 3 {
                    return Err(Error::DimensionMismatch {
                        context: "occupancy position factor",
                        expected: 3,
                        got: dim,
                    });
                }
                let expect = grid.dims[0] * grid.dims[1] * grid.dims[2];
                if grid.values.len() != expect {
                    return Err(Error::DimensionMismatch {
                        context: "occupancy values",
                        expected: expect,
                        got: grid.values.len(),
                    });
                }
            }
            Constraint::Custom(_) => {}
        }
        Ok(())
    }

    /// Membership test. Built-in kinds read the position factor.
    pub fn member(&self, point: &ManifoldPoint) -> bool {
        if let Constraint::Custom(f) = self {
            return f(point.coords());
        }
        let block = match point.spec().position_block() {
            Some(b) => b,
            None => return false,
        };
        let x = &point.coords().as_slice()[block];
        match self {
            Constraint::ReachSphere { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() <= *radius
            }
            Constraint::HalfSpace { point: p, normal, d_safe } => {
                plane_margin(x, p, normal) >= *d_safe
            }
            Constraint::HalfSpaceSet { halves, d_safe, .. } => halves
                .iter()
                .all(|h| plane_margin(x, &h.point, &h.normal) >= *d_safe),
            Constraint::SelfCollision { center, d_min } => {
                let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= *d_min
            }
            Constraint::Occupancy { grid, tau } => grid.value_at(x) < *tau,
            Constraint::Custom(_) => unreachable!(),
        }
    }
}

/// Ambient and tangent coordinate ranges of the position factor.
fn position_ranges(spec: &ManifoldSpec) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    spec.blocks()
        .find(|(f, _, _)| matches!(f, crate::manifold::Factor::Euclidean(_)))
        .map(|(_, ar, tr)| (ar, tr))
        .ok_or(Error::InvalidValue {
            what: "constraint manifold",
            detail: "no Euclidean position factor".into(),
        })
}

/// Does the z-sigma confidence region around a step mean reach into the
/// constraint set? Convex kinds get closed forms over the per-axis box;
/// the rest fall back to testing the mean plus a fixed batch of points
/// drawn deterministically inside the box.
pub fn ci_intersects(
    mean: &ManifoldPoint,
    var: &DVector<f64>,
    constraint: &Constraint,
    z: f64,
) -> Result<bool> {
    constraint.validate_for(mean.spec())?;
    match constraint {
        Constraint::ReachSphere { center, radius } => {
            let (ar, tr) = position_ranges(mean.spec())?;
            let x = &mean.coords().as_slice()[ar];
            let mut d2 = 0.0;
            for (i, ti) in tr.enumerate() {
                let gap = (x[i] - center[i]).abs() - z * var[ti].sqrt();
                if gap > 0.0 {
                    d2 += gap * gap;
                }
            }
            Ok(d2.sqrt() <= *radius)
        }
        Constraint::HalfSpace { point, normal, d_safe } => {
            Ok(half_space_ci(mean, var, point, normal, *d_safe, z)?)
        }
        Constraint::HalfSpaceSet { halves, d_safe, .. } => {
            for h in halves {
                if !half_space_ci(mean, var, &h.point, &h.normal, *d_safe, z)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        _ => {
            if constraint.member(mean) {
                return Ok(true);
            }
            let dim = mean.spec().tangent_dim();
            let mut r = rng::rng(rng::derive_named(0x1c5, "ci-box-probe"));
            let mut v = DVector::zeros(dim);
            for _ in 0..1024 {
                for i in 0..dim {
                    let u: f64 = r.gen_range(-1.0..1.0);
                    v[i] = u * z * var[i].sqrt();
                }
                if constraint.member(&exp_map_coords(mean, &v)?) {
                    return Ok(true);
                }
            }
            Ok(false)
        }
    }
}

fn half_space_ci(
    mean: &ManifoldPoint,
    var: &DVector<f64>,
    point: &[f64],
    normal: &[f64],
    d_safe: f64,
    z: f64,
) -> Result<bool> {
    let (ar, tr) = position_ranges(mean.spec())?;
    let x = &mean.coords().as_slice()[ar];
    let n = unit(normal);
    let margin: f64 = x.iter().zip(point).zip(&n).map(|((x, p), n)| (x - p) * n).sum();
    let sigma_n: f64 = n
        .iter()
        .zip(tr)
        .map(|(ni, ti)| ni * ni * var[ti])
        .sum::<f64>()
        .sqrt();
    Ok(margin - d_safe >= -z * sigma_n)
}

/// Result of truncating one step's Gaussian by a constraint.
#[derive(Clone, Debug)]
pub struct StepTruncation {
    /// Fraction of samples inside the constraint set.
    pub p_keep: f64,
    pub kept: usize,
    /// Moment-matched mean and variance of the kept samples; `None` when
    /// fewer than two samples survive.
    pub posterior: Option<(ManifoldPoint, DVector<f64>)>,
}

fn draw_members(
    mean: &ManifoldPoint,
    var: &DVector<f64>,
    constraint: &Constraint,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ManifoldPoint>> {
    let dim = mean.spec().tangent_dim();
    let mut kept = Vec::new();
    let mut v = DVector::zeros(dim);
    for _ in 0..n_samples {
        for i in 0..dim {
            let g: f64 = rng.sample(StandardNormal);
            v[i] = g * var[i].sqrt();
        }
        let candidate = exp_map_coords(mean, &v)?;
        if constraint.member(&candidate) {
            kept.push(candidate);
        }
    }
    Ok(kept)
}

/// Monte Carlo moment matching of one step against a constraint: sample the
/// step Gaussian, keep members, and refit a diagonal Gaussian to them.
pub fn moment_match(
    mean: &ManifoldPoint,
    var: &DVector<f64>,
    constraint: &Constraint,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<StepTruncation> {
    if n_samples == 0 {
        return Err(Error::InvalidValue { what: "sample count", detail: "0".into() });
    }
    let kept = draw_members(mean, var, constraint, n_samples, rng)?;
    let p_keep = kept.len() as f64 / n_samples as f64;
    if kept.len() < 2 {
        return Ok(StepTruncation { p_keep, kept: kept.len(), posterior: None });
    }
    let post_mean = frechet_mean(&kept, &FrechetOptions::default())?;
    let dim = mean.spec().tangent_dim();
    let mut post_var = DVector::zeros(dim);
    for p in &kept {
        let l = log_map(&post_mean, p)?;
        for i in 0..dim {
            post_var[i] += l.coords[i] * l.coords[i];
        }
    }
    post_var /= (kept.len() - 1) as f64;
    for v in post_var.iter_mut() {
        if *v < VARIANCE_FLOOR {
            *v = VARIANCE_FLOOR;
        }
    }
    Ok(StepTruncation { p_keep, kept: kept.len(), posterior: Some((post_mean, post_var)) })
}

/// How per-step keep probabilities aggregate into a mode weight factor.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LqNorm {
    /// `(mean of p^q)^(1/q)`.
    Power(f64),
    /// Most permissive step dominates.
    Max,
}

impl LqNorm {
    fn aggregate(self, p: &[f64]) -> f64 {
        match self {
            LqNorm::Power(q) => {
                let m = p.iter().map(|x| x.powf(q)).sum::<f64>() / p.len() as f64;
                m.powf(1.0 / q)
            }
            LqNorm::Max => p.iter().cloned().fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug)]
pub struct UpdateOptions {
    /// Confidence half-width, in standard deviations, for the feasibility
    /// prefilter.
    pub z: f64,
    pub q: LqNorm,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        Self { z: 1.96, q: LqNorm::Power(1.0), n_samples: 1000, seed: 0 }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ModeUpdate {
    pub prior_before: f64,
    pub prior_after: f64,
    /// Zeroed because some step's confidence region misses the set.
    pub zeroed_by_ci: bool,
    /// Zeroed because sampling found a step with (nearly) no members.
    pub zeroed_by_sampling: bool,
    pub p_keep: Vec<f64>,
    pub weight_factor: f64,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct UpdateReport {
    pub per_mode: Vec<ModeUpdate>,
}

/// Condition a mixture on a convex constraint. Modes whose confidence tube
/// leaves the set at any step are zeroed outright; surviving modes get each
/// step's Gaussian moment matched to the truncated distribution and their
/// weight scaled by the aggregated keep probability.
///
/// Each step draws its samples from a stream seeded only by `(seed, t)`, so
/// every mode sees the same standard normal draws at step t. Tightening a
/// constraint can then only shrink the kept set.
pub fn apply_convex(
    mixture: &GpMixture,
    constraint: &Constraint,
    opts: &UpdateOptions,
) -> Result<(GpMixture, UpdateReport)> {
    if !constraint.is_convex() {
        return Err(Error::InvalidValue {
            what: "constraint",
            detail: format!(
                "{} is not convex; use the modal update",
                constraint.kind_name()
            ),
        });
    }
    constraint.validate_for(mixture.spec())?;
    let t_len = mixture.len();
    let mut new_modes = Vec::with_capacity(mixture.n_modes());
    let mut report = Vec::with_capacity(mixture.n_modes());

    for mode in mixture.modes() {
        let prior = mode.prior;
        if prior <= 0.0 {
            new_modes.push(mode.clone());
            report.push(ModeUpdate {
                prior_before: prior,
                prior_after: 0.0,
                zeroed_by_ci: false,
                zeroed_by_sampling: false,
                p_keep: Vec::new(),
                weight_factor: 0.0,
            });
            continue;
        }
        let model = &mode.model;
        let mut zeroed_by_ci = false;
        for t in 0..t_len {
            if !ci_intersects(model.mean(t), model.var(t), constraint, opts.z)? {
                zeroed_by_ci = true;
                break;
            }
        }
        if zeroed_by_ci {
            new_modes.push(Mode { prior: 0.0, model: model.clone() });
            report.push(ModeUpdate {
                prior_before: prior,
                prior_after: 0.0,
                zeroed_by_ci: true,
                zeroed_by_sampling: false,
                p_keep: Vec::new(),
                weight_factor: 0.0,
            });
            continue;
        }

        let mut p_keep = Vec::with_capacity(t_len);
        let mut means = Vec::with_capacity(t_len);
        let mut vars = Vec::with_capacity(t_len);
        let mut zeroed_by_sampling = false;
        for t in 0..t_len {
            let mut r = rng::rng(rng::derive(opts.seed, t as u64));
            let st = moment_match(model.mean(t), model.var(t), constraint, opts.n_samples, &mut r)?;
            p_keep.push(st.p_keep);
            match st.posterior {
                Some((m, v)) => {
                    means.push(m);
                    vars.push(v);
                }
                None => {
                    zeroed_by_sampling = true;
                    break;
                }
            }
        }
        if zeroed_by_sampling {
            new_modes.push(Mode { prior: 0.0, model: model.clone() });
            report.push(ModeUpdate {
                prior_before: prior,
                prior_after: 0.0,
                zeroed_by_ci: false,
                zeroed_by_sampling: true,
                p_keep,
                weight_factor: 0.0,
            });
            continue;
        }
        let factor = opts.q.aggregate(&p_keep);
        let updated = DiscreteGp::from_parts(means, vars, model.sample_rate_hz())?;
        new_modes.push(Mode { prior: prior * factor, model: updated });
        report.push(ModeUpdate {
            prior_before: prior,
            prior_after: prior * factor,
            zeroed_by_ci: false,
            zeroed_by_sampling: false,
            p_keep,
            weight_factor: factor,
        });
    }

    finish_update(mixture, new_modes, report, constraint)
}

/// Reweight modes by sampled feasibility without touching their Gaussians.
/// Valid for any constraint kind, and the only sound update for non-convex
/// evidence.
pub fn apply_modal(
    mixture: &GpMixture,
    constraint: &Constraint,
    opts: &UpdateOptions,
) -> Result<(GpMixture, UpdateReport)> {
    constraint.validate_for(mixture.spec())?;
    let t_len = mixture.len();
    let mut new_modes = Vec::with_capacity(mixture.n_modes());
    let mut report = Vec::with_capacity(mixture.n_modes());
    for mode in mixture.modes() {
        let prior = mode.prior;
        if prior <= 0.0 {
            new_modes.push(mode.clone());
            report.push(ModeUpdate {
                prior_before: prior,
                prior_after: 0.0,
                zeroed_by_ci: false,
                zeroed_by_sampling: false,
                p_keep: Vec::new(),
                weight_factor: 0.0,
            });
            continue;
        }
        let model = &mode.model;
        let mut p_keep = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut r = rng::rng(rng::derive(opts.seed, t as u64));
            let kept = draw_members(model.mean(t), model.var(t), constraint, opts.n_samples, &mut r)?;
            p_keep.push(kept.len() as f64 / opts.n_samples as f64);
        }
        let factor = opts.q.aggregate(&p_keep);
        new_modes.push(Mode { prior: prior * factor, model: model.clone() });
        report.push(ModeUpdate {
            prior_before: prior,
            prior_after: prior * factor,
            zeroed_by_ci: false,
            zeroed_by_sampling: false,
            p_keep,
            weight_factor: factor,
        });
    }
    finish_update(mixture, new_modes, report, constraint)
}

fn finish_update(
    mixture: &GpMixture,
    mut new_modes: Vec<Mode>,
    mut report: Vec<ModeUpdate>,
    constraint: &Constraint,
) -> Result<(GpMixture, UpdateReport)> {
    let total: f64 = new_modes.iter().map(|m| m.prior).sum();
    if total <= 0.0 {
        return Err(Error::InfeasibleEvidence {
            detail: format!("no mode is compatible with {} evidence", constraint.kind_name()),
        });
    }
    for (m, r) in new_modes.iter_mut().zip(&mut report) {
        m.prior /= total;
        r.prior_after = m.prior;
    }
    let out = GpMixture::from_modes(new_modes, mixture.provenance.clone())?;
    Ok((out, UpdateReport { per_mode: report }))
}

/// Reweight one mode of one skill inside a chain. Evidence at skill j
/// scales the incoming transition column (or the initial prior when j = 0);
/// predecessor modes left without any continuation are zeroed recursively,
/// then every surviving row is renormalized.
pub fn apply_to_chain(
    chain: &SkillChain,
    skill: usize,
    mode: usize,
    weight: f64,
) -> Result<SkillChain> {
    if skill >= chain.n_skills() {
        return Err(Error::InvalidValue {
            what: "skill index",
            detail: format!("{skill} of {}", chain.n_skills()),
        });
    }
    if mode >= chain.skill(skill).n_modes() {
        return Err(Error::InvalidValue {
            what: "mode index",
            detail: format!("{mode} of {}", chain.skill(skill).n_modes()),
        });
    }
    if !(weight.is_finite() && weight >= 0.0) {
        return Err(Error::InvalidValue { what: "evidence weight", detail: format!("{weight}") });
    }
    let mut out = chain.clone();
    scale_chain_mode(&mut out, skill, mode, weight)?;
    Ok(out)
}

fn scale_chain_mode(chain: &mut SkillChain, skill: usize, mode: usize, weight: f64) -> Result<()> {
    if skill == 0 {
        chain.skills[0].modes[mode].prior *= weight;
        let total: f64 = chain.skills[0].modes.iter().map(|m| m.prior).sum();
        if total <= 0.0 {
            return Err(Error::InfeasibleChain);
        }
        for m in &mut chain.skills[0].modes {
            m.prior /= total;
        }
        return Ok(());
    }
    let junction = skill - 1;
    let nrows = chain.transitions[junction].nrows();
    let before: Vec<f64> = (0..nrows)
        .map(|k| chain.transitions[junction].row(k).iter().sum())
        .collect();
    for k in 0..nrows {
        chain.transitions[junction][(k, mode)] *= weight;
    }
    for k in 0..nrows {
        let after: f64 = chain.transitions[junction].row(k).iter().sum();
        if before[k] > 0.0 && after <= 0.0 {
            scale_chain_mode(chain, skill - 1, k, 0.0)?;
        }
    }
    for k in 0..nrows {
        let sum: f64 = chain.transitions[junction].row(k).iter().sum();
        if sum > 0.0 {
            for l in 0..chain.transitions[junction].ncols() {
                chain.transitions[junction][(k, l)] /= sum;
            }
        }
    }
    Ok(())
}

/// Obstacle spacing slack for [`Constraint::half_space_set`]: twice the
/// largest step deviation of the model along the (unit-normalized)
/// constraint normal.
pub fn suggested_d_uni(model: &DiscreteGp, normal: &[f64]) -> Result<f64> {
    let (_, tr) = position_ranges(model.spec())?;
    if normal.len() != tr.len() {
        return Err(Error::DimensionMismatch {
            context: "constraint normal",
            expected: tr.len(),
            got: normal.len(),
        });
    }
    let n = unit(normal);
    let mut worst: f64 = 0.0;
    for t in 0..model.len() {
        let var = model.var(t);
        let s: f64 = n
            .iter()
            .zip(tr.clone())
            .map(|(ni, ti)| ni * ni * var[ti])
            .sum::<f64>()
            .sqrt();
        worst = worst.max(s);
    }
    Ok(2.0 * worst)
}
