//! Product manifolds of Euclidean blocks and unit quaternions.
//!
//! Every state handled by this crate lives on a product manifold
//! `R^{n1} x S3 x R^{n2} x ...`: free Euclidean coordinates plus unit
//! quaternions for 3D orientation. Poses use `R3 x S3`. All statistics are
//! computed in tangent space via the log/exp maps below; there is no
//! parallel transport anywhere — tangent vectors are always used at the
//! point where they were taken, which is exact for the per-step statistics
//! this crate needs.
//!
//! Conventions, fixed once and relied on by serialization and tests:
//! * quaternion storage order is `w, x, y, z`;
//! * outputs are sign-canonical (`w >= 0`, ties broken on the first nonzero
//!   component) so that equal rotations serialize to equal bytes;
//! * the quaternion log/exp use rotation vectors: `log` of a rotation by
//!   angle θ about unit axis u is `θ·u`, so geodesic distance between two
//!   orientations equals their relative rotation angle in `[0, π]`.

use nalgebra::DVector;
use serde::de::Error as _;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};

/// One factor of a product manifold.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Factor {
    /// Flat block of `n` unconstrained coordinates.
    Euclidean(usize),
    /// Unit quaternion (3D orientation), stored as `w, x, y, z`.
    UnitQuaternion,
}

impl Factor {
    pub fn ambient_dim(self) -> usize {
        match self {
            Factor::Euclidean(n) => n,
            Factor::UnitQuaternion => 4,
        }
    }

    pub fn tangent_dim(self) -> usize {
        match self {
            Factor::Euclidean(n) => n,
            Factor::UnitQuaternion => 3,
        }
    }
}

/// Shape of a product manifold: an ordered list of factors.
///
/// Cheap to clone (shared storage); two specs are equal iff their factor
/// lists are equal.
#[derive(Clone, Debug)]
pub struct ManifoldSpec {
    factors: Arc<[Factor]>,
}

impl PartialEq for ManifoldSpec {
    fn eq(&self, other: &Self) -> bool {
        self.factors == other.factors
    }
}
impl Eq for ManifoldSpec {}

impl ManifoldSpec {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Empty { what: "manifold factor list" });
        }
        for f in &factors {
            if let Factor::Euclidean(0) = f {
                return Err(Error::InvalidValue {
                    what: "manifold factor",
                    detail: "Euclidean factor of dimension 0".into(),
                });
            }
        }
        Ok(Self { factors: factors.into() })
    }

    /// `R^n`.
    pub fn euclidean(n: usize) -> Self {
        Self::new(vec![Factor::Euclidean(n)]).expect("n >= 1")
    }

    /// The pose manifold `R3 x S3`.
    pub fn pose() -> Self {
        Self::new(vec![Factor::Euclidean(3), Factor::UnitQuaternion]).expect("static")
    }

    /// `R3 x S3 x R^aux` — a pose plus trailing scalar channels
    /// (e.g. gripper state). `aux = 0` gives the plain pose manifold.
    pub fn pose_with_aux(aux: usize) -> Self {
        let mut f = vec![Factor::Euclidean(3), Factor::UnitQuaternion];
        if aux > 0 {
            f.push(Factor::Euclidean(aux));
        }
        Self::new(f).expect("static")
    }

    /// The product `M^k` of this manifold with itself, used to vectorize
    /// whole trajectories into single points.
    pub fn power(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidValue {
                what: "manifold power",
                detail: "k must be >= 1".into(),
            });
        }
        let mut f = Vec::with_capacity(self.factors.len() * k);
        for _ in 0..k {
            f.extend_from_slice(&self.factors);
        }
        Self::new(f)
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn ambient_dim(&self) -> usize {
        self.factors.iter().map(|f| f.ambient_dim()).sum()
    }

    pub fn tangent_dim(&self) -> usize {
        self.factors.iter().map(|f| f.tangent_dim()).sum()
    }

    /// Iterate factors with their ambient and tangent coordinate ranges.
    pub fn blocks(&self) -> impl Iterator<Item = (Factor, std::ops::Range<usize>, std::ops::Range<usize>)> + '_ {
        let mut a = 0;
        let mut t = 0;
        self.factors.iter().map(move |&f| {
            let ar = a..a + f.ambient_dim();
            let tr = t..t + f.tangent_dim();
            a = ar.end;
            t = tr.end;
            (f, ar, tr)
        })
    }

    /// Ambient coordinate range of the first Euclidean factor, if any.
    /// Constraints treat this block as "position".
    pub fn position_block(&self) -> Option<std::ops::Range<usize>> {
        self.blocks()
            .find(|(f, _, _)| matches!(f, Factor::Euclidean(_)))
            .map(|(_, ar, _)| ar)
    }
}

impl fmt::Display for ManifoldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, factor) in self.factors.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            match factor {
                Factor::Euclidean(n) => write!(f, "R{n}")?,
                Factor::UnitQuaternion => write!(f, "S3")?,
            }
        }
        Ok(())
    }
}

impl FromStr for ManifoldSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut factors = Vec::new();
        for part in s.split('x') {
            let part = part.trim();
            if part == "S3" {
                factors.push(Factor::UnitQuaternion);
            } else if let Some(n) = part.strip_prefix('R') {
                let n: usize = n.parse().map_err(|_| Error::InvalidValue {
                    what: "manifold spec string",
                    detail: format!("bad factor {part:?}"),
                })?;
                factors.push(Factor::Euclidean(n));
            } else {
                return Err(Error::InvalidValue {
                    what: "manifold spec string",
                    detail: format!("bad factor {part:?}"),
                });
            }
        }
        Self::new(factors)
    }
}

impl serde::Serialize for ManifoldSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for ManifoldSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Quaternion block operations on `[w, x, y, z]` arrays.
///
/// Hand-rolled rather than delegated so the storage order and the
/// rotation-vector log/exp convention stay pinned in one place.
pub mod quat {
    pub const IDENTITY: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
    }

    pub fn norm(q: &[f64]) -> f64 {
        dot(q, q).sqrt()
    }

    pub fn conjugate(q: &[f64]) -> [f64; 4] {
        [q[0], -q[1], -q[2], -q[3]]
    }

    /// Hamilton product a ⊗ b.
    pub fn mul(a: &[f64], b: &[f64]) -> [f64; 4] {
        [
            a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
        ]
    }

    pub fn normalize(q: &[f64]) -> [f64; 4] {
        let n = norm(q);
        [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
    }

    /// Flip sign so that `w >= 0`; on `w == 0` the first nonzero component
    /// is made positive. Both signs represent the same rotation; picking one
    /// makes serialization deterministic.
    pub fn canonical(q: &[f64]) -> [f64; 4] {
        let flip = if q[0] != 0.0 {
            q[0] < 0.0
        } else {
            match q[1..].iter().find(|c| **c != 0.0) {
                Some(c) => *c < 0.0,
                None => false,
            }
        };
        if flip {
            [-q[0], -q[1], -q[2], -q[3]]
        } else {
            [q[0], q[1], q[2], q[3]]
        }
    }

    /// Rotation vector (angle·axis) of a unit quaternion; inverse of [`exp`].
    /// The caller must have resolved the sign so that `w >= 0`, otherwise the
    /// returned angle exceeds π.
    pub fn log(q: &[f64]) -> [f64; 3] {
        let vn = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if vn < 1e-300 {
            return [0.0, 0.0, 0.0];
        }
        let angle = 2.0 * vn.atan2(q[0]);
        let s = angle / vn;
        [q[1] * s, q[2] * s, q[3] * s]
    }

    /// Unit quaternion for a rotation vector (angle·axis).
    pub fn exp(v: &[f64]) -> [f64; 4] {
        let angle = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let half = 0.5 * angle;
        // sin(θ/2)/θ, series below ~1e-8 where the quotient loses digits
        let s = if angle < 1e-8 {
            0.5 - angle * angle / 48.0
        } else {
            half.sin() / angle
        };
        [half.cos(), v[0] * s, v[1] * s, v[2] * s]
    }

    /// Rotate a 3-vector by a unit quaternion: q v q⁻¹.
    pub fn rotate(q: &[f64], v: &[f64; 3]) -> [f64; 3] {
        let u = [q[1], q[2], q[3]];
        let t = [
            2.0 * (u[1] * v[2] - u[2] * v[1]),
            2.0 * (u[2] * v[0] - u[0] * v[2]),
            2.0 * (u[0] * v[1] - u[1] * v[0]),
        ];
        [
            v[0] + q[0] * t[0] + u[1] * t[2] - u[2] * t[1],
            v[1] + q[0] * t[1] + u[2] * t[0] - u[0] * t[2],
            v[2] + q[0] * t[2] + u[0] * t[1] - u[1] * t[0],
        ]
    }

    /// Rotation about z by `angle` radians.
    pub fn about_z(angle: f64) -> [f64; 4] {
        [(angle / 2.0).cos(), 0.0, 0.0, (angle / 2.0).sin()]
    }
}

/// Quaternion blocks whose dot product is smaller than this (after sign
/// resolution) sit on the cut locus: a 180-degree relative rotation whose
/// axis sign is ambiguous, so the log map has no unique value.
const ANTIPODAL_TOL: f64 = 1e-12;

/// Tolerance for rejecting off-sphere quaternion input outright; anything
/// closer to unit norm is silently renormalized.
const UNIT_NORM_TOL: f64 = 1e-6;

/// A point on a product manifold.
///
/// Quaternion blocks are normalized and sign-canonicalized on construction,
/// so two points representing the same state have identical coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldPoint {
    spec: ManifoldSpec,
    coords: DVector<f64>,
}

impl ManifoldPoint {
    pub fn new(spec: ManifoldSpec, coords: DVector<f64>) -> Result<Self> {
        if coords.len() != spec.ambient_dim() {
            return Err(Error::DimensionMismatch {
                context: "manifold point coordinates",
                expected: spec.ambient_dim(),
                got: coords.len(),
            });
        }
        let mut coords = coords;
        for (f, ar, _) in spec.blocks() {
            if f == Factor::UnitQuaternion {
                let block = coords.as_slice()[ar.clone()].to_vec();
                let n = quat::norm(&block);
                if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::NonUnitQuaternion { norm: n });
                }
                // skip the division when already unit so construction is
                // idempotent at the bit level
                let q = if (n - 1.0).abs() <= 16.0 * f64::EPSILON {
                    quat::canonical(&block)
                } else {
                    quat::canonical(&quat::normalize(&block))
                };
                coords.as_mut_slice()[ar].copy_from_slice(&q);
            }
        }
        Ok(Self { spec, coords })
    }

    /// Pose-manifold point from a position and a `w,x,y,z` quaternion.
    pub fn pose(position: [f64; 3], orientation: [f64; 4]) -> Result<Self> {
        let mut c = Vec::with_capacity(7);
        c.extend_from_slice(&position);
        c.extend_from_slice(&orientation);
        Self::new(ManifoldSpec::pose(), DVector::from_vec(c))
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    /// Coordinates of the first Euclidean factor (the position block).
    pub fn position(&self) -> &[f64] {
        match self.spec.position_block() {
            Some(r) => &self.coords.as_slice()[r],
            None => &[],
        }
    }

    /// Concatenate points into one point on the product of their manifolds.
    pub fn concat(points: &[ManifoldPoint]) -> Result<ManifoldPoint> {
        let first = points.first().ok_or(Error::Empty { what: "point list" })?;
        let spec = first.spec.power(points.len())?;
        let mut coords = Vec::with_capacity(spec.ambient_dim());
        for p in points {
            if p.spec != first.spec {
                return Err(spec_mismatch(&first.spec, &p.spec));
            }
            coords.extend_from_slice(p.coords.as_slice());
        }
        ManifoldPoint::new(spec, DVector::from_vec(coords))
    }
}

/// A tangent vector anchored at a base point. Coordinates are stacked per
/// factor: Euclidean blocks keep their dimension, quaternion blocks
/// contribute a 3D rotation vector.
#[derive(Clone, Debug)]
pub struct TangentVector {
    pub base: ManifoldPoint,
    pub coords: DVector<f64>,
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        self.coords.norm()
    }
}

fn spec_mismatch(expected: &ManifoldSpec, got: &ManifoldSpec) -> Error {
    Error::SpecMismatch {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

/// Log map: the tangent vector at `base` pointing along the geodesic to `p`,
/// with norm equal to the geodesic distance.
///
/// Quaternion blocks of `p` are sign-resolved against `base` first (the two
/// lifts of a rotation are equivalent), then mapped through the rotation
/// log. Errors with [`Error::AntipodalQuaternion`] if a block pair sits on
/// the cut locus (exact 180-degree relative rotation).
pub fn log_map(base: &ManifoldPoint, p: &ManifoldPoint) -> Result<TangentVector> {
    if base.spec != p.spec {
        return Err(spec_mismatch(&base.spec, &p.spec));
    }
    let mut out = DVector::zeros(base.spec.tangent_dim());
    for (f, ar, tr) in base.spec.blocks() {
        let b = &base.coords.as_slice()[ar.clone()];
        let q = &p.coords.as_slice()[ar];
        match f {
            Factor::Euclidean(_) => {
                for (o, (pi, bi)) in out.as_mut_slice()[tr].iter_mut().zip(q.iter().zip(b)) {
                    *o = pi - bi;
                }
            }
            Factor::UnitQuaternion => {
                let d = quat::dot(b, q);
                if d.abs() < ANTIPODAL_TOL {
                    return Err(Error::AntipodalQuaternion);
                }
                let qq = if d < 0.0 { [-q[0], -q[1], -q[2], -q[3]] } else { [q[0], q[1], q[2], q[3]] };
                let rel = quat::mul(&quat::conjugate(b), &qq);
                let v = quat::log(&quat::normalize(&rel));
                out.as_mut_slice()[tr].copy_from_slice(&v);
            }
        }
    }
    Ok(TangentVector { base: base.clone(), coords: out })
}

/// Exp map: follow the geodesic from `base` along `v` for unit time.
/// Inverse of [`log_map`] on its domain.
pub fn exp_map(base: &ManifoldPoint, v: &TangentVector) -> Result<ManifoldPoint> {
    if v.base.spec != base.spec || v.base.coords != base.coords {
        return Err(Error::InvalidValue {
            what: "tangent vector",
            detail: "anchored at a different base point".into(),
        });
    }
    exp_map_coords(base, &v.coords)
}

/// Exp map taking raw tangent coordinates at `base`.
pub fn exp_map_coords(base: &ManifoldPoint, v: &DVector<f64>) -> Result<ManifoldPoint> {
    if v.len() != base.spec.tangent_dim() {
        return Err(Error::DimensionMismatch {
            context: "tangent coordinates",
            expected: base.spec.tangent_dim(),
            got: v.len(),
        });
    }
    let mut coords = base.coords.clone();
    for (f, ar, tr) in base.spec.blocks() {
        match f {
            Factor::Euclidean(_) => {
                for (c, vi) in coords.as_mut_slice()[ar].iter_mut().zip(&v.as_slice()[tr]) {
                    *c += vi;
                }
            }
            Factor::UnitQuaternion => {
                let b = &base.coords.as_slice()[ar.clone()];
                let step: [f64; 3] = v.as_slice()[tr].try_into().expect("3d block");
                let q = quat::mul(b, &quat::exp(&step));
                let q = quat::canonical(&quat::normalize(&q));
                coords.as_mut_slice()[ar].copy_from_slice(&q);
            }
        }
    }
    // Blocks already normalized; bypass re-validation.
    Ok(ManifoldPoint { spec: base.spec.clone(), coords })
}

/// Geodesic distance; equals the norm of `log_map(a, b)` but is defined
/// everywhere, including antipodal quaternion pairs (distance π there).
pub fn geodesic_distance(a: &ManifoldPoint, b: &ManifoldPoint) -> Result<f64> {
    if a.spec != b.spec {
        return Err(spec_mismatch(&a.spec, &b.spec));
    }
    let mut sq = 0.0;
    for (f, ar, _) in a.spec.blocks() {
        let x = &a.coords.as_slice()[ar.clone()];
        let y = &b.coords.as_slice()[ar];
        match f {
            Factor::Euclidean(_) => {
                sq += x.iter().zip(y).map(|(xi, yi)| (xi - yi) * (xi - yi)).sum::<f64>();
            }
            Factor::UnitQuaternion => {
                let d = quat::dot(x, y);
                let yy = if d < 0.0 { [-y[0], -y[1], -y[2], -y[3]] } else { [y[0], y[1], y[2], y[3]] };
                let rel = quat::mul(&quat::conjugate(x), &yy);
                let vn = (rel[1] * rel[1] + rel[2] * rel[2] + rel[3] * rel[3]).sqrt();
                let angle = 2.0 * vn.atan2(rel[0].abs());
                sq += angle * angle;
            }
        }
    }
    Ok(sq.sqrt())
}

/// Point a fraction `alpha` of the way along the geodesic from `a` to `b`.
pub fn interpolate(a: &ManifoldPoint, b: &ManifoldPoint, alpha: f64) -> Result<ManifoldPoint> {
    if alpha == 0.0 {
        return Ok(a.clone());
    }
    let v = log_map(a, b)?;
    exp_map_coords(a, &(v.coords * alpha))
}

#[derive(Clone, Copy, Debug)]
pub struct FrechetOptions {
    /// Convergence threshold on the norm of the mean tangent step.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FrechetOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100 }
    }
}

/// Fréchet mean: the point minimizing the sum of squared geodesic distances.
///
/// Fixed-point iteration `mu <- exp(mu, mean of log(mu, x_i))`, initialized
/// at the first point. Identical inputs return after one iteration. On
/// non-convergence the error carries the last iterate.
pub fn frechet_mean(points: &[ManifoldPoint], opts: &FrechetOptions) -> Result<ManifoldPoint> {
    frechet_mean_weighted(points, None, opts)
}

/// [`frechet_mean`] with optional nonnegative weights (used by soft
/// clustering). Weights must carry positive total mass.
pub fn frechet_mean_weighted(
    points: &[ManifoldPoint],
    weights: Option<&[f64]>,
    opts: &FrechetOptions,
) -> Result<ManifoldPoint> {
    let first = points.first().ok_or(Error::Empty { what: "point list" })?;
    if let Some(w) = weights {
        if w.len() != points.len() {
            return Err(Error::DimensionMismatch {
                context: "frechet weights",
                expected: points.len(),
                got: w.len(),
            });
        }
        if w.iter().any(|wi| *wi < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidValue {
                what: "frechet weights",
                detail: "weights must be nonnegative with positive total".into(),
            });
        }
    }
    let total: f64 = match weights {
        Some(w) => w.iter().sum(),
        None => points.len() as f64,
    };
    let mut mu = first.clone();
    let mut residual = f64::INFINITY;
    for _iter in 0..opts.max_iter {
        let mut step = DVector::zeros(mu.spec.tangent_dim());
        for (i, p) in points.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            step.axpy(w, &log_map(&mu, p)?.coords, 1.0);
        }
        step /= total;
        residual = step.norm();
        if residual < opts.tol {
            return Ok(mu);
        }
        mu = exp_map_coords(&mu, &step)?;
    }
    Err(Error::FrechetNonConvergence {
        iterations: opts.max_iter,
        residual,
        last: Box::new(mu),
    })
}
