//! Serial-chain kinematics: forward kinematics, geometric and task-error
//! Jacobians, and damped least-squares inverse kinematics with joint limits.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::quat;
use crate::rigid::RigidTransform;

/// One revolute joint: a fixed transform from the parent frame followed by a
/// rotation of `q` about `axis` (unit, in the joint's local frame).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Joint {
    pub axis: [f64; 3],
    pub origin: RigidTransform,
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KinematicChain {
    #[serde(default)]
    pub name: String,
    pub joints: Vec<Joint>,
    pub ee_offset: RigidTransform,
    pub q_home: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ChainFile {
    schema: String,
    version: u32,
    #[serde(flatten)]
    chain: KinematicChain,
}

pub const CHAIN_SCHEMA: &str = "gausstube.chain";

impl KinematicChain {
    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn home(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.q_home)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::Empty { what: "kinematic chain" });
        }
        if self.q_home.len() != self.joints.len() {
            return Err(Error::DimensionMismatch {
                context: "home configuration",
                expected: self.joints.len(),
                got: self.q_home.len(),
            });
        }
        for (i, j) in self.joints.iter().enumerate() {
            let n = (j.axis[0] * j.axis[0] + j.axis[1] * j.axis[1] + j.axis[2] * j.axis[2]).sqrt();
            if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidValue {
                    what: "joint axis",
                    detail: format!("joint {i} axis norm {n}"),
                });
            }
            if !(j.q_min < j.q_max) {
                return Err(Error::InvalidValue {
                    what: "joint limits",
                    detail: format!("joint {i}: [{}, {}]", j.q_min, j.q_max),
                });
            }
            if self.q_home[i] < j.q_min || self.q_home[i] > j.q_max {
                return Err(Error::JointLimit {
                    joint: i,
                    value: self.q_home[i],
                    lo: j.q_min,
                    hi: j.q_max,
                });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ChainFile = serde_json::from_str(text).map_err(|e| Error::Schema {
            path: "<inline chain>".into(),
            detail: e.to_string(),
        })?;
        if file.schema != CHAIN_SCHEMA {
            return Err(Error::Schema {
                path: "<inline chain>".into(),
                detail: format!("schema {:?}, expected {CHAIN_SCHEMA:?}", file.schema),
            });
        }
        file.chain.validate()?;
        Ok(file.chain)
    }

    pub fn to_json(&self) -> String {
        let file = ChainFile { schema: CHAIN_SCHEMA.into(), version: 1, chain: self.clone() };
        serde_json::to_string_pretty(&file).expect("chain serializes")
    }

    pub fn clamp(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            q.len(),
            q.iter().zip(&self.joints).map(|(qi, j)| qi.clamp(j.q_min, j.q_max)),
        )
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.joints.len() {
            return Err(Error::DimensionMismatch {
                context: "joint configuration",
                expected: self.joints.len(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// End-effector pose in the base frame.
    pub fn fk(&self, q: &DVector<f64>) -> Result<RigidTransform> {
        Ok(self.fk_frames(q)?.0)
    }

    /// End-effector pose plus, per joint, its rotation-axis anchor point and
    /// axis direction in the base frame.
    pub fn fk_frames(&self, q: &DVector<f64>) -> Result<(RigidTransform, Vec<(Vector3<f64>, Vector3<f64>)>)> {
        self.check_q(q)?;
        let mut acc = RigidTransform::identity();
        let mut frames = Vec::with_capacity(self.joints.len());
        for (i, j) in self.joints.iter().enumerate() {
            acc = acc.compose(&j.origin);
            let z = quat::rotate(&acc.rotation, &j.axis);
            frames.push((Vector3::from(acc.translation), Vector3::from(z)));
            let spin = quat::exp(&[j.axis[0] * q[i], j.axis[1] * q[i], j.axis[2] * q[i]]);
            acc = acc.compose(&RigidTransform { translation: [0.0; 3], rotation: spin });
        }
        Ok((acc.compose(&self.ee_offset), frames))
    }

    /// Geometric Jacobian (6 x n): rows 0..3 map joint rates to end-effector
    /// linear velocity, rows 3..6 to angular velocity, both in the base frame.
    pub fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (ee, frames) = self.fk_frames(q)?;
        let p_ee = Vector3::from(ee.translation);
        let mut j = DMatrix::zeros(6, self.joints.len());
        for (i, (o, z)) in frames.iter().enumerate() {
            let lin = z.cross(&(p_ee - o));
            for r in 0..3 {
                j[(r, i)] = lin[r];
                j[(r + 3, i)] = z[r];
            }
        }
        Ok(j)
    }

    /// Task-space error of a configuration against a target pose:
    /// `[target position - ee position; rotation vector of target^-1 * ee]`.
    /// The rotation part lives in the target's frame, matching orientation
    /// deviations measured in the tangent space at a model mean.
    pub fn pose_error(&self, q: &DVector<f64>, target: &RigidTransform) -> Result<DVector<f64>> {
        let ee = self.fk(q)?;
        Ok(pose_error_of(&ee, target))
    }

    /// Jacobian of [`pose_error`](Self::pose_error) with respect to q (6 x n).
    pub fn error_jacobian(&self, q: &DVector<f64>, target: &RigidTransform) -> Result<DMatrix<f64>> {
        let (ee, frames) = self.fk_frames(q)?;
        let p_ee = Vector3::from(ee.translation);
        let e = pose_error_of(&ee, target);
        let phi = Vector3::new(e[3], e[4], e[5]);
        let jr_inv = inverse_right_jacobian(&phi);
        let ee_inv_rot = quat::conjugate(&ee.rotation);
        let mut out = DMatrix::zeros(6, self.joints.len());
        for (i, (o, z)) in frames.iter().enumerate() {
            let lin = z.cross(&(p_ee - o));
            for r in 0..3 {
                out[(r, i)] = -lin[r];
            }
            let body = quat::rotate(&ee_inv_rot, &[z[0], z[1], z[2]]);
            let col = jr_inv * Vector3::from(body);
            for r in 0..3 {
                out[(r + 3, i)] = col[r];
            }
        }
        Ok(out)
    }
}

fn pose_error_of(ee: &RigidTransform, target: &RigidTransform) -> DVector<f64> {
    let rel = quat::canonical(&quat::normalize(&quat::mul(
        &quat::conjugate(&target.rotation),
        &ee.rotation,
    )));
    let phi = quat::log(&rel);
    DVector::from_vec(vec![
        target.translation[0] - ee.translation[0],
        target.translation[1] - ee.translation[1],
        target.translation[2] - ee.translation[2],
        phi[0],
        phi[1],
        phi[2],
    ])
}

fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Exact inverse of the right Jacobian of the rotation-vector chart.
fn inverse_right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let h = hat(phi);
    let c = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + 0.5 * h + c * (h * h)
}

#[derive(Clone, Debug)]
pub struct IkOptions {
    /// Stop when the weighted cost `e' W e / 2` drops below this.
    pub tol_cost: f64,
    pub max_iter: usize,
    /// Initial Levenberg-Marquardt damping.
    pub damping: f64,
    /// Diagonal task weights (6 entries); `None` means all ones.
    pub weights: Option<DVector<f64>>,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self { tol_cost: 1e-16, max_iter: 200, damping: 1e-6, weights: None }
    }
}

/// Damped least-squares inverse kinematics, clamped to joint limits.
/// Non-convergence reports the best iterate found and its cost.
pub fn ik_solve(
    chain: &KinematicChain,
    target: &RigidTransform,
    q0: &DVector<f64>,
    opts: &IkOptions,
) -> Result<DVector<f64>> {
    let n = chain.n_joints();
    if q0.len() != n {
        return Err(Error::DimensionMismatch { context: "initial configuration", expected: n, got: q0.len() });
    }
    let w = match &opts.weights {
        Some(w) => {
            if w.len() != 6 {
                return Err(Error::DimensionMismatch { context: "task weights", expected: 6, got: w.len() });
            }
            w.clone()
        }
        None => DVector::repeat(6, 1.0),
    };
    let cost_of = |e: &DVector<f64>| 0.5 * e.iter().zip(w.iter()).map(|(e, w)| w * e * e).sum::<f64>();

    let mut q = chain.clamp(q0);
    let mut e = chain.pose_error(&q, target)?;
    let mut cost = cost_of(&e);
    let mut best_q = q.clone();
    let mut best_cost = cost;
    let mut lambda = opts.damping;

    for iter in 0..opts.max_iter {
        if cost < opts.tol_cost {
            return Ok(q);
        }
        let jac = chain.error_jacobian(&q, target)?;
        let mut jtw = jac.transpose();
        for (c, wi) in w.iter().enumerate() {
            for r in 0..n {
                jtw[(r, c)] *= wi;
            }
        }
        let g = &jtw * &e;
        let h = &jtw * &jac;
        let mut accepted = false;
        for _ in 0..12 {
            let damped = &h + DMatrix::identity(n, n) * lambda;
            let step = match nalgebra::Cholesky::new(damped) {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let q_new = chain.clamp(&(&q + &step));
            let e_new = chain.pose_error(&q_new, target)?;
            let cost_new = cost_of(&e_new);
            if cost_new < cost {
                q = q_new;
                e = e_new;
                cost = cost_new;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if cost < best_cost {
            best_cost = cost;
            best_q = q.clone();
        }
        if !accepted {
            return Err(Error::IkNonConvergence { cost: best_cost, iterations: iter + 1, iterate: best_q });
        }
    }
    if cost < opts.tol_cost {
        return Ok(q);
    }
    Err(Error::IkNonConvergence { cost: best_cost, iterations: opts.max_iter, iterate: best_q })
}

/// Three-joint planar arm (all axes z), links 0.4 / 0.35 / 0.25.
pub fn planar3() -> KinematicChain {
    KinematicChain::from_json(include_str!("../assets/chains/planar3.chain")).expect("built-in chain")
}

/// Generic 6-DoF arm with a pan-lift-elbow shoulder and a 3-axis wrist.
pub fn arm6() -> KinematicChain {
    KinematicChain::from_json(include_str!("../assets/chains/arm6.chain")).expect("built-in chain")
}

/// Generic 7-DoF arm with alternating roll/pitch joints.
pub fn arm7() -> KinematicChain {
    KinematicChain::from_json(include_str!("../assets/chains/arm7.chain")).expect("built-in chain")
}
