//! Rigid transforms (SE(3)), used for task frames and joint origins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::quat;

/// Rotation followed by translation; quaternion stored `w, x, y, z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { translation: [0.0; 3], rotation: quat::IDENTITY }
    }

    pub fn new(translation: [f64; 3], rotation: [f64; 4]) -> Result<Self> {
        let n = quat::norm(&rotation);
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(Error::NonUnitQuaternion { norm: n });
        }
        Ok(Self { translation, rotation: quat::normalize(&rotation) })
    }

    pub fn from_translation(translation: [f64; 3]) -> Self {
        Self { translation, rotation: quat::IDENTITY }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            translation: add3(&quat::rotate(&self.rotation, &other.translation), &self.translation),
            rotation: quat::normalize(&quat::mul(&self.rotation, &other.rotation)),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv_rot = quat::conjugate(&self.rotation);
        let t = quat::rotate(&inv_rot, &self.translation);
        RigidTransform { translation: [-t[0], -t[1], -t[2]], rotation: inv_rot }
    }

    pub fn transform_point(&self, p: &[f64; 3]) -> [f64; 3] {
        add3(&quat::rotate(&self.rotation, p), &self.translation)
    }

    /// Left-multiply an orientation by this transform's rotation.
    pub fn transform_orientation(&self, q: &[f64]) -> [f64; 4] {
        quat::canonical(&quat::normalize(&quat::mul(&self.rotation, q)))
    }

    /// Row `i` of the rotation matrix, for variance propagation.
    pub fn rotation_row(&self, i: usize) -> [f64; 3] {
        let e = |k: usize| {
            let mut v = [0.0; 3];
            v[k] = 1.0;
            quat::rotate(&self.rotation, &v)
        };
        let cols = [e(0), e(1), e(2)];
        [cols[0][i], cols[1][i], cols[2][i]]
    }
}

fn add3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
