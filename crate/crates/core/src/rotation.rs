//! Roll/pitch/yaw conversions for the orientation part of a pose.
//!
//! Angles follow the Z-Y-X convention: `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;
/// Below this horizontal norm of the first column the pitch is treated as ±π/2.
const GIMBAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    /// Checks orthonormality and a positive unit determinant.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rotation matrix"));
        }
        let gram = m.transpose() * m - Matrix3::identity();
        let off = gram.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if off > ORTHONORMAL_TOL {
            return Err(Error::NotRotation(format!(
                "columns deviate from orthonormal by {off:e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::NotRotation(format!("determinant {det}")));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let r = self.0 * Vector3::new(v[0], v[1], v[2]);
        [r.x, r.y, r.z]
    }
}

pub fn rpy_to_rotation(roll: f64, pitch: f64, yaw: f64) -> RotationMatrix {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    #[rustfmt::skip]
    let m = Matrix3::new(
        cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
        sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
        -sp,     cp * sr,                cp * cr,
    );
    RotationMatrix(m)
}

/// Inverse of [`rpy_to_rotation`]. At gimbal lock roll is fixed to zero
/// and yaw absorbs the free angle.
pub fn rotation_to_rpy(m: &RotationMatrix) -> (f64, f64, f64) {
    let r = m.matrix();
    let horiz = (r[(0, 0)] * r[(0, 0)] + r[(1, 0)] * r[(1, 0)]).sqrt();
    let pitch = (-r[(2, 0)]).atan2(horiz);
    if horiz < GIMBAL_TOL {
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
        return (0.0, pitch, yaw);
    }
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    (roll, pitch, yaw)
}

/// Checked variant of [`rotation_to_rpy`] for raw matrices.
pub fn matrix_to_rpy(m: Matrix3<f64>) -> Result<(f64, f64, f64)> {
    Ok(rotation_to_rpy(&RotationMatrix::new(m)?))
}
