use serde::{Deserialize, Serialize};

use super::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance for orthonormality and unit determinant of a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Proper rigid motion `p' = R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T> {
    rotation: [[T; 3]; 3],
    translation: [T; 3],
}

impl<T: Scalar> RigidTransform<T> {
    /// Validates `R·Rᵀ = I` and `det R = 1` within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: [[T; 3]; 3], translation: [T; 3]) -> Result<Self> {
        let r: [[f64; 3]; 3] = rotation.map(|row| row.map(|v| v.as_f64()));
        if rotation.iter().flatten().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > ROTATION_TOLERANCE {
                    return Err(Error::InvalidTransform(format!(
                        "R·Rᵀ[{i}][{j}] = {dot}, not orthonormal"
                    )));
                }
            }
        }
        let det = det3(&r);
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidTransform(format!("det(R) = {det}")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            rotation: [[o, z, z], [z, o, z], [z, z, o]],
            translation: [z; 3],
        }
    }

    pub fn translation(t: [T; 3]) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation about the z axis by `angle` radians.
    pub fn yaw(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self {
            rotation: [[c, -s, z], [s, c, z], [z, z, o]],
            translation: [z; 3],
        }
    }

    pub fn rotation(&self) -> &[[T; 3]; 3] {
        &self.rotation
    }

    pub fn translation_vector(&self) -> &[T; 3] {
        &self.translation
    }

    #[inline]
    pub fn apply(&self, p: [T; 3]) -> [T; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// `(R, t)⁻¹ = (Rᵀ, −Rᵀ·t)`.
    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = &self.translation;
        let neg = |i: usize| -(rt[i][0] * t[0] + rt[i][1] * t[1] + rt[i][2] * t[2]);
        Self {
            rotation: rt,
            translation: [neg(0), neg(1), neg(2)],
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let a = &self.rotation;
        let b = &other.rotation;
        let mut rotation = [[T::zero(); 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Self {
            rotation,
            translation: self.apply(other.translation),
        }
    }

    /// 4×4 homogeneous matrix, bottom row `(0,0,0,1)`.
    pub fn to_homogeneous(&self) -> [[T; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        let (o, z) = (T::one(), T::zero());
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [z, z, z, o],
        ]
    }
}

fn det3(r: &[[f64; 3]; 3]) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

/// Maps every point through `t`; intensity and order are kept.
pub fn apply_transform<T: Scalar>(cloud: &PointCloud<T>, t: &RigidTransform<T>) -> PointCloud<T> {
    cloud.map_points(|p| {
        let [x, y, z] = t.apply(p.xyz());
        Point::new(x, y, z, p.intensity)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlipAxis {
    X,
    Y,
    XY,
}

/// Mirrors the cloud: `X` negates x, `Y` negates y, `XY` negates both.
pub fn flip<T: Scalar>(cloud: &PointCloud<T>, axis: FlipAxis) -> PointCloud<T> {
    let (fx, fy) = match axis {
        FlipAxis::X => (true, false),
        FlipAxis::Y => (false, true),
        FlipAxis::XY => (true, true),
    };
    cloud.map_points(|p| Point {
        x: if fx { -p.x } else { p.x },
        y: if fy { -p.y } else { p.y },
        ..*p
    })
}

/// Rotates about the z axis; z and intensity are untouched.
pub fn yaw_rotate<T: Scalar>(cloud: &PointCloud<T>, angle: T) -> PointCloud<T> {
    if angle == T::zero() {
        return cloud.clone();
    }
    let (s, c) = angle.sin_cos();
    cloud.map_points(|p| Point {
        x: c * p.x - s * p.y,
        y: s * p.x + c * p.y,
        ..*p
    })
}
