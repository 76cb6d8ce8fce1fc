//! Pinhole camera model and posed RGB-D frames.
//!
//! Pixel `(col, row)` corresponds to image coordinates `u = [col, row]`, so
//! the ray through a pixel is `K⁻¹ [col, row, 1]ᵀ` in the camera frame
//! (x right, y down, z forward).

use nalgebra::{Isometry3, Matrix3, Matrix4, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid(format!("focal lengths must be positive: {self:?}")));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid(format!("principal point must be finite: {self:?}")));
        }
        Ok(())
    }

    /// Camera-frame point at depth `z` along the ray through pixel `(col, row)`.
    pub fn back_project(&self, col: f64, row: f64, z: f64) -> Point3<f64> {
        Point3::new((col - self.cx) / self.fx * z, (row - self.cy) / self.fy * z, z)
    }

    /// Pixel coordinates of a camera-frame point, `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Convert a 4×4 homogeneous matrix into a rigid transform, rejecting
/// matrices whose rotation block is not orthonormal with determinant +1.
pub fn rigid_from_matrix(m: &Matrix4<f64>) -> Result<Isometry3<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("pose contains non-finite values"));
    }
    let bottom = m.fixed_view::<1, 4>(3, 0);
    if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > 1e-9 {
        return Err(Error::invalid("pose bottom row must be [0 0 0 1]"));
    }
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    if ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("pose rotation is not orthonormal with determinant +1"));
    }
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = Translation3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
    Ok(Isometry3::from_parts(t, rotation))
}

/// A posed RGB-D frame. Depth is in meters with 0 marking invalid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraFrame {
    pub intrinsics: Intrinsics,
    /// Camera-to-world transform.
    pub pose: Isometry3<f64>,
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub color: Vec<[u8; 3]>,
}

impl CameraFrame {
    pub fn new(
        intrinsics: Intrinsics,
        pose: Isometry3<f64>,
        width: usize,
        height: usize,
        depth: Vec<f32>,
        color: Vec<[u8; 3]>,
    ) -> Result<Self> {
        let frame = CameraFrame {
            intrinsics,
            pose,
            width,
            height,
            depth,
            color,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let n = self.width * self.height;
        if self.depth.len() != n {
            return Err(Error::DimensionMismatch {
                what: "depth image",
                expected: (self.width, self.height),
                found: (self.depth.len(), 1),
            });
        }
        if self.color.len() != n {
            return Err(Error::DimensionMismatch {
                what: "color image",
                expected: (self.width, self.height),
                found: (self.color.len(), 1),
            });
        }
        if let Some(d) = self.depth.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::invalid(format!("depth must be finite and non-negative, found {d}")));
        }
        rigid_from_matrix(&self.pose.to_homogeneous()).map(|_| ())
    }

    pub fn sensor_origin(&self) -> Point3<f64> {
        Point3::from(self.pose.translation.vector)
    }

    /// World point `T K⁻¹ D(u) [u, 1]ᵀ` for pixel `(col, row)`, `None` for invalid depth.
    pub fn back_project(&self, col: usize, row: usize) -> Option<Point3<f64>> {
        let d = self.depth[row * self.width + col];
        (d > 0.0).then(|| self.pose * self.intrinsics.back_project(col as f64, row as f64, d as f64))
    }

    pub fn ray_direction(&self, col: usize, row: usize) -> Vector3<f64> {
        let p = self.intrinsics.back_project(col as f64, row as f64, 1.0);
        (self.pose.rotation * p.coords).normalize()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intrinsics() -> Intrinsics {
        Intrinsics { fx: 50.0, fy: 50.0, cx: 20.0, cy: 15.0 }
    }

    #[test]
    fn project_inverts_back_project() {
        let k = intrinsics();
        let p = k.back_project(7.0, 3.0, 2.5);
        let (u, v) = k.project(&p).unwrap();
        assert!((u - 7.0).abs() < 1e-12 && (v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_rigid_pose() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = 2.0;
        assert!(rigid_from_matrix(&m).is_err());
        let mut m = Matrix4::identity();
        m[(2, 2)] = -1.0;
        assert!(rigid_from_matrix(&m).is_err(), "reflection must be rejected");
        let iso = Isometry3::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.1, -0.4, 0.2));
        let back = rigid_from_matrix(&iso.to_homogeneous()).unwrap();
        assert!((back.to_homogeneous() - iso.to_homogeneous()).abs().max() < 1e-12);
    }

    #[test]
    fn frame_dimension_checks() {
        let err = CameraFrame::new(intrinsics(), Isometry3::identity(), 4, 3, vec![1.0; 11], vec![[0; 3]; 12]);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        let err = CameraFrame::new(intrinsics(), Isometry3::identity(), 2, 1, vec![-1.0, 1.0], vec![[0; 3]; 2]);
        assert!(err.is_err());
    }
}
