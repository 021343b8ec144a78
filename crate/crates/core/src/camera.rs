//! Pinhole camera model, 3D box geometry and ray/plane depth recovery.
//!
//! Frames follow the KITTI camera convention: x right, y down, z forward.
//! A box location is the center of its bottom face, so the bottom face lies
//! in the plane `y = location.y`.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum homogeneous depth accepted by [`CameraModel::project_points`].
pub const MIN_DEPTH: f64 = 1e-6;

/// Rays whose unit direction has a smaller dot product with the plane normal
/// are treated as parallel to the plane.
pub const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point {row} has non-positive depth {depth}")]
    NonPositiveDepth { row: usize, depth: f64 },
    #[error("camera matrix has a singular left 3x3 block")]
    SingularCamera,
    #[error("camera matrix contains non-finite entries")]
    NonFiniteCamera,
    #[error("no unique solution: ray is parallel to the plane")]
    ParallelRay,
    #[error("ray meets the plane behind the camera (t = {t})")]
    BehindCamera { t: f64 },
    #[error("plane normal must be non-zero and finite")]
    DegeneratePlane,
}

/// Projective camera described by a 3x4 matrix `P = K [R | t]`.
///
/// KITTI `P2` matrices carry a small translation column; the pure `K` form is
/// the zero-translation special case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    p: Matrix3x4<f64>,
}

impl CameraModel {
    pub fn from_matrix(p: Matrix3x4<f64>) -> Result<Self, GeometryError> {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFiniteCamera);
        }
        let m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
        if m.determinant().abs() < 1e-12 {
            return Err(GeometryError::SingularCamera);
        }
        Ok(Self { p })
    }

    /// Build from 12 row-major entries, as stored in KITTI calibration files.
    pub fn from_row_major(values: &[f64; 12]) -> Result<Self, GeometryError> {
        Self::from_matrix(Matrix3x4::from_row_slice(values))
    }

    /// Zero-skew intrinsics with square pixels and no translation.
    pub fn from_intrinsics(f: f64, cu: f64, cv: f64) -> Result<Self, GeometryError> {
        Self::from_row_major(&[f, 0.0, cu, 0.0, 0.0, f, cv, 0.0, 0.0, 0.0, 1.0, 0.0])
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.p
    }

    pub fn row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                out[r * 4 + c] = self.p[(r, c)];
            }
        }
        out
    }

    /// Focal length in pixels.
    pub fn f(&self) -> f64 {
        self.p[(0, 0)]
    }

    pub fn cu(&self) -> f64 {
        self.p[(0, 2)]
    }

    pub fn cv(&self) -> f64 {
        self.p[(1, 2)]
    }

    /// Project a single camera-frame point to `(u, v, z)`.
    ///
    /// `z` is the depth of the input point; the homogeneous third coordinate is
    /// only used for the perspective division.
    pub fn project(&self, point: &Vector3<f64>) -> Result<[f64; 3], GeometryError> {
        self.project_row(point, 0)
    }

    fn project_row(&self, point: &Vector3<f64>, row: usize) -> Result<[f64; 3], GeometryError> {
        let h = self.p * Vector4::new(point.x, point.y, point.z, 1.0);
        if !(h.z > MIN_DEPTH) || !(point.z > MIN_DEPTH) {
            return Err(GeometryError::NonPositiveDepth {
                row,
                depth: point.z.min(h.z),
            });
        }
        Ok([h.x / h.z, h.y / h.z, point.z])
    }

    /// Project N points; the error names the first offending row.
    pub fn project_points(&self, points: &[Vector3<f64>]) -> Result<Vec<[f64; 3]>, GeometryError> {
        points
            .iter()
            .enumerate()
            .map(|(row, p)| self.project_row(p, row))
            .collect()
    }

    /// Optical center and (unnormalized) viewing direction of a pixel.
    pub fn pixel_ray(&self, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        let m: Matrix3<f64> = self.p.fixed_view::<3, 3>(0, 0).into_owned();
        let t = self.p.column(3).into_owned();
        // Invertibility is checked on construction.
        let m_inv = m.try_inverse().expect("camera block is invertible");
        let center = -(m_inv * t);
        let dir = m_inv * Vector3::new(u, v, 1.0);
        (center, dir)
    }

    /// Point on the ray through `(u, v)` at camera-frame depth `z`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        let (center, dir) = self.pixel_ray(u, v);
        let t = (z - center.z) / dir.z;
        center + dir * t
    }

    /// Intersection of the ray through pixel `(u, v)` with `plane`.
    pub fn ray_plane_point(
        &self,
        u: f64,
        v: f64,
        plane: &Plane3D,
    ) -> Result<Vector3<f64>, GeometryError> {
        let (normal, offset) = plane.normal_offset()?;
        let (center, dir) = self.pixel_ray(u, v);
        let unit = dir.normalize();
        let denom = unit.dot(&normal);
        if denom.abs() <= PARALLEL_EPS {
            return Err(GeometryError::ParallelRay);
        }
        let t = (offset - normal.dot(&center)) / denom;
        if !(t > 0.0) {
            return Err(GeometryError::BehindCamera { t });
        }
        Ok(center + unit * t)
    }

    /// Depth of the ray/plane intersection for pixel `(u, v)`.
    pub fn ray_plane_depth(&self, u: f64, v: f64, plane: &Plane3D) -> Result<f64, GeometryError> {
        self.ray_plane_point(u, v, plane).map(|p| p.z)
    }
}

/// A plane in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Plane3D {
    /// Horizontal plane `y = y0` (y points down, so a camera 1.65 m above the
    /// road sees the ground at `y0 = 1.65`).
    FixedHeight { y0: f64 },
    /// `normal · p = offset` with a unit normal.
    General { normal: [f64; 3], offset: f64 },
}

impl Default for Plane3D {
    fn default() -> Self {
        Plane3D::FixedHeight { y0: 1.65 }
    }
}

impl Plane3D {
    /// Build a general plane, normalizing the normal.
    pub fn general(normal: [f64; 3], offset: f64) -> Result<Self, GeometryError> {
        let n = Vector3::from(normal);
        let len = n.norm();
        if !(len.is_finite() && len > 0.0) || !offset.is_finite() {
            return Err(GeometryError::DegeneratePlane);
        }
        let n = n / len;
        Ok(Plane3D::General {
            normal: [n.x, n.y, n.z],
            offset: offset / len,
        })
    }

    pub fn normal_offset(&self) -> Result<(Vector3<f64>, f64), GeometryError> {
        match *self {
            Plane3D::FixedHeight { y0 } => Ok((Vector3::y(), y0)),
            Plane3D::General { normal, offset } => {
                let n = Vector3::from(normal);
                if ((n.norm() - 1.0).abs() > 1e-9) || !offset.is_finite() {
                    return Err(GeometryError::DegeneratePlane);
                }
                Ok((n, offset))
            }
        }
    }

    /// Signed distance of `p` from the plane along its normal.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> Result<f64, GeometryError> {
        let (n, d) = self.normal_offset()?;
        Ok(n.dot(p) - d)
    }
}

/// A 3D bounding box resting on the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox3D {
    /// Bottom-face center (x, y, z) in meters.
    pub location: [f64; 3],
    /// (h, w, l) in meters.
    pub dims: [f64; 3],
    /// Rotation about the camera y axis, radians.
    pub yaw: f64,
}

impl ObjectBox3D {
    pub fn new(location: [f64; 3], dims: [f64; 3], yaw: f64) -> Self {
        Self {
            location,
            dims,
            yaw,
        }
    }

    pub fn height(&self) -> f64 {
        self.dims[0]
    }

    pub fn width(&self) -> f64 {
        self.dims[1]
    }

    pub fn length(&self) -> f64 {
        self.dims[2]
    }

    pub fn is_valid(&self) -> bool {
        self.dims.iter().all(|d| d.is_finite() && *d > 0.0)
            && self.location.iter().all(|c| c.is_finite())
            && self.yaw.is_finite()
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// The plane containing the bottom face.
    pub fn bottom_plane(&self) -> Plane3D {
        Plane3D::FixedHeight {
            y0: self.location[1],
        }
    }

    /// Bottom corners k1..k4.
    ///
    /// Local (length, width) offsets are (+l/2, +w/2), (-l/2, +w/2),
    /// (-l/2, -w/2), (+l/2, -w/2), rotated by yaw about y and translated.
    /// (k1, k3) and (k2, k4) are the diagonals. k3 is built as
    /// `(k2 - k1) + k4` so the parallelogram identity holds bit-exactly.
    pub fn bottom_corners(&self) -> [Vector3<f64>; 4] {
        let [x, y, z] = self.location;
        let (hl, hw) = (self.length() / 2.0, self.width() / 2.0);
        let (s, c) = self.yaw.sin_cos();
        let corner = |dl: f64, dw: f64| Vector3::new(x + c * dl + s * dw, y, z - s * dl + c * dw);
        let k1 = corner(hl, hw);
        let k2 = corner(-hl, hw);
        let k4 = corner(hl, -hw);
        let k3 = (k2 - k1) + k4;
        [k1, k2, k3, k4]
    }

    /// All eight vertices: bottom k1..k4 followed by the top corners k5..k8,
    /// where `k(i+4) = k(i) - (0, h, 0)`.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let b = self.bottom_corners();
        let up = Vector3::new(0.0, self.height(), 0.0);
        [b[0], b[1], b[2], b[3], b[0] - up, b[1] - up, b[2] - up, b[3] - up]
    }

    pub fn bottom_center(&self) -> Vector3<f64> {
        Vector3::from(self.location)
    }

    pub fn top_center(&self) -> Vector3<f64> {
        self.bottom_center() - Vector3::new(0.0, self.height(), 0.0)
    }

    /// Geometric center of the box.
    pub fn center(&self) -> Vector3<f64> {
        self.bottom_center() - Vector3::new(0.0, self.height() / 2.0, 0.0)
    }

    /// Bird's-eye footprint in the (x, z) plane, counter-clockwise.
    pub fn bev_polygon(&self) -> [[f64; 2]; 4] {
        self.bottom_corners().map(|k| [k.x, k.z])
    }

    /// Vertical extent `[y_top, y_bottom]` (y points down).
    pub fn y_interval(&self) -> (f64, f64) {
        (self.location[1] - self.height(), self.location[1])
    }
}

/// Shoelace area of a simple polygon (positive for counter-clockwise order).
pub fn signed_polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cam() -> CameraModel {
        CameraModel::from_intrinsics(700.0, 600.0, 180.0).unwrap()
    }

    fn close(a: &Vector3<f64>, b: [f64; 3], tol: f64) -> bool {
        (a.x - b[0]).abs() < tol && (a.y - b[1]).abs() < tol && (a.z - b[2]).abs() < tol
    }

    #[test]
    fn corners_yaw_zero() {
        let b = ObjectBox3D::new([2.0, 1.65, 10.0], [1.5, 1.6, 4.0], 0.0);
        let k = b.bottom_corners();
        assert!(close(&k[0], [4.0, 1.65, 10.8], 1e-12));
        assert!(close(&k[1], [0.0, 1.65, 10.8], 1e-12));
        assert!(close(&k[2], [0.0, 1.65, 9.2], 1e-12));
        assert!(close(&k[3], [4.0, 1.65, 9.2], 1e-12));
    }

    #[test]
    fn corners_yaw_quarter_turn() {
        let b = ObjectBox3D::new([0.0, 1.65, 10.0], [1.5, 1.6, 4.0], FRAC_PI_2);
        let k = b.bottom_corners();
        // length axis maps onto -z
        assert!(close(&k[0], [0.8, 1.65, 8.0], 1e-12));
        assert!(close(&k[1], [0.8, 1.65, 12.0], 1e-12));
        assert!(close(&k[2], [-0.8, 1.65, 12.0], 1e-12));
        assert!(close(&k[3], [-0.8, 1.65, 8.0], 1e-12));
    }

    #[test]
    fn corners_mean_is_location_and_parallelogram_exact() {
        let b = ObjectBox3D::new([-3.3, 1.71, 23.9], [1.4, 1.7, 4.3], 0.731);
        let k = b.bottom_corners();
        let mean = (k[0] + k[1] + k[2] + k[3]) / 4.0;
        assert!(close(&mean, b.location, 1e-12));
        assert_eq!(k[2], (k[1] - k[0]) + k[3]);
        assert!(k.iter().all(|p| p.y == 1.71));
    }

    #[test]
    fn projection_examples() {
        let c = cam();
        assert_eq!(c.project(&Vector3::new(0.0, 0.0, 10.0)).unwrap(), [600.0, 180.0, 10.0]);
        let p = c.project(&Vector3::new(3.5, 0.0, 7.0)).unwrap();
        assert!((p[0] - 950.0).abs() < 1e-9 && (p[1] - 180.0).abs() < 1e-12 && p[2] == 7.0);
        let p = c.project(&Vector3::new(0.0, 1.65, 10.0)).unwrap();
        assert!((p[0] - 600.0).abs() < 1e-12 && (p[1] - 295.5).abs() < 1e-9);
    }

    #[test]
    fn projection_rejects_points_behind() {
        let c = cam();
        let pts = [Vector3::new(0.0, 0.0, 5.0), Vector3::new(1.0, 0.0, -2.0)];
        assert_eq!(
            c.project_points(&pts).unwrap_err(),
            GeometryError::NonPositiveDepth { row: 1, depth: -2.0 }
        );
    }

    #[test]
    fn projection_is_scale_invariant() {
        let c = cam();
        let scaled = CameraModel::from_matrix(c.matrix() * 3.7).unwrap();
        let p = Vector3::new(1.3, -0.4, 17.0);
        let a = c.project(&p).unwrap();
        let b = scaled.project(&p).unwrap();
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn ray_plane_examples() {
        let c = cam();
        let ground = Plane3D::FixedHeight { y0: 1.65 };
        let z = c.ray_plane_depth(600.0, 295.5, &ground).unwrap();
        assert!((z - 10.0).abs() < 1e-12);
        assert_eq!(
            c.ray_plane_depth(600.0, 180.0, &ground).unwrap_err(),
            GeometryError::ParallelRay
        );
        // above the horizon the ground is behind the camera
        assert!(matches!(
            c.ray_plane_depth(600.0, 100.0, &ground),
            Err(GeometryError::BehindCamera { .. })
        ));
    }

    #[test]
    fn ray_plane_with_translated_camera() {
        let c = CameraModel::from_row_major(&[
            721.5377, 0.0, 609.5593, 44.85728, 0.0, 721.5377, 172.854, 0.2163791, 0.0, 0.0, 1.0,
            0.002745884,
        ])
        .unwrap();
        let b = ObjectBox3D::new([-0.65, 1.71, 46.7], [1.65, 1.67, 3.64], -1.59);
        for k in b.bottom_corners() {
            let [u, v, _] = c.project(&k).unwrap();
            let back = c.ray_plane_point(u, v, &b.bottom_plane()).unwrap();
            assert!((back - k).norm() < 1e-9 * k.norm());
        }
    }

    #[test]
    fn general_plane_matches_fixed_height() {
        let c = cam();
        let a = Plane3D::FixedHeight { y0: 1.65 };
        let b = Plane3D::general([0.0, 2.0, 0.0], 3.3).unwrap();
        let za = c.ray_plane_depth(640.0, 250.0, &a).unwrap();
        let zb = c.ray_plane_depth(640.0, 250.0, &b).unwrap();
        assert!((za - zb).abs() < 1e-12);
        assert!(Plane3D::general([0.0, 0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn backproject_inverts_projection() {
        let c = cam();
        let p = Vector3::new(-2.0, 1.2, 31.0);
        let [u, v, z] = c.project(&p).unwrap();
        assert!((c.backproject(u, v, z) - p).norm() < 1e-9);
    }

    #[test]
    fn bev_polygon_properties() {
        let b0 = ObjectBox3D::new([1.0, 1.65, 12.0], [1.5, 1.6, 4.0], 0.0);
        let poly = b0.bev_polygon();
        assert!((signed_polygon_area(&poly) - 6.4).abs() < 1e-12);
        let xs: Vec<f64> = poly.iter().map(|p| p[0]).collect();
        assert!(xs.iter().all(|x| (x - 3.0).abs() < 1e-12 || (x + 1.0).abs() < 1e-12));

        let b1 = ObjectBox3D { yaw: PI, ..b0 };
        let p1 = b1.bev_polygon();
        for v in &poly {
            assert!(p1
                .iter()
                .any(|w| (w[0] - v[0]).abs() < 1e-12 && (w[1] - v[1]).abs() < 1e-12));
        }
        for yaw in [-2.9, -1.0, 0.3, 1.7, 3.1] {
            let b = ObjectBox3D { yaw, ..b0 };
            assert!((signed_polygon_area(&b.bev_polygon()) - 6.4).abs() < 1e-12);
        }
    }
}
