//! Core geometric types: calibrated cameras, sparse point clouds, surface
//! meshes, and the projection / triangulation-uncertainty math shared by
//! every other module.

use std::collections::HashMap;
use std::path::PathBuf;

use nalgebra::{Matrix2x3, Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CameraId = u32;
pub type ClusterId = u32;
pub type TriangleId = u32;

/// Calibrated pinhole view: world->camera rotation plus projection center.
#[derive(Debug, Clone)]
pub struct Camera {
    pub id: CameraId,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World->camera rotation, orthonormal with det +1.
    pub rotation: Matrix3<f64>,
    /// Projection center in world frame, meters.
    pub center: Point3<f64>,
    pub width: u32,
    pub height: u32,
    pub image_path: Option<PathBuf>,
}

impl Camera {
    /// Camera at `center` with the optical axis aimed at `target`.
    pub fn look_at(
        id: CameraId,
        center: Point3<f64>,
        target: Point3<f64>,
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
    ) -> Camera {
        let fwd = (target - center).normalize();
        let mut up = Vector3::new(0.0, 1.0, 0.0);
        if fwd.cross(&up).norm() < 1e-6 {
            up = Vector3::new(1.0, 0.0, 0.0);
        }
        let right = up.cross(&fwd).normalize();
        let down = fwd.cross(&right).normalize();
        // rows are the camera axes expressed in world coordinates
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        Camera {
            id,
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            center,
            width,
            height,
            image_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gram = self.rotation.transpose() * self.rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev >= 1e-9 {
            return Err(Error::invariant(
                format!("camera {}", self.id),
                format!("rotation not orthonormal (|R'R - I| = {dev:.3e})"),
            ));
        }
        if self.rotation.determinant() < 0.0 {
            return Err(Error::invariant(
                format!("camera {}", self.id),
                "rotation has negative determinant",
            ));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invariant(
                format!("camera {}", self.id),
                "focal length must be positive",
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invariant(
                format!("camera {}", self.id),
                "image size must be positive",
            ));
        }
        Ok(())
    }

    /// World point expressed in the camera frame.
    pub fn camera_coords(&self, point: &Point3<f64>) -> Vector3<f64> {
        self.rotation * (point - self.center)
    }

    /// Pinhole projection x = K[R | -RC]X. `None` means the point lies at or
    /// behind the camera plane (depth <= 0).
    pub fn project(&self, point: &Point3<f64>) -> Option<Point2<f64>> {
        let p = self.camera_coords(point);
        if p.z <= 0.0 {
            return None;
        }
        Some(Point2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn in_bounds(&self, px: &Point2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }

    /// 2x3 Jacobian of the projection with respect to the world point.
    /// `None` when the point has non-positive depth.
    pub fn projection_jacobian(&self, point: &Point3<f64>) -> Option<Matrix2x3<f64>> {
        let p = self.camera_coords(point);
        if p.z <= 0.0 {
            return None;
        }
        let r0 = self.rotation.row(0);
        let r1 = self.rotation.row(1);
        let r2 = self.rotation.row(2);
        let inv_z2 = 1.0 / (p.z * p.z);
        let du = (r0 * p.z - r2 * p.x) * (self.fx * inv_z2);
        let dv = (r1 * p.z - r2 * p.y) * (self.fy * inv_z2);
        Some(Matrix2x3::from_rows(&[du, dv]))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparsePoint {
    pub position: Point3<f64>,
    pub track: Vec<CameraId>,
}

#[derive(Debug, Clone, Default)]
pub struct SparsePointCloud {
    pub points: Vec<SparsePoint>,
}

impl SparsePointCloud {
    pub fn validate(&self, cameras: &[Camera]) -> Result<()> {
        let ids: std::collections::HashSet<CameraId> = cameras.iter().map(|c| c.id).collect();
        for (i, p) in self.points.iter().enumerate() {
            if p.track.len() < 2 {
                return Err(Error::invariant(
                    format!("sparse point {i}"),
                    "track has fewer than 2 cameras",
                ));
            }
            for cam in &p.track {
                if !ids.contains(cam) {
                    return Err(Error::invariant(
                        format!("sparse point {i}"),
                        format!("track references unknown camera id {cam}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

pub const DEGENERATE_AREA: f64 = 1e-12;

/// Indexed triangle mesh.
#[derive(Debug, Clone, Default)]
pub struct SurfaceMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl SurfaceMesh {
    pub fn triangle_vertices(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn centroid(&self, t: usize) -> Point3<f64> {
        let [a, b, c] = self.triangle_vertices(t);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    /// Unit normal from the winding order; zero vector for degenerate faces.
    pub fn normal(&self, t: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle_vertices(t);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vector3::zeros()
        }
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        triangle_area(&a, &b, &c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    /// Unique undirected edge lengths.
    pub fn edge_lengths(&self) -> Vec<f64> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for tri in &self.triangles {
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                let (a, b) = (tri[i].min(tri[j]), tri[i].max(tri[j]));
                if seen.insert((a, b)) {
                    out.push((self.vertices[a as usize] - self.vertices[b as usize]).norm());
                }
            }
        }
        out
    }

    pub fn bounding_diameter(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (hi - lo).norm()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(Error::invariant(
                    format!("triangle {t}"),
                    "vertex index out of range",
                ));
            }
            if self.area(t) <= DEGENERATE_AREA {
                return Err(Error::invariant(
                    format!("triangle {t}"),
                    "degenerate triangle (area below 1e-12 m^2)",
                ));
            }
        }
        Ok(())
    }

    /// Drop degenerate faces, keeping vertex order intact.
    pub fn without_degenerate(mut self) -> Self {
        let mut keep = Vec::with_capacity(self.triangles.len());
        for t in 0..self.triangles.len() {
            if self.area(t) > DEGENERATE_AREA {
                keep.push(self.triangles[t]);
            }
        }
        self.triangles = keep;
        self
    }
}

pub fn triangle_area(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Per-triangle cache filled in by the preprocessing stages.
#[derive(Debug, Clone, Default)]
pub struct TrianglePatch {
    pub centroid: Point3<f64>,
    pub normal: Vector3<f64>,
    pub area3d: f64,
    /// Sorted ids of cameras with an unoccluded line of sight.
    pub visible_cameras: Vec<CameraId>,
    /// Per visible camera, 9 angle-binned unary match probabilities.
    pub unary_confidence: HashMap<CameraId, [f64; 9]>,
    /// max over selected clusters of `cluster_fulfillment`.
    pub current_fulfillment: f64,
    pub cluster_fulfillment: HashMap<ClusterId, f64>,
}

impl TrianglePatch {
    pub fn sees(&self, cam: CameraId) -> bool {
        self.visible_cameras.binary_search(&cam).is_ok()
    }
}

pub fn build_patches(mesh: &SurfaceMesh) -> Vec<TrianglePatch> {
    (0..mesh.triangles.len())
        .map(|t| TrianglePatch {
            centroid: mesh.centroid(t),
            normal: mesh.normal(t),
            area3d: mesh.area(t),
            ..Default::default()
        })
        .collect()
}

/// Quality targets and sampling parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct QualityConfig {
    /// Desired ground sampling distance, meters per pixel.
    pub gsd_desired: f64,
    /// Desired 3D accuracy, meters.
    pub accuracy_desired: f64,
    /// Weight between resolution and uncertainty fulfillment.
    pub alpha: f64,
    /// Minimum observing cameras for a triangle to count (x).
    pub min_cameras: usize,
    /// Matching partners per key view (k).
    pub partners: usize,
    /// Candidate pool size: top-n most connected images.
    pub top_connected: usize,
    /// Combinations drawn per key view (y).
    pub combinations: usize,
    /// Triangle sampling fraction denominator (z).
    pub triangle_fraction: usize,
    /// Simplification edge-length factor (r).
    pub simplify_factor: f64,
    /// Subdivision edge-length factor (e).
    pub subdivide_factor: f64,
    /// Isotropic image measurement noise, pixels.
    pub pixel_noise: f64,
    pub rng_seed: u64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            gsd_desired: 0.01,
            accuracy_desired: 0.01,
            alpha: 0.5,
            min_cameras: 3,
            partners: 5,
            top_connected: 22,
            combinations: 100,
            triangle_fraction: 10,
            simplify_factor: 20.0,
            subdivide_factor: 100.0,
            pixel_noise: 1.0,
            rng_seed: 0,
        }
    }
}

impl QualityConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.gsd_desired <= 0.0 {
            return err("gsd_desired must be > 0");
        }
        if self.accuracy_desired <= 0.0 {
            return err("accuracy_desired must be > 0");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return err("alpha must be in [0,1]");
        }
        if self.min_cameras < 2 {
            return err("min_cameras must be >= 2");
        }
        if self.partners < 2 {
            return err("partners must be >= 2");
        }
        if self.partners > self.top_connected {
            return err("partners must be <= top_connected");
        }
        if self.combinations < 1 {
            return err("combinations must be >= 1");
        }
        if self.triangle_fraction < 1 {
            return err("triangle_fraction must be >= 1");
        }
        if self.pixel_noise <= 0.0 {
            return err("pixel_noise must be > 0");
        }
        Ok(())
    }
}

/// Estimated resolution of a triangle in a camera, px/m^2: projected 2D area
/// divided by 3D area. Zero if any vertex falls behind the camera.
pub fn estimate_resolution(camera: &Camera, vertices: &[Point3<f64>; 3], area3d: f64) -> f64 {
    let mut px = [Point2::origin(); 3];
    for (i, v) in vertices.iter().enumerate() {
        match camera.project(v) {
            Some(p) => px[i] = p,
            None => return 0.0,
        }
    }
    let area2d = 0.5
        * ((px[1].x - px[0].x) * (px[2].y - px[0].y)
            - (px[2].x - px[0].x) * (px[1].y - px[0].y))
            .abs();
    if area3d <= 0.0 {
        return 0.0;
    }
    area2d / area3d
}

const CONDITION_LIMIT: f64 = 1e12;

/// First-order forward-intersection uncertainty: the maximum eigenvalue of
/// Cov3D = (sum_i J_i' J_i / sigma^2)^-1 at `point`, in m^2. Cameras behind
/// which the point lies are skipped. Returns +inf for singular geometry
/// (fewer than two usable rays, or information condition number above 1e12).
pub fn triangulation_uncertainty(
    cameras: &[&Camera],
    point: &Point3<f64>,
    pixel_noise: f64,
) -> f64 {
    let inv_var = 1.0 / (pixel_noise * pixel_noise);
    let mut info = Matrix3::<f64>::zeros();
    let mut used = 0usize;
    for cam in cameras {
        if let Some(jac) = cam.projection_jacobian(point) {
            info += jac.transpose() * jac * inv_var;
            used += 1;
        }
    }
    if used < 2 {
        return f64::INFINITY;
    }
    let eig = info.symmetric_eigenvalues();
    let lo = eig.min();
    let hi = eig.max();
    if lo <= 0.0 || hi / lo > CONDITION_LIMIT {
        return f64::INFINITY;
    }
    // lambda_max(Cov) = 1 / lambda_min(Info)
    1.0 / lo
}

/// Angle at `point` between the rays to the two camera centers, degrees,
/// in [0, 180]. Coincident centers yield 0.
pub fn triangulation_angle(cam_a: &Camera, cam_b: &Camera, point: &Point3<f64>) -> f64 {
    let ra = cam_a.center - point;
    let rb = cam_b.center - point;
    let na = ra.norm();
    let nb = rb.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let cos = (ra.dot(&rb) / (na * nb)).clamp(-1.0, 1.0);
    cos.acos().to_degrees()
}


#[cfg(test)]
pub(crate) use tests::look_at_camera;
