//! Camera-triangle visibility: a camera sees a triangle when its centroid
//! projects inside the image with positive depth, the triangle is
//! front-facing, and the line of sight is unoccluded.

use rayon::prelude::*;

use crate::bvh::Bvh;
use crate::scene::{Camera, CameraId, SurfaceMesh, TriangleId, TrianglePatch};

const BACKFACE_LIMIT_DEG: f64 = 89.0;
const OCCLUSION_EPS_FACTOR: f64 = 1e-4;

#[derive(Debug, Clone, Default)]
pub struct VisibilityTable {
    /// Sorted camera ids per triangle.
    pub triangle_cameras: Vec<Vec<CameraId>>,
    /// Sorted triangle ids per camera (indexed by position in the camera
    /// slice handed to `compute_visibility`).
    pub camera_triangles: Vec<Vec<TriangleId>>,
}

impl VisibilityTable {
    pub fn transpose_consistent(&self, cameras: &[Camera]) -> bool {
        let cam_pos: std::collections::HashMap<CameraId, usize> = cameras
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id, i))
            .collect();
        for (t, cams) in self.triangle_cameras.iter().enumerate() {
            for cam in cams {
                let Some(&ci) = cam_pos.get(cam) else {
                    return false;
                };
                if self.camera_triangles[ci]
                    .binary_search(&(t as TriangleId))
                    .is_err()
                {
                    return false;
                }
            }
        }
        let total: usize = self.triangle_cameras.iter().map(Vec::len).sum();
        let total_t: usize = self.camera_triangles.iter().map(Vec::len).sum();
        total == total_t
    }
}

fn sees(
    camera: &Camera,
    bvh: &Bvh,
    tri: usize,
    patch: &TrianglePatch,
    occlusion_eps: f64,
) -> bool {
    let Some(px) = camera.project(&patch.centroid) else {
        return false;
    };
    if !camera.in_bounds(&px) {
        return false;
    }
    let to_cam = camera.center - patch.centroid;
    let dist = to_cam.norm();
    if dist == 0.0 {
        return false;
    }
    let cos = patch.normal.dot(&to_cam) / dist;
    if cos <= BACKFACE_LIMIT_DEG.to_radians().cos() {
        return false;
    }
    let dir = -to_cam / dist; // camera center toward centroid
    match bvh.closest_hit(&camera.center, &dir, dist - occlusion_eps, Some(tri as u32)) {
        Some(_) => false,
        None => true,
    }
}

/// Full visibility table. Data-parallel over cameras; output is
/// deterministic regardless of thread count.
pub fn compute_visibility(
    mesh: &SurfaceMesh,
    patches: &[TrianglePatch],
    bvh: &Bvh,
    cameras: &[Camera],
) -> VisibilityTable {
    let occlusion_eps = OCCLUSION_EPS_FACTOR * mesh.bounding_diameter();
    let camera_triangles: Vec<Vec<TriangleId>> = cameras
        .par_iter()
        .map(|cam| {
            (0..mesh.triangles.len())
                .filter(|&t| sees(cam, bvh, t, &patches[t], occlusion_eps))
                .map(|t| t as TriangleId)
                .collect()
        })
        .collect();

    let mut triangle_cameras = vec![Vec::new(); mesh.triangles.len()];
    for (ci, tris) in camera_triangles.iter().enumerate() {
        for &t in tris {
            triangle_cameras[t as usize].push(cameras[ci].id);
        }
    }
    for cams in &mut triangle_cameras {
        cams.sort_unstable();
    }
    VisibilityTable {
        triangle_cameras,
        camera_triangles,
    }
}

/// Store visibility into the per-triangle caches.
pub fn apply_visibility(patches: &mut [TrianglePatch], table: &VisibilityTable) {
    for (t, patch) in patches.iter_mut().enumerate() {
        patch.visible_cameras = table.triangle_cameras[t].clone();
    }
}

/// Exhaustive all-triangle occlusion oracle, O(cams * tris^2). Test support.
pub fn brute_force_visibility(
    mesh: &SurfaceMesh,
    patches: &[TrianglePatch],
    cameras: &[Camera],
) -> VisibilityTable {
    let occlusion_eps = OCCLUSION_EPS_FACTOR * mesh.bounding_diameter();
    let mut camera_triangles = vec![Vec::new(); cameras.len()];
    for (ci, cam) in cameras.iter().enumerate() {
        for t in 0..mesh.triangles.len() {
            let patch = &patches[t];
            let Some(px) = cam.project(&patch.centroid) else {
                continue;
            };
            if !cam.in_bounds(&px) {
                continue;
            }
            let to_cam = cam.center - patch.centroid;
            let dist = to_cam.norm();
            if dist == 0.0 {
                continue;
            }
            if patch.normal.dot(&to_cam) / dist <= BACKFACE_LIMIT_DEG.to_radians().cos() {
                continue;
            }
            let dir = -to_cam / dist;
            if crate::bvh::brute_force_hit(
                mesh,
                &cam.center,
                &dir,
                dist - occlusion_eps,
                Some(t as u32),
            )
            .is_none()
            {
                camera_triangles[ci].push(t as TriangleId);
            }
        }
    }
    let mut triangle_cameras = vec![Vec::new(); mesh.triangles.len()];
    for (ci, tris) in camera_triangles.iter().enumerate() {
        for &t in tris {
            triangle_cameras[t as usize].push(cameras[ci].id);
        }
    }
    for cams in &mut triangle_cameras {
        cams.sort_unstable();
    }
    VisibilityTable {
        triangle_cameras,
        camera_triangles,
    }
}
