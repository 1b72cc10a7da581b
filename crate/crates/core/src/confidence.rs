//! Match-success confidence: unary per-(camera, triangle) probabilities
//! binned by triangulation angle, pairwise averaging, and the extension to
//! k matching partners as P(at least 2 independent successes).

use std::collections::HashMap;

use nalgebra::{Point2, Point3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{
    triangulation_angle, Camera, CameraId, SurfaceMesh, TrianglePatch,
};

pub const ANGLE_BINS: usize = 9;
pub const ANGLE_BIN_WIDTH_DEG: f64 = 5.0;

/// Bin index for a triangulation angle: 9 bins of 5 degrees covering
/// 0-45, clamping larger angles to the last bin.
pub fn angle_bin(angle_deg: f64) -> usize {
    ((angle_deg / ANGLE_BIN_WIDTH_DEG).floor() as i64).clamp(0, ANGLE_BINS as i64 - 1) as usize
}

/// Pluggable unary match-success predictor. Implementations must be
/// deterministic and clamp outputs to [0,1].
pub trait ConfidenceModel: Send + Sync {
    /// 9 angle-binned probabilities for a triangle seen from `camera`.
    fn unary(
        &self,
        camera: &Camera,
        vertices: &[Point3<f64>; 3],
        patch: &TrianglePatch,
    ) -> [f64; ANGLE_BINS];
}

/// Piecewise-linear hat over triangulation angle: 0 at 0 degrees, 1 on
/// 10-25, back to 0 at 45 and beyond. Zero-dependency default predictor.
/// When a camera carries a grayscale PGM image, a local-gradient gain
/// modulates the response.
#[derive(Debug, Default)]
pub struct HeuristicModel {
    images: HashMap<CameraId, crate::io::GrayImage>,
}

pub fn angle_hat(angle_deg: f64) -> f64 {
    if angle_deg <= 0.0 || angle_deg >= 45.0 {
        0.0
    } else if angle_deg < 10.0 {
        angle_deg / 10.0
    } else if angle_deg <= 25.0 {
        1.0
    } else {
        (45.0 - angle_deg) / 20.0
    }
}

impl HeuristicModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Load any PGM images referenced by the cameras; missing or unreadable
    /// images simply disable the gradient gain for that camera.
    pub fn with_images(cameras: &[Camera]) -> Self {
        let mut images = HashMap::new();
        for cam in cameras {
            if let Some(path) = &cam.image_path {
                if let Ok(img) = crate::io::read_pgm(path) {
                    images.insert(cam.id, img);
                }
            }
        }
        HeuristicModel { images }
    }

    fn gradient_gain(&self, camera: &Camera, centroid: &Point3<f64>) -> f64 {
        let Some(img) = self.images.get(&camera.id) else {
            return 1.0;
        };
        let Some(px) = camera.project(centroid) else {
            return 1.0;
        };
        let g = img.mean_gradient(px.x, px.y, 4);
        (g / 32.0).clamp(0.05, 1.0)
    }
}

impl ConfidenceModel for HeuristicModel {
    fn unary(
        &self,
        camera: &Camera,
        _vertices: &[Point3<f64>; 3],
        patch: &TrianglePatch,
    ) -> [f64; ANGLE_BINS] {
        let gain = self.gradient_gain(camera, &patch.centroid);
        let mut out = [0.0; ANGLE_BINS];
        for (b, v) in out.iter_mut().enumerate() {
            let center = (b as f64 + 0.5) * ANGLE_BIN_WIDTH_DEG;
            *v = (angle_hat(center) * gain).clamp(0.0, 1.0);
        }
        out
    }
}

/// Per-camera confidence grid: `bins` x (`width_cells` x `height_cells`)
/// values at `stride`-pixel cells, bin-major.
#[derive(Debug, Clone)]
pub struct ConfidenceGrid {
    pub width_cells: u32,
    pub height_cells: u32,
    pub stride_px: u32,
    pub values: Vec<f32>,
}

impl ConfidenceGrid {
    pub fn constant(width_cells: u32, height_cells: u32, stride_px: u32, value: f32) -> Self {
        ConfidenceGrid {
            width_cells,
            height_cells,
            stride_px,
            values: vec![value; (width_cells * height_cells) as usize * ANGLE_BINS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expect = (self.width_cells as usize) * (self.height_cells as usize) * ANGLE_BINS;
        if self.values.len() != expect {
            return Err(Error::invariant(
                "confidence grid",
                format!("expected {expect} values, found {}", self.values.len()),
            ));
        }
        if self.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invariant(
                "confidence grid",
                "values outside [0,1]",
            ));
        }
        Ok(())
    }

    fn value(&self, bin: usize, ix: u32, iy: u32) -> f64 {
        let cells = (self.width_cells * self.height_cells) as usize;
        self.values[bin * cells + (iy * self.width_cells + ix) as usize] as f64
    }

    fn cell_center(&self, ix: u32, iy: u32) -> Point2<f64> {
        Point2::new(
            (ix as f64 + 0.5) * self.stride_px as f64,
            (iy as f64 + 0.5) * self.stride_px as f64,
        )
    }
}

/// Predictor backed by externally produced confidence grids, one per camera.
#[derive(Debug, Default)]
pub struct FileBackedModel {
    pub grids: HashMap<CameraId, ConfidenceGrid>,
}

fn point_in_triangle(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>) -> bool {
    let sign = |p1: &Point2<f64>, p2: &Point2<f64>, p3: &Point2<f64>| {
        (p1.x - p3.x) * (p2.y - p3.y) - (p2.x - p3.x) * (p1.y - p3.y)
    };
    let d1 = sign(p, a, b);
    let d2 = sign(p, b, c);
    let d3 = sign(p, c, a);
    let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(has_neg && has_pos)
}

impl ConfidenceModel for FileBackedModel {
    fn unary(
        &self,
        camera: &Camera,
        vertices: &[Point3<f64>; 3],
        patch: &TrianglePatch,
    ) -> [f64; ANGLE_BINS] {
        let zeros = [0.0; ANGLE_BINS];
        let Some(grid) = self.grids.get(&camera.id) else {
            return zeros;
        };
        let mut px = [Point2::origin(); 3];
        for (i, v) in vertices.iter().enumerate() {
            match camera.project(v) {
                Some(p) => px[i] = p,
                None => return zeros,
            }
        }
        // cells whose centers fall inside the projected triangle
        let stride = grid.stride_px as f64;
        let min_x = px.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let max_x = px.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let min_y = px.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let max_y = px.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let ix0 = ((min_x / stride - 0.5).floor().max(0.0)) as u32;
        let iy0 = ((min_y / stride - 0.5).floor().max(0.0)) as u32;
        let ix1 = (((max_x / stride - 0.5).ceil()).max(0.0) as u32).min(grid.width_cells.saturating_sub(1));
        let iy1 = (((max_y / stride - 0.5).ceil()).max(0.0) as u32).min(grid.height_cells.saturating_sub(1));

        let mut sums = [0.0f64; ANGLE_BINS];
        let mut count = 0usize;
        if ix0 < grid.width_cells && iy0 < grid.height_cells {
            for iy in iy0..=iy1 {
                for ix in ix0..=ix1 {
                    let c = grid.cell_center(ix, iy);
                    if point_in_triangle(&c, &px[0], &px[1], &px[2]) {
                        for (b, s) in sums.iter_mut().enumerate() {
                            *s += grid.value(b, ix, iy);
                        }
                        count += 1;
                    }
                }
            }
        }
        if count > 0 {
            let mut out = [0.0; ANGLE_BINS];
            for (b, v) in out.iter_mut().enumerate() {
                *v = (sums[b] / count as f64).clamp(0.0, 1.0);
            }
            return out;
        }
        // fallback: nearest cell to the projected centroid, if inside image
        let Some(cpx) = camera.project(&patch.centroid) else {
            return zeros;
        };
        if !camera.in_bounds(&cpx) {
            return zeros;
        }
        let ix = ((cpx.x / stride - 0.5).round().max(0.0) as u32)
            .min(grid.width_cells.saturating_sub(1));
        let iy = ((cpx.y / stride - 0.5).round().max(0.0) as u32)
            .min(grid.height_cells.saturating_sub(1));
        let mut out = [0.0; ANGLE_BINS];
        for (b, v) in out.iter_mut().enumerate() {
            *v = grid.value(b, ix, iy).clamp(0.0, 1.0);
        }
        out
    }
}

/// Unary 9-vector for a visible (camera, triangle) pair; all-zeros when the
/// camera has no line of sight.
pub fn unary_confidence(
    model: &dyn ConfidenceModel,
    camera: &Camera,
    vertices: &[Point3<f64>; 3],
    patch: &TrianglePatch,
) -> [f64; ANGLE_BINS] {
    if !patch.sees(camera.id) {
        return [0.0; ANGLE_BINS];
    }
    let mut out = model.unary(camera, vertices, patch);
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// Average of the two cameras' cached unary values in the triangulation-angle
/// bin of the pair. Zero when either camera is occluded.
pub fn pairwise_confidence(key: &Camera, partner: &Camera, patch: &TrianglePatch) -> f64 {
    let (Some(uk), Some(up)) = (
        patch.unary_confidence.get(&key.id),
        patch.unary_confidence.get(&partner.id),
    ) else {
        return 0.0;
    };
    if !patch.sees(key.id) || !patch.sees(partner.id) {
        return 0.0;
    }
    let bin = angle_bin(triangulation_angle(key, partner, &patch.centroid));
    (uk[bin] + up[bin]) / 2.0
}

/// P(at least 2 of k independent successes), numerically stable complement
/// form: 1 - prod(1-p) - sum_j p_j prod_{m != j}(1-p_m).
pub fn k_partner_confidence(pairwise: &[f64]) -> Result<f64> {
    if pairwise.len() < 2 {
        return Err(Error::InvalidCluster(format!(
            "need at least 2 matching partners, got {}",
            pairwise.len()
        )));
    }
    let p_none: f64 = pairwise.iter().map(|p| 1.0 - p).product();
    let mut p_one = 0.0;
    for j in 0..pairwise.len() {
        let mut term = pairwise[j];
        for (m, p) in pairwise.iter().enumerate() {
            if m != j {
                term *= 1.0 - p;
            }
        }
        p_one += term;
    }
    Ok((1.0 - p_none - p_one).clamp(0.0, 1.0))
}

/// The alternating inclusion-exclusion sum over partner subsets; exponential
/// in k, kept as an independent route for verification.
pub fn k_partner_confidence_alternating(pairwise: &[f64]) -> Result<f64> {
    use itertools::Itertools;
    let k = pairwise.len();
    if k < 2 {
        return Err(Error::InvalidCluster(format!(
            "need at least 2 matching partners, got {k}"
        )));
    }
    let mut total = 0.0;
    for i in 2..=k {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let weight = sign * (i as f64 - 1.0);
        let mut subset_sum = 0.0;
        for subset in (0..k).combinations(i) {
            subset_sum += subset.iter().map(|&j| pairwise[j]).product::<f64>();
        }
        total += weight * subset_sum;
    }
    Ok(total)
}

/// Grow the binary probability tree, stopping a branch after its second
/// success, and sum the successful-branch probabilities. Exponential in k;
/// verification only.
pub fn tree_oracle(pairwise: &[f64]) -> f64 {
    fn grow(ps: &[f64], depth: usize, prob: f64, successes: usize) -> f64 {
        if successes == 2 {
            return prob;
        }
        if depth == ps.len() {
            return 0.0;
        }
        let p = ps[depth];
        grow(ps, depth + 1, prob * p, successes + 1) + grow(ps, depth + 1, prob * (1.0 - p), successes)
    }
    grow(pairwise, 0, 1.0, 0)
}

/// Cache the unary predictions for every visible (camera, triangle) pair.
pub fn cache_unaries(
    model: &dyn ConfidenceModel,
    mesh: &SurfaceMesh,
    patches: &mut [TrianglePatch],
    cameras: &[Camera],
) {
    let by_id: HashMap<CameraId, &Camera> = cameras.iter().map(|c| (c.id, c)).collect();
    let vertices: Vec<[Point3<f64>; 3]> = (0..mesh.triangles.len())
        .map(|t| mesh.triangle_vertices(t))
        .collect();
    patches
        .par_iter_mut()
        .enumerate()
        .for_each(|(t, patch)| {
            let cams = patch.visible_cameras.clone();
            for cam_id in cams {
                let cam = by_id[&cam_id];
                let unary = unary_confidence(model, cam, &vertices[t], patch);
                patch.unary_confidence.insert(cam_id, unary);
            }
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use itertools::Itertools;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive 2^k outcome enumeration of P(at least 2 successes).
    pub(crate) fn enumeration_oracle(ps: &[f64]) -> f64 {
        let k = ps.len();
        let mut total = 0.0;
        for mask in 0u32..(1 << k) {
            if mask.count_ones() < 2 {
                continue;
            }
            let mut prob = 1.0;
            for (j, p) in ps.iter().enumerate() {
                prob *= if mask & (1 << j) != 0 { *p } else { 1.0 - p };
            }
            total += prob;
        }
        total
    }

    #[test]
    fn k2_is_product() {
        let p = [0.3, 0.7];
        assert_relative_eq!(k_partner_confidence(&p).unwrap(), 0.21, epsilon = 1e-15);
        assert_relative_eq!(tree_oracle(&p), 0.21, epsilon = 1e-15);
        assert_relative_eq!(
            k_partner_confidence_alternating(&p).unwrap(),
            0.21,
            epsilon = 1e-15
        );
    }

    #[test]
    fn k3_half_half_half() {
        let p = [0.5, 0.5, 0.5];
        // brute force over 8 outcomes: P(>=2 successes) = 0.5
        assert_relative_eq!(enumeration_oracle(&p), 0.5, epsilon = 1e-15);
        assert_relative_eq!(k_partner_confidence(&p).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn k3_closed_form() {
        let p = [0.2, 0.5, 0.9];
        let expected = p[0] * p[1] + p[0] * p[2] + p[1] * p[2] - 2.0 * p[0] * p[1] * p[2];
        assert_relative_eq!(k_partner_confidence(&p).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn all_ones_and_zeros() {
        assert_relative_eq!(k_partner_confidence(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(k_partner_confidence(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn fewer_than_two_partners_rejected() {
        assert!(k_partner_confidence(&[0.5]).is_err());
        assert!(k_partner_confidence(&[]).is_err());
    }

    #[test]
    fn three_routes_agree_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let k = rng.gen_range(2..=10);
            let p: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
            let stable = k_partner_confidence(&p).unwrap();
            let alt = k_partner_confidence_alternating(&p).unwrap();
            let tree = tree_oracle(&p);
            let enumerated = enumeration_oracle(&p);
            assert!((stable - tree).abs() <= 1e-12);
            assert!((stable - alt).abs() <= 1e-12);
            assert!((stable - enumerated).abs() <= 1e-12);
            assert!((0.0..=1.0).contains(&stable));
        }
    }

    #[test]
    fn permutation_invariance() {
        let p = [0.1, 0.4, 0.7, 0.95];
        let base = tree_oracle(&p);
        for perm in (0..4).permutations(4) {
            let shuffled: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
            assert_relative_eq!(tree_oracle(&shuffled), base, epsilon = 1e-15);
        }
    }

    #[test]
    fn monotone_in_each_probability_and_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let k = rng.gen_range(2..=6);
            let mut p: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
            let base = k_partner_confidence(&p).unwrap();
            let j = rng.gen_range(0..k);
            let old = p[j];
            p[j] = (old + rng.gen_range(0.0..(1.0 - old))).min(1.0);
            assert!(k_partner_confidence(&p).unwrap() >= base - 1e-15);
            p.push(rng.gen_range(0.0..1.0));
            assert!(k_partner_confidence(&p).unwrap() >= base - 1e-15);
        }
    }

    #[test]
    fn angle_bin_boundaries() {
        assert_eq!(angle_bin(0.0), 0);
        assert_eq!(angle_bin(4.999), 0);
        assert_eq!(angle_bin(5.0), 1);
        assert_eq!(angle_bin(23.0), 4); // 20-25 degree bin
        assert_eq!(angle_bin(44.9), 8);
        assert_eq!(angle_bin(90.0), 8);
        assert_eq!(angle_bin(-1.0), 0);
    }

    #[test]
    fn hat_shape() {
        assert_eq!(angle_hat(0.0), 0.0);
        assert_relative_eq!(angle_hat(5.0), 0.5);
        assert_eq!(angle_hat(10.0), 1.0);
        assert_eq!(angle_hat(25.0), 1.0);
        assert_relative_eq!(angle_hat(35.0), 0.5);
        assert_eq!(angle_hat(45.0), 0.0);
        assert_eq!(angle_hat(80.0), 0.0);
    }

    fn test_patch(centroid: Point3<f64>, cams: Vec<CameraId>) -> TrianglePatch {
        TrianglePatch {
            centroid,
            normal: nalgebra::Vector3::new(0.0, 0.0, -1.0),
            area3d: 1.0,
            visible_cameras: cams,
            ..Default::default()
        }
    }

    #[test]
    fn constant_grid_returns_constant() {
        let cam = crate::scene::look_at_camera(
            0,
            Point3::new(0.0, 0.0, -1.0),
            Point3::new(0.0, 0.0, 1.0),
        );
        let mut model = FileBackedModel::default();
        model
            .grids
            .insert(0, ConfidenceGrid::constant(125, 125, 8, 0.8));
        let verts = [
            Point3::new(-0.2, -0.2, 1.0),
            Point3::new(0.2, -0.2, 1.0),
            Point3::new(0.0, 0.2, 1.0),
        ];
        let patch = test_patch(Point3::new(0.0, -0.066, 1.0), vec![0]);
        let out = unary_confidence(&model, &cam, &verts, &patch);
        for v in out {
            // grids store f32
            assert_relative_eq!(v, 0.8, epsilon = 1e-6);
        }
    }

    #[test]
    fn triangle_outside_image_gives_zeros() {
        let cam = crate::scene::look_at_camera(
            0,
            Point3::new(0.0, 0.0, -1.0),
            Point3::new(0.0, 0.0, 1.0),
        );
        let mut model = FileBackedModel::default();
        model
            .grids
            .insert(0, ConfidenceGrid::constant(125, 125, 8, 0.8));
        // projects far outside the 1000x1000 image
        let verts = [
            Point3::new(10.0, 10.0, 1.0),
            Point3::new(10.4, 10.0, 1.0),
            Point3::new(10.0, 10.4, 1.0),
        ];
        let patch = test_patch(Point3::new(10.13, 10.13, 1.0), vec![0]);
        let out = unary_confidence(&model, &cam, &verts, &patch);
        assert_eq!(out, [0.0; ANGLE_BINS]);
    }

    #[test]
    fn two_by_two_grid_mean() {
        let cam = crate::scene::look_at_camera(
            0,
            Point3::new(0.0, 0.0, -1.0),
            Point3::new(0.0, 0.0, 1.0),
        );
        let mut grid = ConfidenceGrid::constant(2, 2, 500, 0.0);
        for bin in 0..ANGLE_BINS {
            let cells = 4;
            grid.values[bin * cells] = 0.2;
            grid.values[bin * cells + 1] = 0.4;
            grid.values[bin * cells + 2] = 0.6;
            grid.values[bin * cells + 3] = 0.8;
        }
        let mut model = FileBackedModel::default();
        model.grids.insert(0, grid);
        // triangle covering the whole image plane at depth 1
        let verts = [
            Point3::new(-2.0, -2.0, 1.0),
            Point3::new(2.0, -2.0, 1.0),
            Point3::new(0.0, 2.0, 1.0),
        ];
        let patch = test_patch(Point3::new(0.0, -0.66, 1.0), vec![0]);
        let out = unary_confidence(&model, &cam, &verts, &patch);
        for v in out {
            assert_relative_eq!(v, 0.5, epsilon = 1e-6);
        }
    }

    #[test]
    fn pairwise_average_and_occlusion() {
        let key = crate::scene::look_at_camera(
            0,
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        );
        let partner = crate::scene::look_at_camera(
            1,
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        );
        let mut patch = test_patch(Point3::new(0.0, 0.0, 1.0), vec![0, 1]);
        // angle at the centroid is 90 degrees -> clamped to bin 8
        patch.unary_confidence.insert(0, [0.6; ANGLE_BINS]);
        patch.unary_confidence.insert(1, [0.8; ANGLE_BINS]);
        assert_relative_eq!(pairwise_confidence(&key, &partner, &patch), 0.7);

        patch.visible_cameras = vec![0];
        assert_eq!(pairwise_confidence(&key, &partner, &patch), 0.0);
    }
}

