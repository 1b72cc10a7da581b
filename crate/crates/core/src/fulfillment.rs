//! Quality-fulfillment math: resolution, uncertainty, coverage and
//! confidence factors per triangle, the per-cluster score, the overall
//! objective, and the greedy gain.

use std::collections::HashMap;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::confidence::{k_partner_confidence, pairwise_confidence};
use crate::scene::{
    estimate_resolution, triangulation_uncertainty, Camera, CameraId, ClusterId, QualityConfig,
    SurfaceMesh, TriangleId, TrianglePatch,
};

/// A key view plus its ordered matching partners.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ViewCluster {
    pub id: ClusterId,
    pub key_view: CameraId,
    pub partners: Vec<CameraId>,
    /// Combined fulfillment score at selection time.
    pub score: f64,
}

impl ViewCluster {
    pub fn validate(&self, k: usize) -> crate::error::Result<()> {
        if self.partners.len() != k {
            return Err(crate::error::Error::InvalidCluster(format!(
                "cluster {} has {} partners, expected {k}",
                self.id,
                self.partners.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.partners {
            if *p == self.key_view || !seen.insert(*p) {
                return Err(crate::error::Error::InvalidCluster(format!(
                    "cluster {}: partners must be distinct and exclude the key view",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FulfillmentBreakdown {
    pub f_res: f64,
    pub f_unc: f64,
    pub f_cov: f64,
    pub f_conf: f64,
    pub f_total: f64,
}

impl FulfillmentBreakdown {
    pub const ZERO: FulfillmentBreakdown = FulfillmentBreakdown {
        f_res: 0.0,
        f_unc: 0.0,
        f_cov: 0.0,
        f_conf: 0.0,
        f_total: 0.0,
    };
}

/// Read-only evaluation context shared across scoring calls.
pub struct EvalContext<'a> {
    pub cameras: &'a [Camera],
    pub mesh: &'a SurfaceMesh,
    pub config: &'a QualityConfig,
    by_id: HashMap<CameraId, usize>,
    tri_verts: Vec<[Point3<f64>; 3]>,
}

impl<'a> EvalContext<'a> {
    pub fn new(cameras: &'a [Camera], mesh: &'a SurfaceMesh, config: &'a QualityConfig) -> Self {
        EvalContext {
            by_id: cameras.iter().enumerate().map(|(i, c)| (c.id, i)).collect(),
            tri_verts: (0..mesh.triangles.len())
                .map(|t| mesh.triangle_vertices(t))
                .collect(),
            cameras,
            mesh,
            config,
        }
    }

    pub fn camera(&self, id: CameraId) -> &Camera {
        &self.cameras[self.by_id[&id]]
    }
}

/// Resolution fulfillment: min(r * g_d^2, 1); zero when the key view does
/// not see the triangle.
pub fn f_res(ctx: &EvalContext, t: usize, patch: &TrianglePatch, key: CameraId) -> f64 {
    if !patch.sees(key) {
        return 0.0;
    }
    let r = estimate_resolution(ctx.camera(key), &ctx.tri_verts[t], patch.area3d);
    (r * ctx.config.gsd_desired * ctx.config.gsd_desired).min(1.0)
}

/// Uncertainty fulfillment: min(a_d / sqrt(u), 1) from the cluster cameras
/// that see the triangle; zero for singular geometry.
pub fn f_unc(ctx: &EvalContext, patch: &TrianglePatch, cluster_cams: &[CameraId]) -> f64 {
    let seeing: Vec<&Camera> = cluster_cams
        .iter()
        .filter(|&&c| patch.sees(c))
        .map(|&c| ctx.camera(c))
        .collect();
    if seeing.len() < 2 {
        return 0.0;
    }
    let u = triangulation_uncertainty(&seeing, &patch.centroid, ctx.config.pixel_noise);
    if !u.is_finite() {
        return 0.0;
    }
    (ctx.config.accuracy_desired / u.sqrt()).min(1.0)
}

/// Coverage: 1 iff at least `min_cameras` cameras of the cluster see the
/// triangle.
pub fn f_cov(patch: &TrianglePatch, cluster_cams: &[CameraId], min_cameras: usize) -> f64 {
    let seeing = cluster_cams.iter().filter(|&&c| patch.sees(c)).count();
    if seeing >= min_cameras {
        1.0
    } else {
        0.0
    }
}

/// Full per-triangle fulfillment: (alpha f_res + (1-alpha) f_unc) * f_cov *
/// f_conf. The key view must see the triangle for any nonzero value.
pub fn triangle_fulfillment(
    ctx: &EvalContext,
    t: usize,
    patch: &TrianglePatch,
    key: CameraId,
    partners: &[CameraId],
) -> FulfillmentBreakdown {
    if !patch.sees(key) {
        return FulfillmentBreakdown::ZERO;
    }
    let mut cluster_cams = Vec::with_capacity(partners.len() + 1);
    cluster_cams.push(key);
    cluster_cams.extend_from_slice(partners);

    let res = f_res(ctx, t, patch, key);
    let unc = f_unc(ctx, patch, &cluster_cams);
    let cov = f_cov(patch, &cluster_cams, ctx.config.min_cameras);
    let pairwise: Vec<f64> = partners
        .iter()
        .map(|&p| pairwise_confidence(ctx.camera(key), ctx.camera(p), patch))
        .collect();
    let conf = k_partner_confidence(&pairwise).unwrap_or(0.0);
    let alpha = ctx.config.alpha;
    FulfillmentBreakdown {
        f_res: res,
        f_unc: unc,
        f_cov: cov,
        f_conf: conf,
        f_total: (alpha * res + (1.0 - alpha) * unc) * cov * conf,
    }
}

/// Combined fulfillment score: sum of triangle fulfillments over the sampled
/// triangles visible in the key view.
pub fn cluster_score(
    ctx: &EvalContext,
    patches: &[TrianglePatch],
    key: CameraId,
    partners: &[CameraId],
    sampled_triangles: &[TriangleId],
) -> f64 {
    sampled_triangles
        .iter()
        .map(|&t| {
            triangle_fulfillment(ctx, t as usize, &patches[t as usize], key, partners).f_total
        })
        .sum()
}

/// Overall fulfillment of a selection: mean over the eligible triangles of
/// the per-triangle max over selected clusters. Empty selection -> 0.
pub fn objective(
    patches: &[TrianglePatch],
    eligible: &[TriangleId],
    selected: &[ClusterId],
) -> f64 {
    if eligible.is_empty() || selected.is_empty() {
        return 0.0;
    }
    let sum: f64 = eligible
        .iter()
        .map(|&t| {
            selected
                .iter()
                .map(|v| {
                    patches[t as usize]
                        .cluster_fulfillment
                        .get(v)
                        .copied()
                        .unwrap_or(0.0)
                })
                .fold(0.0, f64::max)
        })
        .sum();
    sum / eligible.len() as f64
}

/// Marginal gain of adding `cluster` given the current per-triangle
/// fulfillment state. `cluster_triangles` are the triangles holding a cached
/// value for this cluster; `total` is |T| of the eligible set.
pub fn gain(
    patches: &[TrianglePatch],
    cluster: ClusterId,
    cluster_triangles: &[TriangleId],
    total: usize,
) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let sum: f64 = cluster_triangles
        .iter()
        .map(|&t| {
            let patch = &patches[t as usize];
            let f = patch.cluster_fulfillment.get(&cluster).copied().unwrap_or(0.0);
            (f - patch.current_fulfillment).max(0.0)
        })
        .sum();
    sum / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::look_at_camera;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene_one_triangle() -> (Vec<Camera>, SurfaceMesh, Vec<TrianglePatch>) {
        let mesh = SurfaceMesh {
            vertices: vec![
                Point3::new(-0.1, -0.1, 1.0),
                Point3::new(0.0, 0.1, 1.0),
                Point3::new(0.1, -0.1, 1.0),
            ],
            triangles: vec![[0, 1, 2]],
        };
        let cameras = vec![
            look_at_camera(0, Point3::new(0.0, 0.0, -1.0), Point3::new(0.0, 0.0, 1.0)),
            look_at_camera(1, Point3::new(-0.8, 0.0, -1.0), Point3::new(0.0, 0.0, 1.0)),
            look_at_camera(2, Point3::new(0.8, 0.0, -1.0), Point3::new(0.0, 0.0, 1.0)),
        ];
        let mut patches = crate::scene::build_patches(&mesh);
        patches[0].visible_cameras = vec![0, 1, 2];
        for c in 0..3u32 {
            patches[0].unary_confidence.insert(c, [0.8; 9]);
        }
        (cameras, mesh, patches)
    }

    #[test]
    fn f_res_truncation() {
        let cfg = QualityConfig::default();
        let (cameras, mesh, patches) = scene_one_triangle();
        let ctx = EvalContext::new(&cameras, &mesh, &cfg);
        // depth 2 m, f = 1000: r = 250000 px/m^2 >= r_d = 10000 -> 1.0
        let v = f_res(&ctx, 0, &patches[0], 0);
        assert_relative_eq!(v, 1.0);
    }

    #[test]
    fn f_res_zero_when_key_occluded() {
        let cfg = QualityConfig::default();
        let (cameras, mesh, mut patches) = scene_one_triangle();
        patches[0].visible_cameras = vec![1, 2];
        let ctx = EvalContext::new(&cameras, &mesh, &cfg);
        assert_eq!(f_res(&ctx, 0, &patches[0], 0), 0.0);
    }

    #[test]
    fn f_unc_boundaries() {
        let cfg = QualityConfig::default();
        let (cameras, mesh, patches) = scene_one_triangle();
        let ctx = EvalContext::new(&cameras, &mesh, &cfg);
        let v = f_unc(&ctx, &patches[0], &[0, 1, 2]);
        assert!(v > 0.0 && v <= 1.0);
        // single camera -> singular
        assert_eq!(f_unc(&ctx, &patches[0], &[0]), 0.0);
    }

    #[test]
    fn f_cov_counts_cluster_cameras() {
        let (_cameras, _mesh, mut patches) = scene_one_triangle();
        assert_eq!(f_cov(&patches[0], &[0, 1, 2], 3), 1.0);
        patches[0].visible_cameras = vec![0, 1];
        assert_eq!(f_cov(&patches[0], &[0, 1, 2], 3), 0.0);
    }

    #[test]
    fn triangle_fulfillment_composition() {
        let cfg = QualityConfig {
            partners: 2,
            ..QualityConfig::default()
        };
        let (cameras, mesh, patches) = scene_one_triangle();
        let ctx = EvalContext::new(&cameras, &mesh, &cfg);
        let b = triangle_fulfillment(&ctx, 0, &patches[0], 0, &[1, 2]);
        assert!(b.f_total >= 0.0 && b.f_total <= 1.0);
        let expect =
            (cfg.alpha * b.f_res + (1.0 - cfg.alpha) * b.f_unc) * b.f_cov * b.f_conf;
        assert_relative_eq!(b.f_total, expect, epsilon = 1e-15);
        assert!(b.f_conf > 0.0);
    }

    #[test]
    fn zero_confidence_kills_total() {
        let cfg = QualityConfig {
            partners: 2,
            ..QualityConfig::default()
        };
        let (cameras, mesh, mut patches) = scene_one_triangle();
        for c in 0..3u32 {
            patches[0].unary_confidence.insert(c, [0.0; 9]);
        }
        let ctx = EvalContext::new(&cameras, &mesh, &cfg);
        let b = triangle_fulfillment(&ctx, 0, &patches[0], 0, &[1, 2]);
        assert_eq!(b.f_total, 0.0);
    }

    #[test]
    fn alpha_one_ignores_uncertainty() {
        let base = QualityConfig {
            partners: 2,
            alpha: 1.0,
            ..QualityConfig::default()
        };
        let tight = QualityConfig {
            accuracy_desired: 1e-7,
            ..base.clone()
        };
        let (cameras, mesh, patches) = scene_one_triangle();
        let a = triangle_fulfillment(
            &EvalContext::new(&cameras, &mesh, &base),
            0,
            &patches[0],
            0,
            &[1, 2],
        );
        let b = triangle_fulfillment(
            &EvalContext::new(&cameras, &mesh, &tight),
            0,
            &patches[0],
            0,
            &[1, 2],
        );
        assert_relative_eq!(a.f_total, b.f_total, epsilon = 1e-15);
    }

    #[test]
    fn cluster_score_matches_resummation() {
        let cfg = QualityConfig {
            partners: 2,
            ..QualityConfig::default()
        };
        let (cameras, mesh, patches) = scene_one_triangle();
        let ctx = EvalContext::new(&cameras, &mesh, &cfg);
        let score = cluster_score(&ctx, &patches, 0, &[1, 2], &[0]);
        let direct = triangle_fulfillment(&ctx, 0, &patches[0], 0, &[1, 2]).f_total;
        assert_relative_eq!(score, direct, epsilon = 1e-15);
        assert_eq!(cluster_score(&ctx, &patches, 0, &[1, 2], &[]), 0.0);
    }

    /// Random abstract instances: patches with hand-planted cluster values.
    pub(crate) fn random_instance(
        rng: &mut impl Rng,
        n_clusters: usize,
        n_triangles: usize,
    ) -> (Vec<TrianglePatch>, Vec<TriangleId>, Vec<ClusterId>) {
        let mut patches = vec![TrianglePatch::default(); n_triangles];
        for patch in &mut patches {
            for v in 0..n_clusters as u32 {
                if rng.gen_bool(0.6) {
                    patch
                        .cluster_fulfillment
                        .insert(v, rng.gen_range(0.0..1.0));
                }
            }
        }
        let eligible: Vec<TriangleId> = (0..n_triangles as u32).collect();
        let clusters: Vec<ClusterId> = (0..n_clusters as u32).collect();
        (patches, eligible, clusters)
    }

    #[test]
    fn objective_empty_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (patches, eligible, _) = random_instance(&mut rng, 4, 10);
        assert_eq!(objective(&patches, &eligible, &[]), 0.0);
    }

    #[test]
    fn objective_uses_max_not_sum() {
        let mut patches = vec![TrianglePatch::default(); 3];
        for (t, patch) in patches.iter_mut().enumerate() {
            patch.cluster_fulfillment.insert(0, 0.5);
            patch.cluster_fulfillment.insert(1, if t == 0 { 0.9 } else { 0.2 });
        }
        let eligible = vec![0, 1, 2];
        // per-triangle max: (0.9, 0.5, 0.5) -> mean 19/30
        assert_relative_eq!(
            objective(&patches, &eligible, &[0, 1]),
            (0.9 + 0.5 + 0.5) / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn objective_monotone_and_submodular_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let (patches, eligible, clusters) = random_instance(&mut rng, 6, 40);
            // exhaustive subset pairs A subset of B
            let n = clusters.len();
            for a_mask in 0u32..(1 << n) {
                for add in 0..n {
                    if a_mask & (1 << add) != 0 {
                        continue;
                    }
                    let b_mask = a_mask | rng.gen_range(0..(1u32 << n)) & !(1 << add);
                    let set = |mask: u32| -> Vec<ClusterId> {
                        (0..n as u32).filter(|v| mask & (1 << v) != 0).collect()
                    };
                    let (a, b) = (set(a_mask), set(b_mask | a_mask));
                    let v = add as u32;
                    let mut av = a.clone();
                    av.push(v);
                    let mut bv = b.clone();
                    bv.push(v);
                    let fa = objective(&patches, &eligible, &a);
                    let fb = objective(&patches, &eligible, &b);
                    let fav = objective(&patches, &eligible, &av);
                    let fbv = objective(&patches, &eligible, &bv);
                    assert!(fb + 1e-12 >= fa, "monotonicity violated");
                    assert!(
                        (fav - fa) + 1e-12 >= (fbv - fb),
                        "submodularity violated"
                    );
                }
            }
        }
    }

    #[test]
    fn gain_equals_objective_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (mut patches, eligible, clusters) = random_instance(&mut rng, 6, 30);
            let selected: Vec<ClusterId> = clusters
                .iter()
                .copied()
                .filter(|_| rng.gen_bool(0.4))
                .collect();
            for t in &eligible {
                let patch = &mut patches[*t as usize];
                patch.current_fulfillment = selected
                    .iter()
                    .map(|v| patch.cluster_fulfillment.get(v).copied().unwrap_or(0.0))
                    .fold(0.0, f64::max);
            }
            for &v in &clusters {
                let tris: Vec<TriangleId> = eligible
                    .iter()
                    .copied()
                    .filter(|t| patches[*t as usize].cluster_fulfillment.contains_key(&v))
                    .collect();
                let g = gain(&patches, v, &tris, eligible.len());
                let mut with = selected.clone();
                with.push(v);
                let diff = objective(&patches, &eligible, &with)
                    - objective(&patches, &eligible, &selected);
                assert!((g - diff).abs() <= 1e-12, "gain {g} vs diff {diff}");
            }
        }
    }

    #[test]
    fn gain_of_selected_cluster_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (mut patches, eligible, _) = random_instance(&mut rng, 4, 20);
        for t in &eligible {
            let patch = &mut patches[*t as usize];
            patch.current_fulfillment =
                patch.cluster_fulfillment.get(&2).copied().unwrap_or(0.0);
        }
        let tris: Vec<TriangleId> = eligible.clone();
        assert_eq!(gain(&patches, 2, &tris, eligible.len()), 0.0);
    }
}

