//! Synthetic evaluation: generated terrain scenes with occluders and
//! regular camera rigs, Bernoulli match simulation driven by the pairwise
//! confidences, and strategy comparison tables.

use std::collections::HashMap;

use nalgebra::Point3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bvh::Bvh;
use crate::confidence::{
    angle_hat, cache_unaries, pairwise_confidence, ConfidenceModel, ANGLE_BINS,
    ANGLE_BIN_WIDTH_DEG,
};
use crate::error::{Error, Result};
use crate::fulfillment::{f_cov, f_res, f_unc, EvalContext, ViewCluster};
use crate::partner::{build_clusters, build_connectivity, sample_triangles, ConnectivityIndex};
use crate::ranking::{precompute_cluster_fulfillments, rank, FulfillmentCache, RankingResult};
use crate::scene::{
    build_patches, Camera, CameraId, ClusterId, QualityConfig, SparsePoint, SparsePointCloud,
    SurfaceMesh, TriangleId, TrianglePatch,
};
use crate::visibility::{apply_visibility, compute_visibility};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum RigSpec {
    /// Nadir grid at fixed altitude.
    Grid { nx: usize, ny: usize, altitude: f64 },
    /// Hemisphere of cameras aimed at the terrain centroid.
    Dome { count: usize, radius: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneSpec {
    /// Terrain side length, meters.
    pub extent: f64,
    /// Terrain grid resolution (cells per side).
    pub terrain_cells: usize,
    /// Heightfield amplitude, meters.
    pub amplitude: f64,
    /// Number of box occluders planted on the terrain.
    pub occluders: usize,
    pub rig: RigSpec,
    pub focal: f64,
    pub image_size: u32,
    pub quality: QualityConfig,
}

impl Default for SceneSpec {
    /// Roughly 2000 terrain triangles with occluders and a 200-camera grid.
    fn default() -> Self {
        SceneSpec {
            extent: 10.0,
            terrain_cells: 31,
            amplitude: 0.4,
            occluders: 8,
            rig: RigSpec::Grid {
                nx: 20,
                ny: 10,
                altitude: 10.0,
            },
            focal: 1000.0,
            image_size: 1000,
            quality: QualityConfig {
                gsd_desired: 0.02,
                accuracy_desired: 0.02,
                partners: 5,
                ..QualityConfig::default()
            },
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.extent <= 0.0 || self.terrain_cells == 0 {
            return Err(Error::Config("scene extent and terrain_cells must be positive".into()));
        }
        if self.focal <= 0.0 || self.image_size == 0 {
            return Err(Error::Config("camera focal and image size must be positive".into()));
        }
        match self.rig {
            RigSpec::Grid { nx, ny, altitude } => {
                if nx == 0 || ny == 0 || altitude <= 0.0 {
                    return Err(Error::Config("grid rig must have positive dimensions".into()));
                }
            }
            RigSpec::Dome { count, radius } => {
                if count == 0 || radius <= 0.0 {
                    return Err(Error::Config("dome rig must have positive dimensions".into()));
                }
            }
        }
        self.quality.validate()
    }
}

/// Per-camera planted base quality times the angle hat; the synthetic
/// stand-in for a trained predictor.
#[derive(Debug, Clone)]
pub struct PlantedModel {
    pub camera_scale: HashMap<CameraId, f64>,
}

impl ConfidenceModel for PlantedModel {
    fn unary(
        &self,
        camera: &Camera,
        _vertices: &[Point3<f64>; 3],
        _patch: &TrianglePatch,
    ) -> [f64; ANGLE_BINS] {
        let scale = self.camera_scale.get(&camera.id).copied().unwrap_or(1.0);
        let mut out = [0.0; ANGLE_BINS];
        for (b, v) in out.iter_mut().enumerate() {
            *v = (angle_hat((b as f64 + 0.5) * ANGLE_BIN_WIDTH_DEG) * scale).clamp(0.0, 1.0);
        }
        out
    }
}

/// Fully prepared synthetic scene: geometry, rig, visibility, cached
/// unary confidences, and the sparse cloud derived from visibility.
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub cameras: Vec<Camera>,
    pub mesh: SurfaceMesh,
    pub patches: Vec<TrianglePatch>,
    pub cloud: SparsePointCloud,
    pub model: PlantedModel,
    /// Triangle ids covered by occluder boxes (excluded from the
    /// everything-visible expectation).
    pub occluder_triangles: Vec<TriangleId>,
}

fn terrain_height(x: f64, y: f64, amplitude: f64, extent: f64, phases: &[f64; 6]) -> f64 {
    let k = std::f64::consts::TAU / extent;
    amplitude
        * ((k * x + phases[0]).sin() * 0.5
            + (k * y * 1.7 + phases[1]).sin() * 0.3
            + (k * (x + y) * 0.9 + phases[2]).sin() * 0.2
            + (k * x * 2.3 + phases[3]).cos() * 0.15
            + (k * y * 0.6 + phases[4]).cos() * 0.25
            + (k * (x - y) * 1.3 + phases[5]).sin() * 0.1)
}

fn push_box(
    vertices: &mut Vec<Point3<f64>>,
    triangles: &mut Vec<[u32; 3]>,
    center: (f64, f64),
    half: f64,
    z0: f64,
    z1: f64,
) {
    let base = vertices.len() as u32;
    let (cx, cy) = center;
    // 8 corners, bottom then top
    for &z in &[z0, z1] {
        vertices.push(Point3::new(cx - half, cy - half, z));
        vertices.push(Point3::new(cx + half, cy - half, z));
        vertices.push(Point3::new(cx + half, cy + half, z));
        vertices.push(Point3::new(cx - half, cy + half, z));
    }
    let quad = |triangles: &mut Vec<[u32; 3]>, a: u32, b: u32, c: u32, d: u32| {
        triangles.push([a, b, c]);
        triangles.push([a, c, d]);
    };
    // sides, outward winding
    quad(triangles, base, base + 1, base + 5, base + 4); // -y
    quad(triangles, base + 1, base + 2, base + 6, base + 5); // +x
    quad(triangles, base + 2, base + 3, base + 7, base + 6); // +y
    quad(triangles, base + 3, base, base + 4, base + 7); // -x
    // top, +z winding
    quad(triangles, base + 4, base + 5, base + 6, base + 7);
}

/// Deterministic scene generation for a given seed.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: [f64; 6] = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));

    // terrain heightfield, normals up
    let n = spec.terrain_cells;
    let step = spec.extent / n as f64;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let (x, y) = (i as f64 * step, j as f64 * step);
            vertices.push(Point3::new(
                x,
                y,
                terrain_height(x, y, spec.amplitude, spec.extent, &phases),
            ));
        }
    }
    let idx = |i: usize, j: usize| (j * (n + 1) + i) as u32;
    for j in 0..n {
        for i in 0..n {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i, j + 1)]);
            triangles.push([idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let terrain_triangles = triangles.len();

    for _ in 0..spec.occluders {
        let cx = rng.gen_range(0.15 * spec.extent..0.85 * spec.extent);
        let cy = rng.gen_range(0.15 * spec.extent..0.85 * spec.extent);
        let half = rng.gen_range(0.01 * spec.extent..0.03 * spec.extent);
        let z0 = terrain_height(cx, cy, spec.amplitude, spec.extent, &phases) - 0.05;
        let height = rng.gen_range(0.08 * spec.extent..0.2 * spec.extent);
        push_box(
            &mut vertices,
            &mut triangles,
            (cx, cy),
            half,
            z0,
            z0 + height,
        );
    }
    let occluder_triangles: Vec<TriangleId> =
        (terrain_triangles as u32..triangles.len() as u32).collect();
    let mesh = SurfaceMesh {
        vertices,
        triangles,
    }
    .without_degenerate();

    // camera rig
    let mid = spec.extent / 2.0;
    let cameras: Vec<Camera> = match spec.rig {
        RigSpec::Grid { nx, ny, altitude } => {
            let mut cams = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    let x = spec.extent * (i as f64 + 0.5) / nx as f64;
                    let y = spec.extent * (j as f64 + 0.5) / ny as f64;
                    let center = Point3::new(x, y, altitude);
                    // nadir view: aim straight down
                    cams.push(Camera::look_at(
                        (j * nx + i) as CameraId,
                        center,
                        Point3::new(x, y, 0.0),
                        spec.focal,
                        spec.focal,
                        spec.image_size,
                        spec.image_size,
                    ));
                }
            }
            cams
        }
        RigSpec::Dome { count, radius } => {
            let target = Point3::new(mid, mid, 0.0);
            // Fibonacci points on the upper hemisphere
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            (0..count)
                .map(|i| {
                    let z = (i as f64 + 0.5) / count as f64; // (0, 1)
                    let r = (1.0 - z * z).sqrt();
                    let theta = golden * i as f64;
                    let center = Point3::new(
                        mid + radius * r * theta.cos(),
                        mid + radius * r * theta.sin(),
                        radius * z.max(0.15),
                    );
                    Camera::look_at(
                        i as CameraId,
                        center,
                        target,
                        spec.focal,
                        spec.focal,
                        spec.image_size,
                        spec.image_size,
                    )
                })
                .collect()
        }
    };

    let mut patches = build_patches(&mesh);
    let bvh = Bvh::build(&mesh);
    let table = compute_visibility(&mesh, &patches, &bvh, &cameras);
    apply_visibility(&mut patches, &table);

    // sparse cloud at triangle centroids, tracks from visibility
    let cloud = SparsePointCloud {
        points: patches
            .iter()
            .filter(|p| p.visible_cameras.len() >= 2)
            .map(|p| SparsePoint {
                position: p.centroid,
                track: p.visible_cameras.clone(),
            })
            .collect(),
    };

    let model = PlantedModel {
        camera_scale: cameras
            .iter()
            .map(|c| (c.id, rng.gen_range(0.6..1.0)))
            .collect(),
    };
    cache_unaries(&model, &mesh, &mut patches, &cameras);

    Ok(SyntheticScene {
        spec: spec.clone(),
        cameras,
        mesh,
        patches,
        cloud,
        model,
        occluder_triangles,
    })
}

/// Clusters plus fulfillment cache for a generated scene.
pub struct PreparedScene<'a> {
    pub ctx: EvalContext<'a>,
    pub patches: Vec<TrianglePatch>,
    pub connectivity: ConnectivityIndex,
    pub clusters: Vec<ViewCluster>,
    pub cache: FulfillmentCache,
}

pub fn prepare(scene: &SyntheticScene) -> PreparedScene<'_> {
    let ctx = EvalContext::new(&scene.cameras, &scene.mesh, &scene.spec.quality);
    let mut patches = scene.patches.clone();
    let connectivity = build_connectivity(&scene.cloud);
    let sampled = sample_triangles(
        scene.mesh.triangles.len(),
        scene.spec.quality.triangle_fraction,
        scene.spec.quality.rng_seed,
    );
    let (clusters, _skipped) = build_clusters(&ctx, &patches, &connectivity, &sampled);
    let cache = precompute_cluster_fulfillments(&ctx, &mut patches, &clusters);
    PreparedScene {
        ctx,
        patches,
        connectivity,
        clusters,
        cache,
    }
}

/// One Bernoulli trial of the at-least-two-successes event underlying the
/// k-partner confidence.
pub fn simulate_two_success(pairwise: &[f64], rng: &mut impl Rng) -> bool {
    let mut successes = 0;
    for &p in pairwise {
        if rng.gen_bool(p.clamp(0.0, 1.0)) {
            successes += 1;
            if successes >= 2 {
                return true;
            }
        }
    }
    false
}

/// Per-triangle realized fulfillment values after simulating match
/// outcomes for every ranked cluster.
#[derive(Debug, Clone)]
pub struct RealizedFulfillment {
    /// (rank, realized cumulative objective) per ranking prefix.
    pub curve: Vec<(usize, f64)>,
    /// Final realized per-triangle values over the eligible set.
    pub per_triangle: Vec<f64>,
}

/// Replace the predicted confidence with simulated 0/1 match outcomes: a
/// triangle measurement is valid when at least two partner matches succeed.
pub fn simulate_realized(
    ranking: &RankingResult,
    scene: &SyntheticScene,
    prepared: &PreparedScene,
    seed: u64,
) -> RealizedFulfillment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx = &prepared.ctx;
    let eligible = &prepared.cache.eligible;
    let total = eligible.len();
    let mut current = vec![0.0f64; total];
    let mut curve = Vec::with_capacity(ranking.entries.len());
    let mut cumulative = 0.0f64;

    for entry in &ranking.entries {
        let v = &entry.cluster;
        let key = ctx.camera(v.key_view);
        let mut cluster_cams = vec![v.key_view];
        cluster_cams.extend_from_slice(&v.partners);
        for (slot, &t) in eligible.iter().enumerate() {
            let patch = &scene.patches[t as usize];
            if !patch.sees(v.key_view) {
                continue;
            }
            let pairwise: Vec<f64> = v
                .partners
                .iter()
                .map(|&p| pairwise_confidence(key, ctx.camera(p), patch))
                .collect();
            if !simulate_two_success(&pairwise, &mut rng) {
                continue;
            }
            let res = f_res(ctx, t as usize, patch, v.key_view);
            let unc = f_unc(ctx, patch, &cluster_cams);
            let cov = f_cov(patch, &cluster_cams, ctx.config.min_cameras);
            let alpha = ctx.config.alpha;
            let realized = (alpha * res + (1.0 - alpha) * unc) * cov;
            if realized > current[slot] {
                cumulative += (realized - current[slot]) / total as f64;
                current[slot] = realized;
            }
        }
        curve.push((entry.rank, cumulative));
    }
    RealizedFulfillment {
        curve,
        per_triangle: current,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Ours,
    Random,
    MaxPoints,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Ours => "ours",
            Strategy::Random => "random",
            Strategy::MaxPoints => "max_points",
        }
    }
}

pub const DECILES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Clusters needed to reach each decile of the maximal achievable
/// fulfillment, for one ordering of the clusters.
fn clusters_per_decile(
    patches: &[TrianglePatch],
    cache: &FulfillmentCache,
    order: &[usize],
    clusters: &[ViewCluster],
    max_value: f64,
) -> Vec<usize> {
    let total = cache.eligible.len();
    let slot_of: HashMap<TriangleId, usize> = cache
        .eligible
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, i))
        .collect();
    let mut current = vec![0.0f64; total];
    let mut cumulative = 0.0f64;
    let mut needed = vec![usize::MAX; DECILES.len()];
    for (step, &pos) in order.iter().enumerate() {
        let id = clusters[pos].id;
        for &t in &cache.cluster_triangles[pos] {
            let f = patches[t as usize]
                .cluster_fulfillment
                .get(&id)
                .copied()
                .unwrap_or(0.0);
            let slot = slot_of[&t];
            if f > current[slot] {
                cumulative += (f - current[slot]) / total as f64;
                current[slot] = f;
            }
        }
        for (d, &decile) in DECILES.iter().enumerate() {
            if needed[d] == usize::MAX && cumulative + 1e-12 >= decile * max_value {
                needed[d] = step + 1;
            }
        }
        if needed.iter().all(|&m| m != usize::MAX) {
            break;
        }
    }
    // unreachable deciles cost the full budget
    for m in &mut needed {
        if *m == usize::MAX {
            *m = order.len();
        }
    }
    needed
}

#[derive(Debug, Clone, Serialize)]
pub struct DecileRow {
    pub strategy: String,
    pub decile: f64,
    pub clusters_mean: f64,
    pub clusters_std: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ComparisonTable {
    pub rows: Vec<DecileRow>,
    /// Raw per-seed cluster counts: strategy -> seed index -> decile index.
    pub raw: HashMap<&'static str, Vec<Vec<usize>>>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,decile,clusters_mean,clusters_std\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.strategy, r.decile, r.clusters_mean, r.clusters_std
            ));
        }
        out
    }
}

/// Multi-seed comparison of ranking strategies on freshly generated scenes.
pub fn compare_strategies(
    spec: &SceneSpec,
    strategies: &[Strategy],
    seeds: &[u64],
) -> Result<ComparisonTable> {
    if strategies.len() < 2 {
        return Err(Error::Config("need at least 2 strategies to compare".into()));
    }
    let mut raw: HashMap<&'static str, Vec<Vec<usize>>> = HashMap::new();
    for &seed in seeds {
        let scene = generate_scene(spec, seed)?;
        let mut prepared = prepare(&scene);
        if prepared.clusters.is_empty() {
            return Err(Error::Config("scene produced no view clusters".into()));
        }
        let max_value = {
            let all: Vec<ClusterId> = prepared.clusters.iter().map(|c| c.id).collect();
            crate::fulfillment::objective(&prepared.patches, &prepared.cache.eligible, &all)
        };

        for &strategy in strategies {
            let order: Vec<usize> = match strategy {
                Strategy::Ours => {
                    let mut patches = prepared.patches.clone();
                    for p in &mut patches {
                        p.current_fulfillment = 0.0;
                    }
                    let result = rank(&prepared.clusters, &mut patches, &prepared.cache);
                    let pos_of: HashMap<ClusterId, usize> = prepared
                        .clusters
                        .iter()
                        .enumerate()
                        .map(|(i, c)| (c.id, i))
                        .collect();
                    result
                        .entries
                        .iter()
                        .map(|e| pos_of[&e.cluster.id])
                        .collect()
                }
                Strategy::Random => {
                    let mut order: Vec<usize> = (0..prepared.clusters.len()).collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead_beef);
                    order.shuffle(&mut rng);
                    order
                }
                Strategy::MaxPoints => {
                    // greedily take the cluster whose key camera has the most
                    // connected sparse points
                    let mut order: Vec<usize> = (0..prepared.clusters.len()).collect();
                    order.sort_by_key(|&pos| {
                        let key = prepared.clusters[pos].key_view;
                        let points = prepared
                            .connectivity
                            .camera_points
                            .get(&key)
                            .copied()
                            .unwrap_or(0);
                        (std::cmp::Reverse(points), key)
                    });
                    order
                }
            };
            let needed = clusters_per_decile(
                &prepared.patches,
                &prepared.cache,
                &order,
                &prepared.clusters,
                max_value,
            );
            raw.entry(strategy.name()).or_default().push(needed);
        }
        // reset mutation side effects before the next seed
        for p in &mut prepared.patches {
            p.current_fulfillment = 0.0;
        }
    }

    let mut rows = Vec::new();
    for &strategy in strategies {
        let per_seed = &raw[strategy.name()];
        for (d, &decile) in DECILES.iter().enumerate() {
            let counts: Vec<f64> = per_seed.iter().map(|s| s[d] as f64).collect();
            let mean = counts.iter().sum::<f64>() / counts.len() as f64;
            let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>()
                / counts.len() as f64;
            rows.push(DecileRow {
                strategy: strategy.name().to_string(),
                decile,
                clusters_mean: mean,
                clusters_std: var.sqrt(),
            });
        }
    }
    Ok(ComparisonTable { rows, raw })
}
