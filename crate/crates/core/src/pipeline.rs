//! End-to-end pipeline: mesh preparation, visibility, confidence caching,
//! cluster construction, ranking, and output writing.

use std::collections::HashMap;
use std::path::Path;

use crate::bvh::Bvh;
use crate::confidence::{cache_unaries, ConfidenceModel, FileBackedModel, HeuristicModel};
use crate::error::Result;
use crate::fulfillment::{EvalContext, ViewCluster};
use crate::io::{read_confidence_dir, write_outputs};
use crate::meshprep::{simplify, subdivide};
use crate::partner::{build_clusters, build_connectivity, sample_triangles};
use crate::ranking::{fulfillment_curve, precompute_cluster_fulfillments, rank, RankingResult};
use crate::scene::{
    build_patches, Camera, CameraId, QualityConfig, SparsePointCloud, SurfaceMesh, TrianglePatch,
};
use crate::visibility::{apply_visibility, compute_visibility};

/// Confidence source for the pipeline.
pub enum ModelChoice {
    /// Angle hat scaled by local image texture (or a flat gain when no
    /// images are available).
    Heuristic,
    /// Precomputed per-camera confidence grids loaded from a directory.
    Grids(HashMap<CameraId, crate::confidence::ConfidenceGrid>),
}

impl ModelChoice {
    pub fn from_grid_dir(dir: &Path) -> Result<ModelChoice> {
        Ok(ModelChoice::Grids(read_confidence_dir(dir)?))
    }
}

/// Simplify toward the working resolution, then subdivide so every edge
/// respects the upper length bound.
pub fn prepare_mesh(mesh: &SurfaceMesh, config: &QualityConfig) -> SurfaceMesh {
    let simplified = simplify(mesh, config.gsd_desired, config.simplify_factor);
    subdivide(&simplified.mesh, config.gsd_desired, config.subdivide_factor)
}

pub struct PipelineOutput {
    pub mesh: SurfaceMesh,
    pub ranking: RankingResult,
    pub curve: Vec<(usize, f64, f64)>,
    /// Final per-triangle fulfillment for every mesh triangle (zero for
    /// triangles outside the eligible set).
    pub final_fulfillment: Vec<f64>,
    pub clusters: Vec<ViewCluster>,
    /// Key cameras skipped for lack of connected neighbors.
    pub skipped_keys: Vec<CameraId>,
}

fn run_with_model(
    cameras: &[Camera],
    cloud: &SparsePointCloud,
    mesh: SurfaceMesh,
    config: &QualityConfig,
    model: &dyn ConfidenceModel,
) -> Result<PipelineOutput> {
    let mut patches = build_patches(&mesh);
    let bvh = Bvh::build(&mesh);
    let table = compute_visibility(&mesh, &patches, &bvh, cameras);
    apply_visibility(&mut patches, &table);
    cache_unaries(model, &mesh, &mut patches, cameras);

    let connectivity = build_connectivity(cloud);
    let sampled = sample_triangles(mesh.triangles.len(), config.triangle_fraction, config.rng_seed);

    let ctx = EvalContext::new(cameras, &mesh, config);
    let (clusters, skipped_keys) = build_clusters(&ctx, &patches, &connectivity, &sampled);
    let cache = precompute_cluster_fulfillments(&ctx, &mut patches, &clusters);
    let ranking = rank(&clusters, &mut patches, &cache);
    let curve = fulfillment_curve(&ranking);
    let final_fulfillment = finalize_fulfillment(&patches);

    Ok(PipelineOutput {
        mesh,
        ranking,
        curve,
        final_fulfillment,
        clusters,
        skipped_keys,
    })
}

fn finalize_fulfillment(patches: &[TrianglePatch]) -> Vec<f64> {
    patches.iter().map(|p| p.current_fulfillment).collect()
}

/// Full pipeline on already-loaded inputs. Set `prep` to run mesh
/// preparation before ranking.
pub fn run_rank(
    cameras: &[Camera],
    cloud: &SparsePointCloud,
    mesh: &SurfaceMesh,
    config: &QualityConfig,
    model: &ModelChoice,
    prep: bool,
) -> Result<PipelineOutput> {
    config.validate()?;
    for cam in cameras {
        cam.validate()?;
    }
    cloud.validate(cameras)?;
    mesh.validate()?;

    let working = if prep {
        prepare_mesh(mesh, config)
    } else {
        mesh.clone().without_degenerate()
    };

    match model {
        ModelChoice::Heuristic => {
            let m = HeuristicModel::with_images(cameras);
            run_with_model(cameras, cloud, working, config, &m)
        }
        ModelChoice::Grids(grids) => {
            let m = FileBackedModel {
                grids: grids.clone(),
            };
            run_with_model(cameras, cloud, working, config, &m)
        }
    }
}

/// Run the pipeline and write ranking.json, curve.csv, and
/// fulfillment.ply into `out_dir`.
pub fn run_rank_to_dir(
    cameras: &[Camera],
    cloud: &SparsePointCloud,
    mesh: &SurfaceMesh,
    config: &QualityConfig,
    model: &ModelChoice,
    prep: bool,
    out_dir: &Path,
) -> Result<PipelineOutput> {
    let output = run_rank(cameras, cloud, mesh, config, model, prep)?;
    write_outputs(
        config,
        &output.ranking,
        &output.curve,
        &output.mesh,
        &output.final_fulfillment,
        out_dir,
    )?;
    Ok(output)
}
