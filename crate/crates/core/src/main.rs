use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use viewrank::confidence::{k_partner_confidence, k_partner_confidence_alternating, tree_oracle};
use viewrank::error::{Error, Result};
use viewrank::io::{load_scene, read_ply, write_ply, ScenePaths};
use viewrank::meshprep::MeshStats;
use viewrank::pipeline::{prepare_mesh, run_rank_to_dir, ModelChoice};
use viewrank::scene::QualityConfig;
use viewrank::simeval::{compare_strategies, SceneSpec, Strategy};

#[derive(Parser)]
#[command(name = "viewrank", version, about = "View-cluster selection and ranking for multi-view stereo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct QualityArgs {
    /// Desired ground sampling distance, meters
    #[arg(long)]
    gsd: Option<f64>,
    /// Desired triangulation accuracy, meters
    #[arg(long)]
    accuracy: Option<f64>,
    /// Resolution/accuracy blend weight in [0,1]
    #[arg(long)]
    alpha: Option<f64>,
    /// Minimum cluster cameras that must see a triangle
    #[arg(long = "min-cameras")]
    min_cameras: Option<usize>,
    /// Partner views per cluster
    #[arg(long)]
    partners: Option<usize>,
    /// Connectivity pool size per key view
    #[arg(long = "top-n")]
    top_n: Option<usize>,
    /// Partner combinations scored per key view
    #[arg(long)]
    combinations: Option<usize>,
    /// Score every 1/fraction-th triangle during partner selection
    #[arg(long = "triangle-fraction")]
    triangle_fraction: Option<usize>,
    /// RNG seed for all sampling
    #[arg(long)]
    seed: Option<u64>,
}

impl QualityArgs {
    fn apply(&self, mut config: QualityConfig) -> QualityConfig {
        if let Some(v) = self.gsd {
            config.gsd_desired = v;
        }
        if let Some(v) = self.accuracy {
            config.accuracy_desired = v;
        }
        if let Some(v) = self.alpha {
            config.alpha = v;
        }
        if let Some(v) = self.min_cameras {
            config.min_cameras = v;
        }
        if let Some(v) = self.partners {
            config.partners = v;
        }
        if let Some(v) = self.top_n {
            config.top_connected = v;
        }
        if let Some(v) = self.combinations {
            config.combinations = v;
        }
        if let Some(v) = self.triangle_fraction {
            config.triangle_fraction = v;
        }
        if let Some(v) = self.seed {
            config.rng_seed = v;
        }
        config
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simplify and subdivide a mesh to the working resolution
    Prep {
        /// Input mesh (PLY, ascii or binary little-endian)
        #[arg(long)]
        mesh: PathBuf,
        /// Output mesh (ascii PLY)
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        quality: QualityArgs,
    },
    /// Run the full selection and ranking pipeline
    Rank {
        /// Camera network (JSON)
        #[arg(long)]
        cameras: PathBuf,
        /// Sparse point cloud with tracks (JSON)
        #[arg(long)]
        cloud: PathBuf,
        /// Surface mesh (PLY)
        #[arg(long)]
        mesh: PathBuf,
        /// Output directory for ranking.json, curve.csv, fulfillment.ply
        #[arg(long)]
        out: PathBuf,
        /// Directory of per-camera confidence grids (<camera_id>.mvsc);
        /// defaults to the built-in heuristic predictor
        #[arg(long)]
        grids: Option<PathBuf>,
        /// Skip mesh preparation and rank on the input mesh as-is
        #[arg(long = "no-prep")]
        no_prep: bool,
        #[command(flatten)]
        quality: QualityArgs,
    },
    /// Generate synthetic scenes and compare ranking strategies
    Simulate {
        /// Output CSV path for the strategy comparison table
        #[arg(long)]
        out: PathBuf,
        /// Number of independently seeded scenes
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// First scene seed
        #[arg(long = "base-seed", default_value_t = 0)]
        base_seed: u64,
        /// Terrain grid cells per side
        #[arg(long = "terrain-cells")]
        terrain_cells: Option<usize>,
        /// Number of box occluders
        #[arg(long)]
        occluders: Option<usize>,
        #[command(flatten)]
        quality: QualityArgs,
    },
    /// Evaluate the at-least-two-successes confidence by three
    /// independent routes
    Oracle {
        /// Comma-separated pairwise probabilities, e.g. 0.3,0.8,0.5
        #[arg(long)]
        probs: String,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prep { mesh, out, quality } => {
            let config = quality.apply(QualityConfig::default());
            config.validate()?;
            let input = read_ply(&mesh)?;
            input.validate()?;
            let before = MeshStats::of(&input);
            let prepped = prepare_mesh(&input, &config);
            let after = MeshStats::of(&prepped);
            write_ply(&out, &prepped, None)?;
            println!(
                "prep: {} -> {} triangles, 5th-percentile edge {:.4} -> {:.4}",
                before.triangle_count, after.triangle_count, before.percentile_05, after.percentile_05
            );
        }
        Command::Rank {
            cameras,
            cloud,
            mesh,
            out,
            grids,
            no_prep,
            quality,
        } => {
            let config = quality.apply(QualityConfig::default());
            let (cams, points, surface) = load_scene(&ScenePaths {
                cameras,
                cloud,
                mesh,
            })?;
            let model = match grids {
                Some(dir) => ModelChoice::from_grid_dir(&dir)?,
                None => ModelChoice::Heuristic,
            };
            let output =
                run_rank_to_dir(&cams, &points, &surface, &config, &model, !no_prep, &out)?;
            println!(
                "rank: {} clusters ranked over {} triangles ({} key views skipped)",
                output.ranking.entries.len(),
                output.mesh.triangles.len(),
                output.skipped_keys.len()
            );
            if let Some(last) = output.ranking.entries.last() {
                println!("final fulfillment: {:.6}", last.cumulative_fulfillment);
            }
            println!("outputs written to {}", out.display());
        }
        Command::Simulate {
            out,
            seeds,
            base_seed,
            terrain_cells,
            occluders,
            quality,
        } => {
            let mut spec = SceneSpec::default();
            if let Some(v) = terrain_cells {
                spec.terrain_cells = v;
            }
            if let Some(v) = occluders {
                spec.occluders = v;
            }
            spec.quality = quality.apply(spec.quality);
            let seed_list: Vec<u64> = (0..seeds).map(|i| base_seed + i).collect();
            let table = compare_strategies(
                &spec,
                &[Strategy::Ours, Strategy::Random, Strategy::MaxPoints],
                &seed_list,
            )?;
            std::fs::write(&out, table.to_csv())?;
            println!(
                "simulate: {} scenes, table written to {}",
                seed_list.len(),
                out.display()
            );
        }
        Command::Oracle { probs } => {
            let parsed: std::result::Result<Vec<f64>, _> =
                probs.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let p = parsed.map_err(|e| Error::Config(format!("bad probability list: {e}")))?;
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config("probabilities must lie in [0,1]".into()));
            }
            let stable = k_partner_confidence(&p)?;
            let alternating = k_partner_confidence_alternating(&p)?;
            let tree = tree_oracle(&p);
            println!("stable:      {stable:.15}");
            println!("alternating: {alternating:.15}");
            println!("tree:        {tree:.15}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
