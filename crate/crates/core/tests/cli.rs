//! End-to-end checks through the on-disk formats and the CLI binary.

use std::process::Command;

use viewrank::io::{read_ranking, write_cameras, write_cloud, write_ply};
use viewrank::simeval::{generate_scene, RigSpec, SceneSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_viewrank"))
}

fn scene_on_disk(dir: &std::path::Path) -> SceneSpec {
    let spec = SceneSpec {
        terrain_cells: 8,
        occluders: 1,
        rig: RigSpec::Grid {
            nx: 5,
            ny: 5,
            altitude: 10.0,
        },
        ..SceneSpec::default()
    };
    let scene = generate_scene(&spec, 5).unwrap();
    write_cameras(&dir.join("cameras.json"), &scene.cameras).unwrap();
    write_cloud(&dir.join("cloud.json"), &scene.cloud).unwrap();
    write_ply(&dir.join("mesh.ply"), &scene.mesh, None).unwrap();
    spec
}

#[test]
fn rank_command_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = scene_on_disk(dir.path());
    let out = dir.path().join("out");
    let status = bin()
        .args(["rank", "--no-prep"])
        .arg("--cameras")
        .arg(dir.path().join("cameras.json"))
        .arg("--cloud")
        .arg(dir.path().join("cloud.json"))
        .arg("--mesh")
        .arg(dir.path().join("mesh.ply"))
        .arg("--out")
        .arg(&out)
        .args(["--gsd", "0.02", "--accuracy", "0.02", "--partners", "5"])
        .status()
        .unwrap();
    assert!(status.success());
    let ranking = read_ranking(&out.join("ranking.json")).unwrap();
    assert!(!ranking.entries.is_empty());
    assert_eq!(ranking.config_echo.partners, 5);
    assert!((ranking.config_echo.gsd_desired - 0.02).abs() < 1e-15);
    assert!(out.join("curve.csv").exists());
    assert!(out.join("fulfillment.ply").exists());
    // ranks start at 1 and the curve has one row per entry plus a header
    let csv = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), ranking.entries.len() + 1);
    assert!(csv.starts_with("rank,cumulative_fulfillment,normalized"));
    let _ = spec;
}

#[test]
fn prep_command_round_trips_mesh() {
    let dir = tempfile::tempdir().unwrap();
    scene_on_disk(dir.path());
    let out = dir.path().join("prepped.ply");
    let status = bin()
        .arg("prep")
        .arg("--mesh")
        .arg(dir.path().join("mesh.ply"))
        .arg("--out")
        .arg(&out)
        .args(["--gsd", "0.05"])
        .status()
        .unwrap();
    assert!(status.success());
    let mesh = viewrank::io::read_ply(&out).unwrap();
    mesh.validate().unwrap();
    let bound = 100.0 * 0.05;
    for len in mesh.edge_lengths() {
        assert!(len < bound);
    }
}

#[test]
fn oracle_command_prints_three_routes() {
    let output = bin().args(["oracle", "--probs", "0.5,0.5,0.5"]).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("stable:"));
    assert!(text.contains("0.5"));
}

#[test]
fn exit_code_2_on_bad_config() {
    let status = bin()
        .args(["oracle", "--probs", "1.5,0.5"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let status = bin().args(["nonsense-subcommand"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn exit_code_3_on_unparseable_input() {
    let dir = tempfile::tempdir().unwrap();
    scene_on_disk(dir.path());
    std::fs::write(dir.path().join("cameras.json"), "{ not json").unwrap();
    let status = bin()
        .args(["rank", "--no-prep"])
        .arg("--cameras")
        .arg(dir.path().join("cameras.json"))
        .arg("--cloud")
        .arg(dir.path().join("cloud.json"))
        .arg("--mesh")
        .arg(dir.path().join("mesh.ply"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn simulate_command_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.csv");
    let status = bin()
        .arg("simulate")
        .arg("--out")
        .arg(&out)
        .args([
            "--seeds",
            "2",
            "--terrain-cells",
            "8",
            "--occluders",
            "1",
            "--combinations",
            "20",
            "--partners",
            "3",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("strategy,decile,clusters_mean,clusters_std"));
    for name in ["ours", "random", "max_points"] {
        assert!(csv.contains(name), "missing strategy {name}");
    }
}
