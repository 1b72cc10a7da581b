//! File formats: camera/sparse-cloud JSON, PLY meshes, binary confidence
//! grids, PGM images, and the ranking output files.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3};
use serde::{Deserialize, Serialize};

use crate::confidence::{ConfidenceGrid, ANGLE_BINS};
use crate::error::{Error, Result};
use crate::ranking::RankingResult;
use crate::scene::{Camera, QualityConfig, SparsePoint, SparsePointCloud, SurfaceMesh};

fn parse_err(path: &Path, location: impl Into<String>, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        location: location.into(),
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- cameras

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    id: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    /// Row-major world->camera rotation.
    #[serde(rename = "R")]
    rotation: [f64; 9],
    #[serde(rename = "C")]
    center: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<PathBuf>,
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = fs::read_to_string(path)?;
    let records: Vec<CameraRecord> = serde_json::from_str(&text)
        .map_err(|e| parse_err(path, format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    let mut cameras = Vec::with_capacity(records.len());
    let mut seen = std::collections::HashSet::new();
    for r in records {
        if !seen.insert(r.id) {
            return Err(Error::invariant(
                format!("camera {}", r.id),
                "duplicate camera id",
            ));
        }
        let cam = Camera {
            id: r.id,
            fx: r.fx,
            fy: r.fy,
            cx: r.cx,
            cy: r.cy,
            rotation: Matrix3::from_row_slice(&r.rotation),
            center: Point3::new(r.center[0], r.center[1], r.center[2]),
            width: r.width,
            height: r.height,
            image_path: r.image,
        };
        cam.validate()?;
        cameras.push(cam);
    }
    Ok(cameras)
}

pub fn write_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    let records: Vec<CameraRecord> = cameras
        .iter()
        .map(|c| CameraRecord {
            id: c.id,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: [
                c.rotation[(0, 0)],
                c.rotation[(0, 1)],
                c.rotation[(0, 2)],
                c.rotation[(1, 0)],
                c.rotation[(1, 1)],
                c.rotation[(1, 2)],
                c.rotation[(2, 0)],
                c.rotation[(2, 1)],
                c.rotation[(2, 2)],
            ],
            center: [c.center.x, c.center.y, c.center.z],
            image: c.image_path.clone(),
        })
        .collect();
    fs::write(path, serde_json::to_string_pretty(&records).unwrap())?;
    Ok(())
}

// ----------------------------------------------------------- sparse cloud

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CloudRecord {
    points: Vec<PointRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointRecord {
    xyz: [f64; 3],
    track: Vec<u32>,
}

pub fn read_cloud(path: &Path) -> Result<SparsePointCloud> {
    let text = fs::read_to_string(path)?;
    let record: CloudRecord = serde_json::from_str(&text)
        .map_err(|e| parse_err(path, format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    Ok(SparsePointCloud {
        points: record
            .points
            .into_iter()
            .map(|p| SparsePoint {
                position: Point3::new(p.xyz[0], p.xyz[1], p.xyz[2]),
                track: p.track,
            })
            .collect(),
    })
}

pub fn write_cloud(path: &Path, cloud: &SparsePointCloud) -> Result<()> {
    let record = CloudRecord {
        points: cloud
            .points
            .iter()
            .map(|p| PointRecord {
                xyz: [p.position.x, p.position.y, p.position.z],
                track: p.track.clone(),
            })
            .collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&record).unwrap())?;
    Ok(())
}

// -------------------------------------------------------------------- PLY

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<ScalarType> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn read_le(&self, data: &mut impl Read) -> std::io::Result<f64> {
        macro_rules! rd {
            ($t:ty, $n:expr) => {{
                let mut buf = [0u8; $n];
                data.read_exact(&mut buf)?;
                <$t>::from_le_bytes(buf) as f64
            }};
        }
        Ok(match self {
            ScalarType::I8 => rd!(i8, 1),
            ScalarType::U8 => rd!(u8, 1),
            ScalarType::I16 => rd!(i16, 2),
            ScalarType::U16 => rd!(u16, 2),
            ScalarType::I32 => rd!(i32, 4),
            ScalarType::U32 => rd!(u32, 4),
            ScalarType::F32 => rd!(f32, 4),
            ScalarType::F64 => rd!(f64, 8),
        })
    }
}

#[derive(Debug)]
enum PlyProperty {
    Scalar { name: String, ty: ScalarType },
    List { name: String, count_ty: ScalarType, item_ty: ScalarType },
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

/// Read an ASCII or binary-little-endian PLY mesh with vertex x/y/z and a
/// face vertex-index list. Extra properties are skipped.
pub fn read_ply(path: &Path) -> Result<SurfaceMesh> {
    let file = fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut lineno = 0usize;
    let mut read_line = |reader: &mut BufReader<fs::File>, lineno: &mut usize| -> Result<String> {
        line.clear();
        let n = reader.read_line(&mut line)?;
        *lineno += 1;
        if n == 0 {
            return Err(parse_err(path, format!("line {lineno}"), "unexpected end of file"));
        }
        Ok(line.trim().to_string())
    };

    let magic = read_line(&mut reader, &mut lineno)?;
    if magic != "ply" {
        return Err(parse_err(path, "line 1", "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let l = read_line(&mut reader, &mut lineno)?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.first().copied() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                format = match tokens.get(1).copied() {
                    Some("ascii") => Some(PlyFormat::Ascii),
                    Some("binary_little_endian") => Some(PlyFormat::BinaryLe),
                    other => {
                        return Err(parse_err(
                            path,
                            format!("line {lineno}"),
                            format!("unsupported format {other:?}"),
                        ))
                    }
                };
            }
            Some("element") => {
                let name = tokens.get(1).copied().unwrap_or_default().to_string();
                let count: usize = tokens
                    .get(2)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| parse_err(path, format!("line {lineno}"), "bad element count"))?;
                elements.push(PlyElement {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements.last_mut().ok_or_else(|| {
                    parse_err(path, format!("line {lineno}"), "property before element")
                })?;
                if tokens.get(1).copied() == Some("list") {
                    let count_ty = tokens
                        .get(2)
                        .and_then(|s| ScalarType::parse(s))
                        .ok_or_else(|| parse_err(path, format!("line {lineno}"), "bad list count type"))?;
                    let item_ty = tokens
                        .get(3)
                        .and_then(|s| ScalarType::parse(s))
                        .ok_or_else(|| parse_err(path, format!("line {lineno}"), "bad list item type"))?;
                    element.properties.push(PlyProperty::List {
                        name: tokens.get(4).copied().unwrap_or_default().to_string(),
                        count_ty,
                        item_ty,
                    });
                } else {
                    let ty = tokens
                        .get(1)
                        .and_then(|s| ScalarType::parse(s))
                        .ok_or_else(|| parse_err(path, format!("line {lineno}"), "bad property type"))?;
                    element.properties.push(PlyProperty::Scalar {
                        name: tokens.get(2).copied().unwrap_or_default().to_string(),
                        ty,
                    });
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(parse_err(
                    path,
                    format!("line {lineno}"),
                    format!("unknown header keyword '{other}'"),
                ))
            }
        }
    }
    let format =
        format.ok_or_else(|| parse_err(path, format!("line {lineno}"), "missing format line"))?;

    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    // ascii token stream shared across elements
    let mut ascii_tokens: Vec<String> = Vec::new();
    if format == PlyFormat::Ascii {
        let mut rest = String::new();
        reader.read_to_string(&mut rest)?;
        ascii_tokens = rest.split_whitespace().map(str::to_string).collect();
        ascii_tokens.reverse(); // pop from the back
    }
    let next_token = |tokens: &mut Vec<String>| -> Result<f64> {
        tokens
            .pop()
            .ok_or_else(|| parse_err(path, "body", "unexpected end of ascii data"))?
            .parse::<f64>()
            .map_err(|e| parse_err(path, "body", format!("bad number: {e}")))
    };

    for element in &elements {
        let is_vertex = element.name == "vertex";
        let is_face = element.name == "face";
        for _ in 0..element.count {
            let mut xyz = [0.0f64; 3];
            let mut face: Vec<u32> = Vec::new();
            for prop in &element.properties {
                match prop {
                    PlyProperty::Scalar { name, ty } => {
                        let v = match format {
                            PlyFormat::Ascii => next_token(&mut ascii_tokens)?,
                            PlyFormat::BinaryLe => ty.read_le(&mut reader)?,
                        };
                        if is_vertex {
                            match name.as_str() {
                                "x" => xyz[0] = v,
                                "y" => xyz[1] = v,
                                "z" => xyz[2] = v,
                                _ => {}
                            }
                        }
                    }
                    PlyProperty::List { name, count_ty, item_ty } => {
                        let n = match format {
                            PlyFormat::Ascii => next_token(&mut ascii_tokens)? as usize,
                            PlyFormat::BinaryLe => count_ty.read_le(&mut reader)? as usize,
                        };
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            let v = match format {
                                PlyFormat::Ascii => next_token(&mut ascii_tokens)?,
                                PlyFormat::BinaryLe => item_ty.read_le(&mut reader)?,
                            };
                            items.push(v);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            face = items.iter().map(|&v| v as u32).collect();
                        }
                    }
                }
            }
            if is_vertex {
                vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            }
            if is_face {
                if face.len() < 3 {
                    return Err(parse_err(path, "body", "face with fewer than 3 vertices"));
                }
                // fan-triangulate polygons
                for i in 1..face.len() - 1 {
                    triangles.push([face[0], face[i], face[i + 1]]);
                }
            }
        }
    }
    Ok(SurfaceMesh {
        vertices,
        triangles,
    })
}

/// Write an ASCII PLY, optionally with a per-face fulfillment color ramp
/// (blue at 0 to red at 1).
pub fn write_ply(path: &Path, mesh: &SurfaceMesh, face_values: Option<&[f64]>) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", mesh.vertices.len())?;
    writeln!(out, "property double x")?;
    writeln!(out, "property double y")?;
    writeln!(out, "property double z")?;
    writeln!(out, "element face {}", mesh.triangles.len())?;
    writeln!(out, "property list uchar uint vertex_indices")?;
    if face_values.is_some() {
        writeln!(out, "property uchar red")?;
        writeln!(out, "property uchar green")?;
        writeln!(out, "property uchar blue")?;
    }
    writeln!(out, "end_header")?;
    for v in &mesh.vertices {
        writeln!(out, "{} {} {}", v.x, v.y, v.z)?;
    }
    for (t, tri) in mesh.triangles.iter().enumerate() {
        write!(out, "3 {} {} {}", tri[0], tri[1], tri[2])?;
        if let Some(values) = face_values {
            let f = values.get(t).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            let r = (f * 255.0).round() as u8;
            let b = ((1.0 - f) * 255.0).round() as u8;
            write!(out, " {r} 0 {b}")?;
        }
        writeln!(out)?;
    }
    fs::write(path, out)?;
    Ok(())
}

// -------------------------------------------------------- confidence grids

pub const CONFIDENCE_MAGIC: &[u8; 5] = b"MVSC1";

/// Little-endian binary grid: magic "MVSC1", u32 width_cells, u32
/// height_cells, u32 stride_px, u32 bin_count (= 9), then bin-major f32.
pub fn write_confidence_grid(path: &Path, grid: &ConfidenceGrid) -> Result<()> {
    grid.validate()?;
    let mut out = Vec::with_capacity(21 + grid.values.len() * 4);
    out.extend_from_slice(CONFIDENCE_MAGIC);
    out.extend_from_slice(&grid.width_cells.to_le_bytes());
    out.extend_from_slice(&grid.height_cells.to_le_bytes());
    out.extend_from_slice(&grid.stride_px.to_le_bytes());
    out.extend_from_slice(&(ANGLE_BINS as u32).to_le_bytes());
    for v in &grid.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_confidence_grid(path: &Path) -> Result<ConfidenceGrid> {
    let data = fs::read(path)?;
    if data.len() < 21 || &data[0..5] != CONFIDENCE_MAGIC {
        return Err(parse_err(path, "byte 0", "missing MVSC1 magic"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(data[off..off + 4].try_into().unwrap());
    let width_cells = u32_at(5);
    let height_cells = u32_at(9);
    let stride_px = u32_at(13);
    let bins = u32_at(17) as usize;
    if bins != ANGLE_BINS {
        return Err(parse_err(
            path,
            "byte 17",
            format!("expected {ANGLE_BINS} bins, found {bins}"),
        ));
    }
    let count = width_cells as usize * height_cells as usize * bins;
    let expected_len = 21 + count * 4;
    if data.len() != expected_len {
        return Err(parse_err(
            path,
            format!("byte {}", data.len().min(expected_len)),
            format!("expected {expected_len} bytes, found {}", data.len()),
        ));
    }
    let values: Vec<f32> = (0..count)
        .map(|i| f32::from_le_bytes(data[21 + i * 4..25 + i * 4].try_into().unwrap()))
        .collect();
    let grid = ConfidenceGrid {
        width_cells,
        height_cells,
        stride_px,
        values,
    };
    grid.validate()?;
    Ok(grid)
}

/// Load every `<camera_id>.mvsc` grid in a directory.
pub fn read_confidence_dir(dir: &Path) -> Result<HashMap<u32, ConfidenceGrid>> {
    let mut grids = HashMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("mvsc") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let id: u32 = stem.parse().map_err(|_| {
            parse_err(&path, "filename", "expected <camera_id>.mvsc")
        })?;
        grids.insert(id, read_confidence_grid(&path)?);
    }
    Ok(grids)
}

// -------------------------------------------------------------------- PGM

/// 8-bit grayscale image (PGM P2/P5).
#[derive(Debug, Clone)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x] as f64
    }

    /// Mean central-difference gradient magnitude in a window around (x, y).
    pub fn mean_gradient(&self, x: f64, y: f64, radius: isize) -> f64 {
        let cx = x.round() as isize;
        let cy = y.round() as isize;
        let mut sum = 0.0;
        let mut count = 0usize;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let (px, py) = (cx + dx, cy + dy);
                let gx = (self.at(px + 1, py) - self.at(px - 1, py)) / 2.0;
                let gy = (self.at(px, py + 1) - self.at(px, py - 1)) / 2.0;
                sum += (gx * gx + gy * gy).sqrt();
                count += 1;
            }
        }
        sum / count as f64
    }
}

fn pgm_field(data: &[u8], pos: &mut usize, path: &Path) -> Result<String> {
    // skip whitespace and comments
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(parse_err(path, format!("byte {pos}"), "truncated header"));
    }
    Ok(String::from_utf8_lossy(&data[start..*pos]).into_owned())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let data = fs::read(path)?;
    let mut pos = 0usize;
    let magic = pgm_field(&data, &mut pos, path)?;
    let width: usize = pgm_field(&data, &mut pos, path)?
        .parse()
        .map_err(|e| parse_err(path, "header", format!("bad width: {e}")))?;
    let height: usize = pgm_field(&data, &mut pos, path)?
        .parse()
        .map_err(|e| parse_err(path, "header", format!("bad height: {e}")))?;
    let maxval: usize = pgm_field(&data, &mut pos, path)?
        .parse()
        .map_err(|e| parse_err(path, "header", format!("bad maxval: {e}")))?;
    if maxval > 255 {
        return Err(parse_err(path, "header", "only 8-bit PGM supported"));
    }
    match magic.as_str() {
        "P5" => {
            let start = pos + 1; // single whitespace after maxval
            let expected = width * height;
            if data.len() < start + expected {
                return Err(parse_err(
                    path,
                    format!("byte {}", data.len()),
                    "truncated pixel data",
                ));
            }
            Ok(GrayImage {
                width,
                height,
                data: data[start..start + expected].to_vec(),
            })
        }
        "P2" => {
            let mut pixels = Vec::with_capacity(width * height);
            for _ in 0..width * height {
                let v: usize = pgm_field(&data, &mut pos, path)?
                    .parse()
                    .map_err(|e| parse_err(path, format!("byte {pos}"), format!("bad pixel: {e}")))?;
                pixels.push(v.min(255) as u8);
            }
            Ok(GrayImage {
                width,
                height,
                data: pixels,
            })
        }
        other => Err(parse_err(path, "header", format!("unsupported magic '{other}'"))),
    }
}

// ------------------------------------------------------------ scene loading

#[derive(Debug, Clone)]
pub struct ScenePaths {
    pub cameras: PathBuf,
    pub cloud: PathBuf,
    pub mesh: PathBuf,
}

/// Load and validate a full scene: cameras, sparse cloud, mesh.
pub fn load_scene(paths: &ScenePaths) -> Result<(Vec<Camera>, SparsePointCloud, SurfaceMesh)> {
    for p in [&paths.cameras, &paths.cloud, &paths.mesh] {
        if !p.exists() {
            return Err(Error::Config(format!("input path {} does not exist", p.display())));
        }
    }
    let cameras = read_cameras(&paths.cameras)?;
    let cloud = read_cloud(&paths.cloud)?;
    let mesh = read_ply(&paths.mesh)?;
    cloud.validate(&cameras)?;
    mesh.validate()?;
    Ok((cameras, cloud, mesh))
}

// ------------------------------------------------------------ run outputs

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RankingEntryRecord {
    pub rank: usize,
    pub key_view: u32,
    pub partners: Vec<u32>,
    pub gain: f64,
    pub cumulative_fulfillment: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RankingFile {
    pub config_echo: QualityConfig,
    pub entries: Vec<RankingEntryRecord>,
}

impl RankingFile {
    pub fn from_result(config: &QualityConfig, ranking: &RankingResult) -> RankingFile {
        RankingFile {
            config_echo: config.clone(),
            entries: ranking
                .entries
                .iter()
                .map(|e| RankingEntryRecord {
                    rank: e.rank,
                    key_view: e.cluster.key_view,
                    partners: e.cluster.partners.clone(),
                    gain: e.gain_at_selection,
                    cumulative_fulfillment: e.cumulative_fulfillment,
                })
                .collect(),
        }
    }
}

pub fn read_ranking(path: &Path) -> Result<RankingFile> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| parse_err(path, format!("line {} column {}", e.line(), e.column()), e.to_string()))
}

/// Write ranking.json, curve.csv, and fulfillment.ply into `dir`. Output
/// bytes are deterministic for fixed inputs.
pub fn write_outputs(
    config: &QualityConfig,
    ranking: &RankingResult,
    curve: &[(usize, f64, f64)],
    mesh: &SurfaceMesh,
    final_fulfillment: &[f64],
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let file = RankingFile::from_result(config, ranking);
    fs::write(
        dir.join("ranking.json"),
        serde_json::to_string_pretty(&file).unwrap(),
    )?;

    let mut csv = String::from("rank,cumulative_fulfillment,normalized\n");
    for &(rank, cum, norm) in curve {
        csv.push_str(&format!("{rank},{cum},{norm}\n"));
    }
    fs::write(dir.join("curve.csv"), csv)?;

    write_ply(&dir.join("fulfillment.ply"), mesh, Some(final_fulfillment))?;
    Ok(())
}
