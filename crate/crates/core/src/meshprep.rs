//! Mesh balancing: quadric edge-collapse simplification until most edges
//! exceed `r * g_d`, then conforming midpoint subdivision until every edge
//! is below `e * g_d`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use nalgebra::Point3;

use crate::scene::{SurfaceMesh, DEGENERATE_AREA};

/// Edge-length distribution summary.
#[derive(Debug, Clone)]
pub struct MeshStats {
    pub edge_lengths: Vec<f64>,
    pub triangle_count: usize,
    pub percentile_05: f64,
}

impl MeshStats {
    pub fn of(mesh: &SurfaceMesh) -> MeshStats {
        let mut lengths = mesh.edge_lengths();
        lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let percentile_05 = if lengths.is_empty() {
            0.0
        } else {
            // nearest-rank 5th percentile
            let idx = ((lengths.len() as f64 * 0.05).ceil() as usize).max(1) - 1;
            lengths[idx]
        };
        MeshStats {
            triangle_count: mesh.triangles.len(),
            percentile_05,
            edge_lengths: lengths,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplifyOutcome {
    pub mesh: SurfaceMesh,
    /// True when no legal collapse remained before the edge-length target
    /// was reached.
    pub exhausted: bool,
}

/// Symmetric 4x4 plane quadric, upper triangle.
#[derive(Debug, Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn from_plane(a: f64, b: f64, c: f64, d: f64) -> Quadric {
        Quadric([
            a * a,
            a * b,
            a * c,
            a * d,
            b * b,
            b * c,
            b * d,
            c * c,
            c * d,
            d * d,
        ])
    }

    fn add(&mut self, o: &Quadric) {
        for k in 0..10 {
            self.0[k] += o.0[k];
        }
    }

    fn error(&self, p: &Point3<f64>) -> f64 {
        let q = &self.0;
        let (x, y, z) = (p.x, p.y, p.z);
        q[0] * x * x
            + 2.0 * q[1] * x * y
            + 2.0 * q[2] * x * z
            + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }
}

struct HeapEdge {
    err: f64,
    a: u32,
    b: u32,
    ver_a: u32,
    ver_b: u32,
    target: Point3<f64>,
}

impl PartialEq for HeapEdge {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEdge {}
impl PartialOrd for HeapEdge {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEdge {
    // max-heap pops smallest error first; ties by vertex ids for determinism
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .err
            .partial_cmp(&self.err)
            .unwrap_or(Ordering::Equal)
            .then(other.a.cmp(&self.a))
            .then(other.b.cmp(&self.b))
    }
}

struct CollapseState {
    positions: Vec<Point3<f64>>,
    quadrics: Vec<Quadric>,
    versions: Vec<u32>,
    faces: Vec<[u32; 3]>,
    alive: Vec<bool>,
    /// Incident face ids per vertex (may contain dead faces; filtered on use).
    vertex_faces: Vec<Vec<u32>>,
}

impl CollapseState {
    fn new(mesh: &SurfaceMesh) -> CollapseState {
        let positions = mesh.vertices.clone();
        let faces: Vec<[u32; 3]> = mesh.triangles.clone();
        let mut quadrics = vec![Quadric::default(); positions.len()];
        let mut vertex_faces = vec![Vec::new(); positions.len()];
        for (fi, f) in faces.iter().enumerate() {
            let [a, b, c] = f.map(|i| positions[i as usize]);
            let n = (b - a).cross(&(c - a));
            let len = n.norm();
            if len > 0.0 {
                let n = n / len;
                let d = -n.dot(&a.coords);
                let q = Quadric::from_plane(n.x, n.y, n.z, d);
                for &v in f {
                    quadrics[v as usize].add(&q);
                }
            }
            for &v in f {
                vertex_faces[v as usize].push(fi as u32);
            }
        }
        CollapseState {
            versions: vec![0; positions.len()],
            alive: vec![true; faces.len()],
            positions,
            quadrics,
            faces,
            vertex_faces,
        }
    }

    fn alive_faces_of(&self, v: u32) -> impl Iterator<Item = u32> + '_ {
        self.vertex_faces[v as usize]
            .iter()
            .copied()
            .filter(move |&f| self.alive[f as usize])
    }

    fn face_has(&self, f: u32, v: u32) -> bool {
        self.faces[f as usize].contains(&v)
    }

    /// Faces incident to the undirected edge (a, b).
    fn edge_faces(&self, a: u32, b: u32) -> Vec<u32> {
        self.alive_faces_of(a).filter(|&f| self.face_has(f, b)).collect()
    }

    fn ring(&self, v: u32) -> HashSet<u32> {
        let mut out = HashSet::new();
        for f in self.alive_faces_of(v) {
            for &w in &self.faces[f as usize] {
                if w != v {
                    out.insert(w);
                }
            }
        }
        out
    }

    fn face_normal_area(&self, verts: [Point3<f64>; 3]) -> (nalgebra::Vector3<f64>, f64) {
        let n = (verts[1] - verts[0]).cross(&(verts[2] - verts[0]));
        let area = 0.5 * n.norm();
        (n, area)
    }

    /// Collapse legality: manifold edge, link condition, no normal flip, no
    /// degenerate survivor, and at least one surviving modified face.
    fn collapse_legal(&self, a: u32, b: u32, target: &Point3<f64>) -> bool {
        let shared = self.edge_faces(a, b);
        if shared.is_empty() || shared.len() > 2 {
            return false;
        }
        // link condition: common neighbors must be exactly the opposite
        // vertices of the shared faces
        let mut opposites = HashSet::new();
        for &f in &shared {
            for &v in &self.faces[f as usize] {
                if v != a && v != b {
                    opposites.insert(v);
                }
            }
        }
        let common: HashSet<u32> = self.ring(a).intersection(&self.ring(b)).copied().collect();
        if common != opposites {
            return false;
        }
        let mut survivors = 0usize;
        for v in [a, b] {
            for f in self.alive_faces_of(v) {
                if self.face_has(f, a) && self.face_has(f, b) {
                    continue;
                }
                let old = self.faces[f as usize].map(|i| self.positions[i as usize]);
                let new = self.faces[f as usize].map(|i| {
                    if i == a || i == b {
                        *target
                    } else {
                        self.positions[i as usize]
                    }
                });
                let (n_old, _) = self.face_normal_area(old);
                let (n_new, area_new) = self.face_normal_area(new);
                if area_new <= DEGENERATE_AREA || n_old.dot(&n_new) <= 0.0 {
                    return false;
                }
                survivors += 1;
            }
        }
        survivors > 0
    }

    /// Collapse b into a, placing a at `target`.
    fn collapse(&mut self, a: u32, b: u32, target: Point3<f64>) {
        self.positions[a as usize] = target;
        let qb = self.quadrics[b as usize];
        self.quadrics[a as usize].add(&qb);
        self.versions[a as usize] += 1;
        self.versions[b as usize] += 1;

        let b_faces: Vec<u32> = self.alive_faces_of(b).collect();
        for f in b_faces {
            if self.face_has(f, a) {
                self.alive[f as usize] = false;
            } else {
                for v in self.faces[f as usize].iter_mut() {
                    if *v == b {
                        *v = a;
                    }
                }
                self.vertex_faces[a as usize].push(f);
            }
        }
        self.vertex_faces[b as usize].clear();
    }

    fn unique_alive_edges(&self) -> Vec<(u32, u32)> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (fi, f) in self.faces.iter().enumerate() {
            if !self.alive[fi] {
                continue;
            }
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                let (a, b) = (f[i].min(f[j]), f[i].max(f[j]));
                if seen.insert((a, b)) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    fn edge_fraction_above(&self, threshold: f64) -> f64 {
        let edges = self.unique_alive_edges();
        if edges.is_empty() {
            return 1.0;
        }
        let above = edges
            .iter()
            .filter(|&&(a, b)| {
                (self.positions[a as usize] - self.positions[b as usize]).norm() > threshold
            })
            .count();
        above as f64 / edges.len() as f64
    }

    fn heap_entry(&self, a: u32, b: u32) -> HeapEdge {
        let mut q = self.quadrics[a as usize];
        q.add(&self.quadrics[b as usize]);
        let pa = self.positions[a as usize];
        let pb = self.positions[b as usize];
        let mid = Point3::from((pa.coords + pb.coords) * 0.5);
        let mut best = (q.error(&mid), mid);
        for cand in [pa, pb] {
            let e = q.error(&cand);
            if e < best.0 {
                best = (e, cand);
            }
        }
        HeapEdge {
            err: best.0,
            a,
            b,
            ver_a: self.versions[a as usize],
            ver_b: self.versions[b as usize],
            target: best.1,
        }
    }

    fn into_mesh(self) -> SurfaceMesh {
        let mut remap: HashMap<u32, u32> = HashMap::new();
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (fi, f) in self.faces.iter().enumerate() {
            if !self.alive[fi] {
                continue;
            }
            let mapped = f.map(|v| {
                *remap.entry(v).or_insert_with(|| {
                    vertices.push(self.positions[v as usize]);
                    (vertices.len() - 1) as u32
                })
            });
            triangles.push(mapped);
        }
        SurfaceMesh {
            vertices,
            triangles,
        }
        .without_degenerate()
    }
}

const PREDICATE_RECHECK_INTERVAL: usize = 1024;

/// Quadric edge-collapse decimation, cheapest collapse first, until at least
/// 95% of the current edge lengths exceed `r * g_d` or no legal collapse
/// remains.
pub fn simplify(mesh: &SurfaceMesh, gsd_desired: f64, simplify_factor: f64) -> SimplifyOutcome {
    let mesh = mesh.clone().without_degenerate();
    if mesh.triangles.is_empty() {
        return SimplifyOutcome {
            mesh,
            exhausted: false,
        };
    }
    let threshold = simplify_factor * gsd_desired;
    let mut state = CollapseState::new(&mesh);
    if state.edge_fraction_above(threshold) >= 0.95 {
        return SimplifyOutcome {
            mesh,
            exhausted: false,
        };
    }

    let mut heap = BinaryHeap::new();
    for (a, b) in state.unique_alive_edges() {
        heap.push(state.heap_entry(a, b));
    }

    let mut collapses = 0usize;
    let mut satisfied = false;
    while let Some(entry) = heap.pop() {
        if state.versions[entry.a as usize] != entry.ver_a
            || state.versions[entry.b as usize] != entry.ver_b
        {
            continue;
        }
        if !state.collapse_legal(entry.a, entry.b, &entry.target) {
            continue;
        }
        state.collapse(entry.a, entry.b, entry.target);
        collapses += 1;

        let mut pushed = HashSet::new();
        for f in state.alive_faces_of(entry.a).collect::<Vec<_>>() {
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                let face = state.faces[f as usize];
                let (x, y) = (face[i].min(face[j]), face[i].max(face[j]));
                if pushed.insert((x, y)) {
                    heap.push(state.heap_entry(x, y));
                }
            }
        }

        if collapses % PREDICATE_RECHECK_INTERVAL == 0
            && state.edge_fraction_above(threshold) >= 0.95
        {
            satisfied = true;
            break;
        }
    }
    if !satisfied {
        satisfied = state.edge_fraction_above(threshold) >= 0.95;
    }
    SimplifyOutcome {
        mesh: state.into_mesh(),
        exhausted: !satisfied,
    }
}

/// Conforming midpoint subdivision until every edge length is strictly below
/// `e * g_d`. Input vertex positions are preserved; only midpoints are added.
pub fn subdivide(mesh: &SurfaceMesh, gsd_desired: f64, subdivide_factor: f64) -> SurfaceMesh {
    let bound = subdivide_factor * gsd_desired;
    let mut mesh = mesh.clone().without_degenerate();

    loop {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let long = |mesh: &SurfaceMesh, a: u32, b: u32| {
            (mesh.vertices[a as usize] - mesh.vertices[b as usize]).norm() >= bound
        };
        let mut any = false;
        for tri in &mesh.triangles {
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                if long(&mesh, tri[i], tri[j]) {
                    any = true;
                }
            }
        }
        if !any {
            return mesh;
        }

        let mut vertices = mesh.vertices.clone();
        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Point3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = Point3::from(
                    (vertices[a as usize].coords + vertices[b as usize].coords) * 0.5,
                );
                vertices.push(m);
                (vertices.len() - 1) as u32
            })
        };

        let mut triangles = Vec::with_capacity(mesh.triangles.len());
        for tri in &mesh.triangles {
            let [a, b, c] = *tri;
            let marks = [long(&mesh, a, b), long(&mesh, b, c), long(&mesh, c, a)];
            match marks.iter().filter(|&&m| m).count() {
                0 => triangles.push(*tri),
                3 => {
                    let mab = midpoint(a, b, &mut vertices);
                    let mbc = midpoint(b, c, &mut vertices);
                    let mca = midpoint(c, a, &mut vertices);
                    triangles.push([a, mab, mca]);
                    triangles.push([mab, b, mbc]);
                    triangles.push([mca, mbc, c]);
                    triangles.push([mab, mbc, mca]);
                }
                1 => {
                    // rotate so the marked edge is (a, b)
                    let (a, b, c) = if marks[0] {
                        (a, b, c)
                    } else if marks[1] {
                        (b, c, a)
                    } else {
                        (c, a, b)
                    };
                    let m = midpoint(a, b, &mut vertices);
                    triangles.push([a, m, c]);
                    triangles.push([m, b, c]);
                }
                _ => {
                    // rotate so the marked edges are (a, b) and (b, c)
                    let (a, b, c) = if !marks[1] {
                        (c, a, b)
                    } else if !marks[2] {
                        (a, b, c)
                    } else {
                        (b, c, a)
                    };
                    let mab = midpoint(a, b, &mut vertices);
                    let mbc = midpoint(b, c, &mut vertices);
                    triangles.push([mab, b, mbc]);
                    // split the remaining quad (a, mab, mbc, c) along the
                    // shorter diagonal
                    let d_a = (vertices[a as usize] - vertices[mbc as usize]).norm();
                    let d_m = (vertices[mab as usize] - vertices[c as usize]).norm();
                    if d_a <= d_m {
                        triangles.push([a, mab, mbc]);
                        triangles.push([a, mbc, c]);
                    } else {
                        triangles.push([a, mab, c]);
                        triangles.push([mab, mbc, c]);
                    }
                }
            }
        }
        mesh = SurfaceMesh {
            vertices,
            triangles,
        };
    }
}
