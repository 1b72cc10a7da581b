//! Axis-aligned BVH over mesh triangles with Moller-Trumbore ray casting.

use nalgebra::{Point3, Vector3};

use crate::scene::SurfaceMesh;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    fn empty() -> Aabb {
        Aabb {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    fn merge(&mut self, o: &Aabb) {
        self.grow(&o.min);
        self.grow(&o.max);
    }

    pub fn contains(&self, o: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= o.min[k] && self.max[k] >= o.max[k])
    }

    pub fn disjoint(&self, o: &Aabb) -> bool {
        (0..3).any(|k| self.max[k] < o.min[k] || self.min[k] > o.max[k])
    }

    /// Slab test; `t_max` limits the ray segment.
    fn hit(&self, origin: &Point3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug)]
enum Node {
    Leaf {
        bbox: Aabb,
        triangles: Vec<u32>,
    },
    Inner {
        bbox: Aabb,
        left: u32,
        right: u32,
    },
}

impl Node {
    pub fn bbox(&self) -> &Aabb {
        match self {
            Node::Leaf { bbox, .. } => bbox,
            Node::Inner { bbox, .. } => bbox,
        }
    }
}

#[derive(Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    // flat copy of triangle geometry for cache-friendly intersection
    tri_verts: Vec<[Point3<f64>; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub triangle: u32,
    pub t: f64,
}

/// Moller-Trumbore. Returns the ray parameter of the hit, if any, with
/// t in (1e-12, t_max).
pub fn ray_triangle(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    verts: &[Point3<f64>; 3],
    t_max: f64,
) -> Option<f64> {
    let e1 = verts[1] - verts[0];
    let e2 = verts[2] - verts[0];
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-16 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - verts[0];
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    if t > 1e-12 && t < t_max {
        Some(t)
    } else {
        None
    }
}

impl Bvh {
    /// Median-split build over triangle centroids, leaf size <= 8.
    pub fn build(mesh: &SurfaceMesh) -> Bvh {
        let n = mesh.triangles.len();
        let tri_verts: Vec<[Point3<f64>; 3]> = (0..n).map(|t| mesh.triangle_vertices(t)).collect();
        let centroids: Vec<Point3<f64>> = (0..n).map(|t| mesh.centroid(t)).collect();
        let tri_boxes: Vec<Aabb> = tri_verts
            .iter()
            .map(|vs| {
                let mut b = Aabb::empty();
                for v in vs {
                    b.grow(v);
                }
                b
            })
            .collect();

        let mut bvh = Bvh {
            nodes: Vec::new(),
            tri_verts,
        };
        if n > 0 {
            let mut ids: Vec<u32> = (0..n as u32).collect();
            bvh.build_node(&mut ids, &centroids, &tri_boxes);
        }
        bvh
    }

    fn build_node(&mut self, ids: &mut [u32], centroids: &[Point3<f64>], boxes: &[Aabb]) -> u32 {
        let mut bbox = Aabb::empty();
        for &t in ids.iter() {
            bbox.merge(&boxes[t as usize]);
        }
        if ids.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                bbox,
                triangles: ids.to_vec(),
            });
            return (self.nodes.len() - 1) as u32;
        }
        // split along the widest centroid axis at the median
        let mut cmin = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut cmax = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &t in ids.iter() {
            let c = centroids[t as usize];
            for k in 0..3 {
                cmin[k] = cmin[k].min(c[k]);
                cmax[k] = cmax[k].max(c[k]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| {
                (cmax[a] - cmin[a])
                    .partial_cmp(&(cmax[b] - cmin[b]))
                    .unwrap()
            })
            .unwrap();
        let mid = ids.len() / 2;
        ids.select_nth_unstable_by(mid, |&a, &b| {
            centroids[a as usize][axis]
                .partial_cmp(&centroids[b as usize][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        // placeholder, patched after children are built
        self.nodes.push(Node::Inner {
            bbox,
            left: 0,
            right: 0,
        });
        let me = (self.nodes.len() - 1) as u32;
        let (lo, hi) = ids.split_at_mut(mid);
        let left = self.build_node(lo, centroids, boxes);
        let right = self.build_node(hi, centroids, boxes);
        if let Node::Inner {
            left: l, right: r, ..
        } = &mut self.nodes[me as usize]
        {
            *l = left;
            *r = right;
        }
        self.nodes[me as usize] = Node::Inner { bbox, left, right };
        me
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_boxes(&self) -> Vec<Aabb> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { bbox, .. } => Some(*bbox),
                _ => None,
            })
            .collect()
    }

    /// Check parent-contains-child and every-triangle-in-one-leaf.
    pub fn validate(&self) -> bool {
        let mut counts = vec![0usize; self.tri_verts.len()];
        for node in &self.nodes {
            match node {
                Node::Leaf { triangles, .. } => {
                    for &t in triangles {
                        counts[t as usize] += 1;
                    }
                }
                Node::Inner { bbox, left, right } => {
                    if !bbox.contains(self.nodes[*left as usize].bbox())
                        || !bbox.contains(self.nodes[*right as usize].bbox())
                    {
                        return false;
                    }
                }
            }
        }
        counts.iter().all(|&c| c == 1)
    }

    /// Closest intersection along `dir` with t < t_max, optionally skipping
    /// one triangle id.
    pub fn closest_hit(
        &self,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        t_max: f64,
        skip: Option<u32>,
    ) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv_dir = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<Hit> = None;
        let mut best_t = t_max;
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            match &self.nodes[ni as usize] {
                Node::Leaf { bbox, triangles } => {
                    if !bbox.hit(origin, &inv_dir, best_t) {
                        continue;
                    }
                    for &t in triangles {
                        if Some(t) == skip {
                            continue;
                        }
                        if let Some(thit) =
                            ray_triangle(origin, dir, &self.tri_verts[t as usize], best_t)
                        {
                            best_t = thit;
                            best = Some(Hit {
                                triangle: t,
                                t: thit,
                            });
                        }
                    }
                }
                Node::Inner { bbox, left, right } => {
                    if bbox.hit(origin, &inv_dir, best_t) {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        best
    }
}

/// Brute-force closest hit over every triangle; the casting oracle.
pub fn brute_force_hit(
    mesh: &SurfaceMesh,
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    t_max: f64,
    skip: Option<u32>,
) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut best_t = t_max;
    for t in 0..mesh.triangles.len() as u32 {
        if Some(t) == skip {
            continue;
        }
        let verts = mesh.triangle_vertices(t as usize);
        if let Some(thit) = ray_triangle(origin, dir, &verts, best_t) {
            best_t = thit;
            best = Some(Hit {
                triangle: t,
                t: thit,
            });
        }
    }
    best
}
