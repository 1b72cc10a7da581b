//! Matching-partner selection: connectivity from sparse-point tracks,
//! combination drawing over the most connected candidates, and per-key-view
//! argmax of the combined fulfillment score.

use std::collections::HashMap;

use itertools::Itertools;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fulfillment::{cluster_score, EvalContext, ViewCluster};
use crate::scene::{CameraId, SparsePointCloud, TriangleId, TrianglePatch};

/// Shared-sparse-point counts per camera pair.
#[derive(Debug, Clone, Default)]
pub struct ConnectivityIndex {
    pairs: HashMap<(CameraId, CameraId), u32>,
    /// Number of sparse points per camera (used by the max-points baseline).
    pub camera_points: HashMap<CameraId, u32>,
}

impl ConnectivityIndex {
    pub fn count(&self, a: CameraId, b: CameraId) -> u32 {
        let key = (a.min(b), a.max(b));
        self.pairs.get(&key).copied().unwrap_or(0)
    }

    /// Cameras connected to `key`, ordered by count descending then id.
    pub fn connected_to(&self, key: CameraId) -> Vec<(CameraId, u32)> {
        let mut out: Vec<(CameraId, u32)> = self
            .pairs
            .iter()
            .filter_map(|(&(a, b), &n)| {
                if a == key {
                    Some((b, n))
                } else if b == key {
                    Some((a, n))
                } else {
                    None
                }
            })
            .filter(|&(_, n)| n > 0)
            .collect();
        out.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        out
    }
}

pub fn build_connectivity(cloud: &SparsePointCloud) -> ConnectivityIndex {
    let mut index = ConnectivityIndex::default();
    for point in &cloud.points {
        let mut track = point.track.clone();
        track.sort_unstable();
        track.dedup();
        for &cam in &track {
            *index.camera_points.entry(cam).or_insert(0) += 1;
        }
        for i in 0..track.len() {
            for j in (i + 1)..track.len() {
                *index.pairs.entry((track[i], track[j])).or_insert(0) += 1;
            }
        }
    }
    index
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    acc
}

/// Global triangle sample T_z: uniform without replacement, ceil(|T|/z)
/// triangles, seed-deterministic.
pub fn sample_triangles(total: usize, fraction: usize, seed: u64) -> Vec<TriangleId> {
    if total == 0 {
        return Vec::new();
    }
    let count = total.div_ceil(fraction).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x7a5a5a5a));
    let mut picked: Vec<TriangleId> = sample(&mut rng, total, count)
        .into_iter()
        .map(|t| t as TriangleId)
        .collect();
    picked.sort_unstable();
    picked
}

fn combination_rng(seed: u64, key: CameraId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed ^ (key as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15),
    )
}

/// Draw up to `y` distinct k-subsets of the top-n connected cameras: first
/// every subset of the q most connected (largest q with C(q,k) <= y/4),
/// then uniformly random fills from the whole pool.
pub fn draw_combinations(
    key: CameraId,
    connectivity: &ConnectivityIndex,
    top_n: usize,
    k: usize,
    y: usize,
    seed: u64,
) -> Result<Vec<Vec<CameraId>>> {
    let mut pool: Vec<CameraId> = connectivity
        .connected_to(key)
        .into_iter()
        .map(|(c, _)| c)
        .collect();
    pool.truncate(top_n);
    if pool.len() < k {
        return Err(Error::InsufficientConnectivity {
            key,
            connected: pool.len(),
            needed: k,
        });
    }

    let total = binomial(pool.len(), k);
    let mut combos: Vec<Vec<CameraId>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let push = |combo: Vec<CameraId>,
                    combos: &mut Vec<Vec<CameraId>>,
                    seen: &mut std::collections::HashSet<Vec<CameraId>>| {
        debug_assert!(combo.windows(2).all(|w| w[0] < w[1]));
        if seen.insert(combo.clone()) {
            combos.push(combo);
        }
    };

    if total <= y as u128 {
        for subset in pool.iter().copied().combinations(k) {
            let mut combo = subset;
            combo.sort_unstable();
            push(combo, &mut combos, &mut seen);
        }
        return Ok(combos);
    }

    // exhaustive part over the q most connected
    let budget = y as f64 / 4.0;
    let mut q = 0usize;
    for cand in k..=pool.len() {
        if binomial(cand, k) as f64 <= budget {
            q = cand;
        } else {
            break;
        }
    }
    if q >= k {
        for subset in pool[..q].iter().copied().combinations(k) {
            let mut combo = subset;
            combo.sort_unstable();
            push(combo, &mut combos, &mut seen);
        }
    }

    // random fills from the full pool
    let mut rng = combination_rng(seed, key);
    let mut attempts = 0usize;
    let attempt_cap = y.saturating_mul(1000).max(10_000);
    while combos.len() < y && attempts < attempt_cap {
        attempts += 1;
        let mut combo: Vec<CameraId> = sample(&mut rng, pool.len(), k)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        combo.sort_unstable();
        push(combo, &mut combos, &mut seen);
    }
    Ok(combos)
}

/// Argmax of the combined fulfillment score over the drawn combinations.
/// Ties: higher total connectivity to the key, then lexicographically
/// smallest partner ids.
pub fn select_partners(
    ctx: &EvalContext,
    patches: &[TrianglePatch],
    connectivity: &ConnectivityIndex,
    key: CameraId,
    combinations: &[Vec<CameraId>],
    sampled_triangles: &[TriangleId],
    cluster_id: u32,
) -> ViewCluster {
    assert!(!combinations.is_empty());
    let scored: Vec<(f64, u64, &Vec<CameraId>)> = combinations
        .par_iter()
        .map(|combo| {
            let score = cluster_score(ctx, patches, key, combo, sampled_triangles);
            let conn: u64 = combo
                .iter()
                .map(|&p| connectivity.count(key, p) as u64)
                .sum();
            (score, conn, combo)
        })
        .collect();
    let best = scored
        .iter()
        .max_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then_with(|| b.2.cmp(a.2)) // smaller partner ids win
        })
        .unwrap();
    ViewCluster {
        id: cluster_id,
        key_view: key,
        partners: best.2.clone(),
        score: best.0,
    }
}

/// Build one view cluster per key camera; keys without enough connected
/// cameras are skipped.
pub fn build_clusters(
    ctx: &EvalContext,
    patches: &[TrianglePatch],
    connectivity: &ConnectivityIndex,
    sampled_triangles: &[TriangleId],
) -> (Vec<ViewCluster>, Vec<CameraId>) {
    let cfg = ctx.config;
    let mut keys: Vec<CameraId> = ctx.cameras.iter().map(|c| c.id).collect();
    keys.sort_unstable();

    // restrict each key's scoring to its visible triangles within T_z
    let mut visible_in: HashMap<CameraId, Vec<TriangleId>> = HashMap::new();
    for &key in &keys {
        let tris: Vec<TriangleId> = sampled_triangles
            .iter()
            .copied()
            .filter(|&t| patches[t as usize].sees(key))
            .collect();
        visible_in.insert(key, tris);
    }

    let mut clusters = Vec::new();
    let mut skipped = Vec::new();
    for &key in &keys {
        match draw_combinations(
            key,
            connectivity,
            cfg.top_connected,
            cfg.partners,
            cfg.combinations,
            cfg.rng_seed,
        ) {
            Ok(combos) if !combos.is_empty() => {
                let cluster = select_partners(
                    ctx,
                    patches,
                    connectivity,
                    key,
                    &combos,
                    &visible_in[&key],
                    clusters.len() as u32,
                );
                clusters.push(cluster);
            }
            _ => skipped.push(key),
        }
    }
    (clusters, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SparsePoint;
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};

    fn cloud(tracks: Vec<Vec<CameraId>>) -> SparsePointCloud {
        SparsePointCloud {
            points: tracks
                .into_iter()
                .map(|track| SparsePoint {
                    position: Point3::origin(),
                    track,
                })
                .collect(),
        }
    }

    #[test]
    fn single_track_pairs() {
        let index = build_connectivity(&cloud(vec![vec![1, 2, 3]]));
        assert_eq!(index.count(1, 2), 1);
        assert_eq!(index.count(1, 3), 1);
        assert_eq!(index.count(2, 3), 1);
        assert_eq!(index.count(3, 2), 1); // symmetric
        assert_eq!(index.count(1, 4), 0);
    }

    #[test]
    fn disjoint_tracks_zero() {
        let index = build_connectivity(&cloud(vec![vec![1, 2], vec![3, 4]]));
        assert_eq!(index.count(1, 3), 0);
        assert_eq!(index.count(2, 4), 0);
    }

    #[test]
    fn connectivity_matches_set_intersection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let tracks: Vec<Vec<CameraId>> = (0..1000)
            .map(|_| {
                let len = rng.gen_range(2..6);
                let mut t: Vec<CameraId> = (0..len).map(|_| rng.gen_range(0..20)).collect();
                t.sort_unstable();
                t.dedup();
                if t.len() < 2 {
                    t = vec![0, 1];
                }
                t
            })
            .collect();
        let index = build_connectivity(&cloud(tracks.clone()));
        let mut per_cam: HashMap<CameraId, std::collections::HashSet<usize>> = HashMap::new();
        for (pi, t) in tracks.iter().enumerate() {
            for &c in t {
                per_cam.entry(c).or_default().insert(pi);
            }
        }
        for a in 0..20u32 {
            for b in (a + 1)..20 {
                let expect = match (per_cam.get(&a), per_cam.get(&b)) {
                    (Some(sa), Some(sb)) => sa.intersection(sb).count() as u32,
                    _ => 0,
                };
                assert_eq!(index.count(a, b), expect, "pair ({a},{b})");
            }
        }
    }

    fn chain_connectivity(key: CameraId, others: &[(CameraId, u32)]) -> ConnectivityIndex {
        let mut index = ConnectivityIndex::default();
        for &(cam, count) in others {
            index.pairs.insert((key.min(cam), key.max(cam)), count);
        }
        index
    }

    #[test]
    fn n_equals_k_single_combination() {
        let index = chain_connectivity(0, &[(1, 5), (2, 4)]);
        let combos = draw_combinations(0, &index, 2, 2, 100, 7).unwrap();
        assert_eq!(combos, vec![vec![1, 2]]);
    }

    #[test]
    fn binomial_growth_past_pool_size() {
        // C(23, 6) = 100947 > 100k
        assert_eq!(binomial(23, 6), 100_947);
        assert!(binomial(23, 6) > 100_000);
    }

    #[test]
    fn q_from_binomial_arithmetic() {
        // k=2, y=100: C(7,2)=21 <= 25, C(8,2)=28 > 25 -> q = 7
        let others: Vec<(CameraId, u32)> = (1..=20).map(|c| (c, 100 - c)).collect();
        let index = chain_connectivity(0, &others);
        let combos = draw_combinations(0, &index, 20, 2, 100, 7).unwrap();
        assert_eq!(combos.len(), 100);
        // the 21 exhaustive subsets of the 7 most connected come first
        let top7: Vec<CameraId> = (1..=7).collect();
        for combo in &combos[..21] {
            assert!(combo.iter().all(|c| top7.contains(c)), "{combo:?}");
        }
        // all distinct
        let set: std::collections::HashSet<_> = combos.iter().collect();
        assert_eq!(set.len(), combos.len());
    }

    #[test]
    fn small_pool_emits_all() {
        let others: Vec<(CameraId, u32)> = (1..=5).map(|c| (c, 10)).collect();
        let index = chain_connectivity(0, &others);
        let combos = draw_combinations(0, &index, 22, 2, 100, 7).unwrap();
        assert_eq!(combos.len(), 10); // C(5,2)
    }

    #[test]
    fn insufficient_connectivity_error() {
        let index = chain_connectivity(0, &[(1, 3)]);
        assert!(matches!(
            draw_combinations(0, &index, 22, 2, 100, 7),
            Err(Error::InsufficientConnectivity { .. })
        ));
    }

    #[test]
    fn determinism_same_seed() {
        let others: Vec<(CameraId, u32)> = (1..=15).map(|c| (c, c)).collect();
        let index = chain_connectivity(0, &others);
        let a = draw_combinations(0, &index, 15, 3, 50, 99).unwrap();
        let b = draw_combinations(0, &index, 15, 3, 50, 99).unwrap();
        assert_eq!(a, b);
        let c = draw_combinations(0, &index, 15, 3, 50, 100).unwrap();
        assert_ne!(a, c);
    }

    use rand_chacha::ChaCha8Rng;
}
