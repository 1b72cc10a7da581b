//! Greedy next-best view-cluster ranking with lazy priority-queue updates.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fulfillment::{gain, triangle_fulfillment, EvalContext, ViewCluster};
use crate::scene::{ClusterId, TriangleId, TrianglePatch};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankingEntry {
    /// 1-based rank.
    pub rank: usize,
    pub cluster: ViewCluster,
    pub gain_at_selection: f64,
    pub cumulative_fulfillment: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct RankingResult {
    pub entries: Vec<RankingEntry>,
}

/// Precomputed per-cluster fulfillments plus the eligible triangle set.
#[derive(Debug, Clone, Default)]
pub struct FulfillmentCache {
    /// Triangles with at least `min_cameras` globally visible cameras.
    pub eligible: Vec<TriangleId>,
    /// Triangles holding a cached value per cluster, parallel to the
    /// cluster list handed to `precompute_cluster_fulfillments`.
    pub cluster_triangles: Vec<Vec<TriangleId>>,
}

/// Compute and store f(t, v) for every eligible triangle whose key view
/// sees it, for every cluster. Values land in each triangle's
/// `cluster_fulfillment` map.
pub fn precompute_cluster_fulfillments(
    ctx: &EvalContext,
    patches: &mut [TrianglePatch],
    clusters: &[ViewCluster],
) -> FulfillmentCache {
    let eligible: Vec<TriangleId> = (0..patches.len())
        .filter(|&t| patches[t].visible_cameras.len() >= ctx.config.min_cameras)
        .map(|t| t as TriangleId)
        .collect();

    // per eligible triangle, values for every cluster whose key sees it
    let values: Vec<Vec<(ClusterId, f64)>> = eligible
        .par_iter()
        .map(|&t| {
            let patch = &patches[t as usize];
            clusters
                .iter()
                .filter(|v| patch.sees(v.key_view))
                .map(|v| {
                    let b =
                        triangle_fulfillment(ctx, t as usize, patch, v.key_view, &v.partners);
                    (v.id, b.f_total)
                })
                .collect()
        })
        .collect();

    let mut cluster_triangles = vec![Vec::new(); clusters.len()];
    let pos_of: std::collections::HashMap<ClusterId, usize> = clusters
        .iter()
        .enumerate()
        .map(|(i, v)| (v.id, i))
        .collect();
    for (&t, vals) in eligible.iter().zip(&values) {
        let patch = &mut patches[t as usize];
        for &(v, f) in vals {
            patch.cluster_fulfillment.insert(v, f);
            cluster_triangles[pos_of[&v]].push(t);
        }
    }
    FulfillmentCache {
        eligible,
        cluster_triangles,
    }
}

/// Priority-queue entry carrying a possibly stale gain and the selection
/// counter at which it was computed.
#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    gain: f64,
    cluster_pos: usize,
    cluster_id: ClusterId,
    stamp: usize,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    // max by gain, ties by smaller cluster id
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .partial_cmp(&other.gain)
            .unwrap_or(Ordering::Equal)
            .then(other.cluster_id.cmp(&self.cluster_id))
    }
}

/// Lazy greedy ranking. Gains shrink monotonically as the selection grows,
/// so a stale queue gain is an upper bound on the true gain; entries are
/// refreshed until the best refreshed gain provably dominates the queue.
/// Zero-gain clusters are never emitted.
pub fn rank(
    clusters: &[ViewCluster],
    patches: &mut [TrianglePatch],
    cache: &FulfillmentCache,
) -> RankingResult {
    let total = cache.eligible.len();
    let mut result = RankingResult::default();
    if clusters.is_empty() || total == 0 {
        return result;
    }

    let mut queue: BinaryHeap<QueueEntry> = clusters
        .iter()
        .enumerate()
        .map(|(pos, v)| QueueEntry {
            gain: gain(patches, v.id, &cache.cluster_triangles[pos], total),
            cluster_pos: pos,
            cluster_id: v.id,
            stamp: 0,
        })
        .collect();

    let mut selections = 0usize;
    let mut cumulative = 0.0f64;
    loop {
        // refresh stale entries until the best refreshed gain strictly
        // dominates the stale upper bound of the queue top, or the top is
        // itself fresh
        let mut held: Vec<QueueEntry> = Vec::new();
        let mut best: Option<QueueEntry> = None;
        let selected = loop {
            let Some(&top) = queue.peek() else {
                break best;
            };
            if let Some(b) = best {
                if b.gain > top.gain {
                    break best;
                }
            }
            let mut top = queue.pop().unwrap();
            if top.stamp != selections {
                top.gain = gain(
                    patches,
                    top.cluster_id,
                    &cache.cluster_triangles[top.cluster_pos],
                    total,
                );
                top.stamp = selections;
            }
            match best {
                Some(b) if b >= top => held.push(top),
                _ => {
                    if let Some(b) = best.take() {
                        held.push(b);
                    }
                    best = Some(top);
                }
            }
        };

        // reinsert everything that was temporarily removed but not selected
        for e in held {
            queue.push(e);
        }
        let Some(chosen) = selected else {
            break;
        };
        if chosen.gain <= 0.0 {
            break;
        }

        selections += 1;
        cumulative += chosen.gain;
        for &t in &cache.cluster_triangles[chosen.cluster_pos] {
            let patch = &mut patches[t as usize];
            let f = patch
                .cluster_fulfillment
                .get(&chosen.cluster_id)
                .copied()
                .unwrap_or(0.0);
            if f > patch.current_fulfillment {
                patch.current_fulfillment = f;
            }
        }
        result.entries.push(RankingEntry {
            rank: selections,
            cluster: clusters[chosen.cluster_pos].clone(),
            gain_at_selection: chosen.gain,
            cumulative_fulfillment: cumulative,
        });
    }
    result
}

/// Eager reference: recompute every gain each iteration. Oracle for the
/// lazy implementation; O(iterations * clusters * triangles).
pub fn rank_eager(
    clusters: &[ViewCluster],
    patches: &mut [TrianglePatch],
    cache: &FulfillmentCache,
) -> RankingResult {
    let total = cache.eligible.len();
    let mut result = RankingResult::default();
    if clusters.is_empty() || total == 0 {
        return result;
    }
    let mut remaining: Vec<usize> = (0..clusters.len()).collect();
    let mut cumulative = 0.0;
    while !remaining.is_empty() {
        let (pick_idx, pick_gain) = remaining
            .iter()
            .enumerate()
            .map(|(i, &pos)| {
                (
                    i,
                    gain(
                        patches,
                        clusters[pos].id,
                        &cache.cluster_triangles[pos],
                        total,
                    ),
                    clusters[pos].id,
                )
            })
            .max_by(|a, b| {
                a.1.partial_cmp(&b.1)
                    .unwrap()
                    .then(b.2.cmp(&a.2))
            })
            .map(|(i, g, _)| (i, g))
            .unwrap();
        if pick_gain <= 0.0 {
            break;
        }
        let pos = remaining.remove(pick_idx);
        cumulative += pick_gain;
        for &t in &cache.cluster_triangles[pos] {
            let patch = &mut patches[t as usize];
            let f = patch
                .cluster_fulfillment
                .get(&clusters[pos].id)
                .copied()
                .unwrap_or(0.0);
            if f > patch.current_fulfillment {
                patch.current_fulfillment = f;
            }
        }
        result.entries.push(RankingEntry {
            rank: result.entries.len() + 1,
            cluster: clusters[pos].clone(),
            gain_at_selection: pick_gain,
            cumulative_fulfillment: cumulative,
        });
    }
    result
}

/// Prefix cumulative fulfillment per rank; the third column normalizes to
/// the final value.
pub fn fulfillment_curve(ranking: &RankingResult) -> Vec<(usize, f64, f64)> {
    let last = ranking
        .entries
        .last()
        .map(|e| e.cumulative_fulfillment)
        .unwrap_or(0.0);
    ranking
        .entries
        .iter()
        .map(|e| {
            let norm = if last > 0.0 {
                e.cumulative_fulfillment / last
            } else {
                0.0
            };
            (e.rank, e.cumulative_fulfillment, norm)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fulfillment::objective;
    use crate::scene::TrianglePatch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Build clusters plus a cache directly from planted per-triangle values.
    pub(crate) fn planted_instance(
        values: &[Vec<(ClusterId, f64)>],
    ) -> (Vec<ViewCluster>, Vec<TrianglePatch>, FulfillmentCache) {
        let mut ids: Vec<ClusterId> = values
            .iter()
            .flat_map(|v| v.iter().map(|&(c, _)| c))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        let clusters: Vec<ViewCluster> = ids
            .iter()
            .map(|&id| ViewCluster {
                id,
                key_view: id,
                partners: vec![id + 1000, id + 2000],
                score: 0.0,
            })
            .collect();
        let mut patches = vec![TrianglePatch::default(); values.len()];
        let mut cluster_triangles = vec![Vec::new(); clusters.len()];
        for (t, vals) in values.iter().enumerate() {
            for &(c, f) in vals {
                patches[t].cluster_fulfillment.insert(c, f);
                let pos = ids.binary_search(&c).unwrap();
                cluster_triangles[pos].push(t as TriangleId);
            }
        }
        let cache = FulfillmentCache {
            eligible: (0..values.len() as u32).collect(),
            cluster_triangles,
        };
        (clusters, patches, cache)
    }

    pub(crate) fn random_planted(
        rng: &mut impl Rng,
        n_clusters: usize,
        n_triangles: usize,
    ) -> (Vec<ViewCluster>, Vec<TrianglePatch>, FulfillmentCache) {
        let values: Vec<Vec<(ClusterId, f64)>> = (0..n_triangles)
            .map(|_| {
                let mut row = Vec::new();
                for c in 0..n_clusters as u32 {
                    if rng.gen_bool(0.5) {
                        row.push((c, rng.gen_range(0.0..1.0)));
                    }
                }
                row
            })
            .collect();
        planted_instance(&values)
    }

    #[test]
    fn single_cluster_ranking() {
        let (clusters, mut patches, cache) =
            planted_instance(&[vec![(0, 0.5)], vec![(0, 0.7)], vec![]]);
        let result = rank(&clusters, &mut patches, &cache);
        assert_eq!(result.entries.len(), 1);
        let expected = (0.5 + 0.7) / 3.0;
        assert!((result.entries[0].cumulative_fulfillment - expected).abs() < 1e-15);
        assert!((objective(&patches, &cache.eligible, &[0]) - expected).abs() < 1e-15);
    }

    #[test]
    fn duplicate_cluster_not_emitted() {
        let (clusters, mut patches, cache) =
            planted_instance(&[vec![(0, 0.5), (1, 0.5)], vec![(0, 0.3), (1, 0.3)]]);
        let result = rank(&clusters, &mut patches, &cache);
        assert_eq!(result.entries.len(), 1);
        assert_eq!(result.entries[0].cluster.id, 0); // tie broken by id
    }

    #[test]
    fn empty_inputs() {
        let (_, mut patches, cache) = planted_instance(&[vec![(0, 0.5)]]);
        assert!(rank(&[], &mut patches, &cache).entries.is_empty());
    }

    #[test]
    fn lazy_matches_eager_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..30 {
            let n_clusters = rng.gen_range(2..=24);
            let n_triangles = rng.gen_range(5..=120);
            let (clusters, patches, cache) = random_planted(&mut rng, n_clusters, n_triangles);
            let mut lazy_patches = patches.clone();
            let mut eager_patches = patches;
            let lazy = rank(&clusters, &mut lazy_patches, &cache);
            let eager = rank_eager(&clusters, &mut eager_patches, &cache);
            assert_eq!(lazy.entries.len(), eager.entries.len(), "trial {trial}");
            for (a, b) in lazy.entries.iter().zip(&eager.entries) {
                assert_eq!(a.cluster.id, b.cluster.id, "trial {trial}");
                assert!((a.gain_at_selection - b.gain_at_selection).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gains_non_increasing_and_curve_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (clusters, mut patches, cache) = random_planted(&mut rng, 16, 80);
        let result = rank(&clusters, &mut patches, &cache);
        for w in result.entries.windows(2) {
            assert!(w[0].gain_at_selection >= w[1].gain_at_selection - 1e-15);
            assert!(w[0].cumulative_fulfillment <= w[1].cumulative_fulfillment + 1e-15);
        }
        for e in &result.entries {
            assert!(e.gain_at_selection > 0.0);
        }
        // curve at rank m equals objective of the first m clusters
        let curve = fulfillment_curve(&result);
        for (i, &(rank_i, cum, norm)) in curve.iter().enumerate() {
            assert_eq!(rank_i, i + 1);
            let prefix: Vec<ClusterId> =
                result.entries[..=i].iter().map(|e| e.cluster.id).collect();
            let obj = objective(&patches, &cache.eligible, &prefix);
            assert!((cum - obj).abs() <= 1e-12, "rank {rank_i}: {cum} vs {obj}");
            assert!((0.0..=1.0 + 1e-12).contains(&norm));
        }
    }

    #[test]
    fn greedy_near_optimal_on_exhaustive_instances() {
        use itertools::Itertools;
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let bound = 1.0 - (-1.0f64).exp() - 1e-9;
        for _ in 0..5 {
            let (clusters, mut patches, cache) = random_planted(&mut rng, 8, 40);
            let base = patches.clone();
            let greedy = rank(&clusters, &mut patches, &cache);
            for m in 1..=3.min(greedy.entries.len()) {
                let greedy_val = greedy.entries[m - 1].cumulative_fulfillment;
                let mut best = 0.0f64;
                for subset in clusters.iter().map(|c| c.id).combinations(m) {
                    best = best.max(objective(&base, &cache.eligible, &subset));
                }
                assert!(
                    greedy_val >= bound * best,
                    "m={m}: greedy {greedy_val} vs optimum {best}"
                );
            }
        }
    }

    #[test]
    fn empty_curve() {
        assert!(fulfillment_curve(&RankingResult::default()).is_empty());
    }
}

