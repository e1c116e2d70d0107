//! Metric ball tree.
//!
//! Each node stores a midrange center (per-coordinate `(max + min) / 2`), the
//! radius that covers its points under the cloud's metric, and a contiguous
//! span of the point permutation. Nodes with more than `leaf_size` points are
//! split around two far-apart pivots.

use std::ops::Range;

use super::{check_eps, Backend, IndexSet, QueryStats, RangeIndex};
use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::metric::Metric;

pub const DEFAULT_LEAF_SIZE: usize = 40;

/// Points per group in the leaf coordinate layout.
const BLOCK: usize = 8;

/// Relative slack on the pruning test. Computed distances carry rounding
/// error, so a subtree is only skipped when the bound clears `eps` by more
/// than that error.
const PRUNE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BallNode {
    pub center: Vec<f64>,
    pub radius: f64,
    /// Range into [`BallTree::point_perm`].
    pub span: Range<usize>,
    pub children: Option<(usize, usize)>,
}

impl BallNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallTree {
    nodes: Vec<BallNode>,
    leaf_size: usize,
    point_perm: Vec<usize>,
    /// Leaf points in groups of [`BLOCK`], each group stored coordinate-major
    /// and zero-padded, so one pass over a group yields [`BLOCK`] distances.
    leaf_blocks: Vec<f64>,
    /// Start of each leaf's groups in `leaf_blocks`; unused for inner nodes.
    block_start: Vec<usize>,
    metric: Metric,
}

impl BallTree {
    pub const ROOT: usize = 0;

    pub fn nodes(&self) -> &[BallNode] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn point_perm(&self) -> &[usize] {
        &self.point_perm
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Point indices held by node `id` (all points of its subtree).
    pub fn node_points(&self, id: usize) -> &[usize] {
        &self.point_perm[self.nodes[id].span.clone()]
    }

    pub fn leaves(&self) -> impl Iterator<Item = (usize, &BallNode)> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.is_leaf())
    }
}

pub fn build_ball_tree(cloud: &PointCloud, leaf_size: usize) -> Result<BallTree> {
    if leaf_size == 0 {
        return Err(Error::invalid("leaf size must be >= 1"));
    }
    let metric = cloud.metric();
    let mut perm: Vec<usize> = (0..cloud.len()).collect();
    let mut nodes: Vec<BallNode> = Vec::with_capacity(2 * cloud.len().div_ceil(leaf_size));
    let mut scratch_b: Vec<usize> = Vec::new();

    nodes.push(make_node(cloud, &perm, 0..cloud.len()));
    let mut pending = vec![BallTree::ROOT];
    while let Some(id) = pending.pop() {
        let span = nodes[id].span.clone();
        if span.len() <= leaf_size {
            continue;
        }
        let mid = split(
            cloud,
            metric,
            &nodes[id].center,
            &mut perm[span.clone()],
            &mut scratch_b,
        );
        let left = nodes.len();
        nodes.push(make_node(cloud, &perm, span.start..span.start + mid));
        nodes.push(make_node(cloud, &perm, span.start + mid..span.end));
        nodes[id].children = Some((left, left + 1));
        pending.push(left + 1);
        pending.push(left);
    }

    let mut leaf_blocks = Vec::with_capacity(cloud.coords().len());
    let mut block_start = vec![usize::MAX; nodes.len()];
    for (id, node) in nodes.iter().enumerate().filter(|(_, n)| n.is_leaf()) {
        block_start[id] = leaf_blocks.len();
        for group in perm[node.span.clone()].chunks(BLOCK) {
            for j in 0..cloud.dim() {
                leaf_blocks.extend((0..BLOCK).map(|l| group.get(l).map_or(0.0, |&p| cloud.point(p)[j])));
            }
        }
    }
    Ok(BallTree {
        nodes,
        leaf_size,
        point_perm: perm,
        leaf_blocks,
        block_start,
        metric,
    })
}

fn make_node(cloud: &PointCloud, perm: &[usize], span: Range<usize>) -> BallNode {
    let dim = cloud.dim();
    let members = &perm[span.clone()];
    let mut lo = cloud.point(members[0]).to_vec();
    let mut hi = lo.clone();
    for &p in &members[1..] {
        for ((l, h), &v) in lo.iter_mut().zip(hi.iter_mut()).zip(cloud.point(p)) {
            *l = l.min(v);
            *h = h.max(v);
        }
    }
    // Halve before adding so extreme coordinates cannot overflow.
    let center: Vec<f64> = (0..dim).map(|j| 0.5 * hi[j] + 0.5 * lo[j]).collect();
    let radius = members
        .iter()
        .map(|&p| cloud.dist_to(&center, p))
        .fold(0.0, f64::max);
    BallNode {
        center,
        radius,
        span,
        children: None,
    }
}

/// Reorders `points` so that the first child's points come first and
/// returns the split position.
///
/// Pivot A is the point farthest from the center, pivot B the point farthest
/// from A (first occurrence wins on ties). Points strictly closer to A go
/// left; ties go right. If one side would be empty, which only happens when
/// every point coincides, the node is halved instead.
fn split(
    cloud: &PointCloud,
    metric: Metric,
    center: &[f64],
    points: &mut [usize],
    scratch: &mut Vec<usize>,
) -> usize {
    let farthest_from = |origin: &[f64], points: &[usize]| {
        let mut best = (points[0], f64::NEG_INFINITY);
        for &p in points {
            let d = metric.eval(origin, cloud.point(p));
            if d > best.1 {
                best = (p, d);
            }
        }
        best.0
    };
    let pivot_a = farthest_from(center, points);
    let pivot_b = farthest_from(cloud.point(pivot_a), points);
    let (xa, xb) = (cloud.point(pivot_a), cloud.point(pivot_b));

    scratch.clear();
    let mut left = 0;
    for i in 0..points.len() {
        let p = points[i];
        let x = cloud.point(p);
        if metric.eval(x, xa) < metric.eval(x, xb) {
            points[left] = p;
            left += 1;
        } else {
            scratch.push(p);
        }
    }
    points[left..].copy_from_slice(scratch);

    if left == 0 || left == points.len() {
        points.len() / 2
    } else {
        left
    }
}

pub fn ball_tree_range(
    tree: &BallTree,
    cloud: &PointCloud,
    query: &[f64],
    eps: f64,
) -> Result<(IndexSet, QueryStats)> {
    check_eps(eps)?;
    cloud.check_query(query)?;
    if tree.point_perm.len() != cloud.len()
        || tree.metric != cloud.metric()
        || tree.nodes[BallTree::ROOT].center.len() != cloud.dim()
    {
        return Err(Error::invalid("ball tree was built over a different cloud"));
    }
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::is_x86_feature_detected as has;
        // SAFETY: the required CPU features were just detected.
        if has!("avx512f") {
            return Ok(unsafe { search_avx512(tree, query, eps) });
        }
        if has!("avx2") {
            return Ok(unsafe { search_avx2(tree, query, eps) });
        }
    }
    Ok(search(tree, query, eps))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn search_avx512(tree: &BallTree, query: &[f64], eps: f64) -> (IndexSet, QueryStats) {
    search(tree, query, eps)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn search_avx2(tree: &BallTree, query: &[f64], eps: f64) -> (IndexSet, QueryStats) {
    search(tree, query, eps)
}

#[inline(always)]
fn search(tree: &BallTree, query: &[f64], eps: f64) -> (IndexSet, QueryStats) {
    let metric = tree.metric;
    let limit = group_limit(metric, eps);
    let mut stats = QueryStats::default();
    let mut hits = Vec::new();
    let mut stack = vec![BallTree::ROOT];
    while let Some(id) = stack.pop() {
        let node = &tree.nodes[id];
        stats.nodes_visited += 1;
        stats.distances_evaluated += 1;
        let to_center = metric.eval(query, &node.center);
        if to_center - node.radius > eps + PRUNE_SLACK * (to_center + node.radius + eps) {
            continue;
        }
        match node.children {
            Some((left, right)) => {
                stack.push(right);
                stack.push(left);
            }
            None => {
                stats.distances_evaluated += node.span.len();
                let groups = tree.leaf_blocks[tree.block_start[id]..].chunks_exact(BLOCK * query.len());
                for (points, group) in tree.point_perm[node.span.clone()].chunks(BLOCK).zip(groups) {
                    let acc = group_accumulate(metric, query, group);
                    let mut inside = acc
                        .iter()
                        .take(points.len())
                        .enumerate()
                        .fold(0u32, |m, (l, &v)| m | u32::from(v < limit) << l);
                    while inside != 0 {
                        hits.push(points[inside.trailing_zeros() as usize]);
                        inside &= inside - 1;
                    }
                }
            }
        }
    }
    hits.sort_unstable();
    (IndexSet::from_sorted(hits), stats)
}

/// Bound on [`group_accumulate`] values: a point is inside the open ball
/// exactly when its accumulated value is below it.
///
/// For the Euclidean metric the accumulator holds the squared distance. The
/// bound is the smallest double whose rounded square root reaches `eps`, so
/// `s < bound` decides the same way as `s.sqrt() < eps` without the root.
fn group_limit(metric: Metric, eps: f64) -> f64 {
    match metric {
        Metric::Euclidean => {
            let mut t = eps * eps;
            while t > 0.0 && t.sqrt() >= eps {
                t = t.next_down();
            }
            while t.sqrt() < eps {
                t = t.next_up();
            }
            t
        }
        Metric::Manhattan | Metric::Chebyshev => eps,
    }
}

/// Per-point accumulators for one coordinate-major group: the squared
/// distance for Euclidean, the distance itself otherwise.
///
/// Each lane adds up its own point in coordinate order with the same
/// operations as [`Metric::eval`], so the values are bit-identical to it.
#[inline(always)]
fn group_accumulate(metric: Metric, query: &[f64], group: &[f64]) -> [f64; BLOCK] {
    let columns = query.iter().zip(group.chunks_exact(BLOCK));
    let mut acc = [0.0; BLOCK];
    match metric {
        Metric::Euclidean => {
            for (&q, col) in columns {
                for l in 0..BLOCK {
                    let d = q - col[l];
                    acc[l] += d * d;
                }
            }
        }
        Metric::Manhattan => {
            for (&q, col) in columns {
                for l in 0..BLOCK {
                    acc[l] += (q - col[l]).abs();
                }
            }
        }
        Metric::Chebyshev => {
            for (&q, col) in columns {
                for l in 0..BLOCK {
                    acc[l] = acc[l].max((q - col[l]).abs());
                }
            }
        }
    }
    acc
}

/// A ball tree paired with the cloud it indexes.
#[derive(Debug, Clone)]
pub struct BallTreeIndex<'a> {
    tree: BallTree,
    cloud: &'a PointCloud,
}

impl<'a> BallTreeIndex<'a> {
    pub fn new(cloud: &'a PointCloud, leaf_size: usize) -> Result<Self> {
        Ok(Self {
            tree: build_ball_tree(cloud, leaf_size)?,
            cloud,
        })
    }

    pub fn tree(&self) -> &BallTree {
        &self.tree
    }
}

impl RangeIndex for BallTreeIndex<'_> {
    fn backend(&self) -> Backend {
        Backend::BallTree
    }

    fn cloud(&self) -> &PointCloud {
        self.cloud
    }

    fn range_with_stats(&self, query: &[f64], eps: f64) -> Result<(IndexSet, QueryStats)> {
        ball_tree_range(&self.tree, self.cloud, query, eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_uniform_cloud;
    use crate::metric::squared_euclidean;
    use crate::rangequery::linear_scan_range;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(points: &[f64]) -> PointCloud {
        let rows: Vec<[f64; 1]> = points.iter().map(|&p| [p]).collect();
        PointCloud::from_rows(&rows, Metric::Euclidean).unwrap()
    }

    #[test]
    fn group_accumulators_match_metric_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in [1, 2, 3, 7, 10, 33] {
            for metric in Metric::ALL {
                let rows: Vec<Vec<f64>> = (0..BLOCK)
                    .map(|_| (0..dim).map(|_| rng.random_range(-1e3..1e3)).collect())
                    .collect();
                let query: Vec<f64> = (0..dim).map(|_| rng.random_range(-1e3..1e3)).collect();
                let group: Vec<f64> = (0..dim).flat_map(|j| rows.iter().map(move |r| r[j])).collect();
                let acc = group_accumulate(metric, &query, &group);
                for (row, a) in rows.iter().zip(acc) {
                    let expected = match metric {
                        Metric::Euclidean => squared_euclidean(&query, row),
                        _ => metric.eval(&query, row),
                    };
                    assert_eq!(a.to_bits(), expected.to_bits(), "{metric} D={dim}");
                }
            }
        }
    }

    #[test]
    fn dispatched_and_portable_search_agree() {
        for metric in Metric::ALL {
            let cloud = generate_uniform_cloud(700, 6, 8).unwrap().with_metric(metric);
            let tree = build_ball_tree(&cloud, 13).unwrap();
            for i in (0..700).step_by(37) {
                let q = cloud.point(i);
                let (fast, _) = ball_tree_range(&tree, &cloud, q, 0.45).unwrap();
                let (plain, _) = search(&tree, q, 0.45);
                assert_eq!(fast, plain);
                assert_eq!(fast, linear_scan_range(&cloud, q, 0.45).unwrap());
            }
        }
    }

    #[test]
    fn euclidean_limit_matches_square_root_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut eps_values: Vec<f64> = (0..2000).map(|_| rng.random_range(1e-6..1e3)).collect();
        eps_values.extend([1.0, 2.0, 0.1, 1e-300, 1e150, f64::MIN_POSITIVE]);
        for eps in eps_values {
            let limit = group_limit(Metric::Euclidean, eps);
            let mut s = limit;
            for _ in 0..4 {
                s = s.next_down();
            }
            for _ in 0..9 {
                // Sums of squares are never negative.
                if s >= 0.0 {
                    assert_eq!(s < limit, s.sqrt() < eps, "eps={eps} s={s}");
                }
                s = s.next_up();
            }
        }
    }

    /// Walks the whole tree and checks every structural invariant.
    fn assert_well_formed(tree: &BallTree, cloud: &PointCloud) {
        let mut seen = vec![0usize; cloud.len()];
        for (id, node) in tree.nodes().iter().enumerate() {
            for &p in tree.node_points(id) {
                assert!(
                    cloud.dist_to(&node.center, p) <= node.radius,
                    "node {id} misses point {p}"
                );
            }
            match node.children {
                None => {
                    assert!(node.span.len() <= tree.leaf_size());
                    for &p in tree.node_points(id) {
                        seen[p] += 1;
                    }
                }
                Some((l, r)) => {
                    assert!(node.span.len() > tree.leaf_size());
                    let (ln, rn) = (&tree.nodes()[l], &tree.nodes()[r]);
                    assert!(!ln.span.is_empty() && !rn.span.is_empty());
                    assert_eq!(ln.span.start, node.span.start);
                    assert_eq!(ln.span.end, rn.span.start);
                    assert_eq!(rn.span.end, node.span.end);
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1), "every point in exactly one leaf");
    }

    #[test]
    fn small_cloud_is_single_leaf() {
        let cloud = generate_uniform_cloud(10, 3, 0).unwrap();
        let tree = build_ball_tree(&cloud, 40).unwrap();
        assert_eq!(tree.node_count(), 1);
        assert!(tree.nodes()[0].is_leaf());
    }

    #[test]
    fn midrange_center_and_radius() {
        let cloud = PointCloud::from_rows(&[[0.0, 0.0], [2.0, 4.0]], Metric::Euclidean).unwrap();
        let tree = build_ball_tree(&cloud, 40).unwrap();
        let root = &tree.nodes()[0];
        assert_eq!(root.center, vec![1.0, 2.0]);
        assert!((root.radius - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn random_tree_is_well_formed() {
        let cloud = generate_uniform_cloud(500, 10, 42).unwrap();
        for leaf in [1, 7, 40] {
            assert_well_formed(&build_ball_tree(&cloud, leaf).unwrap(), &cloud);
        }
        for metric in [Metric::Manhattan, Metric::Chebyshev] {
            let cloud = cloud.clone().with_metric(metric);
            assert_well_formed(&build_ball_tree(&cloud, 5).unwrap(), &cloud);
        }
    }

    #[test]
    fn coincident_points_are_halved() {
        let rows = vec![[1.0, 1.0]; 9];
        let cloud = PointCloud::from_rows(&rows, Metric::Euclidean).unwrap();
        let tree = build_ball_tree(&cloud, 2).unwrap();
        assert_well_formed(&tree, &cloud);
        assert!(tree.leaves().all(|(_, n)| !n.span.is_empty()));
    }

    #[test]
    fn ties_go_to_second_child() {
        // 0 and 2 are the pivots; 1 is equidistant and must land with pivot B.
        let cloud = line(&[0.0, 1.0, 2.0]);
        let tree = build_ball_tree(&cloud, 1).unwrap();
        let (l, r) = tree.nodes()[0].children.unwrap();
        assert_eq!(tree.node_points(l), &[0]);
        let mut right = tree.node_points(r).to_vec();
        right.sort();
        assert_eq!(right, vec![1, 2]);
    }

    #[test]
    fn zero_leaf_size_rejected() {
        let cloud = line(&[0.0]);
        assert!(build_ball_tree(&cloud, 0).is_err());
    }

    #[test]
    fn hand_traced_query() {
        let cloud = line(&[0.0, 1.0, 2.0, 3.0]);
        let tree = build_ball_tree(&cloud, 1).unwrap();
        let (set, stats) = ball_tree_range(&tree, &cloud, &[0.0], 1.5).unwrap();
        assert_eq!(&*set, &[0, 1]);
        assert!(stats.nodes_visited <= tree.node_count());
        assert!(stats.distances_evaluated <= cloud.len() + stats.nodes_visited);
    }

    #[test]
    fn far_query_pruned_at_root() {
        let cloud = generate_uniform_cloud(300, 4, 3).unwrap();
        let tree = build_ball_tree(&cloud, 10).unwrap();
        let (set, stats) = ball_tree_range(&tree, &cloud, &[50.0; 4], 1.0).unwrap();
        assert!(set.is_empty());
        assert_eq!(stats.nodes_visited, 1);
        assert_eq!(stats.distances_evaluated, 1);
    }

    #[test]
    fn matches_linear_scan_on_random_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for round in 0..200 {
            let dim = [2, 10, 100][round % 3];
            let n = rng.random_range(1..=2000);
            let cloud = generate_uniform_cloud(n, dim, round as u64).unwrap();
            let tree = build_ball_tree(&cloud, rng.random_range(1..=50)).unwrap();
            let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.1..1.1)).collect();
            let typical = (dim as f64 / 6.0).sqrt();
            let eps = typical * rng.random_range(0.1..1.2);
            let (set, stats) = ball_tree_range(&tree, &cloud, &q, eps).unwrap();
            assert_eq!(set, linear_scan_range(&cloud, &q, eps).unwrap(), "round {round}");
            assert!(stats.nodes_visited <= tree.node_count());
            assert!(stats.distances_evaluated <= cloud.len() + stats.nodes_visited);
        }
    }

    #[test]
    fn returned_points_lie_in_visited_leaves() {
        let cloud = generate_uniform_cloud(1000, 3, 77).unwrap();
        let tree = build_ball_tree(&cloud, 8).unwrap();
        let q = [0.3, 0.6, 0.2];
        let eps = 0.2;
        let (set, _) = ball_tree_range(&tree, &cloud, &q, eps).unwrap();
        // Recompute which leaves survive pruning and check they hold every hit.
        let mut reachable = Vec::new();
        let mut stack = vec![BallTree::ROOT];
        while let Some(id) = stack.pop() {
            let node = &tree.nodes()[id];
            let d = Metric::Euclidean.eval(&q, &node.center);
            if d - node.radius > eps {
                continue;
            }
            match node.children {
                Some((l, r)) => stack.extend([l, r]),
                None => reachable.extend_from_slice(tree.node_points(id)),
            }
        }
        assert!(set.iter().all(|p| reachable.contains(p)));
    }

    #[test]
    fn clustered_cloud_prunes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut coords = Vec::with_capacity(2000 * 10);
        for i in 0..2000 {
            let offset = if i < 1000 { 0.0 } else { 100.0 };
            coords.extend((0..10).map(|_| offset + rng.random::<f64>()));
        }
        let cloud = PointCloud::new(coords, 10, Metric::Euclidean).unwrap();
        let tree = build_ball_tree(&cloud, 40).unwrap();
        let (set, stats) = ball_tree_range(&tree, &cloud, &[0.5; 10], 1.0).unwrap();
        assert!(stats.nodes_visited < tree.node_count());
        assert!(set.iter().all(|&p| p < 1000));
        assert_eq!(set, linear_scan_range(&cloud, &[0.5; 10], 1.0).unwrap());
    }
}
