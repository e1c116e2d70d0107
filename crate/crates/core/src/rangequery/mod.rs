//! Exact range queries `{ i : d(q, x_i) < eps }` behind one interface.
//!
//! All backends use the open-ball convention (strict `<`), so a point at
//! distance exactly `eps` is never returned.

mod algebraic;
mod balltree;
mod linear;

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataset::PointCloud;
use crate::error::{Error, Result};

pub use algebraic::{algebraic_range, AlgebraicIndex, DEFAULT_BLOCK};
pub use balltree::{ball_tree_range, build_ball_tree, BallNode, BallTree, BallTreeIndex, DEFAULT_LEAF_SIZE};
pub use linear::{linear_scan_range, LinearScan};

/// Strictly increasing point indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps indices that are already strictly increasing.
    pub fn from_sorted(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        IndexSet(indices)
    }

    /// Sorts and deduplicates arbitrary indices.
    pub fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        IndexSet(indices)
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn is_subset(&self, other: &IndexSet) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl Deref for IndexSet {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

/// Work counters for one query. Only the ball tree counts nodes; the scan
/// backends report `distances_evaluated = n`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryStats {
    pub nodes_visited: usize,
    pub distances_evaluated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Backend {
    #[default]
    Linear,
    BallTree,
    Algebraic,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::Linear, Backend::BallTree, Backend::Algebraic];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Linear => "linear",
            Backend::BallTree => "balltree",
            Backend::Algebraic => "algebraic",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Backend::Linear),
            "balltree" => Ok(Backend::BallTree),
            "algebraic" => Ok(Backend::Algebraic),
            other => Err(Error::invalid(format!("unknown backend `{other}`"))),
        }
    }
}

/// A built range-query index over one point cloud.
pub trait RangeIndex: Sync {
    fn backend(&self) -> Backend;

    fn cloud(&self) -> &PointCloud;

    fn range_with_stats(&self, query: &[f64], eps: f64) -> Result<(IndexSet, QueryStats)>;

    fn range(&self, query: &[f64], eps: f64) -> Result<IndexSet> {
        self.range_with_stats(query, eps).map(|(set, _)| set)
    }

    /// Answers several queries at once; element `i` belongs to `queries[i]`.
    fn range_many(&self, queries: &[&[f64]], eps: f64) -> Result<Vec<IndexSet>> {
        queries.par_iter().map(|q| self.range(q, eps)).collect()
    }

    /// How many speculative queries a sequential driver may usefully batch
    /// through [`RangeIndex::range_many`]. 1 means batching gains nothing.
    fn lookahead_hint(&self) -> usize {
        1
    }
}

/// Runs `queries` against `index`; results come back in query order
/// regardless of how the work was scheduled.
pub fn batch_range<Q: AsRef<[f64]>>(
    index: &dyn RangeIndex,
    queries: &[Q],
    eps: f64,
) -> Result<Vec<IndexSet>> {
    check_eps(eps)?;
    let cloud = index.cloud();
    let refs: Vec<&[f64]> = queries.iter().map(AsRef::as_ref).collect();
    for q in &refs {
        cloud.check_query(q)?;
    }
    if refs.is_empty() {
        return Ok(Vec::new());
    }
    index.range_many(&refs, eps)
}

/// Backend choice plus its tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendConfig {
    pub backend: Backend,
    pub leaf_size: usize,
    pub block: usize,
    pub threads: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Linear,
            leaf_size: DEFAULT_LEAF_SIZE,
            block: DEFAULT_BLOCK,
            threads: default_threads(),
        }
    }
}

impl BackendConfig {
    pub fn new(backend: Backend) -> Self {
        Self {
            backend,
            ..Self::default()
        }
    }

    /// Builds the index (ball tree, norm cache, or nothing) over `cloud`.
    pub fn build<'a>(&self, cloud: &'a PointCloud) -> Result<Box<dyn RangeIndex + 'a>> {
        Ok(match self.backend {
            Backend::Linear => Box::new(LinearScan::new(cloud)),
            Backend::BallTree => Box::new(BallTreeIndex::new(cloud, self.leaf_size)?),
            Backend::Algebraic => Box::new(AlgebraicIndex::new(cloud, self.block, self.threads)?),
        })
    }
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!(
            "epsilon must be a positive finite number, got {eps}"
        )));
    }
    Ok(())
}
