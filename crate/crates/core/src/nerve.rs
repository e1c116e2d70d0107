//! Nerve of a cover, restricted to intersections witnessed by data points.
//!
//! A set of landmarks spans a simplex when some data point lies in all of
//! their balls. Every construction here works point-by-point over
//! [`Cover::point_to_balls`], so it is purely combinatorial.

use std::collections::BTreeSet;

use crate::cover::Cover;
use crate::error::{Error, Result};

/// Upper bound on the subsets [`build_k_skeleton`] will enumerate.
pub const DEFAULT_SIMPLEX_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vertex {
    /// Position in the landmark list; doubles as the vertex id.
    pub position: usize,
    /// Point index of the landmark.
    pub landmark: usize,
    pub ball_size: usize,
}

/// The Ball Mapper graph: one vertex per landmark, an edge per pair of balls
/// sharing a data point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapperGraph {
    pub vertices: Vec<Vertex>,
    /// `(i, j)` with `i < j`, sorted lexicographically.
    pub edges: Vec<(usize, usize)>,
}

impl MapperGraph {
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let key = if a < b { (a, b) } else { (b, a) };
        self.edges.binary_search(&key).is_ok()
    }
}

pub fn build_mapper_graph(cover: &Cover) -> MapperGraph {
    let vertices = cover
        .landmarks
        .iter()
        .zip(&cover.members)
        .enumerate()
        .map(|(position, (&landmark, ball))| Vertex {
            position,
            landmark,
            ball_size: ball.len(),
        })
        .collect();

    let mut edges = Vec::new();
    for balls in &cover.point_to_balls {
        for (a, &i) in balls.iter().enumerate() {
            for &j in &balls[a + 1..] {
                edges.push(if i < j { (i, j) } else { (j, i) });
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    MapperGraph { vertices, edges }
}

/// Simplices up to some dimension; `by_dim[d]` holds the sorted
/// `d`-simplices, each a sorted tuple of landmark positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimplicialComplex {
    pub by_dim: Vec<Vec<Vec<usize>>>,
}

impl SimplicialComplex {
    pub fn max_dim(&self) -> usize {
        self.by_dim.len().saturating_sub(1)
    }

    pub fn simplices(&self, dim: usize) -> &[Vec<usize>] {
        self.by_dim.get(dim).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, simplex: &[usize]) -> bool {
        simplex.len().checked_sub(1).is_some_and(|d| {
            self.simplices(d)
                .binary_search_by(|s| s.as_slice().cmp(simplex))
                .is_ok()
        })
    }

    pub fn len(&self) -> usize {
        self.by_dim.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First simplex with a missing codimension-one face, if any.
    pub fn find_unclosed(&self) -> Option<Vec<usize>> {
        for simplices in self.by_dim.iter().skip(1) {
            for s in simplices {
                for skip in 0..s.len() {
                    let face: Vec<usize> = s
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != skip)
                        .map(|(_, &v)| v)
                        .collect();
                    if !self.contains(&face) {
                        return Some(s.clone());
                    }
                }
            }
        }
        None
    }
}

pub fn build_k_skeleton(cover: &Cover, k_max: usize) -> Result<SimplicialComplex> {
    build_k_skeleton_with_budget(cover, k_max, DEFAULT_SIMPLEX_BUDGET)
}

/// Enumerates, for each point, every subset of its covering balls with at
/// most `k_max + 1` elements. Fails before enumerating if the total count
/// would exceed `budget`.
pub fn build_k_skeleton_with_budget(cover: &Cover, k_max: usize, budget: u64) -> Result<SimplicialComplex> {
    let max_size = k_max.saturating_add(1);
    let mut total: u64 = 0;
    for balls in &cover.point_to_balls {
        total = total.saturating_add(subsets_up_to(balls.len(), max_size));
        if total > budget {
            return Err(Error::ResourceLimit(format!(
                "a {k_max}-skeleton needs more than {budget} subset enumerations; use a smaller skeleton dimension"
            )));
        }
    }

    let mut sets: Vec<BTreeSet<Vec<usize>>> = vec![BTreeSet::new(); max_size.min(largest_ball_count(cover))];
    let mut current = Vec::with_capacity(max_size);
    for balls in &cover.point_to_balls {
        enumerate_subsets(balls, 0, max_size, &mut current, &mut sets);
    }
    Ok(SimplicialComplex {
        by_dim: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
    })
}

fn largest_ball_count(cover: &Cover) -> usize {
    cover.point_to_balls.iter().map(Vec::len).max().unwrap_or(0)
}

fn enumerate_subsets(
    items: &[usize],
    from: usize,
    max_size: usize,
    current: &mut Vec<usize>,
    out: &mut [BTreeSet<Vec<usize>>],
) {
    for i in from..items.len() {
        current.push(items[i]);
        out[current.len() - 1].insert(current.clone());
        if current.len() < max_size {
            enumerate_subsets(items, i + 1, max_size, current, out);
        }
        current.pop();
    }
}

/// `sum_{s=1..=max_size} C(t, s)`, saturating.
fn subsets_up_to(t: usize, max_size: usize) -> u64 {
    let mut total: u64 = 0;
    let mut binom: u64 = 1;
    for s in 1..=max_size.min(t) {
        binom = binom.saturating_mul((t - s + 1) as u64) / s as u64;
        total = total.saturating_add(binom);
    }
    total
}
