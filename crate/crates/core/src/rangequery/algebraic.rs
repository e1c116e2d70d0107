//! Euclidean range queries through the norm expansion
//! `|q - x|^2 = |q|^2 + |x|^2 - 2 <q, x>`.
//!
//! `|x|^2` is cached per point and `|q|^2` computed once per query, so the
//! per-point work is a single inner product. Points are processed in fixed
//! blocks; blocks may run on a worker pool, and results are concatenated in
//! block order so the output never depends on the thread count.
//!
//! The expansion loses precision through cancellation when `|q - x|` is close
//! to `eps`. Candidates whose expanded value falls inside a window around
//! `eps^2` are re-decided with the direct distance, which makes the output
//! identical to a linear scan.

use rayon::prelude::*;
use rayon::ThreadPool;

use super::{check_eps, Backend, IndexSet, QueryStats, RangeIndex};
use crate::dataset::{precompute_squared_norms, NormCache, PointCloud};
use crate::error::{Error, Result};
use crate::metric::Metric;

pub const DEFAULT_BLOCK: usize = 256;

/// Lower bound of the re-check window, relative to `max(1, eps^2)`.
const BOUNDARY_WINDOW: f64 = 1e-9;

/// Largest number of queries answered in one pass over the points.
const MAX_LOOKAHEAD: usize = 32;

const LANES: usize = 8;
const QUERY_TILE: usize = 4;

pub struct AlgebraicIndex<'a> {
    cloud: &'a PointCloud,
    norms: NormCache,
    block: usize,
    pool: Option<ThreadPool>,
}

impl std::fmt::Debug for AlgebraicIndex<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AlgebraicIndex")
            .field("n", &self.cloud.len())
            .field("block", &self.block)
            .field("threads", &self.threads())
            .finish()
    }
}

impl<'a> AlgebraicIndex<'a> {
    pub fn new(cloud: &'a PointCloud, block: usize, threads: usize) -> Result<Self> {
        check_euclidean(cloud)?;
        Self::with_norms(cloud, precompute_squared_norms(cloud), block, threads)
    }

    pub fn with_norms(cloud: &'a PointCloud, norms: NormCache, block: usize, threads: usize) -> Result<Self> {
        check_euclidean(cloud)?;
        if block == 0 {
            return Err(Error::invalid("block size must be >= 1"));
        }
        if threads == 0 {
            return Err(Error::invalid("thread count must be >= 1"));
        }
        if norms.sq_norms.len() != cloud.len() {
            return Err(Error::invalid("norm cache does not match the cloud"));
        }
        // A pool only pays off when there is more than one block to hand out.
        let pool = if threads > 1 && cloud.len() > block {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::InvalidState(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            cloud,
            norms,
            block,
            pool,
        })
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, ThreadPool::current_num_threads)
    }

    pub fn norms(&self) -> &NormCache {
        &self.norms
    }

    fn query_many(&self, queries: &[&[f64]], eps: f64) -> Vec<IndexSet> {
        let n = self.cloud.len();
        let prepared: Vec<Prepared> = queries
            .iter()
            .map(|q| Prepared::new(q, eps, self.cloud.dim()))
            .collect();
        let blocks = n.div_ceil(self.block);
        let run_block = |b: usize| {
            let lo = b * self.block;
            let hi = (lo + self.block).min(n);
            let mut out = vec![Vec::new(); prepared.len()];
            self.scan_block(&prepared, lo..hi, &mut out);
            out
        };
        let per_block: Vec<Vec<Vec<usize>>> = match &self.pool {
            Some(pool) if blocks > 1 => pool.install(|| (0..blocks).into_par_iter().map(run_block).collect()),
            _ => (0..blocks).map(run_block).collect(),
        };

        let mut merged: Vec<Vec<usize>> = vec![Vec::new(); prepared.len()];
        for block in per_block {
            for (dst, src) in merged.iter_mut().zip(block) {
                dst.extend_from_slice(&src);
            }
        }
        merged.into_iter().map(IndexSet::from_sorted).collect()
    }

    fn scan_block(&self, queries: &[Prepared], points: std::ops::Range<usize>, out: &mut [Vec<usize>]) {
        match Kernel::detect() {
            Kernel::Portable => self.scan_block_portable(queries, points, out),
            // SAFETY: the required CPU features were detected at runtime.
            #[cfg(target_arch = "x86_64")]
            Kernel::Avx2 => unsafe { self.scan_block_avx2(queries, points, out) },
            #[cfg(target_arch = "x86_64")]
            Kernel::Avx512 => unsafe { self.scan_block_avx512(queries, points, out) },
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn scan_block_avx2(
        &self,
        queries: &[Prepared],
        points: std::ops::Range<usize>,
        out: &mut [Vec<usize>],
    ) {
        self.scan_block_with::<{ Kernel::AVX2 }>(queries, points, out);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f,avx2,fma")]
    unsafe fn scan_block_avx512(
        &self,
        queries: &[Prepared],
        points: std::ops::Range<usize>,
        out: &mut [Vec<usize>],
    ) {
        self.scan_block_with::<{ Kernel::AVX512 }>(queries, points, out);
    }

    fn scan_block_portable(
        &self,
        queries: &[Prepared],
        points: std::ops::Range<usize>,
        out: &mut [Vec<usize>],
    ) {
        self.scan_block_with::<{ Kernel::PORTABLE }>(queries, points, out);
    }

    /// Shared body of every kernel. Callers must only pass a `KERNEL` whose
    /// CPU features are enabled in the calling function.
    #[inline(always)]
    fn scan_block_with<const KERNEL: u8>(
        &self,
        queries: &[Prepared],
        points: std::ops::Range<usize>,
        out: &mut [Vec<usize>],
    ) {
        let fused = KERNEL != Kernel::PORTABLE;
        let tiles = queries.len() / QUERY_TILE;
        for t in 0..tiles {
            let tile = &queries[t * QUERY_TILE..(t + 1) * QUERY_TILE];
            let qs = [tile[0].coords, tile[1].coords, tile[2].coords, tile[3].coords];
            let mut i = points.start;
            while i < points.end {
                let x = self.cloud.point(i);
                // Two points at a time where the kernel supports it.
                let (dots, step) = match KERNEL {
                    // SAFETY: see the contract above.
                    #[cfg(target_arch = "x86_64")]
                    Kernel::AVX512 if i + 1 < points.end => {
                        let [d0, d1] = unsafe { wide::dot4x2_avx512(qs, x, self.cloud.point(i + 1)) };
                        ([d0, d1], 2)
                    }
                    #[cfg(target_arch = "x86_64")]
                    Kernel::AVX512 => (unsafe { [wide::dot4_avx512(qs, x), [0.0; QUERY_TILE]] }, 1),
                    #[cfg(target_arch = "x86_64")]
                    Kernel::AVX2 => (unsafe { [wide::dot4_avx2(qs, x), [0.0; QUERY_TILE]] }, 1),
                    _ => ([dot4::<false>(qs, x), [0.0; QUERY_TILE]], 1),
                };
                for (p, point_dots) in dots.iter().take(step).enumerate() {
                    let x = self.cloud.point(i + p);
                    for (k, &dot) in point_dots.iter().enumerate() {
                        if self.decide(&tile[k], i + p, x, dot) {
                            out[t * QUERY_TILE + k].push(i + p);
                        }
                    }
                }
                i += step;
            }
        }
        for (k, q) in queries.iter().enumerate().skip(tiles * QUERY_TILE) {
            for i in points.clone() {
                let x = self.cloud.point(i);
                let dot = if fused {
                    dot::<true>(q.coords, x)
                } else {
                    dot::<false>(q.coords, x)
                };
                if self.decide(q, i, x, dot) {
                    out[k].push(i);
                }
            }
        }
    }

    #[inline(always)]
    fn decide(&self, q: &Prepared, i: usize, x: &[f64], dot: f64) -> bool {
        let xx = self.norms.sq_norms[i];
        let sq = q.sq_norm + xx - 2.0 * dot;
        let window = q.window.max(q.rounding * (q.sq_norm + xx));
        if (sq - q.eps_sq).abs() <= window {
            Metric::Euclidean.eval(q.coords, x) < q.eps
        } else {
            sq < q.eps_sq
        }
    }
}

struct Prepared<'q> {
    coords: &'q [f64],
    sq_norm: f64,
    eps: f64,
    eps_sq: f64,
    window: f64,
    /// Bound on the expansion's rounding error per unit of `|q|^2 + |x|^2`.
    rounding: f64,
}

impl<'q> Prepared<'q> {
    fn new(coords: &'q [f64], eps: f64, dim: usize) -> Self {
        let eps_sq = eps * eps;
        Self {
            coords,
            sq_norm: coords.iter().map(|v| v * v).sum(),
            eps,
            eps_sq,
            window: BOUNDARY_WINDOW * eps_sq.max(1.0),
            rounding: 4.0 * (dim as f64 + 4.0) * f64::EPSILON,
        }
    }
}

/// Inner-product implementation, picked from the CPU at run time. The
/// vector kernels use fused multiply-add and agree with each other bit for
/// bit; the portable one rounds products separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kernel {
    Portable,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

impl Kernel {
    const PORTABLE: u8 = 0;
    const AVX2: u8 = 1;
    const AVX512: u8 = 2;

    fn detect() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            use std::arch::is_x86_feature_detected as has;
            if has!("avx2") && has!("fma") {
                return if has!("avx512f") {
                    Kernel::Avx512
                } else {
                    Kernel::Avx2
                };
            }
        }
        Kernel::Portable
    }
}

#[inline(always)]
fn dot<const FUSED: bool>(q: &[f64], x: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let qc = q.chunks_exact(LANES);
    let xc = x.chunks_exact(LANES);
    let (qt, xt) = (qc.remainder(), xc.remainder());
    for (a, b) in qc.zip(xc) {
        for l in 0..LANES {
            acc[l] = madd::<FUSED>(a[l], b[l], acc[l]);
        }
    }
    reduce(acc) + qt.iter().zip(xt).map(|(a, b)| a * b).sum::<f64>()
}

/// Four inner products against the same point, sharing its loads. Lane
/// layout and reduction order match [`dot`], so results are bit-identical.
#[inline(always)]
fn dot4<const FUSED: bool>(qs: [&[f64]; QUERY_TILE], x: &[f64]) -> [f64; QUERY_TILE] {
    let d = x.len();
    let [q0, q1, q2, q3] = qs.map(|q| &q[..d]);
    let mut acc = [[0.0; LANES]; QUERY_TILE];
    let chunks = x
        .chunks_exact(LANES)
        .zip(q0.chunks_exact(LANES))
        .zip(q1.chunks_exact(LANES))
        .zip(q2.chunks_exact(LANES))
        .zip(q3.chunks_exact(LANES));
    for ((((xs, a), b), c), e) in chunks {
        for l in 0..LANES {
            acc[0][l] = madd::<FUSED>(a[l], xs[l], acc[0][l]);
            acc[1][l] = madd::<FUSED>(b[l], xs[l], acc[1][l]);
            acc[2][l] = madd::<FUSED>(c[l], xs[l], acc[2][l]);
            acc[3][l] = madd::<FUSED>(e[l], xs[l], acc[3][l]);
        }
    }
    let full = d / LANES * LANES;
    let mut out = [0.0; QUERY_TILE];
    for k in 0..QUERY_TILE {
        let tail: f64 = qs[k][full..d].iter().zip(&x[full..]).map(|(a, b)| a * b).sum();
        out[k] = reduce(acc[k]) + tail;
    }
    out
}

#[cfg(target_arch = "x86_64")]
mod wide {
    use std::arch::x86_64::*;

    use super::{LANES, QUERY_TILE};

    /// [`super::dot4`] with fused multiply-add in 256-bit registers. Lanes
    /// 0-3 live in one register and 4-7 in another; the final reduction
    /// follows [`super::reduce`], so results equal `dot4::<true>` bit for bit.
    #[inline]
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn dot4_avx2(qs: [&[f64]; QUERY_TILE], x: &[f64]) -> [f64; QUERY_TILE] {
        let d = x.len();
        let qs = qs.map(|q| &q[..d]);
        let full = d / LANES * LANES;
        let mut lo = [_mm256_setzero_pd(); QUERY_TILE];
        let mut hi = [_mm256_setzero_pd(); QUERY_TILE];
        let xp = x.as_ptr();
        let qp = qs.map(<[f64]>::as_ptr);
        let mut c = 0;
        while c < full {
            // SAFETY: c + LANES <= full <= d, the length of x and every query.
            let (xl, xh) = (_mm256_loadu_pd(xp.add(c)), _mm256_loadu_pd(xp.add(c + 4)));
            for k in 0..QUERY_TILE {
                lo[k] = _mm256_fmadd_pd(_mm256_loadu_pd(qp[k].add(c)), xl, lo[k]);
                hi[k] = _mm256_fmadd_pd(_mm256_loadu_pd(qp[k].add(c + 4)), xh, hi[k]);
            }
            c += LANES;
        }
        let mut out = [0.0; QUERY_TILE];
        for k in 0..QUERY_TILE {
            out[k] = finish(_mm256_add_pd(lo[k], hi[k]), &qs[k][full..], &x[full..]);
        }
        out
    }

    /// As [`dot4_avx2`] with all eight lanes in one 512-bit register.
    #[inline]
    #[target_feature(enable = "avx512f,avx2,fma")]
    pub(super) unsafe fn dot4_avx512(qs: [&[f64]; QUERY_TILE], x: &[f64]) -> [f64; QUERY_TILE] {
        let d = x.len();
        let qs = qs.map(|q| &q[..d]);
        let full = d / LANES * LANES;
        let mut acc = [_mm512_setzero_pd(); QUERY_TILE];
        let xp = x.as_ptr();
        let qp = qs.map(<[f64]>::as_ptr);
        let mut c = 0;
        while c < full {
            // SAFETY: c + LANES <= full <= d, the length of x and every query.
            let xs = _mm512_loadu_pd(xp.add(c));
            for k in 0..QUERY_TILE {
                acc[k] = _mm512_fmadd_pd(_mm512_loadu_pd(qp[k].add(c)), xs, acc[k]);
            }
            c += LANES;
        }
        let mut out = [0.0; QUERY_TILE];
        for k in 0..QUERY_TILE {
            let halves = _mm256_add_pd(
                _mm512_castpd512_pd256(acc[k]),
                _mm512_extractf64x4_pd::<1>(acc[k]),
            );
            out[k] = finish(halves, &qs[k][full..], &x[full..]);
        }
        out
    }

    /// [`dot4_avx512`] for two points at once, which doubles the number of
    /// independent accumulators.
    #[inline]
    #[target_feature(enable = "avx512f,avx2,fma")]
    pub(super) unsafe fn dot4x2_avx512(
        qs: [&[f64]; QUERY_TILE],
        x0: &[f64],
        x1: &[f64],
    ) -> [[f64; QUERY_TILE]; 2] {
        let d = x0.len();
        let x1 = &x1[..d];
        let qs = qs.map(|q| &q[..d]);
        let full = d / LANES * LANES;
        let mut a0 = [_mm512_setzero_pd(); QUERY_TILE];
        let mut a1 = [_mm512_setzero_pd(); QUERY_TILE];
        let (p0, p1) = (x0.as_ptr(), x1.as_ptr());
        let qp = qs.map(<[f64]>::as_ptr);
        let mut c = 0;
        while c < full {
            // SAFETY: c + LANES <= full <= d, the length of both points and
            // every query.
            let (v0, v1) = (_mm512_loadu_pd(p0.add(c)), _mm512_loadu_pd(p1.add(c)));
            for k in 0..QUERY_TILE {
                let q = _mm512_loadu_pd(qp[k].add(c));
                a0[k] = _mm512_fmadd_pd(q, v0, a0[k]);
                a1[k] = _mm512_fmadd_pd(q, v1, a1[k]);
            }
            c += LANES;
        }
        let mut out = [[0.0; QUERY_TILE]; 2];
        for (acc, (x, dst)) in [a0, a1].iter().zip([x0, x1].into_iter().zip(out.iter_mut())) {
            for k in 0..QUERY_TILE {
                let halves = _mm256_add_pd(
                    _mm512_castpd512_pd256(acc[k]),
                    _mm512_extractf64x4_pd::<1>(acc[k]),
                );
                dst[k] = finish(halves, &qs[k][full..], &x[full..]);
            }
        }
        out
    }

    /// `((s0 + s1) + (s2 + s3))` plus the scalar tail, as in `dot`.
    #[inline]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn finish(sums: __m256d, q_tail: &[f64], x_tail: &[f64]) -> f64 {
        let mut s = [0.0; 4];
        _mm256_storeu_pd(s.as_mut_ptr(), sums);
        let tail: f64 = q_tail.iter().zip(x_tail).map(|(a, b)| a * b).sum();
        ((s[0] + s[1]) + (s[2] + s[3])) + tail
    }
}

/// `a * b + acc`, rounded once when `FUSED`. Only call the fused form where
/// the `fma` feature is enabled; elsewhere it falls back to a slow software
/// routine.
#[inline(always)]
fn madd<const FUSED: bool>(a: f64, b: f64, acc: f64) -> f64 {
    if FUSED {
        a.mul_add(b, acc)
    } else {
        acc + a * b
    }
}

#[inline(always)]
fn reduce(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

fn check_euclidean(cloud: &PointCloud) -> Result<()> {
    match cloud.metric() {
        Metric::Euclidean => Ok(()),
        other => Err(Error::UnsupportedMetric(other.to_string())),
    }
}

/// One-shot algebraic query. Callers issuing many queries should keep an
/// [`AlgebraicIndex`] instead, which owns its worker pool.
pub fn algebraic_range(
    cloud: &PointCloud,
    norms: &NormCache,
    query: &[f64],
    eps: f64,
    block: usize,
    threads: usize,
) -> Result<IndexSet> {
    let index = AlgebraicIndex::with_norms(cloud, norms.clone(), block, threads)?;
    index.range(query, eps)
}

impl RangeIndex for AlgebraicIndex<'_> {
    fn backend(&self) -> Backend {
        Backend::Algebraic
    }

    fn cloud(&self) -> &PointCloud {
        self.cloud
    }

    fn range_with_stats(&self, query: &[f64], eps: f64) -> Result<(IndexSet, QueryStats)> {
        check_eps(eps)?;
        self.cloud.check_query(query)?;
        let set = self.query_many(&[query], eps).pop().unwrap_or_default();
        let stats = QueryStats {
            nodes_visited: 0,
            distances_evaluated: self.cloud.len(),
        };
        Ok((set, stats))
    }

    fn range_many(&self, queries: &[&[f64]], eps: f64) -> Result<Vec<IndexSet>> {
        check_eps(eps)?;
        for q in queries {
            self.cloud.check_query(q)?;
        }
        Ok(queries
            .chunks(MAX_LOOKAHEAD)
            .flat_map(|chunk| self.query_many(chunk, eps))
            .collect())
    }

    fn lookahead_hint(&self) -> usize {
        MAX_LOOKAHEAD
    }
}
