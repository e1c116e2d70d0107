//! Benchmark harness: times greedy cover construction over a grid of
//! `(backend, n, D, trial)` cells, summarizes medians and speedups, and fits
//! power-law scaling exponents.

mod fit;
mod memory;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use log::warn;

use crate::cover::{greedy_eps_net, Order};
use crate::dataset::{generate_uniform_cloud, PointCloud};
use crate::error::{Error, Result};
use crate::rangequery::{default_threads, Backend, BackendConfig};

pub use fit::{fit_power_law, PowerLawFit};
pub use memory::{
    allocator_instrumented, live_bytes, peak_memory_probe, resident_bytes, MemoryMode, MemoryReading,
    TrackingAllocator, PROBE_OVERHEAD_MB, SAMPLE_INTERVAL,
};

#[cfg(test)]
pub(crate) static PROBE_TEST_LOCK: std::sync::Mutex<()> = std::sync::Mutex::new(());

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonRule {
    Fixed(f64),
    /// `0.5 * sqrt(D / 6)`: half the large-D mean distance between two
    /// uniform points of the unit cube.
    CubeDefault,
}

impl EpsilonRule {
    pub fn epsilon(self, dim: usize) -> f64 {
        match self {
            EpsilonRule::Fixed(eps) => eps,
            EpsilonRule::CubeDefault => 0.5 * (dim as f64 / 6.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub backends: Vec<Backend>,
    pub sizes: Vec<usize>,
    pub dims: Vec<usize>,
    pub trials: usize,
    pub epsilon_rule: EpsilonRule,
    pub leaf_size: usize,
    pub block: usize,
    pub threads: usize,
    pub base_seed: u64,
    /// One untimed run per cell and backend before measuring.
    pub warmup: bool,
    /// Build the index outside the timed region.
    pub time_query_only: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let backend = BackendConfig::default();
        Self {
            backends: Backend::ALL.to_vec(),
            sizes: vec![100, 500, 1000],
            dims: vec![10, 100],
            trials: 5,
            epsilon_rule: EpsilonRule::CubeDefault,
            leaf_size: backend.leaf_size,
            block: backend.block,
            threads: default_threads(),
            base_seed: 0,
            warmup: true,
            time_query_only: false,
        }
    }
}

impl BenchConfig {
    /// The full grid: n in {100, 500, 1000, 2000, 5000}, D in {10, 50, 100,
    /// 200, 500, 1000}, 65 trials, leaf size 40, 12 threads.
    pub fn full_grid() -> Self {
        Self {
            sizes: vec![100, 500, 1000, 2000, 5000],
            dims: vec![10, 50, 100, 200, 500, 1000],
            trials: 65,
            leaf_size: 40,
            threads: 12,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.backends.is_empty() || self.sizes.is_empty() || self.dims.is_empty() {
            return Err(Error::invalid("benchmark grid has an empty axis"));
        }
        if self.trials == 0 || self.leaf_size == 0 || self.block == 0 || self.threads == 0 {
            return Err(Error::invalid(
                "trials, leaf size, block and threads must all be >= 1",
            ));
        }
        if self.sizes.contains(&0) || self.dims.contains(&0) {
            return Err(Error::invalid("grid sizes and dimensions must be >= 1"));
        }
        if let EpsilonRule::Fixed(eps) = self.epsilon_rule {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::invalid("fixed epsilon must be positive"));
            }
        }
        Ok(())
    }

    fn backend_config(&self, backend: Backend) -> BackendConfig {
        BackendConfig {
            backend,
            leaf_size: self.leaf_size,
            block: self.block,
            threads: self.threads,
        }
    }
}

/// Seed of the cloud for one cell and trial; every backend sees the same
/// cloud.
pub fn cell_seed(base_seed: u64, n: usize, dim: usize, trial: usize) -> u64 {
    let mut h = base_seed;
    for v in [n as u64, dim as u64, trial as u64] {
        h = splitmix64(h ^ splitmix64(v));
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub backend: Backend,
    pub n: usize,
    pub dim: usize,
    pub trial: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub landmarks: usize,
    pub runtime_ms: f64,
    pub peak_mem_mb: f64,
    pub mem_mode: MemoryMode,
    /// Set when the run errored or panicked; such records carry no timing.
    pub failure: Option<String>,
}

impl BenchRecord {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

struct Measurement {
    landmarks: usize,
    runtime_ms: f64,
    reading: MemoryReading,
}

fn measure(cloud: &PointCloud, cfg: &BackendConfig, eps: f64, time_query_only: bool) -> Result<Measurement> {
    let prebuilt = if time_query_only {
        Some(cfg.build(cloud)?)
    } else {
        None
    };
    let (outcome, reading) = peak_memory_probe(|| {
        let start = Instant::now();
        let cover = match &prebuilt {
            Some(index) => greedy_eps_net(index.as_ref(), eps, Order::Index),
            None => cfg
                .build(cloud)
                .and_then(|index| greedy_eps_net(index.as_ref(), eps, Order::Index)),
        };
        let elapsed = start.elapsed();
        cover.map(|c| (c.len(), elapsed))
    })?;
    let (landmarks, elapsed) = outcome?;
    Ok(Measurement {
        landmarks,
        runtime_ms: (elapsed.as_secs_f64() * 1e3).max(f64::MIN_POSITIVE),
        reading,
    })
}

fn measure_guarded(
    cloud: &PointCloud,
    cfg: &BackendConfig,
    eps: f64,
    time_query_only: bool,
) -> Result<Measurement> {
    match catch_unwind(AssertUnwindSafe(|| measure(cloud, cfg, eps, time_query_only))) {
        Ok(result) => result,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(Error::InvalidState(msg))
        }
    }
}

/// Runs every cell of the grid. Trials run strictly one after another; a
/// failed run is recorded with its error and the suite moves on.
///
/// Records are returned grouped by backend, then `n`, `D` and trial.
pub fn run_benchmark_suite(config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    run_benchmark_suite_with(config, |_| {})
}

/// Like [`run_benchmark_suite`], calling `progress` after every record.
pub fn run_benchmark_suite_with(
    config: &BenchConfig,
    mut progress: impl FnMut(&BenchRecord),
) -> Result<Vec<BenchRecord>> {
    config.validate()?;
    let mut records = Vec::new();
    for &n in &config.sizes {
        for &dim in &config.dims {
            let eps = config.epsilon_rule.epsilon(dim);
            let mut warmed = !config.warmup;
            for trial in 0..config.trials {
                let seed = cell_seed(config.base_seed, n, dim, trial);
                let cloud = generate_uniform_cloud(n, dim, seed)?;
                if !warmed {
                    for &backend in &config.backends {
                        let _ = measure_guarded(
                            &cloud,
                            &config.backend_config(backend),
                            eps,
                            config.time_query_only,
                        );
                    }
                    warmed = true;
                }
                for &backend in &config.backends {
                    let cfg = config.backend_config(backend);
                    let result = measure_guarded(&cloud, &cfg, eps, config.time_query_only);
                    let mut record = BenchRecord {
                        backend,
                        n,
                        dim,
                        trial,
                        seed,
                        epsilon: eps,
                        landmarks: 0,
                        runtime_ms: 0.0,
                        peak_mem_mb: 0.0,
                        mem_mode: MemoryMode::Instrumented,
                        failure: None,
                    };
                    match result {
                        Ok(m) => {
                            record.landmarks = m.landmarks;
                            record.runtime_ms = m.runtime_ms;
                            record.peak_mem_mb = m.reading.peak_mb;
                            record.mem_mode = m.reading.mode;
                        }
                        Err(e) => {
                            warn!("{backend} n={n} D={dim} trial={trial} failed: {e}");
                            record.failure = Some(e.to_string());
                        }
                    }
                    progress(&record);
                    records.push(record);
                }
            }
        }
    }
    let rank = |b: Backend| config.backends.iter().position(|&x| x == b).unwrap_or(usize::MAX);
    records.sort_by_key(|r| (rank(r.backend), r.n, r.dim, r.trial));
    Ok(records)
}

/// Median of the values; the mean of the two central values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    Some(if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub backend: Backend,
    pub n: usize,
    pub dim: usize,
    pub median_runtime_ms: f64,
    pub median_peak_mem_mb: f64,
    /// Baseline median runtime over this backend's; above 1 means faster.
    pub speedup: f64,
}

pub fn summarize_benchmarks(records: &[BenchRecord], baseline: Backend) -> Result<Vec<SummaryRow>> {
    if !records.iter().any(|r| r.backend == baseline && r.ok()) {
        return Err(Error::invalid(format!(
            "baseline `{baseline}` has no successful records"
        )));
    }
    let mut order: Vec<Backend> = Vec::new();
    // (backend rank, n, D) -> (runtimes, peak memories)
    type Cells = BTreeMap<(usize, usize, usize), (Vec<f64>, Vec<f64>)>;
    let mut cells = Cells::new();
    for r in records.iter().filter(|r| r.ok()) {
        let rank = match order.iter().position(|&b| b == r.backend) {
            Some(i) => i,
            None => {
                order.push(r.backend);
                order.len() - 1
            }
        };
        let cell = cells.entry((rank, r.n, r.dim)).or_default();
        cell.0.push(r.runtime_ms);
        cell.1.push(r.peak_mem_mb);
    }
    let base_rank = order
        .iter()
        .position(|&b| b == baseline)
        .expect("baseline seen above");

    let mut rows = Vec::new();
    for (&(rank, n, dim), (runtimes, mems)) in &cells {
        let Some((base_runtimes, _)) = cells.get(&(base_rank, n, dim)) else {
            warn!(
                "no {baseline} records for n={n} D={dim}; omitting {} from the summary",
                order[rank]
            );
            continue;
        };
        let runtime = median(runtimes).expect("cells are nonempty");
        rows.push(SummaryRow {
            backend: order[rank],
            n,
            dim,
            median_runtime_ms: runtime,
            median_peak_mem_mb: median(mems).expect("cells are nonempty"),
            speedup: median(base_runtimes).expect("cells are nonempty") / runtime,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub backend: Backend,
    /// Name of the grid axis held fixed (`"n"`); the fit runs over D.
    pub fixed_var: &'static str,
    pub fixed_value: usize,
    pub fit: PowerLawFit,
}

/// One power-law fit of median runtime against D per backend and fixed n.
/// Slices with fewer than two distinct dimensions are skipped.
pub fn fit_scaling(summary: &[SummaryRow]) -> Vec<ScalingFit> {
    type Slices = BTreeMap<(usize, usize), (Backend, Vec<f64>, Vec<f64>)>;
    let mut slices = Slices::new();
    let mut order: Vec<Backend> = Vec::new();
    for row in summary {
        let rank = order.iter().position(|&b| b == row.backend).unwrap_or_else(|| {
            order.push(row.backend);
            order.len() - 1
        });
        let slice = slices
            .entry((rank, row.n))
            .or_insert_with(|| (row.backend, Vec::new(), Vec::new()));
        slice.1.push(row.dim as f64);
        slice.2.push(row.median_runtime_ms);
    }
    slices
        .into_iter()
        .filter_map(|((_, n), (backend, xs, ys))| {
            fit_power_law(&xs, &ys).ok().map(|fit| ScalingFit {
                backend,
                fixed_var: "n",
                fixed_value: n,
                fit,
            })
        })
        .collect()
}

pub const RECORD_HEADER: &str = "backend,n,D,trial,seed,epsilon,landmarks,runtime_ms,peak_mem_mb,mem_mode";
pub const SUMMARY_HEADER: &str = "backend,n,D,median_runtime_ms,median_peak_mem_mb,speedup";
pub const FIT_HEADER: &str = "backend,fixed_var,fixed_value,p,k,r_squared";

/// Per-trial CSV. Failed runs keep their row with `mem_mode = failed`.
pub fn write_records_csv<W: Write>(mut out: W, records: &[BenchRecord]) -> Result<()> {
    writeln!(out, "{RECORD_HEADER}")?;
    for r in records {
        let mode = if r.ok() { r.mem_mode.name() } else { "failed" };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.backend, r.n, r.dim, r.trial, r.seed, r.epsilon, r.landmarks, r.runtime_ms, r.peak_mem_mb, mode
        )?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(mut out: W, rows: &[SummaryRow]) -> Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.backend, r.n, r.dim, r.median_runtime_ms, r.median_peak_mem_mb, r.speedup
        )?;
    }
    Ok(())
}

pub fn write_fits_csv<W: Write>(mut out: W, fits: &[ScalingFit]) -> Result<()> {
    writeln!(out, "{FIT_HEADER}")?;
    for f in fits {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            f.backend, f.fixed_var, f.fixed_value, f.fit.p, f.fit.k, f.fit.r_squared
        )?;
    }
    Ok(())
}
