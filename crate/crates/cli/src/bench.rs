use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};

use ballmapper::bench::{
    fit_scaling, run_benchmark_suite_with, summarize_benchmarks, write_fits_csv, write_records_csv,
    write_summary_csv, BenchConfig, EpsilonRule,
};
use ballmapper::Backend;

use crate::write_output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum Preset {
    /// n in {100, 500, 1000, 2000, 5000}, D in {10, 50, 100, 200, 500,
    /// 1000}, 65 trials. Expect hours.
    Full,
    /// n in {100, 500, 1000}, D in {10, 100}, 5 trials.
    Quick,
}

#[derive(Debug, Args)]
pub(crate) struct BenchArgs {
    #[arg(long, value_enum, default_value_t = Preset::Quick)]
    preset: Preset,
    /// Comma-separated point counts, overriding the preset.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Comma-separated dimensions, overriding the preset.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    backends: Option<Vec<Backend>>,
    /// Fixed radius; by default `0.5 * sqrt(D / 6)` per dimension.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value = "linear")]
    baseline: Backend,
    #[arg(long)]
    leaf_size: Option<usize>,
    #[arg(long)]
    block: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Build each index before starting the clock.
    #[arg(long)]
    time_query_only: bool,
    #[arg(long)]
    no_warmup: bool,
    /// Per-trial CSV; stdout when no output path is given at all.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    fits: Option<PathBuf>,
}

impl BenchArgs {
    fn config(&self) -> BenchConfig {
        let mut cfg = match self.preset {
            Preset::Full => BenchConfig::full_grid(),
            Preset::Quick => BenchConfig::default(),
        };
        if let Some(v) = &self.sizes {
            cfg.sizes = v.clone();
        }
        if let Some(v) = &self.dims {
            cfg.dims = v.clone();
        }
        if let Some(v) = &self.backends {
            cfg.backends = v.clone();
        }
        if let Some(eps) = self.epsilon {
            cfg.epsilon_rule = EpsilonRule::Fixed(eps);
        }
        cfg.trials = self.trials.unwrap_or(cfg.trials);
        cfg.leaf_size = self.leaf_size.unwrap_or(cfg.leaf_size);
        cfg.block = self.block.unwrap_or(cfg.block);
        cfg.threads = self.threads.unwrap_or(cfg.threads);
        cfg.base_seed = self.seed;
        cfg.time_query_only = self.time_query_only;
        cfg.warmup = !self.no_warmup;
        cfg
    }
}

pub(crate) fn run(args: &BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<bool> {
    let mut config = args.config();
    if !config.backends.contains(&args.baseline) {
        config.backends.insert(0, args.baseline);
    }
    let records = run_benchmark_suite_with(&config, |r| {
        let _ = match &r.failure {
            None => writeln!(
                err,
                "{} n={} D={} trial={} landmarks={} {:.3} ms {:.3} MB",
                r.backend, r.n, r.dim, r.trial, r.landmarks, r.runtime_ms, r.peak_mem_mb
            ),
            Some(f) => writeln!(
                err,
                "{} n={} D={} trial={} FAILED: {f}",
                r.backend, r.n, r.dim, r.trial
            ),
        };
    })?;
    let summary = summarize_benchmarks(&records, args.baseline)?;
    let fits = fit_scaling(&summary);

    let mut buf = Vec::new();
    write_records_csv(&mut buf, &records)?;
    if args.records.is_some() {
        write_output(args.records.as_deref(), out, &buf)?;
    }
    buf.clear();
    write_summary_csv(&mut buf, &summary)?;
    // The summary goes to stdout unless it has a path of its own.
    write_output(args.summary.as_deref(), out, &buf)?;
    if let Some(path) = &args.fits {
        buf.clear();
        write_fits_csv(&mut buf, &fits)?;
        write_output(Some(path), out, &buf)?;
    }
    Ok(records.iter().all(|r| r.ok()))
}
