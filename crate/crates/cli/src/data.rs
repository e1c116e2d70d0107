use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use ballmapper::dataset::{generate_uniform_cloud, load_points_csv, load_values_csv};
use ballmapper::{Metric, PointCloud, ValueSeries};

/// Points from a CSV file or from the seeded uniform generator, plus an
/// optional value series for coloring.
#[derive(Debug, Clone, Default, Args)]
pub struct DataSource {
    /// CSV of points, one row per point.
    #[arg(long, conflicts_with = "random")]
    pub input: Option<PathBuf>,
    /// The input CSV starts with a header row.
    #[arg(long, requires = "input")]
    pub header: bool,
    /// Header name of a column of `--input` to use as values instead of
    /// coordinates.
    #[arg(long, requires = "header")]
    pub value_col: Option<String>,
    /// Single-column CSV of values aligned with the points.
    #[arg(long, conflicts_with_all = ["value_col", "color_coord"])]
    pub values: Option<PathBuf>,
    /// Header flag for `--values`.
    #[arg(long, requires = "values")]
    pub values_header: bool,
    /// Generate this many uniform points in the unit cube.
    #[arg(long, requires = "dim")]
    pub random: Option<usize>,
    #[arg(long, requires = "random")]
    pub dim: Option<usize>,
    /// Seed for generated clouds and shuffled orders.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use this coordinate (0-based) as the value series.
    #[arg(long, conflicts_with = "value_col")]
    pub color_coord: Option<usize>,
}

pub struct Loaded {
    pub cloud: PointCloud,
    pub values: Option<ValueSeries>,
}

impl DataSource {
    pub fn is_specified(&self) -> bool {
        self.input.is_some() || self.random.is_some()
    }

    pub fn load(&self, metric: Metric) -> Result<Loaded> {
        let (cloud, mut values) = match (&self.input, self.random, self.dim) {
            (Some(path), _, _) => load_points_csv(path, self.header, self.value_col.as_deref(), metric)
                .with_context(|| format!("cannot load points from {}", path.display()))?,
            (None, Some(n), Some(dim)) => (
                generate_uniform_cloud(n, dim, self.seed)?.with_metric(metric),
                None,
            ),
            _ => bail!("no points: pass --input PATH or --random N --dim D"),
        };
        if let Some(path) = &self.values {
            values = Some(
                load_values_csv(path, self.values_header)
                    .with_context(|| format!("cannot load values from {}", path.display()))?,
            );
        }
        if let Some(j) = self.color_coord {
            if j >= cloud.dim() {
                bail!(
                    "--color-coord {j} is out of range for {}-dimensional points",
                    cloud.dim()
                );
            }
            values = Some(ValueSeries::numeric(cloud.rows().map(|r| r[j]).collect())?);
        }
        if let Some(v) = &values {
            if v.len() != cloud.len() {
                bail!("{} values for {} points", v.len(), cloud.len());
            }
        }
        Ok(Loaded { cloud, values })
    }
}
