//! Per-vertex colorings and the Lipschitz smoothness bounds they obey.
//!
//! If `f` is `k`-Lipschitz and a vertex color lies between the minimum and
//! maximum of `f` over its ball, then every point of the ball is within
//! `k * eps` of the color, and colors of adjacent vertices differ by at most
//! `2 * k * eps`. [`check_color_bounds`] measures both quantities.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::cover::Cover;
use crate::dataset::{PointCloud, ValueSeries};
use crate::error::{Error, Result};
use crate::nerve::MapperGraph;

/// Slack on the bound checks for floating-point aggregation.
pub const BOUND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregator {
    Mean,
    Median,
    /// Drops `floor(fraction * m)` values from each end before averaging.
    TrimmedMean(f64),
    Min,
    Max,
    Mode,
    /// Population variance.
    Variance,
    Range,
}

impl Aggregator {
    /// Whether the color is guaranteed to lie within the ball's value range,
    /// the precondition of the smoothness bounds.
    pub fn respects_range(self) -> bool {
        matches!(
            self,
            Aggregator::Mean
                | Aggregator::Median
                | Aggregator::TrimmedMean(_)
                | Aggregator::Min
                | Aggregator::Max
        )
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregator::Mean => f.write_str("mean"),
            Aggregator::Median => f.write_str("median"),
            Aggregator::TrimmedMean(frac) => write!(f, "trimmed:{frac}"),
            Aggregator::Min => f.write_str("min"),
            Aggregator::Max => f.write_str("max"),
            Aggregator::Mode => f.write_str("mode"),
            Aggregator::Variance => f.write_str("variance"),
            Aggregator::Range => f.write_str("range"),
        }
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mean" => Aggregator::Mean,
            "median" => Aggregator::Median,
            "min" => Aggregator::Min,
            "max" => Aggregator::Max,
            "mode" => Aggregator::Mode,
            "variance" => Aggregator::Variance,
            "range" => Aggregator::Range,
            other => {
                let frac = other
                    .strip_prefix("trimmed:")
                    .and_then(|f| f.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown aggregator `{other}`")))?;
                check_trim(frac)?;
                Aggregator::TrimmedMean(frac)
            }
        })
    }
}

fn check_trim(frac: f64) -> Result<()> {
    if !(0.0..0.5).contains(&frac) {
        return Err(Error::invalid(format!(
            "trim fraction must be in [0, 0.5), got {frac}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Colors {
    Numeric(Vec<f64>),
    Labels(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorMap {
    pub colors: Colors,
    pub aggregator: Aggregator,
}

impl ColorMap {
    pub fn len(&self) -> usize {
        match &self.colors {
            Colors::Numeric(c) => c.len(),
            Colors::Labels(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn aggregate_colors(cover: &Cover, values: &ValueSeries, agg: Aggregator) -> Result<ColorMap> {
    values.check_aligned(cover.num_points())?;
    if let Aggregator::TrimmedMean(frac) = agg {
        check_trim(frac)?;
    }
    let colors = match values {
        ValueSeries::Numeric(v) => {
            let mut scratch = Vec::new();
            let colors = cover
                .members
                .iter()
                .map(|ball| {
                    scratch.clear();
                    scratch.extend(ball.iter().map(|&i| v[i]));
                    aggregate_numeric(&mut scratch, agg)
                })
                .collect();
            Colors::Numeric(colors)
        }
        ValueSeries::Labels(labels) => {
            if agg != Aggregator::Mode {
                return Err(Error::Unsupported(format!(
                    "aggregator `{agg}` needs numeric values"
                )));
            }
            Colors::Labels(
                cover
                    .members
                    .iter()
                    .map(|ball| label_mode(ball.iter().map(|&i| labels[i].as_str())))
                    .collect(),
            )
        }
    };
    Ok(ColorMap {
        colors,
        aggregator: agg,
    })
}

/// Aggregates a nonempty value list. `values` is reordered.
fn aggregate_numeric(values: &mut [f64], agg: Aggregator) -> f64 {
    debug_assert!(!values.is_empty());
    let m = values.len();
    match agg {
        Aggregator::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregator::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregator::Mean => bounded_mean(values),
        Aggregator::Median => {
            values.sort_by(f64::total_cmp);
            if m % 2 == 1 {
                values[m / 2]
            } else {
                let (a, b) = (values[m / 2 - 1], values[m / 2]);
                (0.5 * a + 0.5 * b).clamp(a, b)
            }
        }
        Aggregator::TrimmedMean(frac) => {
            values.sort_by(f64::total_cmp);
            let cut = (frac * m as f64).floor() as usize;
            bounded_mean(&values[cut..m - cut])
        }
        Aggregator::Mode => {
            values.sort_by(f64::total_cmp);
            let mut best = (values[0], 0usize);
            let mut run = (values[0], 0usize);
            for &v in values.iter() {
                if v == run.0 {
                    run.1 += 1;
                } else {
                    run = (v, 1);
                }
                // Strict > keeps the smallest value among equal counts.
                if run.1 > best.1 {
                    best = run;
                }
            }
            best.0
        }
        Aggregator::Variance => {
            let mean = values.iter().sum::<f64>() / m as f64;
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64
        }
        Aggregator::Range => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        }
    }
}

/// Arithmetic mean clamped to `[min, max]`; summation rounding can otherwise
/// push it just outside the range it provably lies in.
fn bounded_mean(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (values.iter().sum::<f64>() / values.len() as f64).clamp(lo, hi)
}

fn label_mode<'a>(labels: impl Iterator<Item = &'a str>) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iterates lexicographically; keep the first maximum.
    let mut best: Option<(&str, usize)> = None;
    for (label, count) in counts {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((label, count));
        }
    }
    best.map(|(l, _)| l.to_owned()).unwrap_or_default()
}

/// Smallest `k` with `|f(x) - f(y)| <= k d(x, y)` over all point pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    /// `+inf` when `conflicting_duplicates` is set.
    pub constant: f64,
    /// Two coincident points carry different values, so no finite `k` exists.
    pub conflicting_duplicates: bool,
}

pub fn estimate_lipschitz_constant(cloud: &PointCloud, values: &ValueSeries) -> Result<LipschitzEstimate> {
    let n = cloud.len();
    if n < 2 {
        return Err(Error::invalid("Lipschitz estimate needs at least two points"));
    }
    values.check_aligned(n)?;
    let f = values
        .as_numeric()
        .ok_or_else(|| Error::Unsupported("Lipschitz estimate needs numeric values".into()))?;

    let mut best: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let gap = (f[i] - f[j]).abs();
            let d = cloud.dist(i, j);
            if d > 0.0 {
                best = best.max(gap / d);
            } else if gap > 0.0 {
                return Ok(LipschitzEstimate {
                    constant: f64::INFINITY,
                    conflicting_duplicates: true,
                });
            }
        }
    }
    Ok(LipschitzEstimate {
        constant: best,
        conflicting_duplicates: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub k_used: f64,
    pub eps: f64,
    /// `max_j max_{i in ball j} |f(x_i) - c_j|`
    pub max_within_ball_deviation: f64,
    /// `max_{(i,j) edge} |c_i - c_j|`
    pub max_adjacent_difference: f64,
    pub within_ball_satisfied: bool,
    pub adjacent_satisfied: bool,
    /// False when the aggregator does not respect the ball's value range; the
    /// two flags are then informational only.
    pub applicable: bool,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        !self.applicable || (self.within_ball_satisfied && self.adjacent_satisfied)
    }
}

/// Measures the largest deviation of a value from its ball's color and the
/// largest color jump along an edge, and compares them with `k * eps` and
/// `2 * k * eps`.
///
/// Those thresholds are not guaranteed. Two points of one ball can be up to
/// `2 * eps` apart, so a range-respecting color only stays within `2 * k * eps`
/// of every value in its ball, and adjacent colors within `4 * k * eps`. The
/// flags report whether the tighter thresholds happened to hold.
pub fn check_color_bounds(
    graph: &MapperGraph,
    cover: &Cover,
    values: &ValueSeries,
    colors: &ColorMap,
    k: f64,
) -> Result<BoundReport> {
    values.check_aligned(cover.num_points())?;
    let f = values
        .as_numeric()
        .ok_or_else(|| Error::Unsupported("bound checks need numeric values".into()))?;
    let c = match &colors.colors {
        Colors::Numeric(c) => c,
        Colors::Labels(_) => return Err(Error::Unsupported("bound checks need numeric colors".into())),
    };
    if c.len() != cover.len() {
        return Err(Error::invalid("color map does not match the cover"));
    }
    if k.is_nan() || k < 0.0 {
        return Err(Error::invalid(format!(
            "Lipschitz constant must be >= 0, got {k}"
        )));
    }

    let mut within: f64 = 0.0;
    for (ball, &color) in cover.members.iter().zip(c) {
        for &i in ball.iter() {
            within = within.max((f[i] - color).abs());
        }
    }
    let mut adjacent: f64 = 0.0;
    for &(a, b) in &graph.edges {
        adjacent = adjacent.max((c[a] - c[b]).abs());
    }

    let eps = cover.epsilon;
    Ok(BoundReport {
        k_used: k,
        eps,
        max_within_ball_deviation: within,
        max_adjacent_difference: adjacent,
        within_ball_satisfied: within <= k * eps + BOUND_TOLERANCE,
        adjacent_satisfied: adjacent <= 2.0 * k * eps + BOUND_TOLERANCE,
        applicable: colors.aggregator.respects_range(),
    })
}
