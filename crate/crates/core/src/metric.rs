//! Distance functions on real vectors and an exhaustive metric-axiom checker.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack used when checking axioms on floating-point distances.
pub const AXIOM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
    Chebyshev,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Euclidean, Metric::Manhattan, Metric::Chebyshev];

    /// Distance between two equal-length slices. Length is only checked in
    /// debug builds; use [`distance`] at API boundaries.
    #[inline]
    pub fn eval(self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match self {
            Metric::Euclidean => squared_euclidean(x, y).sqrt(),
            Metric::Manhattan => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
            Metric::Chebyshev => x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Manhattan => "manhattan",
            Metric::Chebyshev => "chebyshev",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "manhattan" => Ok(Metric::Manhattan),
            "chebyshev" => Ok(Metric::Chebyshev),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

/// Plain left-to-right sum of squared coordinate differences.
///
/// This is the reference formula: the linear scan, the ball tree and the
/// boundary re-check of the algebraic backend all decide membership with it.
#[inline]
pub fn squared_euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// Checked distance: rejects empty or mismatched vectors.
pub fn distance(metric: Metric, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::invalid("vectors must have dimension >= 1"));
    }
    Ok(metric.eval(x, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axiom {
    NonNegativity,
    Identity,
    Symmetry,
    Triangle,
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axiom::NonNegativity => "non-negativity",
            Axiom::Identity => "identity",
            Axiom::Symmetry => "symmetry",
            Axiom::Triangle => "triangle",
        })
    }
}

/// One failed axiom instance.
///
/// `witness` holds point indices: `[i]` or `[i, j]` for the pointwise axioms,
/// `[x, y, z]` for the triangle inequality with `lhs = d(x, z)` and
/// `rhs = d(x, y) + d(y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxiomViolation {
    pub axiom: Axiom,
    pub witness: Vec<usize>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AxiomReport {
    pub violations: Vec<AxiomViolation>,
}

impl AxiomReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, axiom: Axiom) -> usize {
        self.violations.iter().filter(|v| v.axiom == axiom).count()
    }
}

/// Exhaustively checks the four metric axioms of `dist` on `points`.
///
/// Pairs are checked for non-negativity, identity and symmetry; every ordered
/// triple is checked for the triangle inequality. Cost is `O(m^3)` in the
/// number of points, so keep `m` small.
pub fn check_metric_axioms<F>(dist: F, points: &[Vec<f64>]) -> Result<AxiomReport>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let m = points.len();
    if m == 0 {
        return Err(Error::invalid("axiom check needs at least one point"));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points must share a dimension >= 1"));
    }

    let mut table = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            table[i * m + j] = dist(&points[i], &points[j]);
        }
    }
    let d = |i: usize, j: usize| table[i * m + j];

    let mut violations = Vec::new();
    for i in 0..m {
        for j in 0..m {
            let dij = d(i, j);
            if dij < -AXIOM_TOLERANCE || dij.is_nan() {
                violations.push(AxiomViolation {
                    axiom: Axiom::NonNegativity,
                    witness: vec![i, j],
                    lhs: dij,
                    rhs: 0.0,
                });
            }
            if i == j {
                if dij.abs() > AXIOM_TOLERANCE {
                    violations.push(AxiomViolation {
                        axiom: Axiom::Identity,
                        witness: vec![i],
                        lhs: dij,
                        rhs: 0.0,
                    });
                }
                continue;
            }
            if dij == 0.0 && points[i] != points[j] {
                violations.push(AxiomViolation {
                    axiom: Axiom::Identity,
                    witness: vec![i, j],
                    lhs: dij,
                    rhs: 0.0,
                });
            }
            if i < j && (dij - d(j, i)).abs() > AXIOM_TOLERANCE {
                violations.push(AxiomViolation {
                    axiom: Axiom::Symmetry,
                    witness: vec![i, j],
                    lhs: dij,
                    rhs: d(j, i),
                });
            }
        }
    }

    for x in 0..m {
        for y in 0..m {
            for z in 0..m {
                let lhs = d(x, z);
                let rhs = d(x, y) + d(y, z);
                if lhs > rhs + AXIOM_TOLERANCE {
                    violations.push(AxiomViolation {
                        axiom: Axiom::Triangle,
                        witness: vec![x, y, z],
                        lhs,
                        rhs,
                    });
                }
            }
        }
    }

    Ok(AxiomReport { violations })
}
