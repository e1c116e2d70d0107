use super::{check_eps, Backend, IndexSet, QueryStats, RangeIndex};
use crate::dataset::PointCloud;
use crate::error::Result;

/// Evaluates `d(query, x_i)` for every point and keeps those `< eps`.
pub fn linear_scan_range(cloud: &PointCloud, query: &[f64], eps: f64) -> Result<IndexSet> {
    check_eps(eps)?;
    cloud.check_query(query)?;
    Ok(scan(cloud, query, eps))
}

fn scan(cloud: &PointCloud, query: &[f64], eps: f64) -> IndexSet {
    let metric = cloud.metric();
    let hits = cloud
        .rows()
        .enumerate()
        .filter(|(_, x)| metric.eval(query, x) < eps)
        .map(|(i, _)| i)
        .collect();
    IndexSet::from_sorted(hits)
}

/// The brute-force baseline; also the oracle the other backends are
/// tested against.
#[derive(Debug, Clone, Copy)]
pub struct LinearScan<'a> {
    cloud: &'a PointCloud,
}

impl<'a> LinearScan<'a> {
    pub fn new(cloud: &'a PointCloud) -> Self {
        Self { cloud }
    }
}

impl RangeIndex for LinearScan<'_> {
    fn backend(&self) -> Backend {
        Backend::Linear
    }

    fn cloud(&self) -> &PointCloud {
        self.cloud
    }

    fn range_with_stats(&self, query: &[f64], eps: f64) -> Result<(IndexSet, QueryStats)> {
        let set = linear_scan_range(self.cloud, query, eps)?;
        let stats = QueryStats {
            nodes_visited: 0,
            distances_evaluated: self.cloud.len(),
        };
        Ok((set, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::Metric;
    use crate::Error;

    fn line(points: &[f64]) -> PointCloud {
        let rows: Vec<[f64; 1]> = points.iter().map(|&p| [p]).collect();
        PointCloud::from_rows(&rows, Metric::Euclidean).unwrap()
    }

    #[test]
    fn hand_enumerated_ball() {
        let cloud = line(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(&*linear_scan_range(&cloud, &[0.0], 1.5).unwrap(), &[0, 1]);
    }

    #[test]
    fn boundary_point_excluded() {
        let cloud = line(&[0.0, 1.0]);
        assert_eq!(&*linear_scan_range(&cloud, &[0.0], 1.0).unwrap(), &[0]);
    }

    #[test]
    fn query_at_a_point_contains_it() {
        let cloud = line(&[5.0, -2.0, 9.0]);
        for i in 0..3 {
            let q = cloud.point(i).to_vec();
            assert!(linear_scan_range(&cloud, &q, 1e-12).unwrap().contains(i));
        }
    }

    #[test]
    fn invalid_arguments() {
        let cloud = line(&[0.0, 1.0]);
        assert!(matches!(
            linear_scan_range(&cloud, &[0.0], 0.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(linear_scan_range(&cloud, &[0.0], -1.0).is_err());
        assert!(linear_scan_range(&cloud, &[0.0], f64::NAN).is_err());
        assert!(linear_scan_range(&cloud, &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn other_metrics() {
        let cloud = PointCloud::from_rows(&[[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]], Metric::Manhattan).unwrap();
        assert_eq!(&*linear_scan_range(&cloud, &[0.0, 0.0], 2.0).unwrap(), &[0]);
        let cloud = cloud.with_metric(Metric::Chebyshev);
        assert_eq!(&*linear_scan_range(&cloud, &[0.0, 0.0], 1.5).unwrap(), &[0, 1]);
    }
}
