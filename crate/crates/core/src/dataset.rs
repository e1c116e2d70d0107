//! Point clouds, per-point values, and cached squared norms.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metric::Metric;

/// Identifier recorded alongside synthetic clouds. Bump the suffix if the
/// sampling procedure in [`generate_uniform_cloud`] ever changes.
pub const GENERATOR_NAME: &str = "chacha8-uniform01-v1";

/// `n` points in `dim` real coordinates, stored row-major, plus the metric
/// that every downstream query uses.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    n: usize,
    dim: usize,
    coords: Vec<f64>,
    metric: Metric,
}

impl PointCloud {
    pub fn new(coords: Vec<f64>, dim: usize, metric: Metric) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        if coords.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "{} coordinates do not split into rows of {dim}",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite coordinate at point {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            n: coords.len() / dim,
            dim,
            coords,
            metric,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], metric: Metric) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.as_ref().len() != dim {
                return Err(Error::invalid(format!(
                    "row {i} has {} coordinates, expected {dim}",
                    row.as_ref().len()
                )));
            }
            coords.extend_from_slice(row.as_ref());
        }
        Self::new(coords, dim, metric)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Distance between two stored points under the cloud's metric.
    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.metric.eval(self.point(i), self.point(j))
    }

    /// Distance from an arbitrary vector to stored point `i`.
    #[inline]
    pub fn dist_to(&self, query: &[f64], i: usize) -> f64 {
        self.metric.eval(query, self.point(i))
    }

    pub(crate) fn check_query(&self, query: &[f64]) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::invalid(format!(
                "query has dimension {}, cloud has {}",
                query.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Writes one CSV row per point with 17 significant digits, which is
    /// enough to reload every `f64` exactly.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        let mut cells = Vec::with_capacity(self.dim);
        for row in self.rows() {
            cells.clear();
            cells.extend(row.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&cells).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-point auxiliary values, aligned to point indices.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueSeries {
    Numeric(Vec<f64>),
    Labels(Vec<String>),
}

impl ValueSeries {
    pub fn numeric(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at point {i}")));
        }
        Ok(ValueSeries::Numeric(values))
    }

    pub fn len(&self) -> usize {
        match self {
            ValueSeries::Numeric(v) => v.len(),
            ValueSeries::Labels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match self {
            ValueSeries::Numeric(v) => Some(v),
            ValueSeries::Labels(_) => None,
        }
    }

    /// Numeric when every cell parses as a finite float, labels otherwise.
    fn from_cells(cells: Vec<String>) -> Self {
        let parsed: Option<Vec<f64>> = cells.iter().map(|c| parse_finite(c.trim())).collect();
        match parsed {
            Some(v) => ValueSeries::Numeric(v),
            None => ValueSeries::Labels(cells),
        }
    }

    pub(crate) fn check_aligned(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::invalid(format!(
                "value series has {} entries, cloud has {n} points",
                self.len()
            )));
        }
        Ok(())
    }
}

/// `sq_norms[i]` is the squared Euclidean norm of point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormCache {
    pub sq_norms: Vec<f64>,
}

pub fn precompute_squared_norms(cloud: &PointCloud) -> NormCache {
    NormCache {
        sq_norms: cloud.rows().map(|row| row.iter().map(|v| v * v).sum()).collect(),
    }
}

pub fn generate_uniform_cloud(n: usize, dim: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 || dim == 0 {
        return Err(Error::invalid(format!(
            "cannot generate a {n}x{dim} cloud; both sizes must be >= 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n * dim).map(|_| rng.random::<f64>()).collect();
    PointCloud::new(coords, dim, Metric::Euclidean)
}

fn parse_finite(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn read_records<R: Read>(input: R) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: i + 1,
            column: None,
            message: e.to_string(),
        })?;
        // Blank trailing lines show up as a single empty field.
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        records.push(rec);
    }
    Ok(records)
}

/// Parses points from CSV text. Rows are numbered from 1 in errors, counting
/// the header when there is one.
pub fn parse_points_csv<R: Read>(
    input: R,
    has_header: bool,
    value_column: Option<&str>,
    metric: Metric,
) -> Result<(PointCloud, Option<ValueSeries>)> {
    let records = read_records(input)?;
    let mut rows = records.iter().enumerate().map(|(i, r)| (i + 1, r));

    let header: Option<Vec<String>> = if has_header {
        let (_, h) = rows.next().ok_or(Error::Parse {
            row: 1,
            column: None,
            message: "file is empty".into(),
        })?;
        Some(h.iter().map(str::to_owned).collect())
    } else {
        None
    };

    let value_idx = match value_column {
        None => None,
        Some(name) => {
            let header = header.as_ref().ok_or_else(|| {
                Error::invalid("a value column can only be selected by name when a header is present")
            })?;
            Some(
                header
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::invalid(format!("value column `{name}` not found in header")))?,
            )
        }
    };

    let column_name = |c: usize| match &header {
        Some(h) => h.get(c).cloned().unwrap_or_else(|| (c + 1).to_string()),
        None => (c + 1).to_string(),
    };

    let mut width = header.as_ref().map(Vec::len);
    let mut coords = Vec::new();
    let mut value_cells = Vec::new();
    let mut n = 0;
    for (row, rec) in rows {
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Parse {
                    row,
                    column: None,
                    message: format!("ragged row: {} fields, expected {w}", rec.len()),
                })
            }
            Some(_) => {}
        }
        for (c, cell) in rec.iter().enumerate() {
            if Some(c) == value_idx {
                value_cells.push(cell.to_owned());
                continue;
            }
            let v = parse_finite(cell).ok_or_else(|| Error::Parse {
                row,
                column: Some(column_name(c)),
                message: format!("`{cell}` is not a finite number"),
            })?;
            coords.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Parse {
            row: 1,
            column: None,
            message: "file contains no points".into(),
        });
    }
    let dim = width.unwrap_or(0) - usize::from(value_idx.is_some());
    if dim == 0 {
        return Err(Error::invalid("rows contain no coordinate columns"));
    }
    let cloud = PointCloud::new(coords, dim, metric)?;
    let values = value_idx.map(|_| ValueSeries::from_cells(value_cells));
    Ok((cloud, values))
}

pub fn load_points_csv(
    path: &Path,
    has_header: bool,
    value_column: Option<&str>,
    metric: Metric,
) -> Result<(PointCloud, Option<ValueSeries>)> {
    let file = std::fs::File::open(path)?;
    parse_points_csv(file, has_header, value_column, metric)
}

/// Reads a single-column values file aligned to point rows.
pub fn load_values_csv(path: &Path, has_header: bool) -> Result<ValueSeries> {
    let file = std::fs::File::open(path)?;
    parse_values_csv(file, has_header)
}

pub fn parse_values_csv<R: Read>(input: R, has_header: bool) -> Result<ValueSeries> {
    let records = read_records(input)?;
    let skip = usize::from(has_header);
    let mut cells = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate().skip(skip) {
        if rec.len() != 1 {
            return Err(Error::Parse {
                row: i + 1,
                column: None,
                message: format!("values file must have one column, found {}", rec.len()),
            });
        }
        cells.push(rec[0].to_owned());
    }
    if cells.is_empty() {
        return Err(Error::Parse {
            row: 1,
            column: None,
            message: "values file is empty".into(),
        });
    }
    Ok(ValueSeries::from_cells(cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, header: bool, value: Option<&str>) -> Result<(PointCloud, Option<ValueSeries>)> {
        parse_points_csv(text.as_bytes(), header, value, Metric::Euclidean)
    }

    #[test]
    fn three_rows_two_columns() {
        let (cloud, values) = parse("1,2\n3,4\n5,6\n", false, None).unwrap();
        assert_eq!((cloud.len(), cloud.dim()), (3, 2));
        assert_eq!(cloud.point(2), &[5.0, 6.0]);
        assert!(values.is_none());
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        assert!(matches!(parse("", false, None), Err(Error::Parse { .. })));
        assert!(matches!(parse("a,b\n", true, None), Err(Error::Parse { .. })));
    }

    #[test]
    fn ragged_row_reported_at_row_two() {
        match parse("1,2\n3,4,5\n", false, None) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        match parse("x,y\n1,2\n3,abc\n", true, None) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column.as_deref(), Some("y"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse("1,NaN\n", false, None).is_err());
        assert!(parse("1,inf\n", false, None).is_err());
    }

    #[test]
    fn value_column_is_split_off() {
        let text = "x,f,y\n1,10,2\n3,20,4\n";
        let (cloud, values) = parse(text, true, Some("f")).unwrap();
        assert_eq!(cloud.dim(), 2);
        assert_eq!(cloud.point(1), &[3.0, 4.0]);
        assert_eq!(values, Some(ValueSeries::Numeric(vec![10.0, 20.0])));

        let (_, labels) = parse("x,c\n1,a\n2,b\n", true, Some("c")).unwrap();
        assert_eq!(labels, Some(ValueSeries::Labels(vec!["a".into(), "b".into()])));
        assert!(parse(text, true, Some("missing")).is_err());
        assert!(parse("1,2\n", false, Some("f")).is_err());
    }

    #[test]
    fn scientific_notation_accepted() {
        let (cloud, _) = parse("1e-3,-2.5E2\n", false, None).unwrap();
        assert_eq!(cloud.point(0), &[1e-3, -250.0]);
    }

    #[test]
    fn values_file() {
        let v = parse_values_csv("h\n1\n2.5\n".as_bytes(), true).unwrap();
        assert_eq!(v, ValueSeries::Numeric(vec![1.0, 2.5]));
        assert!(parse_values_csv("1,2\n".as_bytes(), false).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let a = generate_uniform_cloud(100, 10, 7).unwrap();
        let b = generate_uniform_cloud(100, 10, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.coords().iter().all(|&c| (0.0..1.0).contains(&c)));
        assert_ne!(a, generate_uniform_cloud(100, 10, 8).unwrap());
        assert!(generate_uniform_cloud(0, 10, 1).is_err());
        assert!(generate_uniform_cloud(10, 0, 1).is_err());
    }

    #[test]
    fn norms_small_cases() {
        let c = PointCloud::from_rows(&[[3.0, 4.0]], Metric::Euclidean).unwrap();
        assert_eq!(precompute_squared_norms(&c).sq_norms, vec![25.0]);
        let o = PointCloud::from_rows(&[[0.0, 0.0, 0.0]], Metric::Euclidean).unwrap();
        assert_eq!(precompute_squared_norms(&o).sq_norms, vec![0.0]);
    }

    #[test]
    fn norms_match_elementwise_loop() {
        let cloud = generate_uniform_cloud(50, 20, 3).unwrap();
        let cache = precompute_squared_norms(&cloud);
        for i in 0..cloud.len() {
            let mut acc = 0.0;
            for j in 0..cloud.dim() {
                let v = cloud.coords()[i * cloud.dim() + j];
                acc += v * v;
            }
            assert!((cache.sq_norms[i] - acc).abs() <= 1e-9 * acc.max(1.0));
            let d = Metric::Euclidean.eval(cloud.point(i), &vec![0.0; cloud.dim()]);
            assert!((cache.sq_norms[i] - d * d).abs() <= 1e-9 * cache.sq_norms[i].max(1.0));
        }
    }

    #[test]
    fn invalid_clouds_rejected() {
        assert!(PointCloud::new(vec![], 2, Metric::Euclidean).is_err());
        assert!(PointCloud::new(vec![1.0, 2.0, 3.0], 2, Metric::Euclidean).is_err());
        assert!(PointCloud::new(vec![f64::NAN], 1, Metric::Euclidean).is_err());
        assert!(PointCloud::from_rows(&[vec![1.0], vec![1.0, 2.0]], Metric::Euclidean).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(
            rows in prop::collection::vec(prop::collection::vec(-1e300f64..1e300, 3), 1..20),
            tiny in prop::collection::vec(-1e-300f64..1e-300, 3),
        ) {
            let mut rows = rows;
            rows.push(tiny);
            let cloud = PointCloud::from_rows(&rows, Metric::Euclidean).unwrap();
            let mut buf = Vec::new();
            cloud.write_csv(&mut buf).unwrap();
            let (back, _) = parse_points_csv(buf.as_slice(), false, None, Metric::Euclidean).unwrap();
            prop_assert_eq!(back, cloud);
        }
    }
}
