//! Ball Mapper cover construction over point clouds.
//!
//! The pipeline is: load or generate a [`PointCloud`], pick a range-query
//! backend ([`Backend`]), build an ε-net [`Cover`], then derive the Ball
//! Mapper graph (1-skeleton of the nerve) and optional per-vertex colorings.
//!
//! Three exact range-query backends are interchangeable:
//!
//! * [`Backend::Linear`]: a direct scan evaluating every distance.
//! * [`Backend::BallTree`]: a metric ball tree pruning subtrees with the
//!   triangle inequality.
//! * [`Backend::Algebraic`]: Euclidean only; expands
//!   `|q - x|^2 = |q|^2 + |x|^2 - 2<q, x>` with cached norms and blocked
//!   inner products.
//!
//! The [`bench`] module times the backends and fits power-law scaling
//! exponents to the results.

pub mod bench;
pub mod coloring;
pub mod cover;
pub mod dataset;
pub mod document;
mod error;
pub mod metric;
pub mod nerve;
pub mod rangequery;

pub use coloring::{Aggregator, BoundReport, ColorMap, Colors};
pub use cover::{Cover, NetMethod, NetValidation, Order};
pub use dataset::{NormCache, PointCloud, ValueSeries};
pub use document::GraphDocument;
pub use error::{Error, Result};
pub use metric::Metric;
pub use nerve::{MapperGraph, SimplicialComplex};
pub use rangequery::{Backend, BackendConfig, IndexSet, QueryStats, RangeIndex};
