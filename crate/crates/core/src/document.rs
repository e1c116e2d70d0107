//! Serialized Ball Mapper graphs.
//!
//! JSON is the interchange format and is written canonically: keys in
//! alphabetical order, one node or edge per line, floats with 17 significant
//! digits. Reading a document and writing it again reproduces the input byte
//! for byte. DOT output is for graph viewers and drops the metadata.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::Deserialize;

use crate::coloring::{ColorMap, Colors};
use crate::error::{Error, Result};
use crate::nerve::{MapperGraph, SimplicialComplex};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentMeta {
    pub aggregator: Option<String>,
    pub backend: String,
    pub dim: usize,
    pub epsilon: f64,
    /// Path of the input CSV; `None` for generated clouds.
    pub input: Option<String>,
    pub metric: String,
    pub n: usize,
    pub net: String,
    pub order: String,
    /// Generator seed for random clouds, shuffle seed or FPS start otherwise.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum NodeColor {
    Number(f64),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentNode {
    pub ball_size: usize,
    pub color: Option<NodeColor>,
    pub id: usize,
    pub landmark_index: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimplexGroup {
    pub dim: usize,
    pub simplices: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub edges: Vec<[usize; 2]>,
    pub meta: DocumentMeta,
    pub nodes: Vec<DocumentNode>,
    /// Simplices of dimension 2 and up; absent for plain graphs.
    #[serde(default)]
    pub simplices: Option<Vec<SimplexGroup>>,
}

impl GraphDocument {
    pub fn new(
        meta: DocumentMeta,
        graph: &MapperGraph,
        colors: Option<&ColorMap>,
        skeleton: Option<&SimplicialComplex>,
    ) -> Result<Self> {
        if let Some(c) = colors {
            if c.len() != graph.vertices.len() {
                return Err(Error::invalid("one color per vertex is required"));
            }
        }
        let nodes = graph
            .vertices
            .iter()
            .map(|v| DocumentNode {
                ball_size: v.ball_size,
                color: colors.map(|c| match &c.colors {
                    Colors::Numeric(x) => NodeColor::Number(x[v.position]),
                    Colors::Labels(x) => NodeColor::Label(x[v.position].clone()),
                }),
                id: v.position,
                landmark_index: v.landmark,
            })
            .collect();
        let simplices = skeleton.filter(|k| k.max_dim() >= 2).map(|k| {
            (2..=k.max_dim())
                .map(|dim| SimplexGroup {
                    dim,
                    simplices: k.simplices(dim).to_vec(),
                })
                .collect()
        });
        let doc = Self {
            edges: graph.edges.iter().map(|&(a, b)| [a, b]).collect(),
            meta,
            nodes,
            simplices,
        };
        doc.check()?;
        Ok(doc)
    }

    /// Checks the structural invariants: ids are `0..m` in order, edges are
    /// sorted pairs `i < j` of existing ids, colors are finite and all of one
    /// kind.
    pub fn check(&self) -> Result<()> {
        if !(self.meta.epsilon > 0.0 && self.meta.epsilon.is_finite()) {
            return Err(Error::invalid("meta.epsilon must be positive and finite"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::invalid(format!("node {i} has id {}", node.id)));
            }
            if let Some(NodeColor::Number(x)) = node.color {
                if !x.is_finite() {
                    return Err(Error::invalid(format!("node {i} has a non-finite color")));
                }
            }
        }
        let kinds: Vec<u8> = self
            .nodes
            .iter()
            .map(|n| match n.color {
                None => 0,
                Some(NodeColor::Number(_)) => 1,
                Some(NodeColor::Label(_)) => 2,
            })
            .collect();
        if kinds.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::invalid(
                "node colors must be all numeric, all labels, or all absent",
            ));
        }
        let m = self.nodes.len();
        for &[a, b] in &self.edges {
            if !(a < b && b < m) {
                return Err(Error::invalid(format!(
                    "edge [{a}, {b}] is not a pair i < j of node ids"
                )));
            }
        }
        if self.edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("edges must be sorted and distinct"));
        }
        for group in self.simplices.iter().flatten() {
            for s in &group.simplices {
                if s.len() != group.dim + 1 || s.windows(2).any(|w| w[0] >= w[1]) || s.iter().any(|&v| v >= m)
                {
                    return Err(Error::invalid(format!("malformed {}-simplex {s:?}", group.dim)));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            row: e.line(),
            column: None,
            message: e.to_string(),
        })?;
        doc.check()?;
        Ok(doc)
    }

    pub fn read_json<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n  \"edges\": [");
        for (i, [a, b]) in self.edges.iter().enumerate() {
            let sep = if i == 0 { "" } else { "," };
            let _ = write!(s, "{sep}\n    [{a}, {b}]");
        }
        s.push_str(if self.edges.is_empty() { "],\n" } else { "\n  ],\n" });

        let m = &self.meta;
        s.push_str("  \"meta\": {\n");
        let _ = writeln!(s, "    \"aggregator\": {},", opt_string(&m.aggregator));
        let _ = writeln!(s, "    \"backend\": {},", string(&m.backend));
        let _ = writeln!(s, "    \"dim\": {},", m.dim);
        let _ = writeln!(s, "    \"epsilon\": {},", float(m.epsilon));
        let _ = writeln!(s, "    \"input\": {},", opt_string(&m.input));
        let _ = writeln!(s, "    \"metric\": {},", string(&m.metric));
        let _ = writeln!(s, "    \"n\": {},", m.n);
        let _ = writeln!(s, "    \"net\": {},", string(&m.net));
        let _ = writeln!(s, "    \"order\": {},", string(&m.order));
        let seed = m.seed.map_or_else(|| "null".to_string(), |v| v.to_string());
        let _ = writeln!(s, "    \"seed\": {seed}");
        s.push_str("  },\n  \"nodes\": [");
        for (i, node) in self.nodes.iter().enumerate() {
            let sep = if i == 0 { "" } else { "," };
            let color = match &node.color {
                None => "null".to_string(),
                Some(NodeColor::Number(x)) => float(*x),
                Some(NodeColor::Label(l)) => string(l),
            };
            let _ = write!(
                s,
                "{sep}\n    {{\"ball_size\": {}, \"color\": {color}, \"id\": {}, \"landmark_index\": {}}}",
                node.ball_size, node.id, node.landmark_index
            );
        }
        s.push_str(if self.nodes.is_empty() { "]" } else { "\n  ]" });

        if let Some(groups) = &self.simplices {
            s.push_str(",\n  \"simplices\": [");
            for (i, g) in groups.iter().enumerate() {
                let sep = if i == 0 { "" } else { "," };
                let _ = write!(s, "{sep}\n    {{\"dim\": {}, \"simplices\": [", g.dim);
                for (j, simplex) in g.simplices.iter().enumerate() {
                    let sep = if j == 0 { "" } else { ", " };
                    let items: Vec<String> = simplex.iter().map(usize::to_string).collect();
                    let _ = write!(s, "{sep}[{}]", items.join(", "));
                }
                s.push_str("]}");
            }
            s.push_str(if groups.is_empty() { "]" } else { "\n  ]" });
        }
        s.push_str("\n}\n");
        s
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_json_string().as_bytes())?;
        Ok(())
    }

    pub fn to_dot_string(&self) -> String {
        let mut s = String::from("graph {\n");
        for node in &self.nodes {
            let _ = write!(s, "  N{} [ball_size={}", node.id, node.ball_size);
            match &node.color {
                Some(NodeColor::Number(x)) => {
                    let _ = write!(s, ", color=\"{x}\"");
                }
                Some(NodeColor::Label(l)) => {
                    let _ = write!(s, ", color={}", string(l));
                }
                None => {}
            }
            s.push_str("];\n");
        }
        for [a, b] in &self.edges {
            let _ = writeln!(s, "  N{a} -- N{b};");
        }
        s.push_str("}\n");
        s
    }

    pub fn write_dot<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_dot_string().as_bytes())?;
        Ok(())
    }
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn opt_string(s: &Option<String>) -> String {
    s.as_deref().map_or_else(|| "null".to_string(), string)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coloring::{aggregate_colors, Aggregator};
    use crate::cover::{greedy_eps_net, Order};
    use crate::dataset::{generate_uniform_cloud, ValueSeries};
    use crate::nerve::{build_k_skeleton, build_mapper_graph};
    use crate::rangequery::LinearScan;
    use proptest::prelude::*;

    fn meta() -> DocumentMeta {
        DocumentMeta {
            aggregator: Some("mean".into()),
            backend: "linear".into(),
            dim: 2,
            epsilon: 0.25,
            input: None,
            metric: "euclidean".into(),
            n: 120,
            net: "greedy".into(),
            order: "index".into(),
            seed: Some(7),
        }
    }

    fn sample(skeleton: usize, labels: bool) -> GraphDocument {
        let cloud = generate_uniform_cloud(120, 2, 7).unwrap();
        let cover = greedy_eps_net(&LinearScan::new(&cloud), 0.25, Order::Index).unwrap();
        let graph = build_mapper_graph(&cover);
        let values = if labels {
            let cells: Vec<String> = (0..120).map(|i| format!("c\"{}\\", i % 3)).collect();
            ValueSeries::Labels(cells)
        } else {
            ValueSeries::numeric(cloud.rows().map(|r| r[0] / 3.0).collect()).unwrap()
        };
        let agg = if labels {
            Aggregator::Mode
        } else {
            Aggregator::Mean
        };
        let colors = aggregate_colors(&cover, &values, agg).unwrap();
        let k = build_k_skeleton(&cover, skeleton).unwrap();
        GraphDocument::new(meta(), &graph, Some(&colors), Some(&k)).unwrap()
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        for (skeleton, labels) in [(1, false), (3, false), (2, true)] {
            let doc = sample(skeleton, labels);
            let text = doc.to_json_string();
            let back = GraphDocument::from_json_str(&text).unwrap();
            assert_eq!(back, doc);
            assert_eq!(back.to_json_string(), text);
            assert_eq!(doc.simplices.is_some(), skeleton > 1);
        }
    }

    #[test]
    fn json_is_standard() {
        let text = sample(2, false).to_json_string();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["edges", "meta", "nodes", "simplices"]);
        assert_eq!(v["meta"]["epsilon"].as_f64(), Some(0.25));
        assert!(text.contains("\"epsilon\": 2.5000000000000000e-1"));
    }

    #[test]
    fn empty_document() {
        let graph = MapperGraph {
            vertices: vec![],
            edges: vec![],
        };
        let doc = GraphDocument::new(meta(), &graph, None, None).unwrap();
        let text = doc.to_json_string();
        assert_eq!(
            GraphDocument::from_json_str(&text).unwrap().to_json_string(),
            text
        );
    }

    #[test]
    fn rejects_malformed_documents() {
        let text = sample(1, false).to_json_string();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["edges"][0] = serde_json::json!([1, 0]);
        assert!(GraphDocument::from_json_str(&v.to_string()).is_err());

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["nodes"][0]["id"] = serde_json::json!(5);
        assert!(GraphDocument::from_json_str(&v.to_string()).is_err());

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["meta"]["extra"] = serde_json::json!(1);
        assert!(GraphDocument::from_json_str(&v.to_string()).is_err());

        assert!(matches!(
            GraphDocument::from_json_str("{\n\"edges\": ["),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn dot_export() {
        let doc = sample(1, false);
        let dot = doc.to_dot_string();
        assert!(dot.starts_with("graph {\n"));
        assert!(dot.ends_with("}\n"));
        assert!(dot.contains(&format!("  N0 [ball_size={}, color=\"", doc.nodes[0].ball_size)));
        let edge_lines = dot.lines().filter(|l| l.contains(" -- ")).count();
        assert_eq!(edge_lines, doc.edges.len());
        let [a, b] = doc.edges[0];
        assert!(dot.contains(&format!("  N{a} -- N{b};\n")));

        let labelled = sample(1, true).to_dot_string();
        assert!(labelled.contains("color=\"c\\\"0\\\\\""));
    }

    proptest! {
        #[test]
        fn floats_survive_round_trip(eps in 1e-300f64..1e300, color in -1e300f64..1e300) {
            let graph = MapperGraph {
                vertices: vec![crate::nerve::Vertex { position: 0, landmark: 3, ball_size: 1 }],
                edges: vec![],
            };
            let colors = ColorMap { colors: Colors::Numeric(vec![color]), aggregator: Aggregator::Mean };
            let mut m = meta();
            m.epsilon = eps;
            let doc = GraphDocument::new(m, &graph, Some(&colors), None).unwrap();
            let text = doc.to_json_string();
            let back = GraphDocument::from_json_str(&text).unwrap();
            prop_assert_eq!(&back, &doc);
            prop_assert_eq!(back.to_json_string(), text);
        }
    }
}
