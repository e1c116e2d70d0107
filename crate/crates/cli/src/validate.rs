use std::io::Write;

use anyhow::{bail, Context, Result};

use ballmapper::coloring::{aggregate_colors, check_color_bounds, estimate_lipschitz_constant};
use ballmapper::cover::validate_eps_net;
use ballmapper::document::{GraphDocument, NodeColor};
use ballmapper::nerve::{build_k_skeleton, build_mapper_graph};
use ballmapper::rangequery::LinearScan;
use ballmapper::{Aggregator, ColorMap, Colors, Cover, Metric};

use crate::data::{DataSource, Loaded};
use crate::{read_document, ValidateArgs};

/// Prints a report and returns whether the document passed every check.
pub(crate) fn run(args: &ValidateArgs, out: &mut dyn Write) -> Result<bool> {
    let doc = read_document(&args.graph)?;
    let metric: Metric = doc.meta.metric.parse().context("document metric")?;
    let loaded = load_points(&doc, &args.data, metric)?;
    let cloud = &loaded.cloud;
    if (cloud.len(), cloud.dim()) != (doc.meta.n, doc.meta.dim) {
        bail!(
            "document describes {} points in {} dimensions but the data has {} in {}",
            doc.meta.n,
            doc.meta.dim,
            cloud.len(),
            cloud.dim()
        );
    }
    let eps = doc.meta.epsilon;
    let landmarks: Vec<usize> = doc.nodes.iter().map(|n| n.landmark_index).collect();
    // Balls are recomputed by direct scan, independent of the backend that
    // produced the document.
    let cover = Cover::from_landmarks(&LinearScan::new(cloud), eps, landmarks).context("landmark indices")?;

    let mut problems: Vec<String> = Vec::new();
    let net = validate_eps_net(cloud, &cover);
    for &p in &net.coverage_violations {
        problems.push(format!("point {p} is not within epsilon of any landmark"));
    }
    for v in &net.separation_violations {
        problems.push(format!(
            "landmarks {} and {} are {} apart, closer than epsilon",
            v.landmarks.0, v.landmarks.1, v.distance
        ));
    }
    for (node, ball) in doc.nodes.iter().zip(&cover.members) {
        if node.ball_size != ball.len() {
            problems.push(format!(
                "node {} records ball_size {} but its ball holds {} points",
                node.id,
                node.ball_size,
                ball.len()
            ));
        }
    }

    let graph = build_mapper_graph(&cover);
    for &[a, b] in &doc.edges {
        if !graph.has_edge(a, b) {
            problems.push(format!(
                "edge [{a}, {b}] has no witness: no point lies in both balls"
            ));
        }
    }
    for &(a, b) in &graph.edges {
        if doc.edges.binary_search(&[a, b]).is_err() {
            problems.push(format!(
                "edge [{a}, {b}] is missing: balls {a} and {b} share a point"
            ));
        }
    }
    if let Some(groups) = &doc.simplices {
        let k = groups.iter().map(|g| g.dim).max().unwrap_or(1);
        let complex = build_k_skeleton(&cover, k)?;
        for g in groups {
            for s in &g.simplices {
                if !complex.contains(s) {
                    problems.push(format!("simplex {s:?} has no witness point"));
                }
            }
            let expected = complex.simplices(g.dim).len();
            if expected != g.simplices.len() {
                problems.push(format!(
                    "{} simplices of dimension {} recorded, {expected} expected",
                    g.simplices.len(),
                    g.dim
                ));
            }
        }
    }

    let mut notes: Vec<String> = Vec::new();
    check_colors(
        &doc,
        &loaded,
        &cover,
        args.lipschitz.as_deref(),
        &mut problems,
        &mut notes,
    )?;

    writeln!(out, "graph: {}", args.graph.display())?;
    writeln!(
        out,
        "points: {}, landmarks: {}, edges: {}, epsilon: {eps}",
        cloud.len(),
        doc.nodes.len(),
        doc.edges.len()
    )?;
    writeln!(
        out,
        "coverage violations: {}, separation violations: {}",
        net.coverage_violations.len(),
        net.separation_violations.len()
    )?;
    for note in &notes {
        writeln!(out, "{note}")?;
    }
    if problems.is_empty() {
        writeln!(out, "OK")?;
        Ok(true)
    } else {
        for p in &problems {
            writeln!(out, "violation: {p}")?;
        }
        writeln!(out, "FAILED: {} violation(s)", problems.len())?;
        Ok(false)
    }
}

fn load_points(doc: &GraphDocument, data: &DataSource, metric: Metric) -> Result<Loaded> {
    if data.is_specified() {
        return data.load(metric);
    }
    match (&doc.meta.input, doc.meta.seed) {
        (None, Some(seed)) => {
            let source = DataSource {
                random: Some(doc.meta.n),
                dim: Some(doc.meta.dim),
                seed,
                ..data.clone()
            };
            source.load(metric)
        }
        (Some(path), _) => bail!("the document was built from {path}; pass it again with --input"),
        (None, None) => bail!("the document names no data source; pass --input or --random"),
    }
}

fn check_colors(
    doc: &GraphDocument,
    loaded: &Loaded,
    cover: &Cover,
    lipschitz: Option<&str>,
    problems: &mut Vec<String>,
    notes: &mut Vec<String>,
) -> Result<()> {
    let Some(agg_name) = &doc.meta.aggregator else {
        if lipschitz.is_some() {
            bail!("--lipschitz needs a colored document");
        }
        return Ok(());
    };
    let aggregator: Aggregator = agg_name.parse().context("document aggregator")?;
    let Some(values) = &loaded.values else {
        if lipschitz.is_some() {
            bail!("--lipschitz needs values: use --value-col, --values or --color-coord");
        }
        notes.push("colors: not checked (no values given)".into());
        return Ok(());
    };

    let recorded = match doc.nodes.first().and_then(|n| n.color.as_ref()) {
        Some(NodeColor::Number(_)) => Colors::Numeric(
            doc.nodes
                .iter()
                .map(|n| match n.color {
                    Some(NodeColor::Number(x)) => x,
                    _ => f64::NAN,
                })
                .collect(),
        ),
        Some(NodeColor::Label(_)) => Colors::Labels(
            doc.nodes
                .iter()
                .map(|n| match &n.color {
                    Some(NodeColor::Label(l)) => l.clone(),
                    _ => String::new(),
                })
                .collect(),
        ),
        None => {
            if doc.nodes.is_empty() {
                return Ok(());
            }
            bail!("document names aggregator `{agg_name}` but its nodes carry no colors");
        }
    };
    let expected = aggregate_colors(cover, values, aggregator)?;
    match (&recorded, &expected.colors) {
        (Colors::Numeric(r), Colors::Numeric(e)) => {
            for (i, (a, b)) in r.iter().zip(e).enumerate() {
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    problems.push(format!("node {i} has color {a} but its ball aggregates to {b}"));
                }
            }
        }
        (Colors::Labels(r), Colors::Labels(e)) => {
            for (i, (a, b)) in r.iter().zip(e).enumerate() {
                if a != b {
                    problems.push(format!(
                        "node {i} has color {a:?} but its ball aggregates to {b:?}"
                    ));
                }
            }
        }
        _ => problems.push("recorded colors and values differ in kind".into()),
    }

    let Some(spec) = lipschitz else {
        return Ok(());
    };
    let k = if spec == "auto" {
        let est = estimate_lipschitz_constant(&loaded.cloud, values)?;
        if est.conflicting_duplicates {
            bail!("coincident points carry different values; no finite Lipschitz constant exists");
        }
        est.constant
    } else {
        spec.parse::<f64>()
            .with_context(|| format!("--lipschitz expects a number or `auto`, got `{spec}`"))?
    };
    let colors = ColorMap {
        colors: recorded,
        aggregator,
    };
    let graph = build_mapper_graph(cover);
    let report = check_color_bounds(&graph, cover, values, &colors, k)?;
    if !report.applicable {
        notes.push(format!("bounds: not applicable to aggregator `{aggregator}`"));
        return Ok(());
    }
    notes.push(format!(
        "bounds (k = {k}): within-ball deviation {} <= {}, adjacent difference {} <= {}",
        report.max_within_ball_deviation,
        k * report.eps,
        report.max_adjacent_difference,
        2.0 * k * report.eps
    ));
    if !report.within_ball_satisfied {
        problems.push(format!(
            "within-ball deviation {} exceeds k*epsilon = {}",
            report.max_within_ball_deviation,
            k * report.eps
        ));
    }
    if !report.adjacent_satisfied {
        problems.push(format!(
            "adjacent color difference {} exceeds 2*k*epsilon = {}",
            report.max_adjacent_difference,
            2.0 * k * report.eps
        ));
    }
    Ok(())
}
