use std::fs;
use std::path::Path;

use ballmapper::document::GraphDocument;
use ballmapper_cli::run_cli_with;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("ballmapper").chain(args.iter().copied());
    let code = run_cli_with(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_line_points(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("pts.csv");
    fs::write(&p, "x,y,label\n0,0,a\n1,0,a\n2,0,b\n3,0,b\n").unwrap();
    p
}

#[test]
fn cover_graph_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let pts = write_line_points(dir.path());
    let g = dir.path().join("g.json");
    let r = run(&[
        "cover-graph",
        "--input",
        path(&pts),
        "--header",
        "--value-col",
        "label",
        "--epsilon",
        "1.5",
        "--backend",
        "balltree",
        "--out",
        path(&g),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let doc = GraphDocument::from_json_str(&fs::read_to_string(&g).unwrap()).unwrap();
    let landmarks: Vec<usize> = doc.nodes.iter().map(|n| n.landmark_index).collect();
    assert_eq!(landmarks, vec![0, 2]);
    assert_eq!(doc.edges, vec![[0, 1]]);
    assert_eq!(doc.meta.backend, "balltree");
    assert_eq!(doc.meta.dim, 2);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let r = run(&["cover-graph", "--frobnicate"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("Usage"), "{}", r.stderr);
    assert_eq!(run(&["frobnicate"]).code, 2);
    assert_eq!(run(&[]).code, 2);
}

#[test]
fn help_exits_zero() {
    for args in [
        &["--help"][..],
        &["cover-graph", "--help"],
        &["validate", "--help"],
        &["bench", "--help"],
    ] {
        let r = run(args);
        assert_eq!(r.code, 0);
        assert!(r.stdout.contains("Usage"));
    }
}

#[test]
fn runtime_errors_exit_one() {
    let r = run(&["cover-graph", "--input", "/nonexistent/pts.csv", "--epsilon", "1"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.starts_with("error:"), "{}", r.stderr);
    let r = run(&["cover-graph", "--random", "10", "--dim", "2", "--epsilon=-1"]);
    assert_eq!(r.code, 1);
    let r = run(&[
        "cover-graph",
        "--random",
        "10",
        "--dim",
        "2",
        "--epsilon",
        "1",
        "--metric",
        "manhattan",
        "--backend",
        "algebraic",
    ]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("euclidean"), "{}", r.stderr);
}

#[test]
fn validate_accepts_good_and_names_corrupted_edge() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    let r = run(&[
        "cover-graph",
        "--random",
        "200",
        "--dim",
        "2",
        "--seed",
        "5",
        "--epsilon",
        "0.2",
        "--out",
        path(&g),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let r = run(&["validate", "--graph", path(&g)]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.contains("OK"));

    // Insert an edge between two balls that share no point.
    let mut doc = GraphDocument::from_json_str(&fs::read_to_string(&g).unwrap()).unwrap();
    let m = doc.nodes.len();
    let (a, b) = (0..m)
        .flat_map(|a| (a + 1..m).map(move |b| (a, b)))
        .find(|&(a, b)| doc.edges.binary_search(&[a, b]).is_err())
        .unwrap();
    doc.edges.push([a, b]);
    doc.edges.sort();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, doc.to_json_string()).unwrap();
    let r = run(&["validate", "--graph", path(&bad)]);
    assert_eq!(r.code, 1);
    assert!(
        r.stdout.contains(&format!("edge [{a}, {b}] has no witness")),
        "{}",
        r.stdout
    );
}

#[test]
fn validate_reports_broken_net() {
    let dir = tempfile::tempdir().unwrap();
    let pts = write_line_points(dir.path());
    let g = dir.path().join("g.json");
    assert_eq!(
        run(&[
            "cover-graph",
            "--input",
            path(&pts),
            "--header",
            "--value-col",
            "label",
            "--epsilon",
            "1.5",
            "--out",
            path(&g)
        ])
        .code,
        0
    );
    let text = fs::read_to_string(&g)
        .unwrap()
        .replace("\"landmark_index\": 2", "\"landmark_index\": 1");
    fs::write(&g, text).unwrap();
    let r = run(&[
        "validate",
        "--graph",
        path(&g),
        "--input",
        path(&pts),
        "--header",
        "--value-col",
        "label",
    ]);
    assert_eq!(r.code, 1);
    assert!(r.stdout.contains("point 3 is not within epsilon"), "{}", r.stdout);
    assert!(r.stdout.contains("landmarks 0 and 1 are 1 apart"), "{}", r.stdout);
}

#[test]
fn same_flags_same_bytes_across_backends() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for backend in ["linear", "balltree", "algebraic"] {
        let g = dir.path().join(format!("{backend}.json"));
        let r = run(&[
            "cover-graph",
            "--random",
            "300",
            "--dim",
            "4",
            "--seed",
            "9",
            "--epsilon",
            "0.4",
            "--backend",
            backend,
            "--color-coord",
            "1",
            "--aggregator",
            "median",
            "--skeleton",
            "2",
            "--out",
            path(&g),
        ]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        let text = fs::read_to_string(&g).unwrap();
        outputs.push(text.replace(&format!("\"backend\": \"{backend}\""), ""));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    assert!(outputs[0].contains("\"simplices\""));
}

#[test]
fn fps_and_shuffled_orders() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("fps.json");
    let r = run(&[
        "cover-graph",
        "--random",
        "100",
        "--dim",
        "3",
        "--epsilon",
        "0.3",
        "--net",
        "fps",
        "--start",
        "7",
        "--out",
        path(&g),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let doc = GraphDocument::from_json_str(&fs::read_to_string(&g).unwrap()).unwrap();
    assert_eq!(doc.nodes[0].landmark_index, 7);
    assert_eq!(doc.meta.order, "start:7");
    assert_eq!(run(&["validate", "--graph", path(&g)]).code, 0);

    let s = dir.path().join("shuf.json");
    let r = run(&[
        "cover-graph",
        "--random",
        "100",
        "--dim",
        "3",
        "--epsilon",
        "0.3",
        "--order",
        "shuffled",
        "--out",
        path(&s),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(run(&["validate", "--graph", path(&s)]).code, 0);
}

#[test]
fn export_to_dot_and_back_to_json() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    let r = run(&[
        "cover-graph",
        "--random",
        "80",
        "--dim",
        "2",
        "--epsilon",
        "0.3",
        "--color-coord",
        "0",
        "--aggregator",
        "mean",
        "--out",
        path(&g),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let r = run(&["export", "--graph", path(&g)]);
    assert_eq!(r.code, 0);
    assert!(r.stdout.starts_with("graph {\n"));
    assert!(r.stdout.contains("N0 [ball_size="));
    let r = run(&["export", "--graph", path(&g), "--format", "json"]);
    assert_eq!(r.stdout, fs::read_to_string(&g).unwrap());
}

#[test]
fn validate_bounds_with_given_constant() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    let args = [
        "--random",
        "50",
        "--dim",
        "2",
        "--epsilon",
        "0.3",
        "--color-coord",
        "0",
    ];
    let mut cover = vec!["cover-graph", "--aggregator", "variance", "--out", path(&g)];
    cover.extend(args);
    assert_eq!(run(&cover).code, 0);
    let r = run(&[
        "validate",
        "--graph",
        path(&g),
        "--color-coord",
        "0",
        "--lipschitz",
        "1",
    ]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.contains("not applicable"));
    let r = run(&[
        "validate",
        "--graph",
        path(&g),
        "--color-coord",
        "0",
        "--lipschitz",
        "abc",
    ]);
    assert_eq!(r.code, 1);
}

#[test]
fn bench_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("records.csv");
    let fits = dir.path().join("fits.csv");
    let r = run(&[
        "bench",
        "--sizes",
        "30,60",
        "--dims",
        "2,8",
        "--trials",
        "2",
        "--no-warmup",
        "--records",
        path(&rec),
        "--fits",
        path(&fits),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r
        .stdout
        .starts_with("backend,n,D,median_runtime_ms,median_peak_mem_mb,speedup\n"));
    assert_eq!(r.stdout.lines().count(), 1 + 3 * 2 * 2);
    let records = fs::read_to_string(&rec).unwrap();
    assert_eq!(records.lines().count(), 1 + 3 * 2 * 2 * 2);
    assert_eq!(fs::read_to_string(&fits).unwrap().lines().count(), 1 + 3 * 2);
    assert_eq!(run(&["bench", "--sizes", "0"]).code, 1);
}
