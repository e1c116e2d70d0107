//! Command-line front end: `cover-graph`, `validate`, `bench` and `export`.
//!
//! [`run_cli`] returns the process exit code: 0 on success, 1 for runtime
//! failures and failed validations, 2 for usage errors.

mod bench;
mod data;
mod validate;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ballmapper::coloring::aggregate_colors;
use ballmapper::cover::{fps_eps_net, greedy_eps_net};
use ballmapper::document::{DocumentMeta, GraphDocument};
use ballmapper::nerve::{build_k_skeleton, build_mapper_graph};
use ballmapper::{Aggregator, Backend, BackendConfig, Metric, NetMethod, Order};

pub use data::DataSource;

#[derive(Debug, Parser)]
#[command(
    name = "ballmapper",
    version,
    about = "Ball Mapper graphs with exact range-query backends"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an ε-net cover and its Ball Mapper graph.
    CoverGraph(CoverGraphArgs),
    /// Check a graph document against its data: net conditions, ball sizes,
    /// edges and, optionally, coloring bounds.
    Validate(ValidateArgs),
    /// Time the backends over a grid of sizes and dimensions.
    Bench(bench::BenchArgs),
    /// Convert a JSON graph document to DOT or canonical JSON.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OrderArg {
    Index,
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Dot,
}

#[derive(Debug, Args)]
struct CoverGraphArgs {
    #[command(flatten)]
    data: DataSource,
    /// Ball radius; balls are open.
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value = "euclidean")]
    metric: Metric,
    #[arg(long, default_value = "linear")]
    backend: Backend,
    #[arg(long, default_value_t = 40)]
    leaf_size: usize,
    /// Points per block in the algebraic backend.
    #[arg(long, default_value_t = 256)]
    block: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value = "greedy")]
    net: NetMethod,
    /// Candidate order for the greedy net; `shuffled` uses `--seed`.
    #[arg(long, value_enum, default_value_t = OrderArg::Index)]
    order: OrderArg,
    /// First landmark for farthest-point sampling.
    #[arg(long, default_value_t = 0)]
    start: usize,
    /// Highest simplex dimension written to the document; 1 is the graph.
    #[arg(long, default_value_t = 1)]
    skeleton: usize,
    /// Per-vertex color: mean, median, trimmed:F, min, max, mode, variance
    /// or range. Needs values from `--value-col`, `--values` or
    /// `--color-coord`.
    #[arg(long)]
    aggregator: Option<Aggregator>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Graph document produced by `cover-graph`.
    #[arg(long)]
    graph: PathBuf,
    /// Where the points come from; defaults to the source recorded in the
    /// document.
    #[command(flatten)]
    data: DataSource,
    /// Lipschitz constant for the coloring bound check, or `auto` to
    /// estimate it from the data.
    #[arg(long)]
    lipschitz: Option<String>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Dot)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs the command against the
/// process's stdout and stderr.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_cli_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run_cli`] with explicit output streams.
pub fn run_cli_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().ansi().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::CoverGraph(args) => cover_graph(args, out),
        Command::Validate(args) => validate::run(&args, out),
        Command::Bench(args) => bench::run(&args, out, err),
        Command::Export(args) => export(args, out),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn cover_graph(args: CoverGraphArgs, out: &mut dyn Write) -> Result<bool> {
    let loaded = args.data.load(args.metric)?;
    let cloud = &loaded.cloud;
    let config = BackendConfig {
        backend: args.backend,
        leaf_size: args.leaf_size,
        block: args.block,
        threads: args.threads,
    };
    let index = config.build(cloud)?;
    let (cover, order_name) = match args.net {
        NetMethod::Greedy => {
            let order = match args.order {
                OrderArg::Index => Order::Index,
                OrderArg::Shuffled => Order::Shuffled(args.data.seed),
            };
            let name = match args.order {
                OrderArg::Index => "index".to_string(),
                OrderArg::Shuffled => "shuffled".to_string(),
            };
            (greedy_eps_net(index.as_ref(), args.epsilon, order)?, name)
        }
        NetMethod::Fps => (
            fps_eps_net(index.as_ref(), args.epsilon, args.start)?,
            format!("start:{}", args.start),
        ),
    };
    let graph = build_mapper_graph(&cover);
    let colors = match (args.aggregator, &loaded.values) {
        (Some(agg), Some(values)) => Some(aggregate_colors(&cover, values, agg)?),
        (Some(_), None) => bail!("--aggregator needs values: use --value-col, --values or --color-coord"),
        (None, _) => None,
    };
    let skeleton = if args.skeleton > 1 {
        Some(build_k_skeleton(&cover, args.skeleton)?)
    } else {
        None
    };
    let meta = DocumentMeta {
        aggregator: args.aggregator.map(|a| a.to_string()),
        backend: args.backend.to_string(),
        dim: cloud.dim(),
        epsilon: args.epsilon,
        input: args.data.input.as_ref().map(|p| p.display().to_string()),
        metric: args.metric.to_string(),
        n: cloud.len(),
        net: args.net.to_string(),
        order: order_name,
        seed: Some(args.data.seed),
    };
    let doc = GraphDocument::new(meta, &graph, colors.as_ref(), skeleton.as_ref())?;
    emit(&doc, args.format, args.out.as_deref(), out)?;
    log::info!(
        "{} landmarks, {} edges at epsilon {}",
        doc.nodes.len(),
        doc.edges.len(),
        args.epsilon
    );
    Ok(true)
}

fn export(args: ExportArgs, out: &mut dyn Write) -> Result<bool> {
    let doc = read_document(&args.graph)?;
    emit(&doc, args.format, args.out.as_deref(), out)?;
    Ok(true)
}

pub(crate) fn read_document(path: &Path) -> Result<GraphDocument> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    GraphDocument::read_json(file).with_context(|| format!("cannot read graph document {}", path.display()))
}

fn emit(doc: &GraphDocument, format: Format, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let text = match format {
        Format::Json => doc.to_json_string(),
        Format::Dot => doc.to_dot_string(),
    };
    write_output(path, out, text.as_bytes())
}

pub(crate) fn write_output(path: Option<&Path>, out: &mut dyn Write, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            let mut w = BufWriter::new(file);
            w.write_all(bytes)?;
            w.flush()?;
        }
        None => out.write_all(bytes)?,
    }
    Ok(())
}
