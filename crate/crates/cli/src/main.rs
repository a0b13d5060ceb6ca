//! `scaleset` command-line tool: build hierarchies, extract optimal cuts,
//! export energy curves and compare heuristics.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scaleset::builders::{build, BuildError, BuilderConfig, Heuristic};
use scaleset::energy::EnergyModel;
use scaleset::eval::{compare, normalize, summarize, EvalError, DEFAULT_GRID};
use scaleset::hierarchy::{self, HierarchyError};
use scaleset::raster::{self, flat_zone_partition, pixel_grid_partition, LabelMap, RasterError, RasterImage};

#[derive(Parser)]
#[command(name = "scaleset", version, about = "Scale-set hierarchical image segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a hierarchy from an image and write it to a file.
    Build(BuildArgs),
    /// Extract optimal cuts of a hierarchy at given scales.
    Cut(CutArgs),
    /// Export the energy curve of a hierarchy, raw and normalized.
    Curve(CurveArgs),
    /// Build several heuristics on one image and rank them.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EnergyKind {
    /// Piecewise-constant squared error.
    Mumford,
    /// Squared error weighted by a sigmoid of the internal/external contrast.
    Contrast,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionKind {
    /// Maximal 4-connected constant regions.
    Flat,
    /// One region per pixel.
    Grid,
}

#[derive(Args)]
struct InputArgs {
    /// Input image (PGM/PPM, ASCII or binary).
    image: PathBuf,
    /// Initial partition as a label map (PGM or raw); overrides --partition.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Initial partition to use when no label map is given.
    #[arg(long, value_enum, default_value = "flat")]
    partition: PartitionKind,
}

#[derive(Args)]
struct EnergyArgs {
    #[arg(long, value_enum, default_value = "mumford")]
    energy: EnergyKind,
    #[arg(long, default_value_t = EnergyModel::DEFAULT_SIGMOID_CENTER)]
    sigmoid_center: f64,
    #[arg(long, default_value_t = EnergyModel::DEFAULT_SIGMOID_STEEPNESS)]
    sigmoid_steepness: f64,
}

impl EnergyArgs {
    fn model(&self) -> EnergyModel {
        match self.energy {
            EnergyKind::Mumford => EnergyModel::PiecewiseConstant,
            EnergyKind::Contrast => EnergyModel::Contrast {
                center: self.sigmoid_center,
                steepness: self.sigmoid_steepness,
            },
        }
    }
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    input: InputArgs,
    /// sm2, smk, sm, mm or mm1.
    #[arg(long, default_value = "sm2")]
    heuristic: String,
    /// Subset bound for smk (at least 2).
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    energy: EnergyArgs,
    /// Output hierarchy file.
    #[arg(short, long)]
    out: PathBuf,
    /// Build metrics as JSON.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Per-node table `node,parent,lambda_plus,area`.
    #[arg(long)]
    nodes_csv: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("scale").required(true).args(["lambda", "x"]))]
struct CutArgs {
    /// Hierarchy file written by `build`.
    hierarchy: PathBuf,
    /// Absolute scales (comma separated or repeated).
    #[arg(long, value_delimiter = ',', conflicts_with = "x")]
    lambda: Vec<f64>,
    /// Normalized scales in [0, 1], relative to lambda_max.
    #[arg(long, value_delimiter = ',')]
    x: Vec<f64>,
    /// Output directory for `cut_<i>` label maps and renderings.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct CurveArgs {
    /// Hierarchy file written by `build`.
    hierarchy: PathBuf,
    /// Normalized curve CSV (stdout when absent).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Raw energy curve CSV: `lambda,value,slope` at every breakpoint.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// JSON summary: lambda_max, E_I, quality_area, bound_max_violation.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Number of uniform samples of [0, 1].
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Heuristics to compare (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "sm2,sm,mm,mm1")]
    heuristic: Vec<String>,
    /// Subset bound for smk.
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    energy: EnergyArgs,
    /// Combined curve CSV (stdout when absent).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Comparison JSON with per-heuristic summaries and metrics.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

/// Usage/config errors exit with 2, everything else with 1.
struct Failure {
    usage: bool,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            usage: true,
            message: message.into(),
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure {
        usage: false,
        message: e.to_string(),
    }
}

impl From<RasterError> for Failure {
    fn from(e: RasterError) -> Self {
        let usage = matches!(&e, RasterError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound);
        Failure {
            usage,
            message: e.to_string(),
        }
    }
}

impl From<BuildError> for Failure {
    fn from(e: BuildError) -> Self {
        Failure {
            usage: matches!(e, BuildError::Config(_)),
            message: e.to_string(),
        }
    }
}

impl From<HierarchyError> for Failure {
    fn from(e: HierarchyError) -> Self {
        let usage = matches!(&e, HierarchyError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound);
        Failure {
            usage,
            message: e.to_string(),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Build(b) => b.into(),
            other => runtime(other),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        runtime(e)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(runtime)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn load_input(args: &InputArgs) -> Result<(RasterImage, LabelMap), Failure> {
    let img = raster::load_image(&args.image)?;
    let partition = match (&args.labels, args.partition) {
        (Some(path), _) => raster::load_label_map(path, &img)?,
        (None, PartitionKind::Flat) => flat_zone_partition(&img),
        (None, PartitionKind::Grid) => pixel_grid_partition(&img),
    };
    Ok((img, partition))
}

fn run_build(args: BuildArgs) -> Result<(), Failure> {
    let heuristic = Heuristic::parse(&args.heuristic, args.k)?;
    let config = BuilderConfig::new(heuristic, args.energy.model())?;
    let (img, partition) = load_input(&args.input)?;
    let (h, metrics) = build(&img, &partition, &config)?;
    hierarchy::save(&h, &args.out)?;
    if let Some(path) = &args.metrics {
        write_json(path, &metrics)?;
    }
    if let Some(path) = &args.nodes_csv {
        let mut out = create(path)?;
        h.write_nodes_csv(&mut out)?;
        out.flush()?;
    }
    eprintln!(
        "{}: {} initial regions, {} nodes, lambda_max {}",
        heuristic,
        partition.region_count,
        h.len(),
        h.lambda_max()
    );
    Ok(())
}

fn run_cut(args: CutArgs) -> Result<(), Failure> {
    if let Some(l) = args.lambda.iter().find(|l| l.is_nan() || **l < 0.0) {
        return Err(Failure::usage(format!("scale must be >= 0, got {l}")));
    }
    if let Some(x) = args.x.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Failure::usage(format!("normalized scale must lie in [0, 1], got {x}")));
    }
    let h = hierarchy::load(&args.hierarchy)?;
    let lambdas: Vec<f64> = if args.lambda.is_empty() {
        args.x.iter().map(|x| x * h.lambda_max()).collect()
    } else {
        args.lambda.clone()
    };
    if lambdas.is_empty() {
        return Err(Failure::usage("no scale given"));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    let render_ext = if h.channels == 1 { "pgm" } else { "ppm" };
    println!("index,lambda,regions,energy");
    for (i, &lambda) in lambdas.iter().enumerate() {
        let cut = h.optimal_cut(lambda);
        let map = h.cut_label_map(&cut);
        let label_path = if map.region_count <= 65536 {
            args.out.join(format!("cut_{i}_labels.pgm"))
        } else {
            args.out.join(format!("cut_{i}_labels.raw"))
        };
        raster::save_label_map(&map, &label_path)?;
        raster::save_image(&h.render_cut(&cut), args.out.join(format!("cut_{i}.{render_ext}")))?;
        println!("{i},{lambda},{},{}", cut.nodes.len(), h.cut_energy(&cut, lambda));
    }
    Ok(())
}

fn run_curve(args: CurveArgs) -> Result<(), Failure> {
    let h = hierarchy::load(&args.hierarchy)?;
    if let Some(path) = &args.raw {
        let mut out = create(path)?;
        h.energy_curve()?.write_csv(&mut out)?;
        out.flush()?;
    }
    let nc = normalize(&h, args.grid)?;
    match &args.out {
        Some(path) => {
            let mut out = create(path)?;
            nc.write_csv(&mut out)?;
            out.flush()?;
        }
        None => nc.write_csv(io::stdout().lock())?,
    }
    if let Some(path) = &args.metrics {
        write_json(path, &summarize(&h, &nc)?)?;
    }
    Ok(())
}

fn run_compare(args: CompareArgs) -> Result<(), Failure> {
    let heuristics = args
        .heuristic
        .iter()
        .map(|name| Heuristic::parse(name, args.k))
        .collect::<Result<Vec<_>, _>>()?;
    if heuristics.is_empty() {
        return Err(Failure::usage("no heuristic given"));
    }
    let model = args.energy.model();
    BuilderConfig::new(heuristics[0], model)?;
    let (img, partition) = load_input(&args.input)?;
    let cmp = compare(&img, &partition, &heuristics, model)?;
    match &args.out {
        Some(path) => {
            let mut out = create(path)?;
            cmp.write_csv(&mut out)?;
            out.flush()?;
        }
        None => cmp.write_csv(io::stdout().lock())?,
    }
    if let Some(path) = &args.metrics {
        write_json(path, &cmp)?;
    }
    for (rank, name) in cmp.ranking.iter().enumerate() {
        let e = cmp.entries.iter().find(|e| &e.heuristic == name).expect("ranked entry");
        eprintln!(
            "{}. {name}: quality_area {} lambda_max {}",
            rank + 1,
            e.summary.quality_area,
            e.summary.lambda_max
        );
    }
    eprintln!("lambda_max spread {}", cmp.lambda_max_spread);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build(a) => run_build(a),
        Command::Cut(a) => run_cut(a),
        Command::Curve(a) => run_curve(a),
        Command::Compare(a) => run_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(if f.usage { 2 } else { 1 })
        }
    }
}
