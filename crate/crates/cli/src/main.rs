//! `gbqknn` command-line front end.
//!
//! Exit status: 0 on success, 1 on usage errors (bad flags or parameter
//! values), 2 on data errors (unreadable, malformed or mismatched input).

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gbqknn::bench::{run_scaling, ScalingGrid};
use gbqknn::classifier::{ClassifierModel, FitConfig, ModelMetadata};
use gbqknn::datasets_io::{
    load_csv, make_blobs, quantize_dataset, read_points, write_csv, write_points, BlobSpec, Bounds,
    Column, DatasetSpec, PointsHeader, Quantizer, RawDataset,
};
use gbqknn::granular_ball::generate_with_stats;
use gbqknn::quantum_sim::SimilarityBackend;
use gbqknn::{Error, Label, LabeledPoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

const DEFAULT_SHOTS: u64 = 1000;

#[derive(Parser, Debug)]
#[command(
    name = "gbqknn",
    version,
    about = "Granular-ball kNN over a simulated quantum small-world index"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cover a labeled dataset with granular balls and report them
    GenBalls(GenBallsArgs),
    /// Fit a model (balls plus index) and write it to --output
    Build(BuildArgs),
    /// Per-query neighbor queues from a saved model
    Search(QueryArgs),
    /// Predict labels with a saved model
    Classify(QueryArgs),
    /// Run the scaling grid and report cost curves
    Bench(BenchArgs),
    /// Write a synthetic Gaussian-blob dataset as CSV or JSON
    MakeBlobs(BlobArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Exact,
    Sampled,
}

#[derive(Args, Debug, Default)]
struct FitFlags {
    /// JSON file with fit settings; flags given on the command line win
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    purity_threshold: Option<f64>,
    #[arg(long)]
    max_neighbors: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Bits per feature
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Swap-test repetitions for the sampled backend
    #[arg(long)]
    shots: Option<u64>,
    /// Comparator register width for the sampled backend
    #[arg(long)]
    cmp_bits: Option<u32>,
    #[arg(long, env = "GBQKNN_SEED")]
    seed: Option<u64>,
    /// Search whole layers when linking new nodes
    #[arg(long)]
    full_layer_candidates: bool,
}

#[derive(Args, Debug)]
struct InputFlags {
    /// CSV file, or a point file written by this tool
    #[arg(long)]
    input: PathBuf,
    /// Label column of a CSV input, by name or zero-based position
    #[arg(long, default_value = "label")]
    label_column: String,
    /// CSV input has no header row
    #[arg(long)]
    no_header: bool,
}

#[derive(Args, Debug)]
struct OutputFlags {
    /// Defaults to standard output
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args, Debug)]
struct GenBallsArgs {
    #[command(flatten)]
    input: InputFlags,
    #[command(flatten)]
    fit: FitFlags,
    #[command(flatten)]
    out: OutputFlags,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    input: InputFlags,
    #[command(flatten)]
    fit: FitFlags,
    /// Model file to write
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct QueryArgs {
    /// Model file written by `build`
    #[arg(long)]
    index: PathBuf,
    #[command(flatten)]
    input: InputFlags,
    #[arg(long)]
    k: Option<usize>,
    /// Overrides the model's backend for these queries
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long)]
    shots: Option<u64>,
    #[command(flatten)]
    out: OutputFlags,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    fit: FitFlags,
    /// Comma-separated target ball counts
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<usize>>,
    /// Comma-separated dataset seeds
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    queries: Option<usize>,
    #[command(flatten)]
    out: OutputFlags,
}

#[derive(Args, Debug)]
struct BlobArgs {
    #[arg(long, default_value_t = 100)]
    n_per_class: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Distance between neighbouring class centers, in units of spread
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, env = "GBQKNN_SEED", default_value_t = 0)]
    seed: u64,
    /// Quantize to this many bits and write a point file instead
    #[arg(long)]
    bits: Option<u32>,
    #[command(flatten)]
    out: OutputFlags,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    /// Reader went away; not worth reporting.
    ClosedPipe,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidThreshold(_)
            | Error::InvalidBits(_)
            | Error::ZeroShots
            | Error::InvalidParameter(_) => CliError::Usage(e.to_string()),
            Error::Io(io) => io.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::BrokenPipe {
            CliError::ClosedPipe
        } else {
            CliError::Data(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) | Err(CliError::ClosedPipe) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::GenBalls(a) => gen_balls(a),
        Command::Build(a) => build(a),
        Command::Search(a) => search(a),
        Command::Classify(a) => classify(a),
        Command::Bench(a) => bench(a),
        Command::MakeBlobs(a) => blobs(a),
    }
}

impl FitFlags {
    fn resolve(&self) -> CliResult<FitConfig> {
        let base = match &self.config {
            Some(path) => read_json(path)?,
            None => FitConfig::default(),
        };
        self.apply(base)
    }

    fn apply(&self, mut config: FitConfig) -> CliResult<FitConfig> {
        if let Some(t) = self.purity_threshold {
            config.purity_threshold = t;
        }
        if let Some(m) = self.max_neighbors {
            config.max_neighbors = m;
        }
        if let Some(k) = self.k {
            config.k = k;
        }
        if let Some(b) = self.bits {
            config.bits = b;
        }
        if let Some(q) = self.cmp_bits {
            config.cmp_bits = q;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        config.full_layer_candidates |= self.full_layer_candidates;
        config.backend = backend(self.backend, self.shots, config.backend)?;
        config.validate()?;
        Ok(config)
    }
}

fn backend(
    kind: Option<BackendKind>,
    shots: Option<u64>,
    current: SimilarityBackend,
) -> CliResult<SimilarityBackend> {
    let kind = kind.unwrap_or(match current {
        SimilarityBackend::Exact => BackendKind::Exact,
        SimilarityBackend::Sampled { .. } => BackendKind::Sampled,
    });
    match (kind, shots) {
        (BackendKind::Exact, Some(_)) => Err(CliError::Usage(
            "--shots only applies to the sampled backend".into(),
        )),
        (BackendKind::Exact, None) => Ok(SimilarityBackend::Exact),
        (BackendKind::Sampled, Some(shots)) => Ok(SimilarityBackend::Sampled { shots }),
        (BackendKind::Sampled, None) => Ok(match current {
            SimilarityBackend::Sampled { shots } => SimilarityBackend::Sampled { shots },
            SimilarityBackend::Exact => SimilarityBackend::Sampled {
                shots: DEFAULT_SHOTS,
            },
        }),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: bad config: {e}", path.display())))
}

/// Input rows after quantization, with what is needed to reproduce it.
struct Loaded {
    points: Vec<LabeledPoint>,
    feature_names: Vec<String>,
    label_names: Vec<String>,
    quantizer: Quantizer,
    clamped: usize,
}

enum Input {
    Raw(RawDataset),
    Points(PointsHeader, Vec<LabeledPoint>),
}

fn is_points_file(path: &Path) -> io::Result<bool> {
    let mut first = [0u8; 1];
    let mut file = File::open(path)?;
    loop {
        if file.read(&mut first)? == 0 {
            return Ok(false);
        }
        if !first[0].is_ascii_whitespace() {
            return Ok(first[0] == b'{');
        }
    }
}

fn read_input(flags: &InputFlags) -> CliResult<Input> {
    let path = &flags.input;
    let source = path.display().to_string();
    if is_points_file(path).map_err(|e| CliError::Data(format!("{source}: {e}")))? {
        let reader = BufReader::new(File::open(path)?);
        let (header, points) = read_points(reader, &source)?;
        return Ok(Input::Points(header, points));
    }
    let spec = DatasetSpec {
        label_column: Column::from(flags.label_column.as_str()),
        feature_columns: None,
        has_header: !flags.no_header,
    };
    Ok(Input::Raw(load_csv(path, &spec)?))
}

fn feature_names(header: &PointsHeader) -> Vec<String> {
    let mut names = header.columns.clone();
    names.pop();
    names
}

/// Quantizes training input, fitting bounds for CSV data.
fn load_training(flags: &InputFlags, bits: u32, explicit_bits: Option<u32>) -> CliResult<Loaded> {
    match read_input(flags)? {
        Input::Points(header, points) => {
            if let Some(b) = explicit_bits.filter(|&b| b != header.bits) {
                return Err(CliError::Usage(format!(
                    "--bits {b} conflicts with the point file's {} bits",
                    header.bits
                )));
            }
            Ok(Loaded {
                feature_names: feature_names(&header),
                label_names: header.label_names.clone(),
                quantizer: Quantizer::explicit(header.bits, header.bounds.clone())?,
                points,
                clamped: 0,
            })
        }
        Input::Raw(raw) => {
            let q = quantize_dataset(&raw.records, bits, Bounds::Auto)?;
            Ok(Loaded {
                points: q.points,
                feature_names: raw.feature_names,
                label_names: raw.label_names,
                quantizer: q.quantizer,
                clamped: q.clamped,
            })
        }
    }
}

/// Quantizes query input with the model's stored bounds.
fn load_queries(flags: &InputFlags, model: &ClassifierModel<f64>) -> CliResult<Loaded> {
    let quantizer = model
        .metadata
        .quantizer
        .clone()
        .ok_or_else(|| CliError::Data("model has no stored quantizer".into()))?;
    match read_input(flags)? {
        Input::Points(header, points) => {
            if header.bits != quantizer.bits {
                return Err(CliError::Data(format!(
                    "point file uses {} bits, model uses {}",
                    header.bits, quantizer.bits
                )));
            }
            Ok(Loaded {
                feature_names: feature_names(&header),
                label_names: header.label_names,
                quantizer,
                points,
                clamped: 0,
            })
        }
        Input::Raw(raw) => {
            let mut points = Vec::with_capacity(raw.records.len());
            let mut clamped = 0;
            for r in &raw.records {
                let (levels, c) = quantizer.quantize(&r.features)?;
                clamped += c;
                points.push(LabeledPoint::new(levels, r.label));
            }
            if clamped > 0 {
                eprintln!(
                    "warning: {clamped} feature values outside the training bounds were clamped"
                );
            }
            Ok(Loaded {
                points,
                feature_names: raw.feature_names,
                label_names: raw.label_names,
                quantizer,
                clamped,
            })
        }
    }
}

fn open_output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(out: &OutputFlags, value: &T) -> CliResult<()> {
    let mut w = open_output(out.output.as_deref())?;
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_rows(out: &OutputFlags, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = open_output(out.output.as_deref())?;
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn label_text(names: &[String], label: Label) -> String {
    names
        .get(label as usize)
        .cloned()
        .unwrap_or_else(|| label.to_string())
}

#[derive(Serialize)]
struct BallRow {
    id: usize,
    label: String,
    purity: f64,
    member_count: usize,
    radius: f64,
    center: Vec<f64>,
}

#[derive(Serialize)]
struct BallReport {
    points: usize,
    splits: usize,
    purity_threshold: f64,
    balls: Vec<BallRow>,
}

fn gen_balls(args: GenBallsArgs) -> CliResult<()> {
    let config = args.fit.resolve()?;
    let loaded = load_training(&args.input, config.bits, args.fit.bits)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let generation =
        generate_with_stats::<f64, _>(&loaded.points, config.purity_threshold, &mut rng)?;
    let rows: Vec<BallRow> = generation
        .balls
        .iter()
        .enumerate()
        .map(|(id, b)| BallRow {
            id,
            label: label_text(&loaded.label_names, b.label),
            purity: b.purity,
            member_count: b.member_count,
            radius: b.radius,
            center: b.center.clone(),
        })
        .collect();
    match args.out.format {
        Format::Json => write_json(
            &args.out,
            &BallReport {
                points: loaded.points.len(),
                splits: generation.splits,
                purity_threshold: config.purity_threshold,
                balls: rows,
            },
        ),
        Format::Csv => {
            let mut header: Vec<String> = ["id", "label", "purity", "member_count", "radius"]
                .map(String::from)
                .to_vec();
            header.extend((0..loaded.feature_names.len()).map(|j| format!("center_{j}")));
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let mut row = vec![
                        r.id.to_string(),
                        r.label.clone(),
                        r.purity.to_string(),
                        r.member_count.to_string(),
                        r.radius.to_string(),
                    ];
                    row.extend(r.center.iter().map(f64::to_string));
                    row
                })
                .collect();
            write_rows(&args.out, &header, &table)
        }
    }
}

#[derive(Serialize)]
struct BuildSummary<'a> {
    model: String,
    points: usize,
    balls: usize,
    splits: usize,
    layers: usize,
    build_similarity_evals: u64,
    build_comparisons: u64,
    clamped: usize,
    config: &'a FitConfig,
}

fn build(args: BuildArgs) -> CliResult<()> {
    let mut config = args.fit.resolve()?;
    let loaded = load_training(&args.input, config.bits, args.fit.bits)?;
    config.bits = loaded.quantizer.bits;
    let mut model = ClassifierModel::<f64>::fit(&loaded.points, &config)?;
    model.metadata = ModelMetadata {
        feature_names: loaded.feature_names,
        label_names: loaded.label_names,
        quantizer: Some(loaded.quantizer),
    };
    std::fs::write(&args.output, model.to_bytes())?;
    let summary = BuildSummary {
        model: args.output.display().to_string(),
        points: model.stats.n_points,
        balls: model.stats.n_balls,
        splits: model.stats.splits,
        layers: model.index.layers().len(),
        build_similarity_evals: model.stats.build_cost.similarity_evals,
        build_comparisons: model.stats.build_cost.comparisons,
        clamped: loaded.clamped,
        config: &model.config,
    };
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &summary).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn load_model(args: &QueryArgs) -> CliResult<ClassifierModel<f64>> {
    let bytes = std::fs::read(&args.index)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.index.display())))?;
    let model = ClassifierModel::<f64>::from_bytes(&bytes)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.index.display())))?;
    if args.backend.is_none() && args.shots.is_none() {
        return Ok(model);
    }
    let chosen = backend(args.backend, args.shots, model.config.backend)?;
    Ok(model.with_backend(chosen)?)
}

#[derive(Serialize)]
struct Neighbor {
    ball: usize,
    label: String,
    dissimilarity: f64,
}

#[derive(Serialize)]
struct SearchRow {
    query: usize,
    neighbors: Vec<Neighbor>,
    similarity_evals: u64,
    comparisons: u64,
    qram_depth: u64,
}

fn search(args: QueryArgs) -> CliResult<()> {
    let model = load_model(&args)?;
    let k = args.k.unwrap_or(model.config.k);
    let queries = load_queries(&args.input, &model)?;
    let names = &model.metadata.label_names;
    let mut rows = Vec::with_capacity(queries.points.len());
    for (i, p) in queries.points.iter().enumerate() {
        let outcome = model.neighbors_k(&p.features, k)?;
        rows.push(SearchRow {
            query: i,
            neighbors: outcome
                .queue
                .entries()
                .iter()
                .map(|e| Neighbor {
                    ball: e.id,
                    label: label_text(names, model.index.balls()[e.id].label),
                    dissimilarity: e.dissimilarity,
                })
                .collect(),
            similarity_evals: outcome.cost.similarity_evals,
            comparisons: outcome.cost.comparisons,
            qram_depth: outcome.cost.qram_depth,
        });
    }
    match args.out.format {
        Format::Json => write_json(&args.out, &rows),
        Format::Csv => {
            let header = [
                "query",
                "rank",
                "ball",
                "label",
                "dissimilarity",
                "similarity_evals",
                "comparisons",
            ]
            .map(String::from);
            let mut table = Vec::new();
            for r in &rows {
                for (rank, n) in r.neighbors.iter().enumerate() {
                    table.push(vec![
                        r.query.to_string(),
                        rank.to_string(),
                        n.ball.to_string(),
                        n.label.clone(),
                        n.dissimilarity.to_string(),
                        r.similarity_evals.to_string(),
                        r.comparisons.to_string(),
                    ]);
                }
            }
            write_rows(&args.out, &header, &table)
        }
    }
}

#[derive(Serialize)]
struct Prediction {
    query: usize,
    predicted: String,
    expected: String,
}

#[derive(Serialize)]
struct ClassifyReport {
    queries: usize,
    accuracy: f64,
    clamped: usize,
    predictions: Vec<Prediction>,
}

fn classify(args: QueryArgs) -> CliResult<()> {
    let mut model = load_model(&args)?;
    if let Some(k) = args.k {
        if k == 0 {
            return Err(CliError::Usage("k must be at least 1".into()));
        }
        model.config.k = k;
    }
    let queries = load_queries(&args.input, &model)?;
    let features: Vec<Vec<u32>> = queries.points.iter().map(|p| p.features.clone()).collect();
    let predicted = model.predict_batch(&features)?;
    let model_names = &model.metadata.label_names;
    let predictions: Vec<Prediction> = predicted
        .iter()
        .zip(&queries.points)
        .enumerate()
        .map(|(i, (&l, p))| Prediction {
            query: i,
            predicted: label_text(model_names, l),
            expected: label_text(&queries.label_names, p.label),
        })
        .collect();
    let correct = predictions
        .iter()
        .filter(|p| p.predicted == p.expected)
        .count();
    let accuracy = if predictions.is_empty() {
        0.0
    } else {
        correct as f64 / predictions.len() as f64
    };
    match args.out.format {
        Format::Json => write_json(
            &args.out,
            &ClassifyReport {
                queries: predictions.len(),
                accuracy,
                clamped: queries.clamped,
                predictions,
            },
        ),
        Format::Csv => {
            eprintln!("accuracy {accuracy:.4} over {} queries", predictions.len());
            let header = ["query", "predicted", "expected"].map(String::from);
            let table: Vec<Vec<String>> = predictions
                .iter()
                .map(|p| vec![p.query.to_string(), p.predicted.clone(), p.expected.clone()])
                .collect();
            write_rows(&args.out, &header, &table)
        }
    }
}

fn bench(args: BenchArgs) -> CliResult<()> {
    let mut grid: ScalingGrid = match &args.fit.config {
        Some(path) => read_json(path)?,
        None => ScalingGrid::default(),
    };
    grid.fit = args.fit.apply(grid.fit)?;
    if let Some(t) = args.targets {
        grid.target_balls = t;
    }
    if let Some(s) = args.seeds {
        grid.seeds = s;
    }
    if let Some(q) = args.queries {
        grid.queries = q;
    }
    let report = run_scaling(&grid)?;
    let w = open_output(args.out.output.as_deref())?;
    match args.out.format {
        Format::Json => report.write_json(w)?,
        Format::Csv => report.write_csv(w)?,
    }
    Ok(())
}

fn blobs(args: BlobArgs) -> CliResult<()> {
    let data = make_blobs(&BlobSpec {
        n_per_class: args.n_per_class,
        classes: args.classes,
        dim: args.dim,
        separation: args.separation,
        spread: args.spread,
        seed: args.seed,
    })?;
    if let Some(bits) = args.bits {
        if args.out.format == Format::Json {
            return Err(CliError::Usage(
                "--bits writes a point file; drop --format json".into(),
            ));
        }
        let q = quantize_dataset(&data.records, bits, Bounds::Auto)?;
        let header = PointsHeader::new(&data.feature_names, &q.quantizer, &data.label_names);
        let mut w = open_output(args.out.output.as_deref())?;
        write_points(&mut w, &header, &q.points)?;
        w.flush()?;
        return Ok(());
    }
    match args.out.format {
        Format::Json => write_json(&args.out, &data),
        Format::Csv => {
            let mut w = open_output(args.out.output.as_deref())?;
            write_csv(&mut w, &data)?;
            w.flush()?;
            Ok(())
        }
    }
}
