use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Region hierarchies and higher-order movement patterns from check-in data.
#[derive(Debug, Parser)]
#[command(name = "hoflow", version, about)]
struct Cli {
    /// TOML run configuration; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse check-ins and regions, estimate stays, and write a dataset.
    Ingest(IngestArgs),
    /// Build the region hierarchy for a window and print it as JSON.
    Aggregate(AggregateArgs),
    /// Extract global higher-order patterns as JSON.
    Extract(ExtractArgs),
    /// Cluster statistics over a grid of alpha and beta values.
    SweepParams(SweepParamsArgs),
    /// Mean pattern flow per order for a set of windows.
    SweepOrder(SweepOrderArgs),
    /// Serve the HTTP API over an ingested dataset.
    Serve(ServeArgs),
    /// Write a synthetic dataset.
    GenFixture(GenFixtureArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Check-in CSV (user_id,poi_id,category,lat,lon,timestamp).
    #[arg(long)]
    checkins: Option<PathBuf>,
    /// Region polygons as a GeoJSON FeatureCollection.
    #[arg(long)]
    regions: Option<PathBuf>,
    /// Holiday dates, one YYYY-MM-DD per line.
    #[arg(long)]
    holidays: Option<PathBuf>,
    /// JSON array of category names replacing the default taxonomy.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Output directory for the dataset and report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    dataset_id: String,
    #[arg(long)]
    split_gap_seconds: Option<i64>,
    #[arg(long)]
    speed_kmh: Option<f64>,
    #[arg(long)]
    max_reject_ratio: Option<f64>,
}

#[derive(Debug, Args, Clone)]
struct DataArgs {
    /// Directory written by `ingest`.
    #[arg(long, env = "HOFLOW_DATA_DIR")]
    data: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
struct AggregationArgs {
    /// Alpha per level, comma separated; the last value repeats.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Member-count range, e.g. `3-9`.
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, value_enum)]
    weighting: Option<WeightingArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightingArg {
    Auto,
    PoiCount,
    AccessFrequency,
}

#[derive(Debug, Args, Clone)]
struct QueryArgs {
    /// Day bins `start-end`, half-open; whole day when omitted.
    #[arg(long)]
    window: Option<String>,
    /// weekday, weekend, holiday or all.
    #[arg(long, default_value = "all")]
    day_type: String,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    agg: AggregationArgs,
    #[command(flatten)]
    query: QueryArgs,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
struct HonArgs {
    #[arg(long)]
    min_support: Option<u64>,
    #[arg(long)]
    max_order: Option<usize>,
    #[arg(long)]
    max_path_len: Option<usize>,
    #[arg(long)]
    bin_width_minutes: Option<u16>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    agg: AggregationArgs,
    #[command(flatten)]
    hon: HonArgs,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long, default_value_t = 1)]
    level: usize,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct SweepParamsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Alpha grid; `inf` disables merging.
    #[arg(long, value_delimiter = ',', default_value = "1.9,2.2,2.5")]
    alphas: Vec<f64>,
    /// Beta grid.
    #[arg(long, value_delimiter = ',', default_value = "3-5,3-7,3-9,5-9")]
    betas: Vec<String>,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long, value_enum)]
    weighting: Option<WeightingArg>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepOrderArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    agg: AggregationArgs,
    #[command(flatten)]
    hon: HonArgs,
    #[arg(long, value_delimiter = ',', default_value = "7-10,12-14,18-20")]
    windows: Vec<String>,
    #[arg(long, default_value = "all")]
    day_type: String,
    #[arg(long, default_value_t = 1)]
    level: usize,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, env = "HOFLOW_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FixtureKind {
    /// Grid city with commuting, weekend and holiday behavior.
    Demo,
    /// Two planted second-order families through a shared region.
    Planted,
    /// Dense second-order and sparse fourth-order families.
    Orders,
    /// Demo city sized by `--records`.
    Scale,
}

#[derive(Debug, Args)]
struct GenFixtureArgs {
    #[arg(value_enum)]
    kind: FixtureKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    users: usize,
    #[arg(long, default_value_t = 14)]
    days: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Record count for the scale fixture.
    #[arg(long, default_value_t = 1_000_000)]
    records: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| commands::run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {:#}", e.source);
            ExitCode::from(e.kind.code())
        }
        Err(_) => ExitCode::from(2),
    }
}
