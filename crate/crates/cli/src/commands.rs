use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use hoflow_core::aggregate::{config_hash, AggregationConfig, WeightingPolicy};
use hoflow_core::export::{export_hierarchy, export_patterns};
use hoflow_core::fixture::{
    demo_regions, order_decline_families, planted_families, regions_geojson, sequence_city,
    write_demo_checkins, DemoParams, DEMO_HOLIDAYS,
};
use hoflow_core::hon::flow_by_order_stats;
use hoflow_core::ingest::{CategoryTaxonomy, DayType};
use hoflow_core::time::TimeWindow;
use hoflow_core::{ingest_dataset, Dataset, IngestInputs, RunConfig, Workspace};
use hoflow_service::{AppState, ResponseCache, Snapshot, CACHE_DIR, DATASET_FILE};
use serde::Serialize;

use crate::{
    AggregationArgs, Cli, Command, DataArgs, FixtureKind, Format, GenFixtureArgs, HonArgs,
    IngestArgs, QueryArgs, WeightingArg,
};

pub const REPORT_FILE: &str = "ingest_report.json";

#[derive(Debug, Clone, Copy)]
pub enum Kind {
    User,
    Internal,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::User => 1,
            Kind::Internal => 2,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub source: anyhow::Error,
}

type Result<T> = std::result::Result<T, CliError>;

trait Classify<T> {
    fn user(self, what: impl FnOnce() -> String) -> Result<T>;
    fn internal(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn user(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| CliError {
            kind: Kind::User,
            source: e.into().context(what()),
        })
    }

    fn internal(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| CliError {
            kind: Kind::Internal,
            source: e.into().context(what()),
        })
    }
}

fn user_error(msg: impl Into<String>) -> CliError {
    CliError {
        kind: Kind::User,
        source: anyhow!(msg.into()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .user(|| format!("reading config {}", path.display()))?;
            RunConfig::from_toml(&text).user(|| format!("config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Ingest(a) => ingest(a, config),
        Command::Aggregate(a) => {
            apply_aggregation(&mut config, &a.agg)?;
            let ws = workspace(&a.data, config)?;
            aggregate(&ws, &a.query, a.out.as_deref())
        }
        Command::Extract(a) => {
            apply_aggregation(&mut config, &a.agg)?;
            apply_hon(&mut config, &a.hon)?;
            let ws = workspace(&a.data, config)?;
            extract(&ws, &a.query, a.level, a.top_n, a.out.as_deref())
        }
        Command::SweepParams(a) => {
            if let Some(w) = a.weighting {
                config.geo.weighting = weighting(w);
            }
            let ws = workspace(&a.data, config)?;
            sweep_params(
                &ws,
                &a.alphas,
                &a.betas,
                &a.query,
                a.format,
                a.out.as_deref(),
            )
        }
        Command::SweepOrder(a) => {
            apply_aggregation(&mut config, &a.agg)?;
            apply_hon(&mut config, &a.hon)?;
            let ws = workspace(&a.data, config)?;
            sweep_order(
                &ws,
                &a.windows,
                &a.day_type,
                a.level,
                a.format,
                a.out.as_deref(),
            )
        }
        Command::Serve(a) => serve(&a.data, &a.host, a.port, config),
        Command::GenFixture(a) => gen_fixture(&a),
    }
}

fn weighting(w: WeightingArg) -> WeightingPolicy {
    match w {
        WeightingArg::Auto => WeightingPolicy::Auto,
        WeightingArg::PoiCount => WeightingPolicy::PoiCount,
        WeightingArg::AccessFrequency => WeightingPolicy::AccessFrequency,
    }
}

fn parse_beta(text: &str) -> Result<(usize, usize)> {
    let parsed = text
        .split_once('-')
        .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
    parsed.ok_or_else(|| user_error(format!("invalid beta range `{text}`, expected MIN-MAX")))
}

fn apply_aggregation(config: &mut RunConfig, a: &AggregationArgs) -> Result<()> {
    if let Some(alpha) = &a.alpha {
        config.aggregate.alpha = alpha.clone();
    }
    if let Some(beta) = &a.beta {
        let (lo, hi) = parse_beta(beta)?;
        config.aggregate.beta_min = lo;
        config.aggregate.beta_max = hi;
    }
    if let Some(l) = a.levels {
        config.aggregate.levels = l;
    }
    if let Some(w) = a.weighting {
        config.geo.weighting = weighting(w);
    }
    config.validate().user(|| "invalid configuration".into())
}

fn apply_hon(config: &mut RunConfig, a: &HonArgs) -> Result<()> {
    if let Some(v) = a.min_support {
        config.hon.min_support = v;
    }
    if let Some(v) = a.max_order {
        config.hon.max_order = v;
    }
    if let Some(v) = a.max_path_len {
        config.hon.max_path_len = v;
    }
    if let Some(v) = a.bin_width_minutes {
        config.hon.bin_width_minutes = v;
    }
    config.validate().user(|| "invalid configuration".into())
}

fn data_dir(args: &DataArgs, config: &RunConfig) -> Result<PathBuf> {
    args.data
        .clone()
        .or_else(|| config.paths.data_dir.clone())
        .ok_or_else(|| user_error("no data directory; pass --data or set HOFLOW_DATA_DIR"))
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(DATASET_FILE);
    let file = File::open(&path).user(|| {
        format!(
            "no dataset at {}; run `hoflow ingest --out {}` first",
            path.display(),
            dir.display()
        )
    })?;
    Dataset::from_json(BufReader::new(file)).user(|| format!("reading {}", path.display()))
}

fn workspace(args: &DataArgs, config: RunConfig) -> Result<Workspace> {
    let dir = data_dir(args, &config)?;
    Ok(Workspace::new(load_dataset(&dir)?, config))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .user(|| format!("opening {}", path.display()))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, bytes).user(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .internal(|| "writing to stdout".into())
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).internal(|| "serializing output".into())?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn ingest(a: IngestArgs, config: RunConfig) -> Result<()> {
    let mut config = config;
    if let Some(v) = a.split_gap_seconds {
        config.ingest.split_gap_seconds = v;
    }
    if let Some(v) = a.speed_kmh {
        config.ingest.speed_kmh = v;
    }
    if let Some(v) = a.max_reject_ratio {
        config.ingest.max_reject_ratio = v;
    }
    config.validate().user(|| "invalid configuration".into())?;
    let paths = &config.paths;
    let need = |flag: &Option<PathBuf>, cfg: &Option<PathBuf>, name: &str| {
        flag.clone()
            .or_else(|| cfg.clone())
            .ok_or_else(|| user_error(format!("missing --{name}")))
    };
    let checkins = need(&a.checkins, &paths.checkins, "checkins")?;
    let regions = need(&a.regions, &paths.regions, "regions")?;
    let out = need(&a.out, &paths.data_dir, "out")?;
    let holidays = a.holidays.clone().or_else(|| paths.holidays.clone());
    let taxonomy = match a.taxonomy.clone().or_else(|| paths.taxonomy.clone()) {
        Some(p) => {
            CategoryTaxonomy::from_json(open(&p)?).user(|| format!("taxonomy {}", p.display()))?
        }
        None => CategoryTaxonomy::default(),
    };
    let calendar = holidays.as_deref().map(open).transpose()?;
    let inputs = IngestInputs {
        checkins: open(&checkins)?,
        regions: open(&regions)?,
        calendar,
        taxonomy,
    };
    let dataset = ingest_dataset(&a.dataset_id, inputs, &config).user(|| "ingest failed".into())?;
    for w in &dataset.report.warnings {
        log::warn!("{w}");
    }

    std::fs::create_dir_all(&out).user(|| format!("creating {}", out.display()))?;
    let path = out.join(DATASET_FILE);
    let file = File::create(&path).user(|| format!("writing {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &dataset).internal(|| "serializing dataset".into())?;
    w.flush().user(|| format!("writing {}", path.display()))?;
    let report = pretty(&dataset.report)?;
    let report_path = out.join(REPORT_FILE);
    std::fs::write(&report_path, &report).user(|| format!("writing {}", report_path.display()))?;
    emit(None, &report)
}

fn parse_day(text: &str) -> Result<Option<DayType>> {
    match text {
        "all" => Ok(None),
        s => s
            .parse()
            .map(Some)
            .map_err(|_| user_error(format!("invalid day type `{s}`"))),
    }
}

fn parse_window(ws: &Workspace, text: Option<&str>) -> Result<TimeWindow> {
    let width = ws.config.hon.bin_width_minutes;
    match text {
        None => Ok(TimeWindow::whole_day(width)),
        Some(s) => TimeWindow::parse(s, width).user(|| format!("window `{s}`")),
    }
}

fn aggregate(ws: &Workspace, q: &QueryArgs, out: Option<&Path>) -> Result<()> {
    let window = parse_window(ws, q.window.as_deref())?;
    let day = parse_day(&q.day_type)?;
    let h = ws.hierarchy(&window, day);
    let cfg = &ws.config.aggregate;
    let doc = export_hierarchy(
        &ws.dataset.dataset_id,
        &config_hash(cfg, ws.config.geo.weighting),
        |l| cfg.alpha_at(l),
        &h,
        &ws.profiles,
        &ws.dataset.taxonomy,
        &window,
        day,
    );
    emit(out, &pretty(&doc)?)
}

fn extract(
    ws: &Workspace,
    q: &QueryArgs,
    level: usize,
    top_n: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let window = parse_window(ws, q.window.as_deref())?;
    let day = parse_day(&q.day_type)?;
    let top_n = top_n.unwrap_or(ws.config.hon.top_n);
    let patterns = ws
        .global_patterns(level, &window, day, top_n)
        .user(|| "extracting patterns".into())?;
    let doc = export_patterns(&ws.dataset.dataset_id, level, &window, day, &patterns);
    emit(out, &pretty(&doc)?)
}

#[derive(Debug, Serialize)]
struct ParamRow {
    alpha: f64,
    beta_min: usize,
    beta_max: usize,
    clusters_before_sweep: usize,
    clusters: usize,
    mean_size: f64,
    size_variance: f64,
}

fn sweep_params(
    ws: &Workspace,
    alphas: &[f64],
    betas: &[String],
    q: &QueryArgs,
    format: Format,
    out: Option<&Path>,
) -> Result<()> {
    let window = parse_window(ws, q.window.as_deref())?;
    let day = parse_day(&q.day_type)?;
    let mut grid = Vec::new();
    for &alpha in alphas {
        for b in betas {
            let (lo, hi) = parse_beta(b)?;
            let cfg = AggregationConfig {
                alpha: vec![alpha],
                beta_min: lo,
                beta_max: hi,
                levels: 1,
            };
            cfg.validate().user(|| format!("alpha {alpha}, beta {b}"))?;
            grid.push(cfg);
        }
    }
    let rows: Vec<ParamRow> = std::thread::scope(|s| {
        let handles: Vec<_> = grid
            .iter()
            .map(|cfg| s.spawn(move || param_row(ws, cfg, &window, day)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker"))
            .collect()
    });
    match format {
        Format::Json => emit(out, &pretty(&rows)?),
        Format::Csv => emit(out, &csv_bytes(&rows)?),
    }
}

fn param_row(
    ws: &Workspace,
    cfg: &AggregationConfig,
    window: &TimeWindow,
    day: Option<DayType>,
) -> ParamRow {
    let h = ws.hierarchy_with(cfg, window, day);
    let level = &h.levels[0];
    let sizes: Vec<f64> = level
        .clusters
        .iter()
        .map(|c| c.members.len() as f64)
        .collect();
    let n = sizes.len().max(1) as f64;
    let mean = sizes.iter().sum::<f64>() / n;
    let var = sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    ParamRow {
        alpha: cfg.alpha[0],
        beta_min: cfg.beta_min,
        beta_max: cfg.beta_max,
        clusters_before_sweep: level.clusters_before_sweep,
        clusters: level.clusters.len(),
        mean_size: mean,
        size_variance: var,
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).internal(|| "writing CSV".into())?;
    }
    w.into_inner().internal(|| "writing CSV".into())
}

#[derive(Debug, Serialize)]
struct OrderRow {
    window: String,
    order: usize,
    patterns: usize,
    mean_flow: f64,
}

#[derive(Debug, Serialize)]
struct OrderSection {
    window: String,
    rows: Vec<OrderRow>,
}

fn sweep_order(
    ws: &Workspace,
    windows: &[String],
    day_type: &str,
    level: usize,
    format: Format,
    out: Option<&Path>,
) -> Result<()> {
    let day = parse_day(day_type)?;
    let windows: Vec<TimeWindow> = windows
        .iter()
        .map(|w| parse_window(ws, Some(w)))
        .collect::<Result<_>>()?;
    let hon = &ws.config.hon;
    let sections: Vec<Result<OrderSection>> = std::thread::scope(|s| {
        let handles: Vec<_> = windows
            .iter()
            .map(|w| {
                s.spawn(move || {
                    let h = ws.hierarchy(w, day);
                    let lvl = ws.level(&h, level).user(|| "sweep-order".into())?;
                    let corpus = ws.corpus(lvl, day);
                    let rows = flow_by_order_stats(&corpus, &[*w], hon.max_order, hon.min_support)
                        .into_iter()
                        .map(|r| OrderRow {
                            window: r.window.to_string(),
                            order: r.order,
                            patterns: r.patterns,
                            mean_flow: r.mean_flow,
                        })
                        .collect();
                    Ok(OrderSection {
                        window: w.to_string(),
                        rows,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker"))
            .collect()
    });
    let sections: Vec<OrderSection> = sections.into_iter().collect::<Result<_>>()?;
    match format {
        Format::Json => emit(out, &pretty(&sections)?),
        Format::Csv => {
            let rows: Vec<&OrderRow> = sections.iter().flat_map(|s| &s.rows).collect();
            let mut bytes = csv_bytes(&rows)?;
            if rows.is_empty() {
                bytes = b"window,order,patterns,mean_flow\n".to_vec();
            }
            emit(out, &bytes)
        }
    }
}

fn serve(data: &DataArgs, host: &str, port: u16, config: RunConfig) -> Result<()> {
    let dir = data_dir(data, &config)?;
    let snapshot = Snapshot::load(&dir, config).user(|| "loading snapshot".into())?;
    let state = AppState::new(snapshot, ResponseCache::persistent(dir.join(CACHE_DIR)));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .internal(|| "starting runtime".into())?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .user(|| format!("binding {host}:{port}"))?;
        let addr = listener
            .local_addr()
            .internal(|| "reading bound address".into())?;
        eprintln!("listening on http://{addr}");
        hoflow_service::serve(listener, state, shutdown_signal())
            .await
            .internal(|| "server failed".into())?;
        eprintln!("shut down");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Every region its own cluster, so pattern ids equal region ids.
const FLAT_CONFIG: &str = "[aggregate]\nalpha = [1.9]\nbeta_min = 1\nbeta_max = 1\nlevels = 1\n";

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).user(|| format!("writing {}", path.display()))
}

fn gen_fixture(a: &GenFixtureArgs) -> Result<()> {
    let dir = &a.out;
    std::fs::create_dir_all(dir).user(|| format!("creating {}", dir.display()))?;
    match a.kind {
        FixtureKind::Demo | FixtureKind::Scale => {
            let params = match a.kind {
                FixtureKind::Demo => DemoParams {
                    users: a.users,
                    days: a.days,
                    seed: a.seed,
                    max_records: None,
                },
                _ => DemoParams {
                    users: a.users.max(1),
                    days: 0,
                    seed: a.seed,
                    max_records: Some(a.records),
                },
            };
            let path = dir.join("checkins.csv");
            let file = File::create(&path).user(|| format!("writing {}", path.display()))?;
            let mut w = BufWriter::new(file);
            let n = write_demo_checkins(&mut w, &params)
                .user(|| format!("writing {}", path.display()))?;
            w.flush().user(|| format!("writing {}", path.display()))?;
            write_file(
                dir,
                "regions.geojson",
                regions_geojson(&demo_regions()).as_bytes(),
            )?;
            write_file(dir, "holidays.txt", DEMO_HOLIDAYS.as_bytes())?;
            eprintln!("wrote {n} check-ins to {}", path.display());
        }
        FixtureKind::Planted | FixtureKind::Orders => {
            let families = match a.kind {
                FixtureKind::Planted => planted_families(50, a.seed),
                _ => order_decline_families(200, 20),
            };
            let start = chrono::NaiveTime::from_hms_opt(8, 0, 0).expect("valid time");
            let city = sequence_city(&families, start, 30);
            write_file(dir, "checkins.csv", city.checkins_csv.as_bytes())?;
            write_file(
                dir,
                "regions.geojson",
                regions_geojson(&city.regions).as_bytes(),
            )?;
            write_file(dir, "config.toml", FLAT_CONFIG.as_bytes())?;
        }
    }
    Ok(())
}
