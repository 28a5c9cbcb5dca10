//! `clouddet`: ingest metric CSVs, run detection, serve the API, and run the
//! accuracy and scalability benchmarks.

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use clouddet_core::analytics::rank_nodes;
use clouddet_core::eval::{
    run_accuracy_bench, run_scalability_bench, synth_generate, AccuracyConfig, SynthSpec, DEFAULT_SCALE_LENGTHS,
};
use clouddet_core::ingest::{query, read_csv, read_labels, Dataset, SchemaMap, Selector, Store};
use clouddet_core::scoring::{score_all, score_series, Aggregator, DetectorConfig, SpikeMode};
use clouddet_core::{Granularity, MetricSeries, ScoreRecord};
use clouddet_service::AppState;

const DEFAULT_DATA_DIR: &str = "clouddet-data";

#[derive(Parser)]
#[command(name = "clouddet", version, about = "Pattern-based anomaly detection for compute-node metrics")]
struct Cli {
    /// Snapshot directory for ingested datasets.
    #[arg(long, global = true, env = "CLOUDDET_DATA_DIR", default_value = DEFAULT_DATA_DIR)]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a metrics CSV and store it as a snapshot.
    Ingest {
        csv: PathBuf,
        /// JSON column mapping.
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Dataset id (defaults to the schema's id or the file stem).
        #[arg(long)]
        id: Option<String>,
    },
    /// Score every (node, metric) series of an ingested dataset.
    Detect {
        #[arg(long)]
        dataset: String,
        #[command(flatten)]
        detector: DetectorArgs,
        /// Scoring granularity (m, h or d); defaults to the native one.
        #[arg(long)]
        granularity: Option<Granularity>,
        /// Nodes listed in the ranking table.
        #[arg(long, default_value_t = 20)]
        top: usize,
        /// Write every score record to this CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API over every stored dataset.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
    },
    /// Accuracy and scalability benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Generate a labelled synthetic series.
    Synth {
        /// JSON generator spec; unspecified fields take defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Data CSV destination.
        #[arg(long)]
        out: PathBuf,
        /// Label CSV destination.
        #[arg(long)]
        labels: PathBuf,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// ROC/AUC sweep over history lengths and flagging thresholds.
    Accuracy {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Comma-separated history lengths.
        #[arg(long = "L-grid", value_delimiter = ',')]
        l_grid: Option<Vec<usize>>,
        /// Comma-separated flagged fractions.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long, default_value = "avg")]
        agg: Aggregator,
        #[arg(long, default_value = "hinge")]
        spike: SpikeMode,
        /// ROC points as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detection runtime on growing prefixes of one series.
    Scale {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Node id of the series to time (defaults to the first).
        #[arg(long)]
        node: Option<String>,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[command(flatten)]
        detector: DetectorArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DetectorArgs {
    /// History length L.
    #[arg(long = "L", default_value_t = DetectorConfig::default().history)]
    history: usize,
    /// min, max, avg or avg:w1,w2,w3.
    #[arg(long, default_value = "avg")]
    agg: Aggregator,
    /// hinge or verbatim.
    #[arg(long, default_value = "hinge")]
    spike: SpikeMode,
}

impl DetectorArgs {
    fn config(&self) -> DetectorConfig {
        DetectorConfig {
            history: self.history,
            aggregator: self.agg,
            spike_mode: self.spike,
            ..DetectorConfig::default()
        }
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let store = Store::with_data_dir(&cli.data_dir);
    match cli.command {
        Command::Ingest { csv, schema, id } => ingest(&store, &csv, schema.as_deref(), id),
        Command::Detect {
            dataset,
            detector,
            granularity,
            top,
            out,
        } => detect(&store, &dataset, &detector.config(), granularity, top, out.as_deref()),
        Command::Serve { port, bind } => serve(store, SocketAddr::new(bind, port)),
        Command::Bench(BenchCommand::Accuracy {
            data,
            labels,
            schema,
            l_grid,
            thresholds,
            agg,
            spike,
            out,
        }) => {
            let defaults = AccuracyConfig::default();
            let config = AccuracyConfig {
                l_grid: l_grid.unwrap_or(defaults.l_grid),
                thresholds: thresholds.unwrap_or(defaults.thresholds),
                aggregator: agg,
                spike_mode: spike,
            };
            bench_accuracy(&data, &labels, schema.as_deref(), &config, out.as_deref())
        }
        Command::Bench(BenchCommand::Scale {
            data,
            schema,
            node,
            metric,
            lengths,
            reps,
            detector,
            out,
        }) => {
            let dataset = read_csv(&data, &load_schema(schema.as_deref())?)?;
            let series = pick_series(&dataset, node.as_deref(), metric.as_deref())?;
            let lengths = lengths.unwrap_or_else(|| DEFAULT_SCALE_LENGTHS.to_vec());
            bench_scale(series, &lengths, reps, &detector.config(), out.as_deref())
        }
        Command::Synth {
            spec,
            seed,
            out,
            labels,
        } => synth(spec.as_deref(), seed, &out, &labels),
    }
}

fn load_schema(path: Option<&Path>) -> Result<SchemaMap> {
    match path {
        Some(p) => SchemaMap::from_json_file(p).with_context(|| format!("reading schema {}", p.display())),
        None => Ok(SchemaMap::default()),
    }
}

fn ingest(store: &Store, csv: &Path, schema: Option<&Path>, id: Option<String>) -> Result<()> {
    let mut schema = load_schema(schema)?;
    if id.is_some() {
        schema.dataset_id = id;
    }
    let manifest = store
        .ingest_csv(csv, &schema)
        .with_context(|| format!("ingesting {}", csv.display()))?;
    let rows = vec![
        vec!["dataset".into(), manifest.dataset_id.clone()],
        vec!["centers".into(), manifest.centers.len().to_string()],
        vec!["nodes".into(), manifest.nodes.len().to_string()],
        vec!["metrics".into(), manifest.metrics.join(",")],
        vec!["granularity".into(), manifest.native_granularity.to_string()],
        vec!["rows".into(), manifest.row_count.to_string()],
        vec!["skipped rows".into(), manifest.skipped_rows.to_string()],
    ];
    print_table(&["field", "value"], &rows);
    if let Some(path) = store.snapshot_path(&manifest.dataset_id) {
        println!("snapshot: {}", path.display());
    }
    Ok(())
}

fn detect(
    store: &Store,
    dataset_id: &str,
    config: &DetectorConfig,
    granularity: Option<Granularity>,
    top: usize,
    out: Option<&Path>,
) -> Result<()> {
    let dataset = store
        .load(dataset_id)
        .with_context(|| format!("loading dataset `{dataset_id}`"))?;
    let selector = Selector {
        granularity,
        ..Selector::default()
    };
    let series = query(&dataset, &selector)?;
    let mut records = Vec::new();
    for (s, scored) in series.iter().zip(score_all(&series, config)) {
        let scored = scored.with_context(|| format!("scoring {}:{}", s.node, s.metric))?;
        records.push((s, scored));
    }
    if let Some(path) = out {
        write_scores(path, &records)?;
    }
    let flat: Vec<ScoreRecord> = records.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    let ranks = rank_nodes(&flat);
    let rows: Vec<Vec<String>> = ranks
        .iter()
        .take(top)
        .map(|r| vec![r.rank.to_string(), r.node.to_string(), format!("{:.4}", r.total_score)])
        .collect();
    print_table(&["rank", "node", "total score"], &rows);
    println!("{} series scored with L={}", series.len(), config.history);
    Ok(())
}

fn write_scores(path: &Path, records: &[(&MetricSeries, Vec<ScoreRecord>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "center", "cluster", "node", "metric", "timestamp", "timestamp_index", "periodic", "trend", "spike",
        "aggregated", "warmup",
    ])?;
    for (series, scored) in records {
        for r in scored {
            w.write_record([
                r.node.center_id.as_str(),
                r.node.cluster_id.as_str(),
                r.node.node_id.as_str(),
                r.metric.as_str(),
                &series.timestamp_at(r.timestamp_index).to_string(),
                &r.timestamp_index.to_string(),
                &r.periodic.to_string(),
                &r.trend.to_string(),
                &r.spike.to_string(),
                &r.aggregated.to_string(),
                &r.warmup.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn serve(store: Store, addr: SocketAddr) -> Result<()> {
    let loaded = store.load_all().context("loading snapshots")?;
    tracing::info!("{loaded} dataset(s) loaded from {}", store.data_dir().map_or("-".into(), |d| d.display().to_string()));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(clouddet_service::serve(AppState::new(Arc::new(store)), addr))?;
    Ok(())
}

fn bench_accuracy(
    data: &Path,
    labels: &Path,
    schema: Option<&Path>,
    config: &AccuracyConfig,
    out: Option<&Path>,
) -> Result<()> {
    let dataset = read_csv(data, &load_schema(schema)?)?;
    let labels = read_labels(labels, &dataset)?;
    if labels.positives() == 0 {
        bail!("label file marks no anomalies for this dataset");
    }
    let report = run_accuracy_bench(&dataset, &labels, config);
    let rows: Vec<Vec<String>> = report
        .runs
        .iter()
        .map(|run| match (&run.roc, &run.error) {
            (Some(roc), _) => vec![run.l.to_string(), format!("{:.4}", roc.auc), String::new()],
            (None, err) => vec![run.l.to_string(), "-".into(), err.clone().unwrap_or_default()],
        })
        .collect();
    print_table(&["L", "AUC", "error"], &rows);
    match report.mean_auc {
        Some(m) => println!("mean AUC {m:.4}"),
        None => println!("mean AUC -"),
    }
    if let Some(path) = out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["L", "fpr", "tpr", "auc"])?;
        for run in &report.runs {
            if let Some(roc) = &run.roc {
                for (fpr, tpr) in &roc.points {
                    w.write_record([run.l.to_string(), fpr.to_string(), tpr.to_string(), roc.auc.to_string()])?;
                }
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn pick_series<'a>(dataset: &'a Dataset, node: Option<&str>, metric: Option<&str>) -> Result<&'a MetricSeries> {
    dataset
        .series
        .iter()
        .find(|s| node.is_none_or(|n| s.node.node_id == n) && metric.is_none_or(|m| s.metric == m))
        .context("no series matches the node/metric selection")
}

fn bench_scale(
    series: &MetricSeries,
    lengths: &[usize],
    reps: usize,
    config: &DetectorConfig,
    out: Option<&Path>,
) -> Result<()> {
    let report = run_scalability_bench(series, lengths, reps, |s| score_series(s, config).map(|_| ()))?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.length.to_string(),
                format!("{:.3}", r.seconds * 1e3),
                format!("{:.3}", r.mean_seconds * 1e3),
            ]
        })
        .collect();
    print_table(&["length", "median ms", "mean ms"], &rows);
    if let Some(fit) = &report.fit {
        let r2 = fit.r_squared.map_or("-".into(), |r| format!("{r:.4}"));
        println!("slope {:.3e} s/point, intercept {:.3e} s, R^2 {r2}", fit.slope, fit.intercept);
    }
    if let Some(path) = out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["length", "median_seconds", "mean_seconds", "repetitions"])?;
        for r in &report.rows {
            w.write_record([
                r.length.to_string(),
                r.seconds.to_string(),
                r.mean_seconds.to_string(),
                r.repetitions.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn synth(spec: Option<&Path>, seed: Option<u64>, out: &Path, labels_out: &Path) -> Result<()> {
    let mut spec: SynthSpec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let generated = synth_generate(&spec)?;
    let anomalies = generated.anomalies.len();
    let (dataset, labels) = generated.into_dataset("synth")?;
    let series = &dataset.series[0];

    let mut w = csv::Writer::from_path(out).with_context(|| format!("creating {}", out.display()))?;
    w.write_record(["timestamp", "center", "cluster", "node", series.metric.as_str()])?;
    for (i, v) in series.values.iter().enumerate() {
        w.write_record([
            series.timestamp_at(i).to_string(),
            series.node.center_id.clone(),
            series.node.cluster_id.clone(),
            series.node.node_id.clone(),
            v.to_string(),
        ])?;
    }
    w.flush()?;
    labels.write_csv(labels_out, &dataset)?;
    println!(
        "{} points, {anomalies} injected anomalies, {} labelled points (seed {})",
        series.len(),
        labels.positives(),
        spec.seed
    );
    Ok(())
}

/// Left-aligned text columns separated by two spaces.
fn print_table(header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let _ = writeln!(out, "{}", line(header.to_vec()));
    for row in rows {
        let _ = writeln!(out, "{}", line(row.iter().map(String::as_str).collect()));
    }
}
