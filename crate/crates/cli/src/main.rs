//! `latproph`: extract features, build datasets, tune and evaluate latency
//! predictors from the command line.

use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{CommandFactory, Parser, Subcommand};
use log::info;

use latproph::dataset::{load_measurements, make_split, save_measurements, Dataset, DatasetError, SplitPlan};
use latproph::eval::{bench_latency, evaluate, export_scatter, LatencyStats};
use latproph::features::{count_flops, extract_features, rank_scored, Feature, FlopBreakdown};
use latproph::graph::{infer_shapes, parse_model, to_document, ModelGraph};
use latproph::predictor::{
    fit_predictor, load_predictor, ContainerError, save_predictor, ModelKind, ModelSpec, ParamValue, Params,
    TrainedPredictor,
};
use latproph::synth::{build_synth_corpus, profiles_from_toml, DeviceProfile, SynthConfig};
use latproph::tuning::{default_grid, grid_search, HyperGrid, SearchOptions};

const BUG_REPORT: &str = "this is a bug in latproph; please report it with the command line that triggered it";

#[derive(Parser, Debug)]
#[command(name = "latproph", version, about = "Predict CNN inference latency from architectural features")]
#[command(after_help = "Set LATPROPH_LOG=error|warn|info|debug to control log output on stderr.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract the feature vector of model documents at given input sizes.
    Features(FeaturesArgs),
    /// Generate the synthetic corpus: model documents plus one measurement CSV per device profile.
    Synth(SynthArgs),
    /// Split a measurement CSV into train and NIS/NCV/NCA test sets.
    Split(SplitArgs),
    /// Grid-search hyperparameters with k-fold cross-validation and save the refit winner.
    Tune(TuneArgs),
    /// Fit one model with fixed hyperparameters.
    Train(TrainArgs),
    /// Score a predictor on the test spaces of a split plan.
    Evaluate(EvaluateArgs),
    /// Predict the latency of a model document at one or more input sizes.
    Predict(PredictArgs),
    /// Measure single-prediction latency of a predictor.
    Bench(BenchArgs),
    /// Print the split-count importance of each feature in a boosted-tree predictor.
    Importance(ImportanceArgs),
}

#[derive(clap::Args, Debug)]
struct FeaturesArgs {
    /// Model documents (.cnn) to analyse.
    #[arg(long = "graph", required = true, num_args = 1..)]
    graphs: Vec<PathBuf>,
    /// Square input sizes in pixels, comma separated.
    #[arg(long = "input-size", required = true, value_delimiter = ',')]
    sizes: Vec<u64>,
    /// Input channel count.
    #[arg(long, default_value_t = 3)]
    channels: u64,
    /// Append per-operation FLOP columns.
    #[arg(long)]
    breakdown: bool,
    /// Report extraction time per graph on stderr.
    #[arg(long)]
    timings: bool,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct SynthArgs {
    /// Generator settings (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Device profiles (TOML with [[profile]] tables); the shipped agx-like and tx2-like when omitted.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Seed; overrides the one in --config.
    #[arg(long)]
    seed: Option<u64>,
    /// Only emit the profile with this name.
    #[arg(long)]
    device: Option<String>,
    /// Output directory; receives graphs/*.cnn and <profile>.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct SplitArgs {
    /// Measurement CSV.
    #[arg(long)]
    data: PathBuf,
    /// Fraction of records used for training.
    #[arg(long, default_value_t = 0.7)]
    train_ratio: f64,
    /// Seed for the family, variant and size draws.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output plan (JSON); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct TuneArgs {
    /// Measurement CSV.
    #[arg(long)]
    data: PathBuf,
    /// Split plan; only its train rows are used. All rows when omitted.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Model kind: ols, mlp, svr, rf or gbt. Optional when --grid names one.
    #[arg(long)]
    kind: Option<ModelKind>,
    /// Hyperparameter grid (TOML); the built-in grid for --kind when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Number of cross-validation folds.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Worker threads for evaluating configurations.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Seed for folds and model initialization.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Device tag stored in the predictor; the dataset's device when omitted.
    #[arg(long)]
    device: Option<String>,
    /// Output predictor file (.lpk).
    #[arg(long)]
    out: PathBuf,
    /// Also write the cross-validation table as CSV.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Record wall-clock times in the predictor and report (makes output run-dependent).
    #[arg(long)]
    timings: bool,
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    /// Measurement CSV.
    #[arg(long)]
    data: PathBuf,
    /// Split plan; only its train rows are used. All rows when omitted.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Model kind: ols, mlp, svr, rf or gbt.
    #[arg(long)]
    kind: ModelKind,
    /// Hyperparameter as name=value; repeatable. Omitted names take defaults.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
    /// Seed for model initialization.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Device tag stored in the predictor; the dataset's device when omitted.
    #[arg(long)]
    device: Option<String>,
    /// Output predictor file (.lpk).
    #[arg(long)]
    out: PathBuf,
    /// Record the training time in the predictor (makes output run-dependent).
    #[arg(long)]
    timings: bool,
}

#[derive(clap::Args, Debug)]
struct EvaluateArgs {
    /// Predictor file (.lpk).
    #[arg(long)]
    model: PathBuf,
    /// Measurement CSV the plan was made from.
    #[arg(long)]
    data: PathBuf,
    /// Split plan (JSON).
    #[arg(long)]
    plan: PathBuf,
    /// Write the report as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write predicted-vs-measured rows for every test record as CSV.
    #[arg(long)]
    scatter: Option<PathBuf>,
    /// Also benchmark prediction latency on the test rows with this many passes (>= 100).
    #[arg(long)]
    bench_reps: Option<usize>,
}

#[derive(clap::Args, Debug)]
struct PredictArgs {
    /// Predictor file (.lpk).
    #[arg(long)]
    model: PathBuf,
    /// Model document (.cnn).
    #[arg(long)]
    graph: PathBuf,
    /// Square input sizes in pixels, comma separated; one prediction per line.
    #[arg(long = "input-size", required = true, value_delimiter = ',')]
    sizes: Vec<u64>,
    /// Input channel count.
    #[arg(long, default_value_t = 3)]
    channels: u64,
}

#[derive(clap::Args, Debug)]
struct BenchArgs {
    /// Predictor file (.lpk).
    #[arg(long)]
    model: PathBuf,
    /// Measurement CSV whose feature rows are used as inputs.
    #[arg(long)]
    data: PathBuf,
    /// Passes over the rows (>= 100).
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Also write the statistics as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct ImportanceArgs {
    /// Boosted-tree predictor file (.lpk).
    #[arg(long)]
    model: PathBuf,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    User(String),
    Internal(String),
}

fn user(e: impl Display) -> CliError {
    CliError::User(e.to_string())
}

fn with_path(path: &Path) -> impl Fn(&dyn Display) -> CliError + '_ {
    move |e| CliError::User(format!("{}: {e}", path.display()))
}

type Result<T> = std::result::Result<T, CliError>;

fn main() {
    std::panic::set_hook(Box::new(|info| {
        eprintln!("internal error: {info}\n{BUG_REPORT}");
        std::process::exit(2);
    }));
    std::process::exit(run(std::env::args_os()));
}

fn run<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("LATPROPH_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let name = subcommand_name(&cli.command);
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            let mut cmd = Cli::command();
            cmd.build();
            if let Some(sub) = cmd.find_subcommand_mut(name) {
                eprintln!("{}", sub.render_usage());
            }
            1
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}\n{BUG_REPORT}");
            2
        }
    }
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Features(_) => "features",
        Command::Synth(_) => "synth",
        Command::Split(_) => "split",
        Command::Tune(_) => "tune",
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Predict(_) => "predict",
        Command::Bench(_) => "bench",
        Command::Importance(_) => "importance",
    }
}

fn dispatch(c: Command) -> Result<()> {
    match c {
        Command::Features(a) => features(a),
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a),
        Command::Tune(a) => tune(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Bench(a) => bench(a),
        Command::Importance(a) => importance(a),
    }
}

// ---------------------------------------------------------------------------
// Helpers

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| with_path(path)(&e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| with_path(dir)(&e))?;
    }
    std::fs::write(path, bytes).map_err(|e| with_path(path)(&e))
}

/// Writes to `path`, or stdout when `None`.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_bytes(p, bytes),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(user)
        }
    }
}

fn load_graph(path: &Path) -> Result<ModelGraph> {
    parse_model(&read_text(path)?).map_err(|e| with_path(path)(&e))
}

fn load_data(path: &Path) -> Result<Dataset> {
    load_measurements(path).map_err(|e| match e {
        DatasetError::Io { .. } => user(e),
        _ => with_path(path)(&e),
    })
}

fn load_plan(path: &Path, ds: &Dataset) -> Result<SplitPlan> {
    let plan = SplitPlan::from_json(&read_text(path)?).map_err(|e| with_path(path)(&e))?;
    let all = plan.train.iter().chain(&plan.test_nis).chain(&plan.test_ncv).chain(&plan.test_nca);
    if let Some(i) = all.copied().find(|&i| i >= ds.len()) {
        return Err(CliError::User(format!(
            "{}: record index {i} is out of range for a dataset of {} records",
            path.display(),
            ds.len()
        )));
    }
    Ok(plan)
}

/// Container I/O errors already name the file.
fn container_error(path: &Path, e: ContainerError) -> CliError {
    match e {
        ContainerError::Io { .. } => user(e),
        _ => with_path(path)(&e),
    }
}

fn load_model(path: &Path) -> Result<TrainedPredictor> {
    let p = load_predictor(path).map_err(|e| container_error(path, e))?;
    p.check().map_err(|e| with_path(path)(&e))?;
    Ok(p)
}

fn training_rows(ds: &Dataset, plan: Option<&Path>) -> Result<Vec<usize>> {
    match plan {
        Some(p) => Ok(load_plan(p, ds)?.train),
        None => Ok((0..ds.len()).collect()),
    }
}

fn csv_bytes<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> std::result::Result<(), csv::Error>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        fill(&mut w).map_err(|e| CliError::Internal(e.to_string()))?;
        w.flush().map_err(|e| CliError::Internal(e.to_string()))?;
    }
    Ok(buf)
}

fn finish_predictor(mut p: TrainedPredictor, device: Option<String>, ds: &Dataset, out: &Path) -> Result<()> {
    p.metadata.device = device.unwrap_or_else(|| ds.device.clone());
    p.check().map_err(CliError::Internal)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| with_path(dir)(&e))?;
    }
    save_predictor(&p, out).map_err(|e| container_error(out, e))?;
    info!("wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// Subcommands

fn features(a: FeaturesArgs) -> Result<()> {
    let mut header: Vec<&str> = vec!["model_name", "family", "variant", "input_size"];
    header.extend(Feature::ALL.iter().map(|f| f.name()));
    if a.breakdown {
        header.extend(FlopBreakdown::COLUMNS);
    }
    let mut rows = Vec::new();
    for path in &a.graphs {
        let g = load_graph(path)?;
        for &size in &a.sizes {
            let start = Instant::now();
            let sg = infer_shapes(&g, size, a.channels).map_err(|e| with_path(path)(&e))?;
            let fv = extract_features(&sg).map_err(|e| with_path(path)(&e))?;
            let mut row = vec![g.name.clone(), g.family.clone(), g.variant.clone(), size.to_string()];
            row.extend(fv.0.iter().map(|v| v.to_string()));
            if a.breakdown {
                let b = count_flops(&sg).map_err(|e| with_path(path)(&e))?;
                row.extend([b.conv2d, b.add, b.mul, b.pooling, b.dense].map(|v| v.to_string()));
            }
            if a.timings {
                eprintln!("{} @ {size}: {:.1} us", g.name, start.elapsed().as_secs_f64() * 1e6);
            }
            rows.push(row);
        }
    }
    let bytes = csv_bytes(|w| {
        w.write_record(&header)?;
        rows.iter().try_for_each(|r| w.write_record(r))
    })?;
    emit(a.out.as_deref(), &bytes)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::from_toml(&read_text(p)?).map_err(|e| with_path(p)(&e))?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let mut profiles = match &a.profiles {
        Some(p) => profiles_from_toml(&read_text(p)?).map_err(|e| with_path(p)(&e))?,
        None => DeviceProfile::shipped(),
    };
    if let Some(dev) = &a.device {
        profiles.retain(|p| &p.name == dev);
        if profiles.is_empty() {
            return Err(CliError::User(format!("no device profile named {dev:?}")));
        }
    }
    let corpus = build_synth_corpus(&cfg, &profiles).map_err(user)?;
    let graph_dir = a.out.join("graphs");
    for g in &corpus.graphs {
        write_bytes(&graph_dir.join(format!("{}.cnn", g.name)), to_document(g).as_bytes())?;
    }
    for ds in &corpus.datasets {
        let path = a.out.join(format!("{}.csv", ds.device));
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| with_path(dir)(&e))?;
        }
        save_measurements(ds, &path).map_err(user)?;
        println!("{}: {} records", path.display(), ds.len());
    }
    println!("{}: {} model documents", graph_dir.display(), corpus.graphs.len());
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    let plan = make_split(&ds, a.train_ratio, a.seed).map_err(user)?;
    eprintln!(
        "train {}, NIS {}, NCV {}, NCA {}",
        plan.train.len(),
        plan.test_nis.len(),
        plan.test_ncv.len(),
        plan.test_nca.len()
    );
    let mut text = plan.to_json();
    text.push('\n');
    emit(a.out.as_deref(), text.as_bytes())
}

fn tune(a: TuneArgs) -> Result<()> {
    let grid = match (&a.grid, a.kind) {
        (Some(p), kind) => {
            let g = HyperGrid::from_toml(&read_text(p)?).map_err(|e| with_path(p)(&e))?;
            if let Some(k) = kind.filter(|&k| k != g.model_kind) {
                return Err(CliError::User(format!(
                    "--kind {k} does not match the grid's model_kind {}",
                    g.model_kind
                )));
            }
            g
        }
        (None, Some(kind)) => default_grid(kind),
        (None, None) => return Err(CliError::User("give --kind or --grid".into())),
    };
    let ds = load_data(&a.data)?;
    let train = training_rows(&ds, a.plan.as_deref())?;
    let opts = SearchOptions {
        k: a.k,
        seed: a.seed,
        jobs: a.jobs.max(1),
    };
    info!("tuning {} over {} configurations, {} rows", grid.model_kind, grid.size(), train.len());
    let (mut p, report) =
        grid_search(&grid, &ds.features_at(&train), &ds.latencies_at(&train), opts).map_err(user)?;
    let best = report.best();
    println!(
        "best config #{} of {}: {} (CV MAPE {:.3}%)",
        best.index,
        report.total_configs,
        latproph::predictor::format_params(&best.params),
        best.mean_mape.unwrap_or(f64::NAN)
    );
    if a.timings {
        p.metadata.tuning_time_s = Some(report.wall_time_s);
        p.metadata.training_time_s = Some(report.refit_time_s);
    }
    if let Some(path) = &a.report {
        write_bytes(path, report.to_csv(a.timings).as_bytes())?;
    }
    finish_predictor(p, a.device, &ds, &a.out)
}

fn parse_sets(sets: &[String]) -> Result<Params> {
    let mut params = Params::new();
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::User(format!("--set expects NAME=VALUE, got {s:?}")))?;
        let value: ParamValue = v.parse().map_err(user)?;
        params.insert(k.trim().to_string(), value);
    }
    Ok(params)
}

fn train(a: TrainArgs) -> Result<()> {
    let params = parse_sets(&a.set)?;
    let spec = ModelSpec::from_params(a.kind, &params).map_err(user)?;
    let ds = load_data(&a.data)?;
    let train = training_rows(&ds, a.plan.as_deref())?;
    let start = Instant::now();
    let mut p = fit_predictor(&spec, &ds.features_at(&train), &ds.latencies_at(&train), a.seed).map_err(user)?;
    if a.timings {
        p.metadata.training_time_s = Some(start.elapsed().as_secs_f64());
    }
    println!("trained {} on {} rows", a.kind, train.len());
    finish_predictor(p, a.device, &ds, &a.out)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let p = load_model(&a.model)?;
    let ds = load_data(&a.data)?;
    let plan = load_plan(&a.plan, &ds)?;
    let mut report = evaluate(&p, &ds, &plan).map_err(user)?;
    if let Some(reps) = a.bench_reps {
        let test: Vec<usize> = [plan.test_nis.as_slice(), &plan.test_ncv, &plan.test_nca].concat();
        report.prediction_latency = Some(bench_latency(&p, &ds.features_at(&test), reps).map_err(user)?);
    }
    println!("{report}");
    if let Some(path) = &a.out {
        write_bytes(path, report.to_csv().as_bytes())?;
    }
    if let Some(path) = &a.scatter {
        let n = export_scatter(&p, &ds, &plan, path).map_err(|e| with_path(path)(&e))?;
        info!("wrote {n} scatter rows to {}", path.display());
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let p = load_model(&a.model)?;
    let g = load_graph(&a.graph)?;
    for &size in &a.sizes {
        let sg = infer_shapes(&g, size, a.channels).map_err(|e| with_path(&a.graph)(&e))?;
        let fv = extract_features(&sg).map_err(|e| with_path(&a.graph)(&e))?;
        println!("{}", p.predict(&fv));
    }
    Ok(())
}

fn stats_csv(s: &LatencyStats) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record(["host", "reps", "calls", "mean_ns", "p50_ns", "p99_ns"])?;
        w.write_record([
            s.host.clone(),
            s.reps.to_string(),
            s.calls.to_string(),
            s.mean_ns.to_string(),
            s.p50_ns.to_string(),
            s.p99_ns.to_string(),
        ])
    })
}

fn bench(a: BenchArgs) -> Result<()> {
    let p = load_model(&a.model)?;
    let ds = load_data(&a.data)?;
    let rows: Vec<usize> = (0..ds.len()).collect();
    let s = bench_latency(&p, &ds.features_at(&rows), a.reps).map_err(user)?;
    println!(
        "{} on {}: {} calls, mean {:.1} ns, p50 {} ns, p99 {} ns",
        p.kind, s.host, s.calls, s.mean_ns, s.p50_ns, s.p99_ns
    );
    if let Some(path) = &a.out {
        write_bytes(path, &stats_csv(&s)?)?;
    }
    Ok(())
}

fn importance(a: ImportanceArgs) -> Result<()> {
    let p = load_model(&a.model)?;
    let scores = p
        .fscores()
        .ok_or_else(|| CliError::User(format!("importance needs a gbt predictor, got {}", p.kind)))?;
    let scored: Vec<(Feature, f64)> = scores.iter().map(|&(f, c)| (f, c as f64)).collect();
    let ranked = rank_scored(&scored);
    let score_of = |f: Feature| scores.iter().find(|(g, _)| *g == f).map_or(0, |s| s.1);
    println!("{:<5}{:<24}{:>8}", "rank", "feature", "fscore");
    for (i, &f) in ranked.iter().enumerate() {
        println!("{:<5}{:<24}{:>8}", i + 1, f.name(), score_of(f));
    }
    if let Some(path) = &a.out {
        let bytes = csv_bytes(|w| {
            w.write_record(["rank", "feature", "fscore"])?;
            ranked.iter().enumerate().try_for_each(|(i, &f)| {
                w.write_record([(i + 1).to_string(), f.name().to_string(), score_of(f).to_string()])
            })
        })?;
        write_bytes(path, &bytes)?;
    }
    Ok(())
}
