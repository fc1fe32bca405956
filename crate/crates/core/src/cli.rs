//! Command-line frontend: `extract`, `prepare`, `train`, `evaluate`, `predict`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error. Every command
//! that writes files also writes a `key = value` run manifest next to them.

use std::ffi::OsString;
use std::fmt::{self, Display, Write as _};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::{self, class_count_map, parse_feature_row, resolve_columns, Cell, Label, LoadReport};
use crate::ensembles::{train_forest, train_gbt, ForestParams, GbtParams};
use crate::flowmeter::features::FlowCsvWriter;
use crate::flowmeter::{finalize_features, FlowMeter, FlowRecord, MeterConfig, PcapReader, FEATURE_COUNT};
use crate::metrics::{classification_report, confusion_matrix, macro_auc, roc_svg, RocCurve};
use crate::model_store::{self, Classifier, Model};
use crate::svm::{train_svm, SvmParams};
use crate::tree::{train_tree, TreeParams};

const SUBCOMMANDS: [&str; 5] = ["extract", "prepare", "train", "evaluate", "predict"];

#[derive(Debug, Parser)]
#[command(name = "flowsentry", version, about = "Flow-feature extraction and DDoS traffic classification")]
struct Cli {
    /// File of `key = value` lines using the long flag names; flags on the
    /// command line win on conflict.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn a pcap capture into a flow-feature CSV.
    Extract(ExtractArgs),
    /// Clean, balance and split labelled feature CSVs.
    Prepare(PrepareArgs),
    /// Train a classifier on a prepared CSV.
    Train(TrainArgs),
    /// Score a model on a labelled CSV.
    Evaluate(EvaluateArgs),
    /// Label feature rows one at a time.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct ExtractArgs {
    /// Classic pcap capture (Ethernet link type).
    #[arg(long, value_name = "FILE")]
    pcap: PathBuf,
    /// Flow CSV to write.
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
    /// Close a flow after this long without packets.
    #[arg(long, default_value_t = 120.0, value_name = "SECONDS")]
    idle_timeout_s: f64,
    /// Forward gap that starts a new subflow.
    #[arg(long, default_value_t = 1.0, value_name = "SECONDS")]
    activity_timeout_s: f64,
    /// Attach this traffic label to every flow, making the CSV usable by `prepare`.
    #[arg(long)]
    label: Option<String>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct PrepareArgs {
    /// Labelled feature CSVs, concatenated in the order given.
    #[arg(long = "in", value_name = "CSV", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Directory receiving train.csv, test.csv and manifest.txt.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Rows drawn from each label; smaller classes are used whole.
    #[arg(long, value_name = "N")]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Share of each label that goes to train.csv.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algo {
    Dt,
    Rf,
    Gbt,
    Svm,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[arg(long, value_enum)]
    algo: Algo,
    /// Labelled feature CSV.
    #[arg(long, value_name = "CSV")]
    train: PathBuf,
    /// Model file to write.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// dt, rf, gbt (default 20, or 6 for gbt)
    #[arg(long)]
    max_depth: Option<usize>,
    /// dt, rf, gbt
    #[arg(long)]
    min_samples_split: Option<usize>,
    /// dt, rf
    #[arg(long)]
    min_impurity_decrease: Option<f64>,
    /// rf
    #[arg(long)]
    n_trees: Option<usize>,
    /// rf (default floor(sqrt(features)))
    #[arg(long)]
    mtry: Option<usize>,
    /// rf: grow every tree on the full training set
    #[arg(long)]
    no_bootstrap: bool,
    /// gbt
    #[arg(long)]
    n_rounds: Option<usize>,
    /// gbt
    #[arg(long)]
    learning_rate: Option<f64>,
    /// gbt leaf regularization (default 1) or svm regularization (default 1e-4)
    #[arg(long)]
    lambda: Option<f64>,
    /// gbt
    #[arg(long)]
    gamma: Option<f64>,
    /// svm
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "CSV")]
    test: PathBuf,
    /// Human-readable report; a key/value twin is written with extension `.kv`.
    #[arg(long, value_name = "PATH")]
    report: PathBuf,
    /// Directory for one `roc_<label>.csv` per label.
    #[arg(long, value_name = "DIR")]
    roc_dir: PathBuf,
    /// Also write per-row predictions in the `predict` output format.
    #[arg(long, value_name = "CSV")]
    predictions: Option<PathBuf>,
    /// Also render the ROC curves as SVG.
    #[arg(long, value_name = "PATH")]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct PredictArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Feature CSV, or `-` for standard input.
    #[arg(long = "in", value_name = "CSV")]
    input: String,
    /// Output CSV, or `-` for standard output.
    #[arg(long, value_name = "CSV")]
    out: String,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

fn data(e: impl Display) -> CliError {
    CliError::Data(e.to_string())
}

fn at(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLOWSENTRY_LOG", "warn"))
        .format_timestamp(None)
        .try_init();
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse(&argv) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    let outcome = match cli.jobs {
        Some(0) => usage("--jobs must be at least 1"),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli.command)),
            Err(e) => Err(CliError::Usage(format!("cannot start {n} workers: {e}"))),
        },
        None => run(cli.command),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn parse(argv: &[OsString]) -> Result<Cli, i32> {
    let report = |e: clap::Error| {
        let _ = e.print();
        if e.use_stderr() {
            1
        } else {
            0
        }
    };
    let Some(path) = config_path(argv) else {
        return Cli::try_parse_from(argv).map_err(report);
    };
    let extra = match read_config(&path) {
        Ok(args) => args,
        Err(e) => {
            eprintln!("error: {e}");
            return Err(e.code());
        }
    };
    let at = argv.iter().position(|a| SUBCOMMANDS.iter().any(|s| a == s)).map_or(argv.len(), |i| i + 1);
    let mut merged = argv[..at].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&argv[at..]);
    Cli::try_parse_from(merged).map_err(report)
}

/// The `--config` path, found before clap runs so that the file can supply
/// required flags.
fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    let mut found = None;
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        } else if s == "--config" {
            found = it.next().map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            found = Some(PathBuf::from(p));
        }
    }
    found
}

/// Turns `key = value` lines into `--key value` arguments. `true` enables a
/// switch, `false` leaves it off, and whitespace separates multiple values.
fn read_config(path: &Path) -> Result<Vec<OsString>, CliError> {
    let text = fs::read_to_string(path).map_err(at(path))?;
    let mut args = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return usage(format!("{}: line {}: expected `key = value`", path.display(), n + 1));
        };
        let key = key.trim().replace('_', "-");
        if key == "config" {
            return usage(format!("{}: line {}: config files cannot nest", path.display(), n + 1));
        }
        match value.trim() {
            "true" => args.push(format!("--{key}").into()),
            "false" => {}
            v => {
                args.push(format!("--{key}").into());
                args.extend(v.split_whitespace().map(OsString::from));
            }
        }
    }
    Ok(args)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Extract(a) => extract(a),
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Predict(a) => predict(a),
    }
}

/// Flat `key = value` record of one run.
struct RunManifest {
    started: Instant,
    lines: String,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        let mut m = RunManifest { started: Instant::now(), lines: String::new() };
        m.set("command", command);
        m.set("tool_version", env!("CARGO_PKG_VERSION"));
        m
    }

    fn set(&mut self, key: &str, value: impl Display) {
        let _ = writeln!(self.lines, "{key} = {value}");
    }

    fn digest(&mut self, key: &str, path: &Path) -> Result<(), CliError> {
        let d = sha256_file(path)?;
        self.set(&format!("{key}.path"), path.display());
        self.set(&format!("{key}.sha256"), d);
        Ok(())
    }

    fn load_counters(&mut self, prefix: &str, r: &LoadReport) {
        self.set(&format!("{prefix}.rows_read"), r.rows_read);
        self.set(&format!("{prefix}.rows_kept"), r.dataset.len());
        self.set(&format!("{prefix}.dropped.excluded_label"), r.drops.excluded_label);
        self.set(&format!("{prefix}.dropped.non_finite"), r.drops.non_finite);
        self.set(&format!("{prefix}.dropped.unparseable"), r.drops.unparseable);
    }

    fn write(mut self, path: &Path) -> Result<(), CliError> {
        let secs = self.started.elapsed().as_secs_f64();
        self.set("duration_s", format!("{secs:.3}"));
        fs::write(path, self.lines).map_err(at(path))?;
        info!("wrote manifest {}", path.display());
        Ok(())
    }
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = File::open(path).map_err(at(path))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(at(path))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn seconds_to_us(flag: &str, s: f64) -> Result<u64, CliError> {
    if !(s.is_finite() && s > 0.0) {
        return usage(format!("--{flag} must be a positive number of seconds, got {s}"));
    }
    Ok((s * 1e6).round() as u64)
}

fn extract(a: ExtractArgs) -> Result<(), CliError> {
    let config = MeterConfig {
        idle_timeout_us: seconds_to_us("idle-timeout-s", a.idle_timeout_s)?,
        activity_timeout_us: seconds_to_us("activity-timeout-s", a.activity_timeout_s)?,
        ..MeterConfig::default()
    };
    let label = match &a.label {
        Some(l) => match l.parse::<Label>() {
            Ok(label) => Some(label.name().to_string()),
            Err(_) => return usage(format!("--label {l:?} is not a known traffic label")),
        },
        None => None,
    };
    let pcap_err = |e: crate::flowmeter::FlowmeterError| CliError::Data(format!("{}: {e}", a.pcap.display()));
    let input = File::open(&a.pcap).map_err(at(&a.pcap))?;
    let mut reader = PcapReader::new(BufReader::new(input)).map_err(pcap_err)?;
    let out = File::create(&a.out).map_err(at(&a.out))?;
    let mut writer = FlowCsvWriter::new(BufWriter::new(out), label.clone()).map_err(at(&a.out))?;
    let mut meter = FlowMeter::new(config);
    let emit = |recs: Vec<FlowRecord>, writer: &mut FlowCsvWriter<BufWriter<File>>| -> Result<(), CliError> {
        for rec in recs {
            let fv = finalize_features(&rec).map_err(|e| CliError::Data(format!("flow {}: {e}", rec.flow_id())))?;
            writer.write_flow(&rec, &fv).map_err(at(&a.out))?;
        }
        Ok(())
    };
    while let Some(pkt) = reader.next_event().map_err(pcap_err)? {
        let done = meter.push(&pkt);
        emit(done, &mut writer)?;
    }
    let packets = meter.packets();
    emit(meter.finish(), &mut writer)?;
    let flows = writer.rows();
    writer.finish().map_err(at(&a.out))?;
    if reader.truncated() {
        warn!("{}: capture ends in a truncated record; kept the packets before it", a.pcap.display());
    }
    let skipped = reader.skipped();
    info!("{packets} packets, {flows} flows, {} frames skipped", skipped.total());

    let mut m = RunManifest::new("extract");
    m.digest("input", &a.pcap)?;
    m.set("output", a.out.display());
    m.set("idle_timeout_us", config.idle_timeout_us);
    m.set("activity_timeout_us", config.activity_timeout_us);
    m.set("label", label.as_deref().unwrap_or("-"));
    m.set("frames", reader.frames());
    m.set("packets", packets);
    m.set("skipped.not_ipv4", skipped.not_ipv4);
    m.set("skipped.unsupported_transport", skipped.unsupported_transport);
    m.set("skipped.malformed", skipped.malformed);
    m.set("truncated", reader.truncated());
    m.set("flows", flows);
    m.write(&sibling(&a.out, ".manifest.txt"))
}

fn prepare(a: PrepareArgs) -> Result<(), CliError> {
    if a.per_class == 0 {
        return usage("--per-class must be at least 1");
    }
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return usage(format!("--train-fraction must lie strictly between 0 and 1, got {}", a.train_fraction));
    }
    let loaded = dataset::load_csv(&a.inputs).map_err(data)?;
    let balanced = dataset::balance(&loaded.dataset, a.per_class, a.seed).map_err(data)?;
    let parts = dataset::split(&balanced.dataset, a.train_fraction, a.seed).map_err(data)?;
    fs::create_dir_all(&a.out).map_err(at(&a.out))?;
    let train_path = a.out.join("train.csv");
    let test_path = a.out.join("test.csv");
    dataset::write_csv_file(&parts.train, &train_path).map_err(data)?;
    dataset::write_csv_file(&parts.test, &test_path).map_err(data)?;

    let mut m = RunManifest::new("prepare");
    for (i, p) in a.inputs.iter().enumerate() {
        m.digest(&format!("input.{i}"), p)?;
    }
    m.set("seed", a.seed);
    m.set("per_class", a.per_class);
    m.set("train_fraction", a.train_fraction);
    m.load_counters("load", &loaded);
    m.set("selected_rows", balanced.dataset.len());
    for (label, n) in class_count_map(&balanced.dataset) {
        m.set(&format!("selected.{label}"), n);
    }
    for &c in &balanced.short_classes {
        m.set(&format!("short_class.{}", balanced.dataset.label_names[c]), balanced.selected[c]);
    }
    m.set("train_rows", parts.train.len());
    m.set("test_rows", parts.test.len());
    for (label, n) in class_count_map(&parts.train) {
        m.set(&format!("train.{label}"), n);
    }
    for (label, n) in class_count_map(&parts.test) {
        m.set(&format!("test.{label}"), n);
    }
    m.digest("train_csv", &train_path)?;
    m.digest("test_csv", &test_path)?;
    m.write(&a.out.join("manifest.txt"))
}

fn ignore_flags(algo: Algo, flags: &[(&str, bool)]) {
    for (name, set) in flags {
        if *set {
            warn!("--{name} does not apply to --algo {algo:?} and is ignored");
        }
    }
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let tree_params = TreeParams {
        max_depth: a.max_depth.unwrap_or(TreeParams::default().max_depth),
        min_samples_split: a.min_samples_split.unwrap_or(TreeParams::default().min_samples_split),
        min_impurity_decrease: a.min_impurity_decrease.unwrap_or(0.0),
    };
    let forest_only = [("n-trees", a.n_trees.is_some()), ("mtry", a.mtry.is_some()), ("no-bootstrap", a.no_bootstrap)];
    let gbt_only = [
        ("n-rounds", a.n_rounds.is_some()),
        ("learning-rate", a.learning_rate.is_some()),
        ("gamma", a.gamma.is_some()),
    ];
    let tree_flags = [
        ("max-depth", a.max_depth.is_some()),
        ("min-samples-split", a.min_samples_split.is_some()),
        ("min-impurity-decrease", a.min_impurity_decrease.is_some()),
    ];
    match a.algo {
        Algo::Dt => {
            ignore_flags(a.algo, &forest_only);
            ignore_flags(a.algo, &gbt_only);
            ignore_flags(a.algo, &[("lambda", a.lambda.is_some()), ("epochs", a.epochs.is_some())]);
        }
        Algo::Rf => {
            ignore_flags(a.algo, &gbt_only);
            ignore_flags(a.algo, &[("lambda", a.lambda.is_some()), ("epochs", a.epochs.is_some())]);
        }
        Algo::Gbt => {
            ignore_flags(a.algo, &forest_only);
            ignore_flags(a.algo, &[("min-impurity-decrease", tree_flags[2].1), ("epochs", a.epochs.is_some())]);
        }
        Algo::Svm => {
            ignore_flags(a.algo, &forest_only);
            ignore_flags(a.algo, &gbt_only);
            ignore_flags(a.algo, &tree_flags);
        }
    }
    if matches!(a.algo, Algo::Dt | Algo::Rf) {
        tree_params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let gbt_params = GbtParams {
        n_rounds: a.n_rounds.unwrap_or(GbtParams::default().n_rounds),
        learning_rate: a.learning_rate.unwrap_or(GbtParams::default().learning_rate),
        max_depth: a.max_depth.unwrap_or(GbtParams::default().max_depth),
        min_samples_split: a.min_samples_split.unwrap_or(GbtParams::default().min_samples_split),
        lambda: a.lambda.unwrap_or(GbtParams::default().lambda),
        gamma: a.gamma.unwrap_or(GbtParams::default().gamma),
        seed: a.seed,
    };
    if a.algo == Algo::Gbt {
        gbt_params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let svm_params = SvmParams {
        lambda: a.lambda.unwrap_or(SvmParams::default().lambda),
        epochs: a.epochs.unwrap_or(SvmParams::default().epochs),
        seed: a.seed,
    };
    if a.algo == Algo::Svm && !(svm_params.lambda > 0.0 && svm_params.lambda.is_finite() && svm_params.epochs > 0) {
        return usage("svm needs --lambda > 0 and --epochs >= 1");
    }
    if a.n_trees == Some(0) {
        return usage("--n-trees must be at least 1");
    }
    if a.mtry.is_some_and(|m| m == 0 || m > FEATURE_COUNT) {
        return usage(format!("--mtry must lie in 1..={FEATURE_COUNT}"));
    }

    let loaded = dataset::load_csv(&[&a.train]).map_err(data)?;
    let ds = &loaded.dataset;
    let train_err = |e: &dyn Display| CliError::Data(format!("{}: {e}", a.train.display()));
    let classifier = match a.algo {
        Algo::Dt => {
            Classifier::Tree { tree: train_tree(ds, &tree_params).map_err(|e| train_err(&e))?, params: tree_params }
        }
        Algo::Rf => {
            let p = ForestParams {
                n_trees: a.n_trees.unwrap_or(ForestParams::default().n_trees),
                mtry: a.mtry,
                tree: tree_params,
                bootstrap: !a.no_bootstrap,
                seed: a.seed,
            };
            Classifier::Forest(train_forest(ds, &p).map_err(|e| train_err(&e))?)
        }
        Algo::Gbt => Classifier::Boosted(train_gbt(ds, &gbt_params).map_err(|e| train_err(&e))?),
        Algo::Svm => Classifier::Svm(train_svm(ds, &svm_params).map_err(|e| train_err(&e))?),
    };
    let model = Model { classifier, labels: ds.label_names.clone(), seed: a.seed };
    model_store::save_file(&model, &a.model).map_err(|e| CliError::Data(format!("{}: {e}", a.model.display())))?;

    let mut m = RunManifest::new("train");
    m.digest("input", &a.train)?;
    m.set("algo", model.kind());
    m.set("seed", a.seed);
    m.load_counters("load", &loaded);
    for (label, n) in class_count_map(ds) {
        m.set(&format!("train.{label}"), n);
    }
    let text = model_store::to_text(&model);
    for line in text.lines().filter(|l| l.starts_with("param.")) {
        m.lines.push_str(line);
        m.lines.push('\n');
    }
    m.digest("model", &a.model)?;
    m.write(&sibling(&a.model, ".manifest.txt"))
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    model_store::load_file(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn require_schema_width(model: &Model, path: &Path) -> Result<(), CliError> {
    if model.n_features() != FEATURE_COUNT {
        return Err(CliError::Data(format!(
            "{}: model expects {} features, the flow schema has {FEATURE_COUNT}",
            path.display(),
            model.n_features()
        )));
    }
    Ok(())
}

fn prediction_header(model: &Model, with_flow_id: bool) -> String {
    let mut h = String::new();
    if with_flow_id {
        h.push_str("flow_id,");
    }
    h.push_str("label");
    for l in &model.labels {
        h.push_str(",score.");
        h.push_str(l);
    }
    h.push('\n');
    h
}

fn prediction_line(out: &mut String, model: &Model, flow_id: Option<&str>, class: usize, scores: &[f64]) {
    out.clear();
    if let Some(id) = flow_id {
        out.push_str(id);
        out.push(',');
    }
    out.push_str(&model.labels[class]);
    for s in scores {
        let _ = write!(out, ",{s}");
    }
    out.push('\n');
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    require_schema_width(&model, &a.model)?;
    let loaded = dataset::load_csv(&[&a.test]).map_err(data)?;
    let ds = &loaded.dataset;
    let mut to_model = Vec::with_capacity(ds.label_names.len());
    for name in &ds.label_names {
        to_model.push(model.labels.iter().position(|l| l == name));
    }
    let mut actual = Vec::with_capacity(ds.len());
    for (row, &l) in ds.labels.iter().enumerate() {
        match to_model[l] {
            Some(c) => actual.push(c),
            None => {
                return Err(CliError::Data(format!(
                    "{}: row {}: label {:?} is not in the model's vocabulary",
                    a.test.display(),
                    row + 1,
                    ds.label_names[l]
                )))
            }
        }
    }
    let outputs: Vec<(usize, Vec<f64>)> =
        (0..ds.len()).into_par_iter().map(|i| model.predict(ds.features.row(i))).collect();
    let predicted: Vec<usize> = outputs.iter().map(|(c, _)| *c).collect();
    let cm = confusion_matrix(&actual, &predicted, &model.labels).map_err(data)?;
    let report = classification_report(&cm).map_err(data)?;

    fs::create_dir_all(&a.roc_dir).map_err(at(&a.roc_dir))?;
    let mut curves: Vec<(String, RocCurve)> = Vec::new();
    for (c, label) in model.labels.iter().enumerate() {
        let positives = actual.iter().filter(|&&y| y == c).count();
        if positives == 0 || positives == actual.len() {
            info!("no ROC curve for {label}: the test set needs both positive and negative rows");
            continue;
        }
        let scores: Vec<f64> = outputs.iter().map(|(_, s)| s[c]).collect();
        let curve = crate::metrics::roc_curve(&scores, &actual, c).map_err(data)?;
        let path = a.roc_dir.join(format!("roc_{label}.csv"));
        fs::write(&path, curve.to_csv()).map_err(at(&path))?;
        curves.push((label.clone(), curve));
    }
    let auc = macro_auc(curves.iter().map(|(_, c)| c));

    let mut text = format!("model kind: {}\ntest rows: {}\n\n", model.kind(), ds.len());
    text.push_str(&report.render_table());
    text.push_str("\nconfusion matrix (rows actual, columns predicted)\n");
    let w = model.labels.iter().map(String::len).max().unwrap_or(1).max(6);
    let _ = write!(text, "{:>w$}", "");
    for l in &model.labels {
        let _ = write!(text, " {l:>w$}");
    }
    text.push('\n');
    for (i, l) in model.labels.iter().enumerate() {
        let _ = write!(text, "{l:>w$}");
        for n in cm.row(i) {
            let _ = write!(text, " {n:>w$}");
        }
        text.push('\n');
    }
    text.push_str("\none-vs-rest ROC AUC\n");
    for (label, c) in &curves {
        let _ = writeln!(text, "{label:>w$} {:.4}", c.auc);
    }
    match auc {
        Some(v) => {
            let _ = writeln!(text, "{:>w$} {v:.4}", "macro");
        }
        None => text.push_str("no label has both positive and negative test rows\n"),
    }
    fs::write(&a.report, text).map_err(at(&a.report))?;

    let mut kv = report.render_key_values();
    for (label, c) in &curves {
        let _ = writeln!(kv, "auc.{label} = {:.6}", c.auc);
    }
    let _ = writeln!(kv, "auc.macro = {}", auc.map_or("undefined".to_string(), |v| format!("{v:.6}")));
    let kv_path = a.report.with_extension("kv");
    let kv_path = if kv_path == a.report { sibling(&a.report, ".kv") } else { kv_path };
    fs::write(&kv_path, kv).map_err(at(&kv_path))?;

    if let Some(svg) = &a.svg {
        fs::write(svg, roc_svg(&curves)).map_err(at(svg))?;
    }
    if let Some(p) = &a.predictions {
        let mut out = BufWriter::new(File::create(p).map_err(at(p))?);
        out.write_all(prediction_header(&model, false).as_bytes()).map_err(at(p))?;
        let mut line = String::new();
        for (c, s) in &outputs {
            prediction_line(&mut line, &model, None, *c, s);
            out.write_all(line.as_bytes()).map_err(at(p))?;
        }
        out.flush().map_err(at(p))?;
    }

    let mut m = RunManifest::new("evaluate");
    m.digest("model", &a.model)?;
    m.digest("input", &a.test)?;
    m.load_counters("load", &loaded);
    m.set("accuracy", format!("{:.6}", report.accuracy));
    m.set("roc_curves", curves.len());
    m.write(&sibling(&a.report, ".manifest.txt"))
}

fn predict(a: PredictArgs) -> Result<(), CliError> {
    let model_path = PathBuf::from(&a.model);
    let model = load_model(&model_path)?;
    require_schema_width(&model, &model_path)?;
    let in_name = if a.input == "-" { "<stdin>".to_string() } else { a.input.clone() };
    let input: Box<dyn BufRead> = if a.input == "-" {
        Box::new(io::stdin().lock())
    } else {
        let p = Path::new(&a.input);
        Box::new(BufReader::new(File::open(p).map_err(at(p))?))
    };
    let out_name = if a.out == "-" { "<stdout>".to_string() } else { a.out.clone() };
    let output: Box<dyn Write> = if a.out == "-" {
        Box::new(io::stdout().lock())
    } else {
        let p = Path::new(&a.out);
        Box::new(BufWriter::new(File::create(p).map_err(at(p))?))
    };
    let rows = stream_predictions(&model, input, &in_name, output, &out_name)?;
    info!("labelled {rows} rows");
    if a.out != "-" {
        let mut m = RunManifest::new("predict");
        m.digest("model", &model_path)?;
        if a.input != "-" {
            m.digest("input", Path::new(&a.input))?;
        } else {
            m.set("input", "-");
        }
        m.set("rows", rows);
        m.write(&sibling(Path::new(&a.out), ".manifest.txt"))?;
    }
    Ok(())
}

/// Reads one record, writes one line; memory use does not grow with the input.
fn stream_predictions(
    model: &Model,
    input: impl Read,
    in_name: &str,
    mut output: impl Write,
    out_name: &str,
) -> Result<u64, CliError> {
    let csv_err = |e: csv::Error| CliError::Data(format!("{in_name}: {e}"));
    let out_err = |e: io::Error| CliError::Data(format!("{out_name}: {e}"));
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let map = resolve_columns(&headers, false, in_name).map_err(data)?;
    let id_col = headers.iter().position(|h| h.trim() == "flow_id");
    output.write_all(prediction_header(model, id_col.is_some()).as_bytes()).map_err(out_err)?;
    let mut record = csv::StringRecord::new();
    let mut line = String::new();
    let mut rows = 0u64;
    while rdr.read_record(&mut record).map_err(csv_err)? {
        rows += 1;
        let x = parse_feature_row(&record, &map).map_err(|cell| {
            let what = if cell == Cell::NonFinite { "a non-finite" } else { "an unparseable" };
            CliError::Data(format!("{in_name}: row {rows}: {what} feature value"))
        })?;
        let (class, scores) = model.predict(&x);
        prediction_line(&mut line, model, id_col.and_then(|c| record.get(c)), class, &scores);
        output.write_all(line.as_bytes()).map_err(out_err)?;
    }
    output.flush().map_err(out_err)?;
    Ok(rows)
}
