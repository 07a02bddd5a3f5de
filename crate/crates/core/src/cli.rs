//! Command-line front end.
//!
//! Each pipeline stage is a subcommand that reads and writes files, so every
//! intermediate artifact can be inspected on its own:
//!
//! ```text
//! sadp detect   --corpus docs.txt --out spans.jsonl
//! sadp score    --spans spans.jsonl --out report.json
//! sadp annotate --corpus docs.txt --spans spans.jsonl --report report.json --out annotated.jsonl
//! sadp train    --corpus docs.txt --spans spans.jsonl --report report.json --arm sa_adp --out run/
//! sadp account  --sigma 2 --steps 30
//! sadp compare  --config compare.json --out results/
//! ```
//!
//! Stdout carries exactly one JSON object per command; logs go to stderr and
//! are filtered by `SADP_LOG` (`error`, `warn`, `info`, `debug`).
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 agent error,
//! 4 training divergence, 5 comparison run with failed cells.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::accountant::{PrivacyLedger, DEFAULT_DELTA};
use crate::corpus::{load_corpus, split_holdout, word_count, CorpusFormat, Document, Vocabulary};
use crate::evalx::{emit, run_matrix, ArmSpec, Dataset, DatasetOptions, ReportFormat};
use crate::noise_policy::{annotate_documents, NoisePolicy};
use crate::pii_detect::{AgentClient, AgentError, Gazetteer, PiiRegistry, PiiSpan, RuleDetector};
use crate::scoring::{score_all, FreqDenominator, SensitivityReport, Weights};
use crate::trainer::{save_checkpoint, train, Arm, OptimizerKind, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Agent(#[from] AgentError),
    #[error("{0}")]
    Diverged(String),
    #[error("{failed} of {total} comparison runs failed")]
    Matrix { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Agent(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Matrix { .. } => 5,
        }
    }
}

fn input<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Input(format!("{context}: {e}"))
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sadp", version, about = "Sensitivity-aware adaptive DP training pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect PII spans; writes one JSON line per span.
    Detect(DetectArgs),
    /// Score PII types from a spans file.
    Score(ScoreArgs),
    /// Attach per-token scores and noise multipliers.
    Annotate(AnnotateArgs),
    /// Train one arm; writes metrics, ledger and checkpoint.
    Train(TrainArgs),
    /// Privacy cost of a fixed number of uniform Gaussian steps.
    Account(AccountArgs),
    /// Multi-seed comparison of all arms.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// plain_text_lines or delimited
    #[arg(long, default_value = "plain_text_lines")]
    pub format: CorpusFormat,
}

#[derive(Debug, Args, Default)]
pub struct RegistryArgs {
    /// PII registry JSON; the bundled registry when omitted.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Name list for PERSON_NAME, one per line; the bundled list when omitted.
    #[arg(long)]
    pub names: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub registry: RegistryArgs,
    /// Use an extraction service at this URL instead of the rule detector.
    #[arg(long)]
    pub agent: Option<String>,
    /// Agent request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    pub agent_timeout: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub spans: PathBuf,
    #[command(flatten)]
    pub registry: RegistryArgs,
    /// Comma-separated frequency, linkability and datatype weights.
    #[arg(long)]
    pub weights: Option<Weights>,
    /// pii_total or word_total
    #[arg(long)]
    pub freq_denominator: Option<FreqDenominator>,
    /// Corpus for the word_total denominator.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "plain_text_lines")]
    pub format: CorpusFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub spans: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Noise policy JSON; every field is required.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub vocab_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Training flags. Every flag left unset falls back to the config file and
/// then to the built-in default.
#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    /// Run configuration JSON (see `RunConfig`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub arm: Option<Arm>,
    /// Noise multiplier of the uniform DP-SGD arm.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Poisson sample rate.
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Comma-separated Rényi orders.
    #[arg(long, value_delimiter = ',')]
    pub alpha_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub amplify_subsampling: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Fraction of documents held out for evaluation.
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub adam: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub spans: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AccountArgs {
    #[arg(long)]
    pub sigma: f64,
    #[arg(long)]
    pub steps: u64,
    #[arg(long, default_value_t = 0.1)]
    pub q: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, value_delimiter = ',')]
    pub alpha_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub amplify_subsampling: bool,
    /// Also write the ledger JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out: PathBuf,
}

/// One dataset of a comparison run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    /// Relative paths resolve against the config file's directory.
    pub corpus: PathBuf,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
    #[serde(default)]
    pub label_field: Option<String>,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::PlainTextLines
}

/// Everything tunable, as read from `--config`. Unknown keys are rejected;
/// command-line flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub registry: Option<PathBuf>,
    pub names: Option<PathBuf>,
    pub weights: Weights,
    pub freq_denominator: FreqDenominator,
    pub vocab_size: usize,
    pub holdout: f64,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub datasets: Vec<DatasetSpec>,
    pub arms: Vec<ArmSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            registry: None,
            names: None,
            weights: Weights::default(),
            freq_denominator: FreqDenominator::PiiTotal,
            vocab_size: 512,
            holdout: 0.1,
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2],
            datasets: Vec::new(),
            arms: ArmSpec::standard(),
        }
    }
}

impl RunConfig {
    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = fs::read_to_string(path).map_err(input(format!("cannot read config {}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&raw).map_err(input(format!("invalid config {}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.registry.as_mut().map(resolve);
        config.names.as_mut().map(resolve);
        for d in &mut config.datasets {
            resolve(&mut d.corpus);
        }
        Ok(config)
    }

    fn dataset_options(&self, label_field: Option<String>) -> DatasetOptions {
        DatasetOptions {
            vocab_size: self.vocab_size,
            holdout: self.holdout,
            weights: self.weights,
            freq_denominator: self.freq_denominator,
            label_field,
        }
    }
}

fn apply_flags(config: &mut RunConfig, flags: &TrainFlags) -> Result<(), CliError> {
    if let Some(p) = &flags.policy {
        config.train.policy = load_policy(p)?;
    }
    let t = &mut config.train;
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(flags.arm, t.arm);
    set!(flags.sigma, t.sigma);
    set!(flags.seed, t.seed);
    set!(flags.epochs, t.epochs);
    set!(flags.batch_size, t.batch_size);
    set!(flags.seq_len, t.seq_len);
    set!(flags.q, t.sample_rate);
    set!(flags.delta, t.delta);
    set!(flags.alpha_grid, t.alpha_grid);
    set!(flags.lr, t.learning_rate);
    set!(flags.dim, t.dim);
    set!(flags.vocab_size, config.vocab_size);
    set!(flags.holdout, config.holdout);
    if flags.max_steps.is_some() {
        t.max_steps = flags.max_steps;
    }
    if flags.amplify_subsampling {
        t.amplify_subsampling = true;
    }
    if flags.adam {
        t.optimizer = OptimizerKind::Adam;
    }
    config.train.validate().map_err(|e| CliError::Input(e.to_string()))
}

fn load_policy(path: &Path) -> Result<NoisePolicy, CliError> {
    NoisePolicy::load(path).map_err(|e| CliError::Input(e.to_string()))
}

fn load_registry(args: &RegistryArgs) -> Result<PiiRegistry, CliError> {
    match &args.registry {
        Some(p) => PiiRegistry::load(p).map_err(|e| CliError::Input(e.to_string())),
        None => Ok(PiiRegistry::default_registry()),
    }
}

fn load_detector(args: &RegistryArgs) -> Result<RuleDetector, CliError> {
    let registry = load_registry(args)?;
    let mut gazetteer = Gazetteer::default_names();
    if let Some(p) = &args.names {
        gazetteer = Gazetteer::default();
        gazetteer
            .load_into("PERSON_NAME", p)
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    RuleDetector::new(&registry, &gazetteer).map_err(|e| CliError::Input(e.to_string()))
}

fn load_docs(corpus: &Path, format: CorpusFormat) -> Result<(Vec<Document>, usize), CliError> {
    let loaded = load_corpus(corpus, format).map_err(|e| CliError::Input(e.to_string()))?;
    Ok((loaded.documents, loaded.skipped.len()))
}

/// Reads a spans file written by `detect`.
pub fn read_spans(path: &Path) -> Result<Vec<PiiSpan>, CliError> {
    let file = fs::File::open(path).map_err(input(format!("cannot read spans {}", path.display())))?;
    let mut spans = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(input(path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        spans.push(serde_json::from_str(&line).map_err(input(format!("{}:{}", path.display(), i + 1)))?);
    }
    Ok(spans)
}

pub fn write_spans(path: &Path, spans: &[PiiSpan]) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for s in spans {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

fn read_report(path: &Path) -> Result<SensitivityReport, CliError> {
    let raw = fs::read_to_string(path).map_err(input(format!("cannot read report {}", path.display())))?;
    serde_json::from_str(&raw).map_err(input(format!("invalid report {}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    fs::write(path, s).map_err(input(format!("cannot write {}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(input(format!("cannot create {}", path.display())))
}

fn cmd_detect(args: &DetectArgs) -> Result<Value, CliError> {
    let detector = load_detector(&args.registry)?;
    let (docs, skipped) = load_docs(&args.corpus.corpus, args.corpus.format)?;
    let mut spans = Vec::new();
    let mut unknown = 0;
    let mut unaligned = 0;
    match &args.agent {
        None => {
            for d in &docs {
                spans.extend(detector.detect(d));
            }
        }
        Some(url) => {
            let client = AgentClient::with_timeout(url.clone(), Duration::from_secs(args.agent_timeout));
            for d in &docs {
                let found = detect_with_retry(&client, d, detector.registry())?;
                unknown += found.unknown_types;
                unaligned += found.unaligned;
                spans.extend(found.spans);
            }
        }
    }
    write_spans(&args.out, &spans).map_err(input(format!("cannot write {}", args.out.display())))?;
    let mut by_type: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &spans {
        *by_type.entry(&s.pii_type).or_default() += 1;
    }
    Ok(json!({
        "command": "detect",
        "detector": if args.agent.is_some() { "agent" } else { "rules" },
        "documents": docs.len(),
        "skipped_rows": skipped,
        "spans": spans.len(),
        "by_type": by_type,
        "agent_unknown_types": unknown,
        "agent_unaligned": unaligned,
        "out": args.out,
    }))
}

const AGENT_ATTEMPTS: usize = 3;

fn detect_with_retry(
    client: &AgentClient,
    doc: &Document,
    registry: &PiiRegistry,
) -> Result<crate::pii_detect::AgentDetection, CliError> {
    let mut attempt = 1;
    loop {
        match client.detect(doc, registry) {
            Ok(found) => return Ok(found),
            Err(e) if e.is_retryable() && attempt < AGENT_ATTEMPTS => {
                log::warn!("{}: attempt {attempt} failed: {e}", doc.doc_id);
                attempt += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn cmd_score(args: &ScoreArgs) -> Result<Value, CliError> {
    let registry = load_registry(&args.registry)?;
    let spans = read_spans(&args.spans)?;
    let weights = args.weights.unwrap_or_default();
    let denominator = args.freq_denominator.unwrap_or_default();
    let words = match (denominator, &args.corpus) {
        (FreqDenominator::WordTotal, Some(c)) => word_count(&load_docs(c, args.format)?.0),
        (FreqDenominator::WordTotal, None) => {
            return Err(CliError::Input("--freq-denominator word_total needs --corpus".into()))
        }
        _ => 0,
    };
    let report = score_all(&spans, &registry, &weights, denominator, words)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.spans.display())))?;
    write_json(&args.out, &report)?;
    let finals: BTreeMap<&str, f64> = report.types.iter().map(|t| (t.pii_type.as_str(), t.s_final)).collect();
    Ok(json!({
        "command": "score",
        "n_total": report.n_total,
        "weights": report.weights,
        "s_final": finals,
        "out": args.out,
    }))
}

fn cmd_annotate(args: &AnnotateArgs) -> Result<Value, CliError> {
    let (docs, _) = load_docs(&args.corpus.corpus, args.corpus.format)?;
    let spans = read_spans(&args.spans)?;
    let report = read_report(&args.report)?;
    let policy = match &args.policy {
        Some(p) => load_policy(p)?,
        None => NoisePolicy::default(),
    };
    let vocab = Vocabulary::build(&docs, args.vocab_size).map_err(|e| CliError::Input(e.to_string()))?;
    let annotated = annotate_documents(&docs, &spans, &vocab, Some(&report), &policy)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let mut out = io::BufWriter::new(
        fs::File::create(&args.out).map_err(input(format!("cannot write {}", args.out.display())))?,
    );
    let mut tiers = crate::dp_core::TierCounts::default();
    for a in &annotated {
        for t in a.tiers(&policy).map_err(|e| CliError::Input(e.to_string()))? {
            tiers.add(t);
        }
        serde_json::to_writer(&mut out, a).map_err(input("serialize"))?;
        out.write_all(b"\n").map_err(input("write"))?;
    }
    out.flush().map_err(input("write"))?;
    Ok(json!({
        "command": "annotate",
        "sequences": annotated.len(),
        "tokens": tiers.total(),
        "tiers": tiers,
        "out": args.out,
    }))
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn cmd_train(args: &TrainArgs) -> Result<Value, CliError> {
    let mut config = match &args.flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_flags(&mut config, &args.flags)?;
    let (docs, _) = load_docs(&args.corpus.corpus, args.corpus.format)?;
    let spans = read_spans(&args.spans)?;
    let report = read_report(&args.report)?;
    let (train_docs, held) = split_holdout(&docs, config.holdout);
    if train_docs.is_empty() {
        return Err(CliError::Input(format!("{} has no training documents", args.corpus.corpus.display())));
    }
    let vocab = Vocabulary::build(&train_docs, config.vocab_size).map_err(|e| CliError::Input(e.to_string()))?;
    let records = annotate_documents(&train_docs, &spans, &vocab, Some(&report), &config.train.policy)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let eval: Vec<_> = held.iter().map(|d| vocab.tokenize(d)).collect();

    let out = train(&records, &eval, vocab.len(), &config.train)?;

    create_dir(&args.out)?;
    let metrics_path = args.out.join("metrics.csv");
    let mut buf = Vec::new();
    out.metrics
        .write_csv(&mut buf, Some(&format!("generated_at={}", timestamp())))
        .map_err(input("metrics"))?;
    fs::write(&metrics_path, buf).map_err(input(format!("cannot write {}", metrics_path.display())))?;
    let ckpt = args.out.join("model.ckpt");
    save_checkpoint(&out.params, &ckpt).map_err(input(format!("cannot write {}", ckpt.display())))?;
    write_json(&args.out.join("vocab.json"), &vocab)?;
    write_json(&args.out.join("config.json"), &config)?;

    let ledger_path = args.out.join("ledger.json");
    let conversion = match &out.ledger {
        Some(l) => {
            write_json(&ledger_path, &l.export())?;
            Some(l.convert().map_err(|e| CliError::Input(e.to_string()))?)
        }
        None => {
            // a stale ledger from an earlier DP run would be misleading
            if ledger_path.exists() {
                fs::remove_file(&ledger_path).map_err(input(ledger_path.display()))?;
            }
            None
        }
    };
    Ok(json!({
        "command": "train",
        "arm": config.train.arm,
        "seed": config.train.seed,
        "steps": out.steps,
        "accuracy": out.final_metrics.accuracy,
        "perplexity": out.final_metrics.perplexity,
        "epsilon_min": conversion.as_ref().map(|c| c.epsilon),
        "epsilon_at_32": conversion.as_ref().and_then(|c| c.epsilon_at_32),
        "non_private": conversion.as_ref().and_then(|c| c.non_private.clone()),
        "tiers": out.tiers,
        "out": args.out,
    }))
}

fn cmd_account(args: &AccountArgs) -> Result<Value, CliError> {
    let orders = args.alpha_grid.clone().unwrap_or_else(crate::accountant::default_orders);
    let mut ledger = PrivacyLedger::new(&orders, args.delta)
        .map_err(|e| CliError::Input(e.to_string()))?
        .amplify_subsampling(args.amplify_subsampling);
    for _ in 0..args.steps {
        ledger
            .record_step(&[args.sigma], args.q)
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    let export = ledger.export();
    if let Some(p) = &args.out {
        write_json(p, &export)?;
    }
    let conv = ledger.convert().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(json!({
        "command": "account",
        "sigma": args.sigma,
        "steps": args.steps,
        "q": args.q,
        "delta": args.delta,
        "amplify_subsampling": args.amplify_subsampling,
        "epsilon": conv.epsilon,
        "argmin_order": conv.argmin_order,
        "epsilon_at_32": conv.epsilon_at_32,
        "non_private": conv.non_private,
    }))
}

fn cmd_compare(args: &CompareArgs) -> Result<Value, CliError> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seeds) = &args.seeds {
        config.seeds = seeds.clone();
    }
    if config.datasets.is_empty() {
        return Err(CliError::Input(format!("{} lists no datasets", args.config.display())));
    }
    config.train.validate().map_err(|e| CliError::Input(e.to_string()))?;
    let detector = load_detector(&RegistryArgs {
        registry: config.registry.clone(),
        names: config.names.clone(),
    })?;
    let mut datasets = Vec::new();
    for spec in &config.datasets {
        let (docs, _) = load_docs(&spec.corpus, spec.format)?;
        let ds = Dataset::from_documents(
            &spec.name,
            &docs,
            &detector,
            &config.train.policy,
            &config.dataset_options(spec.label_field.clone()),
        )
        .map_err(|e| CliError::Input(e.to_string()))?;
        log::info!("{}: {} records, PII density {:.4}", ds.name, ds.train.len(), ds.pii_density());
        datasets.push(ds);
    }
    let report = run_matrix(&datasets, &config.arms, &config.train, &config.seeds);
    create_dir(&args.out)?;
    let mut outputs = Vec::new();
    for format in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown] {
        let path = args.out.join(format!("report.{}", format.extension()));
        fs::write(&path, emit(&report, format)).map_err(input(format!("cannot write {}", path.display())))?;
        outputs.push(path);
    }
    let total = datasets.len() * config.arms.len() * config.seeds.len();
    if !report.failures.is_empty() {
        return Err(CliError::Matrix {
            failed: report.failures.len(),
            total,
        });
    }
    Ok(json!({
        "command": "compare",
        "config_fingerprint": report.config_fingerprint,
        "rows": report.rows.len(),
        "runs": total,
        "outputs": outputs,
    }))
}

/// Runs one command and returns its stdout object.
pub fn execute(cli: &Cli) -> Result<Value, CliError> {
    match &cli.command {
        Command::Detect(a) => cmd_detect(a),
        Command::Score(a) => cmd_score(a),
        Command::Annotate(a) => cmd_annotate(a),
        Command::Train(a) => cmd_train(a),
        Command::Account(a) => cmd_account(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

/// Parses arguments, runs the command, prints the JSON result or error, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("SADP_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(v) => {
            println!("{v}");
            0
        }
        Err(e) => {
            log::error!("{e}");
            println!("{}", json!({ "error": e.to_string(), "exit_code": e.exit_code() }));
            e.exit_code()
        }
    }
}
