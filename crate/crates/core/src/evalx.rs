//! Multi-seed arm comparison.
//!
//! [`run_matrix`] trains every (dataset, arm, seed) cell, aggregates mean and
//! sample standard deviation over seeds, and keeps the privacy cost each DP
//! arm was actually charged. [`emit`] renders the report as CSV, JSON or a
//! markdown table.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{split_holdout, Document, TokenSequence, Vocabulary};
use crate::noise_policy::{annotate_documents, AnnotatedSequence, NoisePolicy, PolicyError};
use crate::pii_detect::{PiiSpan, RuleDetector};
use crate::scoring::{score_all, FreqDenominator, ScoringError, SensitivityReport, Weights};
use crate::trainer::{evaluate, field_accuracy, train, Arm, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("dataset `{0}` has no training documents")]
    Empty(String),
    #[error("unknown report format `{0}` (csv, json, markdown)")]
    Format(String),
}

/// A tokenized, annotated corpus with its held-out split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub vocab: Vocabulary,
    pub train: Vec<AnnotatedSequence>,
    pub eval: Vec<TokenSequence>,
    /// When set, accuracy is measured only at positions predicting this
    /// field of a flattened delimited record.
    pub label_field: Option<String>,
    pub report: Option<SensitivityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetOptions {
    pub vocab_size: usize,
    pub holdout: f64,
    pub weights: Weights,
    pub freq_denominator: FreqDenominator,
    pub label_field: Option<String>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            vocab_size: 512,
            holdout: 0.1,
            weights: Weights::default(),
            freq_denominator: FreqDenominator::PiiTotal,
            label_field: None,
        }
    }
}

impl Dataset {
    /// Splits off the held-out documents, builds the vocabulary on the
    /// training side, detects and scores PII there, and annotates.
    pub fn from_documents(
        name: &str,
        docs: &[Document],
        detector: &RuleDetector,
        policy: &NoisePolicy,
        options: &DatasetOptions,
    ) -> Result<Self, EvalError> {
        let (train_docs, held) = split_holdout(docs, options.holdout);
        if train_docs.is_empty() {
            return Err(EvalError::Empty(name.to_string()));
        }
        let vocab = Vocabulary::build(&train_docs, options.vocab_size)?;
        let spans: Vec<PiiSpan> = train_docs.iter().flat_map(|d| detector.detect(d)).collect();
        let words = crate::corpus::word_count(&train_docs);
        let report = match score_all(&spans, detector.registry(), &options.weights, options.freq_denominator, words) {
            Ok(r) => Some(r),
            Err(ScoringError::EmptyCorpus) => None,
            Err(e) => return Err(e.into()),
        };
        let train = annotate_documents(&train_docs, &spans, &vocab, report.as_ref(), policy)?;
        let eval = held.iter().map(|d| vocab.tokenize(d)).collect();
        Ok(Dataset {
            name: name.to_string(),
            vocab,
            train,
            eval,
            label_field: options.label_field.clone(),
            report,
        })
    }

    /// Fraction of training tokens with a nonzero score.
    pub fn pii_density(&self) -> f64 {
        let total: usize = self.train.iter().map(AnnotatedSequence::len).sum();
        let pii: usize = self.train.iter().map(|a| a.scores.iter().filter(|&&s| s > 0.0).count()).sum();
        if total == 0 {
            0.0
        } else {
            pii as f64 / total as f64
        }
    }
}

/// One column of the comparison: an arm plus the uniform σ it runs with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub label: String,
    pub arm: Arm,
    #[serde(default)]
    pub sigma: Option<f64>,
}

impl ArmSpec {
    pub fn new(label: &str, arm: Arm, sigma: Option<f64>) -> Self {
        ArmSpec {
            label: label.to_string(),
            arm,
            sigma,
        }
    }

    /// No-DP, SA-ADP, and uniform DP-SGD at σ = 2 and σ = 3.
    pub fn standard() -> Vec<ArmSpec> {
        vec![
            ArmSpec::new("no_dp", Arm::NoDp, None),
            ArmSpec::new("sa_adp", Arm::SaAdp, None),
            ArmSpec::new("dp_sgd_sigma2", Arm::DpSgdUniform, Some(2.0)),
            ArmSpec::new("dp_sgd_sigma3", Arm::DpSgdUniform, Some(3.0)),
        ]
    }

    fn config(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            arm: self.arm,
            sigma: self.sigma.unwrap_or(base.sigma),
            seed,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub arm: String,
    pub seed: u64,
    pub accuracy: f64,
    pub perplexity: f64,
    pub epsilon_min: Option<f64>,
    pub epsilon_at_32: Option<f64>,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub dataset: String,
    pub arm: String,
    pub seed: u64,
    pub error: String,
}

/// Aggregate over seeds. Epsilon is the largest value charged to any seed; an
/// infinite value (a step that added no noise) is serialized as `null` with
/// `non_private = true`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub arm: String,
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub perplexity: f64,
    pub perplexity_std: f64,
    pub epsilon_min: Option<f64>,
    pub epsilon_at_32: Option<f64>,
    pub non_private: bool,
    pub runs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config_fingerprint: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
    pub runs: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
}

impl ComparisonReport {
    pub fn row(&self, dataset: &str, arm: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.dataset == dataset && r.arm == arm)
    }
}

/// Short hex digest of the serialized training config and arm list.
pub fn fingerprint(config: &TrainConfig, arms: &[ArmSpec]) -> String {
    let json = serde_json::to_vec(&(config, arms)).expect("config serializes");
    Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_one(dataset: &Dataset, spec: &ArmSpec, base: &TrainConfig, seed: u64) -> Result<RunResult, TrainError> {
    let config = spec.config(base, seed);
    let out = train(&dataset.train, &dataset.eval, dataset.vocab.len(), &config)?;
    let eval_set: Vec<TokenSequence>;
    let eval = if dataset.eval.is_empty() {
        eval_set = dataset.train.iter().map(|a| a.seq.clone()).collect();
        &eval_set
    } else {
        &dataset.eval
    };
    let m = evaluate(&out.params, eval, config.seq_len)?;
    let accuracy = match &dataset.label_field {
        Some(field) => field_accuracy(&out.params, eval, &dataset.vocab, field, config.seq_len).unwrap_or(f64::NAN),
        None => m.accuracy,
    };
    let conv = match &out.ledger {
        Some(l) => Some(l.convert()?),
        None => None,
    };
    Ok(RunResult {
        dataset: dataset.name.clone(),
        arm: spec.label.clone(),
        seed,
        accuracy,
        perplexity: m.perplexity,
        epsilon_min: conv.as_ref().map(|c| c.epsilon),
        epsilon_at_32: conv.as_ref().map(|c| c.epsilon_at_32.unwrap_or(f64::INFINITY)),
        steps: out.steps,
    })
}

/// Trains every (dataset, arm, seed) cell in that nesting order. Failed cells
/// are recorded and skipped; the caller decides how to surface them.
pub fn run_matrix(datasets: &[Dataset], arms: &[ArmSpec], config: &TrainConfig, seeds: &[u64]) -> ComparisonReport {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for ds in datasets {
        for spec in arms {
            let mut cell = Vec::new();
            let mut failed = 0;
            for &seed in seeds {
                match run_one(ds, spec, config, seed) {
                    Ok(r) => cell.push(r),
                    Err(e) => {
                        log::warn!("{} / {} / seed {seed} failed: {e}", ds.name, spec.label);
                        failed += 1;
                        failures.push(RunFailure {
                            dataset: ds.name.clone(),
                            arm: spec.label.clone(),
                            seed,
                            error: e.to_string(),
                        });
                    }
                }
            }
            let acc: Vec<f64> = cell.iter().map(|r| r.accuracy).collect();
            let ppl: Vec<f64> = cell.iter().map(|r| r.perplexity).collect();
            let (accuracy, accuracy_std) = mean_std(&acc);
            let (perplexity, perplexity_std) = mean_std(&ppl);
            let worst = |f: fn(&RunResult) -> Option<f64>| {
                cell.iter().filter_map(f).fold(None, |acc: Option<f64>, e| Some(acc.map_or(e, |a| a.max(e))))
            };
            let epsilon_min = worst(|r| r.epsilon_min);
            let epsilon_at_32 = worst(|r| r.epsilon_at_32);
            rows.push(ReportRow {
                dataset: ds.name.clone(),
                arm: spec.label.clone(),
                accuracy,
                accuracy_std,
                perplexity,
                perplexity_std,
                non_private: spec.arm.is_private() && epsilon_min.is_some_and(f64::is_infinite),
                epsilon_min,
                epsilon_at_32,
                runs: cell.len(),
                failures: failed,
            });
            runs.extend(cell);
        }
    }
    ComparisonReport {
        config_fingerprint: fingerprint(config, arms),
        seeds: seeds.to_vec(),
        rows,
        runs,
        failures,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" | "markdown_table" => Ok(ReportFormat::Markdown),
            other => Err(EvalError::Format(other.to_string())),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "dataset",
    "arm",
    "accuracy",
    "perplexity",
    "epsilon_min",
    "epsilon_at_32",
    "accuracy_std",
    "perplexity_std",
    "runs",
    "failures",
];

fn eps_cell(e: Option<f64>) -> String {
    match e {
        None => String::new(),
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) => x.to_string(),
    }
}

pub fn emit(report: &ComparisonReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(REPORT_COLUMNS).expect("in-memory write");
            for r in &report.rows {
                w.write_record([
                    r.dataset.clone(),
                    r.arm.clone(),
                    r.accuracy.to_string(),
                    r.perplexity.to_string(),
                    eps_cell(r.epsilon_min),
                    eps_cell(r.epsilon_at_32),
                    r.accuracy_std.to_string(),
                    r.perplexity_std.to_string(),
                    r.runs.to_string(),
                    r.failures.to_string(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
        }
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Markdown => {
            let mut s = String::new();
            s.push_str("| Dataset | Arm | Accuracy | Perplexity | ε (best order) | ε (α = 32) |\n");
            s.push_str("|---|---|---|---|---|---|\n");
            let eps = |e: Option<f64>| match e {
                None => "-".to_string(),
                Some(x) if x.is_infinite() => "∞".to_string(),
                Some(x) => format!("{x:.4}"),
            };
            for r in &report.rows {
                writeln!(
                    s,
                    "| {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {} | {} |",
                    r.dataset,
                    r.arm,
                    r.accuracy,
                    r.accuracy_std,
                    r.perplexity,
                    r.perplexity_std,
                    eps(r.epsilon_min),
                    eps(r.epsilon_at_32)
                )
                .expect("string write");
            }
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn format_names() {
        assert_eq!("md".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert!("xml".parse::<ReportFormat>().is_err());
    }

    #[test]
    fn fingerprint_tracks_config() {
        let arms = ArmSpec::standard();
        let a = fingerprint(&TrainConfig::default(), &arms);
        assert_eq!(a, fingerprint(&TrainConfig::default(), &arms));
        let other = TrainConfig {
            epochs: 9,
            ..TrainConfig::default()
        };
        assert_ne!(a, fingerprint(&other, &arms));
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn eps_cells() {
        assert_eq!(eps_cell(None), "");
        assert_eq!(eps_cell(Some(f64::INFINITY)), "inf");
        assert_eq!(eps_cell(Some(1.5)), "1.5");
    }
}
