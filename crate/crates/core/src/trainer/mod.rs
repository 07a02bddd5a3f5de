//! Three-arm training loop.
//!
//! * `no_dp`: plain mean-gradient steps.
//! * `dp_sgd_uniform`: per-record clipping and one aggregate Gaussian draw
//!   with a fixed σ.
//! * `sa_adp`: per-position clipping and noise chosen by token sensitivity.
//!
//! Batches are Poisson-sampled: every record joins a step independently with
//! probability `q`. An epoch is `round(1/q)` steps.
//!
//! Position `i` of a window predicts token `i + 1` from token `i`, so its
//! gradient carries information about both tokens. Its sensitivity score is the
//! larger of the two tokens' scores.

mod checkpoint;
mod metrics;
mod model;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use metrics::{Metrics, MetricsLog, MetricsRow, METRICS_HEADER};
pub use model::{argmax, forward_loss, per_token_grads, token_grad_into, token_terms, ModelParams};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant::{default_orders, AccountError, PrivacyLedger, DEFAULT_DELTA};
use crate::corpus::{TokenSequence, Vocabulary};
use crate::dp_core::{clip_slice, noise_slice, perturb_token, PairwiseSum, RngStream, TierCounts};
use crate::noise_policy::{AnnotatedSequence, NoisePolicy, PolicyError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error("token id {token} outside vocabulary of {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("window of {0} tokens has no prediction terms")]
    WindowTooShort(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("no evaluation positions")]
    EmptyEval,
    #[error("gradient error: {0}")]
    Dp(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Account(#[from] AccountError),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl From<crate::dp_core::DpError> for TrainError {
    fn from(e: crate::dp_core::DpError) -> Self {
        TrainError::Dp(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    NoDp,
    DpSgdUniform,
    SaAdp,
}

impl Arm {
    pub fn is_private(self) -> bool {
        self != Arm::NoDp
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::NoDp => "no_dp",
            Arm::DpSgdUniform => "dp_sgd_uniform",
            Arm::SaAdp => "sa_adp",
        })
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no_dp" => Ok(Arm::NoDp),
            "dp_sgd_uniform" => Ok(Arm::DpSgdUniform),
            "sa_adp" => Ok(Arm::SaAdp),
            other => Err(format!("unknown arm `{other}` (no_dp, dp_sgd_uniform, sa_adp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Records per reduction chunk. Batch membership itself comes from
    /// Poisson sampling at `sample_rate`.
    pub batch_size: usize,
    pub seq_len: usize,
    pub epochs: usize,
    pub sample_rate: f64,
    pub arm: Arm,
    /// Noise multiplier of the uniform DP-SGD arm.
    pub sigma: f64,
    pub policy: NoisePolicy,
    pub seed: u64,
    pub dim: usize,
    pub optimizer: OptimizerKind,
    pub max_steps: Option<u64>,
    pub delta: f64,
    pub alpha_grid: Vec<f64>,
    pub amplify_subsampling: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 16,
            seq_len: 64,
            epochs: 3,
            sample_rate: 0.1,
            arm: Arm::SaAdp,
            sigma: 2.0,
            policy: NoisePolicy::default(),
            seed: 0,
            dim: 32,
            optimizer: OptimizerKind::Sgd,
            max_steps: None,
            delta: DEFAULT_DELTA,
            alpha_grid: default_orders(),
            amplify_subsampling: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.dim == 0 {
            return bad("batch_size, epochs and dim must be positive");
        }
        if self.seq_len < 2 {
            return bad("seq_len must be at least 2");
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return bad("sample_rate must lie in (0, 1]");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be >= 0");
        }
        self.policy.validate()?;
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> u64 {
        (1.0 / self.sample_rate).round().max(1.0) as u64
    }
}

/// Non-overlapping `seq_len` windows; a trailing window is kept if it has at
/// least two tokens.
pub fn windows(len: usize, seq_len: usize) -> Vec<(usize, usize)> {
    (0..len)
        .step_by(seq_len)
        .map(|start| (start, (start + seq_len).min(len)))
        .filter(|(s, e)| e - s >= 2)
        .collect()
}

/// Per-position score: the larger score of the input and target token.
pub fn position_scores(scores: &[f64]) -> Vec<f64> {
    scores.windows(2).map(|p| p[0].max(p[1])).collect()
}

pub fn evaluate(params: &ModelParams, seqs: &[TokenSequence], seq_len: usize) -> Result<Metrics, TrainError> {
    let mut correct = 0u64;
    let mut nll = 0.0;
    let mut positions = 0u64;
    for seq in seqs {
        for (s, e) in windows(seq.len(), seq_len) {
            let window = &seq.tokens[s..e];
            let (_, losses) = forward_loss(params, window)?;
            for (pair, loss) in window.windows(2).zip(losses) {
                if argmax(&params.logits(pair[0])) == pair[1] {
                    correct += 1;
                }
                nll += loss;
                positions += 1;
            }
        }
    }
    if positions == 0 {
        return Err(TrainError::EmptyEval);
    }
    Ok(Metrics {
        accuracy: correct as f64 / positions as f64,
        perplexity: (nll / positions as f64).exp(),
        positions,
    })
}

/// Next-token accuracy restricted to positions whose target word starts with
/// `field=` (the label column of a flattened delimited record).
pub fn field_accuracy(
    params: &ModelParams,
    seqs: &[TokenSequence],
    vocab: &Vocabulary,
    field: &str,
    seq_len: usize,
) -> Option<f64> {
    let prefix = format!("{field}=");
    let mut hits = 0u64;
    let mut total = 0u64;
    for seq in seqs {
        for (s, e) in windows(seq.len(), seq_len) {
            for pair in seq.tokens[s..e].windows(2) {
                if vocab.surface(pair[1]).is_some_and(|w| w.starts_with(&prefix)) {
                    total += 1;
                    if argmax(&params.logits(pair[0])) == pair[1] {
                        hits += 1;
                    }
                }
            }
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub metrics: MetricsLog,
    pub ledger: Option<PrivacyLedger>,
    pub tiers: TierCounts,
    pub steps: u64,
    pub final_metrics: Metrics,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let (c1, c2) = (1.0 - Self::B1.powi(self.t), 1.0 - Self::B2.powi(self.t));
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

struct StepResult {
    grad: Vec<f64>,
    loss: f64,
    tiers: TierCounts,
    sigmas: BTreeSet<u64>,
}

/// Trains one arm. `records` carry per-token sensitivity scores (ignored by
/// the non-adaptive arms); `eval` is the held-out set used for per-epoch
/// metrics, falling back to the training tokens when empty.
pub fn train(
    records: &[AnnotatedSequence],
    eval: &[TokenSequence],
    vocab_size: usize,
    config: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    for r in records {
        if r.scores.len() != r.len() || r.sigmas.len() != r.len() {
            return Err(TrainError::Shape(format!("annotation length mismatch in {}", r.seq.doc_id)));
        }
    }
    let train_seqs: Vec<TokenSequence> = records.iter().map(|r| r.seq.clone()).collect();
    let eval_seqs = if eval.is_empty() { &train_seqs[..] } else { eval };

    let root = RngStream::new(config.seed);
    let mut params = ModelParams::init(vocab_size, config.dim, &root.split(0));
    let mut ledger = match config.arm {
        Arm::NoDp => None,
        _ => Some(
            PrivacyLedger::new(&config.alpha_grid, config.delta)?.amplify_subsampling(config.amplify_subsampling),
        ),
    };
    let mut adam = (config.optimizer == OptimizerKind::Adam).then(|| Adam {
        m: vec![0.0; params.len()],
        v: vec![0.0; params.len()],
        t: 0,
    });

    let record_windows: Vec<Vec<(usize, usize)>> =
        records.iter().map(|r| windows(r.len(), config.seq_len)).collect();
    let mut metrics = MetricsLog::default();
    let mut total_tiers = TierCounts::default();
    let mut steps = 0u64;
    let mut iteration = 0u64;

    'epochs: for epoch in 1..=config.epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0u64;
        let mut epoch_tiers = TierCounts::default();
        for _ in 0..config.steps_per_epoch() {
            if config.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let it = iteration;
            iteration += 1;
            let batch = poisson_batch(&root.split(1).split(it), records.len(), config.sample_rate);
            let Some(result) = batch_gradient(&params, records, &record_windows, &batch, config, &root.split(2).split(it))?
            else {
                continue;
            };
            if !result.loss.is_finite() {
                return Err(TrainError::Diverged {
                    step: steps,
                    loss: result.loss,
                });
            }
            match &mut adam {
                Some(a) => a.step(params.values_mut(), &result.grad, config.learning_rate),
                None => {
                    for (p, g) in params.values_mut().iter_mut().zip(&result.grad) {
                        *p -= config.learning_rate * g;
                    }
                }
            }
            if params.values().iter().any(|p| !p.is_finite()) {
                return Err(TrainError::Diverged {
                    step: steps,
                    loss: f64::NAN,
                });
            }
            if let Some(l) = &mut ledger {
                let sigmas: Vec<f64> = result.sigmas.iter().map(|&b| f64::from_bits(b)).collect();
                l.record_step(&sigmas, config.sample_rate)?;
            }
            epoch_loss += result.loss;
            epoch_steps += 1;
            epoch_tiers.merge(result.tiers);
            steps += 1;
        }
        total_tiers.merge(epoch_tiers);
        let m = evaluate(&params, eval_seqs, config.seq_len)?;
        let conv = ledger.as_ref().and_then(|l| l.convert().ok());
        metrics.rows.push(MetricsRow {
            epoch: epoch as u64,
            step: steps,
            arm: config.arm,
            loss: if epoch_steps > 0 { epoch_loss / epoch_steps as f64 } else { f64::NAN },
            accuracy: m.accuracy,
            perplexity: m.perplexity,
            epsilon_at_32: conv.as_ref().and_then(|c| c.epsilon_at_32).filter(|e| e.is_finite()),
            epsilon_min: conv.as_ref().map(|c| c.epsilon).filter(|e| e.is_finite()),
            tier0: epoch_tiers.none,
            tier_low: epoch_tiers.low,
            tier_high: epoch_tiers.high,
        });
        log::info!(
            "{} epoch {epoch}: step {steps} loss {:.4} acc {:.4} ppl {:.3}",
            config.arm,
            metrics.rows.last().map_or(f64::NAN, |r| r.loss),
            m.accuracy,
            m.perplexity
        );
        if config.max_steps.is_some_and(|ms| steps >= ms) {
            break 'epochs;
        }
    }

    let final_metrics = evaluate(&params, eval_seqs, config.seq_len)?;
    Ok(TrainOutput {
        params,
        metrics,
        ledger,
        tiers: total_tiers,
        steps,
        final_metrics,
    })
}

fn poisson_batch(stream: &RngStream, n: usize, q: f64) -> Vec<usize> {
    let mut rng = stream.rng();
    (0..n).filter(|_| rng.random::<f64>() < q).collect()
}

/// Mean gradient of one Poisson batch for the configured arm. Returns `None`
/// for an empty batch in the arms whose step would be a no-op.
///
/// Per-position gradients are summed pairwise within each record, record
/// sums pairwise within chunks of `batch_size` records, and chunk sums
/// pairwise across the batch.
fn batch_gradient(
    params: &ModelParams,
    records: &[AnnotatedSequence],
    record_windows: &[Vec<(usize, usize)>],
    batch: &[usize],
    config: &TrainConfig,
    noise_root: &RngStream,
) -> Result<Option<StepResult>, TrainError> {
    let dim = params.len();
    let policy = &config.policy;
    let clip_norm = policy.clip_norm;
    let mut tiers = TierCounts::default();
    let mut sigmas = BTreeSet::new();
    let mut loss_sum = 0.0;
    let mut positions = 0usize;
    let mut batch_acc = PairwiseSum::new(dim);
    let mut chunk_acc = PairwiseSum::new(dim);

    for &r in batch {
        let rec = &records[r];
        let mut rec_acc = PairwiseSum::new(dim);
        for (w, &(s, e)) in record_windows[r].iter().enumerate() {
            let window = &rec.seq.tokens[s..e];
            params.check_tokens(window)?;
            let scores = position_scores(&rec.scores[s..e]);
            let stream = noise_root.split(r as u64).split(w as u64);
            for (i, pair) in window.windows(2).enumerate() {
                let sigma = if config.arm == Arm::SaAdp {
                    let tier = policy.tier(scores[i])?;
                    tiers.add(tier);
                    policy.sigma_for(tier)
                } else {
                    0.0
                };
                if sigma > 0.0 {
                    sigmas.insert(sigma.to_bits());
                }
                loss_sum += rec_acc.push_with(|buf| {
                    let nll = token_grad_into(params, pair[0], pair[1], buf);
                    if config.arm == Arm::SaAdp {
                        perturb_token(buf, i, sigma, clip_norm, &stream.split(i as u64))?;
                    }
                    Ok::<_, TrainError>(nll)
                })?;
            }
        }
        let n = rec_acc.len();
        positions += n;
        let mut rec_sum = rec_acc.finish();
        if config.arm == Arm::DpSgdUniform {
            if n == 0 {
                continue;
            }
            rec_sum.iter_mut().for_each(|g| *g /= n as f64);
            clip_slice(&mut rec_sum, clip_norm)?;
        }
        chunk_acc.push(&rec_sum);
        if chunk_acc.len() == config.batch_size {
            let full = std::mem::replace(&mut chunk_acc, PairwiseSum::new(dim));
            batch_acc.push(&full.finish());
        }
    }
    if !chunk_acc.is_empty() {
        batch_acc.push(&chunk_acc.finish());
    }
    let mut grad = batch_acc.finish();

    let loss = if positions > 0 { loss_sum / positions as f64 } else { 0.0 };
    match config.arm {
        Arm::NoDp | Arm::SaAdp => {
            if positions == 0 {
                return Ok(None);
            }
            grad.iter_mut().for_each(|g| *g /= positions as f64);
        }
        Arm::DpSgdUniform => {
            // always noised and always charged, even for an empty batch
            noise_slice(&mut grad, config.sigma, clip_norm, &noise_root.split(u64::MAX))?;
            let expected = (config.sample_rate * records.len() as f64).max(1.0);
            grad.iter_mut().for_each(|g| *g /= expected);
            sigmas.insert(config.sigma.to_bits());
        }
    }
    Ok(Some(StepResult {
        grad,
        loss,
        tiers,
        sigmas,
    }))
}
