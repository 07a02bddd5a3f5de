//! Score-to-noise mapping.
//!
//! A sensitivity score `s` selects one of three noise tiers:
//!
//! | score                     | tier   | σ            |
//! |---------------------------|--------|--------------|
//! | `s < low_min`             | none   | 0            |
//! | `low_min <= s <= low_max` | low    | `sigma_low`  |
//! | `s > low_max`             | high   | `sigma_high` |
//!
//! with defaults `low_min = 0.01`, `low_max = 0.50`, `sigma_low = 2.0`,
//! `sigma_high = 3.0`. The high band starts strictly above `low_max`, so every
//! score in `[0, 1]` maps to exactly one tier.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, TokenSequence, Vocabulary};
use crate::pii_detect::{project_spans, PiiSpan};
use crate::scoring::SensitivityReport;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("sensitivity score {0} outside [0, 1]")]
    Domain(f64),
    #[error("invalid noise policy: {0}")]
    Invalid(String),
    #[error("cannot read policy {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid policy JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("PII type `{0}` has no entry in the sensitivity report")]
    MissingType(String),
    #[error("{tokens} tokens but {assignments} type assignments")]
    Misaligned { tokens: usize, assignments: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    None,
    Low,
    High,
}

/// Noise multipliers, band edges and clip norm. When loaded from a file every
/// field must be present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisePolicy {
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub low_min: f64,
    pub low_max: f64,
    pub clip_norm: f64,
}

impl Default for NoisePolicy {
    fn default() -> Self {
        NoisePolicy {
            sigma_low: 2.0,
            sigma_high: 3.0,
            low_min: 0.01,
            low_max: 0.50,
            clip_norm: 1.0,
        }
    }
}

impl NoisePolicy {
    /// A policy that clips but never adds noise.
    pub fn zero_noise(clip_norm: f64) -> Self {
        NoisePolicy {
            sigma_low: 0.0,
            sigma_high: 0.0,
            clip_norm,
            ..NoisePolicy::default()
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let finite = [self.sigma_low, self.sigma_high, self.low_min, self.low_max, self.clip_norm]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(PolicyError::Invalid("all fields must be finite".into()));
        }
        if !(0.0 <= self.sigma_low && self.sigma_low <= self.sigma_high) {
            return Err(PolicyError::Invalid(format!(
                "need 0 <= sigma_low <= sigma_high, got {} and {}",
                self.sigma_low, self.sigma_high
            )));
        }
        if self.clip_norm <= 0.0 {
            return Err(PolicyError::Invalid(format!("clip_norm must be > 0, got {}", self.clip_norm)));
        }
        if !(0.0 < self.low_min && self.low_min <= self.low_max && self.low_max < 1.0) {
            return Err(PolicyError::Invalid(format!(
                "need 0 < low_min <= low_max < 1, got [{}, {}]",
                self.low_min, self.low_max
            )));
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self, PolicyError> {
        let policy: NoisePolicy = serde_json::from_str(json)?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let raw = fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&raw)
    }

    pub fn tier(&self, s: f64) -> Result<Tier, PolicyError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(PolicyError::Domain(s));
        }
        Ok(if s < self.low_min {
            Tier::None
        } else if s <= self.low_max {
            Tier::Low
        } else {
            Tier::High
        })
    }

    pub fn sigma_for(&self, tier: Tier) -> f64 {
        match tier {
            Tier::None => 0.0,
            Tier::Low => self.sigma_low,
            Tier::High => self.sigma_high,
        }
    }

    pub fn map_score(&self, s: f64) -> Result<f64, PolicyError> {
        self.tier(s).map(|t| self.sigma_for(t))
    }
}

pub fn map_score(s: f64, policy: &NoisePolicy) -> Result<f64, PolicyError> {
    policy.map_score(s)
}

/// Informal per-mechanism budget `C / σ`, for reporting next to the
/// accountant's figure. `None` means σ = 0, i.e. no noise and no guarantee.
pub fn implied_epsilon(clip_norm: f64, sigma: f64) -> Option<f64> {
    (sigma > 0.0).then(|| clip_norm / sigma)
}

/// Tokens paired with their sensitivity scores and noise multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSequence {
    pub seq: TokenSequence,
    pub scores: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl AnnotatedSequence {
    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    /// Every token at score 0 (no PII).
    pub fn unannotated(seq: TokenSequence) -> Self {
        let n = seq.len();
        AnnotatedSequence {
            seq,
            scores: vec![0.0; n],
            sigmas: vec![0.0; n],
        }
    }

    pub fn tiers(&self, policy: &NoisePolicy) -> Result<Vec<Tier>, PolicyError> {
        self.scores.iter().map(|&s| policy.tier(s)).collect()
    }
}

pub fn annotate(
    seq: &TokenSequence,
    assignments: &[Option<String>],
    report: &SensitivityReport,
    policy: &NoisePolicy,
) -> Result<AnnotatedSequence, PolicyError> {
    if assignments.len() != seq.len() {
        return Err(PolicyError::Misaligned {
            tokens: seq.len(),
            assignments: assignments.len(),
        });
    }
    let scores = assignments
        .iter()
        .map(|a| match a {
            None => Ok(0.0),
            Some(t) => report.s_final(t).ok_or_else(|| PolicyError::MissingType(t.clone())),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let sigmas = scores
        .iter()
        .map(|&s| policy.map_score(s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AnnotatedSequence {
        seq: seq.clone(),
        scores,
        sigmas,
    })
}

/// Tokenizes every document, projects its spans onto the tokens and
/// annotates. Without a report (a corpus with no PII) every token gets σ = 0.
pub fn annotate_documents(
    docs: &[Document],
    spans: &[PiiSpan],
    vocab: &Vocabulary,
    report: Option<&SensitivityReport>,
    policy: &NoisePolicy,
) -> Result<Vec<AnnotatedSequence>, PolicyError> {
    let mut by_doc: HashMap<&str, Vec<PiiSpan>> = HashMap::new();
    for s in spans {
        by_doc.entry(s.doc_id.as_str()).or_default().push(s.clone());
    }
    docs.iter()
        .map(|doc| {
            let seq = vocab.tokenize(doc);
            match report {
                None => Ok(AnnotatedSequence::unannotated(seq)),
                Some(report) => {
                    let doc_spans = by_doc.get(doc.doc_id.as_str()).map_or(&[][..], Vec::as_slice);
                    let assignments = project_spans(doc_spans, &seq, |t| report.s_final(t).unwrap_or(0.0))
                        .expect("spans grouped by document");
                    annotate(&seq, &assignments, report, policy)
                }
            }
        })
        .collect()
}
