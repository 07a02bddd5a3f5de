//! Per-type PII sensitivity scores.
//!
//! Every PII type present in the corpus gets three component scores:
//!
//! * rarity, `s_freq = 1 - f / N`, where `f` is the type's occurrence count and
//!   `N` the total PII occurrence count (or, optionally, the corpus word count);
//! * linkability, `s_link ∈ {0, 1}`, from the registry flag;
//! * datatype protection, `s_datatype ∈ {0, 1}`, from the registry flag.
//!
//! They are combined as `s_final = w1·s_freq + w2·s_link + w3·s_datatype` with
//! non-negative weights summing to one, default `(0.4, 0.3, 0.3)`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pii_detect::{PiiRegistry, PiiSpan};

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
const CLAMP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("no PII spans in corpus: sensitivity is undefined and SA-ADP degenerates to No-DP training")]
    EmptyCorpus,
    #[error("frequency score undefined for f={f}, N={n} (need 1 <= f <= N)")]
    InvalidCount { f: u64, n: u64 },
    #[error("weights must be non-negative and sum to 1, got {0:?}")]
    BadWeights([f64; 3]),
    #[error("cannot parse weights `{0}` (expected w1,w2,w3)")]
    WeightSyntax(String),
    #[error("span type `{0}` is not in the registry")]
    UnknownType(String),
    #[error("score component out of range: {0}")]
    OutOfRange(f64),
}

/// Weights for (frequency, linkability, datatype).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Weights([f64; 3]);

impl Weights {
    pub const DEFAULT: Weights = Weights([0.4, 0.3, 0.3]);

    pub fn new(frequency: f64, linkability: f64, datatype: f64) -> Result<Self, ScoringError> {
        let w = [frequency, linkability, datatype];
        let sum: f64 = w.iter().sum();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(ScoringError::BadWeights(w));
        }
        Ok(Weights(w))
    }

    pub fn frequency(&self) -> f64 {
        self.0[0]
    }

    pub fn linkability(&self) -> f64 {
        self.0[1]
    }

    pub fn datatype(&self) -> f64 {
        self.0[2]
    }
}

impl Default for Weights {
    fn default() -> Self {
        Weights::DEFAULT
    }
}

impl TryFrom<[f64; 3]> for Weights {
    type Error = ScoringError;

    fn try_from(w: [f64; 3]) -> Result<Self, Self::Error> {
        Weights::new(w[0], w[1], w[2])
    }
}

impl From<Weights> for [f64; 3] {
    fn from(w: Weights) -> Self {
        w.0
    }
}

impl FromStr for Weights {
    type Err = ScoringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| ScoringError::WeightSyntax(s.to_string()))?;
        match parts.as_slice() {
            [a, b, c] => Weights::new(*a, *b, *c),
            _ => Err(ScoringError::WeightSyntax(s.to_string())),
        }
    }
}

impl fmt::Display for Weights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.0[0], self.0[1], self.0[2])
    }
}

/// What `N` counts in the rarity score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FreqDenominator {
    /// Total number of PII occurrences.
    #[default]
    PiiTotal,
    /// Total number of words in the corpus.
    WordTotal,
}

impl FromStr for FreqDenominator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pii_total" => Ok(FreqDenominator::PiiTotal),
            "word_total" => Ok(FreqDenominator::WordTotal),
            other => Err(format!("unknown frequency denominator `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeScore {
    #[serde(rename = "type")]
    pub pii_type: String,
    pub count: u64,
    pub s_freq: f64,
    pub s_link: f64,
    pub s_datatype: f64,
    pub s_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityReport {
    pub n_total: u64,
    pub weights: Weights,
    #[serde(default)]
    pub freq_denominator: FreqDenominator,
    pub types: Vec<TypeScore>,
}

impl SensitivityReport {
    pub fn get(&self, pii_type: &str) -> Option<&TypeScore> {
        self.types.iter().find(|t| t.pii_type == pii_type)
    }

    pub fn s_final(&self, pii_type: &str) -> Option<f64> {
        self.get(pii_type).map(|t| t.s_final)
    }
}

/// Per-type occurrence counts and their total.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PiiCounts {
    pub per_type: HashMap<String, u64>,
    pub total: u64,
}

pub fn count_pii(spans: &[PiiSpan]) -> PiiCounts {
    let mut counts = PiiCounts::default();
    for span in spans {
        *counts.per_type.entry(span.pii_type.clone()).or_default() += 1;
        counts.total += 1;
    }
    counts
}

pub fn freq_score(f: u64, n: u64) -> Result<f64, ScoringError> {
    if n == 0 || f == 0 || f > n {
        return Err(ScoringError::InvalidCount { f, n });
    }
    Ok(1.0 - f as f64 / n as f64)
}

pub fn final_score(s_freq: f64, s_link: f64, s_datatype: f64, weights: &Weights) -> Result<f64, ScoringError> {
    for x in [s_freq, s_link, s_datatype] {
        if !(0.0..=1.0).contains(&x) {
            return Err(ScoringError::OutOfRange(x));
        }
    }
    let raw = weights.frequency() * s_freq + weights.linkability() * s_link + weights.datatype() * s_datatype;
    let clamped = raw.clamp(0.0, 1.0);
    debug_assert!((clamped - raw).abs() <= CLAMP_TOLERANCE);
    Ok(clamped)
}

/// Scores every registry type that occurs in `spans`, in registry order.
///
/// `word_total` is only consulted when `denominator` is
/// [`FreqDenominator::WordTotal`].
pub fn score_all(
    spans: &[PiiSpan],
    registry: &PiiRegistry,
    weights: &Weights,
    denominator: FreqDenominator,
    word_total: u64,
) -> Result<SensitivityReport, ScoringError> {
    let counts = count_pii(spans);
    if counts.total == 0 {
        return Err(ScoringError::EmptyCorpus);
    }
    if let Some(unknown) = counts.per_type.keys().find(|t| registry.get(t).is_none()) {
        return Err(ScoringError::UnknownType(unknown.clone()));
    }
    let n = match denominator {
        FreqDenominator::PiiTotal => counts.total,
        FreqDenominator::WordTotal => word_total,
    };
    let mut types = Vec::new();
    for pii_type in &registry.types {
        let Some(&f) = counts.per_type.get(&pii_type.name) else {
            continue;
        };
        let s_freq = freq_score(f, n)?;
        let s_link = if pii_type.linkable { 1.0 } else { 0.0 };
        let s_datatype = if pii_type.datatype_protected { 1.0 } else { 0.0 };
        types.push(TypeScore {
            pii_type: pii_type.name.clone(),
            count: f,
            s_freq,
            s_link,
            s_datatype,
            s_final: final_score(s_freq, s_link, s_datatype, weights)?,
        });
    }
    Ok(SensitivityReport {
        n_total: n,
        weights: *weights,
        freq_denominator: denominator,
        types,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spans(kinds: &[(&str, usize)]) -> Vec<PiiSpan> {
        kinds
            .iter()
            .flat_map(|(t, n)| {
                (0..*n).map(move |i| PiiSpan {
                    doc_id: format!("d{i}"),
                    start: 0,
                    end: 1,
                    surface: "x".into(),
                    pii_type: t.to_string(),
                })
            })
            .collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn counts() {
        let c = count_pii(&spans(&[("EMAIL", 5), ("SSN", 1)]));
        assert_eq!(c.per_type["EMAIL"], 5);
        assert_eq!(c.per_type["SSN"], 1);
        assert_eq!(c.total, 6);
        assert_eq!(count_pii(&[]).total, 0);
    }

    #[test]
    fn freq_scores() {
        assert_eq!(freq_score(6, 6).unwrap(), 0.0);
        assert!(close(freq_score(5, 6).unwrap(), 1.0 / 6.0));
        assert!(close(freq_score(1, 6).unwrap(), 5.0 / 6.0));
        assert!(matches!(freq_score(0, 0), Err(ScoringError::InvalidCount { .. })));
        assert!(freq_score(7, 6).is_err());
    }

    #[test]
    fn final_scores() {
        let w = Weights::DEFAULT;
        assert!(close(final_score(1.0, 1.0, 1.0, &w).unwrap(), 1.0));
        assert_eq!(final_score(0.0, 0.0, 0.0, &w).unwrap(), 0.0);
        assert!(close(final_score(5.0 / 6.0, 1.0, 1.0, &w).unwrap(), 0.4 * 5.0 / 6.0 + 0.6));
        assert!((final_score(5.0 / 6.0, 1.0, 1.0, &w).unwrap() - 0.93333).abs() < 1e-5);
    }

    #[test]
    fn weights_validation() {
        assert!(Weights::new(0.5, 0.3, 0.3).is_err());
        assert!(Weights::new(1.2, -0.1, -0.1).is_err());
        assert_eq!("1,0,0".parse::<Weights>().unwrap(), Weights::new(1.0, 0.0, 0.0).unwrap());
        assert!(matches!("1,0".parse::<Weights>(), Err(ScoringError::WeightSyntax(_))));
        assert!(serde_json::from_str::<Weights>("[0.5,0.5,0.5]").is_err());
    }

    #[test]
    fn email_ssn_fixture() {
        let r = score_all(
            &spans(&[("EMAIL", 5), ("SSN", 1)]),
            &PiiRegistry::default_registry(),
            &Weights::DEFAULT,
            FreqDenominator::PiiTotal,
            0,
        )
        .unwrap();
        assert_eq!(r.n_total, 6);
        assert!((r.s_final("EMAIL").unwrap() - 0.3667).abs() < 1e-4);
        assert!((r.s_final("SSN").unwrap() - 0.9333).abs() < 1e-4);
        assert!(close(r.s_final("EMAIL").unwrap(), 0.4 / 6.0 + 0.3));
        assert_eq!(r.types.len(), 2);
    }

    #[test]
    fn single_unflagged_type_scores_zero() {
        let r = score_all(
            &spans(&[("IP_ADDRESS", 4)]),
            &PiiRegistry::default_registry(),
            &Weights::DEFAULT,
            FreqDenominator::PiiTotal,
            0,
        )
        .unwrap();
        assert_eq!(r.s_final("IP_ADDRESS"), Some(0.0));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let err = score_all(&[], &PiiRegistry::default_registry(), &Weights::DEFAULT, FreqDenominator::PiiTotal, 0)
            .unwrap_err();
        assert_eq!(err, ScoringError::EmptyCorpus);
        assert!(err.to_string().contains("No-DP"));
    }

    #[test]
    fn word_total_denominator() {
        let r = score_all(
            &spans(&[("EMAIL", 5), ("SSN", 1)]),
            &PiiRegistry::default_registry(),
            &Weights::DEFAULT,
            FreqDenominator::WordTotal,
            100,
        )
        .unwrap();
        assert_eq!(r.n_total, 100);
        assert!(close(r.get("EMAIL").unwrap().s_freq, 0.95));
    }

    #[test]
    fn report_json_field_names() {
        let r = score_all(
            &spans(&[("SSN", 1)]),
            &PiiRegistry::default_registry(),
            &Weights::DEFAULT,
            FreqDenominator::PiiTotal,
            0,
        )
        .unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["n_total"], 1);
        assert_eq!(v["weights"], serde_json::json!([0.4, 0.3, 0.3]));
        let t = &v["types"][0];
        for key in ["type", "count", "s_freq", "s_link", "s_datatype", "s_final"] {
            assert!(t.get(key).is_some(), "missing {key}");
        }
        let back: SensitivityReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
