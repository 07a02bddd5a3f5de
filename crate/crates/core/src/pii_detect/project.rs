use thiserror::Error;

use super::PiiSpan;
use crate::corpus::TokenSequence;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProjectionError {
    #[error("span for document {span_doc} projected onto sequence of {seq_doc}")]
    DocMismatch { span_doc: String, seq_doc: String },
}

/// Assigns a PII type to every token that overlaps a span by at least one
/// byte. When several spans cover one token the highest-ranked type wins,
/// ties going to the earlier span. `rank` is normally the type's final
/// sensitivity score.
pub fn project_spans(
    spans: &[PiiSpan],
    seq: &TokenSequence,
    rank: impl Fn(&str) -> f64,
) -> Result<Vec<Option<String>>, ProjectionError> {
    if let Some(bad) = spans.iter().find(|s| s.doc_id != seq.doc_id) {
        return Err(ProjectionError::DocMismatch {
            span_doc: bad.doc_id.clone(),
            seq_doc: seq.doc_id.clone(),
        });
    }
    let ranks: Vec<f64> = spans.iter().map(|s| rank(&s.pii_type)).collect();
    Ok(seq
        .offsets
        .iter()
        .map(|&(start, end)| {
            let mut best: Option<usize> = None;
            for (i, span) in spans.iter().enumerate() {
                if !span.overlaps(start, end) {
                    continue;
                }
                match best {
                    Some(b) if ranks[i] <= ranks[b] => {}
                    _ => best = Some(i),
                }
            }
            best.map(|i| spans[i].pii_type.clone())
        })
        .collect())
}
