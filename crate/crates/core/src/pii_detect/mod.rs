//! PII detection.
//!
//! Spans are produced either by [`RuleDetector`] (per-type regular expressions
//! plus a name gazetteer) or by [`AgentClient`], which asks an external
//! extraction service for `{type, value}` pairs and aligns them back onto the
//! text. Both paths emit the same [`PiiSpan`] records and resolve overlaps the
//! same way.

mod agent;
mod project;
mod registry;
mod rules;

pub use agent::{align_agent_spans, AgentClient, AgentDetection, AgentError, AgentRequest, AgentResponse, AgentSpan};
pub use project::{project_spans, ProjectionError};
pub use registry::{Gazetteer, PiiRegistry, PiiType, RegistryError};
pub use rules::{detect_rules, RuleDetector};

use serde::{Deserialize, Serialize};

/// A typed PII occurrence. `start..end` is a byte range into the document text
/// and `surface` is exactly that slice.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PiiSpan {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub pii_type: String,
}

impl PiiSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }

    /// Checks the span against its document text and registry.
    pub fn is_valid_for(&self, text: &str, registry: &PiiRegistry) -> bool {
        self.start < self.end
            && self.end <= text.len()
            && text.get(self.start..self.end) == Some(self.surface.as_str())
            && registry.index_of(&self.pii_type).is_some()
    }
}

/// A candidate match before overlap resolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    pub start: usize,
    pub end: usize,
    pub type_index: usize,
}

/// Greedy overlap resolution: longest match first, then earlier start, then
/// registry order. Accepted spans are returned sorted by start.
pub(crate) fn resolve_overlaps(mut candidates: Vec<Candidate>) -> Vec<Candidate> {
    candidates.sort_by(|a, b| {
        (b.end - b.start)
            .cmp(&(a.end - a.start))
            .then(a.start.cmp(&b.start))
            .then(a.type_index.cmp(&b.type_index))
    });
    let mut accepted: Vec<Candidate> = Vec::with_capacity(candidates.len());
    for c in candidates {
        if accepted.iter().all(|a| c.end <= a.start || a.end <= c.start) {
            accepted.push(c);
        }
    }
    accepted.sort_by_key(|c| c.start);
    accepted
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(start: usize, end: usize, type_index: usize) -> Candidate {
        Candidate {
            start,
            end,
            type_index,
        }
    }

    #[test]
    fn longest_match_wins() {
        let out = resolve_overlaps(vec![cand(4, 12, 2), cand(0, 15, 1), cand(20, 22, 0)]);
        let got: Vec<_> = out.iter().map(|c| (c.start, c.end)).collect();
        assert_eq!(got, vec![(0, 15), (20, 22)]);
    }

    #[test]
    fn equal_length_prefers_earlier_start_then_registry_order() {
        let out = resolve_overlaps(vec![cand(2, 6, 0), cand(0, 4, 3)]);
        assert_eq!((out[0].start, out.len()), (0, 1));
        let out = resolve_overlaps(vec![cand(0, 4, 3), cand(0, 4, 1)]);
        assert_eq!(out[0].type_index, 1);
    }
}
