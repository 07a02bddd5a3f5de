use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{resolve_overlaps, Candidate, PiiRegistry, PiiSpan};
use crate::corpus::Document;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum AgentError {
    /// Connection, DNS, timeout or 5xx failures. The caller may retry.
    #[error("agent request to {endpoint} failed: {message}")]
    Transport { endpoint: String, message: String },
    /// The agent answered, but not in the documented `{spans:[{type,value}]}` shape.
    #[error("agent protocol error: {message}; raw payload: {raw}")]
    Protocol { message: String, raw: String },
}

impl AgentError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, AgentError::Transport { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub doc_id: String,
    pub text: String,
    pub allowed_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpan {
    #[serde(rename = "type")]
    pub pii_type: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub spans: Vec<AgentSpan>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentDetection {
    pub spans: Vec<PiiSpan>,
    /// Fields whose type is not in the registry.
    pub unknown_types: usize,
    /// Fields whose value does not occur verbatim in the document.
    pub unaligned: usize,
}

/// Blocking HTTP client for an external PII extraction agent.
#[derive(Debug, Clone)]
pub struct AgentClient {
    endpoint: String,
    http: ureq::Agent,
}

impl AgentClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self::with_timeout(endpoint, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let http: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        AgentClient {
            endpoint: endpoint.into(),
            http,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn detect(&self, doc: &Document, registry: &PiiRegistry) -> Result<AgentDetection, AgentError> {
        let request = AgentRequest {
            doc_id: doc.doc_id.clone(),
            text: doc.text.clone(),
            allowed_types: registry.names(),
        };
        let transport = |e: ureq::Error| AgentError::Transport {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        };
        let mut response = self.http.post(&self.endpoint).send_json(&request).map_err(transport)?;
        let status = response.status().as_u16();
        let raw = response.body_mut().read_to_string().map_err(transport)?;
        if status >= 500 {
            return Err(AgentError::Transport {
                endpoint: self.endpoint.clone(),
                message: format!("HTTP {status}"),
            });
        }
        if !(200..300).contains(&status) {
            return Err(AgentError::Protocol {
                message: format!("HTTP {status}"),
                raw,
            });
        }
        let parsed: AgentResponse = serde_json::from_str(&raw).map_err(|e| AgentError::Protocol {
            message: e.to_string(),
            raw: raw.clone(),
        })?;
        Ok(align_agent_spans(doc, registry, &parsed.spans))
    }
}

/// Maps agent `{type, value}` pairs onto the first verbatim occurrence of the
/// value in the document, then resolves overlaps like the rule engine does.
pub fn align_agent_spans(doc: &Document, registry: &PiiRegistry, fields: &[AgentSpan]) -> AgentDetection {
    let mut out = AgentDetection::default();
    let mut candidates = Vec::new();
    for field in fields {
        let Some(type_index) = registry.index_of(&field.pii_type) else {
            out.unknown_types += 1;
            continue;
        };
        match (!field.value.is_empty())
            .then(|| doc.text.find(&field.value))
            .flatten()
        {
            Some(start) => candidates.push(Candidate {
                start,
                end: start + field.value.len(),
                type_index,
            }),
            None => out.unaligned += 1,
        }
    }
    if out.unknown_types > 0 || out.unaligned > 0 {
        log::warn!(
            "{}: dropped {} unknown-type and {} unaligned agent fields",
            doc.doc_id,
            out.unknown_types,
            out.unaligned
        );
    }
    out.spans = resolve_overlaps(candidates)
        .into_iter()
        .map(|c| PiiSpan {
            doc_id: doc.doc_id.clone(),
            start: c.start,
            end: c.end,
            surface: doc.text[c.start..c.end].to_string(),
            pii_type: registry.types[c.type_index].name.clone(),
        })
        .collect();
    out
}
