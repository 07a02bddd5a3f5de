use regex::Regex;

use super::{resolve_overlaps, Candidate, Gazetteer, PiiRegistry, PiiSpan, RegistryError};
use crate::corpus::Document;

/// Compiled rule engine: one regular expression per registry type. Types
/// without a pattern match runs of gazetteer words separated by single spaces.
#[derive(Debug, Clone)]
pub struct RuleDetector {
    registry: PiiRegistry,
    matchers: Vec<Regex>,
}

impl RuleDetector {
    pub fn new(registry: &PiiRegistry, gazetteer: &Gazetteer) -> Result<Self, RegistryError> {
        registry.validate()?;
        let matchers = registry
            .types
            .iter()
            .map(|t| {
                let pattern = match &t.pattern {
                    Some(p) => p.clone(),
                    None => {
                        let words = gazetteer
                            .words(&t.name)
                            .ok_or_else(|| RegistryError::NoGazetteer(t.name.clone()))?;
                        gazetteer_pattern(words)
                    }
                };
                Regex::new(&pattern).map_err(|source| RegistryError::Pattern {
                    name: t.name.clone(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RuleDetector {
            registry: registry.clone(),
            matchers,
        })
    }

    pub fn with_defaults() -> Self {
        Self::new(&PiiRegistry::default_registry(), &Gazetteer::default_names())
            .expect("bundled registry compiles")
    }

    pub fn registry(&self) -> &PiiRegistry {
        &self.registry
    }

    pub fn detect(&self, doc: &Document) -> Vec<PiiSpan> {
        let mut candidates = Vec::new();
        for (type_index, re) in self.matchers.iter().enumerate() {
            for m in re.find_iter(&doc.text) {
                if m.start() < m.end() {
                    candidates.push(Candidate {
                        start: m.start(),
                        end: m.end(),
                        type_index,
                    });
                }
            }
        }
        resolve_overlaps(candidates)
            .into_iter()
            .map(|c| PiiSpan {
                doc_id: doc.doc_id.clone(),
                start: c.start,
                end: c.end,
                surface: doc.text[c.start..c.end].to_string(),
                pii_type: self.registry.types[c.type_index].name.clone(),
            })
            .collect()
    }
}

/// Compiles the registry with the default gazetteer and runs it on one
/// document. Prefer [`RuleDetector`] when scanning many documents.
pub fn detect_rules(doc: &Document, registry: &PiiRegistry) -> Result<Vec<PiiSpan>, RegistryError> {
    Ok(RuleDetector::new(registry, &Gazetteer::default_names())?.detect(doc))
}

fn gazetteer_pattern(words: &[String]) -> String {
    let mut sorted: Vec<&String> = words.iter().collect();
    // longer alternatives first so "Anika" is not cut to "An"
    sorted.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let alt = sorted
        .iter()
        .map(|w| regex::escape(w))
        .collect::<Vec<_>>()
        .join("|");
    format!(r"\b(?:{alt})(?: (?:{alt}))*\b")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn detect(text: &str) -> Vec<(usize, usize, String)> {
        RuleDetector::with_defaults()
            .detect(&Document::plain("t", text))
            .into_iter()
            .map(|s| (s.start, s.end, s.pii_type))
            .collect()
    }

    #[test]
    fn email_span() {
        assert_eq!(detect("contact alice@x.com now"), vec![(8, 19, "EMAIL".into())]);
    }

    #[test]
    fn empty_text() {
        assert!(detect("").is_empty());
    }

    #[test]
    fn ssn_before_phone() {
        let got = detect("SSN 123-45-6789 phone 613-555-0199");
        assert_eq!(
            got,
            vec![(4, 15, "SSN".into()), (22, 34, "PHONE".into())]
        );
    }

    #[test]
    fn full_name_is_one_span() {
        assert_eq!(
            detect("ask Alice Smith today"),
            vec![(4, 15, "PERSON_NAME".into())]
        );
        // lowercase words are not names
        assert!(detect("alice smith").is_empty());
    }

    #[test]
    fn other_types() {
        assert_eq!(detect("from 10.0.0.254"), vec![(5, 15, "IP_ADDRESS".into())]);
        assert_eq!(
            detect("card 4111-1111-1111-1111"),
            vec![(5, 24, "CREDIT_CARD".into())]
        );
        assert_eq!(detect("born 1990-07-14"), vec![(5, 15, "DATE_OF_BIRTH".into())]);
        assert_eq!(detect("born 07/14/1990"), vec![(5, 15, "DATE_OF_BIRTH".into())]);
        assert_eq!(detect("call (613) 555-0199"), vec![(5, 19, "PHONE".into())]);
    }

    #[test]
    fn trailing_punctuation_not_included() {
        assert_eq!(detect("mail bob@y.org."), vec![(5, 14, "EMAIL".into())]);
    }

    #[test]
    fn spans_validate() {
        let det = RuleDetector::with_defaults();
        let doc = Document::plain("v", "Nadia Okafor 123-45-6789 nadia.o@mail.net, 192.168.1.7");
        for s in det.detect(&doc) {
            assert!(s.is_valid_for(&doc.text, det.registry()));
        }
    }

    #[test]
    fn missing_gazetteer_is_an_error() {
        let r = PiiRegistry::default_registry();
        assert!(matches!(
            RuleDetector::new(&r, &Gazetteer::default()),
            Err(RegistryError::NoGazetteer(_))
        ));
    }
}
