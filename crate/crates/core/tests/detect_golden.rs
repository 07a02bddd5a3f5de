use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use sadp::cli::{execute, read_spans, Cli};
use sadp::corpus::{load_corpus, CorpusFormat};
use sadp::pii_detect::{PiiSpan, RuleDetector};

use clap::Parser;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/fixtures").join(name)
}

fn key(s: &PiiSpan) -> (String, usize, usize, String, String) {
    (s.doc_id.clone(), s.start, s.end, s.surface.clone(), s.pii_type.clone())
}

fn golden() -> BTreeSet<(String, usize, usize, String, String)> {
    read_spans(&fixture("detect_40.golden.jsonl")).unwrap().iter().map(key).collect()
}

#[test]
fn golden_file_is_consistent_with_text() {
    let docs = load_corpus(&fixture("detect_40.txt"), CorpusFormat::PlainTextLines).unwrap().documents;
    assert_eq!(docs.len(), 40);
    for (doc_id, start, end, surface, _) in golden() {
        let doc = docs.iter().find(|d| d.doc_id == doc_id).expect("doc exists");
        assert_eq!(&doc.text[start..end], surface, "{doc_id}");
    }
}

#[test]
fn rule_detector_matches_golden_exactly() {
    let docs = load_corpus(&fixture("detect_40.txt"), CorpusFormat::PlainTextLines).unwrap().documents;
    let detector = RuleDetector::with_defaults();
    let found: BTreeSet<_> = docs.iter().flat_map(|d| detector.detect(d)).map(|s| key(&s)).collect();
    let expected = golden();
    let missed: Vec<_> = expected.difference(&found).collect();
    let extra: Vec<_> = found.difference(&expected).collect();
    assert!(missed.is_empty() && extra.is_empty(), "missed {missed:?}\nextra {extra:?}");
}

#[test]
fn cli_detect_writes_golden_spans() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("spans.jsonl");
    let cli = Cli::try_parse_from([
        "sadp",
        "detect",
        "--corpus",
        fixture("detect_40.txt").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    let summary = execute(&cli).unwrap();
    assert_eq!(summary["documents"], 40);
    let found: BTreeSet<_> = read_spans(&out).unwrap().iter().map(key).collect();
    assert_eq!(found, golden());
}

#[test]
fn delimited_fixture_skips_bad_rows_and_keeps_field_names() {
    let loaded = load_corpus(&fixture("tickets.csv"), CorpusFormat::Delimited).unwrap();
    let ids: Vec<_> = loaded.documents.iter().map(|d| d.doc_id.as_str()).collect();
    assert_eq!(ids, ["row-2", "row-3", "row-7"]);
    let rows: Vec<_> = loaded.skipped.iter().map(|s| s.row).collect();
    assert_eq!(rows, [5, 6]);
    assert_eq!(
        loaded.documents[0].text,
        "ticket_id=T-100 customer=Alice Smith contact=alice.smith@example.com issue=refund pending"
    );

    let detector = RuleDetector::with_defaults();
    let types: BTreeSet<_> = loaded
        .documents
        .iter()
        .flat_map(|d| detector.detect(d))
        .map(|s| s.pii_type)
        .collect();
    for t in ["EMAIL", "PHONE", "CREDIT_CARD"] {
        assert!(types.contains(t), "{t} not found in {types:?}");
    }
}
