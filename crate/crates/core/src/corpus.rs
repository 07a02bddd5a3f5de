//! Corpus ingestion and word-level tokenization.
//!
//! Documents come from either plain text (one document per line) or a comma
//! delimited file with a header row. Delimited records are flattened to
//! `field=value` pairs joined by single spaces so that structured and
//! unstructured data flow through the same detection and training path.
//!
//! Offsets are byte offsets into the UTF-8 document text, so
//! `&doc.text[start..end]` is always a valid slice.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown corpus format `{0}` (expected plain_text_lines or delimited)")]
    UnknownFormat(String),
    #[error("vocabulary max_size must be at least {min}, got {got}")]
    VocabTooSmall { min: usize, got: usize },
    #[error("delimited file has no header row")]
    MissingHeader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    PlainText,
    DelimitedRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub source: Source,
}

impl Document {
    pub fn plain(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            text: text.into(),
            source: Source::PlainText,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    PlainTextLines,
    Delimited,
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain_text_lines" | "plain" | "text" => Ok(CorpusFormat::PlainTextLines),
            "delimited" | "csv" => Ok(CorpusFormat::Delimited),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusFormat::PlainTextLines => f.write_str("plain_text_lines"),
            CorpusFormat::Delimited => f.write_str("delimited"),
        }
    }
}

/// A delimited row that was rejected during loading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    /// 1-based line number in the source file (the header is line 1).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadedCorpus {
    pub documents: Vec<Document>,
    pub skipped: Vec<SkippedRow>,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<LoadedCorpus, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        CorpusFormat::PlainTextLines => Ok(parse_plain_text(&raw)),
        CorpusFormat::Delimited => parse_delimited(&raw),
    }
}

/// One document per nonempty line. Document ids carry the 1-based line number.
pub fn parse_plain_text(raw: &str) -> LoadedCorpus {
    let documents = raw
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| Document::plain(format!("line-{}", i + 1), line))
        .collect();
    LoadedCorpus {
        documents,
        skipped: Vec::new(),
    }
}

/// Comma separated records with a header. Quoted fields are not supported and
/// such rows are skipped, as are rows whose field count differs from the header.
pub fn parse_delimited(raw: &str) -> Result<LoadedCorpus, CorpusError> {
    let mut lines = raw.lines().enumerate();
    let header: Vec<String> = loop {
        match lines.next() {
            Some((_, line)) if line.trim().is_empty() => continue,
            Some((_, line)) => break line.split(',').map(|h| h.trim().to_string()).collect(),
            None => return Ok(LoadedCorpus::default()),
        }
    };
    if header.iter().all(|h| h.is_empty()) {
        return Err(CorpusError::MissingHeader);
    }

    let mut out = LoadedCorpus::default();
    for (i, line) in lines {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if line.contains('"') {
            log::warn!("row {row}: quoted fields are not supported, row skipped");
            out.skipped.push(SkippedRow {
                row,
                reason: "quoted field".to_string(),
            });
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            log::warn!(
                "row {row}: expected {} fields, found {}; row skipped",
                header.len(),
                fields.len()
            );
            out.skipped.push(SkippedRow {
                row,
                reason: format!("expected {} fields, found {}", header.len(), fields.len()),
            });
            continue;
        }
        let text = header
            .iter()
            .zip(&fields)
            .map(|(name, value)| format!("{}={}", name, value.trim()))
            .collect::<Vec<_>>()
            .join(" ");
        out.documents.push(Document {
            doc_id: format!("row-{row}"),
            text,
            source: Source::DelimitedRecord,
        });
    }
    Ok(out)
}

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
const SPECIALS: [&str; 4] = [PAD, UNK, BOS, EOS];

/// Bidirectional word/id map. Ids 0..4 are the specials `<pad>`, `<unk>`,
/// `<bos>`, `<eos>`; regular words follow in descending frequency order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    pub const PAD_ID: u32 = 0;
    pub const UNK_ID: u32 = 1;
    pub const BOS_ID: u32 = 2;
    pub const EOS_ID: u32 = 3;
    pub const MIN_SIZE: usize = SPECIALS.len() + 1;

    /// Keeps the `max_size - 4` most frequent words; ties go to the
    /// lexicographically smaller word.
    pub fn build(docs: &[Document], max_size: usize) -> Result<Self, CorpusError> {
        if max_size < Self::MIN_SIZE {
            return Err(CorpusError::VocabTooSmall {
                min: Self::MIN_SIZE,
                got: max_size,
            });
        }
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for doc in docs {
            for word in doc.text.split_whitespace() {
                *counts.entry(word).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(w, _)| !SPECIALS.contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - SPECIALS.len());

        let surfaces = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w.to_string()))
            .collect();
        Ok(Self::from_surfaces(surfaces))
    }

    fn from_surfaces(surfaces: Vec<String>) -> Self {
        let ids = surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Vocabulary { surfaces, ids }
    }

    /// Rebuilds the reverse index after deserialization.
    pub fn reindex(self) -> Self {
        Self::from_surfaces(self.surfaces)
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn id(&self, surface: &str) -> Option<u32> {
        self.ids.get(surface).copied()
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < SPECIALS.len()
    }

    pub fn tokenize(&self, doc: &Document) -> TokenSequence {
        tokenize(doc, self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub doc_id: String,
    pub tokens: Vec<u32>,
    /// Byte span `[start, end)` of each token in the document text.
    pub offsets: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Whitespace word tokenization. Out-of-vocabulary words map to `<unk>`.
pub fn tokenize(doc: &Document, vocab: &Vocabulary) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut offsets = Vec::new();
    for (start, word) in word_spans(&doc.text) {
        tokens.push(vocab.id(word).unwrap_or(Vocabulary::UNK_ID));
        offsets.push((start, start + word.len()));
    }
    TokenSequence {
        doc_id: doc.doc_id.clone(),
        tokens,
        offsets,
    }
}

/// Yields `(byte_start, word)` for every whitespace-delimited word.
pub fn word_spans(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let base = text.as_ptr() as usize;
    text.split_whitespace()
        .map(move |w| (w.as_ptr() as usize - base, w))
}

pub fn word_count(docs: &[Document]) -> u64 {
    docs.iter()
        .map(|d| d.text.split_whitespace().count() as u64)
        .sum()
}

/// Deterministic train/held-out split: document `i` is held out when
/// `floor((i + 1)·f) > floor(i·f)`, which spreads held-out documents evenly
/// and holds out `floor(n·f)` of them.
pub fn split_holdout(docs: &[Document], fraction: f64) -> (Vec<Document>, Vec<Document>) {
    let f = fraction.clamp(0.0, 1.0);
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        if ((i + 1) as f64 * f).floor() > (i as f64 * f).floor() {
            held.push(d.clone());
        } else {
            train.push(d.clone());
        }
    }
    (train, held)
}
