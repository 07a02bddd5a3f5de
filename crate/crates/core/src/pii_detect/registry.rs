use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_REGISTRY: &str = include_str!("../../data/registry.json");
const DEFAULT_NAMES: &str = include_str!("../../data/names.txt");

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid registry JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("registry has no PII types")]
    Empty,
    #[error("duplicate PII type `{0}` in registry")]
    Duplicate(String),
    #[error("invalid pattern for {name}: {source}")]
    Pattern {
        name: String,
        #[source]
        source: regex::Error,
    },
    #[error("PII type {0} has no pattern and no gazetteer entries")]
    NoGazetteer(String),
}

/// One PII category. The two flags feed the linkability and datatype scores
/// directly and must be spelled out in the registry file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiiType {
    pub name: String,
    pub linkable: bool,
    pub datatype_protected: bool,
    /// Regular expression; `None` means the type is gazetteer driven.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiiRegistry {
    pub version: String,
    pub types: Vec<PiiType>,
}

impl PiiRegistry {
    /// The seven built-in types: EMAIL, SSN, PHONE, IP_ADDRESS, PERSON_NAME,
    /// CREDIT_CARD, DATE_OF_BIRTH.
    pub fn default_registry() -> Self {
        Self::from_json(DEFAULT_REGISTRY).expect("bundled registry is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, RegistryError> {
        let registry: PiiRegistry = serde_json::from_str(json)?;
        registry.validate()?;
        Ok(registry)
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let raw = fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&raw)
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        if self.types.is_empty() {
            return Err(RegistryError::Empty);
        }
        let mut seen = HashSet::new();
        for t in &self.types {
            if !seen.insert(t.name.as_str()) {
                return Err(RegistryError::Duplicate(t.name.clone()));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&PiiType> {
        self.types.iter().find(|t| t.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.types.iter().map(|t| t.name.clone()).collect()
    }
}

/// Word lists for pattern-less types, keyed by PII type name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    entries: BTreeMap<String, Vec<String>>,
}

impl Gazetteer {
    /// The bundled given-name/surname list for `PERSON_NAME`.
    pub fn default_names() -> Self {
        let mut g = Gazetteer::default();
        g.insert("PERSON_NAME", parse_word_list(DEFAULT_NAMES));
        g
    }

    pub fn insert(&mut self, pii_type: &str, words: Vec<String>) {
        self.entries.insert(pii_type.to_string(), words);
    }

    pub fn load_into(&mut self, pii_type: &str, path: &Path) -> Result<(), RegistryError> {
        let raw = fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.insert(pii_type, parse_word_list(&raw));
        Ok(())
    }

    pub fn words(&self, pii_type: &str) -> Option<&[String]> {
        self.entries
            .get(pii_type)
            .map(Vec::as_slice)
            .filter(|w| !w.is_empty())
    }
}

fn parse_word_list(raw: &str) -> Vec<String> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}
