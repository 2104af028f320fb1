//! Corpora of documents carrying one extracted numerical value each.
//!
//! A corpus is loaded from JSONL (one [`Document`] per line) and is immutable
//! afterwards. Iteration order is always the load order.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate document id `{id}` (line {line})")]
    DuplicateId { id: String, line: usize },
    #[error("invalid field spec file {path}: {message}")]
    FieldSpecs { path: PathBuf, message: String },
    #[error("invalid corpus: {0}")]
    Invalid(String),
    #[error("field `{field}` has fewer than 2 values in scope")]
    DegenerateRange { field: String },
    #[error("field `{field}` has zero span in scope (all values equal)")]
    ZeroSpan { field: String },
}

/// One paper record with a single pre-extracted metric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub domain: String,
    pub field_name: String,
    pub extracted_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<String>,
}

/// Expected range and unit of a metric field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub field_name: String,
    pub unit: String,
    pub expected_min: f64,
    pub expected_max: f64,
}

impl FieldSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.expected_min.is_finite() && self.expected_max.is_finite()) {
            return Err(format!("field `{}`: bounds must be finite", self.field_name));
        }
        if self.expected_min >= self.expected_max {
            return Err(format!(
                "field `{}`: expected_min must be < expected_max",
                self.field_name
            ));
        }
        Ok(())
    }
}

/// Observed value range of a field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub span: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Self {
        Self {
            min,
            max,
            span: max - min,
        }
    }
}

/// Which documents a [`Range`] is computed over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RangeScope<'a> {
    CorpusWide,
    IdSet(&'a [String]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    field_specs: Vec<FieldSpec>,
}

impl Corpus {
    /// Builds a corpus, validating ids, values and field coverage.
    ///
    /// Fields without an explicit spec get one inferred from the observed values.
    pub fn new(documents: Vec<Document>, field_specs: Vec<FieldSpec>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, doc) in documents.iter().enumerate() {
            validate_document(doc).map_err(|message| CorpusError::Parse {
                line: i + 1,
                message,
            })?;
            if !seen.insert(doc.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    id: doc.id.clone(),
                    line: i + 1,
                });
            }
        }
        let mut specs = field_specs;
        let mut known: HashSet<String> = HashSet::new();
        for spec in &specs {
            spec.validate().map_err(CorpusError::Invalid)?;
            if !known.insert(spec.field_name.clone()) {
                return Err(CorpusError::Invalid(format!(
                    "field `{}` specified twice",
                    spec.field_name
                )));
            }
        }
        for spec in infer_field_specs(&documents) {
            if !known.contains(&spec.field_name) {
                known.insert(spec.field_name.clone());
                specs.push(spec);
            }
        }
        Ok(Self {
            documents,
            field_specs: specs,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn field_specs(&self) -> &[FieldSpec] {
        &self.field_specs
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn field_spec(&self, field_name: &str) -> Option<&FieldSpec> {
        self.field_specs.iter().find(|s| s.field_name == field_name)
    }

    /// Domains in order of first appearance.
    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for doc in &self.documents {
            if !out.contains(&doc.domain) {
                out.push(doc.domain.clone());
            }
        }
        out
    }

    /// Returns a copy with the given values replaced; ids and order are preserved.
    pub fn with_values(&self, values: &BTreeMap<String, f64>) -> Result<Self, CorpusError> {
        let documents = self
            .documents
            .iter()
            .map(|d| {
                let mut d = d.clone();
                if let Some(v) = values.get(&d.id) {
                    d.extracted_value = *v;
                }
                d
            })
            .collect();
        Self::new(documents, self.field_specs.clone())
    }

    /// Serializes the documents as JSONL, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&serde_json::to_string(doc).expect("document serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        write_file(path, self.to_jsonl().as_bytes())
    }

    pub fn write_field_specs(&self, path: &Path) -> Result<(), CorpusError> {
        let json = serde_json::to_string_pretty(&self.field_specs).expect("specs serialize");
        write_file(path, json.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    Ok(())
}

fn validate_document(doc: &Document) -> Result<(), String> {
    if doc.id.is_empty() {
        return Err("`id` must be nonempty".into());
    }
    if doc.text.trim().is_empty() {
        return Err(format!("document `{}`: `text` must be nonempty", doc.id));
    }
    if !doc.extracted_value.is_finite() {
        return Err(format!(
            "document `{}`: `extracted_value` must be finite",
            doc.id
        ));
    }
    Ok(())
}

/// Specs for fields lacking one: the observed min/max, widened by one unit
/// around the value when a field holds a single distinct value.
fn infer_field_specs(documents: &[Document]) -> Vec<FieldSpec> {
    let mut bounds: Vec<(String, f64, f64)> = Vec::new();
    for doc in documents {
        match bounds.iter_mut().find(|(f, _, _)| *f == doc.field_name) {
            Some((_, lo, hi)) => {
                *lo = lo.min(doc.extracted_value);
                *hi = hi.max(doc.extracted_value);
            }
            None => bounds.push((
                doc.field_name.clone(),
                doc.extracted_value,
                doc.extracted_value,
            )),
        }
    }
    bounds
        .into_iter()
        .map(|(field_name, lo, hi)| {
            let (expected_min, expected_max) = if lo < hi { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
            FieldSpec {
                field_name,
                unit: String::new(),
                expected_min,
                expected_max,
            }
        })
        .collect()
}

/// Parses corpus JSONL. Blank lines are skipped but still counted for line numbers.
pub fn parse_corpus(content: &str) -> Result<Corpus, CorpusError> {
    let mut documents = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
            line,
            message: e.to_string(),
        })?;
        validate_document(&doc).map_err(|message| CorpusError::Parse { line, message })?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId { id: doc.id, line });
        }
        documents.push(doc);
    }
    Corpus::new(documents, Vec::new())
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&content)
}

/// Loads a corpus together with an explicit field specs file (JSON array).
pub fn load_corpus_with_specs(path: &Path, specs_path: &Path) -> Result<Corpus, CorpusError> {
    let corpus = load_corpus(path)?;
    let specs = load_field_specs(specs_path)?;
    Corpus::new(corpus.documents, specs)
}

pub fn load_field_specs(path: &Path) -> Result<Vec<FieldSpec>, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let specs: Vec<FieldSpec> =
        serde_json::from_str(&content).map_err(|e| CorpusError::FieldSpecs {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    for spec in &specs {
        spec.validate().map_err(|message| CorpusError::FieldSpecs {
            path: path.to_path_buf(),
            message,
        })?;
    }
    Ok(specs)
}

/// Min/max of a field's extracted values within `scope`.
pub fn field_range(corpus: &Corpus, field_name: &str, scope: RangeScope<'_>) -> Result<Range, CorpusError> {
    let values: Vec<f64> = match scope {
        RangeScope::CorpusWide => corpus
            .documents
            .iter()
            .filter(|d| d.field_name == field_name)
            .map(|d| d.extracted_value)
            .collect(),
        RangeScope::IdSet(ids) => {
            let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
            corpus
                .documents
                .iter()
                .filter(|d| d.field_name == field_name && wanted.contains(d.id.as_str()))
                .map(|d| d.extracted_value)
                .collect()
        }
    };
    range_of(field_name, &values)
}

pub(crate) fn range_of(field_name: &str, values: &[f64]) -> Result<Range, CorpusError> {
    if values.len() < 2 {
        return Err(CorpusError::DegenerateRange {
            field: field_name.to_string(),
        });
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(CorpusError::ZeroSpan {
            field: field_name.to_string(),
        });
    }
    Ok(Range::new(min, max))
}
