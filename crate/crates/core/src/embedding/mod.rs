//! Unit-norm document embeddings from a pluggable provider, with an on-disk cache.

mod cache;
mod local;
mod remote;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Corpus;

pub use cache::EmbeddingCache;
pub use local::{tokenize, HashedBowEmbedder};
pub use remote::RemoteEmbedder;

pub const DEFAULT_DIMENSION: usize = 256;
pub const MIN_LOCAL_DIMENSION: usize = 8;

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 5;
    let head = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    match ids.len().saturating_sub(SHOWN) {
        0 => head,
        rest => format!("{head} and {rest} more"),
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("text has no tokens")]
    NoTokens,
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("provider request failed{}: {message}", .status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport {
        status: Option<u16>,
        message: String,
        retriable: bool,
    },
    #[error("invalid provider response: {0}")]
    Response(String),
    #[error("embedding failed for {} document(s) ({}): {cause}", .failed_ids.len(), preview(.failed_ids))]
    Partial {
        failed_ids: Vec<String>,
        cause: Box<EmbedError>,
    },
    #[error("embedding cache {path} is corrupt: {reason}")]
    CacheCorrupt { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("provider tag mismatch: `{0}` vs `{1}`")]
    ProviderMismatch(String, String),
    #[error("zero-norm vector cannot be normalized")]
    ZeroNorm,
    #[error("invalid embeddings file line {line}: {message}")]
    File { line: usize, message: String },
}

impl EmbedError {
    /// Errors that stem from the provider or environment rather than user input.
    pub fn is_provider_failure(&self) -> bool {
        match self {
            EmbedError::Transport { .. } | EmbedError::Response(_) => true,
            EmbedError::Partial { cause, .. } => cause.is_provider_failure(),
            _ => false,
        }
    }
}

/// A unit-norm embedding of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub doc_id: String,
    values: Vec<f64>,
    provider_tag: String,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit L2 norm.
    pub fn new(doc_id: impl Into<String>, values: Vec<f64>, provider_tag: impl Into<String>) -> Result<Self, EmbedError> {
        Ok(Self {
            doc_id: doc_id.into(),
            values: normalize(values)?,
            provider_tag: provider_tag.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }
}

pub fn normalize(mut values: Vec<f64>) -> Result<Vec<f64>, EmbedError> {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbedError::ZeroNorm);
    }
    // already unit length: leave untouched so reloaded vectors are bit-identical
    if (norm - 1.0).abs() <= 1e-12 {
        return Ok(values);
    }
    for v in &mut values {
        *v /= norm;
    }
    Ok(values)
}

/// Cosine similarity of two raw vectors, clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    cosine(&a.values, &b.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Remote,
    #[default]
    #[serde(alias = "local")]
    LocalDeterministic,
}

fn default_model() -> String {
    "hashed-bow".to_string()
}
fn default_header() -> String {
    "Authorization".to_string()
}
fn default_batch() -> usize {
    64
}
fn default_in_flight() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    /// Never serialized, so config echoes cannot leak it.
    #[serde(default, skip_serializing)]
    pub api_credential: Option<String>,
    #[serde(default = "default_header")]
    pub auth_header: String,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self::local(DEFAULT_DIMENSION)
    }
}

impl ProviderConfig {
    pub fn local(dimension: usize) -> Self {
        Self {
            kind: ProviderKind::LocalDeterministic,
            model_name: default_model(),
            endpoint_url: None,
            dimension: Some(dimension),
            api_credential: None,
            auth_header: default_header(),
            batch_size: default_batch(),
            max_in_flight: default_in_flight(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn remote(model_name: &str, endpoint_url: &str, credential: &str) -> Self {
        Self {
            kind: ProviderKind::Remote,
            model_name: model_name.to_string(),
            endpoint_url: Some(endpoint_url.to_string()),
            dimension: None,
            api_credential: Some(credential.to_string()),
            ..Self::local(DEFAULT_DIMENSION)
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        match self.kind {
            ProviderKind::Remote => {
                if self.endpoint_url.as_deref().is_none_or(str::is_empty) {
                    return Err(EmbedError::Config("remote provider requires endpoint_url".into()));
                }
                if self.api_credential.as_deref().is_none_or(str::is_empty) {
                    return Err(EmbedError::Config("remote provider requires an API credential".into()));
                }
                if self.batch_size == 0 || self.max_in_flight == 0 {
                    return Err(EmbedError::Config("batch_size and max_in_flight must be positive".into()));
                }
            }
            ProviderKind::LocalDeterministic => {
                let dim = self.dimension.unwrap_or(DEFAULT_DIMENSION);
                if dim < MIN_LOCAL_DIMENSION {
                    return Err(EmbedError::Config(format!(
                        "local dimension must be >= {MIN_LOCAL_DIMENSION}, got {dim}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn provider_tag(&self) -> String {
        match self.kind {
            ProviderKind::Remote => format!("remote:{}", self.model_name),
            ProviderKind::LocalDeterministic => {
                format!("local-hashed-bow:{}", self.dimension.unwrap_or(DEFAULT_DIMENSION))
            }
        }
    }

    pub fn build(&self) -> Result<Box<dyn Embedder>, EmbedError> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::LocalDeterministic => Box::new(HashedBowEmbedder::new(
                self.dimension.unwrap_or(DEFAULT_DIMENSION),
            )?),
            ProviderKind::Remote => Box::new(RemoteEmbedder::new(self.clone())?),
        })
    }
}

/// Source of raw (not necessarily normalized) embedding vectors.
pub trait Embedder: Send + Sync {
    fn provider_tag(&self) -> String;

    /// Embeds `texts`, returning one vector per input in input order.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError>;

    /// Embeds many texts. The default sends a single batch; providers with
    /// batching or failure isolation override this and report per-input failures.
    fn embed_many(&self, texts: &[&str]) -> Vec<Result<Vec<f64>, EmbedError>> {
        match self.embed_batch(texts) {
            Ok(vs) => vs.into_iter().map(Ok).collect(),
            Err(e) => {
                let msg = e.to_string();
                texts
                    .iter()
                    .map(|_| {
                        Err(EmbedError::Transport {
                            status: None,
                            message: msg.clone(),
                            retriable: false,
                        })
                    })
                    .collect()
            }
        }
    }
}

pub fn embed(config: &ProviderConfig, text: &str) -> Result<EmbeddingVector, EmbedError> {
    if text.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let embedder = config.build()?;
    let mut out = embedder.embed_batch(&[text])?;
    let raw = out
        .pop()
        .ok_or_else(|| EmbedError::Response("no embedding returned".into()))?;
    EmbeddingVector::new("", raw, embedder.provider_tag())
}

/// SHA-256 of a document text; the text half of the cache key.
pub fn text_hash(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

/// Embeds every document, serving unchanged texts from the cache at `cache_path`.
pub fn embed_corpus(config: &ProviderConfig, corpus: &Corpus, cache_path: &Path) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let embedder = config.build()?;
    embed_corpus_with(embedder.as_ref(), corpus, cache_path)
}

pub fn embed_corpus_with(embedder: &dyn Embedder, corpus: &Corpus, cache_path: &Path) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let tag = embedder.provider_tag();
    let mut cache = EmbeddingCache::open(cache_path)?;

    // distinct missing texts, in load order
    let mut missing: Vec<(&str, [u8; 32])> = Vec::new();
    let mut queued: HashMap<[u8; 32], ()> = HashMap::new();
    for doc in corpus.documents() {
        if doc.text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let h = text_hash(&doc.text);
        if cache.get(&tag, &h).is_none() && queued.insert(h, ()).is_none() {
            missing.push((doc.text.as_str(), h));
        }
    }

    let mut failure: Option<EmbedError> = None;
    let mut failed_hashes: Vec<[u8; 32]> = Vec::new();
    if !missing.is_empty() {
        let texts: Vec<&str> = missing.iter().map(|(t, _)| *t).collect();
        let results = embedder.embed_many(&texts);
        if results.len() != texts.len() {
            return Err(EmbedError::Response(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                results.len()
            )));
        }
        for ((_, h), result) in missing.iter().zip(results) {
            match result.and_then(normalize) {
                Ok(v) => cache.insert(&tag, *h, v),
                Err(e) => {
                    failed_hashes.push(*h);
                    failure.get_or_insert(e);
                }
            }
        }
        cache.save()?;
    }

    if let Some(cause) = failure {
        let failed_ids = corpus
            .documents()
            .iter()
            .filter(|d| failed_hashes.contains(&text_hash(&d.text)))
            .map(|d| d.id.clone())
            .collect();
        return Err(EmbedError::Partial {
            failed_ids,
            cause: Box::new(cause),
        });
    }

    let mut out = Vec::with_capacity(corpus.len());
    let mut dim = None;
    for doc in corpus.documents() {
        let values = cache
            .get(&tag, &text_hash(&doc.text))
            .expect("every text cached after embedding")
            .to_vec();
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => return Err(EmbedError::DimensionMismatch(d, values.len())),
            _ => {}
        }
        out.push(EmbeddingVector::new(doc.id.clone(), values, tag.clone())?);
    }
    Ok(out)
}

/// Embeds every document directly, without a cache.
pub fn embed_corpus_uncached(config: &ProviderConfig, corpus: &Corpus) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let embedder = config.build()?;
    let tag = embedder.provider_tag();
    let texts: Vec<&str> = corpus.documents().iter().map(|d| d.text.as_str()).collect();
    if texts.iter().any(|t| t.is_empty()) {
        return Err(EmbedError::EmptyText);
    }
    let mut out = Vec::with_capacity(texts.len());
    let mut failed = Vec::new();
    let mut cause = None;
    for (doc, r) in corpus.documents().iter().zip(embedder.embed_many(&texts)) {
        match r.and_then(|v| EmbeddingVector::new(doc.id.clone(), v, tag.clone())) {
            Ok(v) => out.push(v),
            Err(e) => {
                failed.push(doc.id.clone());
                cause.get_or_insert(e);
            }
        }
    }
    match cause {
        Some(cause) => Err(EmbedError::Partial {
            failed_ids: failed,
            cause: Box::new(cause),
        }),
        None => Ok(out),
    }
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    format: String,
    version: u32,
    provider_tag: String,
    dimension: usize,
    count: usize,
    #[serde(default)]
    config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct FileRow {
    id: String,
    values: Vec<f64>,
}

const FILE_FORMAT: &str = "pcod-embeddings";

/// Writes embeddings as JSONL: a header line, then one `{id, values}` row per vector.
pub fn write_embeddings(path: &Path, vectors: &[EmbeddingVector], config_echo: serde_json::Value) -> Result<(), EmbedError> {
    let io = |source| EmbedError::Io {
        path: path.to_path_buf(),
        source,
    };
    let header = FileHeader {
        format: FILE_FORMAT.into(),
        version: 1,
        provider_tag: vectors.first().map(|v| v.provider_tag.clone()).unwrap_or_default(),
        dimension: vectors.first().map_or(0, |v| v.dimension()),
        count: vectors.len(),
        config: config_echo,
    };
    let mut buf = serde_json::to_string(&header).expect("header serializes");
    buf.push('\n');
    for v in vectors {
        let row = FileRow {
            id: v.doc_id.clone(),
            values: v.values.clone(),
        };
        buf.push_str(&serde_json::to_string(&row).expect("row serializes"));
        buf.push('\n');
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(buf.as_bytes()).map_err(io)?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let content = fs::read_to_string(path).map_err(|source| EmbedError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(EmbedError::File {
        line: 1,
        message: "missing header".into(),
    })?;
    let header: FileHeader = serde_json::from_str(first).map_err(|e| EmbedError::File {
        line: 1,
        message: e.to_string(),
    })?;
    if header.format != FILE_FORMAT || header.version != 1 {
        return Err(EmbedError::File {
            line: 1,
            message: format!("unsupported format {} v{}", header.format, header.version),
        });
    }
    let mut out = Vec::with_capacity(header.count);
    for (idx, line) in lines {
        let row: FileRow = serde_json::from_str(line).map_err(|e| EmbedError::File {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if row.values.len() != header.dimension {
            return Err(EmbedError::File {
                line: idx + 1,
                message: format!("expected dimension {}, got {}", header.dimension, row.values.len()),
            });
        }
        out.push(EmbeddingVector::new(row.id, row.values, header.provider_tag.clone())?);
    }
    if out.len() != header.count {
        return Err(EmbedError::File {
            line: 1,
            message: format!("header declares {} rows, found {}", header.count, out.len()),
        });
    }
    Ok(out)
}
