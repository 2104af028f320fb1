//! Deviation and surprising scores relative to semantic peers, ranking and flagging.
//!
//! For a point `p` with extracted value `x` and same-field peers `N(p)`:
//!
//! ```text
//! D_p = |x - y_ref| / span
//! S_p = sum over p' in N(p) of [ w_v * cos(emb(p), emb(p')) + w_e * D ]
//! ```
//!
//! where `y_ref` is the mean of the peers' values and `span` the field range.
//! In per-neighbor mode the inner `D` is `|x - x_p'| / span` instead of `D_p`.
//! Scores are evaluated as `w_v * Σcos + w_e * ΣD`, which makes them exactly
//! linear in the weights.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{field_range, Corpus, CorpusError, Document, Range, RangeScope};
use crate::embedding::{cosine_similarity, EmbedError, EmbeddingVector};
use crate::peers::{check_uniform, PeerError, PeerGraph};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("document `{0}` has no same-field neighbors and cannot be scored")]
    Isolated(String),
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error("range span is zero; deviation undefined")]
    ZeroSpan,
    #[error("invalid scoring config: {0}")]
    Config(String),
    #[error("top fraction q must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("threshold T must be finite, got {0}")]
    InvalidThreshold(f64),
    #[error("id sets differ between inputs: {0}")]
    IdSetMismatch(String),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error(transparent)]
    Peers(#[from] PeerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationMode {
    #[default]
    #[serde(alias = "mean")]
    MeanReference,
    PerNeighbor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RangeScopeMode {
    #[default]
    #[serde(alias = "corpus-wide")]
    Corpus,
    Neighborhood,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum FlagPolicy {
    /// Flag every point with score > T.
    #[serde(rename = "absolute")]
    Absolute {
        #[serde(rename = "T")]
        t: f64,
    },
    /// Flag the ⌈q·n⌉ highest-ranked points.
    #[serde(rename = "top_fraction")]
    TopFraction { q: f64 },
}

impl Default for FlagPolicy {
    fn default() -> Self {
        FlagPolicy::TopFraction { q: 0.25 }
    }
}

impl FlagPolicy {
    pub fn validate(&self) -> Result<(), ScoreError> {
        match *self {
            FlagPolicy::Absolute { t } if !t.is_finite() && t != f64::INFINITY => Err(ScoreError::InvalidThreshold(t)),
            FlagPolicy::TopFraction { q } if !(q > 0.0 && q <= 1.0) => Err(ScoreError::InvalidFraction(q)),
            _ => Ok(()),
        }
    }

    /// Parses `absolute:<T>` or `top-fraction:<q>`.
    pub fn parse(s: &str) -> Result<Self, ScoreError> {
        let (mode, value) = s
            .split_once(':')
            .ok_or_else(|| ScoreError::Config(format!("expected absolute:<T> or top-fraction:<q>, got `{s}`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| ScoreError::Config(format!("invalid number in `{s}`")))?;
        let policy = match mode.trim() {
            "absolute" => FlagPolicy::Absolute { t: value },
            "top-fraction" | "top_fraction" => FlagPolicy::TopFraction { q: value },
            other => return Err(ScoreError::Config(format!("unknown flag mode `{other}`"))),
        };
        policy.validate()?;
        Ok(policy)
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    #[serde(default = "one")]
    pub w_v: f64,
    #[serde(default = "one")]
    pub w_e: f64,
    #[serde(default)]
    pub deviation_mode: DeviationMode,
    #[serde(default)]
    pub range_scope: RangeScopeMode,
    #[serde(default)]
    pub flag_policy: FlagPolicy,
    #[serde(default)]
    pub normalize_by_neighborhood: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            w_v: 1.0,
            w_e: 1.0,
            deviation_mode: DeviationMode::default(),
            range_scope: RangeScopeMode::default(),
            flag_policy: FlagPolicy::default(),
            normalize_by_neighborhood: false,
        }
    }
}

impl ScoringConfig {
    pub fn with_weights(mut self, w_v: f64, w_e: f64) -> Self {
        self.w_v = w_v;
        self.w_e = w_e;
        self
    }

    /// Full config invariant: non-negative finite weights with a positive sum.
    pub fn validate(&self) -> Result<(), ScoreError> {
        self.check_weights()?;
        if self.w_v + self.w_e <= 0.0 {
            return Err(ScoreError::Config("w_v + w_e must be positive".into()));
        }
        self.flag_policy.validate()
    }

    fn check_weights(&self) -> Result<(), ScoreError> {
        for (name, w) in [("w_v", self.w_v), ("w_e", self.w_e)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(ScoreError::Config(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPoint {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub x: f64,
    pub y_ref: f64,
    pub deviation: f64,
    pub score: f64,
    pub neighbor_count: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unscoreable {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    /// Ranked by descending score, ties by ascending id.
    pub points: Vec<ScoredPoint>,
    pub unscoreable: Vec<Unscoreable>,
}

/// |x − y| / span.
pub fn deviation(x: f64, y: f64, range: &Range) -> Result<f64, ScoreError> {
    if range.span <= 0.0 {
        return Err(ScoreError::ZeroSpan);
    }
    Ok((x - y).abs() / range.span)
}

/// Neighbors of `p` that exist in the corpus and share its field, in graph order.
fn same_field_peers<'a>(
    doc: &Document,
    graph: &'a PeerGraph,
    docs: &HashMap<&str, &'a Document>,
) -> Vec<(&'a str, &'a Document)> {
    graph
        .neighbors(&doc.id)
        .unwrap_or_default()
        .iter()
        .filter_map(|n| {
            docs.get(n.neighbor_id.as_str())
                .filter(|d| d.field_name == doc.field_name)
                .map(|d| (n.neighbor_id.as_str(), *d))
        })
        .collect()
}

fn index(corpus: &Corpus) -> HashMap<&str, &Document> {
    corpus.documents().iter().map(|d| (d.id.as_str(), d)).collect()
}

/// Mean of the same-field neighbors' extracted values.
pub fn reference_value(p: &str, graph: &PeerGraph, corpus: &Corpus) -> Result<f64, ScoreError> {
    let docs = index(corpus);
    let doc = docs
        .get(p)
        .ok_or_else(|| ScoreError::UnknownDocument(p.to_string()))?;
    let peers = same_field_peers(doc, graph, &docs);
    mean_value(p, &peers)
}

fn mean_value(p: &str, peers: &[(&str, &Document)]) -> Result<f64, ScoreError> {
    if peers.is_empty() {
        return Err(ScoreError::Isolated(p.to_string()));
    }
    Ok(peers.iter().map(|(_, d)| d.extracted_value).sum::<f64>() / peers.len() as f64)
}

struct Scorer<'a> {
    docs: HashMap<&'a str, &'a Document>,
    embeddings: HashMap<&'a str, &'a EmbeddingVector>,
    graph: &'a PeerGraph,
    corpus: &'a Corpus,
    config: &'a ScoringConfig,
    /// Corpus-wide range per field; `None` means zero span.
    field_ranges: HashMap<&'a str, Option<Range>>,
}

impl<'a> Scorer<'a> {
    fn new(
        corpus: &'a Corpus,
        embeddings: &'a [EmbeddingVector],
        graph: &'a PeerGraph,
        config: &'a ScoringConfig,
    ) -> Result<Self, ScoreError> {
        config.check_weights()?;
        check_uniform(embeddings)?;
        let mut field_ranges = HashMap::new();
        if config.range_scope == RangeScopeMode::Corpus {
            for spec in corpus.field_specs() {
                let range = match field_range(corpus, &spec.field_name, RangeScope::CorpusWide) {
                    Ok(r) => Some(r),
                    // a single document or identical values: every deviation is 0
                    Err(CorpusError::ZeroSpan { .. }) | Err(CorpusError::DegenerateRange { .. }) => None,
                    Err(e) => return Err(e.into()),
                };
                field_ranges.insert(spec.field_name.as_str(), range);
            }
        }
        Ok(Self {
            docs: index(corpus),
            embeddings: embeddings.iter().map(|e| (e.doc_id.as_str(), e)).collect(),
            graph,
            corpus,
            config,
            field_ranges,
        })
    }

    fn embedding(&self, id: &str) -> Result<&'a EmbeddingVector, ScoreError> {
        self.embeddings
            .get(id)
            .copied()
            .ok_or_else(|| ScoreError::IdSetMismatch(format!("no embedding for `{id}`")))
    }

    fn range_for(&self, doc: &Document, peers: &[(&str, &Document)]) -> Result<Option<Range>, ScoreError> {
        match self.config.range_scope {
            RangeScopeMode::Corpus => Ok(self.field_ranges.get(doc.field_name.as_str()).copied().flatten()),
            RangeScopeMode::Neighborhood => {
                let mut ids: Vec<String> = peers.iter().map(|(id, _)| id.to_string()).collect();
                ids.push(doc.id.clone());
                match field_range(self.corpus, &doc.field_name, RangeScope::IdSet(&ids)) {
                    Ok(r) => Ok(Some(r)),
                    Err(CorpusError::ZeroSpan { .. }) => Ok(None),
                    Err(e) => Err(e.into()),
                }
            }
        }
    }

    fn score(&self, p: &str) -> Result<ScoredPoint, ScoreError> {
        let doc = *self
            .docs
            .get(p)
            .ok_or_else(|| ScoreError::UnknownDocument(p.to_string()))?;
        let peers = same_field_peers(doc, self.graph, &self.docs);
        let y_ref = mean_value(p, &peers)?;
        let range = self.range_for(doc, &peers)?;
        // zero span within scope means every value in scope is equal
        let dev = |a: f64, b: f64| match &range {
            Some(r) => deviation(a, b, r),
            None => Ok(0.0),
        };
        let x = doc.extracted_value;
        let d_p = dev(x, y_ref)?;

        let emb_p = self.embedding(p)?;
        let mut sim_sum = 0.0;
        let mut dev_sum = 0.0;
        for (id, peer) in &peers {
            sim_sum += cosine_similarity(emb_p, self.embedding(id)?)?;
            dev_sum += match self.config.deviation_mode {
                DeviationMode::MeanReference => d_p,
                DeviationMode::PerNeighbor => dev(x, peer.extracted_value)?,
            };
        }
        if self.config.normalize_by_neighborhood {
            let n = peers.len() as f64;
            sim_sum /= n;
            dev_sum /= n;
        }
        Ok(ScoredPoint {
            doc_id: p.to_string(),
            x,
            y_ref,
            deviation: d_p,
            score: self.config.w_v * sim_sum + self.config.w_e * dev_sum,
            neighbor_count: peers.len(),
            flagged: false,
        })
    }
}

pub fn surprising_score(
    p: &str,
    graph: &PeerGraph,
    embeddings: &[EmbeddingVector],
    corpus: &Corpus,
    config: &ScoringConfig,
) -> Result<ScoredPoint, ScoreError> {
    Scorer::new(corpus, embeddings, graph, config)?.score(p)
}

fn id_set<'a>(ids: impl Iterator<Item = &'a str>) -> BTreeSet<&'a str> {
    ids.collect()
}

fn describe_diff(name_a: &str, a: &BTreeSet<&str>, name_b: &str, b: &BTreeSet<&str>) -> String {
    let only_a: Vec<&str> = a.difference(b).take(5).copied().collect();
    let only_b: Vec<&str> = b.difference(a).take(5).copied().collect();
    format!("only in {name_a}: {only_a:?}; only in {name_b}: {only_b:?}")
}

/// Scores every document, ranks the results and lists isolated points separately.
/// Points come back unflagged; see [`apply_flags`].
pub fn score_corpus(
    corpus: &Corpus,
    embeddings: &[EmbeddingVector],
    graph: &PeerGraph,
    config: &ScoringConfig,
) -> Result<ScoreReport, ScoreError> {
    let c = id_set(corpus.documents().iter().map(|d| d.id.as_str()));
    let e = id_set(embeddings.iter().map(|e| e.doc_id.as_str()));
    let g = id_set(graph.ids());
    if c != e {
        return Err(ScoreError::IdSetMismatch(describe_diff("corpus", &c, "embeddings", &e)));
    }
    if c != g {
        return Err(ScoreError::IdSetMismatch(describe_diff("corpus", &c, "peer graph", &g)));
    }
    let scorer = Scorer::new(corpus, embeddings, graph, config)?;
    let results: Vec<(String, Result<ScoredPoint, ScoreError>)> = c
        .par_iter()
        .map(|id| (id.to_string(), scorer.score(id)))
        .collect();

    let mut points = Vec::with_capacity(results.len());
    let mut unscoreable = Vec::new();
    for (id, r) in results {
        match r {
            Ok(p) => points.push(p),
            Err(ScoreError::Isolated(_)) => unscoreable.push(Unscoreable {
                id,
                reason: "no same-field neighbors".into(),
            }),
            Err(e) => return Err(e),
        }
    }
    rank(&mut points);
    Ok(ScoreReport { points, unscoreable })
}

/// Sorts by descending score, ties by ascending id.
pub fn rank(points: &mut [ScoredPoint]) {
    points.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagSet {
    /// Flagged ids in rank order.
    pub ids: Vec<String>,
    /// T for absolute policies; the lowest flagged score for top-fraction (None if nothing flagged).
    pub cut: Option<f64>,
}

/// ⌈q·n⌉, with products within 1e-9 of an integer treated as that integer.
pub fn top_fraction_count(q: f64, n: usize) -> usize {
    let raw = q * n as f64;
    let nearest = raw.round();
    let count = if (raw - nearest).abs() < 1e-9 { nearest } else { raw.ceil() };
    (count as usize).min(n)
}

/// Selects flagged points from an already ranked list.
pub fn flag(points: &[ScoredPoint], policy: &FlagPolicy) -> Result<FlagSet, ScoreError> {
    policy.validate()?;
    debug_assert!(points.windows(2).all(|w| w[0].score >= w[1].score));
    Ok(match *policy {
        FlagPolicy::Absolute { t } => FlagSet {
            ids: points.iter().filter(|p| p.score > t).map(|p| p.doc_id.clone()).collect(),
            cut: Some(t),
        },
        FlagPolicy::TopFraction { q } => {
            let n = top_fraction_count(q, points.len());
            FlagSet {
                ids: points[..n].iter().map(|p| p.doc_id.clone()).collect(),
                cut: points[..n].last().map(|p| p.score),
            }
        }
    })
}

/// Ranks `points`, flags them under `policy`, and sets each point's `flagged`.
pub fn apply_flags(points: &mut [ScoredPoint], policy: &FlagPolicy) -> Result<FlagSet, ScoreError> {
    rank(points);
    let set = flag(points, policy)?;
    let flagged: BTreeSet<&str> = set.ids.iter().map(String::as_str).collect();
    for p in points.iter_mut() {
        p.flagged = flagged.contains(p.doc_id.as_str());
    }
    Ok(set)
}

/// Sidecar of a score report: config echo, counts and the active cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub n_points: usize,
    pub n_unscoreable: usize,
    pub unscoreable: Vec<Unscoreable>,
    pub flagged_count: usize,
    pub policy: FlagPolicy,
    pub cut: Option<f64>,
}

pub fn write_score_report(path: &Path, points: &[ScoredPoint]) -> Result<(), ScoreError> {
    let mut buf = String::new();
    for p in points {
        buf.push_str(&serde_json::to_string(p).expect("point serializes"));
        buf.push('\n');
    }
    write_bytes(path, buf.as_bytes())
}

pub fn read_score_report(path: &Path) -> Result<Vec<ScoredPoint>, ScoreError> {
    let content = fs::read_to_string(path).map_err(|e| ScoreError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ScoreError::Io {
                path: path.display().to_string(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ScoreError> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), ScoreError> {
    let io = |e: std::io::Error| ScoreError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)
}
