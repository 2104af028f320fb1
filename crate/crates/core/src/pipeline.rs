//! Graph → score → flag → project, plus the artifact set shared by the CLI and
//! the benchmark runner.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::BenchError;
use crate::corpus::Corpus;
use crate::embedding::EmbeddingVector;
use crate::peers::{build_peer_graph, project_2d, write_projection_csv, PeerGraph, Projection2D, ProjectionRow, DEFAULT_K};
use crate::scoring::{apply_flags, score_corpus, write_json, write_score_report, FlagSet, ScoreError, ScoreReport, ScoreSummary, ScoringConfig};

pub const SCORES_FILE: &str = "scores.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PROJECTION_FILE: &str = "projection.csv";
pub const CONTEXT_FILE: &str = "context.jsonl";

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeersConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_similarity: Option<f64>,
}

impl Default for PeersConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            min_similarity: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScoringRun {
    pub embeddings: Vec<EmbeddingVector>,
    pub graph: PeerGraph,
    pub report: ScoreReport,
    pub flags: FlagSet,
    pub projection: Projection2D,
    pub policy: crate::scoring::FlagPolicy,
}

pub fn score(
    corpus: &Corpus,
    embeddings: Vec<EmbeddingVector>,
    peers: &PeersConfig,
    scoring: &ScoringConfig,
) -> Result<ScoringRun, BenchError> {
    let graph = build_peer_graph(&embeddings, peers.k, peers.min_similarity).map_err(BenchError::stage("graph"))?;
    let mut report = score_corpus(corpus, &embeddings, &graph, scoring).map_err(BenchError::stage("score"))?;
    let flags = apply_flags(&mut report.points, &scoring.flag_policy).map_err(BenchError::stage("flag"))?;
    let projection = project_2d(&embeddings).map_err(BenchError::stage("project"))?;
    Ok(ScoringRun {
        embeddings,
        graph,
        report,
        flags,
        projection,
        policy: scoring.flag_policy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextNeighbor {
    pub neighbor_id: String,
    pub similarity: f64,
    pub neighbor_value: f64,
}

/// Per-document evidence for reviewers: text, metadata and the neighbor list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub id: String,
    pub domain: String,
    pub field_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<String>,
    pub value: f64,
    pub text: String,
    pub neighbors: Vec<ContextNeighbor>,
}

pub fn context_records(corpus: &Corpus, graph: &PeerGraph) -> Vec<ContextRecord> {
    let values: HashMap<&str, f64> = corpus
        .documents()
        .iter()
        .map(|d| (d.id.as_str(), d.extracted_value))
        .collect();
    corpus
        .documents()
        .iter()
        .map(|d| ContextRecord {
            id: d.id.clone(),
            domain: d.domain.clone(),
            field_name: d.field_name.clone(),
            cluster_id: d.cluster_id.clone(),
            value: d.extracted_value,
            text: d.text.clone(),
            neighbors: graph
                .neighbors(&d.id)
                .unwrap_or_default()
                .iter()
                .map(|n| ContextNeighbor {
                    neighbor_id: n.neighbor_id.clone(),
                    similarity: n.similarity,
                    neighbor_value: values.get(n.neighbor_id.as_str()).copied().unwrap_or(f64::NAN),
                })
                .collect(),
        })
        .collect()
}

pub fn projection_rows(corpus: &Corpus, run: &ScoringRun) -> Vec<ProjectionRow> {
    let points: HashMap<&str, &crate::scoring::ScoredPoint> =
        run.report.points.iter().map(|p| (p.doc_id.as_str(), p)).collect();
    let values: HashMap<&str, f64> = corpus
        .documents()
        .iter()
        .map(|d| (d.id.as_str(), d.extracted_value))
        .collect();
    run.projection
        .points
        .iter()
        .map(|(id, pt)| {
            let scored = points.get(id.as_str());
            ProjectionRow {
                id: id.clone(),
                x: pt.x,
                y: pt.y,
                value: values[id.as_str()],
                flagged: scored.is_some_and(|p| p.flagged),
                score: scored.map(|p| p.score),
            }
        })
        .collect()
}

pub fn summary(run: &ScoringRun, config_echo: serde_json::Value, seed: Option<u64>) -> ScoreSummary {
    ScoreSummary {
        config: config_echo,
        seed,
        n_points: run.report.points.len(),
        n_unscoreable: run.report.unscoreable.len(),
        unscoreable: run.report.unscoreable.clone(),
        flagged_count: run.flags.ids.len(),
        policy: run.policy,
        cut: run.flags.cut,
    }
}

/// Writes scores, summary, projection CSV and reviewer context into `dir`.
pub fn write_artifacts(
    dir: &Path,
    corpus: &Corpus,
    run: &ScoringRun,
    config_echo: serde_json::Value,
    seed: Option<u64>,
) -> Result<(), ScoreError> {
    std::fs::create_dir_all(dir).map_err(|e| ScoreError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    write_score_report(&dir.join(SCORES_FILE), &run.report.points)?;
    write_json(&dir.join(SUMMARY_FILE), &summary(run, config_echo, seed))?;
    write_projection_csv(&dir.join(PROJECTION_FILE), &projection_rows(corpus, run))?;

    let mut buf = String::new();
    for rec in context_records(corpus, &run.graph) {
        buf.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        buf.push('\n');
    }
    std::fs::write(dir.join(CONTEXT_FILE), buf).map_err(|e| ScoreError::Io {
        path: dir.join(CONTEXT_FILE).display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_context(path: &Path) -> Result<Vec<ContextRecord>, ScoreError> {
    let io = |message: String| ScoreError::Io {
        path: path.display().to_string(),
        message,
    };
    let content = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| io(format!("line {}: {e}", i + 1))))
        .collect()
}
