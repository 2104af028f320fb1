//! In-memory review session: scored points, projection, context and verdicts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use pcod_core::peers::{read_projection_csv, ProjectionRow};
use pcod_core::pipeline::{read_context, ContextRecord, CONTEXT_FILE, SUMMARY_FILE};
use pcod_core::scoring::{apply_flags, read_score_report, FlagPolicy, ScoreSummary, ScoredPoint};
use serde::Serialize;

use crate::log::{Verdict, VerdictLog, VerdictRecord};
use crate::ServiceError;

#[derive(Debug, Clone)]
pub struct SessionFiles {
    pub scores: PathBuf,
    pub projection: PathBuf,
    pub log: PathBuf,
    /// Defaults to `summary.json` next to the scores file, if present.
    pub summary: Option<PathBuf>,
    /// Defaults to `context.jsonl` next to the scores file, if present.
    pub context: Option<PathBuf>,
}

impl SessionFiles {
    pub fn new(scores: impl Into<PathBuf>, projection: impl Into<PathBuf>, log: impl Into<PathBuf>) -> Self {
        Self {
            scores: scores.into(),
            projection: projection.into(),
            log: log.into(),
            summary: None,
            context: None,
        }
    }

    fn sibling(&self, explicit: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
        if let Some(p) = explicit {
            return Some(p.clone());
        }
        let candidate = self.scores.parent().unwrap_or(Path::new(".")).join(name);
        candidate.exists().then_some(candidate)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryView {
    pub n_points: usize,
    pub n_unscoreable: usize,
    pub flagged_count: usize,
    pub policy: FlagPolicy,
    pub cut: Option<f64>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub reviewed_count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointView {
    pub id: String,
    pub rank: usize,
    pub x: f64,
    pub y_ref: f64,
    pub deviation: f64,
    pub score: f64,
    pub neighbor_count: usize,
    pub flagged: bool,
    pub proj_x: f64,
    pub proj_y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NeighborView {
    pub id: String,
    pub similarity: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointDetail {
    #[serde(flatten)]
    pub point: PointView,
    pub text: Option<String>,
    pub field_name: Option<String>,
    pub cluster_id: Option<String>,
    pub neighbors: Vec<NeighborView>,
    pub history: Vec<VerdictRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExportRow {
    #[serde(flatten)]
    pub point: PointView,
    pub note: Option<String>,
    pub verdict_timestamp: Option<chrono::DateTime<chrono::Utc>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Export {
    pub summary: SummaryView,
    pub points: Vec<ExportRow>,
    pub log: Vec<VerdictRecord>,
}

#[derive(Debug)]
pub struct Session {
    points: Vec<ScoredPoint>,
    index: HashMap<String, usize>,
    projection: HashMap<String, ProjectionRow>,
    context: HashMap<String, ContextRecord>,
    summary: Option<ScoreSummary>,
    policy: FlagPolicy,
    cut: Option<f64>,
    flagged_count: usize,
    history: BTreeMap<String, Vec<VerdictRecord>>,
    records: Vec<VerdictRecord>,
    log: VerdictLog,
}

impl Session {
    pub fn load(files: &SessionFiles) -> Result<Self, ServiceError> {
        let mut points = read_score_report(&files.scores)?;
        let projection_rows = read_projection_csv(&files.projection).map_err(|e| {
            ServiceError::Input(format!("{}: {e}", files.projection.display()))
        })?;
        let summary: Option<ScoreSummary> = match files.sibling(&files.summary, SUMMARY_FILE) {
            Some(p) => {
                let raw = std::fs::read_to_string(&p)
                    .map_err(|e| ServiceError::Input(format!("{}: {e}", p.display())))?;
                Some(serde_json::from_str(&raw).map_err(|e| ServiceError::Input(format!("{}: {e}", p.display())))?)
            }
            None => None,
        };
        let context = match files.sibling(&files.context, CONTEXT_FILE) {
            Some(p) => read_context(&p)?.into_iter().map(|c| (c.id.clone(), c)).collect(),
            None => HashMap::new(),
        };

        let mut seen = BTreeSet::new();
        for p in &points {
            if !seen.insert(p.doc_id.clone()) {
                return Err(ServiceError::Input(format!("duplicate id {} in score report", p.doc_id)));
            }
        }
        let projection: HashMap<String, ProjectionRow> =
            projection_rows.into_iter().map(|r| (r.id.clone(), r)).collect();
        for p in &points {
            if !projection.contains_key(&p.doc_id) {
                return Err(ServiceError::IdMismatch(format!(
                    "id {} is in the score report but missing from the projection",
                    p.doc_id
                )));
            }
        }
        let unscoreable: BTreeSet<&str> = summary
            .iter()
            .flat_map(|s| s.unscoreable.iter().map(|u| u.id.as_str()))
            .collect();
        let mut extra: Vec<&String> = projection
            .keys()
            .filter(|id| !seen.contains(*id) && !unscoreable.contains(id.as_str()))
            .collect();
        extra.sort();
        if let Some(id) = extra.first() {
            return Err(ServiceError::IdMismatch(format!(
                "id {id} is in the projection but missing from the score report"
            )));
        }

        let policy = summary.as_ref().map(|s| s.policy).unwrap_or_default();
        let flags = apply_flags(&mut points, &policy)?;
        let index = points.iter().enumerate().map(|(i, p)| (p.doc_id.clone(), i)).collect();

        let (log, records) = VerdictLog::open(&files.log)?;
        let mut session = Self {
            points,
            index,
            projection,
            context,
            summary,
            policy,
            cut: flags.cut,
            flagged_count: flags.ids.len(),
            history: BTreeMap::new(),
            records: Vec::new(),
            log,
        };
        for rec in records {
            if !session.index.contains_key(&rec.doc_id) {
                return Err(ServiceError::IdMismatch(format!(
                    "verdict log refers to unknown id {}",
                    rec.doc_id
                )));
            }
            session.history.entry(rec.doc_id.clone()).or_default().push(rec.clone());
            session.records.push(rec);
        }
        Ok(session)
    }

    pub fn summary(&self) -> SummaryView {
        SummaryView {
            n_points: self.points.len(),
            n_unscoreable: self.summary.as_ref().map_or(0, |s| s.n_unscoreable),
            flagged_count: self.flagged_count,
            policy: self.policy,
            cut: self.cut,
            seed: self.summary.as_ref().and_then(|s| s.seed),
            config: self.summary.as_ref().map_or(serde_json::Value::Null, |s| s.config.clone()),
            reviewed_count: self.history.len(),
        }
    }

    fn view(&self, rank: usize, p: &ScoredPoint) -> PointView {
        let proj = &self.projection[&p.doc_id];
        PointView {
            id: p.doc_id.clone(),
            rank: rank + 1,
            x: p.x,
            y_ref: p.y_ref,
            deviation: p.deviation,
            score: p.score,
            neighbor_count: p.neighbor_count,
            flagged: p.flagged,
            proj_x: proj.x,
            proj_y: proj.y,
            domain: self.context.get(&p.doc_id).map(|c| c.domain.clone()),
            verdict: self.latest(&p.doc_id).map(|r| r.verdict),
        }
    }

    fn latest(&self, id: &str) -> Option<&VerdictRecord> {
        self.history.get(id).and_then(|h| h.last())
    }

    pub fn points(&self, flagged_only: bool) -> Vec<PointView> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| !flagged_only || p.flagged)
            .map(|(i, p)| self.view(i, p))
            .collect()
    }

    pub fn point(&self, id: &str) -> Option<PointDetail> {
        let &i = self.index.get(id)?;
        let ctx = self.context.get(id);
        Some(PointDetail {
            point: self.view(i, &self.points[i]),
            text: ctx.map(|c| c.text.clone()),
            field_name: ctx.map(|c| c.field_name.clone()),
            cluster_id: ctx.and_then(|c| c.cluster_id.clone()),
            neighbors: ctx
                .map(|c| {
                    c.neighbors
                        .iter()
                        .map(|n| NeighborView {
                            id: n.neighbor_id.clone(),
                            similarity: n.similarity,
                            value: n.neighbor_value,
                        })
                        .collect()
                })
                .unwrap_or_default(),
            history: self.history.get(id).cloned().unwrap_or_default(),
        })
    }

    pub fn set_policy(&mut self, policy: FlagPolicy) -> Result<SummaryView, ServiceError> {
        let flags = apply_flags(&mut self.points, &policy)?;
        self.policy = policy;
        self.cut = flags.cut;
        self.flagged_count = flags.ids.len();
        Ok(self.summary())
    }

    pub fn record(&mut self, id: &str, verdict: Verdict, note: &str) -> Result<VerdictRecord, ServiceError> {
        if !self.index.contains_key(id) {
            return Err(ServiceError::UnknownId(id.to_string()));
        }
        let rec = self.log.append(id, verdict, note)?;
        self.history.entry(id.to_string()).or_default().push(rec.clone());
        self.records.push(rec.clone());
        Ok(rec)
    }

    pub fn export(&self) -> Export {
        let points = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let latest = self.latest(&p.doc_id);
                ExportRow {
                    point: self.view(i, p),
                    note: latest.map(|r| r.note.clone()),
                    verdict_timestamp: latest.map(|r| r.timestamp),
                }
            })
            .collect();
        Export {
            summary: self.summary(),
            points,
            log: self.records.clone(),
        }
    }
}
