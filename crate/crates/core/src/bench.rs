//! Synthetic clustered corpora with planted corruption, a z-score baseline,
//! and precision/recall evaluation against the planted ground truth.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Document, FieldSpec};
use crate::embedding::{EmbedError, ProviderConfig};
use crate::pipeline::{self, PeersConfig};
use crate::scoring::{write_json, ScoringConfig};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark config: {0}")]
    Config(String),
    #[error("field `{field}` has fewer than 3 values")]
    TooFewValues { field: String },
    #[error("flagged id `{0}` is not in the corpus")]
    UnknownFlaggedId(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl BenchError {
    pub(crate) fn stage<E: std::error::Error + Send + Sync + 'static>(stage: &'static str) -> impl FnOnce(E) -> Self {
        move |e| BenchError::Stage {
            stage,
            source: Box::new(e),
        }
    }

    /// True when the failure came from the embedding provider.
    pub fn is_provider_failure(&self) -> bool {
        match self {
            BenchError::Stage { source, .. } => source
                .downcast_ref::<EmbedError>()
                .is_some_and(EmbedError::is_provider_failure),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain: String,
    pub field_name: String,
    pub unit: String,
    pub value_min: f64,
    pub value_max: f64,
    pub clusters: usize,
    pub papers_per_cluster: usize,
    /// Optional topic label per cluster; its words join the cluster vocabulary.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cluster_labels: Vec<String>,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if !(self.value_min.is_finite() && self.value_max.is_finite() && self.value_min < self.value_max) {
            return Err(BenchError::Config(format!("{}: value_min must be < value_max", self.domain)));
        }
        if self.clusters == 0 || self.papers_per_cluster == 0 {
            return Err(BenchError::Config(format!(
                "{}: clusters and papers_per_cluster must be positive",
                self.domain
            )));
        }
        if !self.cluster_labels.is_empty() && self.cluster_labels.len() != self.clusters {
            return Err(BenchError::Config(format!(
                "{}: {} cluster labels for {} clusters",
                self.domain,
                self.cluster_labels.len(),
                self.clusters
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub corrupted_ids: BTreeSet<String>,
    pub corruption_factor: BTreeMap<String, f64>,
}

const FILLER: &[&str] = &[
    "method", "results", "experiment", "analysis", "data", "approach", "evaluation", "study",
    "performance", "framework", "baseline", "measurement", "protocol", "dataset", "setup",
    "findings",
];

const TEMPLATES: &[&str] = &[
    "{C} {C} method for {D} {D} {F}.",
    "{C} approach combines {D} {C} with {D} {D}.",
    "Experiments on {D} {D} benchmarks measure {F} of {C} {C}.",
    "{C} {D} analysis reports {FIELD} for {D} {C}.",
    "Against {D} {F} baselines, {C} {C} improves {D} {D}.",
    "We examine {C} {D} under {D} {C} conditions.",
    "{C} {F} built on {D} {D} {C} techniques.",
];

const CLUSTER_VOCAB: usize = 12;
const DOMAIN_VOCAB: usize = 12;
const SENTENCES_PER_DOC: usize = 12;

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

fn pseudo_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st", "pl"];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "eo"];
    loop {
        let syllables = rng.gen_range(3..=4);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
        }
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn vocabulary(rng: &mut ChaCha8Rng, used: &mut HashSet<String>, n: usize) -> Vec<String> {
    (0..n).map(|_| pseudo_word(rng, used)).collect()
}

fn render(rng: &mut ChaCha8Rng, cluster: &[String], domain: &[String], field: &str) -> String {
    let field_words = field.replace('_', " ");
    let mut sentences = Vec::with_capacity(SENTENCES_PER_DOC);
    for _ in 0..SENTENCES_PER_DOC {
        let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
        let mut s = String::new();
        let mut rest = template;
        while let Some(start) = rest.find('{') {
            s.push_str(&rest[..start]);
            let end = start + rest[start..].find('}').expect("closed placeholder");
            let word = match &rest[start + 1..end] {
                "C" => cluster[rng.gen_range(0..cluster.len())].as_str(),
                "D" => domain[rng.gen_range(0..domain.len())].as_str(),
                "F" => FILLER[rng.gen_range(0..FILLER.len())],
                "FIELD" => field_words.as_str(),
                other => unreachable!("unknown placeholder {other}"),
            };
            s.push_str(word);
            rest = &rest[end + 1..];
        }
        s.push_str(rest);
        sentences.push(s);
    }
    sentences.join(" ")
}

/// Generates `clusters × papers_per_cluster` documents per domain. Each cluster
/// draws most of its words from its own vocabulary, so same-cluster texts share
/// far more tokens than cross-cluster ones. Values are uniform in the domain range.
pub fn generate_corpus(specs: &[DomainSpec], seed: u64) -> Result<Corpus, BenchError> {
    if specs.is_empty() {
        return Err(BenchError::Config("at least one domain is required".into()));
    }
    let mut field_specs: Vec<FieldSpec> = Vec::new();
    for spec in specs {
        spec.validate()?;
        let fs = FieldSpec {
            field_name: spec.field_name.clone(),
            unit: spec.unit.clone(),
            expected_min: spec.value_min,
            expected_max: spec.value_max,
        };
        match field_specs.iter().find(|f| f.field_name == fs.field_name) {
            Some(existing) if *existing != fs => {
                return Err(BenchError::Config(format!(
                    "field `{}` declared with conflicting ranges",
                    fs.field_name
                )))
            }
            Some(_) => {}
            None => field_specs.push(fs),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut documents = Vec::new();
    for spec in specs {
        let dslug = slug(&spec.domain);
        let domain_vocab = vocabulary(&mut rng, &mut used, DOMAIN_VOCAB);
        for c in 0..spec.clusters {
            let mut cluster_vocab = vocabulary(&mut rng, &mut used, CLUSTER_VOCAB);
            if let Some(label) = spec.cluster_labels.get(c) {
                cluster_vocab.extend(label.split_whitespace().map(str::to_lowercase));
            }
            let cluster_id = format!("{dslug}-c{c:02}");
            for i in 0..spec.papers_per_cluster {
                let text = render(&mut rng, &cluster_vocab, &domain_vocab, &spec.field_name);
                let value = rng.gen_range(spec.value_min..=spec.value_max);
                documents.push(Document {
                    id: format!("{cluster_id}-p{i:03}"),
                    text,
                    domain: spec.domain.clone(),
                    field_name: spec.field_name.clone(),
                    extracted_value: value,
                    cluster_id: Some(cluster_id.clone()),
                });
            }
        }
    }
    Ok(Corpus::new(documents, field_specs)?)
}

/// ⌊fraction·n⌋, tolerant of products a hair below an integer.
fn floor_count(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let nearest = raw.round();
    let count = if (raw - nearest).abs() < 1e-9 { nearest } else { raw.floor() };
    (count as usize).min(n)
}

/// Moves ⌊fraction·n⌋ values per domain outside the field's expected range by
/// `f·span`, `f` uniform in `[factor_min, factor_max]`, on a random side.
pub fn corrupt(
    corpus: &Corpus,
    fraction: f64,
    factor_min: f64,
    factor_max: f64,
    seed: u64,
) -> Result<(Corpus, GroundTruth), BenchError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(BenchError::Config(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    if !(factor_min.is_finite() && factor_max.is_finite() && factor_min >= 1.0 && factor_max >= factor_min) {
        return Err(BenchError::Config(format!(
            "need 1 <= factor_min <= factor_max, got [{factor_min}, {factor_max}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut new_values = BTreeMap::new();
    let mut truth = GroundTruth::default();
    for domain in corpus.domains() {
        let docs: Vec<&Document> = corpus.documents().iter().filter(|d| d.domain == domain).collect();
        let m = floor_count(fraction, docs.len());
        let mut picked = sample(&mut rng, docs.len(), m).into_vec();
        picked.sort_unstable();
        for idx in picked {
            let doc = docs[idx];
            let spec = corpus
                .field_spec(&doc.field_name)
                .expect("corpus covers every field");
            let span = spec.expected_max - spec.expected_min;
            let f = rng.gen_range(factor_min..=factor_max);
            let value = if rng.gen_bool(0.5) {
                spec.expected_max + f * span
            } else {
                spec.expected_min - f * span
            };
            new_values.insert(doc.id.clone(), value);
            truth.corrupted_ids.insert(doc.id.clone());
            truth.corruption_factor.insert(doc.id.clone(), f);
        }
    }
    Ok((corpus.with_values(&new_values)?, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreOutcome {
    pub flagged: Vec<String>,
    pub warnings: Vec<String>,
}

type ZScores = BTreeMap<String, Option<f64>>;

/// |value − field mean| / field std-dev per document (population std-dev).
/// Fields with zero variance get `None`.
fn zscores(corpus: &Corpus) -> Result<(ZScores, Vec<String>), BenchError> {
    let mut by_field: BTreeMap<&str, Vec<&Document>> = BTreeMap::new();
    for d in corpus.documents() {
        by_field.entry(d.field_name.as_str()).or_default().push(d);
    }
    let mut out = BTreeMap::new();
    let mut warnings = Vec::new();
    for (field, docs) in by_field {
        if docs.len() < 3 {
            return Err(BenchError::TooFewValues { field: field.to_string() });
        }
        let n = docs.len() as f64;
        let mean = docs.iter().map(|d| d.extracted_value).sum::<f64>() / n;
        let var = docs.iter().map(|d| (d.extracted_value - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std == 0.0 {
            warnings.push(format!("field `{field}` has zero variance; nothing flagged"));
        }
        for d in docs {
            let z = (std > 0.0).then(|| (d.extracted_value - mean).abs() / std);
            out.insert(d.id.clone(), z);
        }
    }
    Ok((out, warnings))
}

/// Flags documents whose per-field |z| exceeds `z_cut`, in corpus order.
pub fn baseline_zscore(corpus: &Corpus, z_cut: f64) -> Result<ZScoreOutcome, BenchError> {
    let (z, warnings) = zscores(corpus)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let flagged = corpus
        .documents()
        .iter()
        .filter(|d| z[&d.id].is_some_and(|z| z > z_cut))
        .map(|d| d.id.clone())
        .collect();
    Ok(ZScoreOutcome { flagged, warnings })
}

/// The `count` documents with the largest |z| (ties by id), for comparisons at a
/// matched flag count.
pub fn baseline_zscore_top(corpus: &Corpus, count: usize) -> Result<Vec<String>, BenchError> {
    let (z, _) = zscores(corpus)?;
    let mut ranked: Vec<(f64, &str)> = z.iter().map(|(id, z)| (z.unwrap_or(0.0), id.as_str())).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(ranked.into_iter().take(count).map(|(_, id)| id.to_string()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainResult {
    pub domain: String,
    pub n_documents: usize,
    pub n_corrupted: usize,
    pub flagged: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Pooled over all domains.
    pub micro_precision: Option<f64>,
    pub micro_recall: Option<f64>,
    /// Mean over domains where the metric is defined.
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub flagged_count: usize,
    pub domains: Vec<DomainResult>,
    pub overall: Aggregate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Box<BenchmarkReport>>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

pub fn evaluate(flagged: &[String], truth: &GroundTruth, corpus: &Corpus) -> Result<BenchmarkReport, BenchError> {
    let ids: HashSet<&str> = corpus.documents().iter().map(|d| d.id.as_str()).collect();
    let flagged: BTreeSet<&str> = flagged.iter().map(String::as_str).collect();
    if let Some(bad) = flagged.iter().find(|id| !ids.contains(**id)) {
        return Err(BenchError::UnknownFlaggedId(bad.to_string()));
    }
    let mut domains = Vec::new();
    for domain in corpus.domains() {
        let (mut n, mut corrupted, mut nflag, mut tp, mut fp, mut fneg) = (0, 0, 0, 0, 0, 0);
        for d in corpus.documents().iter().filter(|d| d.domain == domain) {
            n += 1;
            let bad = truth.corrupted_ids.contains(&d.id);
            let hit = flagged.contains(d.id.as_str());
            corrupted += bad as usize;
            nflag += hit as usize;
            match (bad, hit) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                (false, false) => {}
            }
        }
        domains.push(DomainResult {
            domain,
            n_documents: n,
            n_corrupted: corrupted,
            flagged: nflag,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fneg,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fneg),
        });
    }
    let tp: usize = domains.iter().map(|d| d.true_positives).sum();
    let fp: usize = domains.iter().map(|d| d.false_positives).sum();
    let fneg: usize = domains.iter().map(|d| d.false_negatives).sum();
    let overall = Aggregate {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        micro_precision: ratio(tp, tp + fp),
        micro_recall: ratio(tp, tp + fneg),
        macro_precision: mean_defined(domains.iter().map(|d| d.precision)),
        macro_recall: mean_defined(domains.iter().map(|d| d.recall)),
    };
    Ok(BenchmarkReport {
        method: "peer-context".into(),
        seed: None,
        config: None,
        flagged_count: flagged.len(),
        domains,
        overall,
        baseline: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub fraction: f64,
    pub factor_min: f64,
    pub factor_max: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            fraction: 0.25,
            factor_min: 3.0,
            factor_max: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seed: u64,
    pub domains: Vec<DomainSpec>,
    #[serde(default)]
    pub corruption: CorruptionConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub peers: PeersConfig,
    #[serde(default)]
    pub embedding: ProviderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
}

impl BenchConfig {
    pub fn from_json(s: &str) -> Result<Self, BenchError> {
        serde_json::from_str(s).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    /// Echo for reports: everything except where files go.
    pub fn echo(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.output_dir = None;
        c.cache_path = None;
        serde_json::to_value(c).expect("config serializes")
    }
}

pub mod presets {
    use super::BenchConfig;

    pub const MULTI_DOMAIN: &str = include_str!("../presets/multi_domain.json");
    pub const CS_200: &str = include_str!("../presets/cs_200.json");

    /// Bundled preset by name (`multi_domain`, `cs_200`, with or without `.json`).
    pub fn get(name: &str) -> Option<BenchConfig> {
        let src = match name.trim_end_matches(".json") {
            "multi_domain" => MULTI_DOMAIN,
            "cs_200" => CS_200,
            _ => return None,
        };
        Some(BenchConfig::from_json(src).expect("bundled preset parses"))
    }

    pub fn multi_domain() -> BenchConfig {
        get("multi_domain").unwrap()
    }

    pub fn cs_200() -> BenchConfig {
        get("cs_200").unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub report: BenchmarkReport,
    pub corpus: Corpus,
    pub truth: GroundTruth,
    pub run: pipeline::ScoringRun,
}

/// generate → corrupt → embed → graph → score → flag → evaluate, all from one seed.
/// Writes artifacts when `output_dir` is set.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchmarkOutcome, BenchError> {
    config.scoring.validate().map_err(BenchError::stage("config"))?;
    config.embedding.validate().map_err(BenchError::stage("config"))?;
    let clean = generate_corpus(&config.domains, config.seed)?;
    let c = &config.corruption;
    // corruption draws from its own stream so generation is unaffected by it
    let (corpus, truth) = corrupt(&clean, c.fraction, c.factor_min, c.factor_max, config.seed.wrapping_add(1))?;

    let embeddings = match &config.cache_path {
        Some(path) => crate::embedding::embed_corpus(&config.embedding, &corpus, path),
        None => crate::embedding::embed_corpus_uncached(&config.embedding, &corpus),
    }
    .map_err(BenchError::stage("embed"))?;

    let run = pipeline::score(&corpus, embeddings, &config.peers, &config.scoring)?;

    let mut report = evaluate(&run.flags.ids, &truth, &corpus).map_err(BenchError::stage("evaluate"))?;
    let baseline_ids = baseline_zscore_top(&corpus, run.flags.ids.len()).map_err(BenchError::stage("baseline"))?;
    let mut baseline = evaluate(&baseline_ids, &truth, &corpus).map_err(BenchError::stage("baseline"))?;
    baseline.method = "zscore-matched-count".into();
    report.seed = Some(config.seed);
    report.config = Some(config.echo());
    report.baseline = Some(Box::new(baseline));

    if let Some(dir) = &config.output_dir {
        write_benchmark_artifacts(dir, config, &corpus, &truth, &run, &report)?;
    }
    Ok(BenchmarkOutcome {
        report,
        corpus,
        truth,
        run,
    })
}

fn write_benchmark_artifacts(
    dir: &Path,
    config: &BenchConfig,
    corpus: &Corpus,
    truth: &GroundTruth,
    run: &pipeline::ScoringRun,
    report: &BenchmarkReport,
) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir).map_err(BenchError::stage("write"))?;
    corpus.write_jsonl(&dir.join("corpus.jsonl"))?;
    corpus.write_field_specs(&dir.join("field_specs.json"))?;
    write_json(&dir.join("ground_truth.json"), truth).map_err(BenchError::stage("write"))?;
    crate::embedding::write_embeddings(&dir.join("embeddings.jsonl"), &run.embeddings, serde_json::to_value(&config.embedding).expect("config serializes"))
        .map_err(BenchError::stage("write"))?;
    let echo = serde_json::json!({
        "benchmark": config.echo(),
        "scoring": config.scoring,
        "peers": config.peers,
        "provider_tag": run.embeddings.first().map(|e| e.provider_tag().to_string()),
    });
    pipeline::write_artifacts(dir, corpus, run, echo, Some(config.seed)).map_err(BenchError::stage("write"))?;
    write_json(&dir.join("report.json"), report).map_err(BenchError::stage("write"))?;
    Ok(())
}
