//! `pcod`: embed, score, benchmark and review.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pcod_core::bench::{presets, run_benchmark, BenchConfig, BenchError};
use pcod_core::corpus::{load_corpus, load_corpus_with_specs, Corpus, CorpusError};
use pcod_core::embedding::{
    embed_corpus, embed_corpus_uncached, read_embeddings, write_embeddings, EmbedError, EmbeddingVector,
    ProviderConfig, ProviderKind,
};
use pcod_core::pipeline::{self, PeersConfig};
use pcod_core::scoring::{DeviationMode, FlagPolicy, RangeScopeMode, ScoreError, ScoringConfig};
use pcod_service::{ServiceError, Session, SessionFiles};
use serde::{Deserialize, Serialize};

const API_KEY_ENV: &str = "PCOD_API_KEY";

#[derive(Debug, Parser)]
#[command(name = "pcod", version, about = "Peer-context outlier detection for extracted numerical values")]
struct Cli {
    /// JSON config file with `embedding`, `peers`, `scoring` and `cache_path` sections.
    #[arg(long, global = true, env = "PCOD_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads for embedding and scoring (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed a corpus and write an embeddings file.
    Embed(EmbedArgs),
    /// Build the peer graph, score, flag and write the report artifacts.
    Score(ScoreArgs),
    /// Run a synthetic benchmark from a preset name or a config file.
    Bench(BenchArgs),
    /// Start the review service over a score report.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProviderArg {
    Local,
    Remote,
}

#[derive(Debug, Args)]
struct ProviderArgs {
    #[arg(long)]
    provider: Option<ProviderArg>,
    #[arg(long, env = "PCOD_MODEL")]
    model: Option<String>,
    #[arg(long, env = "PCOD_ENDPOINT")]
    endpoint: Option<String>,
    /// Vector dimension for the local embedder.
    #[arg(long)]
    dimension: Option<usize>,
    /// Embedding cache file; skipped when neither this nor the config sets one.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    field_specs: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long, default_value = "embeddings.jsonl")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DeviationArg {
    MeanReference,
    PerNeighbor,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScopeArg {
    Corpus,
    Neighborhood,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    field_specs: Option<PathBuf>,
    /// Precomputed embeddings; computed on the fly when absent.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    min_sim: Option<f64>,
    #[arg(long)]
    w_v: Option<f64>,
    #[arg(long)]
    w_e: Option<f64>,
    #[arg(long, value_enum)]
    deviation_mode: Option<DeviationArg>,
    #[arg(long, value_enum)]
    range_scope: Option<ScopeArg>,
    /// `absolute:<T>` or `top-fraction:<q>`.
    #[arg(long)]
    flag: Option<String>,
    /// Divide both sums by the neighborhood size.
    #[arg(long)]
    normalize: bool,
    /// Recorded in the summary for provenance.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "pcod-out")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Bundled preset (`cs_200`, `multi_domain`) or path to a benchmark config.
    preset: String,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Score report (`scores.jsonl`).
    #[arg(long)]
    report: PathBuf,
    /// Defaults to `projection.csv` next to the report.
    #[arg(long)]
    projection: Option<PathBuf>,
    /// Defaults to `verdicts.jsonl` next to the report.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Console build to serve under `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Open the console in a browser once listening.
    #[arg(long)]
    open: bool,
}

/// Shape of `--config`; every section is optional.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    embedding: Option<ProviderConfig>,
    #[serde(default)]
    peers: Option<PeersConfig>,
    #[serde(default)]
    scoring: Option<ScoringConfig>,
    #[serde(default)]
    cache_path: Option<PathBuf>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&raw)
            .map_err(|e| CorpusError::Invalid(format!("{}: {e}", path.display())))
            .map_err(Into::into)
    }
}

fn provider_config(args: &ProviderArgs, file: &FileConfig) -> ProviderConfig {
    let mut cfg = file.embedding.clone().unwrap_or_default();
    match args.provider {
        Some(ProviderArg::Local) => cfg.kind = ProviderKind::LocalDeterministic,
        Some(ProviderArg::Remote) => cfg.kind = ProviderKind::Remote,
        None => {}
    }
    if let Some(m) = &args.model {
        cfg.model_name = m.clone();
    }
    if let Some(e) = &args.endpoint {
        cfg.endpoint_url = Some(e.clone());
    }
    if let Some(d) = args.dimension {
        cfg.dimension = Some(d);
    }
    if let Ok(key) = std::env::var(API_KEY_ENV) {
        if !key.is_empty() {
            cfg.api_credential = Some(key);
        }
    }
    cfg
}

fn load(corpus: &Path, specs: Option<&Path>) -> Result<Corpus> {
    Ok(match specs {
        Some(s) => load_corpus_with_specs(corpus, s)?,
        None => load_corpus(corpus)?,
    })
}

fn compute_embeddings(corpus: &Corpus, args: &ProviderArgs, file: &FileConfig) -> Result<(Vec<EmbeddingVector>, ProviderConfig)> {
    let cfg = provider_config(args, file);
    let cache = args.cache.clone().or_else(|| file.cache_path.clone());
    let vectors = match cache {
        Some(path) => embed_corpus(&cfg, corpus, &path)?,
        None => embed_corpus_uncached(&cfg, corpus)?,
    };
    Ok((vectors, cfg))
}

fn cmd_embed(args: EmbedArgs, file: &FileConfig) -> Result<()> {
    let corpus = load(&args.corpus, args.field_specs.as_deref())?;
    let (vectors, cfg) = compute_embeddings(&corpus, &args.provider, file)?;
    write_embeddings(&args.out, &vectors, serde_json::to_value(&cfg)?)?;
    println!("embedded {} documents with {} -> {}", vectors.len(), cfg.provider_tag(), args.out.display());
    Ok(())
}

fn cmd_score(args: ScoreArgs, file: &FileConfig) -> Result<()> {
    let corpus = load(&args.corpus, args.field_specs.as_deref())?;

    let mut peers = file.peers.clone().unwrap_or_default();
    if let Some(k) = args.k {
        peers.k = k;
    }
    if let Some(m) = args.min_sim {
        peers.min_similarity = Some(m);
    }
    let mut scoring = file.scoring.clone().unwrap_or_default();
    if let Some(w) = args.w_v {
        scoring.w_v = w;
    }
    if let Some(w) = args.w_e {
        scoring.w_e = w;
    }
    if let Some(d) = args.deviation_mode {
        scoring.deviation_mode = match d {
            DeviationArg::MeanReference => DeviationMode::MeanReference,
            DeviationArg::PerNeighbor => DeviationMode::PerNeighbor,
        };
    }
    if let Some(s) = args.range_scope {
        scoring.range_scope = match s {
            ScopeArg::Corpus => RangeScopeMode::Corpus,
            ScopeArg::Neighborhood => RangeScopeMode::Neighborhood,
        };
    }
    if let Some(f) = &args.flag {
        scoring.flag_policy = FlagPolicy::parse(f)?;
    }
    if args.normalize {
        scoring.normalize_by_neighborhood = true;
    }
    scoring.validate()?;

    let (embeddings, provider) = match &args.embeddings {
        Some(path) => {
            let v = read_embeddings(path)?;
            let tag = v.first().map(|e| e.provider_tag().to_string());
            (v, serde_json::json!({ "embeddings_file": path, "provider_tag": tag }))
        }
        None => {
            let (v, cfg) = compute_embeddings(&corpus, &args.provider, file)?;
            (v, serde_json::to_value(cfg)?)
        }
    };

    let run = pipeline::score(&corpus, embeddings, &peers, &scoring)?;
    let echo = serde_json::json!({
        "corpus": args.corpus,
        "embedding": provider,
        "peers": peers,
        "scoring": scoring,
    });
    pipeline::write_artifacts(&args.out_dir, &corpus, &run, echo, args.seed)?;
    println!(
        "scored {} documents ({} unscoreable), flagged {} -> {}",
        run.report.points.len(),
        run.report.unscoreable.len(),
        run.flags.ids.len(),
        args.out_dir.display()
    );
    for u in &run.report.unscoreable {
        log::warn!("{}: {}", u.id, u.reason);
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs, file: &FileConfig) -> Result<()> {
    let mut cfg = match presets::get(&args.preset) {
        Some(cfg) => cfg,
        None => {
            let path = Path::new(&args.preset);
            if !path.exists() {
                bail!(CorpusError::Invalid(format!(
                    "`{}` is neither a bundled preset (cs_200, multi_domain) nor a config file",
                    args.preset
                )));
            }
            BenchConfig::load(path)?
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = args.out_dir {
        cfg.output_dir = Some(dir);
    }
    if let Some(cache) = args.cache.or_else(|| file.cache_path.clone()) {
        cfg.cache_path = Some(cache);
    }
    if let Ok(key) = std::env::var(API_KEY_ENV) {
        if !key.is_empty() {
            cfg.embedding.api_credential = Some(key);
        }
    }
    let start = std::time::Instant::now();
    let outcome = run_benchmark(&cfg)?;
    let r = &outcome.report;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    println!("seed {}  flagged {}  elapsed {:.2?}", cfg.seed, r.flagged_count, start.elapsed());
    for d in &r.domains {
        println!(
            "  {:<24} n={:<4} corrupted={:<3} tp={:<3} fp={:<3} precision={} recall={}",
            d.domain,
            d.n_documents,
            d.n_corrupted,
            d.true_positives,
            d.false_positives,
            fmt(d.precision),
            fmt(d.recall)
        );
    }
    println!(
        "  micro precision={} recall={}  macro precision={} recall={}",
        fmt(r.overall.micro_precision),
        fmt(r.overall.micro_recall),
        fmt(r.overall.macro_precision),
        fmt(r.overall.macro_recall)
    );
    if let Some(b) = &r.baseline {
        println!(
            "  baseline {} micro precision={} recall={}",
            b.method,
            fmt(b.overall.micro_precision),
            fmt(b.overall.micro_recall)
        );
    }
    if let Some(dir) = &cfg.output_dir {
        println!("artifacts -> {}", dir.display());
    }
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let dir = args.report.parent().unwrap_or(Path::new(".")).to_path_buf();
    let files = SessionFiles::new(
        &args.report,
        args.projection.unwrap_or_else(|| dir.join(pipeline::PROJECTION_FILE)),
        args.log.unwrap_or_else(|| dir.join("verdicts.jsonl")),
    );
    let session = Session::load(&files)?;
    let app = pcod_service::router(Arc::new(Mutex::new(session)), args.static_dir);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting runtime")?;
    rt.block_on(async {
        let listener = pcod_service::bind(&args.bind).await?;
        let url = format!("http://{}/", listener.local_addr().map_err(ServiceError::Server)?);
        println!("review service at {url}");
        if args.open {
            open_browser(&url);
        }
        pcod_service::serve(listener, app).await
    })?;
    Ok(())
}

fn open_browser(url: &str) {
    let opener = if cfg!(target_os = "macos") { "open" } else { "xdg-open" };
    if let Err(e) = std::process::Command::new(opener).arg(url).spawn() {
        log::warn!("could not open a browser: {e}");
    }
}

/// 2 for provider and environment failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        let environment = cause.downcast_ref::<EmbedError>().is_some_and(EmbedError::is_provider_failure)
            || cause.downcast_ref::<BenchError>().is_some_and(BenchError::is_provider_failure)
            || cause.downcast_ref::<ServiceError>().is_some_and(ServiceError::is_environment)
            || matches!(cause.downcast_ref::<ScoreError>(), Some(ScoreError::Embedding(e)) if e.is_provider_failure());
        if environment {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            bail!(CorpusError::Invalid("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Embed(a) => cmd_embed(a, &file),
        Command::Score(a) => cmd_score(a, &file),
        Command::Bench(a) => cmd_bench(a, &file),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
