use pcod_core::bench::{generate_corpus, presets};
use pcod_core::corpus::{load_corpus, load_corpus_with_specs, parse_corpus, CorpusError};
use pcod_core::embedding::{embed_corpus_uncached, read_embeddings, write_embeddings, ProviderConfig};
use pcod_core::peers::read_projection_csv;
use pcod_core::pipeline::{self, read_context, PeersConfig};
use pcod_core::scoring::{read_score_report, ScoringConfig};

#[test]
fn multi_domain_corpus_survives_disk() {
    let cfg = presets::multi_domain();
    let corpus = generate_corpus(&cfg.domains, cfg.seed).unwrap();
    assert_eq!(corpus.len(), 168);
    let dir = tempfile::tempdir().unwrap();
    corpus.write_jsonl(&dir.path().join("c.jsonl")).unwrap();
    corpus.write_field_specs(&dir.path().join("s.json")).unwrap();
    let back = load_corpus_with_specs(&dir.path().join("c.jsonl"), &dir.path().join("s.json")).unwrap();
    assert_eq!(back, corpus);
    assert_eq!(back.domains().len(), 6);
}

#[test]
fn pipeline_artifacts_reload_exactly() {
    let cfg = presets::multi_domain();
    let corpus = generate_corpus(&cfg.domains, cfg.seed).unwrap();
    let emb = embed_corpus_uncached(&ProviderConfig::local(128), &corpus).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_embeddings(&dir.path().join("e.jsonl"), &emb, serde_json::json!({})).unwrap();
    assert_eq!(read_embeddings(&dir.path().join("e.jsonl")).unwrap(), emb);

    let run = pipeline::score(&corpus, emb, &PeersConfig::default(), &ScoringConfig::default()).unwrap();
    pipeline::write_artifacts(dir.path(), &corpus, &run, serde_json::json!({"k": 10}), Some(1)).unwrap();
    assert_eq!(read_score_report(&dir.path().join(pipeline::SCORES_FILE)).unwrap(), run.report.points);
    let rows = read_projection_csv(&dir.path().join(pipeline::PROJECTION_FILE)).unwrap();
    assert_eq!(rows, pipeline::projection_rows(&corpus, &run));
    let ctx = read_context(&dir.path().join(pipeline::CONTEXT_FILE)).unwrap();
    assert_eq!(ctx, pipeline::context_records(&corpus, &run.graph));
    assert!(ctx.iter().all(|c| c.neighbors.len() == 10));
}

#[test]
fn malformed_lines_report_their_number() {
    let good = r#"{"id":"a","text":"t","domain":"D","field_name":"f","extracted_value":1.0}"#;
    let content = format!("{good}\n\n{{\"id\":\"b\",\"text\":\n");
    match parse_corpus(&content) {
        Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
    let missing = format!("{good}\n{}\n", r#"{"id":"b","text":"t","domain":"D","field_name":"f"}"#);
    assert!(matches!(parse_corpus(&missing), Err(CorpusError::Parse { line: 2, .. })));
    let nan = format!("{good}\n{}\n", r#"{"id":"b","text":"","domain":"D","field_name":"f","extracted_value":2}"#);
    assert!(matches!(parse_corpus(&nan), Err(CorpusError::Parse { line: 2, .. })));
}

#[test]
fn duplicate_ids_are_rejected() {
    let line = r#"{"id":"a","text":"t","domain":"D","field_name":"f","extracted_value":1.0}"#;
    match parse_corpus(&format!("{line}\n{line}\n")) {
        Err(CorpusError::DuplicateId { id, line }) => {
            assert_eq!(id, "a");
            assert_eq!(line, 2);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(
        load_corpus(std::path::Path::new("/nonexistent/corpus.jsonl")),
        Err(CorpusError::Io { .. })
    ));
}
