use std::sync::atomic::{AtomicUsize, Ordering};

use pcod_core::corpus::{Corpus, Document};
use pcod_core::embedding::{
    embed_corpus, embed_corpus_uncached, embed_corpus_with, EmbedError, Embedder, HashedBowEmbedder, ProviderConfig,
};

/// Wraps the local embedder and counts how many texts it was asked for.
struct Counting {
    inner: HashedBowEmbedder,
    texts: AtomicUsize,
}

impl Counting {
    fn new() -> Self {
        Self {
            inner: HashedBowEmbedder::new(64).unwrap(),
            texts: AtomicUsize::new(0),
        }
    }

    fn take(&self) -> usize {
        self.texts.swap(0, Ordering::SeqCst)
    }
}

impl Embedder for Counting {
    fn provider_tag(&self) -> String {
        self.inner.provider_tag()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        self.texts.fetch_add(texts.len(), Ordering::SeqCst);
        self.inner.embed_batch(texts)
    }
}

fn corpus(texts: &[&str]) -> Corpus {
    let docs = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Document {
            id: format!("d{i}"),
            text: t.to_string(),
            domain: "Physics".into(),
            field_name: "wavelength".into(),
            extracted_value: 400.0 + i as f64,
            cluster_id: None,
        })
        .collect();
    Corpus::new(docs, vec![]).unwrap()
}

const TEXTS: &[&str] = &[
    "laser cavity emission at visible wavelength",
    "photonic crystal band gap measurement",
    "laser cavity emission at visible wavelength",
    "quantum dot fluorescence spectrum",
];

#[test]
fn second_run_hits_cache_and_edit_reembeds_once() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.bin");
    let e = Counting::new();

    let first = embed_corpus_with(&e, &corpus(TEXTS), &cache).unwrap();
    // duplicate texts are embedded once
    assert_eq!(e.take(), 3);
    assert_eq!(first.len(), 4);

    let second = embed_corpus_with(&e, &corpus(TEXTS), &cache).unwrap();
    assert_eq!(e.take(), 0);
    assert_eq!(first, second);

    let mut edited = TEXTS.to_vec();
    edited[1] = "photonic crystal band gap measurement, revised";
    let third = embed_corpus_with(&e, &corpus(&edited), &cache).unwrap();
    assert_eq!(e.take(), 1);
    assert_eq!(third[0], first[0]);
    assert_ne!(third[1].values(), first[1].values());
}

#[test]
fn cached_and_uncached_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ProviderConfig::local(64);
    let c = corpus(TEXTS);
    let cached = embed_corpus(&cfg, &c, &dir.path().join("c.bin")).unwrap();
    let again = embed_corpus(&cfg, &c, &dir.path().join("c.bin")).unwrap();
    let direct = embed_corpus_uncached(&cfg, &c).unwrap();
    assert_eq!(cached, direct);
    assert_eq!(again, direct);
}

#[test]
fn provider_change_does_not_reuse_entries() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("c.bin");
    let c = corpus(TEXTS);
    let a = embed_corpus(&ProviderConfig::local(64), &c, &cache).unwrap();
    let b = embed_corpus(&ProviderConfig::local(128), &c, &cache).unwrap();
    assert_eq!(a[0].dimension(), 64);
    assert_eq!(b[0].dimension(), 128);
}

#[test]
fn corrupted_cache_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("c.bin");
    let c = corpus(TEXTS);
    embed_corpus(&ProviderConfig::local(64), &c, &cache).unwrap();
    let mut bytes = std::fs::read(&cache).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&cache, bytes).unwrap();
    let err = embed_corpus(&ProviderConfig::local(64), &c, &cache).unwrap_err();
    assert!(matches!(err, EmbedError::CacheCorrupt { .. }), "{err}");
}
