//! Peer-context outlier detection.
//!
//! Extracted numerical values are checked against the values reported by
//! semantically similar documents. Points whose values deviate from their
//! peers get high surprising scores and are flagged for human review.
//!
//! The pipeline is: [`corpus`] → [`embedding`] → [`peers`] → [`scoring`];
//! [`bench`] generates synthetic corpora with planted corruption and measures
//! how well the flags recover it.

pub mod bench;
pub mod corpus;
pub mod embedding;
pub mod peers;
pub mod pipeline;
pub mod scoring;

pub use corpus::{load_corpus, Corpus, Document, FieldSpec, Range, RangeScope};
pub use embedding::{cosine_similarity, EmbeddingVector, ProviderConfig};
pub use peers::{build_peer_graph, project_2d, PeerGraph};
pub use scoring::{flag, score_corpus, surprising_score, FlagPolicy, ScoredPoint, ScoringConfig};
