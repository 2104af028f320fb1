//! Semantic neighborhoods and 2-D layouts of embedded documents.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, EmbedError, EmbeddingVector};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Error)]
pub enum PeerError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("need at least {needed} embeddings, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("duplicate embedding id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error("all vectors are identical (zero variance)")]
    ZeroVariance,
    #[error("failed to write {path}: {message}")]
    Write { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub neighbor_id: String,
    pub similarity: f64,
}

/// Directed k-nearest-neighbor lists by cosine similarity.
///
/// Lists exclude the document itself, are sorted by descending similarity with
/// ties broken by ascending id, and hold at most `k` entries. The relation is
/// not symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerGraph {
    pub k: usize,
    pub min_similarity: Option<f64>,
    neighbors: BTreeMap<String, Vec<Neighbor>>,
}

impl PeerGraph {
    pub fn neighbors(&self, id: &str) -> Option<&[Neighbor]> {
        self.neighbors.get(id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.neighbors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Neighbor])> {
        self.neighbors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Checks ids are unique and all vectors share one dimension and provider tag.
pub fn check_uniform(embeddings: &[EmbeddingVector]) -> Result<(), PeerError> {
    let mut seen = HashSet::new();
    let Some(first) = embeddings.first() else {
        return Ok(());
    };
    for e in embeddings {
        if !seen.insert(e.doc_id.as_str()) {
            return Err(PeerError::DuplicateId(e.doc_id.clone()));
        }
        if e.dimension() != first.dimension() {
            return Err(EmbedError::DimensionMismatch(first.dimension(), e.dimension()).into());
        }
        if e.provider_tag() != first.provider_tag() {
            return Err(EmbedError::ProviderMismatch(
                first.provider_tag().to_string(),
                e.provider_tag().to_string(),
            )
            .into());
        }
    }
    Ok(())
}

/// Exact all-pairs k-NN. Rows are computed in parallel; the result does not
/// depend on input order.
pub fn build_peer_graph(embeddings: &[EmbeddingVector], k: usize, min_similarity: Option<f64>) -> Result<PeerGraph, PeerError> {
    if k < 1 {
        return Err(PeerError::InvalidK);
    }
    if embeddings.len() < 2 {
        return Err(PeerError::TooFew {
            needed: 2,
            got: embeddings.len(),
        });
    }
    check_uniform(embeddings)?;

    let rows: Vec<(String, Vec<Neighbor>)> = embeddings
        .par_iter()
        .map(|p| {
            let mut row: Vec<Neighbor> = embeddings
                .iter()
                .filter(|q| q.doc_id != p.doc_id)
                .map(|q| Neighbor {
                    neighbor_id: q.doc_id.clone(),
                    similarity: cosine_similarity(p, q).expect("dimensions checked"),
                })
                .collect();
            row.sort_by(|a, b| {
                b.similarity
                    .total_cmp(&a.similarity)
                    .then_with(|| a.neighbor_id.cmp(&b.neighbor_id))
            });
            row.truncate(k);
            if let Some(cut) = min_similarity {
                row.retain(|n| n.similarity >= cut);
            }
            (p.doc_id.clone(), row)
        })
        .collect();

    Ok(PeerGraph {
        k,
        min_similarity,
        neighbors: rows.into_iter().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

/// One 2-D point per document, in the order of the input embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub points: Vec<(String, Point2)>,
}

impl Projection2D {
    pub fn get(&self, id: &str) -> Option<Point2> {
        self.points.iter().find(|(i, _)| i == id).map(|(_, p)| *p)
    }
}

/// Projects onto the top two principal axes of the mean-centered vectors.
///
/// Each axis is oriented so its first nonzero loading is positive.
pub fn project_2d(embeddings: &[EmbeddingVector]) -> Result<Projection2D, PeerError> {
    if embeddings.len() < 3 {
        return Err(PeerError::TooFew {
            needed: 3,
            got: embeddings.len(),
        });
    }
    check_uniform(embeddings)?;
    let rows: Vec<&[f64]> = embeddings.iter().map(EmbeddingVector::values).collect();
    let coords = principal_coords(&rows)?;
    Ok(Projection2D {
        points: embeddings
            .iter()
            .zip(coords)
            .map(|(e, (x, y))| (e.doc_id.clone(), Point2 { x, y }))
            .collect(),
    })
}

/// PCA to two dimensions over raw rows.
pub fn principal_coords(rows: &[&[f64]]) -> Result<Vec<(f64, f64)>, PeerError> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    let mut centered = DMatrix::<f64>::zeros(n, d);
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        for (i, r) in rows.iter().enumerate() {
            centered[(i, j)] = r[j] - mean;
        }
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let total: f64 = cov.diagonal().iter().sum();
    let scale = rows
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    if total <= 1e-24 * scale * scale {
        return Err(PeerError::ZeroVariance);
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let axis = |rank: usize| -> Vec<f64> {
        let Some(&col) = order.get(rank) else {
            return vec![0.0; d];
        };
        let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12) {
            if first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        v
    };
    let (a1, a2) = (axis(0), axis(1));
    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let x = row.iter().zip(&a1).map(|(c, l)| c * l).sum();
            let y = row.iter().zip(&a2).map(|(c, l)| c * l).sum();
            (x, y)
        })
        .collect())
}

/// A row of the projection CSV (`id,x,y,value,flagged,score`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub value: f64,
    pub flagged: bool,
    pub score: Option<f64>,
}

pub fn write_projection_csv(path: &Path, rows: &[ProjectionRow]) -> Result<(), PeerError> {
    let err = |e: csv::Error| PeerError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|e| PeerError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_projection_csv(path: &Path) -> Result<Vec<ProjectionRow>, csv::Error> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: &str, values: Vec<f64>) -> EmbeddingVector {
        EmbeddingVector::new(id, values, "t").unwrap()
    }

    #[test]
    fn k_clamps_to_n_minus_one() {
        let es = vec![ev("a", vec![1.0, 0.0]), ev("b", vec![0.0, 1.0]), ev("c", vec![1.0, 1.0])];
        let g = build_peer_graph(&es, 5, None).unwrap();
        for (id, row) in g.iter() {
            assert_eq!(row.len(), 2);
            assert!(row.iter().all(|n| n.neighbor_id != id));
        }
    }

    #[test]
    fn errors() {
        let es = vec![ev("a", vec![1.0, 0.0]), ev("b", vec![0.0, 1.0])];
        assert!(matches!(build_peer_graph(&es, 0, None), Err(PeerError::InvalidK)));
        assert!(matches!(
            build_peer_graph(&es[..1], 3, None),
            Err(PeerError::TooFew { .. })
        ));
        let mixed = vec![ev("a", vec![1.0, 0.0]), EmbeddingVector::new("b", vec![0.0, 1.0], "other").unwrap()];
        assert!(matches!(
            build_peer_graph(&mixed, 1, None),
            Err(PeerError::Embedding(EmbedError::ProviderMismatch(..)))
        ));
    }

    #[test]
    fn nearest_matches_brute_force() {
        // unit vectors at 0, 30 and 100 degrees
        let at = |deg: f64| vec![deg.to_radians().cos(), deg.to_radians().sin()];
        let es = vec![ev("a", at(0.0)), ev("b", at(30.0)), ev("c", at(100.0))];
        let g = build_peer_graph(&es, 1, None).unwrap();
        for p in &es {
            let best = es
                .iter()
                .filter(|q| q.doc_id != p.doc_id)
                .map(|q| {
                    let dot: f64 = p.values().iter().zip(q.values()).map(|(x, y)| x * y).sum();
                    (dot, q.doc_id.clone())
                })
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap();
            assert_eq!(g.neighbors(&p.doc_id).unwrap()[0].neighbor_id, best.1);
        }
        assert_eq!(g.neighbors("c").unwrap()[0].neighbor_id, "b");
    }

    #[test]
    fn identical_vectors_tie_by_id() {
        let es = vec![
            ev("z", vec![1.0, 0.0]),
            ev("m", vec![1.0, 0.0]),
            ev("q", vec![0.0, 1.0]),
            ev("b", vec![1.0, 0.0]),
        ];
        let g = build_peer_graph(&es, 3, None).unwrap();
        let row = g.neighbors("q").unwrap();
        let ids: Vec<&str> = row.iter().map(|n| n.neighbor_id.as_str()).collect();
        assert_eq!(ids, vec!["b", "m", "z"]);
        let row = g.neighbors("z").unwrap();
        assert_eq!(row[0].neighbor_id, "b");
        assert_eq!(row[0].similarity, 1.0);
        assert_eq!(row[1].neighbor_id, "m");
    }

    #[test]
    fn min_similarity_filters() {
        let es = vec![ev("a", vec![1.0, 0.0]), ev("b", vec![0.0, 1.0]), ev("c", vec![1.0, 0.1])];
        let g = build_peer_graph(&es, 2, Some(0.5)).unwrap();
        assert_eq!(g.neighbors("a").unwrap().len(), 1);
        assert!(g.neighbors("b").unwrap().is_empty());
    }

    #[test]
    fn projection_of_collinear_points() {
        // raw rows: unit normalization would bend a line of points onto a sphere
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let coords = principal_coords(&refs).unwrap();
        for (_, y) in coords {
            assert!(y.abs() < 1e-9);
        }
    }

    #[test]
    fn projection_zero_variance() {
        let es: Vec<_> = (0..4).map(|i| ev(&format!("p{i}"), vec![1.0, 1.0])).collect();
        assert!(matches!(project_2d(&es), Err(PeerError::ZeroVariance)));
    }

    #[test]
    fn two_d_projection_is_isometry() {
        let rows = [vec![0.0, 0.0], vec![3.0, 1.0], vec![-1.0, 2.0], vec![0.5, -2.5], vec![2.0, 2.0]];
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let coords = principal_coords(&refs).unwrap();
        let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                let orig = dist((rows[i][0], rows[i][1]), (rows[j][0], rows[j][1]));
                assert!((orig - dist(coords[i], coords[j])).abs() < 1e-9);
            }
        }
    }
}
