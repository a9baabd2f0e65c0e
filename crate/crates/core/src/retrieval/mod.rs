//! Unsupervised knowledge retrieval.
//!
//! Questions and knowledge items are embedded with the same [`TextEncoder`]
//! and ranked by cosine similarity. For every question three groups are
//! produced: the top-`k` items, an empty group, and the items ranked
//! `k+1..=2k` (plausible but likely misleading knowledge).

mod encoder;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use encoder::{
    HashedTfIdfEncoder, RemoteEncoder, TextEncoder, DEFAULT_DIMENSION, DEFAULT_HASH_SEED,
};

use crate::data_io::KnowledgeItem;

pub const DEFAULT_K: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,
    #[error("knowledge item `{0}` encodes to the zero vector")]
    DegenerateItem(String),
    #[error("question encodes to the zero vector: {0:?}")]
    DegenerateQuery(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("unknown knowledge id `{0}`")]
    UnknownItem(String),
    #[error("encoder error: {0}")]
    Encoder(String),
    #[error("index file error: {0}")]
    IndexFile(String),
}

pub type Result<T> = std::result::Result<T, RetrievalError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(RetrievalError::DimensionMismatch { left: 0, right: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        Ok(Self(values))
    }

    pub(crate) fn new_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dimension() != v.dimension() {
        return Err(RetrievalError::DimensionMismatch {
            left: u.dimension(),
            right: v.dimension(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.0.iter().zip(&v.0) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Precomputed item embeddings. Immutable once built.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    items: Vec<KnowledgeItem>,
    vectors: Vec<EmbeddingVector>,
    dimension: usize,
}

pub fn build_index(encoder: &dyn TextEncoder, kb: &[KnowledgeItem]) -> Result<RetrievalIndex> {
    if kb.is_empty() {
        return Err(RetrievalError::EmptyKnowledgeBase);
    }
    let surfaces: Vec<&str> = kb.iter().map(KnowledgeItem::surface).collect();
    let vectors = encoder.encode_batch(&surfaces)?;
    RetrievalIndex::from_parts(kb.to_vec(), vectors, encoder.dimension())
}

impl RetrievalIndex {
    fn from_parts(
        items: Vec<KnowledgeItem>,
        vectors: Vec<EmbeddingVector>,
        dimension: usize,
    ) -> Result<Self> {
        if items.is_empty() {
            return Err(RetrievalError::EmptyKnowledgeBase);
        }
        for (item, v) in items.iter().zip(&vectors) {
            if v.dimension() != dimension {
                return Err(RetrievalError::DimensionMismatch {
                    left: dimension,
                    right: v.dimension(),
                });
            }
            if v.is_zero() {
                return Err(RetrievalError::DegenerateItem(item.id.clone()));
            }
        }
        Ok(Self {
            items,
            vectors,
            dimension,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn items(&self) -> &[KnowledgeItem] {
        &self.items
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    /// Similarity of `query` against every item, in index order.
    pub fn similarities(&self, query: &EmbeddingVector) -> Result<Vec<f64>> {
        self.vectors
            .iter()
            .map(|v| cosine_similarity(query, v))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = IndexFile {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            dimension: self.dimension,
            entries: self
                .items
                .iter()
                .zip(&self.vectors)
                .map(|(item, v)| IndexEntry {
                    id: item.id.clone(),
                    vector: v.clone(),
                })
                .collect(),
        };
        let json =
            serde_json::to_string(&file).map_err(|e| RetrievalError::IndexFile(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| RetrievalError::IndexFile(e.to_string()))
    }

    /// Loads vectors saved by [`RetrievalIndex::save`], re-attaching them to
    /// the knowledge base by id.
    pub fn load(path: &Path, kb: &[KnowledgeItem]) -> Result<Self> {
        let raw =
            std::fs::read_to_string(path).map_err(|e| RetrievalError::IndexFile(e.to_string()))?;
        let file: IndexFile =
            serde_json::from_str(&raw).map_err(|e| RetrievalError::IndexFile(e.to_string()))?;
        if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
            return Err(RetrievalError::IndexFile(format!(
                "unsupported index {} v{}",
                file.format, file.version
            )));
        }
        let by_id: HashMap<&str, &KnowledgeItem> = kb.iter().map(|k| (k.id.as_str(), k)).collect();
        let mut items = Vec::with_capacity(file.entries.len());
        let mut vectors = Vec::with_capacity(file.entries.len());
        for e in file.entries {
            let item = by_id
                .get(e.id.as_str())
                .ok_or_else(|| RetrievalError::UnknownItem(e.id.clone()))?;
            items.push((*item).clone());
            vectors.push(EmbeddingVector::new(e.vector.0)?);
        }
        Self::from_parts(items, vectors, file.dimension)
    }
}

const INDEX_FORMAT: &str = "knowpat-index";
const INDEX_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    dimension: usize,
    entries: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    id: String,
    vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredKnowledge {
    pub item: KnowledgeItem,
    pub similarity: f64,
}

/// The three knowledge groups of one question.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGroups {
    pub question_id: String,
    pub k: usize,
    /// Similarity ranks `1..=k`.
    pub k1: Vec<ScoredKnowledge>,
    /// Always empty: the no-knowledge condition.
    pub k2: Vec<ScoredKnowledge>,
    /// Similarity ranks `k+1..=2k`.
    pub k3: Vec<ScoredKnowledge>,
}

impl KnowledgeGroups {
    pub fn k1_items(&self) -> Vec<&KnowledgeItem> {
        self.k1.iter().map(|s| &s.item).collect()
    }

    pub fn k2_items(&self) -> Vec<&KnowledgeItem> {
        self.k2.iter().map(|s| &s.item).collect()
    }

    pub fn k3_items(&self) -> Vec<&KnowledgeItem> {
        self.k3.iter().map(|s| &s.item).collect()
    }

    pub fn to_record(&self) -> GroupsRecord {
        let conv = |v: &[ScoredKnowledge]| {
            v.iter()
                .map(|s| ScoredId {
                    id: s.item.id.clone(),
                    similarity: s.similarity,
                })
                .collect()
        };
        GroupsRecord {
            question_id: self.question_id.clone(),
            k: self.k,
            k1: conv(&self.k1),
            k2: conv(&self.k2),
            k3: conv(&self.k3),
        }
    }

    pub fn from_record(rec: &GroupsRecord, kb: &HashMap<String, KnowledgeItem>) -> Result<Self> {
        let conv = |v: &[ScoredId]| -> Result<Vec<ScoredKnowledge>> {
            v.iter()
                .map(|s| {
                    let item = kb
                        .get(&s.id)
                        .ok_or_else(|| RetrievalError::UnknownItem(s.id.clone()))?;
                    Ok(ScoredKnowledge {
                        item: item.clone(),
                        similarity: s.similarity,
                    })
                })
                .collect()
        };
        Ok(Self {
            question_id: rec.question_id.clone(),
            k: rec.k,
            k1: conv(&rec.k1)?,
            k2: conv(&rec.k2)?,
            k3: conv(&rec.k3)?,
        })
    }
}

/// Persisted form of [`KnowledgeGroups`]: item ids with their similarities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupsRecord {
    pub question_id: String,
    pub k: usize,
    pub k1: Vec<ScoredId>,
    pub k2: Vec<ScoredId>,
    pub k3: Vec<ScoredId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: String,
    pub similarity: f64,
}

/// Similarity descending, then item id ascending.
fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

pub fn retrieve_groups(
    index: &RetrievalIndex,
    encoder: &dyn TextEncoder,
    question_id: &str,
    question: &str,
    k: usize,
) -> Result<KnowledgeGroups> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    let query = encoder.encode(question)?;
    if query.dimension() != index.dimension {
        return Err(RetrievalError::DimensionMismatch {
            left: index.dimension,
            right: query.dimension(),
        });
    }
    if query.is_zero() {
        return Err(RetrievalError::DegenerateQuery(question.to_string()));
    }
    let sims = index.similarities(&query)?;
    let mut order: Vec<usize> = (0..index.len()).collect();
    let cmp = |&a: &usize, &b: &usize| {
        rank_order(
            (sims[a], index.items[a].id.as_str()),
            (sims[b], index.items[b].id.as_str()),
        )
    };
    let wanted = (2 * k).min(order.len());
    if wanted < order.len() {
        order.select_nth_unstable_by(wanted, cmp);
        order.truncate(wanted);
    }
    order.sort_unstable_by(cmp);

    let scored = |i: usize| ScoredKnowledge {
        item: index.items[i].clone(),
        similarity: sims[i],
    };
    let split = k.min(order.len());
    Ok(KnowledgeGroups {
        question_id: question_id.to_string(),
        k,
        k1: order[..split].iter().map(|&i| scored(i)).collect(),
        k2: Vec::new(),
        k3: order[split..].iter().map(|&i| scored(i)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn kb(texts: &[(&str, &str)]) -> Vec<KnowledgeItem> {
        texts
            .iter()
            .map(|(id, body)| KnowledgeItem::document(*id, *body).unwrap())
            .collect()
    }

    #[test]
    fn cosine_basic_cases() {
        assert!(
            (cosine_similarity(&ev(&[1.0, 2.0]), &ev(&[1.0, 2.0])).unwrap() - 1.0).abs() < 1e-15
        );
        assert_eq!(
            cosine_similarity(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(),
            0.0
        );
        assert!(
            (cosine_similarity(&ev(&[1.0, -3.0]), &ev(&[-1.0, 3.0])).unwrap() + 1.0).abs() < 1e-15
        );
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&ev(&[1.0]), &ev(&[1.0, 0.0])),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&ev(&[0.0, 0.0]), &ev(&[1.0, 0.0])),
            Err(RetrievalError::ZeroVector)
        ));
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn index_cardinality_and_empty_kb() {
        let items = kb(&[("a", "x y"), ("b", "x y"), ("c", "z")]);
        let enc = HashedTfIdfEncoder::fit(items.iter().map(|k| k.surface()), 32, 0);
        let idx = build_index(&enc, &items).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.vectors()[0], idx.vectors()[1]);
        assert!(matches!(
            build_index(&enc, &[]),
            Err(RetrievalError::EmptyKnowledgeBase)
        ));
    }

    #[test]
    fn exact_text_match_ranks_first() {
        let items = kb(&[
            ("k1", "billing plan monthly"),
            ("k2", "elastic ip binds to a server"),
            ("k3", "object storage bucket policy"),
        ]);
        let enc =
            HashedTfIdfEncoder::fit(items.iter().map(|k| k.surface()), 256, DEFAULT_HASH_SEED);
        let idx = build_index(&enc, &items).unwrap();
        let g = retrieve_groups(&idx, &enc, "q", "elastic ip binds to a server", 1).unwrap();
        assert_eq!(g.k1.len(), 1);
        assert_eq!(g.k1[0].item.id, "k2");
        assert!((g.k1[0].similarity - 1.0).abs() < 1e-12);
        assert_eq!(g.k3.len(), 1);
        assert!(g.k2.is_empty());
    }

    #[test]
    fn small_kb_truncates_groups() {
        let items = kb(&[("only", "alpha beta")]);
        let enc = HashedTfIdfEncoder::fit(items.iter().map(|k| k.surface()), 16, 0);
        let idx = build_index(&enc, &items).unwrap();
        let g = retrieve_groups(&idx, &enc, "q", "alpha", 3).unwrap();
        assert_eq!(g.k1.len(), 1);
        assert!(g.k3.is_empty());
    }

    #[test]
    fn k_zero_and_blank_question_rejected() {
        let items = kb(&[("a", "alpha")]);
        let enc = HashedTfIdfEncoder::fit(items.iter().map(|k| k.surface()), 16, 0);
        let idx = build_index(&enc, &items).unwrap();
        assert!(matches!(
            retrieve_groups(&idx, &enc, "q", "alpha", 0),
            Err(RetrievalError::InvalidK)
        ));
        assert!(matches!(
            retrieve_groups(&idx, &enc, "q", "   ", 1),
            Err(RetrievalError::DegenerateQuery(_))
        ));
    }

    #[test]
    fn ties_break_by_id() {
        let items = kb(&[("c", "same text"), ("a", "same text"), ("b", "same text")]);
        let enc = HashedTfIdfEncoder::fit(items.iter().map(|k| k.surface()), 16, 0);
        let idx = build_index(&enc, &items).unwrap();
        let g = retrieve_groups(&idx, &enc, "q", "same", 1).unwrap();
        let ids: Vec<_> =
            g.k1.iter()
                .chain(&g.k3)
                .map(|s| s.item.id.as_str())
                .collect();
        assert_eq!(ids, vec!["a", "b"]);
    }

    #[test]
    fn index_file_round_trip() {
        let items = kb(&[("a", "alpha beta"), ("b", "gamma")]);
        let enc = HashedTfIdfEncoder::fit(items.iter().map(|k| k.surface()), 16, 0);
        let idx = build_index(&enc, &items).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        idx.save(&path).unwrap();
        let back = RetrievalIndex::load(&path, &items).unwrap();
        assert_eq!(back.vectors(), idx.vectors());
        assert_eq!(back.items(), idx.items());
        assert!(RetrievalIndex::load(&path, &items[..1]).is_err());
    }

    #[test]
    fn groups_record_round_trip() {
        let items = kb(&[("a", "alpha beta"), ("b", "alpha"), ("c", "gamma alpha")]);
        let enc = HashedTfIdfEncoder::fit(items.iter().map(|k| k.surface()), 32, 0);
        let idx = build_index(&enc, &items).unwrap();
        let g = retrieve_groups(&idx, &enc, "q", "alpha", 1).unwrap();
        let lookup: HashMap<String, KnowledgeItem> =
            items.iter().map(|k| (k.id.clone(), k.clone())).collect();
        let back = KnowledgeGroups::from_record(&g.to_record(), &lookup).unwrap();
        assert_eq!(back, g);
    }
}
