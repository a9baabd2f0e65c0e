use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{EmbeddingVector, RetrievalError};
use crate::http::{JsonClient, RetryPolicy};
use crate::text::{fnv1a64, word_tokens};

/// Maps text to a fixed-dimension vector. Equal input must give an equal
/// vector.
pub trait TextEncoder: Send + Sync {
    fn dimension(&self) -> usize;

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, RetrievalError>;

    fn encode(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        let mut v = self.encode_batch(&[text])?;
        v.pop()
            .ok_or_else(|| RetrievalError::Encoder("encoder returned no vector".into()))
    }
}

pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_HASH_SEED: u64 = 0x6b6e_6f77_7061_7421;

/// Hashed bag-of-words with smoothed TF-IDF weights fitted on a corpus,
/// L2-normalised.
#[derive(Debug, Clone)]
pub struct HashedTfIdfEncoder {
    dimension: usize,
    seed: u64,
    idf: HashMap<String, f64>,
    /// Weight for tokens never seen during fitting: `ln((1+n)/1) + 1`.
    unseen_idf: f64,
}

impl HashedTfIdfEncoder {
    pub fn fit<'a, I>(corpus: I, dimension: usize, seed: u64) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        assert!(dimension > 0, "encoder dimension must be positive");
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0usize;
        for doc in corpus {
            n_docs += 1;
            let mut toks = word_tokens(doc);
            toks.sort_unstable();
            toks.dedup();
            for t in toks {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = n_docs as f64;
        let idf = df
            .into_iter()
            .map(|(t, d)| (t, ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
            .collect();
        Self {
            dimension,
            seed,
            idf,
            unseen_idf: (1.0 + n).ln() + 1.0,
        }
    }

    fn bucket(&self, token: &str) -> usize {
        (fnv1a64(self.seed, token.as_bytes()) % self.dimension as u64) as usize
    }

    fn encode_one(&self, text: &str) -> EmbeddingVector {
        let mut tf: HashMap<String, f64> = HashMap::new();
        for t in word_tokens(text) {
            *tf.entry(t).or_default() += 1.0;
        }
        // Accumulate in sorted token order so float summation is reproducible.
        let mut terms: Vec<_> = tf.into_iter().collect();
        terms.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let mut values = vec![0.0; self.dimension];
        for (tok, count) in terms {
            let idf = self.idf.get(&tok).copied().unwrap_or(self.unseen_idf);
            values[self.bucket(&tok)] += count * idf;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector::new_unchecked(values)
    }
}

impl TextEncoder for HashedTfIdfEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        Ok(texts.iter().map(|t| self.encode_one(t)).collect())
    }
}

#[derive(Debug, Serialize)]
struct EncodeRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EncodeResponse {
    vectors: Vec<Vec<f64>>,
}

/// Encoder backed by an HTTP endpoint speaking
/// `{"texts": [..]}` → `{"vectors": [[..], ..]}`.
#[derive(Debug)]
pub struct RemoteEncoder {
    url: String,
    dimension: usize,
    batch_size: usize,
    client: JsonClient,
}

impl RemoteEncoder {
    pub fn new(
        url: impl Into<String>,
        dimension: usize,
        token: Option<String>,
        policy: RetryPolicy,
    ) -> Result<Self, RetrievalError> {
        let client =
            JsonClient::new(token, policy).map_err(|e| RetrievalError::Encoder(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            dimension,
            batch_size: 64,
            client,
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }
}

impl TextEncoder for RemoteEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let resp: EncodeResponse = self
                .client
                .post_json(&self.url, &EncodeRequest { texts: chunk })
                .map_err(|e| RetrievalError::Encoder(e.to_string()))?;
            if resp.vectors.len() != chunk.len() {
                return Err(RetrievalError::Encoder(format!(
                    "endpoint returned {} vectors for {} texts",
                    resp.vectors.len(),
                    chunk.len()
                )));
            }
            for v in resp.vectors {
                if v.len() != self.dimension {
                    return Err(RetrievalError::DimensionMismatch {
                        left: self.dimension,
                        right: v.len(),
                    });
                }
                out.push(EmbeddingVector::new(v)?);
            }
        }
        Ok(out)
    }
}
