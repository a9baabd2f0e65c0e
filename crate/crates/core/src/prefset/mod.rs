//! Preference-set construction.
//!
//! Every QA pair yields two ranked candidate lists with the golden answer
//! at rank 1:
//!
//! * a style set: generator answers ordered by the generators' assumed
//!   capability;
//! * a knowledge set: answers generated with K1 (rank 2), with no knowledge
//!   (rank 3) and with K3 (rank 4).
//!
//! Ranks come from construction, never from the candidate text.

mod builder;
mod generators;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use builder::{build_all, build_kps, build_sps, BuildOutcome, FailureRecord};
pub use generators::{
    AnswerGenerator, ChatCompletionGenerator, ChatGeneratorConfig, CorruptionGenerator,
    GenerationError, GenerationRequest, KnowledgeSensitiveGenerator, DEFAULT_FILLERS,
};

use crate::data_io::{self, ArtifactHeader, DataError};

pub const GOLDEN_SOURCE: &str = "golden";
pub const KPS_K1_SOURCE: &str = "kps:K1";
pub const KPS_K2_SOURCE: &str = "kps:K2";
pub const KPS_K3_SOURCE: &str = "kps:K3";
pub const PREFSET_ARTIFACT: &str = "preference_sets";

#[derive(Debug, thiserror::Error)]
pub enum PrefsetError {
    #[error("at least one answer generator is required")]
    NoGenerators,
    #[error("duplicate generator name `{0}`")]
    DuplicateGeneratorName(String),
    #[error("duplicate generator quality rank {0}")]
    DuplicateQualityRank(u32),
    #[error("generator `{generator}` failed on question `{question_id}`: {source}")]
    Generation {
        question_id: String,
        generator: String,
        #[source]
        source: GenerationError,
    },
    #[error("knowledge groups belong to `{groups}`, not `{question}`")]
    GroupsMismatch { question: String, groups: String },
    #[error("invalid preference set for `{question_id}`: {message}")]
    Invalid {
        question_id: String,
        message: String,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, PrefsetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetKind {
    Style,
    Knowledge,
}

impl std::fmt::Display for SetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SetKind::Style => "style",
            SetKind::Knowledge => "knowledge",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerCandidate {
    pub text: String,
    pub source: String,
    /// 1 is the most preferred.
    pub rank: u32,
}

/// A validated, totally ordered list of answer candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPreferenceSet")]
pub struct PreferenceSet {
    question_id: String,
    kind: SetKind,
    candidates: Vec<AnswerCandidate>,
}

#[derive(Deserialize)]
struct RawPreferenceSet {
    question_id: String,
    kind: SetKind,
    candidates: Vec<AnswerCandidate>,
}

impl TryFrom<RawPreferenceSet> for PreferenceSet {
    type Error = PrefsetError;

    fn try_from(raw: RawPreferenceSet) -> Result<Self> {
        PreferenceSet::new(raw.question_id, raw.kind, raw.candidates)
    }
}

impl PreferenceSet {
    pub fn new(
        question_id: impl Into<String>,
        kind: SetKind,
        candidates: Vec<AnswerCandidate>,
    ) -> Result<Self> {
        let question_id = question_id.into();
        let invalid = |message: String| PrefsetError::Invalid {
            question_id: question_id.clone(),
            message,
        };
        let l = candidates.len();
        if l < 2 {
            return Err(invalid(format!("needs at least 2 candidates, got {l}")));
        }
        let ranks: BTreeSet<u32> = candidates.iter().map(|c| c.rank).collect();
        let expected: BTreeSet<u32> = (1..=l as u32).collect();
        if ranks != expected {
            let got: Vec<u32> = candidates.iter().map(|c| c.rank).collect();
            return Err(invalid(format!(
                "ranks must be a permutation of 1..={l}, got {got:?}"
            )));
        }
        let golden: Vec<&AnswerCandidate> = candidates
            .iter()
            .filter(|c| c.source == GOLDEN_SOURCE)
            .collect();
        if golden.len() != 1 {
            return Err(invalid(format!(
                "expected exactly one golden candidate, found {}",
                golden.len()
            )));
        }
        if golden[0].rank != 1 {
            return Err(invalid(format!(
                "golden candidate has rank {}, expected 1",
                golden[0].rank
            )));
        }
        if let Some(c) = candidates.iter().find(|c| c.text.trim().is_empty()) {
            return Err(invalid(format!("candidate `{}` has empty text", c.source)));
        }
        Ok(Self {
            question_id,
            kind,
            candidates,
        })
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn kind(&self) -> SetKind {
        self.kind
    }

    /// Candidates in storage order.
    pub fn candidates(&self) -> &[AnswerCandidate] {
        &self.candidates
    }

    /// Candidates sorted by rank, most preferred first.
    pub fn ranked(&self) -> Vec<&AnswerCandidate> {
        let mut v: Vec<&AnswerCandidate> = self.candidates.iter().collect();
        v.sort_by_key(|c| c.rank);
        v
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn golden(&self) -> &AnswerCandidate {
        self.candidates
            .iter()
            .find(|c| c.source == GOLDEN_SOURCE)
            .expect("validated set has a golden candidate")
    }
}

pub fn write_preference_sets(
    path: &Path,
    header: &ArtifactHeader,
    sets: &[PreferenceSet],
) -> Result<()> {
    Ok(data_io::write_jsonl(path, Some(header), sets)?)
}

pub fn load_preference_sets(path: &Path) -> Result<(Option<ArtifactHeader>, Vec<PreferenceSet>)> {
    let (header, rows) = data_io::read_artifact::<PreferenceSet>(path)?;
    Ok((header, rows.into_iter().map(|(_, s)| s).collect()))
}
