//! Artifact names, config hashes and the checkpoint file format.
//!
//! Every stage hashes the settings it depends on together with the hash of
//! the stage before it. Each artifact header carries its own stage hash
//! and the upstream one, so a stage refuses inputs written under different
//! settings.

use std::fs;
use std::path::{Path, PathBuf};

use knowpat_core::data_io::ArtifactHeader;
use knowpat_core::model::ReferenceModel;
use knowpat_core::optim::AdamW;
use knowpat_core::trainer::EpochMetrics;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const GROUPS_FILE: &str = "knowledge_groups.jsonl";
pub const PREFSETS_FILE: &str = "preference_sets.jsonl";
pub const FAILURES_FILE: &str = "prefset_failures.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const EVAL_DIR: &str = "eval";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const GENERATIONS_FILE: &str = "generations.jsonl";
pub const HUMAN_TALLY_FILE: &str = "human_tally.json";

pub const GROUPS_ARTIFACT: &str = "knowledge_groups";
pub const FAILURES_ARTIFACT: &str = "prefset_failures";
pub const CHECKPOINT_ARTIFACT: &str = "checkpoint";
pub const TRAIN_REPORT_ARTIFACT: &str = "train_report";
pub const TRAIN_LOG_ARTIFACT: &str = "train_log";
pub const EVAL_REPORT_ARTIFACT: &str = "eval_report";

/// Hex SHA-256 over length-prefixed parts.
pub fn digest<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(digest([bytes.as_slice()]))
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("config sections serialise")
}

/// Hashes of the four stages for one configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageHashes {
    pub retrieve: String,
    pub prefsets: String,
    pub train: String,
}

impl StageHashes {
    /// Reads the input files, so call it after validation.
    pub fn compute(cfg: &RunConfig) -> Result<Self> {
        let qa = file_digest(&cfg.paths.qa)?;
        let kb = file_digest(&cfg.paths.kb)?;
        let retrieve = digest([
            b"retrieve".as_slice(),
            qa.as_bytes(),
            kb.as_bytes(),
            &json(&cfg.retrieval),
        ]);
        let prefsets = digest([
            b"prefsets".as_slice(),
            retrieve.as_bytes(),
            &json(&cfg.template),
            &json(&cfg.prefset),
            &cfg.seed.to_le_bytes(),
        ]);
        // Epochs only decide where training stops, so a resumed run with a
        // larger epoch count keeps the same hash.
        let mut train_section = cfg.train.clone();
        train_section.epochs = 0;
        let train = digest([
            b"train".as_slice(),
            prefsets.as_bytes(),
            &json(&train_section),
        ]);
        Ok(Self {
            retrieve,
            prefsets,
            train,
        })
    }

    pub fn eval(&self, checkpoint_hash: &str, cfg: &RunConfig) -> String {
        digest([
            b"eval".as_slice(),
            checkpoint_hash.as_bytes(),
            &json(&cfg.eval),
        ])
    }
}

/// Fails unless `header` names `artifact` and carries `expected`.
pub fn check_header(
    path: &Path,
    header: Option<&ArtifactHeader>,
    artifact: &str,
    expected: &str,
) -> Result<()> {
    let Some(h) = header else {
        return Err(CliError::validation(format!(
            "{} has no artifact header",
            path.display()
        )));
    };
    if h.artifact != artifact {
        return Err(CliError::validation(format!(
            "{} holds `{}`, expected `{artifact}`",
            path.display(),
            h.artifact
        )));
    }
    if h.version != ArtifactHeader::VERSION {
        return Err(CliError::validation(format!(
            "{} has unsupported version {}",
            path.display(),
            h.version
        )));
    }
    if h.config_hash != expected {
        return Err(CliError::validation(format!(
            "{} was produced under config {}, current config is {expected}; rerun the earlier stage",
            path.display(),
            short(&h.config_hash)
        )));
    }
    Ok(())
}

pub fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// Model and optimizer state after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: ArtifactHeader,
    pub epoch: usize,
    pub metrics: EpochMetrics,
    pub model: ReferenceModel,
    pub optimizer: AdamW,
}

impl Checkpoint {
    pub fn file_name(epoch: usize) -> String {
        format!("epoch-{epoch:03}.json")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::file_name(self.epoch));
        write_json(&path, self)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read checkpoint {}: {e}", path.display()))
        })?;
        let ck: Checkpoint = serde_json::from_str(&raw).map_err(|e| {
            CliError::validation(format!("malformed checkpoint {}: {e}", path.display()))
        })?;
        if ck.header.artifact != CHECKPOINT_ARTIFACT {
            return Err(CliError::validation(format!(
                "{} is a `{}` artifact, not a checkpoint",
                path.display(),
                ck.header.artifact
            )));
        }
        ck.model
            .validate()
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        Ok(ck)
    }
}

/// Checkpoint files in `dir`, sorted by epoch.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(CliError::runtime(format!("{}: {e}", dir.display()))),
    };
    for entry in entries {
        let path = entry
            .map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?
            .path();
        let epoch = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("epoch-"))
            .and_then(|n| n.strip_suffix(".json"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(epoch) = epoch {
            out.push((epoch, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::runtime(format!("serialising {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| CliError::validation(format!("malformed {}: {e}", path.display())))
}
