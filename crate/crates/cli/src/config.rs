//! Run configuration: one TOML file plus command-line overrides.
//!
//! Relative paths inside the file are resolved against the file's own
//! directory, so a config can travel with its data.

use std::path::{Path, PathBuf};

use knowpat_core::data_io::{PromptTemplate, DEFAULT_SEPARATOR, DEFAULT_TEMPLATE};
use knowpat_core::eval::{EvalConfig, RougeMeasure, TokenizerMode};
use knowpat_core::http::{env_secret, RetryPolicy};
use knowpat_core::model::ReferenceModelConfig;
use knowpat_core::prefset::{
    AnswerGenerator, ChatCompletionGenerator, ChatGeneratorConfig, CorruptionGenerator,
    KnowledgeSensitiveGenerator,
};
use knowpat_core::retrieval::{
    HashedTfIdfEncoder, RemoteEncoder, TextEncoder, DEFAULT_DIMENSION, DEFAULT_HASH_SEED, DEFAULT_K,
};
use knowpat_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub template: TemplateConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub prefset: PrefsetConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub qa: PathBuf,
    pub kb: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    pub template: String,
    pub separator: String,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            template: DEFAULT_TEMPLATE.into(),
            separator: DEFAULT_SEPARATOR.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub encoder: EncoderConfig,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            encoder: EncoderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderConfig {
    /// Hashed TF-IDF bag of words fitted on the knowledge base.
    Hashed {
        #[serde(default = "default_dimension")]
        dimension: usize,
        #[serde(default = "default_hash_seed")]
        hash_seed: u64,
    },
    /// HTTP embedding endpoint. The bearer token, if any, is read from the
    /// environment variable named by `token_env`.
    Remote {
        url: String,
        dimension: usize,
        #[serde(default)]
        token_env: Option<String>,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}

fn default_hash_seed() -> u64 {
    DEFAULT_HASH_SEED
}

fn default_batch_size() -> usize {
    64
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Hashed {
            dimension: DEFAULT_DIMENSION,
            hash_seed: DEFAULT_HASH_SEED,
        }
    }
}

/// One answer generator. Synthetic kinds take their seed from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Corruption {
        name: String,
        quality_rank: u32,
        rate: f64,
    },
    KnowledgeSensitive {
        name: String,
        base_rate: f64,
        misuse_rate: f64,
    },
    Chat(ChatGeneratorConfig),
}

impl GeneratorSpec {
    fn name(&self) -> &str {
        match self {
            GeneratorSpec::Corruption { name, .. }
            | GeneratorSpec::KnowledgeSensitive { name, .. } => name,
            GeneratorSpec::Chat(c) => &c.name,
        }
    }

    pub fn build(&self, seed: u64) -> Result<Box<dyn AnswerGenerator>> {
        Ok(match self {
            GeneratorSpec::Corruption {
                name,
                quality_rank,
                rate,
            } => Box::new(CorruptionGenerator::new(
                name.clone(),
                *quality_rank,
                *rate,
                seed,
            )),
            GeneratorSpec::KnowledgeSensitive {
                name,
                base_rate,
                misuse_rate,
            } => Box::new(KnowledgeSensitiveGenerator::new(
                name.clone(),
                *base_rate,
                *misuse_rate,
                seed,
            )),
            GeneratorSpec::Chat(c) => Box::new(
                ChatCompletionGenerator::new(c.clone())
                    .map_err(|e| CliError::runtime(e.to_string()))?,
            ),
        })
    }

    fn validate(&self) -> Result<()> {
        let unit = |what: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(CliError::validation(format!(
                    "generator `{}`: {what} must be in [0, 1], got {v}",
                    self.name()
                )))
            }
        };
        match self {
            GeneratorSpec::Corruption { rate, .. } => unit("rate", *rate),
            GeneratorSpec::KnowledgeSensitive {
                base_rate,
                misuse_rate,
                ..
            } => {
                unit("base_rate", *base_rate)?;
                unit("misuse_rate", *misuse_rate)
            }
            GeneratorSpec::Chat(c) if c.base_url.trim().is_empty() => Err(CliError::validation(
                format!("generator `{}`: base_url is empty", c.name),
            )),
            GeneratorSpec::Chat(_) => Ok(()),
        }
    }
}

/// Style generators fix the style set size at `style.len() + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefsetConfig {
    pub style: Vec<GeneratorSpec>,
    pub knowledge: GeneratorSpec,
}

impl Default for PrefsetConfig {
    fn default() -> Self {
        let corruption = |name: &str, quality_rank, rate| GeneratorSpec::Corruption {
            name: name.into(),
            quality_rank,
            rate,
        };
        Self {
            style: vec![
                corruption("synthetic-strong", 1, 0.1),
                corruption("synthetic-medium", 2, 0.3),
                corruption("synthetic-weak", 3, 0.5),
            ],
            knowledge: GeneratorSpec::KnowledgeSensitive {
                name: "synthetic-rag".into(),
                base_rate: 0.3,
                misuse_rate: 0.5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub grad_accumulation: usize,
    pub weight_decay: f64,
    pub holdout_fraction: f64,
    pub embed_dim: usize,
    pub init_scale: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ReferenceModelConfig::default();
        Self {
            lambda: t.lambda,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            grad_accumulation: t.grad_accumulation,
            weight_decay: t.weight_decay,
            holdout_fraction: t.holdout_fraction,
            embed_dim: m.embed_dim,
            init_scale: m.init_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub tokenizer: TokenizerMode,
    pub bleu_smoothing: bool,
    pub rouge_measure: RougeMeasure,
    pub meteor_stem: bool,
    /// Token budget for `--generate`.
    pub max_new_tokens: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            tokenizer: e.tokenizer,
            bleu_smoothing: e.bleu_smoothing,
            rouge_measure: e.rouge_measure,
            meteor_stem: e.meteor_stem,
            max_new_tokens: 64,
        }
    }
}

/// Values given on the command line; each replaces its config entry.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub tokenizer: Option<TokenizerMode>,
}

impl RunConfig {
    /// Reads `path`, resolves relative paths against its directory and
    /// applies `overrides`. Does not check that input files exist.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: RunConfig = toml::from_str(&raw)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.qa, &mut cfg.paths.kb, &mut cfg.paths.out] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.paths.out = out.clone();
        }
        if let Some(k) = o.k {
            self.retrieval.k = k;
        }
        if let Some(lambda) = o.lambda {
            self.train.lambda = lambda;
        }
        if let Some(lr) = o.learning_rate {
            self.train.learning_rate = lr;
        }
        if let Some(epochs) = o.epochs {
            self.train.epochs = epochs;
        }
        if let Some(t) = o.tokenizer {
            self.eval.tokenizer = t;
        }
    }

    /// Checks every setting and that the input files exist.
    pub fn validate(&self) -> Result<()> {
        for (what, p) in [
            ("qa dataset", &self.paths.qa),
            ("knowledge base", &self.paths.kb),
        ] {
            if !p.is_file() {
                return Err(CliError::validation(format!(
                    "{what} not found: {}",
                    p.display()
                )));
            }
        }
        if self.retrieval.k == 0 {
            return Err(CliError::validation("retrieval.k must be at least 1"));
        }
        match &self.retrieval.encoder {
            EncoderConfig::Hashed { dimension, .. } | EncoderConfig::Remote { dimension, .. }
                if *dimension == 0 =>
            {
                return Err(CliError::validation("encoder dimension must be positive"));
            }
            _ => {}
        }
        self.prompt_template()?;
        if self.prefset.style.is_empty() {
            return Err(CliError::validation(
                "prefset.style needs at least one generator",
            ));
        }
        for g in self.prefset.style.iter().chain([&self.prefset.knowledge]) {
            g.validate()?;
        }
        if matches!(self.prefset.knowledge, GeneratorSpec::Corruption { .. }) {
            return Err(CliError::validation(
                "prefset.knowledge must read its knowledge (knowledge_sensitive or chat)",
            ));
        }
        self.train_config().validate()?;
        if self.train.embed_dim == 0 || !(self.train.init_scale > 0.0) {
            return Err(CliError::validation(
                "train.embed_dim and train.init_scale must be positive",
            ));
        }
        Ok(())
    }

    pub fn prompt_template(&self) -> Result<PromptTemplate> {
        PromptTemplate::new(
            self.template.template.clone(),
            self.template.separator.clone(),
        )
        .map_err(CliError::from)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.train.lambda,
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            grad_accumulation: self.train.grad_accumulation,
            k: self.retrieval.k,
            seed: self.seed,
            weight_decay: self.train.weight_decay,
            holdout_fraction: self.train.holdout_fraction,
        }
    }

    pub fn model_config(&self) -> ReferenceModelConfig {
        ReferenceModelConfig {
            embed_dim: self.train.embed_dim,
            init_scale: self.train.init_scale,
            seed: self.seed,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            tokenizer: self.eval.tokenizer,
            bleu_smoothing: self.eval.bleu_smoothing,
            rouge_measure: self.eval.rouge_measure,
            meteor_stem: self.eval.meteor_stem,
        }
    }

    /// Builds the configured encoder; the hashed one is fitted on
    /// `kb_surfaces`.
    pub fn encoder<'a>(
        &self,
        kb_surfaces: impl IntoIterator<Item = &'a str>,
    ) -> Result<Box<dyn TextEncoder>> {
        Ok(match &self.retrieval.encoder {
            EncoderConfig::Hashed {
                dimension,
                hash_seed,
            } => Box::new(HashedTfIdfEncoder::fit(kb_surfaces, *dimension, *hash_seed)),
            EncoderConfig::Remote {
                url,
                dimension,
                token_env,
                batch_size,
                retry,
            } => {
                let token = token_env.as_deref().and_then(env_secret);
                Box::new(
                    RemoteEncoder::new(url.clone(), *dimension, token, retry.clone())?
                        .with_batch_size(*batch_size),
                )
            }
        })
    }
}
