use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::http::{env_secret, JsonClient, RetryPolicy};
use crate::text::{fnv1a64, word_tokens};

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("generator returned empty output")]
    EmptyOutput,
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("{0}")]
    Other(String),
}

/// Everything a generator may look at for one answer.
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub question_id: &'a str,
    pub question: &'a str,
    /// Fully rendered prompt (template, knowledge and question).
    pub prompt: &'a str,
    /// Surfaces of the knowledge items placed in the prompt.
    pub knowledge: &'a [&'a str],
    /// Golden answer. Only synthetic generators read it.
    pub reference: &'a str,
}

/// Produces one answer per request. Lower `quality_rank` means a more
/// capable generator.
pub trait AnswerGenerator: Send + Sync {
    fn name(&self) -> &str;

    fn quality_rank(&self) -> u32;

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, GenerationError>;
}

/// Words used as replacements by the synthetic generators.
pub const DEFAULT_FILLERS: &[&str] = &[
    "maybe",
    "generally",
    "something",
    "various",
    "unclear",
    "perhaps",
    "usually",
    "probably",
];

fn request_rng(seed: u64, request: &GenerationRequest<'_>) -> ChaCha8Rng {
    let mut key = request.question_id.as_bytes().to_vec();
    key.push(0);
    key.extend_from_slice(request.reference.as_bytes());
    ChaCha8Rng::seed_from_u64(fnv1a64(seed, &key))
}

fn normalised(token: &str) -> String {
    word_tokens(token).concat()
}

fn pick_filler(rng: &mut ChaCha8Rng, pool: &[String], avoid: &HashSet<String>) -> Option<String> {
    let usable: Vec<&String> = pool
        .iter()
        .filter(|w| !avoid.contains(&normalised(w)))
        .collect();
    usable.choose(rng).map(|w| (*w).clone())
}

/// Replaces the tokens at `positions`; tokens without a usable replacement
/// are deleted. Never returns an empty string.
fn corrupt(
    tokens: &[&str],
    positions: &[usize],
    rng: &mut ChaCha8Rng,
    pool: &[String],
    avoid: &HashSet<String>,
) -> String {
    let mut out: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
    let mut deleted = vec![false; tokens.len()];
    for &p in positions {
        match pick_filler(rng, pool, avoid) {
            Some(w) => out[p] = w,
            None => deleted[p] = true,
        }
    }
    let kept: Vec<String> = out
        .into_iter()
        .zip(deleted)
        .filter(|(_, d)| !d)
        .map(|(t, _)| t)
        .collect();
    if kept.is_empty() {
        pool.first().cloned().unwrap_or_else(|| "unknown".into())
    } else {
        kept.join(" ")
    }
}

fn is_word(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric)
}

fn corruption_count(rate: f64, n: usize) -> usize {
    if rate <= 0.0 || n == 0 {
        return 0;
    }
    ((rate * n as f64).round() as usize).clamp(1, n)
}

/// Deterministic stand-in for a weaker LLM: replaces a fixed fraction of
/// the golden answer's tokens with filler words.
///
/// Corrupted positions are drawn from a permutation that depends only on
/// the shared seed and the request, so a generator with a higher rate
/// corrupts a superset of the positions a lower-rate one corrupts.
#[derive(Debug, Clone)]
pub struct CorruptionGenerator {
    name: String,
    quality_rank: u32,
    rate: f64,
    seed: u64,
    fillers: Vec<String>,
}

impl CorruptionGenerator {
    pub fn new(name: impl Into<String>, quality_rank: u32, rate: f64, seed: u64) -> Self {
        Self {
            name: name.into(),
            quality_rank,
            rate: rate.clamp(0.0, 1.0),
            seed,
            fillers: DEFAULT_FILLERS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn with_fillers(mut self, fillers: Vec<String>) -> Self {
        self.fillers = fillers;
        self
    }

    /// The usual three-generator ladder with rates 0.1, 0.3 and 0.5.
    pub fn ladder(seed: u64) -> Vec<Self> {
        vec![
            Self::new("synthetic-strong", 1, 0.1, seed),
            Self::new("synthetic-medium", 2, 0.3, seed),
            Self::new("synthetic-weak", 3, 0.5, seed),
        ]
    }
}

impl AnswerGenerator for CorruptionGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn quality_rank(&self) -> u32 {
        self.quality_rank
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, GenerationError> {
        let tokens: Vec<&str> = request.reference.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(GenerationError::EmptyOutput);
        }
        let mut rng = request_rng(self.seed, request);
        let mut order: Vec<usize> = (0..tokens.len()).collect();
        order.shuffle(&mut rng);
        let n_bad = corruption_count(self.rate, tokens.len());
        let mut positions = order[..n_bad].to_vec();
        positions.sort_unstable();
        let avoid: HashSet<String> = tokens.iter().map(|t| normalised(t)).collect();
        let mut fill_rng =
            ChaCha8Rng::seed_from_u64(fnv1a64(self.seed, self.name.as_bytes()) ^ rng.gen::<u64>());
        Ok(corrupt(
            &tokens,
            &positions,
            &mut fill_rng,
            &self.fillers,
            &avoid,
        ))
    }
}

/// Deterministic stand-in for answering with retrieved knowledge.
///
/// Each knowledge item covers some share of the golden words absent from
/// the question and is consistent with the golden answer to the extent its
/// own words occur there. Support `s` is the best product of the two over
/// the supplied items. Without knowledge a fraction `base_rate` of the
/// tokens is corrupted. With knowledge the rate is
/// `base_rate * (1 - s/2) + misuse_rate * (1 - s)`, supported tokens are
/// copied faithfully and replacements come from the knowledge itself.
/// Relevant knowledge therefore beats no knowledge, which beats
/// irrelevant knowledge.
#[derive(Debug, Clone)]
pub struct KnowledgeSensitiveGenerator {
    name: String,
    base_rate: f64,
    misuse_rate: f64,
    seed: u64,
    fillers: Vec<String>,
}

impl KnowledgeSensitiveGenerator {
    pub fn new(name: impl Into<String>, base_rate: f64, misuse_rate: f64, seed: u64) -> Self {
        Self {
            name: name.into(),
            base_rate: base_rate.clamp(0.0, 1.0),
            misuse_rate: misuse_rate.clamp(0.0, 1.0),
            seed,
            fillers: DEFAULT_FILLERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl AnswerGenerator for KnowledgeSensitiveGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn quality_rank(&self) -> u32 {
        1
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, GenerationError> {
        let tokens: Vec<&str> = request.reference.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(GenerationError::EmptyOutput);
        }
        let known: HashSet<String> = request
            .knowledge
            .iter()
            .flat_map(|k| word_tokens(k))
            .collect();
        let golden_norm: Vec<String> = tokens.iter().map(|t| normalised(t)).collect();
        let supported: Vec<bool> = golden_norm.iter().map(|t| known.contains(t)).collect();
        let asked: HashSet<String> = word_tokens(request.question).into_iter().collect();
        let golden_words: HashSet<&str> = golden_norm.iter().map(String::as_str).collect();
        let novel: HashSet<&str> = golden_words
            .iter()
            .copied()
            .filter(|t| !asked.contains(*t) && is_word(t))
            .collect();
        let support = request
            .knowledge
            .iter()
            .map(|k| {
                let words: HashSet<String> =
                    word_tokens(k).into_iter().filter(|w| is_word(w)).collect();
                if words.is_empty() {
                    return 0.0;
                }
                let consistent = words
                    .iter()
                    .filter(|w| golden_words.contains(w.as_str()))
                    .count();
                let covered = if novel.is_empty() {
                    1.0
                } else {
                    novel.iter().filter(|t| words.contains(**t)).count() as f64 / novel.len() as f64
                };
                covered * consistent as f64 / words.len() as f64
            })
            .fold(0.0, f64::max);
        let rate = if request.knowledge.is_empty() {
            self.base_rate
        } else {
            (self.base_rate * (1.0 - support / 2.0) + self.misuse_rate * (1.0 - support)).min(1.0)
        };

        let mut rng = request_rng(self.seed, request);
        let mut open: Vec<usize> = (0..tokens.len()).filter(|&i| !supported[i]).collect();
        open.shuffle(&mut rng);
        let n_bad = corruption_count(rate, tokens.len()).min(open.len());
        let mut positions = open[..n_bad].to_vec();
        positions.sort_unstable();

        let avoid: HashSet<String> = golden_norm.into_iter().collect();
        let mut pool: Vec<String> = known.into_iter().filter(|w| !avoid.contains(w)).collect();
        pool.sort();
        pool.retain(|w| w.chars().any(char::is_alphanumeric));
        if pool.is_empty() {
            pool = self.fillers.clone();
        }
        Ok(corrupt(&tokens, &positions, &mut rng, &pool, &avoid))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatGeneratorConfig {
    pub name: String,
    pub quality_rank: u32,
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    /// Environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_api_key_env() -> String {
    "KNOWPAT_API_KEY".into()
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Generator backed by a chat-completion HTTP endpoint.
#[derive(Debug)]
pub struct ChatCompletionGenerator {
    config: ChatGeneratorConfig,
    url: String,
    client: JsonClient,
}

impl ChatCompletionGenerator {
    pub fn new(config: ChatGeneratorConfig) -> Result<Self, GenerationError> {
        let key = env_secret(&config.api_key_env);
        let client = JsonClient::new(key, config.retry.clone())
            .map_err(|e| GenerationError::Endpoint(e.to_string()))?;
        let url = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        Ok(Self {
            config,
            url,
            client,
        })
    }
}

impl AnswerGenerator for ChatCompletionGenerator {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn quality_rank(&self) -> u32 {
        self.config.quality_rank
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, GenerationError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: request.prompt,
            }],
            temperature: self.config.temperature,
        };
        let resp: ChatResponse = self
            .client
            .post_json(&self.url, &body)
            .map_err(|e| GenerationError::Endpoint(e.to_string()))?;
        let text = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        let text = text.trim();
        if text.is_empty() {
            return Err(GenerationError::EmptyOutput);
        }
        Ok(text.to_string())
    }
}
