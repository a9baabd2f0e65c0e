//! Scoring generated answers against golden answers.
//!
//! Traditional metrics are computed per example and averaged over the
//! corpus in dataset order. Perplexity is that of the golden answer under
//! the model; the preference score is the mean sequence score of the
//! generations.

mod human;
pub mod metrics;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use human::{
    load_human_eval, tally_human_eval, HumanEvalRecord, HumanTally, PairTally, Verdict, WinTieLose,
};
pub use metrics::{bleu_n, meteor_simplified, perplexity, rouge_l, rouge_n, RougeMeasure};

use crate::data_io::{self, render_prompt, DataError, PromptTemplate, QaPair};
use crate::model::ScoringModel;
use crate::objectives::{sequence_score, ObjectiveError};
use crate::text::{char_tokens, word_tokens};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no generations to evaluate")]
    NoGenerations,
    #[error("no generation matched a QA pair")]
    NoSamples,
    #[error("generation for unknown question `{0}`")]
    UnknownQuestion(String),
    #[error("duplicate generation for question `{0}`")]
    DuplicateGeneration(String),
    #[error("perplexity of golden answer for `{question_id}`: {source}")]
    Perplexity {
        question_id: String,
        #[source]
        source: ObjectiveError,
    },
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    /// Lowercased words with punctuation split off.
    #[default]
    Whitespace,
    /// One token per non-whitespace character.
    Char,
}

impl TokenizerMode {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            TokenizerMode::Whitespace => word_tokens(text),
            TokenizerMode::Char => char_tokens(text),
        }
    }
}

impl std::str::FromStr for TokenizerMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "whitespace" => Ok(TokenizerMode::Whitespace),
            "char" => Ok(TokenizerMode::Char),
            other => Err(format!(
                "unknown tokenizer mode `{other}` (whitespace|char)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tokenizer: TokenizerMode,
    pub bleu_smoothing: bool,
    pub rouge_measure: RougeMeasure,
    pub meteor_stem: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tokenizer: TokenizerMode::Whitespace,
            bleu_smoothing: false,
            rouge_measure: RougeMeasure::F1,
            meteor_stem: true,
        }
    }
}

/// Extra reference-based metric, e.g. an embedding-similarity score.
pub trait ReferenceScorer: Send + Sync {
    fn name(&self) -> &str;

    fn score(&self, candidate: &str, reference: &str) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_1: f64,
    pub rouge_2: f64,
    pub rouge_l: f64,
    #[serde(rename = "meteor_simplified")]
    pub meteor: f64,
    pub ppl: f64,
    pub preference_score: f64,
    pub sample_count: usize,
    /// QA pairs with no generation.
    pub missing_generations: usize,
    /// Generations the model could not score; left out of the preference
    /// score.
    pub unscored_generations: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
    pub config: EvalConfig,
}

/// Text metrics of one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleScores {
    pub bleu: [f64; 4],
    pub rouge_1: f64,
    pub rouge_2: f64,
    pub rouge_l: f64,
    pub meteor: f64,
}

pub fn score_example(candidate: &str, reference: &str, config: &EvalConfig) -> ExampleScores {
    let c = config.tokenizer.tokenize(candidate);
    let r = config.tokenizer.tokenize(reference);
    let mut bleu = [0.0; 4];
    for (i, b) in bleu.iter_mut().enumerate() {
        *b = bleu_n(&c, &r, i + 1, config.bleu_smoothing);
    }
    ExampleScores {
        bleu,
        rouge_1: rouge_n(&c, &r, 1, config.rouge_measure),
        rouge_2: rouge_n(&c, &r, 2, config.rouge_measure),
        rouge_l: rouge_l(&c, &r, config.rouge_measure),
        meteor: meteor_simplified(&c, &r, config.meteor_stem),
    }
}

/// One line of a generations file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub question_id: String,
    pub text: String,
}

pub fn load_generations(path: &Path) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (_, g) in data_io::read_jsonl::<GenerationRecord>(path)? {
        if out.insert(g.question_id.clone(), g.text).is_some() {
            return Err(EvalError::DuplicateGeneration(g.question_id));
        }
    }
    Ok(out)
}

/// Writes generations in dataset order.
pub fn write_generations(
    path: &Path,
    dataset: &[QaPair],
    generations: &HashMap<String, String>,
) -> Result<()> {
    let rows: Vec<GenerationRecord> = dataset
        .iter()
        .filter_map(|qa| {
            generations.get(&qa.id).map(|t| GenerationRecord {
                question_id: qa.id.clone(),
                text: t.clone(),
            })
        })
        .collect();
    Ok(data_io::write_jsonl::<(), _>(path, None, &rows)?)
}

struct Row {
    scores: ExampleScores,
    ppl: f64,
    preference: Option<f64>,
    extra: Vec<f64>,
}

/// Scores `generations` against the golden answers of `dataset`.
///
/// `prompts` maps question ids to the prompt used for scoring; pairs
/// without one use the bare question in the default template.
pub fn evaluate(
    model: &(dyn ScoringModel + Sync),
    dataset: &[QaPair],
    prompts: &HashMap<String, String>,
    generations: &HashMap<String, String>,
    config: &EvalConfig,
    scorers: &[&dyn ReferenceScorer],
) -> Result<EvalReport> {
    if generations.is_empty() {
        return Err(EvalError::NoGenerations);
    }
    let known: HashSet<&str> = dataset.iter().map(|q| q.id.as_str()).collect();
    let mut unknown: Vec<&String> = generations
        .keys()
        .filter(|id| !known.contains(id.as_str()))
        .collect();
    unknown.sort();
    if let Some(id) = unknown.first() {
        return Err(EvalError::UnknownQuestion((*id).clone()));
    }

    let present: Vec<&QaPair> = dataset
        .iter()
        .filter(|q| generations.contains_key(&q.id))
        .collect();
    let missing = dataset.len() - present.len();
    if missing > 0 {
        log::warn!("{missing} QA pairs have no generation and are skipped");
    }
    if present.is_empty() {
        return Err(EvalError::NoSamples);
    }

    let template = PromptTemplate::default();
    let rows: Vec<Result<Row>> = present
        .par_iter()
        .map(|qa| {
            let text = &generations[&qa.id];
            let prompt = prompts
                .get(&qa.id)
                .cloned()
                .unwrap_or_else(|| render_prompt(&template, [], &qa.question));
            let ppl = perplexity(model, &prompt, &qa.golden_answer).map_err(|e| {
                EvalError::Perplexity {
                    question_id: qa.id.clone(),
                    source: e,
                }
            })?;
            let preference = match sequence_score(model, &prompt, text) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("cannot score generation for `{}`: {e}", qa.id);
                    None
                }
            };
            Ok(Row {
                scores: score_example(text, &qa.golden_answer, config),
                ppl,
                preference,
                extra: scorers
                    .iter()
                    .map(|s| s.score(text, &qa.golden_answer))
                    .collect(),
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<Row>>>()?;

    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&Row) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let scored: Vec<f64> = rows.iter().filter_map(|r| r.preference).collect();
    let preference_score = if scored.is_empty() {
        f64::NAN
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    let extra = scorers
        .iter()
        .enumerate()
        .map(|(i, s)| (s.name().to_string(), mean(&|r| r.extra[i])))
        .collect();
    Ok(EvalReport {
        bleu_1: mean(&|r| r.scores.bleu[0]),
        bleu_2: mean(&|r| r.scores.bleu[1]),
        bleu_3: mean(&|r| r.scores.bleu[2]),
        bleu_4: mean(&|r| r.scores.bleu[3]),
        rouge_1: mean(&|r| r.scores.rouge_1),
        rouge_2: mean(&|r| r.scores.rouge_2),
        rouge_l: mean(&|r| r.scores.rouge_l),
        meteor: mean(&|r| r.scores.meteor),
        ppl: mean(&|r| r.ppl),
        preference_score,
        sample_count: rows.len(),
        missing_generations: missing,
        unscored_generations: rows.len() - scored.len(),
        extra,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MockModel;

    fn dataset() -> Vec<QaPair> {
        vec![
            QaPair::new("a", "qa?", "the cat sat on the mat"),
            QaPair::new("b", "qb?", "a dog ran"),
            QaPair::new("c", "qc?", "red"),
        ]
    }

    fn gens(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn golden_generations_score_one() {
        let ds = dataset();
        let g: HashMap<String, String> = ds
            .iter()
            .map(|q| (q.id.clone(), q.golden_answer.clone()))
            .collect();
        let r = evaluate(
            &MockModel::uniform(10),
            &ds,
            &HashMap::new(),
            &g,
            &EvalConfig::default(),
            &[],
        )
        .unwrap();
        // "red" has a single token, so BLEU above order 1 is zero there.
        assert_eq!(
            (r.bleu_1, r.rouge_1, r.rouge_l, r.meteor),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert_eq!(r.sample_count, 3);
        assert!((r.ppl - 10.0).abs() < 1e-12);
        assert!((r.preference_score - (0.1f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_generations_are_an_error() {
        let r = evaluate(
            &MockModel::certain(),
            &dataset(),
            &HashMap::new(),
            &HashMap::new(),
            &EvalConfig::default(),
            &[],
        );
        assert!(matches!(r, Err(EvalError::NoGenerations)));
    }

    #[test]
    fn unknown_question_is_an_error() {
        let r = evaluate(
            &MockModel::certain(),
            &dataset(),
            &HashMap::new(),
            &gens(&[("zzz", "x")]),
            &EvalConfig::default(),
            &[],
        );
        assert!(matches!(r, Err(EvalError::UnknownQuestion(id)) if id == "zzz"));
    }

    #[test]
    fn corpus_score_is_mean_of_examples() {
        let ds = dataset();
        let g = gens(&[("a", "the cat sat"), ("b", "a cat ran fast")]);
        let cfg = EvalConfig::default();
        let r = evaluate(&MockModel::certain(), &ds, &HashMap::new(), &g, &cfg, &[]).unwrap();
        assert_eq!((r.sample_count, r.missing_generations), (2, 1));
        let a = score_example("the cat sat", "the cat sat on the mat", &cfg);
        let b = score_example("a cat ran fast", "a dog ran", &cfg);
        assert!((r.rouge_1 - (a.rouge_1 + b.rouge_1) / 2.0).abs() < 1e-15);
        assert!((r.bleu_1 - (a.bleu[0] + b.bleu[0]) / 2.0).abs() < 1e-15);
        assert!((r.meteor - (a.meteor + b.meteor) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn char_mode_tokenizes_characters() {
        let cfg = EvalConfig {
            tokenizer: TokenizerMode::Char,
            ..Default::default()
        };
        let s = score_example("猫坐着", "猫坐", &cfg);
        assert!((s.rouge_1 - 0.8).abs() < 1e-15);
        assert_eq!(
            "char".parse::<TokenizerMode>().unwrap(),
            TokenizerMode::Char
        );
        assert!("words".parse::<TokenizerMode>().is_err());
    }

    struct LenRatio;

    impl ReferenceScorer for LenRatio {
        fn name(&self) -> &str {
            "len_ratio"
        }

        fn score(&self, c: &str, r: &str) -> f64 {
            c.len().min(r.len()) as f64 / c.len().max(r.len()) as f64
        }
    }

    #[test]
    fn plugin_scorers_are_reported() {
        let ds = dataset();
        let g = gens(&[("c", "red")]);
        let r = evaluate(
            &MockModel::certain(),
            &ds,
            &HashMap::new(),
            &g,
            &EvalConfig::default(),
            &[&LenRatio],
        )
        .unwrap();
        assert_eq!(r.extra.get("len_ratio"), Some(&1.0));
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("meteor_simplified").is_some());
    }

    #[test]
    fn generations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jsonl");
        let g = gens(&[("b", "x"), ("a", "y")]);
        write_generations(&path, &dataset(), &g).unwrap();
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.starts_with(r#"{"question_id":"a","text":"y"}"#));
        assert_eq!(load_generations(&path).unwrap(), g);
        std::fs::write(
            &path,
            "{\"question_id\":\"a\",\"text\":\"1\"}\n{\"question_id\":\"a\",\"text\":\"2\"}\n",
        )
        .unwrap();
        assert!(matches!(
            load_generations(&path),
            Err(EvalError::DuplicateGeneration(_))
        ));
    }
}
