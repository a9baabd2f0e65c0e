//! Fine-tuning under the combined objective.
//!
//! One training example is a QA pair with its K1-augmented prompt and up to
//! two preference sets. Its step objective is
//!
//! ```text
//! L_ft + Σ_sets λ/(ℓ_set - 1) · L_align(set)
//! ```
//!
//! with `L_ft` counted once per pair. Every candidate is scored under the
//! same prompt. Gradients flow from the objective to each sequence score
//! (adaptive weights frozen) and from there into the model parameters.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{render_prompt, KnowledgeItem, PromptTemplate, QaPair};
use crate::model::{ModelError, TrainableModel, Vocabulary};
use crate::objectives::{
    adaptive_weights, align_loss_gradient, align_loss_with_weights, combined_loss, sequence_score,
    validate_lambda, AdaptiveWeights, LossBreakdown, ObjectiveError, SequenceScores,
};
use crate::optim::{AdamW, AdamWConfig};
use crate::prefset::{PreferenceSet, SetKind};

/// Candidate values for λ.
pub const LAMBDA_GRID: [f64; 4] = [1.0, 0.1, 0.01, 0.001];

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss on question `{question_id}`")]
    NonFinite { question_id: String },
    #[error("question `{question_id}`: {source}")]
    Example {
        question_id: String,
        #[source]
        source: ObjectiveError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("observer failed: {0}")]
    Observer(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub grad_accumulation: usize,
    /// Retrieval depth used to build the prompts.
    pub k: usize,
    pub seed: u64,
    pub weight_decay: f64,
    /// Share of QA pairs held out for rank-agreement measurement.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            learning_rate: 3e-4,
            epochs: 3,
            grad_accumulation: 8,
            k: crate::retrieval::DEFAULT_K,
            seed: 0,
            weight_decay: 0.01,
            holdout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        validate_lambda(self.lambda).map_err(|e| TrainError::Config(e.to_string()))?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.grad_accumulation == 0 {
            return Err(TrainError::Config(
                "grad_accumulation must be at least 1".into(),
            ));
        }
        if self.k == 0 {
            return Err(TrainError::Config("k must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(TrainError::Config(format!(
                "holdout_fraction must be in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// A QA pair ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub qa: QaPair,
    /// Prompt rendered with the pair's K1 knowledge.
    pub prompt: String,
    pub sps: Option<PreferenceSet>,
    pub kps: Option<PreferenceSet>,
}

impl TrainExample {
    pub fn new(
        qa: QaPair,
        template: &PromptTemplate,
        k1: &[&KnowledgeItem],
        sps: Option<PreferenceSet>,
        kps: Option<PreferenceSet>,
    ) -> Self {
        let prompt = render_prompt(template, k1.iter().copied(), &qa.question);
        Self {
            qa,
            prompt,
            sps,
            kps,
        }
    }

    fn sets(&self) -> impl Iterator<Item = &PreferenceSet> {
        self.sps.iter().chain(self.kps.iter())
    }
}

/// Joins QA pairs with their preference sets and prompts. Pairs without
/// any set still train on `L_ft`.
pub fn assemble_examples(
    dataset: &[QaPair],
    sets: &[PreferenceSet],
    prompts: &HashMap<String, String>,
) -> Vec<TrainExample> {
    let mut by_q: HashMap<(&str, SetKind), &PreferenceSet> = HashMap::new();
    for s in sets {
        by_q.insert((s.question_id(), s.kind()), s);
    }
    dataset
        .iter()
        .map(|qa| TrainExample {
            qa: qa.clone(),
            prompt: prompts
                .get(&qa.id)
                .cloned()
                .unwrap_or_else(|| render_prompt(&PromptTemplate::default(), [], &qa.question)),
            sps: by_q
                .get(&(qa.id.as_str(), SetKind::Style))
                .map(|s| (*s).clone()),
            kps: by_q
                .get(&(qa.id.as_str(), SetKind::Knowledge))
                .map(|s| (*s).clone()),
        })
        .collect()
}

/// Vocabulary covering every prompt, golden answer and candidate.
pub fn vocabulary_for(examples: &[TrainExample]) -> Vocabulary {
    let texts = examples.iter().flat_map(|ex| {
        [ex.prompt.as_str(), ex.qa.golden_answer.as_str()]
            .into_iter()
            .chain(
                ex.sets()
                    .flat_map(|s| s.candidates().iter().map(|c| c.text.as_str())),
            )
    });
    Vocabulary::from_texts(texts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetLoss {
    pub kind: SetKind,
    pub breakdown: LossBreakdown,
}

/// Loss values of one example at the current parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub question_id: String,
    pub l_ft: f64,
    pub sets: Vec<SetLoss>,
    /// Sets dropped because a candidate could not be scored.
    pub skipped: Vec<SetKind>,
    pub objective: f64,
}

fn set_scores(
    model: &dyn crate::model::ScoringModel,
    prompt: &str,
    set: &PreferenceSet,
) -> std::result::Result<SequenceScores, ObjectiveError> {
    let ranked = set.ranked();
    let mut values = Vec::with_capacity(ranked.len());
    for c in ranked {
        values.push(sequence_score(model, prompt, &c.text)?);
    }
    SequenceScores::new(values)
}

/// Step objective without touching gradients. Sets whose candidates fail
/// to score are skipped; a failing golden answer is an error.
pub fn step_objective<M: TrainableModel>(
    model: &M,
    example: &TrainExample,
    lambda: f64,
) -> Result<StepOutcome> {
    Ok(score_example(model, example, lambda)?.0)
}

/// Adaptive weights of every scorable set at the current parameters.
pub fn step_weights<M: TrainableModel>(
    model: &M,
    example: &TrainExample,
) -> Result<Vec<(SetKind, AdaptiveWeights)>> {
    let mut out = Vec::new();
    for set in example.sets() {
        if let Ok(scores) = set_scores(model, &example.prompt, set) {
            let mu = adaptive_weights(&scores).map_err(|e| TrainError::Example {
                question_id: example.qa.id.clone(),
                source: e,
            })?;
            out.push((set.kind(), mu));
        }
    }
    Ok(out)
}

/// The step objective with each set's weights fixed to `weights`: the
/// surrogate whose gradient [`Trainer::train_step`] follows.
pub fn step_objective_frozen<M: TrainableModel>(
    model: &M,
    example: &TrainExample,
    lambda: f64,
    weights: &[(SetKind, AdaptiveWeights)],
) -> Result<f64> {
    let err = |e| TrainError::Example {
        question_id: example.qa.id.clone(),
        source: e,
    };
    let mut total =
        -sequence_score(model, &example.prompt, &example.qa.golden_answer).map_err(err)?;
    for (kind, mu) in weights {
        let Some(set) = example.sets().find(|s| s.kind() == *kind) else {
            continue;
        };
        let scores = set_scores(model, &example.prompt, set).map_err(err)?;
        let l = align_loss_with_weights(&scores, mu).map_err(err)?;
        total += lambda / (scores.len() - 1) as f64 * l;
    }
    Ok(total)
}

type Scored<'a> = (StepOutcome, Vec<(&'a PreferenceSet, SequenceScores)>);

fn score_example<'a, M: TrainableModel>(
    model: &M,
    example: &'a TrainExample,
    lambda: f64,
) -> Result<Scored<'a>> {
    let qid = &example.qa.id;
    let l_ft = -sequence_score(model, &example.prompt, &example.qa.golden_answer).map_err(|e| {
        TrainError::Example {
            question_id: qid.clone(),
            source: e,
        }
    })?;
    let mut sets = Vec::new();
    let mut skipped = Vec::new();
    let mut scored = Vec::new();
    for set in example.sets() {
        match set_scores(model, &example.prompt, set) {
            Ok(scores) => {
                let breakdown =
                    combined_loss(l_ft, &scores, lambda).map_err(|e| TrainError::Example {
                        question_id: qid.clone(),
                        source: e,
                    })?;
                sets.push(SetLoss {
                    kind: set.kind(),
                    breakdown,
                });
                scored.push((set, scores));
            }
            Err(e) => {
                log::warn!("skipping {} set of `{qid}`: {e}", set.kind());
                skipped.push(set.kind());
            }
        }
    }
    let objective = l_ft + sets.iter().map(|s| s.breakdown.total - l_ft).sum::<f64>();
    if !objective.is_finite() {
        return Err(TrainError::NonFinite {
            question_id: qid.clone(),
        });
    }
    Ok((
        StepOutcome {
            question_id: qid.clone(),
            l_ft,
            sets,
            skipped,
            objective,
        },
        scored,
    ))
}

/// Owns the model, its optimizer and the gradient accumulator.
#[derive(Debug, Clone)]
pub struct Trainer<M> {
    model: M,
    optimizer: AdamW,
    config: TrainConfig,
    grads: Vec<f64>,
    pending: usize,
}

impl<M: TrainableModel> Trainer<M> {
    pub fn new(model: M, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(config.optimizer_config(), model.parameters().len());
        Ok(Self::with_optimizer(model, optimizer, config))
    }

    /// Resumes with an existing optimizer state.
    pub fn with_optimizer(model: M, mut optimizer: AdamW, config: TrainConfig) -> Self {
        optimizer.config = config.optimizer_config();
        let n = model.parameters().len();
        Self {
            model,
            optimizer,
            config,
            grads: vec![0.0; n],
            pending: 0,
        }
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.optimizer
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn into_parts(self) -> (M, AdamW) {
        (self.model, self.optimizer)
    }

    /// Accumulated but not yet applied steps.
    pub fn pending_steps(&self) -> usize {
        self.pending
    }

    /// Scores the example, accumulates the gradient of its step objective
    /// and applies an update once `grad_accumulation` steps are pending.
    pub fn train_step(&mut self, example: &TrainExample) -> Result<StepOutcome> {
        let lambda = self.config.lambda;
        let (outcome, scored) = score_example(&self.model, example, lambda)?;

        // dObjective/dS per candidate, then chain into the parameters.
        let mut grad = std::mem::take(&mut self.grads);
        let result = (|| -> Result<()> {
            self.model.accumulate_score_gradient(
                &example.prompt,
                &example.qa.golden_answer,
                -1.0,
                &mut grad,
            )?;
            for (set, scores) in &scored {
                let scale = lambda / (scores.len() - 1) as f64;
                let d_scores = align_loss_gradient(scores).map_err(|e| TrainError::Example {
                    question_id: example.qa.id.clone(),
                    source: e,
                })?;
                for (cand, d) in set.ranked().into_iter().zip(d_scores) {
                    self.model.accumulate_score_gradient(
                        &example.prompt,
                        &cand.text,
                        scale * d,
                        &mut grad,
                    )?;
                }
            }
            Ok(())
        })();
        self.grads = grad;
        result?;

        self.pending += 1;
        if self.pending >= self.config.grad_accumulation {
            self.apply()?;
        }
        Ok(outcome)
    }

    /// Applies any pending accumulated gradient.
    pub fn flush(&mut self) -> Result<()> {
        if self.pending > 0 {
            self.apply()?;
        }
        Ok(())
    }

    fn apply(&mut self) -> Result<()> {
        let inv = 1.0 / self.pending as f64;
        self.grads.iter_mut().for_each(|g| *g *= inv);
        if self.grads.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite {
                question_id: "<accumulated gradient>".into(),
            });
        }
        self.model
            .apply_gradients(&mut self.optimizer, &self.grads)?;
        self.grads.fill(0.0);
        self.pending = 0;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 0 for the state before training.
    pub epoch: usize,
    pub mean_l_ft: f64,
    pub mean_l_align: f64,
    pub mean_total: f64,
    /// Share of evaluation sets whose score order matches the human order.
    pub rank_agreement: f64,
    /// Share of ordered candidate pairs the model scores in human order.
    pub pairwise_agreement: f64,
    pub optimizer_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub train_examples: usize,
    pub heldout_examples: usize,
    /// `heldout`, or `train` when nothing was held out.
    pub agreement_split: String,
    pub initial: EpochMetrics,
    pub epochs: Vec<EpochMetrics>,
    /// Preference sets dropped at least once because a candidate failed.
    pub skipped_sets: usize,
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    pub fn final_metrics(&self) -> &EpochMetrics {
        self.epochs.last().unwrap_or(&self.initial)
    }

    /// The report with timing zeroed; equal across reruns with one seed.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Exact-order and pairwise agreement between model scores and human
/// ranks. Ties in score count as disagreement.
pub fn rank_agreement<M: TrainableModel>(model: &M, examples: &[&TrainExample]) -> (f64, f64) {
    let (mut exact, mut sets, mut agree, mut pairs) = (0usize, 0usize, 0usize, 0usize);
    for ex in examples {
        for set in ex.sets() {
            let Ok(scores) = set_scores(model, &ex.prompt, set) else {
                continue;
            };
            let s = scores.as_slice();
            sets += 1;
            if s.windows(2).all(|w| w[0] > w[1]) {
                exact += 1;
            }
            for i in 0..s.len() {
                for j in i + 1..s.len() {
                    pairs += 1;
                    if s[i] > s[j] {
                        agree += 1;
                    }
                }
            }
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (frac(exact, sets), frac(agree, pairs))
}

/// Deterministic split into (train, held-out) indices.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x686f_6c64_6f75_7421);
    idx.shuffle(&mut rng);
    let mut n_hold = (fraction * n as f64).round() as usize;
    if fraction > 0.0 && n >= 2 {
        n_hold = n_hold.max(1);
    }
    n_hold = n_hold.min(n.saturating_sub(1));
    let mut held = idx[..n_hold].to_vec();
    let mut train = idx[n_hold..].to_vec();
    held.sort_unstable();
    train.sort_unstable();
    (train, held)
}

/// Hooks for logging steps and persisting checkpoints.
pub trait TrainObserver<M> {
    fn on_step(&mut self, _epoch: usize, _step: usize, _outcome: &StepOutcome) -> Result<()> {
        Ok(())
    }

    fn on_epoch_end(&mut self, _trainer: &Trainer<M>, _metrics: &EpochMetrics) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;

impl<M> TrainObserver<M> for NoopObserver {}

fn measure<M: TrainableModel>(
    trainer: &Trainer<M>,
    epoch: usize,
    train: &[&TrainExample],
    eval: &[&TrainExample],
) -> Result<EpochMetrics> {
    let (mut ft, mut total, mut align, mut n, mut n_sets) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for ex in train {
        let o = match step_objective(&trainer.model, ex, trainer.config.lambda) {
            Ok(o) => o,
            Err(TrainError::Example { .. }) => continue,
            Err(e) => return Err(e),
        };
        ft += o.l_ft;
        total += o.objective;
        for s in &o.sets {
            align += s.breakdown.l_align;
            n_sets += 1;
        }
        n += 1;
    }
    let mean = |x: f64, d: usize| if d == 0 { 0.0 } else { x / d as f64 };
    let (exact, pairwise) = rank_agreement(&trainer.model, eval);
    Ok(EpochMetrics {
        epoch,
        mean_l_ft: mean(ft, n),
        mean_l_align: mean(align, n_sets),
        mean_total: mean(total, n),
        rank_agreement: exact,
        pairwise_agreement: pairwise,
        optimizer_steps: trainer.optimizer.steps_taken(),
    })
}

/// Trains epochs `completed_epochs + 1 ..= config.epochs` in seeded
/// shuffled order over the non-held-out examples.
pub fn train_from<M: TrainableModel>(
    trainer: &mut Trainer<M>,
    examples: &[TrainExample],
    completed_epochs: usize,
    observer: &mut dyn TrainObserver<M>,
) -> Result<TrainReport> {
    let started = Instant::now();
    let config = trainer.config.clone();
    let (train_idx, held_idx) = holdout_split(examples.len(), config.holdout_fraction, config.seed);
    let train_set: Vec<&TrainExample> = train_idx.iter().map(|&i| &examples[i]).collect();
    let held_set: Vec<&TrainExample> = held_idx.iter().map(|&i| &examples[i]).collect();
    let (eval_set, split) = if held_set.is_empty() {
        (&train_set, "train")
    } else {
        (&held_set, "heldout")
    };

    let initial = measure(trainer, completed_epochs, &train_set, eval_set)?;
    let mut epochs = Vec::new();
    let mut skipped_sets = 0usize;
    for epoch in completed_epochs + 1..=config.epochs {
        let mut order: Vec<&TrainExample> = train_set.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64 * 0x9e37_79b9));
        order.shuffle(&mut rng);
        for (step, ex) in order.into_iter().enumerate() {
            match trainer.train_step(ex) {
                Ok(outcome) => {
                    skipped_sets += outcome.skipped.len();
                    observer.on_step(epoch, step, &outcome)?;
                }
                Err(TrainError::Example {
                    question_id,
                    source,
                }) => {
                    log::warn!("skipping `{question_id}`: {source}");
                }
                Err(e) => return Err(e),
            }
        }
        trainer.flush()?;
        let metrics = measure(trainer, epoch, &train_set, eval_set)?;
        observer.on_epoch_end(trainer, &metrics)?;
        epochs.push(metrics);
    }
    Ok(TrainReport {
        config,
        train_examples: train_set.len(),
        heldout_examples: held_set.len(),
        agreement_split: split.to_string(),
        initial,
        epochs,
        skipped_sets,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Trains a fresh model from scratch. Returns the trained model and report.
pub fn train<M: TrainableModel>(
    model: M,
    examples: &[TrainExample],
    config: TrainConfig,
    observer: &mut dyn TrainObserver<M>,
) -> Result<(M, TrainReport)> {
    let mut trainer = Trainer::new(model, config)?;
    let report = train_from(&mut trainer, examples, 0, observer)?;
    Ok((trainer.into_parts().0, report))
}
