//! Scoring-model contract plus the two shipped implementations: a
//! table-driven mock for loss fixtures and a small trainable reference
//! network.

mod mock;
mod reference;

pub use mock::MockModel;
pub use reference::{ReferenceModel, ReferenceModelConfig, Vocabulary, BOS, EOS, UNK};

use crate::optim::AdamW;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("answer has no tokens")]
    EmptyAnswer,
    #[error("no table entry for prompt {prompt:?} at answer position {position}")]
    MissingEntry { prompt: String, position: usize },
    #[error("table entry for prompt {prompt:?} has {got} log-probs, answer has {expected} tokens")]
    LengthMismatch {
        prompt: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid log-probability {0} (must be finite and <= 0)")]
    InvalidLogProb(f64),
    #[error("gradient buffer has {got} entries, model has {expected} parameters")]
    GradientShape { expected: usize, got: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// An autoregressive model that can report per-token log-probabilities of
/// an answer given a prompt.
pub trait ScoringModel {
    /// `log P(a_j | prompt, a_<j)` for every answer token. Entries are `<= 0`.
    fn token_logprobs(&self, prompt: &str, answer: &str) -> Result<Vec<f64>>;
}

/// A [`ScoringModel`] whose parameters can be trained by gradient descent.
///
/// Parameters are exposed as one flat buffer; gradients use the same layout.
pub trait TrainableModel: ScoringModel {
    fn parameters(&self) -> &[f64];

    fn parameters_mut(&mut self) -> &mut [f64];

    /// Computes the sequence score `S` (mean answer-token log-probability)
    /// and adds `coeff * dS/dθ` into `grad`. Returns `S`.
    fn accumulate_score_gradient(
        &self,
        prompt: &str,
        answer: &str,
        coeff: f64,
        grad: &mut [f64],
    ) -> Result<f64>;

    fn apply_gradients(&mut self, optimizer: &mut AdamW, grads: &[f64]) -> Result<()> {
        let params = self.parameters_mut();
        if params.len() != grads.len() {
            return Err(ModelError::GradientShape {
                expected: params.len(),
                got: grads.len(),
            });
        }
        optimizer.step(params, grads);
        Ok(())
    }
}
