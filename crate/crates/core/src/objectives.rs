//! Sequence scores and the preference-alignment objectives built on them.
//!
//! All functions here take scores ordered by human preference: index 0 is
//! the most preferred candidate (rank 1), the last index the least
//! preferred. Ranks only fix this ordering; they never enter a formula.
//!
//! The alignment loss contrasts every preferred candidate `i < ℓ-1` with
//! every candidate ranked below it:
//!
//! ```text
//! L_align = Σ_{i<ℓ-1} μ_i · ( softplus(-S_i) + Σ_{j>i} softplus(S_j) )
//! μ_i     = (S_i - S_min) / (S_max - S_min)
//! L       = L_ft + λ / (ℓ-1) · L_align
//! ```
//!
//! `μ` is treated as a constant when differentiating.

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, ScoringModel};

/// Score spread at or below which the adaptive weights degenerate to 1.
pub const DEGENERATE_SPREAD: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("need at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("score {0} is not finite")]
    NonFinite(f64),
    #[error("lambda must be a positive finite number, got {0}")]
    InvalidLambda(f64),
    #[error("margin must be non-negative, got {0}")]
    InvalidMargin(f64),
    #[error("weights have length {got}, scores have length {expected}")]
    WeightShape { expected: usize, got: usize },
    #[error("duplicate preference rank {0}")]
    DuplicateRank(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

/// Model preference scores of one preference set, most preferred first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SequenceScores(Vec<f64>);

impl SequenceScores {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(ObjectiveError::NonFinite(*bad));
        }
        Ok(Self(scores))
    }

    /// Builds scores from `(rank, score)` pairs given in any storage order.
    pub fn from_ranked(pairs: &[(u32, f64)]) -> Result<Self> {
        let mut sorted = pairs.to_vec();
        sorted.sort_by_key(|(r, _)| *r);
        if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(ObjectiveError::DuplicateRank(w[0].0));
        }
        Self::new(sorted.into_iter().map(|(_, s)| s).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn require_contrast(&self) -> Result<()> {
        if self.0.len() < 2 {
            Err(ObjectiveError::TooFewCandidates(self.0.len()))
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdaptiveWeights(Vec<f64>);

impl AdaptiveWeights {
    /// Arbitrary weights, e.g. all ones to recover the unweighted loss.
    pub fn from_values(mu: Vec<f64>) -> Self {
        Self(mu)
    }

    pub fn ones(len: usize) -> Self {
        Self(vec![1.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Loss terms of one preference set under the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ft: f64,
    pub l_align: f64,
    pub lambda: f64,
    pub contrast_normalizer: u32,
    pub total: f64,
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)`, computed independently of [`softplus`].
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Mean answer-token log-likelihood under `model`.
pub fn sequence_score(model: &dyn ScoringModel, prompt: &str, answer: &str) -> Result<f64> {
    let lps = model.token_logprobs(prompt, answer)?;
    if lps.is_empty() {
        return Err(ModelError::EmptyAnswer.into());
    }
    Ok(lps.iter().sum::<f64>() / lps.len() as f64)
}

/// Length-normalised negative log-likelihood of the golden answer.
pub fn ft_loss(model: &dyn ScoringModel, prompt: &str, golden_answer: &str) -> Result<f64> {
    Ok(-sequence_score(model, prompt, golden_answer)?)
}

/// Alignment loss with every weight equal to 1, written with `ln σ`.
pub fn align_loss_unweighted(scores: &SequenceScores) -> Result<f64> {
    scores.require_contrast()?;
    let s = scores.as_slice();
    let mut total = 0.0;
    for i in 0..s.len() - 1 {
        let mut term = log_sigmoid(s[i]);
        for &sj in &s[i + 1..] {
            term += log_sigmoid(-sj);
        }
        total -= term;
    }
    Ok(total)
}

pub fn adaptive_weights(scores: &SequenceScores) -> Result<AdaptiveWeights> {
    scores.require_contrast()?;
    let s = scores.as_slice();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = max - min;
    if spread <= DEGENERATE_SPREAD {
        return Ok(AdaptiveWeights::ones(s.len()));
    }
    Ok(AdaptiveWeights(
        s.iter()
            .map(|&x| ((x - min) / spread).clamp(0.0, 1.0))
            .collect(),
    ))
}

/// Weighted alignment loss for explicitly supplied weights.
pub fn align_loss_with_weights(scores: &SequenceScores, mu: &AdaptiveWeights) -> Result<f64> {
    scores.require_contrast()?;
    let s = scores.as_slice();
    if mu.0.len() != s.len() {
        return Err(ObjectiveError::WeightShape {
            expected: s.len(),
            got: mu.0.len(),
        });
    }
    let mut total = 0.0;
    for i in 0..s.len() - 1 {
        let mut term = softplus(-s[i]);
        for &sj in &s[i + 1..] {
            term += softplus(sj);
        }
        total += mu.0[i] * term;
    }
    Ok(total)
}

pub fn align_loss(scores: &SequenceScores) -> Result<f64> {
    align_loss_with_weights(scores, &adaptive_weights(scores)?)
}

/// `∂L_align/∂S` with the supplied weights held constant.
pub fn align_loss_gradient_with_weights(
    scores: &SequenceScores,
    mu: &AdaptiveWeights,
) -> Result<Vec<f64>> {
    scores.require_contrast()?;
    let s = scores.as_slice();
    if mu.0.len() != s.len() {
        return Err(ObjectiveError::WeightShape {
            expected: s.len(),
            got: mu.0.len(),
        });
    }
    let l = s.len();
    let mut grad = vec![0.0; l];
    // Running sum of μ over the candidates ranked above the current one.
    let mut mu_above = 0.0;
    for i in 0..l {
        if i < l - 1 {
            grad[i] -= mu.0[i] * sigmoid(-s[i]);
        }
        grad[i] += sigmoid(s[i]) * mu_above;
        if i < l - 1 {
            mu_above += mu.0[i];
        }
    }
    Ok(grad)
}

/// `∂L_align/∂S` with `μ` computed from `scores` and then frozen.
pub fn align_loss_gradient(scores: &SequenceScores) -> Result<Vec<f64>> {
    align_loss_gradient_with_weights(scores, &adaptive_weights(scores)?)
}

/// Hinge baseline `Σ_{i<j} max(0, margin - S_i + S_j)`.
pub fn margin_rank_loss(scores: &SequenceScores, margin: f64) -> Result<f64> {
    scores.require_contrast()?;
    if !(margin >= 0.0) || !margin.is_finite() {
        return Err(ObjectiveError::InvalidMargin(margin));
    }
    let s = scores.as_slice();
    let mut total = 0.0;
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            total += (margin - s[i] + s[j]).max(0.0);
        }
    }
    Ok(total)
}

/// Gradient of [`margin_rank_loss`]. At a hinge's kink the inactive side
/// (zero) is used.
pub fn margin_rank_gradient(scores: &SequenceScores, margin: f64) -> Result<Vec<f64>> {
    scores.require_contrast()?;
    if !(margin >= 0.0) || !margin.is_finite() {
        return Err(ObjectiveError::InvalidMargin(margin));
    }
    let s = scores.as_slice();
    let mut grad = vec![0.0; s.len()];
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            if margin - s[i] + s[j] > 0.0 {
                grad[i] -= 1.0;
                grad[j] += 1.0;
            }
        }
    }
    Ok(grad)
}

pub fn validate_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(ObjectiveError::InvalidLambda(lambda))
    }
}

/// `L_ft + λ/(ℓ-1) · L_align` for one preference set.
pub fn combined_loss(l_ft: f64, scores: &SequenceScores, lambda: f64) -> Result<LossBreakdown> {
    validate_lambda(lambda)?;
    let l_align = align_loss(scores)?;
    let normalizer = (scores.len() - 1) as u32;
    Ok(LossBreakdown {
        l_ft,
        l_align,
        lambda,
        contrast_normalizer: normalizer,
        total: l_ft + (lambda / f64::from(normalizer)) * l_align,
    })
}
