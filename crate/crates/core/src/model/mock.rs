use std::collections::HashMap;

use super::{ModelError, Result, ScoringModel, TrainableModel};

/// Deterministic fixture model backed by lookup tables.
///
/// Answers are split on whitespace. Lookup order for a `(prompt, answer)`
/// pair: a whole-answer entry, then per-position entries, then the fallback.
/// It has no parameters, so its gradients are always zero.
#[derive(Debug, Clone, Default)]
pub struct MockModel {
    per_answer: HashMap<(String, String), Vec<f64>>,
    per_position: HashMap<(String, usize), f64>,
    fallback: Option<f64>,
}

fn check(lp: f64) -> Result<f64> {
    if lp.is_finite() && lp <= 0.0 {
        Ok(lp)
    } else {
        Err(ModelError::InvalidLogProb(lp))
    }
}

impl MockModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every token has probability `1 / vocab_size`.
    pub fn uniform(vocab_size: usize) -> Self {
        Self {
            fallback: Some((1.0 / vocab_size as f64).ln()),
            ..Self::default()
        }
    }

    /// Every token has probability 1.
    pub fn certain() -> Self {
        Self {
            fallback: Some(0.0),
            ..Self::default()
        }
    }

    pub fn with_fallback(mut self, logprob: f64) -> Result<Self> {
        self.fallback = Some(check(logprob)?);
        Ok(self)
    }

    pub fn with_position(
        mut self,
        prompt: impl Into<String>,
        position: usize,
        logprob: f64,
    ) -> Result<Self> {
        self.per_position
            .insert((prompt.into(), position), check(logprob)?);
        Ok(self)
    }

    pub fn with_answer(
        mut self,
        prompt: impl Into<String>,
        answer: impl Into<String>,
        logprobs: Vec<f64>,
    ) -> Result<Self> {
        for lp in &logprobs {
            check(*lp)?;
        }
        self.per_answer
            .insert((prompt.into(), answer.into()), logprobs);
        Ok(self)
    }

    /// Registers an answer whose every token has log-probability `score`,
    /// so its sequence score is exactly `score`.
    pub fn with_answer_score(
        self,
        prompt: impl Into<String>,
        answer: impl Into<String>,
        score: f64,
    ) -> Result<Self> {
        let answer = answer.into();
        let n = answer.split_whitespace().count();
        self.with_answer(prompt, answer, vec![score; n])
    }
}

impl ScoringModel for MockModel {
    fn token_logprobs(&self, prompt: &str, answer: &str) -> Result<Vec<f64>> {
        let n = answer.split_whitespace().count();
        if n == 0 {
            return Err(ModelError::EmptyAnswer);
        }
        if let Some(lps) = self
            .per_answer
            .get(&(prompt.to_string(), answer.to_string()))
        {
            if lps.len() != n {
                return Err(ModelError::LengthMismatch {
                    prompt: prompt.to_string(),
                    expected: n,
                    got: lps.len(),
                });
            }
            return Ok(lps.clone());
        }
        (0..n)
            .map(|j| {
                self.per_position
                    .get(&(prompt.to_string(), j))
                    .copied()
                    .or(self.fallback)
                    .ok_or_else(|| ModelError::MissingEntry {
                        prompt: prompt.to_string(),
                        position: j,
                    })
            })
            .collect()
    }
}

impl TrainableModel for MockModel {
    fn parameters(&self) -> &[f64] {
        &[]
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut []
    }

    fn accumulate_score_gradient(
        &self,
        prompt: &str,
        answer: &str,
        _coeff: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        if !grad.is_empty() {
            return Err(ModelError::GradientShape {
                expected: 0,
                got: grad.len(),
            });
        }
        let lps = self.token_logprobs(prompt, answer)?;
        Ok(lps.iter().sum::<f64>() / lps.len() as f64)
    }
}
