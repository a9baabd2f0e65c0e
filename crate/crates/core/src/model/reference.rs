//! Small word-level autoregressive network used for desk-scale training.
//!
//! For answer position `j` the hidden state is
//!
//! ```text
//! h_j = tanh(E_prev1[a_{j-1}] + E_prev2[a_{j-2}] + mean_t E_ctx[p_t] + b_h)
//! P(a_j | ·) = softmax(W h_j + b_o)
//! ```
//!
//! where `p_t` are the prompt tokens. Missing history positions use `<bos>`.
//! Every answer ends with `<eos>`, which counts as an answer token.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result, ScoringModel, TrainableModel};
use crate::text::word_tokens;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

const UNK_ID: usize = 0;
const BOS_ID: usize = 1;
const EOS_ID: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Specials first, then every word token of `texts` in sorted order.
    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(word_tokens).collect();
        let tokens = [UNK, BOS, EOS]
            .into_iter()
            .map(str::to_string)
            .chain(
                words
                    .into_iter()
                    .filter(|w| ![UNK, BOS, EOS].contains(&w.as_str())),
            )
            .collect::<Vec<_>>();
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        word_tokens(text).iter().map(|t| self.id(t)).collect()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModelConfig {
    pub embed_dim: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ReferenceModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

/// Offsets of each parameter block inside the flat buffer.
#[derive(Debug, Clone, Copy)]
struct Layout {
    vocab: usize,
    dim: usize,
    prev1: usize,
    prev2: usize,
    ctx: usize,
    b_h: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl Layout {
    fn new(vocab: usize, dim: usize) -> Self {
        let vd = vocab * dim;
        let prev1 = 0;
        let prev2 = prev1 + vd;
        let ctx = prev2 + vd;
        let b_h = ctx + vd;
        let w_out = b_h + dim;
        let b_out = w_out + vd;
        Self {
            vocab,
            dim,
            prev1,
            prev2,
            ctx,
            b_h,
            w_out,
            b_out,
            total: b_out + vocab,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    config: ReferenceModelConfig,
    vocab: Vocabulary,
    params: Vec<f64>,
}

/// Forward activations of one answer position, kept for backprop.
struct Step {
    prev1: usize,
    prev2: usize,
    target: usize,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    logprob: f64,
}

impl ReferenceModel {
    pub fn new(vocab: Vocabulary, config: ReferenceModelConfig) -> Self {
        assert!(config.embed_dim > 0, "embed_dim must be positive");
        let layout = Layout::new(vocab.len(), config.embed_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params: Vec<f64> = (0..layout.total)
            .map(|_| rng.gen_range(-config.init_scale..config.init_scale))
            .collect();
        params[layout.b_h..layout.b_h + layout.dim].fill(0.0);
        params[layout.b_out..layout.b_out + layout.vocab].fill(0.0);
        Self {
            config,
            vocab,
            params,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &ReferenceModelConfig {
        &self.config
    }

    pub fn num_parameters(&self) -> usize {
        self.params.len()
    }

    /// Checks the parameter buffer against vocabulary and dimension, e.g.
    /// after deserialising a checkpoint.
    pub fn validate(&self) -> Result<()> {
        let want = Layout::new(self.vocab.len(), self.config.embed_dim).total;
        if self.params.len() != want {
            return Err(ModelError::Checkpoint(format!(
                "expected {want} parameters, found {}",
                self.params.len()
            )));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        Layout::new(self.vocab.len(), self.config.embed_dim)
    }

    fn answer_ids(&self, answer: &str) -> Result<Vec<usize>> {
        let mut ids = self.vocab.encode(answer);
        if ids.is_empty() {
            return Err(ModelError::EmptyAnswer);
        }
        ids.push(EOS_ID);
        Ok(ids)
    }

    fn context(&self, prompt_ids: &[usize]) -> Vec<f64> {
        let l = self.layout();
        let mut ctx = vec![0.0; l.dim];
        if prompt_ids.is_empty() {
            return ctx;
        }
        for &t in prompt_ids {
            let row = &self.params[l.ctx + t * l.dim..l.ctx + (t + 1) * l.dim];
            ctx.iter_mut().zip(row).for_each(|(c, r)| *c += r);
        }
        let n = prompt_ids.len() as f64;
        ctx.iter_mut().for_each(|c| *c /= n);
        ctx
    }

    fn step(&self, ctx: &[f64], prev1: usize, prev2: usize) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout();
        let p = &self.params;
        let hidden: Vec<f64> = (0..l.dim)
            .map(|k| {
                (p[l.prev1 + prev1 * l.dim + k]
                    + p[l.prev2 + prev2 * l.dim + k]
                    + ctx[k]
                    + p[l.b_h + k])
                    .tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..l.vocab)
            .map(|v| {
                let row = &p[l.w_out + v * l.dim..l.w_out + (v + 1) * l.dim];
                row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + p[l.b_out + v]
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|x| (x - max).exp()).sum();
        let log_z = max + z.ln();
        let logp: Vec<f64> = logits.iter().map(|x| x - log_z).collect();
        (hidden, logp)
    }

    fn forward(&self, prompt: &str, answer: &str) -> Result<(Vec<usize>, Vec<Step>)> {
        let prompt_ids = self.vocab.encode(prompt);
        let answer_ids = self.answer_ids(answer)?;
        let ctx = self.context(&prompt_ids);
        let mut steps = Vec::with_capacity(answer_ids.len());
        for (j, &target) in answer_ids.iter().enumerate() {
            let prev1 = if j >= 1 { answer_ids[j - 1] } else { BOS_ID };
            let prev2 = if j >= 2 { answer_ids[j - 2] } else { BOS_ID };
            let (hidden, logp) = self.step(&ctx, prev1, prev2);
            // Clamp tiny positive rounding so entries stay <= 0.
            let logprob = logp[target].min(0.0);
            steps.push(Step {
                prev1,
                prev2,
                target,
                hidden,
                probs: logp.iter().map(|x| x.exp()).collect(),
                logprob,
            });
        }
        Ok((prompt_ids, steps))
    }

    /// Greedy decoding until `<eos>` or `max_tokens`. Special tokens other
    /// than `<eos>` are never emitted.
    pub fn generate_greedy(&self, prompt: &str, max_tokens: usize) -> String {
        let ctx = self.context(&self.vocab.encode(prompt));
        let mut out: Vec<usize> = Vec::new();
        while out.len() < max_tokens {
            let prev1 = out.last().copied().unwrap_or(BOS_ID);
            let prev2 = if out.len() >= 2 {
                out[out.len() - 2]
            } else {
                BOS_ID
            };
            let (_, logp) = self.step(&ctx, prev1, prev2);
            let next = logp
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != UNK_ID && *i != BOS_ID)
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(EOS_ID);
            if next == EOS_ID {
                break;
            }
            out.push(next);
        }
        out.iter()
            .map(|&i| self.vocab.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl ScoringModel for ReferenceModel {
    fn token_logprobs(&self, prompt: &str, answer: &str) -> Result<Vec<f64>> {
        let (_, steps) = self.forward(prompt, answer)?;
        Ok(steps.iter().map(|s| s.logprob).collect())
    }
}

impl TrainableModel for ReferenceModel {
    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn accumulate_score_gradient(
        &self,
        prompt: &str,
        answer: &str,
        coeff: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        let l = self.layout();
        if grad.len() != l.total {
            return Err(ModelError::GradientShape {
                expected: l.total,
                got: grad.len(),
            });
        }
        let (prompt_ids, steps) = self.forward(prompt, answer)?;
        let n = steps.len() as f64;
        let score = steps.iter().map(|s| s.logprob).sum::<f64>() / n;
        let scale = coeff / n;
        let p = &self.params;
        let mut d_ctx = vec![0.0; l.dim];
        let mut d_logits = vec![0.0; l.vocab];
        let mut d_pre = vec![0.0; l.dim];
        for s in &steps {
            // d log p[target] / d logits = onehot(target) - softmax
            for (d, p) in d_logits.iter_mut().zip(&s.probs) {
                *d = -scale * p;
            }
            d_logits[s.target] += scale;

            d_pre.fill(0.0);
            for v in 0..l.vocab {
                let dl = d_logits[v];
                grad[l.b_out + v] += dl;
                let w = l.w_out + v * l.dim;
                for k in 0..l.dim {
                    grad[w + k] += dl * s.hidden[k];
                    d_pre[k] += dl * p[w + k];
                }
            }
            for k in 0..l.dim {
                let d = d_pre[k] * (1.0 - s.hidden[k] * s.hidden[k]);
                grad[l.prev1 + s.prev1 * l.dim + k] += d;
                grad[l.prev2 + s.prev2 * l.dim + k] += d;
                grad[l.b_h + k] += d;
                d_ctx[k] += d;
            }
        }
        if !prompt_ids.is_empty() {
            let inv = 1.0 / prompt_ids.len() as f64;
            for &t in &prompt_ids {
                for k in 0..l.dim {
                    grad[l.ctx + t * l.dim + k] += d_ctx[k] * inv;
                }
            }
        }
        Ok(score)
    }
}
