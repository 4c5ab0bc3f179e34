use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed::rng_from_seed;
use crate::{Error, Result};

/// Longest answer greedy decoding will emit before giving up on the end token.
pub const MAX_ANSWER_TOKENS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Token that terminates a decoded answer.
    pub end_token: u32,
    pub seed: u64,
}

/// Mean-of-embeddings encoder, one tanh layer, linear readout.
///
/// `q = mean(E[tokens])`, `hidden = tanh(W1 q + b1)`, `logits = W2 hidden + b2`.
/// `hidden` is the representation the coreset stage works on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxModel {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub end_token: u32,
    pub rng_seed: u64,
    /// V x e
    pub embed: Array2<f64>,
    /// d x e
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// V x d
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Output of [`SandboxModel::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Per-row intermediates of a batched forward pass, kept for backprop.
pub(crate) struct Activations {
    pub q: Array2<f64>,
    pub h: Array2<f64>,
    pub logits: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub embed: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl SandboxModel {
    /// Gaussian init: embeddings N(0, 1), weights scaled by fan-in, zero biases.
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        check_config(cfg)?;
        let mut rng = rng_from_seed(cfg.seed);
        let mut gauss = |rows: usize, cols: usize, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            Array2::from_shape_simple_fn((rows, cols), || dist.sample(&mut rng))
        };
        let (v, e, d) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim);
        let embed = gauss(v, e, 1.0);
        let w1 = gauss(d, e, 1.0 / (e as f64).sqrt());
        let w2 = gauss(v, d, 1.0 / (d as f64).sqrt());
        Ok(SandboxModel {
            vocab_size: v,
            embed_dim: e,
            hidden_dim: d,
            end_token: cfg.end_token,
            rng_seed: cfg.seed,
            embed,
            w1,
            b1: Array1::zeros(d),
            w2,
            b2: Array1::zeros(v),
        })
    }

    /// All parameters zero.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        check_config(cfg)?;
        let (v, e, d) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim);
        Ok(SandboxModel {
            vocab_size: v,
            embed_dim: e,
            hidden_dim: d,
            end_token: cfg.end_token,
            rng_seed: cfg.seed,
            embed: Array2::zeros((v, e)),
            w1: Array2::zeros((d, e)),
            b1: Array1::zeros(d),
            w2: Array2::zeros((v, d)),
            b2: Array1::zeros(v),
        })
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            end_token: self.end_token,
            seed: self.rng_seed,
        }
    }

    pub fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            Some(&id) => Err(Error::OutOfVocabulary {
                id,
                vocab_size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.embed.iter().all(|v| v.is_finite())
            && self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }

    /// Mean embedding of each context; an empty context encodes to zero.
    pub(crate) fn encode<C: AsRef<[u32]>>(&self, contexts: &[C]) -> Result<Array2<f64>> {
        let mut q = Array2::zeros((contexts.len(), self.embed_dim));
        for (i, ctx) in contexts.iter().enumerate() {
            let ctx = ctx.as_ref();
            self.check_tokens(ctx)?;
            if ctx.is_empty() {
                continue;
            }
            let mut row = q.row_mut(i);
            for &t in ctx {
                row += &self.embed.row(t as usize);
            }
            row /= ctx.len() as f64;
        }
        Ok(q)
    }

    pub(crate) fn hidden_from_encoding(&self, q: &Array2<f64>) -> Array2<f64> {
        let mut h = q.dot(&self.w1.t());
        h += &self.b1;
        h.mapv_inplace(f64::tanh);
        h
    }

    pub(crate) fn activations<C: AsRef<[u32]>>(&self, contexts: &[C]) -> Result<Activations> {
        let q = self.encode(contexts)?;
        let h = self.hidden_from_encoding(&q);
        let mut logits = h.dot(&self.w2.t());
        logits += &self.b2;
        Ok(Activations { q, h, logits })
    }

    /// Logits for the next answer token after `question ++ answer_prefix`,
    /// plus the hidden activation.
    pub fn forward(&self, question: &[u32], answer_prefix: &[u32]) -> Result<Forward> {
        let ctx: Vec<u32> = question.iter().chain(answer_prefix).copied().collect();
        let act = self.activations(&[ctx])?;
        Ok(Forward {
            logits: act.logits.row(0).to_vec(),
            hidden: act.h.row(0).to_vec(),
        })
    }

    /// Hidden activation for each question (no answer prefix).
    pub fn hidden_batch<C: AsRef<[u32]>>(&self, questions: &[C]) -> Result<Array2<f64>> {
        let q = self.encode(questions)?;
        Ok(self.hidden_from_encoding(&q))
    }

    /// Greedy decoding, batched: each row stops at the end token or after
    /// [`MAX_ANSWER_TOKENS`] tokens. The end token itself is not returned.
    pub fn decode_batch<C: AsRef<[u32]>>(&self, questions: &[C]) -> Result<Vec<Vec<u32>>> {
        let mut out: Vec<Vec<u32>> = vec![Vec::new(); questions.len()];
        let mut active: Vec<usize> = (0..questions.len()).collect();
        for _ in 0..MAX_ANSWER_TOKENS {
            if active.is_empty() {
                break;
            }
            let contexts: Vec<Vec<u32>> = active
                .iter()
                .map(|&i| {
                    questions[i]
                        .as_ref()
                        .iter()
                        .chain(&out[i])
                        .copied()
                        .collect()
                })
                .collect();
            let act = self.activations(&contexts)?;
            let mut still = Vec::with_capacity(active.len());
            for (row, &i) in act.logits.outer_iter().zip(&active) {
                let next = argmax(row);
                if next == self.end_token {
                    continue;
                }
                out[i].push(next);
                still.push(i);
            }
            active = still;
        }
        Ok(out)
    }

    pub fn greedy_decode(&self, question: &[u32]) -> Result<Vec<u32>> {
        Ok(self.decode_batch(&[question])?.pop().expect("one row"))
    }

    /// Log-probability of each label given its context.
    pub fn label_log_probs<C: AsRef<[u32]>>(
        &self,
        contexts: &[C],
        labels: &[u32],
    ) -> Result<Vec<f64>> {
        self.check_tokens(labels)?;
        let act = self.activations(contexts)?;
        Ok(act
            .logits
            .outer_iter()
            .zip(labels)
            .map(|(row, &y)| log_softmax_at(row, y as usize))
            .collect())
    }

    /// Backprop `dlogits` (N x V) through a batch computed by [`Self::activations`].
    pub(crate) fn backward<C: AsRef<[u32]>>(
        &self,
        contexts: &[C],
        act: &Activations,
        dlogits: &Array2<f64>,
    ) -> Grads {
        let w2 = dlogits.t().dot(&act.h);
        let b2 = dlogits.sum_axis(Axis(0));
        let mut dpre = dlogits.dot(&self.w2);
        dpre.zip_mut_with(&act.h, |g, &h| *g *= 1.0 - h * h);
        let w1 = dpre.t().dot(&act.q);
        let b1 = dpre.sum_axis(Axis(0));
        let dq = dpre.dot(&self.w1);

        let mut embed = Array2::zeros((self.vocab_size, self.embed_dim));
        for (ctx, g) in contexts.iter().zip(dq.outer_iter()) {
            let ctx = ctx.as_ref();
            if ctx.is_empty() {
                continue;
            }
            let scale = 1.0 / ctx.len() as f64;
            for &t in ctx {
                embed.row_mut(t as usize).scaled_add(scale, &g);
            }
        }
        Grads {
            embed,
            w1,
            b1,
            w2,
            b2,
        }
    }

    /// `params -= lr * grads`.
    pub fn apply(&mut self, grads: &Grads, lr: f64) {
        self.embed.scaled_add(-lr, &grads.embed);
        self.w1.scaled_add(-lr, &grads.w1);
        self.b1.scaled_add(-lr, &grads.b1);
        self.w2.scaled_add(-lr, &grads.w2);
        self.b2.scaled_add(-lr, &grads.b2);
    }

    /// Flat views of every parameter, in a fixed order.
    pub fn param_slices_mut(&mut self) -> [(&'static str, &mut [f64]); 5] {
        [
            ("embed", self.embed.as_slice_mut().expect("standard layout")),
            ("w1", self.w1.as_slice_mut().expect("standard layout")),
            ("b1", self.b1.as_slice_mut().expect("standard layout")),
            ("w2", self.w2.as_slice_mut().expect("standard layout")),
            ("b2", self.b2.as_slice_mut().expect("standard layout")),
        ]
    }
}

impl Grads {
    pub fn slices(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("embed", self.embed.as_slice().expect("standard layout")),
            ("w1", self.w1.as_slice().expect("standard layout")),
            ("b1", self.b1.as_slice().expect("standard layout")),
            ("w2", self.w2.as_slice().expect("standard layout")),
            ("b2", self.b2.as_slice().expect("standard layout")),
        ]
    }
}

fn check_config(cfg: &ModelConfig) -> Result<()> {
    if cfg.vocab_size == 0 || cfg.embed_dim == 0 || cfg.hidden_dim == 0 {
        return Err(Error::invalid("model dimensions must be positive"));
    }
    if cfg.end_token as usize >= cfg.vocab_size {
        return Err(Error::OutOfVocabulary {
            id: cfg.end_token,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

/// First index of the maximum; ties go to the lower token id.
pub(crate) fn argmax(row: ArrayView1<f64>) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

pub(crate) fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn log_softmax_at(row: ArrayView1<f64>, index: usize) -> f64 {
    row[index] - log_sum_exp(row)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let view = ArrayView1::from(logits);
    let lse = log_sum_exp(view);
    logits.iter().map(|&v| (v - lse).exp()).collect()
}

/// Row-wise softmax in place.
pub(crate) fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.outer_iter_mut() {
        let lse = log_sum_exp(row.view());
        row.mapv_inplace(|v| (v - lse).exp());
    }
}
