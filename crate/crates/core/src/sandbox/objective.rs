//! Loss terms and their analytic gradients.
//!
//! Every term is a weighted sum of per-position token log-likelihoods, so the
//! gradient with respect to a position's logits is always
//! `weight * (softmax - onehot(label))`. Only the weights differ:
//!
//! | term                 | loss                                   | weight per position      |
//! |----------------------|----------------------------------------|--------------------------|
//! | cross-entropy x c    | `c * mean_ex sum_t -log p`             | `c / M`                  |
//! | NPO                  | `(2/b) mean_ex log(1 + (pi/pi_ref)^b)` | `(2/M) sigmoid(b * (log pi - log pi_ref))` |

use serde::{Deserialize, Serialize};

use super::model::{log_sum_exp, softmax_rows, Grads, SandboxModel};
use crate::Result;

/// A question and the token sequence the model is scored on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub question: Vec<u32>,
    pub target: Vec<u32>,
}

impl Sequence {
    pub fn new(question: Vec<u32>, target: Vec<u32>) -> Self {
        Sequence { question, target }
    }

    /// Teacher-forced (context, label) pairs.
    fn positions(&self) -> impl Iterator<Item = (Vec<u32>, u32)> + '_ {
        (0..self.target.len()).map(move |k| {
            let ctx = self
                .question
                .iter()
                .chain(&self.target[..k])
                .copied()
                .collect();
            (ctx, self.target[k])
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[serde(rename = "ga")]
    GradientAscent,
    Refusal,
    Npo,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::GradientAscent => "ga",
            Objective::Refusal => "refusal",
            Objective::Npo => "npo",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ga" => Ok(Objective::GradientAscent),
            "refusal" => Ok(Objective::Refusal),
            "npo" => Ok(Objective::Npo),
            other => Err(crate::Error::invalid(format!(
                "unknown unlearning method {other:?}"
            ))),
        }
    }
}

/// One additive piece of a loss.
#[derive(Debug, Clone)]
pub enum Term<'a> {
    /// `coef * mean over sequences of summed token cross-entropy`.
    CrossEntropy { seqs: &'a [Sequence], coef: f64 },
    /// NPO against fixed reference sequence log-likelihoods (one per sequence).
    Npo {
        seqs: &'a [Sequence],
        beta: f64,
        ref_log_probs: &'a [f64],
    },
}

impl Term<'_> {
    fn seqs(&self) -> &[Sequence] {
        match self {
            Term::CrossEntropy { seqs, .. } | Term::Npo { seqs, .. } => seqs,
        }
    }
}

/// Loss value and gradient of the sum of `terms`.
pub fn loss_and_grad(model: &SandboxModel, terms: &[Term<'_>]) -> Result<(f64, Grads)> {
    let mut contexts = Vec::new();
    let mut labels = Vec::new();
    // (term, sequence) for each position
    let mut owner = Vec::new();
    for (ti, term) in terms.iter().enumerate() {
        for (si, seq) in term.seqs().iter().enumerate() {
            for (ctx, y) in seq.positions() {
                contexts.push(ctx);
                labels.push(y);
                owner.push((ti, si));
            }
        }
    }
    model.check_tokens(&labels)?;
    let act = model.activations(&contexts)?;
    let log_probs: Vec<f64> = act
        .logits
        .outer_iter()
        .zip(&labels)
        .map(|(row, &y)| row[y as usize] - log_sum_exp(row))
        .collect();

    // summed log-likelihood per (term, sequence)
    let mut seq_ll: Vec<Vec<f64>> = terms.iter().map(|t| vec![0.0; t.seqs().len()]).collect();
    for (&(ti, si), lp) in owner.iter().zip(&log_probs) {
        seq_ll[ti][si] += lp;
    }

    let mut loss = 0.0;
    let mut seq_weight: Vec<Vec<f64>> = Vec::with_capacity(terms.len());
    for (term, ll) in terms.iter().zip(&seq_ll) {
        let m = ll.len().max(1) as f64;
        match *term {
            Term::CrossEntropy { coef, .. } => {
                loss += coef * ll.iter().map(|l| -l).sum::<f64>() / m;
                seq_weight.push(vec![coef / m; ll.len()]);
            }
            Term::Npo {
                beta,
                ref_log_probs,
                ..
            } => {
                let mut w = Vec::with_capacity(ll.len());
                for (l, r) in ll.iter().zip(ref_log_probs) {
                    let z = beta * (l - r);
                    loss += 2.0 / beta * softplus(z) / m;
                    // d loss / d ll = 2 sigmoid(z) / m, and d ll / d logits = onehot - softmax
                    w.push(-2.0 / m * sigmoid(z));
                }
                seq_weight.push(w);
            }
        }
    }

    let mut dlogits = act.logits.clone();
    softmax_rows(&mut dlogits);
    for (i, (&(ti, si), &y)) in owner.iter().zip(&labels).enumerate() {
        let w = seq_weight[ti][si];
        let mut row = dlogits.row_mut(i);
        row[y as usize] -= 1.0;
        row *= w;
    }
    let grads = model.backward(&contexts, &act, &dlogits);
    Ok((loss, grads))
}

/// Loss only; used by finite-difference checks and step-size probes.
pub fn loss_only(model: &SandboxModel, terms: &[Term<'_>]) -> Result<f64> {
    Ok(loss_and_grad(model, terms)?.0)
}

/// Summed log-likelihood of each sequence's target.
pub fn sequence_log_probs(model: &SandboxModel, seqs: &[Sequence]) -> Result<Vec<f64>> {
    let mut contexts = Vec::new();
    let mut labels = Vec::new();
    let mut owner = Vec::new();
    for (si, seq) in seqs.iter().enumerate() {
        for (ctx, y) in seq.positions() {
            contexts.push(ctx);
            labels.push(y);
            owner.push(si);
        }
    }
    let lps = model.label_log_probs(&contexts, &labels)?;
    let mut out = vec![0.0; seqs.len()];
    for (si, lp) in owner.into_iter().zip(lps) {
        out[si] += lp;
    }
    Ok(out)
}

/// `log(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
