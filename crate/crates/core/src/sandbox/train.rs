use serde::{Deserialize, Serialize};

use super::model::SandboxModel;
use super::objective::{loss_and_grad, sequence_log_probs, Objective, Sequence, Term};
use crate::datastore::Dataset;
use crate::{Error, Result};

/// Unlearning loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    /// Weight on the retain-set cross-entropy added to every objective.
    pub retain_weight: f64,
    pub npo_beta: f64,
    /// Replacement answer for the refusal objective.
    pub refusal_token_ids: Vec<u32>,
    pub checkpoint_every: usize,
    /// Recorded for provenance; full-batch training draws no randomness.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            steps_per_epoch: 20,
            epochs: 3,
            retain_weight: 0.5,
            npo_beta: 0.1,
            refusal_token_ids: Vec::new(),
            checkpoint_every: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.steps_per_epoch * self.epochs
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::invalid("checkpoint_every must be >= 1"));
        }
        if !(self.retain_weight >= 0.0) {
            return Err(Error::invalid("retain_weight must be >= 0"));
        }
        if !(self.npo_beta > 0.0) {
            return Err(Error::invalid("npo_beta must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    pub target_accuracy: f64,
    /// How often exact-match accuracy is checked.
    pub eval_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            learning_rate: 2.0,
            max_steps: 5000,
            target_accuracy: 0.99,
            eval_every: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: usize,
    pub accuracy: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub model: SandboxModel,
}

/// Answer followed by the end token: what descent objectives train on.
pub fn answer_with_end(model: &SandboxModel, ds: &Dataset) -> Vec<Sequence> {
    ds.records()
        .iter()
        .map(|r| {
            let mut target = r.answer.clone();
            target.push(model.end_token);
            Sequence::new(r.question.clone(), target)
        })
        .collect()
}

/// Answer tokens only: what the forget-side terms are scored on.
pub fn answer_only(ds: &Dataset) -> Vec<Sequence> {
    ds.records()
        .iter()
        .map(|r| Sequence::new(r.question.clone(), r.answer.clone()))
        .collect()
}

/// Fraction of records whose greedy decode equals the answer exactly.
pub fn exact_match_accuracy(model: &SandboxModel, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(1.0);
    }
    let questions: Vec<&[u32]> = ds.records().iter().map(|r| r.question.as_slice()).collect();
    let decoded = model.decode_batch(&questions)?;
    let hits = decoded
        .iter()
        .zip(ds.records())
        .filter(|(d, r)| **d == r.answer)
        .count();
    Ok(hits as f64 / ds.len() as f64)
}

/// Full-batch cross-entropy descent until exact-match accuracy reaches the
/// target or the step cap runs out.
pub fn pretrain(
    model: &SandboxModel,
    facts: &Dataset,
    cfg: &PretrainConfig,
) -> Result<(SandboxModel, PretrainReport)> {
    let mut m = model.clone();
    if facts.is_empty() {
        return Ok((
            m,
            PretrainReport {
                steps: 0,
                accuracy: 1.0,
                loss: 0.0,
            },
        ));
    }
    let seqs = answer_with_end(&m, facts);
    let eval_every = cfg.eval_every.max(1);
    let mut loss = f64::NAN;
    let mut accuracy = 0.0;
    for step in 0..=cfg.max_steps {
        if step % eval_every == 0 || step == cfg.max_steps {
            accuracy = exact_match_accuracy(&m, facts)?;
            if accuracy >= cfg.target_accuracy {
                return Ok((
                    m,
                    PretrainReport {
                        steps: step,
                        accuracy,
                        loss,
                    },
                ));
            }
        }
        if step == cfg.max_steps {
            break;
        }
        let (l, grads) = loss_and_grad(
            &m,
            &[Term::CrossEntropy {
                seqs: &seqs,
                coef: 1.0,
            }],
        )?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        loss = l;
        m.apply(&grads, cfg.learning_rate);
    }
    Err(Error::PretrainDidNotConverge {
        accuracy,
        steps: cfg.max_steps,
    })
}

/// Sequences prepared once per unlearning run.
#[derive(Debug, Clone)]
pub struct UnlearnData {
    forget: Vec<Sequence>,
    refusal: Vec<Sequence>,
    retain: Vec<Sequence>,
    /// Frozen reference log-likelihoods of `forget`, for NPO.
    reference: Vec<f64>,
}

impl UnlearnData {
    pub fn new(
        model: &SandboxModel,
        reference: &SandboxModel,
        forget: &Dataset,
        retain: &Dataset,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let forget_seqs = answer_only(forget);
        let mut refusal_target = cfg.refusal_token_ids.clone();
        refusal_target.push(model.end_token);
        let refusal = forget
            .records()
            .iter()
            .map(|r| Sequence::new(r.question.clone(), refusal_target.clone()))
            .collect();
        let reference = sequence_log_probs(reference, &forget_seqs)?;
        Ok(UnlearnData {
            forget: forget_seqs,
            refusal,
            retain: answer_with_end(model, retain),
            reference,
        })
    }

    fn terms(&self, objective: Objective, cfg: &TrainConfig) -> Vec<Term<'_>> {
        let mut terms = Vec::with_capacity(2);
        if !self.forget.is_empty() {
            terms.push(match objective {
                Objective::GradientAscent => Term::CrossEntropy {
                    seqs: &self.forget,
                    coef: -1.0,
                },
                Objective::Refusal => Term::CrossEntropy {
                    seqs: &self.refusal,
                    coef: 1.0,
                },
                Objective::Npo => Term::Npo {
                    seqs: &self.forget,
                    beta: cfg.npo_beta,
                    ref_log_probs: &self.reference,
                },
            });
        }
        if !self.retain.is_empty() && cfg.retain_weight > 0.0 {
            terms.push(Term::CrossEntropy {
                seqs: &self.retain,
                coef: cfg.retain_weight,
            });
        }
        terms
    }

    /// Loss and gradient of `objective` at `model`.
    pub fn loss_and_grad(
        &self,
        model: &SandboxModel,
        objective: Objective,
        cfg: &TrainConfig,
    ) -> Result<(f64, super::model::Grads)> {
        let terms = self.terms(objective, cfg);
        if terms.is_empty() {
            return Ok((0.0, zero_grads(model)));
        }
        loss_and_grad(model, &terms)
    }
}

fn zero_grads(model: &SandboxModel) -> super::model::Grads {
    super::model::Grads {
        embed: ndarray::Array2::zeros(model.embed.raw_dim()),
        w1: ndarray::Array2::zeros(model.w1.raw_dim()),
        b1: ndarray::Array1::zeros(model.b1.raw_dim()),
        w2: ndarray::Array2::zeros(model.w2.raw_dim()),
        b2: ndarray::Array1::zeros(model.b2.raw_dim()),
    }
}

fn step_with(
    model: &SandboxModel,
    data: &UnlearnData,
    objective: Objective,
    cfg: &TrainConfig,
    step: usize,
) -> Result<SandboxModel> {
    let (loss, grads) = data.loss_and_grad(model, objective, cfg)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    let mut next = model.clone();
    next.apply(&grads, cfg.learning_rate);
    if !next.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    Ok(next)
}

/// One update on `-CE(forget) + retain_weight * CE(retain)`.
pub fn grad_ascent_step(
    model: &SandboxModel,
    forget: &Dataset,
    retain: &Dataset,
    cfg: &TrainConfig,
) -> Result<SandboxModel> {
    let data = UnlearnData::new(model, model, forget, retain, cfg)?;
    step_with(model, &data, Objective::GradientAscent, cfg, 0)
}

/// One update on `CE(forget with refusal answers) + retain_weight * CE(retain)`.
pub fn refusal_step(
    model: &SandboxModel,
    forget: &Dataset,
    retain: &Dataset,
    cfg: &TrainConfig,
) -> Result<SandboxModel> {
    let data = UnlearnData::new(model, model, forget, retain, cfg)?;
    step_with(model, &data, Objective::Refusal, cfg, 0)
}

/// One NPO update against the frozen `reference` model.
pub fn npo_step(
    model: &SandboxModel,
    reference: &SandboxModel,
    forget: &Dataset,
    retain: &Dataset,
    cfg: &TrainConfig,
) -> Result<SandboxModel> {
    let data = UnlearnData::new(model, reference, forget, retain, cfg)?;
    step_with(model, &data, Objective::Npo, cfg, 0)
}

/// Run `epochs * steps_per_epoch` updates, snapshotting step 0, every
/// `checkpoint_every` steps, and the final step.
///
/// The starting model doubles as the frozen NPO reference.
pub fn run_unlearning(
    model: &SandboxModel,
    objective: Objective,
    coreset: &Dataset,
    retain: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<Checkpoint>> {
    cfg.validate()?;
    if coreset.is_empty() && objective != Objective::Refusal {
        return Err(Error::invalid(format!(
            "{} needs a non-empty coreset",
            objective.as_str()
        )));
    }
    if objective == Objective::Refusal && cfg.refusal_token_ids.is_empty() {
        return Err(Error::invalid("refusal needs refusal_token_ids"));
    }
    let data = UnlearnData::new(model, model, coreset, retain, cfg)?;
    let total = cfg.total_steps();
    let mut checkpoints = vec![Checkpoint {
        step: 0,
        model: model.clone(),
    }];
    let mut current = model.clone();
    for step in 1..=total {
        current = step_with(&current, &data, objective, cfg, step)?;
        if step % cfg.checkpoint_every == 0 || step == total {
            checkpoints.push(Checkpoint {
                step,
                model: current.clone(),
            });
        }
    }
    Ok(checkpoints)
}

/// Set every record's hidden vector to the model's activation for its question.
pub fn extract_hidden(model: &SandboxModel, ds: &Dataset) -> Result<Dataset> {
    if ds.is_empty() {
        return Ok(ds.clone());
    }
    let questions: Vec<&[u32]> = ds.records().iter().map(|r| r.question.as_slice()).collect();
    let hidden = model.hidden_batch(&questions)?;
    ds.with_hidden(hidden.outer_iter().map(|row| row.to_vec()).collect())
}
