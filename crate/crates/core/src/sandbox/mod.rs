//! Desk-scale fact model and unlearning objectives.
//!
//! The model is small enough to differentiate by hand, which keeps the whole
//! pipeline deterministic and lets every gradient be checked against finite
//! differences.

mod model;
mod objective;
mod train;
mod vocab;

pub use model::{softmax, Forward, Grads, ModelConfig, SandboxModel, MAX_ANSWER_TOKENS};
pub use objective::{loss_and_grad, loss_only, sequence_log_probs, Objective, Sequence, Term};
pub use train::{
    answer_only, answer_with_end, exact_match_accuracy, extract_hidden, grad_ascent_step, npo_step,
    pretrain, refusal_step, run_unlearning, Checkpoint, PretrainConfig, PretrainReport,
    TrainConfig, UnlearnData,
};
pub use vocab::Vocab;
