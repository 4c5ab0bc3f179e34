use upcore::datastore::{Dataset, Record, Role};
use upcore::sandbox::{
    answer_with_end, exact_match_accuracy, grad_ascent_step, loss_and_grad, loss_only, npo_step,
    pretrain, refusal_step, run_unlearning, sequence_log_probs, softmax, ModelConfig, Objective,
    PretrainConfig, SandboxModel, Sequence, Term, TrainConfig, UnlearnData,
};

mod common;
use common::{max_relative_error, numeric_grad};

fn tiny() -> SandboxModel {
    let mut m = SandboxModel::new(&ModelConfig {
        vocab_size: 5,
        embed_dim: 3,
        hidden_dim: 4,
        end_token: 0,
        seed: 11,
    })
    .unwrap();
    m.b1.iter_mut()
        .enumerate()
        .for_each(|(i, b)| *b = 0.1 * i as f64 - 0.15);
    m.b2.iter_mut()
        .enumerate()
        .for_each(|(i, b)| *b = 0.05 * i as f64);
    m
}

fn record(id: &str, q: &[u32], a: &[u32], role: Role) -> Record {
    Record {
        id: id.into(),
        question_text: String::new(),
        answer_text: String::new(),
        question: q.to_vec(),
        answer: a.to_vec(),
        role,
        hidden: None,
    }
}

fn tiny_sets() -> (Dataset, Dataset) {
    let forget = Dataset::new(
        vec![
            record("f1", &[1, 2], &[3], Role::Forget),
            record("f2", &[2, 4], &[1, 3], Role::Forget),
        ],
        "forget",
    )
    .unwrap();
    let retain = Dataset::new(
        vec![
            record("r1", &[3, 1], &[2], Role::Retain),
            record("r2", &[4], &[4, 2], Role::Retain),
        ],
        "retain",
    )
    .unwrap();
    (forget, retain)
}

fn check_objective(objective: Objective) {
    let model = tiny();
    let (forget, retain) = tiny_sets();
    let cfg = TrainConfig {
        retain_weight: 0.7,
        npo_beta: 0.5,
        refusal_token_ids: vec![4],
        ..TrainConfig::default()
    };
    // a reference away from the model puts NPO's sigmoid off its midpoint
    let mut reference = model.clone();
    reference.b2[3] += 0.8;
    let data = UnlearnData::new(&model, &reference, &forget, &retain, &cfg).unwrap();
    let (_, analytic) = data.loss_and_grad(&model, objective, &cfg).unwrap();
    let numeric = numeric_grad(&model, 1e-5, |m| {
        data.loss_and_grad(m, objective, &cfg).unwrap().0
    });
    for ((name, a), (_, n)) in analytic.slices().iter().zip(numeric.slices()) {
        let err = max_relative_error(a, n);
        assert!(err <= 1e-4, "{objective:?} {name}: relative error {err:e}");
    }
}

#[test]
fn gradient_ascent_matches_finite_differences() {
    check_objective(Objective::GradientAscent);
}

#[test]
fn refusal_matches_finite_differences() {
    check_objective(Objective::Refusal);
}

#[test]
fn npo_matches_finite_differences() {
    check_objective(Objective::Npo);
}

#[test]
fn plain_cross_entropy_matches_finite_differences() {
    let model = tiny();
    let seqs = vec![
        Sequence::new(vec![1, 1, 2], vec![4, 0]),
        Sequence::new(vec![], vec![2]),
    ];
    let terms = [Term::CrossEntropy {
        seqs: &seqs,
        coef: 1.3,
    }];
    let (_, analytic) = loss_and_grad(&model, &terms).unwrap();
    let numeric = numeric_grad(&model, 1e-5, |m| loss_only(m, &terms).unwrap());
    for ((name, a), (_, n)) in analytic.slices().iter().zip(numeric.slices()) {
        assert!(max_relative_error(a, n) <= 1e-4, "{name}");
    }
}

#[test]
fn softmax_of_logits_is_a_distribution() {
    let model = tiny();
    let f = model.forward(&[1, 2, 3], &[4]).unwrap();
    let p = softmax(&f.logits);
    assert_eq!(p.len(), 5);
    assert!(p.iter().all(|&x| x > 0.0));
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

fn forget_log_prob(model: &SandboxModel, forget: &Dataset) -> f64 {
    let seqs: Vec<Sequence> = forget
        .records()
        .iter()
        .map(|r| Sequence::new(r.question.clone(), r.answer.clone()))
        .collect();
    sequence_log_probs(model, &seqs).unwrap().iter().sum()
}

#[test]
fn ascent_lowers_and_descent_raises_forget_likelihood() {
    let model = tiny();
    let (forget, _) = tiny_sets();
    let empty = Dataset::empty("retain");
    let cfg = TrainConfig {
        learning_rate: 0.05,
        refusal_token_ids: vec![4],
        ..TrainConfig::default()
    };
    let before = forget_log_prob(&model, &forget);
    let after_ga = forget_log_prob(
        &grad_ascent_step(&model, &forget, &empty, &cfg).unwrap(),
        &forget,
    );
    assert!(after_ga < before);

    // refusal descends on the refusal answer, so its likelihood rises
    let refusal = Dataset::new(
        forget
            .records()
            .iter()
            .map(|r| record(&r.id, &r.question, &[4, 0], Role::Forget))
            .collect(),
        "refusal",
    )
    .unwrap();
    let before = forget_log_prob(&model, &refusal);
    let after = forget_log_prob(
        &refusal_step(&model, &forget, &empty, &cfg).unwrap(),
        &refusal,
    );
    assert!(after > before);

    let after_npo = forget_log_prob(
        &npo_step(&model, &model, &forget, &empty, &cfg).unwrap(),
        &forget,
    );
    assert!(after_npo < forget_log_prob(&model, &forget));
}

#[test]
fn npo_reference_stays_frozen() {
    let model = tiny();
    let (forget, retain) = tiny_sets();
    let cfg = TrainConfig {
        learning_rate: 0.1,
        steps_per_epoch: 5,
        epochs: 2,
        checkpoint_every: 5,
        ..TrainConfig::default()
    };
    let reference = model.clone();
    let checkpoints = run_unlearning(&model, Objective::Npo, &forget, &retain, &cfg).unwrap();
    assert_eq!(reference, model);
    assert_eq!(checkpoints[0].model, model);
    assert_ne!(checkpoints.last().unwrap().model, model);

    // a step against a fixed reference does not depend on how far training has run
    let moved = &checkpoints[1].model;
    let a = npo_step(moved, &reference, &forget, &retain, &cfg).unwrap();
    let b = npo_step(moved, &reference.clone(), &forget, &retain, &cfg).unwrap();
    assert_eq!(a, b);
    let c = npo_step(moved, moved, &forget, &retain, &cfg).unwrap();
    assert_ne!(a, c);
}

#[test]
fn checkpoints_follow_schedule() {
    let model = tiny();
    let (forget, retain) = tiny_sets();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        steps_per_epoch: 100,
        epochs: 2,
        checkpoint_every: 50,
        ..TrainConfig::default()
    };
    let checkpoints =
        run_unlearning(&model, Objective::GradientAscent, &forget, &retain, &cfg).unwrap();
    let steps: Vec<usize> = checkpoints.iter().map(|c| c.step).collect();
    assert_eq!(steps, vec![0, 50, 100, 150, 200]);

    let odd = TrainConfig {
        steps_per_epoch: 7,
        epochs: 1,
        checkpoint_every: 5,
        ..cfg
    };
    let steps: Vec<usize> =
        run_unlearning(&model, Objective::GradientAscent, &forget, &retain, &odd)
            .unwrap()
            .iter()
            .map(|c| c.step)
            .collect();
    assert_eq!(steps, vec![0, 5, 7]);
}

#[test]
fn unlearning_is_deterministic() {
    let model = tiny();
    let (forget, retain) = tiny_sets();
    let cfg = TrainConfig {
        steps_per_epoch: 10,
        epochs: 1,
        ..TrainConfig::default()
    };
    let a = run_unlearning(&model, Objective::GradientAscent, &forget, &retain, &cfg).unwrap();
    let b = run_unlearning(&model, Objective::GradientAscent, &forget, &retain, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn degenerate_runs_are_rejected() {
    let model = tiny();
    let (forget, retain) = tiny_sets();
    let cfg = TrainConfig::default();
    let empty = Dataset::empty("coreset");
    assert!(run_unlearning(&model, Objective::GradientAscent, &empty, &retain, &cfg).is_err());
    assert!(run_unlearning(&model, Objective::Refusal, &forget, &retain, &cfg).is_err());
    let bad = TrainConfig {
        learning_rate: 0.0,
        ..cfg
    };
    assert!(run_unlearning(&model, Objective::GradientAscent, &forget, &retain, &bad).is_err());
}

/// 50 facts: five question tokens each mapping to one answer token.
fn fact_table() -> Dataset {
    let records = (0..50u32)
        .map(|i| {
            let (s, r) = (10 + i / 5, 30 + i % 5);
            let a = 40 + (i * 7 + i / 5) % 20;
            record(&format!("k{i:02}"), &[s, r], &[a], Role::Retain)
        })
        .collect();
    Dataset::new(records, "facts").unwrap()
}

#[test]
fn pretraining_memorizes_fifty_facts() {
    let facts = fact_table();
    let init = SandboxModel::new(&ModelConfig {
        vocab_size: 64,
        embed_dim: 16,
        hidden_dim: 32,
        end_token: 0,
        seed: 5,
    })
    .unwrap();
    let (model, report) = pretrain(&init, &facts, &PretrainConfig::default()).unwrap();
    assert!(report.steps <= 5000);
    assert!(report.accuracy >= 0.99, "{report:?}");
    assert_eq!(
        exact_match_accuracy(&model, &facts).unwrap(),
        report.accuracy
    );
}

#[test]
fn refusal_training_converges_to_refusal_answer() {
    let facts = fact_table();
    let init = SandboxModel::new(&ModelConfig {
        vocab_size: 64,
        embed_dim: 16,
        hidden_dim: 32,
        end_token: 0,
        seed: 5,
    })
    .unwrap();
    let (model, _) = pretrain(&init, &facts, &PretrainConfig::default()).unwrap();
    let forget = facts.subset(&facts.ids()[..10]);
    let retain = facts.subset(&facts.ids()[10..]);
    let cfg = TrainConfig {
        learning_rate: 0.5,
        steps_per_epoch: 100,
        epochs: 2,
        retain_weight: 1.0,
        refusal_token_ids: vec![1],
        checkpoint_every: 50,
        ..TrainConfig::default()
    };
    let last = run_unlearning(&model, Objective::Refusal, &forget, &retain, &cfg)
        .unwrap()
        .pop()
        .unwrap()
        .model;
    for r in forget.records() {
        assert_eq!(last.greedy_decode(&r.question).unwrap(), vec![1]);
    }
    assert!(exact_match_accuracy(&last, &retain).unwrap() >= 0.9);
}

#[test]
fn descent_sequences_end_with_end_token() {
    let model = tiny();
    let (forget, _) = tiny_sets();
    let seqs = answer_with_end(&model, &forget);
    assert!(seqs.iter().all(|s| s.target.last() == Some(&0)));
}
