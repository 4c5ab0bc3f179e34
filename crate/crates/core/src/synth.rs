//! Synthetic topic corpora over a closed vocabulary.
//!
//! Every question is three words: a domain marker, a subject and a relation.
//! A topic's forget set mostly asks about its own subjects and relations, so
//! those questions cluster together. A per-topic share of "bridging" facts
//! instead asks a topic relation about a retain-set subject under the retain
//! marker, or about another topic's neighborhood subject under that topic's
//! marker: they sit away from the topic cluster in hidden space and share
//! parameters with facts that should survive unlearning.
//! Topics differ in their bridging share, hence in hidden-state variance.
//!
//! Neighborhood facts reuse a topic's marker, relations and answer pool with
//! fresh subjects, so no (question, answer) pair is shared with a forget set.

use rand::seq::{index, IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::datastore::{Dataset, Record, Role};
use crate::pipeline::Corpus;
use crate::sandbox::Vocab;
use crate::seed::labeled_rng;
use crate::{Error, Result};

pub const END_WORD: &str = "<end>";
pub const REFUSAL_WORD: &str = "<refusal>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub topics: usize,
    pub facts_per_topic: usize,
    pub seed: u64,
    pub relations_per_topic: usize,
    pub answers_per_topic: usize,
    pub neighborhood_subjects_per_topic: usize,
    pub retain_subjects: usize,
    pub retain_relations: usize,
    pub retain_answers: usize,
    /// Bridging share of the least heterogeneous topic.
    pub bridge_min: f64,
    /// Bridging share of the most heterogeneous topic.
    pub bridge_max: f64,
    /// Fraction of bridging facts that borrow another topic's neighborhood
    /// subject instead of a retain subject.
    pub neighbor_bridge_share: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            topics: 7,
            facts_per_topic: 50,
            seed: 0,
            relations_per_topic: 5,
            answers_per_topic: 6,
            neighborhood_subjects_per_topic: 2,
            retain_subjects: 20,
            retain_relations: 3,
            retain_answers: 10,
            bridge_min: 0.0,
            bridge_max: 0.3,
            neighbor_bridge_share: 0.34,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.topics == 0 || self.facts_per_topic == 0 {
            return Err(Error::invalid("topics and facts_per_topic must be >= 1"));
        }
        if self.relations_per_topic == 0
            || self.answers_per_topic == 0
            || self.retain_relations == 0
            || self.retain_answers == 0
        {
            return Err(Error::invalid("pool sizes must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.bridge_min)
            || !(0.0..=1.0).contains(&self.bridge_max)
            || self.bridge_min > self.bridge_max
        {
            return Err(Error::invalid(
                "bridge shares must satisfy 0 <= min <= max <= 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.neighbor_bridge_share) {
            return Err(Error::invalid("neighbor_bridge_share must be in [0, 1]"));
        }
        Ok(())
    }

    /// Bridging fact count per topic, before the seeded shuffle.
    fn bridge_counts(&self) -> Vec<usize> {
        let t = self.topics;
        (0..t)
            .map(|i| {
                let share = if t == 1 {
                    self.bridge_min
                } else {
                    self.bridge_min
                        + (self.bridge_max - self.bridge_min) * i as f64 / (t - 1) as f64
                };
                (share * self.facts_per_topic as f64).round() as usize
            })
            .collect()
    }
}

struct Builder {
    vocab: Vocab,
}

impl Builder {
    fn record(&mut self, id: String, question: [&str; 3], answer: &str, role: Role) -> Record {
        let question_ids = question.iter().map(|w| self.vocab.intern(w)).collect();
        Record {
            id,
            question_text: question.join(" "),
            answer_text: answer.to_string(),
            question: question_ids,
            answer: vec![self.vocab.intern(answer)],
            role,
            hidden: None,
        }
    }
}

pub fn topic_name(i: usize) -> String {
    format!("t{i:02}")
}

/// Generate a corpus. Pure function of the config.
pub fn generate(cfg: &SynthConfig) -> Result<(Corpus, Vocab)> {
    cfg.validate()?;
    let mut b = Builder {
        vocab: Vocab::new(),
    };
    let end = b.vocab.intern(END_WORD);
    let refusal = b.vocab.intern(REFUSAL_WORD);

    let mut counts = cfg.bridge_counts();
    counts.shuffle(&mut labeled_rng(cfg.seed, &["synth", "bridge-order"]));
    let max_bridge = counts.iter().copied().max().unwrap_or(0);
    let retain_subjects = cfg.retain_subjects.max(max_bridge).max(1);

    let retain_answers: Vec<String> = (0..cfg.retain_answers).map(|a| format!("r_a{a}")).collect();
    let mut rng = labeled_rng(cfg.seed, &["synth", "retain"]);
    let mut retain = Vec::new();
    for s in 0..retain_subjects {
        for r in 0..cfg.retain_relations {
            let answer = retain_answers.choose(&mut rng).expect("non-empty pool");
            let (subj, rel) = (format!("r_s{s:02}"), format!("r_r{r}"));
            let id = format!("retain-{:03}", retain.len());
            retain.push(b.record(id, ["r_topic", &subj, &rel], answer, Role::Retain));
        }
    }

    let mut topics = Vec::with_capacity(cfg.topics);
    let mut neighborhood = Vec::new();
    for (t, &n_bridge) in counts.iter().enumerate() {
        let name = topic_name(t);
        let mut rng = labeled_rng(cfg.seed, &["synth", "topic", &name]);
        let marker = format!("{name}_topic");
        let relations: Vec<String> = (0..cfg.relations_per_topic)
            .map(|r| format!("{name}_r{r}"))
            .collect();
        let answers: Vec<String> = (0..cfg.answers_per_topic)
            .map(|a| format!("{name}_a{a}"))
            .collect();

        let n_core = cfg.facts_per_topic - n_bridge.min(cfg.facts_per_topic);
        let subjects = n_core.div_ceil(cfg.relations_per_topic);
        let pairs = subjects * cfg.relations_per_topic;
        let mut chosen = index::sample(&mut rng, pairs, n_core).into_vec();
        chosen.sort_unstable();

        let mut records = Vec::with_capacity(cfg.facts_per_topic);
        for p in chosen {
            let (s, r) = (p / cfg.relations_per_topic, p % cfg.relations_per_topic);
            let subj = format!("{name}_s{s:02}");
            let answer = answers.choose(&mut rng).expect("non-empty pool");
            let id = format!("{name}-f{:03}", records.len());
            records.push(b.record(id, [&marker, &subj, &relations[r]], answer, Role::Forget));
        }
        let n_bridge = n_bridge.min(cfg.facts_per_topic);
        // alternate retain-side and neighbor-side bridges; the latter borrow
        // another topic's neighborhood subject under that topic's marker
        let others: Vec<(usize, usize)> = (0..cfg.topics)
            .filter(|&u| u != t)
            .flat_map(|u| (0..cfg.neighborhood_subjects_per_topic).map(move |k| (u, k)))
            .collect();
        let n_neighbor =
            ((n_bridge as f64 * cfg.neighbor_bridge_share).floor() as usize).min(others.len());
        let n_retain = n_bridge - n_neighbor;
        for s in index::sample(&mut rng, retain_subjects, n_retain.min(retain_subjects)) {
            let subj = format!("r_s{s:02}");
            let rel = relations.choose(&mut rng).expect("non-empty pool");
            let answer = answers.choose(&mut rng).expect("non-empty pool");
            let id = format!("{name}-f{:03}", records.len());
            records.push(b.record(id, ["r_topic", &subj, rel], answer, Role::Forget));
        }
        for i in index::sample(&mut rng, others.len(), n_neighbor) {
            let (u, k) = others[i];
            let (other_marker, subj) = (
                format!("{}_topic", topic_name(u)),
                format!("{}_n{k}", topic_name(u)),
            );
            let rel = relations.choose(&mut rng).expect("non-empty pool");
            let answer = answers.choose(&mut rng).expect("non-empty pool");
            let id = format!("{name}-f{:03}", records.len());
            records.push(b.record(id, [&other_marker, &subj, rel], answer, Role::Forget));
        }
        // interleave bridging facts so file order carries no signal
        records.shuffle(&mut rng);
        for (i, r) in records.iter_mut().enumerate() {
            r.id = format!("{name}-f{i:03}");
        }
        topics.push((
            name.clone(),
            Dataset::new(records, format!("synth:{name}"))?,
        ));

        for s in 0..cfg.neighborhood_subjects_per_topic {
            let subj = format!("{name}_n{s}");
            for rel in &relations {
                let answer = answers.choose(&mut rng).expect("non-empty pool");
                let id = format!("{name}-n{:03}", neighborhood.len());
                neighborhood.push(b.record(id, [&marker, &subj, rel], answer, Role::Neighborhood));
            }
        }
    }

    let mut roles = std::collections::BTreeMap::new();
    roles.insert(Role::Retain, Dataset::new(retain, "synth:retain")?);
    if !neighborhood.is_empty() {
        roles.insert(
            Role::Neighborhood,
            Dataset::new(neighborhood, "synth:neighborhood")?,
        );
    }
    let corpus = Corpus {
        topics,
        roles,
        vocab_size: b.vocab.len(),
        end_token: end,
        refusal_tokens: vec![refusal],
    };
    Ok((corpus, b.vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn default_corpus_shape() {
        let (corpus, vocab) = generate(&SynthConfig::default()).unwrap();
        assert_eq!(corpus.topics.len(), 7);
        assert!(corpus.topics.iter().all(|(_, d)| d.len() == 50));
        assert_eq!(corpus.roles[&Role::Retain].len(), 60);
        assert_eq!(corpus.roles[&Role::Neighborhood].len(), 70);
        assert_eq!(corpus.vocab_size, vocab.len());
        assert_eq!(vocab.id(END_WORD), Some(corpus.end_token));
    }

    #[test]
    fn neighborhood_never_repeats_a_forget_question() {
        let (corpus, _) = generate(&SynthConfig {
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let forget: HashSet<&Vec<u32>> = corpus
            .topics
            .iter()
            .flat_map(|(_, d)| d.records().iter().map(|r| &r.question))
            .collect();
        let nb = &corpus.roles[&Role::Neighborhood];
        assert!(nb.records().iter().all(|r| !forget.contains(&r.question)));
    }

    #[test]
    fn questions_are_unique_across_the_corpus() {
        let (corpus, _) = generate(&SynthConfig::default()).unwrap();
        let mut seen = HashSet::new();
        for ds in corpus
            .topics
            .iter()
            .map(|(_, d)| d)
            .chain(corpus.roles.values())
        {
            for r in ds.records() {
                assert!(seen.insert(r.question.clone()), "{}", r.question_text);
            }
        }
    }

    #[test]
    fn bridging_share_spans_configured_range() {
        let cfg = SynthConfig::default();
        let (corpus, vocab) = generate(&cfg).unwrap();
        let mut counts: Vec<usize> = corpus
            .topics
            .iter()
            .map(|(name, d)| {
                let own = vocab.id(&format!("{name}_topic")).unwrap();
                d.records().iter().filter(|r| r.question[0] != own).count()
            })
            .collect();
        counts.sort_unstable();
        assert_eq!(counts, vec![0, 3, 5, 8, 10, 13, 15]);
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig {
            seed: 9,
            ..Default::default()
        };
        let (a, _) = generate(&cfg).unwrap();
        let (b, _) = generate(&cfg).unwrap();
        assert_eq!(a.topics, b.topics);
        assert_eq!(a.roles, b.roles);
        let (c, _) = generate(&SynthConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.topics, c.topics);
    }
}
