use std::collections::HashMap;

use crate::{Error, Result};

/// Closed word list; text is tokenized by splitting on whitespace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Id of `word`, adding it if unseen.
    pub fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| Error::invalid(format!("word {w:?} is not in the vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.words.get(i as usize).map_or("<oov>", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// One word per line.
    pub fn to_text(&self) -> String {
        self.words.iter().map(|w| format!("{w}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut v = Vocab::new();
        for word in text.lines() {
            if word.is_empty() || word.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("bad vocabulary entry {word:?}")));
            }
            if v.id(word).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate vocabulary entry {word:?}"
                )));
            }
            v.intern(word);
        }
        Ok(v)
    }
}
