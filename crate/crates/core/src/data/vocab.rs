use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::ConversationSample;

pub const UNK: &str = "<unk>";

/// Lowercased whitespace vocabulary. Id 0 is reserved for unknown words.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    /// Builds a vocabulary from raw texts; ids are ordered by descending
    /// frequency, ties broken lexicographically.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for w in text.split_whitespace() {
                *counts.entry(w.to_lowercase()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let words = std::iter::once(UNK.to_string()).chain(ranked.into_iter().map(|(w, _)| w)).collect::<Vec<_>>();
        Self::from(words)
    }

    pub fn fit_samples(samples: &[ConversationSample], min_count: usize) -> Self {
        Self::fit(
            samples
                .iter()
                .flat_map(|s| s.utterances.iter())
                .filter_map(|u| u.text.as_deref()),
            min_count,
        )
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Never empty: text without words maps to a single unknown token.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let ids: Vec<u32> = text
            .split_whitespace()
            .map(|w| self.index.get(&w.to_lowercase()).copied().unwrap_or(0))
            .collect();
        if ids.is_empty() {
            vec![0]
        } else {
            ids
        }
    }

    /// Fills in tokens for utterances that only carry text.
    pub fn assign_tokens(&self, samples: &mut [ConversationSample]) {
        for u in samples.iter_mut().flat_map(|s| s.utterances.iter_mut()) {
            if u.tokens.is_empty() {
                u.tokens = self.tokenize(u.text.as_deref().unwrap_or(""));
            }
        }
    }
}
