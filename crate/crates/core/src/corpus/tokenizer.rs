use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Context separator. Never produced from text.
pub const SEPARATOR: u32 = 0;
/// Out-of-vocabulary words. Never indexed, so it matches nothing.
pub const UNK: u32 = 1;
/// First id handed out to a real word.
pub const FIRST_WORD_ID: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationRules {
    pub case_fold: bool,
    pub split_punctuation: bool,
}

impl Default for NormalizationRules {
    fn default() -> Self {
        Self {
            case_fold: true,
            split_punctuation: true,
        }
    }
}

/// Word-level tokenizer with a vocabulary grown in first-seen order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tokenizer {
    rules: NormalizationRules,
    words: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Tokenizer {
    pub fn new(rules: NormalizationRules) -> Self {
        Self {
            rules,
            words: Vec::new(),
            ids: HashMap::new(),
        }
    }

    pub fn rules(&self) -> NormalizationRules {
        self.rules
    }

    /// Number of ids in use, including the separator and UNK.
    pub fn vocab_size(&self) -> usize {
        self.words.len() + FIRST_WORD_ID as usize
    }

    /// Splits text into normalized word strings.
    pub fn split(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        let handle = |c: char, cur: &mut String, out: &mut Vec<String>| {
            if c.is_whitespace() {
                if !cur.is_empty() {
                    out.push(std::mem::take(cur));
                }
            } else if self.rules.split_punctuation && !c.is_alphanumeric() {
                if !cur.is_empty() {
                    out.push(std::mem::take(cur));
                }
                out.push(c.to_string());
            } else {
                cur.push(c);
            }
        };
        for c in text.chars() {
            if self.rules.case_fold {
                for lc in c.to_lowercase() {
                    handle(lc, &mut cur, &mut out);
                }
            } else {
                handle(c, &mut cur, &mut out);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }

    /// Adds every unseen word of `texts` to the vocabulary.
    pub fn fit<'a, I>(&mut self, texts: I)
    where
        I: IntoIterator<Item = &'a str>,
    {
        for text in texts {
            for word in self.split(text) {
                if !self.ids.contains_key(&word) {
                    let id = self.vocab_size() as u32;
                    self.ids.insert(word.clone(), id);
                    self.words.push(word);
                }
            }
        }
    }

    /// Encodes text; unseen words map to [`UNK`].
    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.split(text)
            .into_iter()
            .map(|w| self.ids.get(&w).copied().unwrap_or(UNK))
            .collect()
    }

    pub fn token_id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        id.checked_sub(FIRST_WORD_ID)
            .and_then(|i| self.words.get(i as usize))
            .map(String::as_str)
    }

    /// Joins word ids with single spaces. Separator and UNK render as
    /// `<sep>` and `<unk>`.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| match id {
                SEPARATOR => "<sep>",
                UNK => "<unk>",
                _ => self.word(id).unwrap_or("<unk>"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Vocabulary words in id order, starting at [`FIRST_WORD_ID`].
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub(crate) fn from_parts(rules: NormalizationRules, words: Vec<String>) -> Self {
        let ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32 + FIRST_WORD_ID))
            .collect();
        Self { rules, words, ids }
    }
}
