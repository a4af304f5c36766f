//! Knowledge-source ingestion at one of four granularities.

mod splitter;
mod tokenized;
mod tokenizer;

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use splitter::{builtin_splitters, splitter_by_name, LineSplitter, PunctuationSplitter, SentenceSplitter};
pub use tokenized::{
    context_of_offset, read_corpus_file, tokenize_corpus, tokenize_titles, write_corpus_file, ContextMeta,
    TokenizedCorpus, CORPUS_MAGIC, CORPUS_VERSION,
};
pub(crate) use tokenized::{read_meta, read_tokenizer, write_meta, write_tokenizer};
pub use tokenizer::{NormalizationRules, Tokenizer, FIRST_WORD_ID, SEPARATOR, UNK};

/// Retrieval unit size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Document,
    Passage,
    Sentence,
    Entity,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::Document,
        Granularity::Passage,
        Granularity::Sentence,
        Granularity::Entity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Document => "document",
            Granularity::Passage => "passage",
            Granularity::Sentence => "sentence",
            Granularity::Entity => "entity",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Granularity::Document => 0,
            Granularity::Passage => 1,
            Granularity::Sentence => 2,
            Granularity::Entity => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        Granularity::ALL
            .into_iter()
            .find(|g| g.code() == code)
            .ok_or_else(|| Error::Format(format!("unknown granularity code {code}")))
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Granularity::ALL
            .into_iter()
            .find(|g| g.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown granularity '{s}'")))
    }
}

/// One retrievable unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub context_id: u32,
    pub granularity: Granularity,
    pub text: String,
    pub source_doc_id: String,
    pub title: Option<String>,
}

/// How documents are cut into passages and sentences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Chunking {
    /// Whitespace-delimited words per passage window.
    pub passage_tokens: usize,
    /// Name of a registered sentence splitter.
    pub sentence_splitter: String,
}

impl Default for Chunking {
    fn default() -> Self {
        Self {
            passage_tokens: 100,
            sentence_splitter: "punct".to_string(),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: serde_json::Value,
    #[serde(default)]
    title: Option<String>,
    text: String,
}

fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Reads line-delimited `{id, title?, text}` records and cuts them into
/// contexts of the requested granularity. Blank lines are skipped.
pub fn ingest<R: BufRead>(source: R, granularity: Granularity, chunking: &Chunking) -> Result<Vec<Context>> {
    if granularity == Granularity::Passage && chunking.passage_tokens == 0 {
        return Err(Error::Config("passage_tokens must be at least 1".into()));
    }
    let splitter = if granularity == Granularity::Sentence {
        Some(splitter_by_name(&chunking.sentence_splitter)?)
    } else {
        None
    };

    let mut contexts = Vec::new();
    let mut push = |text: String, source: &str, title: Option<String>| {
        contexts.push(Context {
            context_id: contexts.len() as u32,
            granularity,
            text,
            source_doc_id: source.to_string(),
            title,
        });
    };

    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: line_no,
            message: e.to_string(),
        })?;
        let source_id = match &record.id {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(Error::Record {
                    line: line_no,
                    message: format!("id must be a string or number, got {other}"),
                })
            }
        };
        let text = normalize_whitespace(&record.text);
        if text.is_empty() {
            return Err(Error::Record {
                line: line_no,
                message: "empty text".into(),
            });
        }
        let title = record
            .title
            .as_deref()
            .map(normalize_whitespace)
            .filter(|t| !t.is_empty());

        match granularity {
            Granularity::Document => push(text, &source_id, title),
            Granularity::Passage => {
                let words: Vec<&str> = text.split(' ').collect();
                for window in words.chunks(chunking.passage_tokens) {
                    push(window.join(" "), &source_id, title.clone());
                }
            }
            Granularity::Sentence => {
                let splitter = splitter.as_ref().expect("sentence splitter");
                for sentence in splitter.split(&text) {
                    let sentence = normalize_whitespace(&sentence);
                    if !sentence.is_empty() {
                        push(sentence, &source_id, title.clone());
                    }
                }
            }
            Granularity::Entity => {
                let Some(title) = title else {
                    return Err(Error::Record {
                        line: line_no,
                        message: "entity record needs a non-empty title".into(),
                    });
                };
                push(text, &source_id, Some(title));
            }
        }
    }

    if contexts.is_empty() {
        return Err(Error::Corpus("empty source: no records".into()));
    }
    Ok(contexts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest_str(s: &str, g: Granularity, c: &Chunking) -> Result<Vec<Context>> {
        ingest(s.as_bytes(), g, c)
    }

    #[test]
    fn one_document_record_is_one_context() {
        let ctx = ingest_str(
            r#"{"id":"d1","text":"Hamlet is a  tragedy."}"#,
            Granularity::Document,
            &Chunking::default(),
        )
        .unwrap();
        assert_eq!(ctx.len(), 1);
        assert_eq!(ctx[0].text, "Hamlet is a tragedy.");
        assert_eq!(ctx[0].source_doc_id, "d1");
        assert_eq!(ctx[0].context_id, 0);
    }

    #[test]
    fn passage_windows_follow_window_arithmetic() {
        let words: Vec<String> = (0..250).map(|i| format!("w{i}")).collect();
        let line = serde_json::json!({"id": 1, "text": words.join(" ")}).to_string();
        let chunking = Chunking {
            passage_tokens: 100,
            ..Chunking::default()
        };
        let ctx = ingest_str(&line, Granularity::Passage, &chunking).unwrap();
        // ceil(250 / 100) windows, last one holds the 250 mod 100 remainder
        let sizes: Vec<usize> = ctx.iter().map(|c| c.text.split(' ').count()).collect();
        assert_eq!(sizes, vec![100, 100, 50]);
        assert!(ctx.iter().all(|c| c.source_doc_id == "1"));
        assert_eq!(ctx[2].text.split(' ').next(), Some("w200"));
    }

    #[test]
    fn entity_title_is_copied() {
        let ctx = ingest_str(
            r#"{"id":"e7","title":"Aristotle","text":"Greek philosopher."}"#,
            Granularity::Entity,
            &Chunking::default(),
        )
        .unwrap();
        assert_eq!(ctx[0].title.as_deref(), Some("Aristotle"));
        assert_eq!(ctx[0].granularity, Granularity::Entity);
    }

    #[test]
    fn entity_without_title_is_rejected() {
        let err = ingest_str(r#"{"id":"e7","text":"x"}"#, Granularity::Entity, &Chunking::default()).unwrap_err();
        assert!(matches!(err, Error::Record { line: 1, .. }));
    }

    #[test]
    fn sentences_come_from_the_splitter() {
        let ctx = ingest_str(
            r#"{"id":"d","text":"One two. Three four! Five?"}"#,
            Granularity::Sentence,
            &Chunking::default(),
        )
        .unwrap();
        let texts: Vec<&str> = ctx.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, vec!["One two.", "Three four!", "Five?"]);
        let ids: Vec<u32> = ctx.iter().map(|c| c.context_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn malformed_record_reports_line_number() {
        let src = "{\"id\":\"a\",\"text\":\"ok\"}\n\n{not json}\n";
        let err = ingest_str(src, Granularity::Document, &Chunking::default()).unwrap_err();
        match err {
            Error::Record { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_source_is_a_corpus_error() {
        let err = ingest_str("\n  \n", Granularity::Document, &Chunking::default()).unwrap_err();
        assert!(matches!(err, Error::Corpus(_)));
    }

    #[test]
    fn whitespace_only_text_is_rejected() {
        let err = ingest_str(
            r#"{"id":"a","text":"   "}"#,
            Granularity::Document,
            &Chunking::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Record { line: 1, .. }));
    }

    #[test]
    fn granularity_parses_case_insensitively() {
        assert_eq!("Passage".parse::<Granularity>().unwrap(), Granularity::Passage);
        assert!("chapter".parse::<Granularity>().is_err());
    }
}
