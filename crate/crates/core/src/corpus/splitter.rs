use crate::error::{Error, Result};

/// Cuts a document body into sentences.
pub trait SentenceSplitter: Send + Sync {
    fn name(&self) -> &'static str;
    fn split(&self, text: &str) -> Vec<String>;
}

/// Breaks after `.`, `!` or `?` when followed by whitespace or end of text.
pub struct PunctuationSplitter;

impl SentenceSplitter for PunctuationSplitter {
    fn name(&self) -> &'static str {
        "punct"
    }

    fn split(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut start = 0;
        let mut chars = text.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            if matches!(c, '.' | '!' | '?') {
                let at_break = chars.peek().is_none_or(|&(_, next)| next.is_whitespace());
                if at_break {
                    let end = i + c.len_utf8();
                    out.push(text[start..end].trim().to_string());
                    start = end;
                }
            }
        }
        out.push(text[start..].trim().to_string());
        out.retain(|s| !s.is_empty());
        out
    }
}

/// One sentence per input line.
pub struct LineSplitter;

impl SentenceSplitter for LineSplitter {
    fn name(&self) -> &'static str {
        "newline"
    }

    fn split(&self, text: &str) -> Vec<String> {
        text.lines()
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    }
}

pub fn builtin_splitters() -> Vec<Box<dyn SentenceSplitter>> {
    vec![Box::new(PunctuationSplitter), Box::new(LineSplitter)]
}

pub fn splitter_by_name(name: &str) -> Result<Box<dyn SentenceSplitter>> {
    builtin_splitters()
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| Error::Config(format!("unknown sentence splitter '{name}'")))
}
