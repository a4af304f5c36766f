use serde::{Deserialize, Serialize};

use super::tokenizer::{NormalizationRules, Tokenizer, SEPARATOR, UNK};
use super::{Context, Granularity};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub const CORPUS_MAGIC: &[u8; 8] = b"NGDXCORP";
pub const CORPUS_VERSION: u32 = 1;

/// Provenance carried alongside the token stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextMeta {
    pub source_doc_id: String,
    pub title: Option<String>,
}

/// Separator-delimited token stream over every context of one granularity.
///
/// Context `i` occupies `stream[boundaries[i]..boundaries[i + 1])`, the last
/// position of which is the separator.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedCorpus {
    pub granularity: Granularity,
    pub vocab_size: usize,
    pub stream: Vec<u32>,
    pub boundaries: Vec<usize>,
    pub contexts: Vec<ContextMeta>,
}

impl TokenizedCorpus {
    pub fn num_contexts(&self) -> usize {
        self.boundaries.len()
    }

    /// End (exclusive) of context `i` in the stream, separator included.
    fn context_end(&self, i: usize) -> usize {
        self.boundaries.get(i + 1).copied().unwrap_or(self.stream.len())
    }

    /// Tokens of context `i` without its trailing separator.
    pub fn context_tokens(&self, i: usize) -> &[u32] {
        &self.stream[self.boundaries[i]..self.context_end(i) - 1]
    }

    pub fn context_lengths(&self) -> Vec<usize> {
        (0..self.num_contexts())
            .map(|i| self.context_end(i) - 1 - self.boundaries[i])
            .collect()
    }

    pub fn context_of_offset(&self, offset: usize) -> Result<u32> {
        context_of_offset(&self.boundaries, self.stream.len(), offset)
    }
}

/// Context owning stream position `offset`; a separator belongs to the
/// context it closes.
pub fn context_of_offset(boundaries: &[usize], stream_len: usize, offset: usize) -> Result<u32> {
    if offset >= stream_len || boundaries.is_empty() {
        return Err(Error::Corpus(format!(
            "offset {offset} out of range for stream of length {stream_len}"
        )));
    }
    let i = boundaries.partition_point(|&b| b <= offset);
    Ok((i - 1) as u32)
}

fn tokenize_with<'a, F>(
    contexts: &'a [Context],
    tokenizer: &Tokenizer,
    granularity: Granularity,
    text_of: F,
) -> Result<TokenizedCorpus>
where
    F: Fn(&'a Context) -> Result<&'a str>,
{
    if contexts.is_empty() {
        return Err(Error::Corpus("no contexts to tokenize".into()));
    }
    let mut stream = Vec::new();
    let mut boundaries = Vec::with_capacity(contexts.len());
    let mut meta = Vec::with_capacity(contexts.len());
    for (i, ctx) in contexts.iter().enumerate() {
        if ctx.context_id as usize != i {
            return Err(Error::Corpus(format!(
                "context ids must be dense: position {i} holds id {}",
                ctx.context_id
            )));
        }
        if ctx.granularity != contexts[0].granularity {
            return Err(Error::Corpus(format!(
                "context {} is a {} but the corpus holds {}s",
                ctx.context_id, ctx.granularity, contexts[0].granularity
            )));
        }
        let text = text_of(ctx)?;
        let ids = tokenizer.encode(text);
        if ids.is_empty() {
            return Err(Error::Corpus(format!(
                "context {} tokenizes to zero tokens",
                ctx.context_id
            )));
        }
        if let Some(pos) = ids.iter().position(|&t| t == UNK) {
            let word = tokenizer.split(text).swap_remove(pos);
            return Err(Error::Corpus(format!(
                "context {} has out-of-vocabulary word '{word}'",
                ctx.context_id
            )));
        }
        boundaries.push(stream.len());
        stream.extend_from_slice(&ids);
        stream.push(SEPARATOR);
        meta.push(ContextMeta {
            source_doc_id: ctx.source_doc_id.clone(),
            title: ctx.title.clone(),
        });
    }
    Ok(TokenizedCorpus {
        granularity,
        vocab_size: tokenizer.vocab_size(),
        stream,
        boundaries,
        contexts: meta,
    })
}

/// Builds the token stream. The tokenizer's vocabulary must cover every
/// context.
pub fn tokenize_corpus(contexts: &[Context], tokenizer: &Tokenizer) -> Result<TokenizedCorpus> {
    let granularity = contexts.first().map(|c| c.granularity).unwrap_or(Granularity::Document);
    tokenize_with(contexts, tokenizer, granularity, |c| Ok(c.text.as_str()))
}

/// Token stream with one title per context, used to decode entity names.
pub fn tokenize_titles(contexts: &[Context], tokenizer: &Tokenizer) -> Result<TokenizedCorpus> {
    tokenize_with(contexts, tokenizer, Granularity::Entity, |c| {
        c.title
            .as_deref()
            .ok_or_else(|| Error::Corpus(format!("context {} has no title", c.context_id)))
    })
}

fn rules_code(r: NormalizationRules) -> u8 {
    (r.case_fold as u8) | ((r.split_punctuation as u8) << 1)
}

fn rules_from_code(c: u8) -> NormalizationRules {
    NormalizationRules {
        case_fold: c & 1 != 0,
        split_punctuation: c & 2 != 0,
    }
}

pub(crate) fn write_tokenizer(w: &mut Writer, tokenizer: &Tokenizer) {
    w.u8(rules_code(tokenizer.rules()));
    w.u32(tokenizer.words().len() as u32);
    for word in tokenizer.words() {
        w.str(word);
    }
}

pub(crate) fn read_tokenizer(r: &mut Reader<'_>) -> Result<Tokenizer> {
    let rules = rules_from_code(r.u8()?);
    let n = r.u32()? as usize;
    let words = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    Ok(Tokenizer::from_parts(rules, words))
}

pub(crate) fn write_meta(w: &mut Writer, meta: &[ContextMeta]) {
    w.u64(meta.len() as u64);
    for m in meta {
        w.str(&m.source_doc_id);
        match &m.title {
            Some(t) => {
                w.u8(1);
                w.str(t);
            }
            None => w.u8(0),
        }
    }
}

pub(crate) fn read_meta(r: &mut Reader<'_>) -> Result<Vec<ContextMeta>> {
    let n = r.usize()?;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let source_doc_id = r.str()?;
        let title = match r.u8()? {
            0 => None,
            1 => Some(r.str()?),
            x => return Err(Error::Format(format!("bad title flag {x}"))),
        };
        out.push(ContextMeta { source_doc_id, title });
    }
    Ok(out)
}

/// Serializes a corpus as `magic, version, vocab_size, granularity`,
/// then the vocabulary table, stream, boundaries and context provenance.
pub fn write_corpus_file(tokenizer: &Tokenizer, corpus: &TokenizedCorpus) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(CORPUS_MAGIC);
    w.u32(CORPUS_VERSION);
    w.u32(corpus.vocab_size as u32);
    w.u8(corpus.granularity.code());
    write_tokenizer(&mut w, tokenizer);
    w.u32s(&corpus.stream);
    let bounds: Vec<u64> = corpus.boundaries.iter().map(|&b| b as u64).collect();
    w.u64s(&bounds);
    write_meta(&mut w, &corpus.contexts);
    w.into_inner()
}

pub fn read_corpus_file(bytes: &[u8]) -> Result<(Tokenizer, TokenizedCorpus)> {
    let mut r = Reader::new(bytes);
    r.expect_magic(CORPUS_MAGIC)?;
    let version = r.u32()?;
    if version != CORPUS_VERSION {
        return Err(Error::Format(format!("unsupported corpus version {version}")));
    }
    let vocab_size = r.u32()? as usize;
    let granularity = Granularity::from_code(r.u8()?)?;
    let tokenizer = read_tokenizer(&mut r)?;
    let stream = r.u32s()?;
    let boundaries: Vec<usize> = r.u64s()?.into_iter().map(|b| b as usize).collect();
    let contexts = read_meta(&mut r)?;
    r.finish()?;
    if tokenizer.vocab_size() != vocab_size || contexts.len() != boundaries.len() {
        return Err(Error::Format("inconsistent corpus header".into()));
    }
    if stream.last() != Some(&SEPARATOR) || boundaries.first() != Some(&0) {
        return Err(Error::Format("corrupt corpus stream".into()));
    }
    Ok((
        tokenizer,
        TokenizedCorpus {
            granularity,
            vocab_size,
            stream,
            boundaries,
            contexts,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(id: u32, text: &str) -> Context {
        Context {
            context_id: id,
            granularity: Granularity::Document,
            text: text.into(),
            source_doc_id: format!("d{id}"),
            title: None,
        }
    }

    fn fitted(contexts: &[Context]) -> Tokenizer {
        let mut t = Tokenizer::new(NormalizationRules::default());
        t.fit(contexts.iter().map(|c| c.text.as_str()));
        t
    }

    #[test]
    fn two_contexts_make_the_expected_stream() {
        let cs = vec![ctx(0, "a b"), ctx(1, "b c")];
        let t = fitted(&cs);
        let tc = tokenize_corpus(&cs, &t).unwrap();
        let (a, b, c) = (
            t.token_id("a").unwrap(),
            t.token_id("b").unwrap(),
            t.token_id("c").unwrap(),
        );
        assert_eq!(tc.stream, vec![a, b, SEPARATOR, b, c, SEPARATOR]);
        assert_eq!(tc.boundaries, vec![0, 3]);
        assert_eq!(tc.context_tokens(1), &[b, c]);
    }

    #[test]
    fn offsets_map_to_contexts() {
        let cs = vec![ctx(0, "a b"), ctx(1, "b c")];
        let tc = tokenize_corpus(&cs, &fitted(&cs)).unwrap();
        assert_eq!(tc.context_of_offset(4).unwrap(), 1);
        assert_eq!(tc.context_of_offset(0).unwrap(), 0);
        assert_eq!(tc.context_of_offset(2).unwrap(), 0, "separator closes context 0");
        assert!(tc.context_of_offset(tc.stream.len()).is_err());
    }

    #[test]
    fn every_position_maps_to_its_context_and_lengths_add_up() {
        let cs: Vec<Context> = (0..20)
            .map(|i| {
                ctx(
                    i,
                    &"x y z w"
                        .split(' ')
                        .cycle()
                        .take(1 + (i as usize * 7) % 5)
                        .collect::<Vec<_>>()
                        .join(" "),
                )
            })
            .collect();
        let tc = tokenize_corpus(&cs, &fitted(&cs)).unwrap();
        for i in 0..tc.num_contexts() {
            let end = tc.boundaries.get(i + 1).copied().unwrap_or(tc.stream.len());
            for p in tc.boundaries[i]..end {
                assert_eq!(tc.context_of_offset(p).unwrap(), i as u32);
            }
        }
        let total: usize = tc.context_lengths().iter().map(|l| l + 1).sum();
        assert_eq!(total, tc.stream.len());
        assert_eq!(tc.stream.iter().filter(|&&t| t == SEPARATOR).count(), cs.len());
    }

    #[test]
    fn empty_list_is_rejected() {
        let t = Tokenizer::new(NormalizationRules::default());
        assert!(tokenize_corpus(&[], &t).is_err());
    }

    #[test]
    fn zero_token_context_is_named() {
        let cs = vec![ctx(0, "a"), ctx(1, "")];
        let err = tokenize_corpus(&cs, &fitted(&cs)).unwrap_err();
        assert!(err.to_string().contains("context 1"), "{err}");
    }

    #[test]
    fn out_of_vocabulary_word_is_rejected() {
        let cs = vec![ctx(0, "a b")];
        let mut t = Tokenizer::new(NormalizationRules::default());
        t.fit(["a"]);
        let err = tokenize_corpus(&cs, &t).unwrap_err();
        assert!(err.to_string().contains("'b'"), "{err}");
    }

    #[test]
    fn corpus_file_is_deterministic_and_reads_back() {
        let mut cs = vec![ctx(0, "Hamlet, a play"), ctx(1, "Aristotle wrote")];
        cs[1].title = Some("Aristotle".into());
        let t = fitted(&cs);
        let tc = tokenize_corpus(&cs, &t).unwrap();
        let a = write_corpus_file(&t, &tc);
        let b = write_corpus_file(&t, &tokenize_corpus(&cs, &fitted(&cs)).unwrap());
        assert_eq!(a, b);
        let (t2, tc2) = read_corpus_file(&a).unwrap();
        assert_eq!(t2, t);
        assert_eq!(tc2, tc);
    }

    #[test]
    fn titles_stream_uses_titles() {
        let mut cs = vec![ctx(0, "x"), ctx(1, "y")];
        cs[0].title = Some("Aristotle".into());
        cs[1].title = Some("Aristotle Lane".into());
        let mut t = Tokenizer::new(NormalizationRules::default());
        t.fit(["Aristotle Lane x y"]);
        let titles = tokenize_titles(&cs, &t).unwrap();
        assert_eq!(titles.context_lengths(), vec![1, 2]);
        cs[1].title = None;
        assert!(tokenize_titles(&cs, &t).is_err());
    }
}
