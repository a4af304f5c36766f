//! Index bundle and single-query retrieval.
//!
//! A bundle carries everything retrieval needs besides the model: the
//! FM-index over the context stream, the vocabulary, context metadata and,
//! for entity corpora, a second index over titles.

use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::corpus::{
    read_meta, read_tokenizer, tokenize_titles, write_meta, write_tokenizer, Context, ContextMeta, Granularity,
    TokenizedCorpus, Tokenizer,
};
use crate::decoder::{constrained_beam_search, decode_entity, DecodeParams, GeneratedNgram};
use crate::error::{Error, Result};
use crate::fm_index::{FmIndex, IndexConfig};
use crate::model::{ModelInput, SequenceModel};
use crate::prompts::{prompt_len, render_input, Task};
use crate::scorer::{rank_contexts, ScoringParams};

pub const BUNDLE_MAGIC: &[u8; 8] = b"NGDXBNDL";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct IndexBundle {
    pub granularity: Granularity,
    pub tokenizer: Tokenizer,
    pub contexts: Vec<ContextMeta>,
    pub index: FmIndex,
    pub titles: Option<FmIndex>,
}

impl IndexBundle {
    /// Builds the context index, plus a title index when every context has
    /// a title and the corpus is entity-grained.
    pub fn build(tokenizer: Tokenizer, corpus: &TokenizedCorpus, config: IndexConfig) -> Result<Self> {
        let index = FmIndex::build(corpus, config)?;
        let titles = if corpus.granularity == Granularity::Entity {
            Some(FmIndex::build(&title_corpus(corpus, &tokenizer)?, config)?)
        } else {
            None
        };
        Ok(Self {
            granularity: corpus.granularity,
            tokenizer,
            contexts: corpus.contexts.clone(),
            index,
            titles,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(BUNDLE_MAGIC);
        w.u32(BUNDLE_VERSION);
        w.u8(self.granularity.code());
        write_tokenizer(&mut w, &self.tokenizer);
        write_meta(&mut w, &self.contexts);
        self.index.write_to(&mut w);
        match &self.titles {
            Some(t) => {
                w.u8(1);
                t.write_to(&mut w);
            }
            None => w.u8(0),
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(BUNDLE_MAGIC)?;
        let version = r.u32()?;
        if version != BUNDLE_VERSION {
            return Err(Error::Format(format!("unsupported index bundle version {version}")));
        }
        let granularity = Granularity::from_code(r.u8()?)?;
        let tokenizer = read_tokenizer(&mut r)?;
        let contexts = read_meta(&mut r)?;
        let index = FmIndex::read_from(&mut r)?;
        let titles = match r.u8()? {
            0 => None,
            1 => Some(FmIndex::read_from(&mut r)?),
            t => return Err(Error::Format(format!("bad title flag {t}"))),
        };
        r.finish()?;
        if contexts.len() != index.num_contexts() {
            return Err(Error::Format("context metadata does not match the index".into()));
        }
        Ok(Self {
            granularity,
            tokenizer,
            contexts,
            index,
            titles,
        })
    }

    pub fn heap_bytes(&self) -> usize {
        self.index.heap_bytes() + self.titles.as_ref().map_or(0, FmIndex::heap_bytes)
    }
}

/// Title stream of an entity corpus, one title per context.
pub fn title_corpus(corpus: &TokenizedCorpus, tokenizer: &Tokenizer) -> Result<TokenizedCorpus> {
    let contexts: Vec<Context> = corpus
        .contexts
        .iter()
        .enumerate()
        .map(|(i, m)| Context {
            context_id: i as u32,
            granularity: Granularity::Entity,
            text: String::new(),
            source_doc_id: m.source_doc_id.clone(),
            title: m.title.clone(),
        })
        .collect();
    tokenize_titles(&contexts, tokenizer)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub decode: DecodeParams,
    pub scoring: ScoringParams,
    /// Ranked contexts kept per query; 0 keeps all.
    pub limit: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            decode: DecodeParams::default(),
            scoring: ScoringParams::default(),
            limit: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedContext {
    pub context_id: u32,
    pub score: f64,
}

/// One line of a run file: the generated n-grams and the final ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub query_id: String,
    pub task: Task,
    pub ngrams: Vec<GeneratedNgram>,
    pub ranked: Vec<RankedContext>,
}

/// Decodes and ranks one query. Entity queries decode whole titles and are
/// ranked by title probability; every other task goes through n-gram
/// generation and interactive scoring.
pub fn retrieve(
    bundle: &IndexBundle,
    model: &dyn SequenceModel,
    task: Task,
    query_id: &str,
    text: &str,
    params: &RetrievalParams,
) -> Result<RunRecord> {
    let tokens = render_input(task, text, &bundle.tokenizer)?;
    let input = ModelInput {
        query_id: Some(query_id),
        tokens: &tokens,
        prompt_len: prompt_len(task, &bundle.tokenizer),
    };
    let limit = if params.limit == 0 { usize::MAX } else { params.limit };
    if task == Task::ER {
        let titles = bundle
            .titles
            .as_ref()
            .ok_or_else(|| Error::Config("entity retrieval needs an index built from an entity corpus".into()))?;
        let hits = decode_entity(titles, model, &input, params.decode.beam_width)?;
        let mut ngrams: Vec<GeneratedNgram> = Vec::new();
        for h in &hits {
            if !ngrams.iter().any(|g| g.tokens == h.tokens) {
                ngrams.push(GeneratedNgram {
                    tokens: h.tokens.clone(),
                    logprob: h.logprob,
                });
            }
        }
        let ranked = hits
            .iter()
            .take(limit)
            .map(|h| RankedContext {
                context_id: h.context_id,
                score: h.logprob.exp(),
            })
            .collect();
        return Ok(RunRecord {
            query_id: query_id.to_string(),
            task,
            ngrams,
            ranked,
        });
    }
    let k = constrained_beam_search(&bundle.index, model, &input, &params.decode)?;
    let ranked = rank_contexts(&bundle.index, &k, &params.scoring, limit)?
        .into_iter()
        .map(|s| RankedContext {
            context_id: s.context_id,
            score: s.score,
        })
        .collect();
    Ok(RunRecord {
        query_id: query_id.to_string(),
        task,
        ngrams: k.entries,
        ranked,
    })
}
