//! Synthetic corpora with planted, lexically distinct contexts.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ngramdex_core::config::default_v;
use ngramdex_core::corpus::{
    ingest, tokenize_corpus, Chunking, Context, ContextMeta, Granularity, NormalizationRules, TokenizedCorpus,
    Tokenizer, SEPARATOR,
};
use ngramdex_core::eval::{provenance_from_queries, ProvenanceMap};
use ngramdex_core::fm_index::IndexConfig;
use ngramdex_core::identifiers::{
    build_identifiers, entity_identifiers, DocFreqs, IdentifierParams, IdentifierSet, SurrogateProvider,
};
use ngramdex_core::model::SequenceModel;
use ngramdex_core::pipeline::{retrieve, title_corpus, IndexBundle, RetrievalParams, RunRecord};
use ngramdex_core::prompts::{compile_mixture, prompt_texts, QueryRecord, Task, TrainingRecord};

pub const CONTEXTS: usize = 100;
const SENTENCE_WORDS: usize = 8;
const FIRST: [&str; 10] = ["ada", "bo", "cy", "di", "eli", "fay", "gus", "hal", "ivy", "jo"];
const LAST: [&str; 10] = [
    "north", "vale", "stone", "brook", "field", "marsh", "wood", "hill", "ford", "lake",
];

pub struct Fixture {
    pub task: Task,
    pub tokenizer: Tokenizer,
    pub contexts: Vec<Context>,
    pub corpus: TokenizedCorpus,
    pub bundle: IndexBundle,
    pub train_queries: Vec<QueryRecord>,
    pub sets: Vec<IdentifierSet>,
    pub identifiers: BTreeMap<u32, Vec<Vec<u32>>>,
}

/// Documents, sentences per document and passage width giving exactly
/// [`CONTEXTS`] contexts of the task's granularity.
fn layout(task: Task) -> (usize, usize, Chunking) {
    let mut chunking = Chunking::default();
    match task {
        Task::DR => (CONTEXTS, 3, chunking),
        Task::PR => {
            chunking.passage_tokens = 3 * SENTENCE_WORDS;
            (CONTEXTS / 2, 6, chunking)
        }
        Task::SR => (CONTEXTS / 4, 4, chunking),
        Task::ER => (CONTEXTS, 2, chunking),
    }
}

/// Document `d` as JSONL. Word `j` is `d{d}w{j}` unless it is swapped for
/// a shared word, with probability `shared_rate`. Sentences end in a period
/// only when `punctuate` is set.
fn document(d: usize, sentences: usize, shared_rate: f64, punctuate: bool, rng: &mut ChaCha8Rng) -> String {
    let mut text = Vec::new();
    for s in 0..sentences {
        let mut words: Vec<String> = (0..SENTENCE_WORDS)
            .map(|k| {
                if rng.gen_bool(shared_rate) {
                    format!("s{}", rng.gen_range(0..40))
                } else {
                    format!("d{d}w{}", s * SENTENCE_WORDS + k)
                }
            })
            .collect();
        if let Some(last) = words.last_mut().filter(|_| punctuate) {
            last.push('.');
        }
        text.push(words.join(" "));
    }
    let title = format!("{} {}", FIRST[d % 10], LAST[(d / 10) % 10]);
    serde_json::json!({"id": format!("doc{d}"), "title": title, "text": text.join(" ")}).to_string()
}

pub fn granularity(task: Task) -> Granularity {
    task.spec().granularity
}

/// Topic words of a context: its words that are unique to it.
pub fn topic_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_end_matches('.').to_string())
        .filter(|w| w.starts_with('d'))
        .collect()
}

/// `per_context` queries for every context, each three of the context's
/// first six topic words.
pub fn make_queries(contexts: &[Context], task: Task, per_context: usize, seed: u64, tag: &str) -> Vec<QueryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for c in contexts {
        let mut words = topic_words(&c.text);
        words.truncate(6);
        for k in 0..per_context {
            let picked: Vec<&String> = words.choose_multiple(&mut rng, 3.min(words.len())).collect();
            let text = picked.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ");
            out.push(QueryRecord {
                query_id: format!("{tag}{}-{k}", c.context_id),
                task: Some(task),
                text: if text.is_empty() { "anything".into() } else { text },
                gold: vec![c.context_id],
            });
        }
    }
    out
}

pub fn build_fixture(task: Task, shared_rate: f64, train_per_context: usize, seed: u64) -> Fixture {
    let (docs, sentences, chunking) = layout(task);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source: String = (0..docs)
        .map(|d| document(d, sentences, shared_rate, task == Task::SR, &mut rng) + "\n")
        .collect();
    let contexts = ingest(Cursor::new(source), granularity(task), &chunking).expect("ingest");
    assert_eq!(contexts.len(), CONTEXTS, "fixture layout for {task}");
    let mut tokenizer = Tokenizer::new(NormalizationRules::default());
    tokenizer.fit(prompt_texts());
    tokenizer.fit(contexts.iter().map(|c| c.text.as_str()));
    tokenizer.fit(contexts.iter().filter_map(|c| c.title.as_deref()));
    let corpus = tokenize_corpus(&contexts, &tokenizer).expect("tokenize");
    let bundle = IndexBundle::build(tokenizer.clone(), &corpus, IndexConfig::default()).expect("index");
    let train_queries = make_queries(&contexts, task, train_per_context, seed ^ 0x51, "t");
    let sets = if task == Task::ER {
        entity_identifiers(&title_corpus(&corpus, &tokenizer).unwrap()).unwrap()
    } else {
        let mut query_tokens: HashMap<u32, Vec<u32>> = HashMap::new();
        for q in &train_queries {
            query_tokens
                .entry(q.gold[0])
                .or_default()
                .extend(tokenizer.encode(&q.text));
        }
        let provider = SurrogateProvider::new(DocFreqs::from_corpus(&corpus));
        let params = IdentifierParams {
            v: default_v(task),
            seed,
            ..IdentifierParams::default()
        };
        build_identifiers(&corpus, &provider, &params, &query_tokens).unwrap()
    };
    let identifiers = sets.iter().map(|s| (s.context_id, s.ngrams.clone())).collect();
    Fixture {
        task,
        tokenizer,
        contexts,
        corpus,
        bundle,
        train_queries,
        sets,
        identifiers,
    }
}

impl Fixture {
    pub fn mixture(&self) -> Vec<TrainingRecord> {
        compile_mixture(&self.train_queries, self.task, &self.identifiers, &self.tokenizer).unwrap()
    }

    pub fn run(&self, model: &dyn SequenceModel, queries: &[QueryRecord], params: &RetrievalParams) -> Vec<RunRecord> {
        queries
            .iter()
            .map(|q| retrieve(&self.bundle, model, self.task, &q.query_id, &q.text, params).unwrap())
            .collect()
    }
}

pub fn provenance(queries: &[QueryRecord]) -> ProvenanceMap {
    provenance_from_queries(queries)
}

/// Corpus straight from token lists, one list per context.
pub fn corpus_from(contexts: &[Vec<u32>], vocab_size: usize, granularity: Granularity) -> TokenizedCorpus {
    let mut stream = Vec::new();
    let mut boundaries = Vec::new();
    for c in contexts {
        boundaries.push(stream.len());
        stream.extend(c);
        stream.push(SEPARATOR);
    }
    TokenizedCorpus {
        granularity,
        vocab_size,
        contexts: vec![
            ContextMeta {
                source_doc_id: String::new(),
                title: None,
            };
            contexts.len()
        ],
        stream,
        boundaries,
    }
}

/// Random contexts over real token ids `2..vocab`.
pub fn random_contexts(rng: &mut ChaCha8Rng, count: usize, max_len: usize, vocab: u32) -> Vec<Vec<u32>> {
    (0..count)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            (0..len).map(|_| rng.gen_range(2..vocab)).collect()
        })
        .collect()
}
