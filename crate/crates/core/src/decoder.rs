//! Constrained beam search over the FM-index: every step may only choose
//! a token that keeps the generated prefix inside the corpus.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::SEPARATOR;
use crate::error::{Error, Result};
use crate::fm_index::{FmIndex, IndexRange};
use crate::model::{ModelInput, SequenceModel};

/// Admissible next tokens of a matched prefix, ascending, with the range
/// each one leads to. The separator is admissible once the prefix is
/// non-empty and some occurrence ends its context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepSet {
    pub tokens: Vec<u32>,
    pub ranges: Vec<IndexRange>,
}

pub fn allowed_next(index: &FmIndex, range: IndexRange, prefix_len: usize) -> Result<StepSet> {
    let succ = index.successors(range)?;
    let mut tokens = Vec::with_capacity(succ.tokens.len() + 1);
    let mut ranges = Vec::with_capacity(succ.tokens.len() + 1);
    if succ.end_of_context && prefix_len > 0 {
        tokens.push(SEPARATOR);
        ranges.push(index.extend_range(range, SEPARATOR)?);
    }
    for (t, r) in succ.tokens {
        tokens.push(t);
        ranges.push(r);
    }
    Ok(StepSet { tokens, ranges })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub beam_width: usize,
    pub steps: usize,
    /// Rank by mean step log-probability instead of the raw sum.
    pub length_normalization: bool,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            beam_width: 15,
            steps: 10,
            length_normalization: false,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.steps == 0 {
            return Err(Error::Decode(format!(
                "beam width and steps must be at least 1 (got {} and {})",
                self.beam_width, self.steps
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Beam {
    pub prefix: Vec<u32>,
    pub cum_logprob: f64,
    pub range: IndexRange,
    /// Number of model steps taken, counting a closing separator.
    pub steps: usize,
    pub terminated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedNgram {
    pub tokens: Vec<u32>,
    pub logprob: f64,
}

/// The generated n-grams `K` of one query, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSet {
    pub entries: Vec<GeneratedNgram>,
    pub beam_width: usize,
    pub steps: usize,
}

impl GeneratedSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn rank_score(logprob: f64, steps: usize, normalize: bool) -> f64 {
    if normalize && steps > 0 {
        logprob / steps as f64
    } else {
        logprob
    }
}

struct Candidate {
    beam: usize,
    token: u32,
    range: IndexRange,
    logprob: f64,
    key: f64,
}

/// Expands `live` by one step and keeps the best `width` candidates,
/// best first. Ties go to the lower token id, then the earlier beam.
fn expand(
    index: &FmIndex,
    model: &dyn SequenceModel,
    input: &ModelInput<'_>,
    live: &[Beam],
    width: usize,
    normalize: bool,
) -> Result<Vec<Candidate>> {
    let mut cands = Vec::new();
    for (b, beam) in live.iter().enumerate() {
        let step = allowed_next(index, beam.range, beam.prefix.len())?;
        if step.tokens.is_empty() {
            continue;
        }
        let lps = model.next_token_logprobs(input, &beam.prefix, &step.tokens);
        for ((&token, &range), lp) in step.tokens.iter().zip(&step.ranges).zip(lps) {
            let logprob = beam.cum_logprob + lp;
            cands.push(Candidate {
                beam: b,
                token,
                range,
                logprob,
                key: rank_score(logprob, beam.steps + 1, normalize),
            });
        }
    }
    cands.sort_by(|a, b| {
        b.key
            .total_cmp(&a.key)
            .then(a.token.cmp(&b.token))
            .then(live[a.beam].prefix.len().cmp(&live[b.beam].prefix.len()))
            .then(a.beam.cmp(&b.beam))
    });
    cands.truncate(width);
    Ok(cands)
}

fn finish(mut done: Vec<Beam>, width: usize, normalize: bool) -> Vec<GeneratedNgram> {
    let mut merged: BTreeMap<Vec<u32>, (f64, usize)> = BTreeMap::new();
    for b in done.drain(..) {
        merged
            .entry(b.prefix)
            .and_modify(|(lp, _)| *lp = log_sum_exp(*lp, b.cum_logprob))
            .or_insert((b.cum_logprob, b.steps));
    }
    let mut out: Vec<(GeneratedNgram, f64)> = merged
        .into_iter()
        .map(|(tokens, (logprob, steps))| {
            let key = rank_score(logprob, steps, normalize);
            (GeneratedNgram { tokens, logprob }, key)
        })
        .collect();
    out.sort_by(|(a, ka), (b, kb)| {
        kb.total_cmp(ka)
            .then(a.tokens.len().cmp(&b.tokens.len()))
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    out.truncate(width);
    out.into_iter().map(|(g, _)| g).collect()
}

pub(crate) fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Beam search whose every step is restricted to index-validated
/// successors. A beam closes when it picks the separator or after
/// `params.steps` tokens; the separator itself is not part of the n-gram.
pub fn constrained_beam_search(
    index: &FmIndex,
    model: &dyn SequenceModel,
    input: &ModelInput<'_>,
    params: &DecodeParams,
) -> Result<GeneratedSet> {
    params.validate()?;
    if index.stream_len() == 0 {
        return Err(Error::Decode("empty index".into()));
    }
    let width = params.beam_width;
    let normalize = params.length_normalization;
    let mut live = vec![Beam {
        prefix: Vec::new(),
        cum_logprob: 0.0,
        range: index.full_range(),
        steps: 0,
        terminated: false,
    }];
    let mut done = Vec::new();
    for step in 0..params.steps {
        let cands = expand(index, model, input, &live, width, normalize)?;
        let last = step + 1 == params.steps;
        let mut next = Vec::with_capacity(cands.len());
        for c in cands {
            let parent = &live[c.beam];
            let closing = c.token == SEPARATOR;
            let mut prefix = parent.prefix.clone();
            if !closing {
                prefix.push(c.token);
            }
            let beam = Beam {
                prefix,
                cum_logprob: c.logprob,
                range: c.range,
                steps: parent.steps + 1,
                terminated: closing || last,
            };
            if beam.terminated {
                done.push(beam);
            } else {
                next.push(beam);
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    if done.is_empty() {
        log::warn!("constrained decoding produced no n-gram");
    }
    Ok(GeneratedSet {
        entries: finish(done, width, normalize),
        beam_width: width,
        steps: params.steps,
    })
}

/// One decoded entity title.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityHit {
    pub context_id: u32,
    pub tokens: Vec<u32>,
    pub logprob: f64,
}

/// Decodes complete titles from an index with one title per context.
/// Beams start at a title's first token and only count once they close
/// with the separator, so every hit is an exact title. Hits are ordered
/// by log-probability, then context id.
pub fn decode_entity(
    titles: &FmIndex,
    model: &dyn SequenceModel,
    input: &ModelInput<'_>,
    beam_width: usize,
) -> Result<Vec<EntityHit>> {
    let max_title = (0..titles.num_contexts())
        .map(|i| context_len(titles, i))
        .max()
        .unwrap_or(0);
    let params = DecodeParams {
        beam_width,
        steps: max_title + 1,
        length_normalization: false,
    };
    params.validate()?;
    let mut live = vec![Beam {
        prefix: Vec::new(),
        cum_logprob: 0.0,
        range: titles.context_start_range(),
        steps: 0,
        terminated: false,
    }];
    let mut done = Vec::new();
    for _ in 0..params.steps {
        if live.is_empty() {
            break;
        }
        let cands = expand(titles, model, input, &live, beam_width, false)?;
        let mut next = Vec::with_capacity(cands.len());
        for c in cands {
            let parent = &live[c.beam];
            let mut beam = Beam {
                prefix: parent.prefix.clone(),
                cum_logprob: c.logprob,
                range: c.range,
                steps: parent.steps + 1,
                terminated: c.token == SEPARATOR,
            };
            if beam.terminated {
                done.push(beam);
            } else {
                beam.prefix.push(c.token);
                next.push(beam);
            }
        }
        live = next;
    }
    let mut hits = Vec::new();
    for beam in done {
        for id in titles.contexts_of_match_ends(beam.range) {
            hits.push(EntityHit {
                context_id: id,
                tokens: beam.prefix.clone(),
                logprob: beam.cum_logprob,
            });
        }
    }
    if hits.is_empty() {
        log::warn!("no beam reached a complete title");
    }
    hits.sort_by(|a, b| b.logprob.total_cmp(&a.logprob).then(a.context_id.cmp(&b.context_id)));
    hits.dedup_by_key(|h| h.context_id);
    Ok(hits)
}

fn context_len(index: &FmIndex, i: usize) -> usize {
    let b = index.boundaries();
    b.get(i + 1).copied().unwrap_or(index.stream_len()) - b[i] - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize_corpus, tokenize_titles, Context, Granularity, NormalizationRules, Tokenizer};
    use crate::fm_index::IndexConfig;
    use crate::model::{sequence_logprob, CountTranslationModel, ModelParams, OracleModel, UniformModel};
    use crate::prompts::{Task, TrainingRecord};
    use proptest::prelude::*;

    fn build(texts: &[&str]) -> (Tokenizer, FmIndex) {
        let ctx: Vec<Context> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Context {
                context_id: i as u32,
                granularity: Granularity::Sentence,
                text: t.to_string(),
                source_doc_id: i.to_string(),
                title: Some(t.to_string()),
            })
            .collect();
        let mut tok = Tokenizer::new(NormalizationRules::default());
        tok.fit(texts.iter().copied());
        let tc = tokenize_corpus(&ctx, &tok).unwrap();
        (tok, FmIndex::build(&tc, IndexConfig::default()).unwrap())
    }

    fn oracle(gold: Vec<Vec<u32>>) -> OracleModel {
        OracleModel::new([("q".to_string(), gold)].into_iter().collect()).unwrap()
    }

    const Q: ModelInput<'static> = ModelInput {
        query_id: Some("q"),
        tokens: &[],
        prompt_len: 0,
    };

    #[test]
    fn oracle_gold_ranks_first() {
        let (tok, idx) = build(&["a b c"]);
        let gold = tok.encode("a b c");
        let m = oracle(vec![gold.clone()]);
        let p = DecodeParams {
            beam_width: 2,
            steps: 3,
            length_normalization: false,
        };
        let k = constrained_beam_search(&idx, &m, &Q, &p).unwrap();
        assert_eq!(k.entries[0].tokens, gold);
        assert!(k.entries.len() <= 2);
    }

    #[test]
    fn short_context_closes_on_separator() {
        let (tok, idx) = build(&["x y", "x y z w v u"]);
        let gold = tok.encode("x y");
        let m = oracle(vec![gold.clone()]);
        let k = constrained_beam_search(&idx, &m, &Q, &DecodeParams::default()).unwrap();
        assert_eq!(k.entries[0].tokens, gold);
        // the closing step is part of the probability
        let seq = sequence_logprob(&m, &Q, &gold, &idx).unwrap();
        assert!((k.entries[0].logprob - (seq + 0.99f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn step_limited_beams_match_sequence_logprob() {
        let (_, idx) = build(&["a b c d e", "a c d b e", "e d c b a"]);
        let m = UniformModel;
        let p = DecodeParams {
            beam_width: 5,
            steps: 3,
            length_normalization: false,
        };
        let k = constrained_beam_search(&idx, &m, &Q, &p).unwrap();
        for e in k.entries.iter().filter(|e| e.tokens.len() == 3) {
            let lp = sequence_logprob(&m, &Q, &e.tokens, &idx).unwrap();
            assert!((lp - e.logprob).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_zero_width() {
        let (_, idx) = build(&["a"]);
        let p = DecodeParams {
            beam_width: 0,
            ..DecodeParams::default()
        };
        assert!(constrained_beam_search(&idx, &UniformModel, &Q, &p).is_err());
    }

    #[test]
    fn oracle_recovers_all_gold_ngrams() {
        let texts = [
            "the cat sat on the mat today",
            "a dog ran in the park at noon",
            "birds fly over the old bridge",
        ];
        let (tok, idx) = build(&texts);
        let gold = vec![
            tok.encode("cat sat on"),
            tok.encode("the park at noon"),
            tok.encode("old bridge"),
        ];
        let m = oracle(gold.clone());
        let p = DecodeParams {
            beam_width: 5,
            steps: 4,
            length_normalization: false,
        };
        let k = constrained_beam_search(&idx, &m, &Q, &p).unwrap();
        let got: Vec<&Vec<u32>> = k.entries.iter().map(|e| &e.tokens).collect();
        // "old bridge" closes on the separator, the others are cut by steps or branch
        assert!(got.contains(&&gold[1]));
        assert!(got.contains(&&gold[2]));
        assert!(got.iter().any(|g| g.starts_with(&gold[0])));
    }

    #[test]
    fn log_sum_exp_merges() {
        let v = log_sum_exp(0.25f64.ln(), 0.25f64.ln());
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
    }

    fn title_index(titles: &[&str]) -> (Tokenizer, FmIndex) {
        let ctx: Vec<Context> = titles
            .iter()
            .enumerate()
            .map(|(i, t)| Context {
                context_id: i as u32,
                granularity: Granularity::Entity,
                text: "desc".into(),
                source_doc_id: i.to_string(),
                title: Some(t.to_string()),
            })
            .collect();
        let mut tok = Tokenizer::new(NormalizationRules::default());
        tok.fit(titles.iter().copied());
        let tc = tokenize_titles(&ctx, &tok).unwrap();
        (tok, FmIndex::build(&tc, IndexConfig::default()).unwrap())
    }

    #[test]
    fn entity_decoding_returns_exact_title() {
        let (tok, idx) = title_index(&["Aristotle", "Aristotle Lane", "Plato"]);
        let m = oracle(vec![tok.encode("Aristotle")]);
        let hits = decode_entity(&idx, &m, &Q, 15).unwrap();
        assert_eq!(hits[0].context_id, 0);
        let ids: Vec<u32> = hits.iter().map(|h| h.context_id).collect();
        assert!(ids.contains(&1));
        let m = oracle(vec![tok.encode("Aristotle Lane")]);
        let hits = decode_entity(&idx, &m, &Q, 2).unwrap();
        assert_eq!(hits[0].context_id, 1);
    }

    #[test]
    fn entity_decoding_only_matches_whole_titles() {
        // "lane" alone is a title suffix, never a title start
        let (tok, idx) = title_index(&["Aristotle Lane", "Lane Cove"]);
        let m = oracle(vec![tok.encode("Lane")]);
        let hits = decode_entity(&idx, &m, &Q, 15).unwrap();
        for h in &hits {
            let title = ["Aristotle Lane", "Lane Cove"][h.context_id as usize];
            assert_eq!(h.tokens, tok.encode(title));
        }
    }

    fn corpus_from(stream_words: &[Vec<u32>], vocab: usize) -> crate::corpus::TokenizedCorpus {
        let mut stream = Vec::new();
        let mut boundaries = Vec::new();
        for c in stream_words {
            boundaries.push(stream.len());
            stream.extend(c);
            stream.push(SEPARATOR);
        }
        crate::corpus::TokenizedCorpus {
            granularity: Granularity::Passage,
            vocab_size: vocab,
            contexts: vec![
                crate::corpus::ContextMeta {
                    source_doc_id: String::new(),
                    title: None
                };
                boundaries.len()
            ],
            stream,
            boundaries,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn generated_ngrams_occur_and_are_distinct(
            ctxs in proptest::collection::vec(proptest::collection::vec(2u32..10, 1..15), 1..8),
            query in proptest::collection::vec(2u32..10, 0..5),
            width in 1usize..8,
            steps in 1usize..6,
        ) {
            let tc = corpus_from(&ctxs, 10);
            let idx = FmIndex::build(&tc, IndexConfig::default()).unwrap();
            let mix = vec![TrainingRecord { task: Task::PR, query_id: "q".into(), input_tokens: query.clone(), prompt_len: 0, target_tokens: ctxs[0].clone() }];
            let m = CountTranslationModel::train(&mix, &tc, &ModelParams::default()).unwrap();
            let input = ModelInput::plain(&query);
            let p = DecodeParams { beam_width: width, steps, length_normalization: false };
            let k = constrained_beam_search(&idx, &m, &input, &p).unwrap();
            prop_assert!(k.entries.len() <= width);
            let mut seen = std::collections::BTreeSet::new();
            for e in &k.entries {
                prop_assert!(!e.tokens.is_empty() && e.tokens.len() <= steps);
                prop_assert!(idx.count(&e.tokens).unwrap() >= 1);
                prop_assert!(e.logprob <= 0.0);
                prop_assert!(seen.insert(e.tokens.clone()));
            }
            let again = constrained_beam_search(&idx, &m, &input, &p).unwrap();
            prop_assert_eq!(serde_json::to_string(&k).unwrap(), serde_json::to_string(&again).unwrap());
        }
    }
}
