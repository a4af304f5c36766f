use std::collections::{BTreeMap, HashMap};

use super::{normalized_logprobs, ModelFactory, ModelInput, ModelParams, SequenceModel};
use crate::binio::{Reader, Writer};
use crate::corpus::{TokenizedCorpus, SEPARATOR};
use crate::error::{Error, Result};
use crate::prompts::TrainingRecord;

/// Sparse count row with its total.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CountRow {
    pub total: u64,
    pub counts: HashMap<u32, u64>,
}

impl CountRow {
    fn add(&mut self, token: u32, by: u64) {
        *self.counts.entry(token).or_insert(0) += by;
        self.total += by;
    }

    fn get(&self, token: u32) -> u64 {
        self.counts.get(&token).copied().unwrap_or(0)
    }
}

/// Closed-form next-token model: a query-to-target translation table mixed
/// with corpus bigram statistics, both additively smoothed.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTranslationModel {
    pub trans: HashMap<u32, CountRow>,
    pub bigram: HashMap<u32, CountRow>,
    pub unigram: HashMap<u32, u64>,
    pub lambda: f64,
    pub mu: f64,
}

impl CountTranslationModel {
    pub fn train(mixture: &[TrainingRecord], corpus: &TokenizedCorpus, params: &ModelParams) -> Result<Self> {
        if mixture.is_empty() {
            return Err(Error::Model("empty training mixture".into()));
        }
        if !(0.0..=1.0).contains(&params.lambda) {
            return Err(Error::Model(format!("lambda {} outside [0, 1]", params.lambda)));
        }
        if params.mu.is_nan() || params.mu <= 0.0 {
            return Err(Error::Model(format!("mu must be positive, got {}", params.mu)));
        }
        let mut trans: HashMap<u32, CountRow> = HashMap::new();
        for rec in mixture {
            let query = rec.input_tokens.get(rec.prompt_len..).unwrap_or(&[]);
            for &q in query {
                let row = trans.entry(q).or_default();
                for &w in &rec.target_tokens {
                    row.add(w, 1);
                }
            }
        }
        let mut bigram: HashMap<u32, CountRow> = HashMap::new();
        let mut unigram: HashMap<u32, u64> = HashMap::new();
        for &t in corpus.stream.iter().filter(|&&t| t != SEPARATOR) {
            *unigram.entry(t).or_insert(0) += 1;
        }
        for pair in corpus.stream.windows(2) {
            if pair[0] != SEPARATOR && pair[1] != SEPARATOR {
                bigram.entry(pair[0]).or_default().add(pair[1], 1);
            }
        }
        Ok(Self {
            trans,
            bigram,
            unigram,
            lambda: params.lambda,
            mu: params.mu,
        })
    }

    /// Smoothed probabilities over `allowed` before renormalization.
    pub fn mixed_probabilities(&self, input: &[u32], prefix: &[u32], allowed: &[u32]) -> Vec<f64> {
        let k = allowed.len() as f64;
        let rows: Vec<&CountRow> = input.iter().filter_map(|q| self.trans.get(q)).collect();
        let trans_total: u64 = rows.iter().map(|r| r.total).sum();
        let trans_den = trans_total as f64 + self.mu * k;
        let prev_row = prefix.last().and_then(|p| self.bigram.get(p));
        let bigram_den = prev_row.map_or(0, |r| r.total) as f64 + self.mu * k;
        allowed
            .iter()
            .map(|&w| {
                let co: u64 = rows.iter().map(|r| r.get(w)).sum();
                let p_trans = (co as f64 + self.mu) / trans_den;
                let p_bigram = if prefix.is_empty() {
                    1.0 / k
                } else {
                    (prev_row.map_or(0, |r| r.get(w)) as f64 + self.mu) / bigram_den
                };
                self.lambda * p_trans + (1.0 - self.lambda) * p_bigram
            })
            .collect()
    }
}

impl SequenceModel for CountTranslationModel {
    fn kind(&self) -> &'static str {
        "count"
    }

    fn next_token_logprobs(&self, input: &ModelInput<'_>, prefix: &[u32], allowed: &[u32]) -> Vec<f64> {
        normalized_logprobs(&self.mixed_probabilities(input.query_tokens(), prefix, allowed))
    }

    fn parameter_count(&self) -> usize {
        self.trans.values().map(|r| r.counts.len()).sum::<usize>()
            + self.bigram.values().map(|r| r.counts.len()).sum::<usize>()
            + self.unigram.len()
    }

    fn encode_payload(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.f64(self.lambda);
        w.f64(self.mu);
        write_table(&mut w, &self.trans);
        write_table(&mut w, &self.bigram);
        let uni: BTreeMap<u32, u64> = self.unigram.iter().map(|(&k, &v)| (k, v)).collect();
        w.u64(uni.len() as u64);
        for (k, v) in uni {
            w.u32(k);
            w.u64(v);
        }
        w.into_inner()
    }
}

fn write_table(w: &mut Writer, table: &HashMap<u32, CountRow>) {
    let sorted: BTreeMap<u32, &CountRow> = table.iter().map(|(&k, r)| (k, r)).collect();
    w.u64(sorted.len() as u64);
    for (k, row) in sorted {
        w.u32(k);
        let cells: BTreeMap<u32, u64> = row.counts.iter().map(|(&t, &c)| (t, c)).collect();
        w.u64(cells.len() as u64);
        for (t, c) in cells {
            w.u32(t);
            w.u64(c);
        }
    }
}

fn read_table(r: &mut Reader<'_>) -> Result<HashMap<u32, CountRow>> {
    let rows = r.usize()?;
    let mut out = HashMap::with_capacity(rows.min(1 << 20));
    for _ in 0..rows {
        let key = r.u32()?;
        let cells = r.usize()?;
        let mut row = CountRow::default();
        for _ in 0..cells {
            let t = r.u32()?;
            let c = r.u64()?;
            row.add(t, c);
        }
        out.insert(key, row);
    }
    Ok(out)
}

pub(super) struct CountFactory;

impl ModelFactory for CountFactory {
    fn kind(&self) -> &'static str {
        "count"
    }

    fn train(
        &self,
        mixture: &[TrainingRecord],
        corpus: &TokenizedCorpus,
        params: &ModelParams,
    ) -> Result<Box<dyn SequenceModel>> {
        Ok(Box::new(CountTranslationModel::train(mixture, corpus, params)?))
    }

    fn decode(&self, payload: &[u8]) -> Result<Box<dyn SequenceModel>> {
        let mut r = Reader::new(payload);
        let lambda = r.f64()?;
        let mu = r.f64()?;
        let trans = read_table(&mut r)?;
        let bigram = read_table(&mut r)?;
        let n = r.usize()?;
        let mut unigram = HashMap::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let k = r.u32()?;
            unigram.insert(k, r.u64()?);
        }
        r.finish()?;
        Ok(Box::new(CountTranslationModel {
            trans,
            bigram,
            unigram,
            lambda,
            mu,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ContextMeta, Granularity};
    use crate::prompts::Task;
    use proptest::prelude::*;

    fn corpus(stream: Vec<u32>) -> TokenizedCorpus {
        let mut boundaries = vec![0];
        for (i, &t) in stream.iter().enumerate() {
            if t == SEPARATOR && i + 1 < stream.len() {
                boundaries.push(i + 1);
            }
        }
        TokenizedCorpus {
            granularity: Granularity::Document,
            vocab_size: stream.iter().copied().max().unwrap() as usize + 1,
            contexts: vec![
                ContextMeta {
                    source_doc_id: String::new(),
                    title: None
                };
                boundaries.len()
            ],
            stream,
            boundaries,
        }
    }

    fn rec(input: Vec<u32>, target: Vec<u32>) -> TrainingRecord {
        TrainingRecord {
            task: Task::DR,
            query_id: "q".into(),
            input_tokens: input,
            prompt_len: 0,
            target_tokens: target,
        }
    }

    fn params(lambda: f64) -> ModelParams {
        ModelParams { lambda, mu: 0.1 }
    }

    #[test]
    fn translation_counts_pair_every_query_token_with_every_target_token() {
        let m =
            CountTranslationModel::train(&[rec(vec![7], vec![2, 3])], &corpus(vec![2, 3, 0]), &params(0.5)).unwrap();
        let row = &m.trans[&7];
        assert_eq!((row.get(2), row.get(3), row.total), (1, 1, 2));
        assert_eq!(m.trans.len(), 1);
    }

    #[test]
    fn prompt_tokens_are_not_translation_sources() {
        let mut r = rec(vec![5, 6, 7], vec![2]);
        r.prompt_len = 2;
        let m = CountTranslationModel::train(&[r], &corpus(vec![2, 3, 0]), &params(1.0)).unwrap();
        assert_eq!(m.trans.keys().copied().collect::<Vec<_>>(), vec![7]);
        let with_prompt = ModelInput {
            query_id: None,
            tokens: &[5, 6, 7],
            prompt_len: 2,
        };
        let lp = m.next_token_logprobs(&with_prompt, &[], &[2, 3]);
        assert_eq!(lp, m.next_token_logprobs(&ModelInput::plain(&[7]), &[], &[2, 3]));
    }

    #[test]
    fn separators_break_bigrams() {
        let m = CountTranslationModel::train(&[rec(vec![7], vec![2])], &corpus(vec![2, 3, 0]), &params(0.5)).unwrap();
        assert_eq!(m.bigram.len(), 1);
        assert_eq!(m.bigram[&2].get(3), 1);
        assert_eq!(m.bigram[&2].total, 1);
        let m =
            CountTranslationModel::train(&[rec(vec![7], vec![2])], &corpus(vec![2, 0, 3, 0]), &params(0.5)).unwrap();
        assert!(m.bigram.is_empty());
    }

    #[test]
    fn duplicated_record_doubles_counts() {
        let r = rec(vec![7, 8], vec![2, 3]);
        let tc = corpus(vec![2, 3, 0]);
        let one = CountTranslationModel::train(std::slice::from_ref(&r), &tc, &params(0.5)).unwrap();
        let two = CountTranslationModel::train(&[r.clone(), r], &tc, &params(0.5)).unwrap();
        for (q, row) in &one.trans {
            for (w, c) in &row.counts {
                assert_eq!(two.trans[q].get(*w), 2 * c);
            }
        }
    }

    #[test]
    fn lambda_zero_without_prefix_is_uniform() {
        let m =
            CountTranslationModel::train(&[rec(vec![7], vec![2])], &corpus(vec![2, 3, 4, 0]), &params(0.0)).unwrap();
        let input = ModelInput {
            query_id: None,
            tokens: &[7],
            prompt_len: 0,
        };
        let lp = m.next_token_logprobs(&input, &[], &[2, 3, 4]);
        assert!(lp.iter().all(|&x| (x - (1.0f64 / 3.0).ln()).abs() < 1e-12));
    }

    #[test]
    fn lambda_one_follows_translation() {
        let mix: Vec<TrainingRecord> = (0..20).map(|_| rec(vec![7], vec![4])).collect();
        let m = CountTranslationModel::train(&mix, &corpus(vec![2, 3, 4, 0]), &params(1.0)).unwrap();
        let input = ModelInput {
            query_id: None,
            tokens: &[7],
            prompt_len: 0,
        };
        let lp = m.next_token_logprobs(&input, &[2], &[2, 3, 4]);
        let best = (0..3).max_by(|&a, &b| lp[a].total_cmp(&lp[b])).unwrap();
        assert_eq!(best, 2);
    }

    #[test]
    fn rejects_bad_inputs() {
        let tc = corpus(vec![2, 0]);
        assert!(CountTranslationModel::train(&[], &tc, &params(0.5)).is_err());
        assert!(CountTranslationModel::train(&[rec(vec![2], vec![2])], &tc, &params(1.5)).is_err());
        let p = ModelParams { lambda: 0.5, mu: 0.0 };
        assert!(CountTranslationModel::train(&[rec(vec![2], vec![2])], &tc, &p).is_err());
    }

    proptest! {
        #[test]
        fn normalized_and_finite(
            stream in proptest::collection::vec(0u32..12, 2..80),
            recs in proptest::collection::vec((proptest::collection::vec(1u32..12, 0..6), proptest::collection::vec(2u32..12, 1..6)), 1..10),
            query in proptest::collection::vec(1u32..14, 0..8),
            prefix in proptest::collection::vec(2u32..12, 0..3),
            allowed in proptest::collection::btree_set(0u32..12, 1..12),
            lambda in 0.0f64..=1.0,
        ) {
            let mut stream = stream;
            stream.push(0);
            stream[0] = 2;
            let tc = corpus(stream);
            let mix: Vec<TrainingRecord> = recs.into_iter().map(|(i, t)| rec(i, t)).collect();
            let m = CountTranslationModel::train(&mix, &tc, &ModelParams { lambda, mu: 0.1 }).unwrap();
            let allowed: Vec<u32> = allowed.into_iter().collect();
            let lp = m.next_token_logprobs(&ModelInput::plain(&query), &prefix, &allowed);
            prop_assert_eq!(lp.len(), allowed.len());
            prop_assert!(lp.iter().all(|x| x.is_finite() && *x <= 0.0));
            let s: f64 = lp.iter().map(|x| x.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn record_order_does_not_matter(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mix: Vec<TrainingRecord> = (0..15u32).map(|i| rec(vec![i % 4 + 2, 3], vec![i % 5 + 2, 4])).collect();
            let mut shuffled = mix.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let tc = corpus(vec![2, 3, 4, 0, 5, 6, 0]);
            let a = CountTranslationModel::train(&mix, &tc, &params(0.5)).unwrap();
            let b = CountTranslationModel::train(&shuffled, &tc, &params(0.5)).unwrap();
            prop_assert_eq!(a.encode_payload(), b.encode_payload());
        }
    }
}
