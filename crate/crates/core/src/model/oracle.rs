use std::collections::BTreeMap;

use super::{normalized_logprobs, ModelFactory, ModelInput, ModelParams, SequenceModel};
use crate::binio::{Reader, Writer};
use crate::corpus::{TokenizedCorpus, SEPARATOR};
use crate::error::{Error, Result};
use crate::prompts::TrainingRecord;

/// Probability mass given to tokens that continue a gold n-gram.
pub const GOLD_MASS: f64 = 0.99;

/// Test double that knows each query's gold identifiers.
///
/// Tokens continuing any gold n-gram share [`GOLD_MASS`] equally; the rest
/// is uniform over the other allowed tokens. When the prefix equals a gold
/// n-gram the continuation is the separator, so a beam can close there.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleModel {
    gold: BTreeMap<String, Vec<Vec<u32>>>,
}

impl OracleModel {
    pub fn new(gold: BTreeMap<String, Vec<Vec<u32>>>) -> Result<Self> {
        if gold.is_empty() {
            return Err(Error::Model("oracle needs at least one gold query".into()));
        }
        Ok(Self { gold })
    }

    pub fn from_mixture(mixture: &[TrainingRecord]) -> Result<Self> {
        let mut gold: BTreeMap<String, Vec<Vec<u32>>> = BTreeMap::new();
        for r in mixture {
            let grams = gold.entry(r.query_id.clone()).or_default();
            if !grams.contains(&r.target_tokens) {
                grams.push(r.target_tokens.clone());
            }
        }
        Self::new(gold)
    }

    pub fn gold(&self) -> &BTreeMap<String, Vec<Vec<u32>>> {
        &self.gold
    }
}

impl SequenceModel for OracleModel {
    fn kind(&self) -> &'static str {
        "oracle"
    }

    fn next_token_logprobs(&self, input: &ModelInput<'_>, prefix: &[u32], allowed: &[u32]) -> Vec<f64> {
        let Some(grams) = input.query_id.and_then(|q| self.gold.get(q)) else {
            return normalized_logprobs(&vec![1.0; allowed.len()]);
        };
        let k = prefix.len();
        let mut next: Vec<u32> = grams
            .iter()
            .filter(|g| g.len() >= k && g[..k] == *prefix)
            .map(|g| g.get(k).copied().unwrap_or(SEPARATOR))
            .filter(|t| allowed.contains(t))
            .collect();
        next.sort_unstable();
        next.dedup();
        if next.is_empty() {
            return normalized_logprobs(&vec![1.0; allowed.len()]);
        }
        let others = allowed.len() - next.len();
        let (gold_each, other_each) = if others == 0 {
            (1.0 / next.len() as f64, 0.0)
        } else {
            (GOLD_MASS / next.len() as f64, (1.0 - GOLD_MASS) / others as f64)
        };
        let scores: Vec<f64> = allowed
            .iter()
            .map(|t| {
                if next.binary_search(t).is_ok() {
                    gold_each
                } else {
                    other_each
                }
            })
            .collect();
        normalized_logprobs(&scores)
    }

    fn parameter_count(&self) -> usize {
        self.gold.values().flatten().map(Vec::len).sum()
    }

    fn encode_payload(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.gold.len() as u64);
        for (q, grams) in &self.gold {
            w.str(q);
            w.u64(grams.len() as u64);
            for g in grams {
                w.u32s(g);
            }
        }
        w.into_inner()
    }
}

pub(super) struct OracleFactory;

impl ModelFactory for OracleFactory {
    fn kind(&self) -> &'static str {
        "oracle"
    }

    fn train(
        &self,
        mixture: &[TrainingRecord],
        _corpus: &TokenizedCorpus,
        _params: &ModelParams,
    ) -> Result<Box<dyn SequenceModel>> {
        Ok(Box::new(OracleModel::from_mixture(mixture)?))
    }

    fn decode(&self, payload: &[u8]) -> Result<Box<dyn SequenceModel>> {
        let mut r = Reader::new(payload);
        let n = r.usize()?;
        let mut gold = BTreeMap::new();
        for _ in 0..n {
            let q = r.str()?;
            let m = r.usize()?;
            let grams = (0..m).map(|_| r.u32s()).collect::<Result<Vec<_>>>()?;
            gold.insert(q, grams);
        }
        r.finish()?;
        Ok(Box::new(OracleModel::new(gold)?))
    }
}
