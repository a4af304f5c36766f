//! Token-importance providers.
//!
//! Importance normally comes from head-averaged `[CLS]` attention produced
//! by an external encoder and exchanged as a weight file. The surrogate
//! provider is an idf-based stand-in so the pipeline runs without a neural
//! dependency.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedCorpus;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderTag {
    ExternalFile,
    Surrogate,
}

/// Per-token importance of one context.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenWeightVector {
    pub context_id: u32,
    pub weights: Vec<f64>,
    pub provider: ProviderTag,
}

impl TokenWeightVector {
    pub fn validate(&self, expected_len: usize) -> Result<()> {
        if self.weights.len() != expected_len {
            return Err(Error::Identifier(format!(
                "context {}: {} weights for {} tokens",
                self.context_id,
                self.weights.len(),
                expected_len
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Identifier(format!(
                "context {}: weight {w} is not a finite non-negative number",
                self.context_id
            )));
        }
        Ok(())
    }
}

pub trait WeightProvider: Send + Sync {
    fn name(&self) -> &'static str;

    /// Importance of each token of `tokens` (context `context_id`), given
    /// the training query when one is known.
    fn weights(&self, context_id: u32, tokens: &[u32], query: &[u32]) -> Result<TokenWeightVector>;
}

/// Per-token document frequencies over one corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct DocFreqs {
    pub num_contexts: usize,
    pub df: Vec<u32>,
}

impl DocFreqs {
    pub fn from_corpus(tc: &TokenizedCorpus) -> Self {
        let mut df = vec![0u32; tc.vocab_size];
        let mut seen = HashSet::new();
        for i in 0..tc.num_contexts() {
            seen.clear();
            for &t in tc.context_tokens(i) {
                if seen.insert(t) {
                    df[t as usize] += 1;
                }
            }
        }
        Self {
            num_contexts: tc.num_contexts(),
            df,
        }
    }

    pub fn idf(&self, token: u32) -> f64 {
        let df = self.df.get(token as usize).copied().unwrap_or(0) as f64;
        ((1.0 + self.num_contexts as f64) / (1.0 + df)).ln()
    }
}

pub const OVERLAP_BONUS: f64 = 1.0;

/// idf weighting with a bonus for tokens shared with the query, normalized
/// to sum to one. Falls back to uniform when every idf is zero.
pub fn surrogate_weights(query: &[u32], tokens: &[u32], stats: &DocFreqs) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::Identifier("surrogate weights need a non-empty context".into()));
    }
    let query: HashSet<u32> = query.iter().copied().collect();
    let raw: Vec<f64> = tokens
        .iter()
        .map(|t| {
            let bonus = if query.contains(t) { OVERLAP_BONUS } else { 0.0 };
            stats.idf(*t) * (1.0 + bonus)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        Ok(raw.into_iter().map(|w| w / total).collect())
    } else {
        Ok(vec![1.0 / tokens.len() as f64; tokens.len()])
    }
}

pub struct SurrogateProvider {
    stats: DocFreqs,
}

impl SurrogateProvider {
    pub fn new(stats: DocFreqs) -> Self {
        Self { stats }
    }
}

impl WeightProvider for SurrogateProvider {
    fn name(&self) -> &'static str {
        "surrogate"
    }

    fn weights(&self, context_id: u32, tokens: &[u32], query: &[u32]) -> Result<TokenWeightVector> {
        Ok(TokenWeightVector {
            context_id,
            weights: surrogate_weights(query, tokens, &self.stats)?,
            provider: ProviderTag::Surrogate,
        })
    }
}

/// One line of the attention-weight exchange file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub context_id: u32,
    pub weights: Vec<f64>,
}

/// Weights read from an exchange file of `{context_id, weights}` lines.
pub struct ExternalFileProvider {
    weights: HashMap<u32, Vec<f64>>,
}

impl ExternalFileProvider {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut weights = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: WeightRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
            if weights.insert(rec.context_id, rec.weights).is_some() {
                return Err(Error::Record {
                    line: i + 1,
                    message: format!("duplicate context_id {}", rec.context_id),
                });
            }
        }
        Ok(Self { weights })
    }
}

impl WeightProvider for ExternalFileProvider {
    fn name(&self) -> &'static str {
        "file"
    }

    fn weights(&self, context_id: u32, tokens: &[u32], _query: &[u32]) -> Result<TokenWeightVector> {
        let weights = self
            .weights
            .get(&context_id)
            .cloned()
            .ok_or_else(|| Error::Identifier(format!("weight file has no entry for context {context_id}")))?;
        let v = TokenWeightVector {
            context_id,
            weights,
            provider: ProviderTag::ExternalFile,
        };
        v.validate(tokens.len())?;
        Ok(v)
    }
}

/// Inputs a provider may need when it is constructed.
pub struct ProviderInputs<'a> {
    pub corpus: &'a TokenizedCorpus,
    pub weight_file: Option<&'a std::path::Path>,
}

pub type ProviderBuilder = fn(&ProviderInputs<'_>) -> Result<Box<dyn WeightProvider>>;

/// Weight providers by name.
pub struct ProviderRegistry {
    builders: BTreeMap<&'static str, ProviderBuilder>,
}

impl Default for ProviderRegistry {
    fn default() -> Self {
        let mut r = Self {
            builders: BTreeMap::new(),
        };
        r.register("surrogate", |inputs| {
            Ok(Box::new(SurrogateProvider::new(DocFreqs::from_corpus(inputs.corpus))))
        });
        r.register("file", |inputs| {
            let path = inputs
                .weight_file
                .ok_or_else(|| Error::Config("provider 'file' needs a weight file".into()))?;
            let f = std::fs::File::open(path)?;
            Ok(Box::new(ExternalFileProvider::from_reader(std::io::BufReader::new(f))?))
        });
        r
    }
}

impl ProviderRegistry {
    pub fn register(&mut self, name: &'static str, builder: ProviderBuilder) {
        self.builders.insert(name, builder);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    pub fn build(&self, name: &str, inputs: &ProviderInputs<'_>) -> Result<Box<dyn WeightProvider>> {
        let builder = self.builders.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown weight provider '{name}' (known: {})",
                self.names().join(", ")
            ))
        })?;
        builder(inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(df: Vec<u32>, n: usize) -> DocFreqs {
        DocFreqs { num_contexts: n, df }
    }

    #[test]
    fn ubiquitous_token_gets_minimal_weight() {
        // token 2 appears in all 4 contexts, 3 and 4 in one each
        let s = stats(vec![0, 0, 4, 1, 1], 4);
        let w = surrogate_weights(&[], &[2, 3, 4], &s).unwrap();
        assert!(w[0] < w[1] && w[0] < w[2]);
        assert_eq!(w[0], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn query_overlap_raises_weight() {
        let s = stats(vec![0, 0, 2, 2], 4);
        let w = surrogate_weights(&[3], &[2, 3], &s).unwrap();
        assert!(w[1] > w[0]);
        assert!((w[1] / w[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_tokens_get_uniform_weights() {
        let s = stats(vec![0, 0, 1], 3);
        let w = surrogate_weights(&[], &[2, 2, 2, 2], &s).unwrap();
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let s = stats(vec![0, 0, 3], 3);
        let w = surrogate_weights(&[], &[2, 2], &s).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn external_file_validates_length() {
        let src = "{\"context_id\":0,\"weights\":[0.5,0.5]}\n{\"context_id\":1,\"weights\":[1.0]}\n";
        let p = ExternalFileProvider::from_reader(src.as_bytes()).unwrap();
        assert_eq!(p.weights(0, &[5, 6], &[]).unwrap().weights, vec![0.5, 0.5]);
        assert!(p.weights(1, &[5, 6], &[]).is_err());
        assert!(p.weights(9, &[5], &[]).is_err());
    }

    #[test]
    fn external_file_rejects_negative_weights() {
        let src = "{\"context_id\":0,\"weights\":[-0.5]}\n";
        let p = ExternalFileProvider::from_reader(src.as_bytes()).unwrap();
        assert!(p.weights(0, &[5], &[]).is_err());
    }

    #[test]
    fn registry_knows_builtins() {
        let r = ProviderRegistry::default();
        assert_eq!(r.names(), vec!["file", "surrogate"]);
    }
}
