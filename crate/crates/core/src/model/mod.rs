//! Next-token models consulted by the constrained decoder.
//!
//! Every model implements [`SequenceModel`] and is constructed through a
//! [`ModelFactory`] registered by kind name in a [`ModelRegistry`]; the
//! kind is recorded in the model file so loading dispatches to the right
//! factory.

mod count;
mod oracle;
mod uniform;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::corpus::TokenizedCorpus;
use crate::decoder::allowed_next;
use crate::error::{Error, Result};
use crate::fm_index::FmIndex;
use crate::prompts::TrainingRecord;

pub use count::{CountRow, CountTranslationModel};
pub use oracle::{OracleModel, GOLD_MASS};
pub use uniform::UniformModel;

pub const MODEL_MAGIC: &[u8; 8] = b"NGDXMODL";
pub const MODEL_VERSION: u32 = 1;

/// What the model conditions on: the prompted query tokens and, for test
/// doubles keyed by query, the query id.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub query_id: Option<&'a str>,
    pub tokens: &'a [u32],
    /// Leading tokens of `tokens` that are the task prompt.
    pub prompt_len: usize,
}

impl<'a> ModelInput<'a> {
    /// Input without a prompt or query id.
    pub fn plain(tokens: &'a [u32]) -> Self {
        Self {
            query_id: None,
            tokens,
            prompt_len: 0,
        }
    }

    /// The tokens after the prompt.
    pub fn query_tokens(&self) -> &'a [u32] {
        &self.tokens[self.prompt_len.min(self.tokens.len())..]
    }
}

pub trait SequenceModel: Send + Sync {
    fn kind(&self) -> &'static str;

    /// Log-probabilities aligned with `allowed`, normalized over exactly
    /// that set. `allowed` must be non-empty.
    fn next_token_logprobs(&self, input: &ModelInput<'_>, prefix: &[u32], allowed: &[u32]) -> Vec<f64>;

    /// Number of stored parameters (table entries).
    fn parameter_count(&self) -> usize;

    fn encode_payload(&self) -> Vec<u8>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    /// Weight of the query-translation term against the bigram term.
    pub lambda: f64,
    /// Additive smoothing.
    pub mu: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { lambda: 0.5, mu: 0.1 }
    }
}

pub trait ModelFactory: Send + Sync {
    fn kind(&self) -> &'static str;

    fn train(
        &self,
        mixture: &[TrainingRecord],
        corpus: &TokenizedCorpus,
        params: &ModelParams,
    ) -> Result<Box<dyn SequenceModel>>;

    fn decode(&self, payload: &[u8]) -> Result<Box<dyn SequenceModel>>;
}

pub struct ModelRegistry {
    factories: BTreeMap<&'static str, Box<dyn ModelFactory>>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register(Box::new(count::CountFactory));
        r.register(Box::new(oracle::OracleFactory));
        r.register(Box::new(uniform::UniformFactory));
        r
    }
}

impl ModelRegistry {
    pub fn register(&mut self, factory: Box<dyn ModelFactory>) {
        self.factories.insert(factory.kind(), factory);
    }

    pub fn kinds(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn get(&self, kind: &str) -> Result<&dyn ModelFactory> {
        self.factories.get(kind).map(|f| f.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown model kind '{kind}' (known: {})",
                self.kinds().join(", ")
            ))
        })
    }

    pub fn train(
        &self,
        kind: &str,
        mixture: &[TrainingRecord],
        corpus: &TokenizedCorpus,
        params: &ModelParams,
    ) -> Result<Box<dyn SequenceModel>> {
        self.get(kind)?.train(mixture, corpus, params)
    }

    pub fn load(&self, bytes: &[u8]) -> Result<Box<dyn SequenceModel>> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MODEL_MAGIC)?;
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let kind = r.str()?;
        let len = r.usize()?;
        let payload = r.take(len)?;
        r.finish()?;
        self.get(&kind)?.decode(payload)
    }
}

/// Versioned model file: magic, version, kind, then the kind's payload.
pub fn save_model(model: &dyn SequenceModel) -> Vec<u8> {
    let payload = model.encode_payload();
    let mut w = Writer::new();
    w.bytes(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.str(model.kind());
    w.u64(payload.len() as u64);
    w.bytes(&payload);
    w.into_inner()
}

/// Turns non-negative scores into log-probabilities normalized over the
/// slice. All-zero scores become uniform.
pub(crate) fn normalized_logprobs(scores: &[f64]) -> Vec<f64> {
    let total: f64 = scores.iter().sum();
    if total.is_nan() || total <= 0.0 || !total.is_finite() {
        let lp = -(scores.len() as f64).ln();
        return vec![lp; scores.len()];
    }
    scores.iter().map(|s| (s / total).ln()).collect()
}

/// `log p(ngram | input)` by the chain rule, each step restricted to the
/// index-validated successors of the prefix.
pub fn sequence_logprob(
    model: &dyn SequenceModel,
    input: &ModelInput<'_>,
    ngram: &[u32],
    index: &FmIndex,
) -> Result<f64> {
    if index.count(ngram)? == 0 {
        return Err(Error::Model("n-gram does not occur in the corpus".into()));
    }
    let mut range = index.full_range();
    let mut total = 0.0;
    for (k, &tok) in ngram.iter().enumerate() {
        let step = allowed_next(index, range, k)?;
        let pos = step
            .tokens
            .iter()
            .position(|&t| t == tok)
            .ok_or_else(|| Error::Model(format!("token {tok} is not a valid successor")))?;
        let lps = model.next_token_logprobs(input, &ngram[..k], &step.tokens);
        total += lps[pos];
        range = index.extend_range(range, tok)?;
    }
    Ok(total)
}
