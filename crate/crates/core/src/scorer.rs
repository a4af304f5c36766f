//! Log-odds n-gram weights, the cover factor, and the interactive context
//! score that sums the contributions of every generated n-gram a context
//! contains.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::decoder::GeneratedSet;
use crate::error::{Error, Result};
use crate::fm_index::FmIndex;

/// Clamp applied to the conditional probability before taking log-odds.
pub const PROB_EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringParams {
    pub alpha: f64,
    pub beta: f64,
    /// Number of top-weighted n-grams whose tokens form the covered set.
    pub g: usize,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 0.8,
            g: 5,
        }
    }
}

impl ScoringParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::Scoring(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Scoring(format!("beta {} outside [0, 1]", self.beta)));
        }
        if self.g == 0 {
            return Err(Error::Scoring("g must be at least 1".into()));
        }
        Ok(())
    }
}

/// `count(ngram) / positions(|ngram|)`.
pub fn unconditional_prob(index: &FmIndex, ngram: &[u32]) -> Result<f64> {
    let count = index.count(ngram)?;
    if count == 0 {
        return Err(Error::Scoring("n-gram does not occur in the corpus".into()));
    }
    let positions = index.ngram_positions(ngram.len());
    Ok(count as f64 / positions as f64)
}

/// `max(0, log[pMQ (1 - pM) / (pM (1 - pMQ))])` with `pMQ` clamped away
/// from 0 and 1.
pub fn ngram_weight(p_m: f64, p_mq: f64) -> Result<f64> {
    if !(p_m > 0.0 && p_m < 1.0) {
        return Err(Error::Scoring(format!(
            "unconditional probability {p_m} outside (0, 1)"
        )));
    }
    let q = p_mq.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
    let w = ((q * (1.0 - p_m)) / (p_m * (1.0 - q))).ln();
    Ok(w.max(0.0))
}

/// `1 - beta + beta * |set(R) \ V| / |set(R)|`.
pub fn coverage_factor(r: &[u32], covered: &BTreeSet<u32>, beta: f64) -> f64 {
    let distinct: BTreeSet<u32> = r.iter().copied().collect();
    if distinct.is_empty() {
        return 1.0;
    }
    let novel = distinct.iter().filter(|t| !covered.contains(t)).count();
    1.0 - beta + beta * novel as f64 / distinct.len() as f64
}

/// A generated n-gram with its weight and cover, as it enters the score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub ngram: Vec<u32>,
    pub weight: f64,
    pub cover: f64,
}

impl Contribution {
    pub fn value(&self, alpha: f64) -> f64 {
        self.weight.powf(alpha) * self.cover
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredContext {
    pub context_id: u32,
    pub score: f64,
    pub contributors: Vec<Contribution>,
}

/// Weights and covers for every n-gram of `k`, ordered by weight
/// descending then token sequence, so the result does not depend on the
/// order of `k`. Duplicate n-grams keep their first entry.
pub fn weigh_generated(index: &FmIndex, k: &GeneratedSet, params: &ScoringParams) -> Result<Vec<Contribution>> {
    params.validate()?;
    let mut unique: BTreeMap<&[u32], f64> = BTreeMap::new();
    for e in &k.entries {
        unique.entry(e.tokens.as_slice()).or_insert(e.logprob);
    }
    let mut weighted = Vec::with_capacity(unique.len());
    for (ngram, logprob) in unique {
        let p_m = unconditional_prob(index, ngram)?;
        let weight = if p_m >= 1.0 {
            0.0
        } else {
            ngram_weight(p_m, logprob.exp())?
        };
        weighted.push(Contribution {
            ngram: ngram.to_vec(),
            weight,
            cover: 1.0,
        });
    }
    weighted.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.ngram.cmp(&b.ngram)));
    let covered: BTreeSet<u32> = weighted
        .iter()
        .take(params.g)
        .flat_map(|c| c.ngram.iter().copied())
        .collect();
    for c in &mut weighted {
        c.cover = coverage_factor(&c.ngram, &covered, params.beta);
    }
    Ok(weighted)
}

/// Scores every context containing at least one generated n-gram and
/// returns the best `limit`, by score descending then context id.
pub fn rank_contexts(
    index: &FmIndex,
    k: &GeneratedSet,
    params: &ScoringParams,
    limit: usize,
) -> Result<Vec<ScoredContext>> {
    let weighted = weigh_generated(index, k, params)?;
    let mut by_context: BTreeMap<u32, Vec<Contribution>> = BTreeMap::new();
    for c in &weighted {
        for id in index.locate_contexts(&c.ngram, None)? {
            by_context.entry(id).or_default().push(c.clone());
        }
    }
    let mut out: Vec<ScoredContext> = by_context
        .into_iter()
        .map(|(context_id, contributors)| ScoredContext {
            context_id,
            score: contributors.iter().map(|c| c.value(params.alpha)).sum(),
            contributors,
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.context_id.cmp(&b.context_id)));
    out.truncate(limit);
    Ok(out)
}
