//! N-gram identifiers: token importance to span importance, positional
//! aggregation and saturation, a softmax distribution over distinct
//! n-grams, and sampling of each context's identifier set.

mod weights;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Granularity, TokenizedCorpus};
use crate::error::{Error, Result};

pub use weights::{
    surrogate_weights, DocFreqs, ExternalFileProvider, ProviderBuilder, ProviderInputs, ProviderRegistry, ProviderTag,
    SurrogateProvider, TokenWeightVector, WeightProvider, WeightRecord, OVERLAP_BONUS,
};

/// Mean token weight of every length-`n` window, keyed by start position.
/// A context shorter than `n` yields one span covering all of it.
pub fn span_importance(weights: &[f64], n: usize) -> Result<BTreeMap<usize, f64>> {
    if n == 0 {
        return Err(Error::Identifier("n-gram length must be at least 1".into()));
    }
    if weights.is_empty() {
        return Err(Error::Identifier("context has no tokens".into()));
    }
    let width = n.min(weights.len());
    Ok(weights
        .windows(width)
        .enumerate()
        .map(|(j, w)| (j, w.iter().sum::<f64>() / width as f64))
        .collect())
}

/// Saturation `x / (rho + x)`.
pub fn saturate(importance: f64, rho: f64) -> f64 {
    importance / (rho + importance)
}

/// Sums span importance over every position of the same n-gram, then
/// saturates. `spans` must come from [`span_importance`] with the same `n`.
pub fn aggregate_saturate(
    spans: &BTreeMap<usize, f64>,
    tokens: &[u32],
    n: usize,
    rho: f64,
) -> Result<BTreeMap<Vec<u32>, f64>> {
    if rho.is_nan() || rho <= 0.0 {
        return Err(Error::Identifier(format!("rho must be positive, got {rho}")));
    }
    let width = n.min(tokens.len());
    let mut summed: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for (&start, &w) in spans {
        let gram = tokens
            .get(start..start + width)
            .ok_or_else(|| Error::Identifier(format!("span {start} outside the context")))?;
        *summed.entry(gram.to_vec()).or_insert(0.0) += w;
    }
    Ok(summed.into_iter().map(|(g, total)| (g, saturate(total, rho))).collect())
}

/// Softmax over distinct n-grams of one context.
#[derive(Clone, Debug, PartialEq)]
pub struct NgramDistribution {
    pub context_id: u32,
    /// Ascending by n-gram.
    pub entries: Vec<(Vec<u32>, f64)>,
    pub saturation_rho: f64,
}

impl NgramDistribution {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }
}

pub fn ngram_distribution(context_id: u32, saturated: &BTreeMap<Vec<u32>, f64>, rho: f64) -> Result<NgramDistribution> {
    if saturated.is_empty() {
        return Err(Error::Identifier(format!("context {context_id} has no n-grams")));
    }
    let max = saturated.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = saturated.values().map(|&s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let entries = saturated.keys().cloned().zip(exps.into_iter().map(|e| e / z)).collect();
    Ok(NgramDistribution {
        context_id,
        entries,
        saturation_rho: rho,
    })
}

/// The `v` n-grams standing for one context.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifierSet {
    pub context_id: u32,
    pub ngrams: Vec<Vec<u32>>,
    pub v: usize,
    pub n: usize,
}

/// Draws `v` distinct n-grams without replacement, each draw proportional
/// to the remaining probability mass.
pub fn sample_identifiers(dist: &NgramDistribution, v: usize, n: usize, seed: u64) -> Result<IdentifierSet> {
    if v == 0 {
        return Err(Error::Identifier("v must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<(&Vec<u32>, f64)> = dist.entries.iter().map(|(g, p)| (g, *p)).collect();
    let mut picked = Vec::with_capacity(v.min(pool.len()));
    while picked.len() < v && !pool.is_empty() {
        let total: f64 = pool.iter().map(|(_, p)| p).sum();
        let idx = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = pool.len() - 1;
            for (i, (_, p)) in pool.iter().enumerate() {
                if u < *p {
                    chosen = i;
                    break;
                }
                u -= p;
            }
            chosen
        } else {
            rng.gen_range(0..pool.len())
        };
        picked.push(pool.remove(idx).0.clone());
    }
    Ok(IdentifierSet {
        context_id: dist.context_id,
        ngrams: picked,
        v,
        n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifierParams {
    pub n: usize,
    pub v: usize,
    pub rho: f64,
    pub seed: u64,
}

impl Default for IdentifierParams {
    fn default() -> Self {
        Self {
            n: 10,
            v: 10,
            rho: 0.01,
            seed: 0,
        }
    }
}

/// Full pipeline for one context: spans, aggregation, distribution,
/// sampling with seed `params.seed ^ context_id`.
pub fn identifier_set_for(
    weights: &TokenWeightVector,
    tokens: &[u32],
    params: &IdentifierParams,
) -> Result<IdentifierSet> {
    weights.validate(tokens.len())?;
    let spans = span_importance(&weights.weights, params.n)?;
    let sat = aggregate_saturate(&spans, tokens, params.n, params.rho)?;
    let dist = ngram_distribution(weights.context_id, &sat, params.rho)?;
    sample_identifiers(&dist, params.v, params.n, params.seed ^ weights.context_id as u64)
}

/// Identifier sets for every context of a corpus. `queries` supplies the
/// training query tokens known for a context, if any.
pub fn build_identifiers(
    corpus: &TokenizedCorpus,
    provider: &dyn WeightProvider,
    params: &IdentifierParams,
    queries: &HashMap<u32, Vec<u32>>,
) -> Result<Vec<IdentifierSet>> {
    (0..corpus.num_contexts())
        .map(|i| {
            let id = i as u32;
            let tokens = corpus.context_tokens(i);
            let query = queries.get(&id).map(Vec::as_slice).unwrap_or(&[]);
            let w = provider.weights(id, tokens, query)?;
            identifier_set_for(&w, tokens, params)
        })
        .collect()
}

/// Entities are identified by their full title.
pub fn entity_identifiers(titles: &TokenizedCorpus) -> Result<Vec<IdentifierSet>> {
    if titles.granularity != Granularity::Entity {
        return Err(Error::Identifier("entity identifiers need a title stream".into()));
    }
    Ok((0..titles.num_contexts())
        .map(|i| {
            let t = titles.context_tokens(i).to_vec();
            IdentifierSet {
                context_id: i as u32,
                n: t.len(),
                ngrams: vec![t],
                v: 1,
            }
        })
        .collect())
}

/// Fraction of contexts sharing at least one identifier n-gram with a
/// different context.
pub fn repetition_rate(sets: &[IdentifierSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::Identifier("repetition rate of zero identifier sets".into()));
    }
    let mut owners: HashMap<&[u32], BTreeSet<u32>> = HashMap::new();
    for s in sets {
        for g in &s.ngrams {
            owners.entry(g.as_slice()).or_default().insert(s.context_id);
        }
    }
    let repeated = sets
        .iter()
        .filter(|s| s.ngrams.iter().any(|g| owners[g.as_slice()].len() > 1))
        .count();
    Ok(repeated as f64 / sets.len() as f64)
}

/// One line of the identifier file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifierRecord {
    pub context_id: u32,
    pub ngrams: Vec<Vec<u32>>,
}

pub fn write_identifiers<W: Write>(mut out: W, sets: &[IdentifierSet]) -> Result<()> {
    for s in sets {
        let rec = IdentifierRecord {
            context_id: s.context_id,
            ngrams: s.ngrams.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_identifiers<R: BufRead>(reader: R) -> Result<BTreeMap<u32, Vec<Vec<u32>>>> {
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IdentifierRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.insert(rec.context_id, rec.ngrams);
    }
    Ok(out)
}
