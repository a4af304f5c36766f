//! R-precision over run files, identifier length/count sweeps, and a
//! memory/latency benchmark.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedCorpus;
use crate::error::{Error, Result};
use crate::identifiers::{build_identifiers, repetition_rate, IdentifierParams, WeightProvider};
use crate::model::{save_model, ModelFactory, ModelParams, SequenceModel};
use crate::pipeline::{retrieve, IndexBundle, RetrievalParams, RunRecord};
use crate::prompts::{compile_mixture, QueryRecord, Task};

/// Gold contexts of one query, as read from a provenance file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub query_id: String,
    pub gold: Vec<u32>,
}

pub type ProvenanceMap = BTreeMap<String, BTreeSet<u32>>;

fn read_jsonl<T: serde::de::DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_provenance<R: BufRead>(reader: R) -> Result<ProvenanceMap> {
    let mut out = ProvenanceMap::new();
    for p in read_jsonl::<Provenance, _>(reader)? {
        if p.gold.is_empty() {
            return Err(Error::Eval(format!("query {} has an empty provenance set", p.query_id)));
        }
        out.entry(p.query_id).or_default().extend(p.gold);
    }
    Ok(out)
}

/// Provenance implied by the gold field of a queries file.
pub fn provenance_from_queries(queries: &[QueryRecord]) -> ProvenanceMap {
    queries
        .iter()
        .filter(|q| !q.gold.is_empty())
        .map(|q| (q.query_id.clone(), q.gold.iter().copied().collect()))
        .collect()
}

pub fn write_run<W: Write>(mut out: W, records: &[RunRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_run<R: BufRead>(reader: R) -> Result<Vec<RunRecord>> {
    read_jsonl(reader)
}

/// `|top-R ∩ gold| / R` with `R = |gold|`.
pub fn r_precision(ranked: &[u32], gold: &BTreeSet<u32>) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Eval("R-precision with an empty gold set".into()));
    }
    let r = gold.len();
    let hits = ranked.iter().take(r).filter(|c| gold.contains(c)).count();
    Ok(hits as f64 / r as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: String,
    pub task: Task,
    pub r_precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: Task,
    pub queries: usize,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub queries: usize,
    pub mean: f64,
    pub per_task: Vec<TaskSummary>,
    pub per_query: Vec<QueryScore>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset: {}", self.dataset);
        let _ = writeln!(s, "queries: {}", self.queries);
        let _ = writeln!(s, "R-precision: {:.2}", 100.0 * self.mean);
        for t in &self.per_task {
            let _ = writeln!(s, "  {}: {:.2} over {} queries", t.task, 100.0 * t.mean, t.queries);
        }
        s
    }
}

/// Macro-averaged R-precision. Every query in the run needs provenance.
pub fn evaluate_run(runs: &[RunRecord], provenance: &ProvenanceMap, dataset: &str) -> Result<EvalReport> {
    let missing: Vec<&str> = runs
        .iter()
        .filter(|r| !provenance.contains_key(&r.query_id))
        .map(|r| r.query_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Eval(format!(
            "no provenance for queries: {}",
            missing.join(", ")
        )));
    }
    let mut per_query = Vec::with_capacity(runs.len());
    for r in runs {
        let mut seen = BTreeSet::new();
        let ranked: Vec<u32> = r
            .ranked
            .iter()
            .map(|c| c.context_id)
            .filter(|c| seen.insert(*c))
            .collect();
        per_query.push(QueryScore {
            query_id: r.query_id.clone(),
            task: r.task,
            r_precision: r_precision(&ranked, &provenance[&r.query_id])?,
        });
    }
    let per_task = Task::ALL
        .iter()
        .filter_map(|&task| {
            let scores: Vec<f64> = per_query
                .iter()
                .filter(|q| q.task == task)
                .map(|q| q.r_precision)
                .collect();
            (!scores.is_empty()).then(|| TaskSummary {
                task,
                queries: scores.len(),
                mean: mean(scores.into_iter()),
            })
        })
        .collect();
    Ok(EvalReport {
        dataset: dataset.to_string(),
        queries: per_query.len(),
        mean: mean(per_query.iter().map(|q| q.r_precision)),
        per_task,
        per_query,
    })
}

/// Memory, parameter and time columns for one index/model pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub index_bytes: usize,
    pub model_bytes: usize,
    /// Index and model structures held in memory while serving.
    pub resident_bytes: usize,
    pub model_parameters: usize,
    pub index_rows: usize,
    pub queries: usize,
    pub repetitions: usize,
    pub beam_width: usize,
    pub steps: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
}

impl BenchReport {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "memory: {} index bytes on disk, {} model bytes, ~{} bytes resident",
            self.index_bytes, self.model_bytes, self.resident_bytes
        );
        let _ = writeln!(
            s,
            "parameters: {} model table entries, {} index rows",
            self.model_parameters, self.index_rows
        );
        let _ = writeln!(
            s,
            "time: {:.3} ms mean, {:.3} ms median per query ({} queries x {} repetitions, B={}, T={})",
            self.mean_ms, self.median_ms, self.queries, self.repetitions, self.beam_width, self.steps
        );
        s
    }
}

pub const MIN_BENCH_QUERIES: usize = 10;

/// Times decode plus rank for every query, `repetitions` times after one
/// warm-up pass. Queries without a task use `default_task`.
pub fn bench(
    bundle: &IndexBundle,
    model: &dyn SequenceModel,
    queries: &[QueryRecord],
    default_task: Task,
    params: &RetrievalParams,
    repetitions: usize,
) -> Result<BenchReport> {
    if queries.len() < MIN_BENCH_QUERIES {
        return Err(Error::Eval(format!(
            "bench needs at least {MIN_BENCH_QUERIES} queries, got {}",
            queries.len()
        )));
    }
    if repetitions == 0 {
        return Err(Error::Eval("bench needs at least one repetition".into()));
    }
    let run_all = |times: Option<&mut Vec<f64>>| -> Result<()> {
        let mut times = times;
        for q in queries {
            let start = Instant::now();
            retrieve(
                bundle,
                model,
                q.task.unwrap_or(default_task),
                &q.query_id,
                &q.text,
                params,
            )?;
            if let Some(t) = times.as_deref_mut() {
                t.push(start.elapsed().as_secs_f64() * 1e3);
            }
        }
        Ok(())
    };
    run_all(None)?;
    let mut times = Vec::with_capacity(queries.len() * repetitions);
    for _ in 0..repetitions {
        run_all(Some(&mut times))?;
    }
    times.sort_by(f64::total_cmp);
    let median = if times.len() % 2 == 1 {
        times[times.len() / 2]
    } else {
        (times[times.len() / 2 - 1] + times[times.len() / 2]) / 2.0
    };
    let model_bytes = save_model(model).len();
    Ok(BenchReport {
        index_bytes: bundle.to_bytes().len(),
        model_bytes,
        resident_bytes: bundle.heap_bytes() + model_bytes,
        model_parameters: model.parameter_count(),
        index_rows: bundle.index.len(),
        queries: queries.len(),
        repetitions,
        beam_width: params.decode.beam_width,
        steps: params.decode.steps,
        mean_ms: mean(times.iter().copied()),
        median_ms: median,
    })
}

/// Everything a sweep holds fixed while `n` and `v` vary.
pub struct SweepInputs<'a> {
    pub bundle: &'a IndexBundle,
    pub corpus: &'a TokenizedCorpus,
    pub provider: &'a dyn WeightProvider,
    pub task: Task,
    /// Queries compiled into the training mixture; their tokens also feed
    /// the weight provider.
    pub train: &'a [QueryRecord],
    /// Queries scored at every point.
    pub eval: &'a [QueryRecord],
    /// Model retrained at every point; without one only repetition rates
    /// are reported.
    pub factory: Option<&'a dyn ModelFactory>,
    pub model_params: ModelParams,
    pub retrieval: RetrievalParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub v: usize,
    pub repetition_rate: f64,
    pub r_precision: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub task: Task,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task: {}", self.task);
        let _ = writeln!(s, "{:>4} {:>4} {:>11} {:>12}", "n", "v", "repetition", "R-precision");
        for p in &self.points {
            let r = p
                .r_precision
                .map_or_else(|| "-".to_string(), |r| format!("{:.2}", 100.0 * r));
            let _ = writeln!(s, "{:>4} {:>4} {:>11.4} {:>12}", p.n, p.v, p.repetition_rate, r);
        }
        s
    }
}

/// Rebuilds identifiers for every `(n, v)` in `grid` and reports their
/// repetition rate and, when a factory is given, the R-precision of a model
/// trained on them.
pub fn sweep(inputs: &SweepInputs<'_>, grid: &[(usize, usize)], base: &IdentifierParams) -> Result<SweepReport> {
    if inputs.task == Task::ER {
        return Err(Error::Eval(
            "entity identifiers are whole titles; there is no n or v to sweep".into(),
        ));
    }
    if grid.is_empty() {
        return Err(Error::Eval("empty sweep grid".into()));
    }
    let tokenizer = &inputs.bundle.tokenizer;
    let mut query_tokens: HashMap<u32, Vec<u32>> = HashMap::new();
    for q in inputs.train {
        let toks = tokenizer.encode(&q.text);
        for &g in &q.gold {
            query_tokens.entry(g).or_default().extend(&toks);
        }
    }
    let provenance = provenance_from_queries(inputs.eval);
    let mut points = Vec::with_capacity(grid.len());
    for &(n, v) in grid {
        let params = IdentifierParams { n, v, ..*base };
        let sets = build_identifiers(inputs.corpus, inputs.provider, &params, &query_tokens)?;
        let rate = repetition_rate(&sets)?;
        let r_precision = match inputs.factory {
            None => None,
            Some(factory) => {
                let identifiers = sets.into_iter().map(|s| (s.context_id, s.ngrams)).collect();
                let mixture = compile_mixture(inputs.train, inputs.task, &identifiers, tokenizer)?;
                let model = factory.train(&mixture, inputs.corpus, &inputs.model_params)?;
                let runs = inputs
                    .eval
                    .iter()
                    .map(|q| {
                        let task = q.task.unwrap_or(inputs.task);
                        retrieve(
                            inputs.bundle,
                            model.as_ref(),
                            task,
                            &q.query_id,
                            &q.text,
                            &inputs.retrieval,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(evaluate_run(&runs, &provenance, "sweep")?.mean)
            }
        };
        points.push(SweepPoint {
            n,
            v,
            repetition_rate: rate,
            r_precision,
        });
    }
    Ok(SweepReport {
        task: inputs.task,
        points,
    })
}
