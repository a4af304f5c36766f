use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ngramdex_core::config::PipelineConfig;
use ngramdex_core::corpus::{
    ingest, read_corpus_file, tokenize_corpus, write_corpus_file, Granularity, NormalizationRules, TokenizedCorpus,
    Tokenizer,
};
use ngramdex_core::decoder::allowed_next;
use ngramdex_core::eval::{
    bench, evaluate_run, provenance_from_queries, read_provenance, read_run, sweep, write_run, SweepInputs,
};
use ngramdex_core::identifiers::{
    build_identifiers, entity_identifiers, read_identifiers, repetition_rate, write_identifiers, ProviderInputs,
    ProviderRegistry,
};
use ngramdex_core::model::{save_model, ModelRegistry, SequenceModel};
use ngramdex_core::pipeline::{retrieve, title_corpus, IndexBundle};
use ngramdex_core::prompts::{
    compile_mixture, prompt_texts, read_mixture, read_queries, write_mixture, QueryRecord, Task,
};
use ngramdex_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ngramdex",
    version,
    about = "Generative retrieval with n-gram identifiers over an FM-index"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Pipeline config file (TOML). Falls back to $NGRAMDEX_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for identifier sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk and tokenize a JSONL source into a corpus file.
    Ingest(IngestArgs),
    /// Build the FM-index bundle from a corpus file.
    BuildIndex(BuildIndexArgs),
    /// Sample identifier n-grams for every context.
    BuildIdentifiers(BuildIdentifiersArgs),
    /// Expand prompted queries into a training mixture.
    CompileTraining(CompileTrainingArgs),
    /// Fit a next-token model on a training mixture.
    TrainModel(TrainModelArgs),
    /// Decode and rank contexts for every query.
    Retrieve(RetrieveArgs),
    /// Score a run file with R-precision.
    Evaluate(EvaluateArgs),
    /// Report memory, parameter counts and per-query latency.
    Bench(BenchArgs),
    /// Show match range, count, successors and contexts of an n-gram.
    Inspect(InspectArgs),
    /// Repetition rate and R-precision over a grid of identifier n and v.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    granularity: Granularity,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    passage_tokens: Option<usize>,
    #[arg(long)]
    splitter: Option<String>,
}

#[derive(Args)]
struct BuildIndexArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sample_rate: Option<usize>,
}

#[derive(Args)]
struct BuildIdentifiersArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    v: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// Token-weight provider: surrogate or file.
    #[arg(long)]
    provider: Option<String>,
    /// Per-context token weights for the file provider.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Training queries whose tokens inform the surrogate weights.
    #[arg(long)]
    queries: Option<PathBuf>,
}

#[derive(Args)]
struct CompileTrainingArgs {
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    identifiers: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainModelArgs {
    #[arg(long)]
    mixture: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model kind: count, oracle or uniform.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    beams: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: Option<PathBuf>,
    /// Provenance JSONL; a queries file with gold ids also works.
    #[arg(long)]
    provenance: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// Machine-readable report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long)]
    beams: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    /// N-gram text, tokenized with the index vocabulary.
    #[arg(long, conflicts_with = "tokens")]
    ngram: Option<String>,
    /// N-gram as comma-separated token ids.
    #[arg(long, value_delimiter = ',')]
    tokens: Option<Vec<u32>>,
    /// Search the title index of an entity bundle.
    #[arg(long)]
    titles: bool,
    #[arg(long, default_value_t = 20)]
    max_contexts: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    /// Training queries with gold ids.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Queries scored at each point; defaults to the training queries.
    #[arg(long)]
    eval_queries: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    /// Identifier lengths, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    ns: Vec<usize>,
    /// Identifiers per context, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    vs: Vec<usize>,
    /// Model kind retrained at every point.
    #[arg(long, conflicts_with = "rates_only")]
    kind: Option<String>,
    /// Report repetition rates without training or retrieval.
    #[arg(long)]
    rates_only: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn pick(flag: Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| Error::Config(format!("missing --{name} (or paths.{name} in the config)")))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn load_corpus(path: &Path) -> Result<(Tokenizer, TokenizedCorpus)> {
    read_corpus_file(&read_bytes(path)?)
}

fn load_model(path: &Path) -> Result<Box<dyn SequenceModel>> {
    ModelRegistry::default().load(&read_bytes(path)?)
}

fn load_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    read_queries(open(path)?)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::resolve(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Ingest(a) => {
            if let Some(p) = a.passage_tokens {
                cfg.chunking.passage_tokens = p;
            }
            if let Some(s) = a.splitter {
                cfg.chunking.sentence_splitter = s;
            }
            let out = pick(a.out, &cfg.paths.corpus, "out")?;
            let contexts = ingest(open(&a.source)?, a.granularity, &cfg.chunking)?;
            let mut tok = Tokenizer::new(NormalizationRules::default());
            tok.fit(prompt_texts());
            tok.fit(contexts.iter().map(|c| c.text.as_str()));
            tok.fit(contexts.iter().filter_map(|c| c.title.as_deref()));
            let tc = tokenize_corpus(&contexts, &tok)?;
            std::fs::write(&out, write_corpus_file(&tok, &tc))?;
            println!(
                "{} {} contexts, {} tokens, vocabulary {}",
                tc.num_contexts(),
                tc.granularity,
                tc.stream.len(),
                tok.vocab_size()
            );
        }
        Command::BuildIndex(a) => {
            if let Some(s) = a.sample_rate {
                cfg.index.sample_rate = s;
            }
            let corpus = pick(a.corpus, &cfg.paths.corpus, "corpus")?;
            let out = pick(a.out, &cfg.paths.index, "out")?;
            let (tok, tc) = load_corpus(&corpus)?;
            let bundle = IndexBundle::build(tok, &tc, cfg.index)?;
            let bytes = bundle.to_bytes();
            std::fs::write(&out, &bytes)?;
            println!("index: {} rows, {} bytes", bundle.index.len(), bytes.len());
        }
        Command::BuildIdentifiers(a) => {
            let corpus = pick(a.corpus, &cfg.paths.corpus, "corpus")?;
            let out = pick(a.out, &cfg.paths.identifiers, "out")?;
            let (tok, tc) = load_corpus(&corpus)?;
            cfg.task = a.task.unwrap_or_else(|| Task::for_granularity(tc.granularity));
            if let Some(n) = a.n {
                cfg.identifiers.n = n;
            }
            if a.v.is_some() {
                cfg.identifiers.v = a.v;
            }
            if let Some(r) = a.rho {
                cfg.identifiers.rho = r;
            }
            if let Some(p) = a.provider {
                cfg.identifiers.provider = p;
            }
            cfg.validate()?;
            let sets = if cfg.task == Task::ER {
                entity_identifiers(&title_corpus(&tc, &tok)?)?
            } else {
                let weights = a.weights.or(cfg.paths.weights.clone());
                let provider = ProviderRegistry::default().build(
                    &cfg.identifiers.provider,
                    &ProviderInputs {
                        corpus: &tc,
                        weight_file: weights.as_deref(),
                    },
                )?;
                let mut query_tokens: HashMap<u32, Vec<u32>> = HashMap::new();
                if let Some(q) = a.queries.or(cfg.paths.queries.clone()) {
                    for rec in load_queries(&q)? {
                        let toks = tok.encode(&rec.text);
                        for g in rec.gold {
                            query_tokens.entry(g).or_default().extend(&toks);
                        }
                    }
                }
                build_identifiers(&tc, provider.as_ref(), &cfg.identifier_params(), &query_tokens)?
            };
            write_with(&out, |w| write_identifiers(w, &sets))?;
            println!(
                "{} identifier sets, repetition rate {:.4}",
                sets.len(),
                repetition_rate(&sets)?
            );
        }
        Command::CompileTraining(a) => {
            let queries = pick(a.queries, &cfg.paths.queries, "queries")?;
            let ids = pick(a.identifiers, &cfg.paths.identifiers, "identifiers")?;
            let corpus = pick(a.corpus, &cfg.paths.corpus, "corpus")?;
            let out = pick(a.out, &cfg.paths.mixture, "out")?;
            let (tok, tc) = load_corpus(&corpus)?;
            let task = a.task.unwrap_or_else(|| Task::for_granularity(tc.granularity));
            let identifiers = read_identifiers(open(&ids)?)?;
            let mixture = compile_mixture(&load_queries(&queries)?, task, &identifiers, &tok)?;
            write_with(&out, |w| write_mixture(w, &mixture))?;
            println!("{} training records", mixture.len());
        }
        Command::TrainModel(a) => {
            if let Some(k) = a.kind {
                cfg.model.kind = k;
            }
            if let Some(l) = a.lambda {
                cfg.model.lambda = l;
            }
            if let Some(m) = a.mu {
                cfg.model.mu = m;
            }
            let mixture = pick(a.mixture, &cfg.paths.mixture, "mixture")?;
            let corpus = pick(a.corpus, &cfg.paths.corpus, "corpus")?;
            let out = pick(a.out, &cfg.paths.model, "out")?;
            let (_, tc) = load_corpus(&corpus)?;
            let records = read_mixture(open(&mixture)?)?;
            let model = ModelRegistry::default().train(&cfg.model.kind, &records, &tc, &cfg.model_params())?;
            let bytes = save_model(model.as_ref());
            std::fs::write(&out, &bytes)?;
            println!(
                "{} model: {} parameters, {} bytes",
                model.kind(),
                model.parameter_count(),
                bytes.len()
            );
        }
        Command::Retrieve(a) => {
            apply_decode(&mut cfg, a.beams, a.steps);
            if let Some(l) = a.limit {
                cfg.limit = l;
            }
            cfg.validate()?;
            let index = pick(a.index, &cfg.paths.index, "index")?;
            let model = pick(a.model, &cfg.paths.model, "model")?;
            let queries = pick(a.queries, &cfg.paths.queries, "queries")?;
            let out = pick(a.out, &cfg.paths.run, "out")?;
            let bundle = IndexBundle::from_bytes(&read_bytes(&index)?)?;
            let model = load_model(&model)?;
            let default_task = a.task.unwrap_or_else(|| Task::for_granularity(bundle.granularity));
            let params = cfg.retrieval_params();
            let mut runs = Vec::new();
            for q in load_queries(&queries)? {
                let task = a.task.or(q.task).unwrap_or(default_task);
                runs.push(retrieve(&bundle, model.as_ref(), task, &q.query_id, &q.text, &params)?);
            }
            write_with(&out, |w| write_run(w, &runs))?;
            println!("{} queries retrieved", runs.len());
        }
        Command::Evaluate(a) => {
            let run_path = pick(a.run, &cfg.paths.run, "run")?;
            let prov = pick(a.provenance, &cfg.paths.provenance, "provenance")?;
            let runs = read_run(open(&run_path)?)?;
            let provenance = match read_provenance(open(&prov)?) {
                Ok(p) => p,
                Err(_) => provenance_from_queries(&load_queries(&prov)?),
            };
            let dataset = a.dataset.unwrap_or_else(|| {
                run_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            let report = evaluate_run(&runs, &provenance, &dataset)?;
            print!("{}", report.render_text());
            if let Some(out) = a.out.or(cfg.paths.report.clone()) {
                write_with(&out, |w| {
                    serde_json::to_writer_pretty(&mut *w, &report)?;
                    w.write_all(b"\n")?;
                    Ok(())
                })?;
            }
        }
        Command::Bench(a) => {
            apply_decode(&mut cfg, a.beams, a.steps);
            cfg.validate()?;
            let index = pick(a.index, &cfg.paths.index, "index")?;
            let model = pick(a.model, &cfg.paths.model, "model")?;
            let queries = pick(a.queries, &cfg.paths.queries, "queries")?;
            let bundle = IndexBundle::from_bytes(&read_bytes(&index)?)?;
            let model = load_model(&model)?;
            let task = a.task.unwrap_or_else(|| Task::for_granularity(bundle.granularity));
            let queries = load_queries(&queries)?;
            let report = bench(
                &bundle,
                model.as_ref(),
                &queries,
                task,
                &cfg.retrieval_params(),
                a.repetitions,
            )?;
            print!("{}", report.render_text());
            if let Some(out) = a.out {
                write_with(&out, |w| {
                    serde_json::to_writer_pretty(&mut *w, &report)?;
                    w.write_all(b"\n")?;
                    Ok(())
                })?;
            }
        }
        Command::Inspect(a) => {
            let index = pick(a.index, &cfg.paths.index, "index")?;
            let bundle = IndexBundle::from_bytes(&read_bytes(&index)?)?;
            let ngram = match (a.tokens, a.ngram) {
                (Some(t), _) => t,
                (None, Some(text)) => bundle.tokenizer.encode(&text),
                (None, None) => return Err(Error::Config("inspect needs --ngram or --tokens".into())),
            };
            let idx = if a.titles {
                bundle
                    .titles
                    .as_ref()
                    .ok_or_else(|| Error::Config("this bundle has no title index".into()))?
            } else {
                &bundle.index
            };
            let tok = &bundle.tokenizer;
            println!("ngram: {:?} ({})", ngram, tok.detokenize(&ngram));
            let range = idx.find(&ngram)?;
            println!("range: [{}, {})", range.lo, range.hi);
            println!("count: {}", range.len());
            if range.is_empty() {
                return Ok(());
            }
            let step = allowed_next(idx, range, ngram.len())?;
            println!("successors: {}", step.tokens.len());
            for (t, r) in step.tokens.iter().zip(&step.ranges) {
                println!("  {t} {} [{}, {}) x{}", tok.detokenize(&[*t]), r.lo, r.hi, r.len());
            }
            let ctx = idx.locate_contexts(&ngram, Some(a.max_contexts))?;
            let shown: Vec<String> = ctx
                .iter()
                .map(|&c| match bundle.contexts.get(c as usize) {
                    Some(m) => format!("{c} ({})", m.source_doc_id),
                    None => c.to_string(),
                })
                .collect();
            println!("contexts: {}", shown.join(", "));
        }
        Command::Sweep(a) => {
            let corpus = pick(a.corpus, &cfg.paths.corpus, "corpus")?;
            let index = pick(a.index, &cfg.paths.index, "index")?;
            let queries = pick(a.queries, &cfg.paths.queries, "queries")?;
            let (_, tc) = load_corpus(&corpus)?;
            let bundle = IndexBundle::from_bytes(&read_bytes(&index)?)?;
            cfg.task = a.task.unwrap_or_else(|| Task::for_granularity(tc.granularity));
            cfg.validate()?;
            let train = load_queries(&queries)?;
            let eval = match a.eval_queries {
                Some(p) => load_queries(&p)?,
                None => train.clone(),
            };
            let provider = ProviderRegistry::default().build(
                &cfg.identifiers.provider,
                &ProviderInputs {
                    corpus: &tc,
                    weight_file: cfg.paths.weights.as_deref(),
                },
            )?;
            let registry = ModelRegistry::default();
            let factory = if a.rates_only {
                None
            } else {
                Some(registry.get(a.kind.as_deref().unwrap_or(&cfg.model.kind))?)
            };
            let inputs = SweepInputs {
                bundle: &bundle,
                corpus: &tc,
                provider: provider.as_ref(),
                task: cfg.task,
                train: &train,
                eval: &eval,
                factory,
                model_params: cfg.model_params(),
                retrieval: cfg.retrieval_params(),
            };
            let grid: Vec<(usize, usize)> = a.ns.iter().flat_map(|&n| a.vs.iter().map(move |&v| (n, v))).collect();
            let report = sweep(&inputs, &grid, &cfg.identifier_params())?;
            print!("{}", report.render_text());
            if let Some(out) = a.out {
                write_with(&out, |w| {
                    serde_json::to_writer_pretty(&mut *w, &report)?;
                    w.write_all(b"\n")?;
                    Ok(())
                })?;
            }
        }
    }
    Ok(())
}

fn apply_decode(cfg: &mut PipelineConfig, beams: Option<usize>, steps: Option<usize>) {
    if let Some(b) = beams {
        cfg.decode.beam_width = b;
    }
    if let Some(s) = steps {
        cfg.decode.steps = s;
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(1)
        }
    }
}
