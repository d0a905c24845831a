use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use kgqa_core::embeddings::EmbeddingStore;
use kgqa_core::eval::{similarity_curves, write_curves_csv};
use kgqa_core::ingest::{
    apply_split, load_beams, load_dataset, load_split, load_training, make_training_file,
    DatasetKind,
};
use kgqa_core::label_index::{read_label_records, Bm25Params, LabelIndex};
use kgqa_core::mini_kg::{to_results_json, EndpointClient, KgError, KnowledgeGraph, TripleStore};
use kgqa_core::pipeline::{
    answer_question, render_sweep_table, run_batch, sweep, write_batch_outputs, PipelineConfig,
    Stores,
};
use kgqa_core::relation_match::{candidates_for_label, QueryVectors, RelationCatalog};
use kgqa_core::synthetic::{SyntheticConfig, World};
use kgqa_core::LayerPolicy;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_UNREACHABLE: u8 = 3;

#[derive(Parser)]
#[command(name = "kgqa", version, about = "Ground skeleton SPARQL queries against a knowledge graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or query the entity label index.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Convert entity embeddings to the binary store.
    #[command(subcommand)]
    Embed(EmbedCmd),
    /// Rank KG properties for a relation label.
    #[command(subcommand)]
    Rel(RelCmd),
    /// Load or query a knowledge graph.
    #[command(subcommand)]
    Kg(KgCmd),
    /// Turn a dataset into question/skeleton training pairs.
    Preprocess(PreprocessArgs),
    /// Answer one question from its beams.
    Answer(AnswerArgs),
    /// Answer and score a dataset.
    Run(RunArgs),
    /// Evaluation commands.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Run every candidate-ordering policy over a dataset.
    Sweep(RunArgs),
    /// Per-epoch embedding similarity between generated and gold skeletons.
    Curves(CurvesArgs),
    /// Write a seeded synthetic world (stores, dataset and beams).
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum IndexCmd {
    Build {
        /// `<id>\t<label>` lines.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Search {
        /// Index directory or labels TSV.
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(short, long, default_value_t = 100)]
        k: usize,
    },
}

#[derive(Subcommand)]
enum EmbedCmd {
    Build {
        /// `<id>\t<v1> ... <v200>` lines.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum RelCmd {
    Match {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        query_vectors: Option<PathBuf>,
        #[arg(long)]
        label: String,
        #[arg(short, long, default_value_t = 3)]
        k: usize,
    },
}

#[derive(Subcommand)]
enum KgCmd {
    /// Parse triple files and write them as N-Triples.
    Load {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Query {
        #[command(flatten)]
        kg: KgArgs,
        #[arg(long)]
        query: String,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Same as `run`.
    Run(RunArgs),
}

#[derive(Args, Clone)]
struct KgArgs {
    /// `local:<file>[,<file>...]` for an in-process store, or an endpoint URL.
    #[arg(long, env = "KGQA_ENDPOINT")]
    kg: String,
    /// Per-request timeout for endpoints, in seconds.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
}

#[derive(Args, Clone)]
struct StoreArgs {
    /// Index directory or labels TSV.
    #[arg(long)]
    labels: PathBuf,
    /// Binary embedding store or `.txt` text embeddings.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    relations: PathBuf,
    #[arg(long)]
    query_vectors: Option<PathBuf>,
    #[command(flatten)]
    kg: KgArgs,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Candidate ordering, e.g. `3LS+3TS`.
    #[arg(long)]
    policy: Option<LayerPolicy>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    count_zero_is_empty: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(policy) = self.policy {
            config.layer_policy = policy;
        }
        if let Some(w) = self.workers {
            config.workers = w;
        }
        if self.count_zero_is_empty {
            config.count_zero_is_empty = true;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "lcquad2")]
    kind: DatasetKind,
    #[arg(long)]
    labels: PathBuf,
    /// `<id>\t<label>\t<vector>` relation catalog.
    #[arg(long)]
    relations: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the list of skipped records (JSON).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct AnswerArgs {
    #[arg(long, default_value = "q")]
    qid: String,
    /// Skeleton query, best beam first; repeat for more beams.
    #[arg(long = "beam", required = true)]
    beams: Vec<String>,
    #[command(flatten)]
    stores: StoreArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "lcquad2")]
    kind: DatasetKind,
    #[arg(long)]
    beams: PathBuf,
    /// Only evaluate the qids listed in this file.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Skip writing `traces.jsonl`.
    #[arg(long)]
    no_traces: bool,
    #[command(flatten)]
    stores: StoreArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct CurvesArgs {
    /// Training pairs with gold skeletons.
    #[arg(long)]
    gold: PathBuf,
    /// `<name>=<beams file>`, one per epoch, in order.
    #[arg(long = "epoch", required = true)]
    epochs: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    questions: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// An error that is the caller's fault rather than the data's.
#[derive(Debug, Error)]
#[error("{0}")]
struct UsageError(String);

#[derive(Debug, Error)]
#[error("knowledge graph unreachable: {0}")]
struct Unreachable(String);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<Unreachable>() {
            return EXIT_UNREACHABLE;
        }
        if let Some(kg) = cause.downcast_ref::<KgError>() {
            if kg.is_unreachable() {
                return EXIT_UNREACHABLE;
            }
        }
    }
    EXIT_DATA
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Index(IndexCmd::Build { labels, out }) => {
            let records = read_label_records(open(&labels)?)?;
            let index = LabelIndex::build(records);
            index.save(&out)?;
            println!("indexed {} labels into {}", index.len(), out.display());
        }
        Command::Index(IndexCmd::Search { index, query, k }) => {
            let index = load_labels(&index)?;
            let mut out = stdout();
            for hit in index.search(&query, k, Bm25Params::default())? {
                writeln!(out, "{}\t{}\t{}\t{:.6}", hit.rank, hit.entity.id, hit.entity.label, hit.score)?;
            }
            out.flush()?;
        }
        Command::Embed(EmbedCmd::Build { input, out }) => {
            let store = EmbeddingStore::from_text(open(&input)?)?;
            store.write(&out)?;
            println!("wrote {} embeddings to {}", store.len(), out.display());
        }
        Command::Rel(RelCmd::Match {
            catalog,
            query_vectors,
            label,
            k,
        }) => {
            let catalog = RelationCatalog::from_reader(open(&catalog)?)?;
            let qv = match query_vectors {
                Some(p) => QueryVectors::from_reader(open(&p)?)?,
                None => QueryVectors::default(),
            };
            let (hits, source) = candidates_for_label(&label, &catalog, &qv, k)?;
            let mut out = stdout();
            writeln!(out, "# query vector: {source:?}")?;
            for h in hits {
                writeln!(out, "{}\t{}\t{}\t{:.6}", h.rank, h.relation.id, h.relation.label, h.cosine)?;
            }
            out.flush()?;
        }
        Command::Kg(KgCmd::Load { inputs, out }) => {
            let store = load_local_kg(&inputs)?;
            match out {
                Some(path) => {
                    let mut w = BufWriter::new(fs::File::create(&path)?);
                    for t in store.triples() {
                        writeln!(w, "{} {} {} .", t.subject, t.predicate, t.object)?;
                    }
                    w.flush()?;
                    println!("wrote {} triples to {}", store.len(), path.display());
                }
                None => println!("loaded {} triples", store.len()),
            }
        }
        Command::Kg(KgCmd::Query { kg, query }) => {
            let kg = open_kg(&kg)?;
            let rs = kg.query(&query)?;
            println!("{}", serde_json::to_string_pretty(&to_results_json(&rs))?);
        }
        Command::Preprocess(args) => preprocess(args)?,
        Command::Answer(args) => {
            let config = args.config.resolve()?;
            let stores = load_stores(&args.stores)?;
            let (answer, trace) = answer_question(&args.qid, &args.beams, &config, &stores);
            let doc = serde_json::json!({
                "answer": answer.as_ref().map(to_results_json),
                "trace": trace,
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
            if trace.kg_unreachable {
                return Err(Unreachable(trace.error.unwrap_or_default()).into());
            }
        }
        Command::Run(args) | Command::Eval(EvalCmd::Run(args)) => run_dataset(args)?,
        Command::Sweep(args) => run_sweep(args)?,
        Command::Curves(args) => curves(args)?,
        Command::Synth(args) => {
            let world = World::generate(&SyntheticConfig {
                seed: args.seed,
                questions: args.questions,
                ..Default::default()
            });
            world.write_files(&args.out)?;
            println!("wrote {} questions to {}", world.records.len(), args.out.display());
        }
    }
    Ok(())
}

fn stdout() -> BufWriter<io::StdoutLock<'static>> {
    BufWriter::new(io::stdout().lock())
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(
        fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn load_labels(path: &Path) -> Result<LabelIndex> {
    if path.is_dir() {
        LabelIndex::open(path).with_context(|| format!("opening index {}", path.display()))
    } else {
        Ok(LabelIndex::build(read_label_records(open(path)?)?))
    }
}

fn load_embeddings(path: &Path) -> Result<EmbeddingStore> {
    let text = matches!(path.extension().and_then(|e| e.to_str()), Some("txt" | "tsv"));
    if text {
        Ok(EmbeddingStore::from_text(open(path)?)?)
    } else {
        EmbeddingStore::open(path).with_context(|| format!("opening {}", path.display()))
    }
}

fn load_local_kg(paths: &[PathBuf]) -> Result<TripleStore> {
    let mut store = TripleStore::new();
    for p in paths {
        store
            .load_path(p)
            .with_context(|| format!("loading {}", p.display()))?;
    }
    Ok(store)
}

fn open_kg(args: &KgArgs) -> Result<Box<dyn KnowledgeGraph>> {
    let target = args.kg.trim();
    if target.starts_with("http://") || target.starts_with("https://") {
        let timeout = Duration::try_from_secs_f64(args.timeout)
            .map_err(|_| UsageError(format!("invalid timeout {}", args.timeout)))?;
        return Ok(Box::new(EndpointClient::new(target, timeout)));
    }
    let paths = target.strip_prefix("local:").unwrap_or(target);
    if paths.is_empty() {
        bail!(UsageError("empty --kg".into()));
    }
    let paths: Vec<PathBuf> = paths.split(',').map(PathBuf::from).collect();
    Ok(Box::new(load_local_kg(&paths)?))
}

fn load_stores(args: &StoreArgs) -> Result<Stores> {
    let labels = load_labels(&args.labels)?;
    let relations = RelationCatalog::from_reader(open(&args.relations)?)
        .with_context(|| format!("loading {}", args.relations.display()))?;
    let mut stores = Stores::new(labels, relations, open_kg(&args.kg)?);
    if let Some(p) = &args.embeddings {
        stores = stores.with_embeddings(load_embeddings(p)?);
    }
    if let Some(p) = &args.query_vectors {
        stores = stores.with_query_vectors(
            QueryVectors::from_reader(open(p)?).with_context(|| format!("loading {}", p.display()))?,
        );
    }
    Ok(stores)
}

fn preprocess(args: PreprocessArgs) -> Result<()> {
    let records = load_dataset(&args.dataset, args.kind)?;
    let labels = load_labels(&args.labels)?;
    let relations = RelationCatalog::from_reader(open(&args.relations)?)?;
    let embeddings = load_embeddings(&args.embeddings)?;
    let out = BufWriter::new(fs::File::create(&args.out)?);
    let manifest = make_training_file(
        &records,
        &labels,
        &relations,
        &embeddings,
        Default::default(),
        out,
    )?;
    if let Some(path) = &args.manifest {
        fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    }
    println!(
        "wrote {} of {} records ({} skipped)",
        manifest.written,
        manifest.total,
        manifest.skipped.len()
    );
    Ok(())
}

fn load_run_inputs(args: &RunArgs) -> Result<(Vec<kgqa_core::QuestionRecord>, Vec<kgqa_core::BeamEntry>)> {
    let mut records = load_dataset(&args.dataset, args.kind)?;
    if let Some(split) = &args.split {
        let qids = load_split(split)?;
        records = apply_split(records, &qids);
    }
    if records.is_empty() {
        bail!("no questions to evaluate");
    }
    Ok((records, load_beams(&args.beams)?))
}

fn run_dataset(args: RunArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let (records, beams) = load_run_inputs(&args)?;
    let stores = load_stores(&args.stores)?;
    let result = run_batch(&records, &beams, &config, &stores)?;
    write_batch_outputs(&args.out, &result, !args.no_traces)?;
    print!("{}", result.report.render_table());
    println!(
        "\nmean latency {:.2} ms, median {:.2} ms",
        result.timing.mean_ms, result.timing.median_ms
    );
    if result.unreachable > 0 {
        return Err(Unreachable(format!("{} questions affected", result.unreachable)).into());
    }
    Ok(())
}

fn run_sweep(args: RunArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let (records, beams) = load_run_inputs(&args)?;
    let stores = load_stores(&args.stores)?;
    let rows = sweep(&records, &beams, &config, &stores, &LayerPolicy::ablation_rows())?;
    let mut unreachable = 0;
    for row in &rows {
        let dir = args.out.join(row.policy.to_string().replace(' ', ""));
        write_batch_outputs(&dir, &row.result, !args.no_traces)?;
        unreachable += row.result.unreachable;
    }
    let table = render_sweep_table(&rows);
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("sweep.txt"), &table)?;
    print!("{table}");
    if unreachable > 0 {
        return Err(Unreachable(format!("{unreachable} question runs affected")).into());
    }
    Ok(())
}

fn curves(args: CurvesArgs) -> Result<()> {
    let gold = load_training(&args.gold)?;
    let mut epochs = Vec::with_capacity(args.epochs.len());
    for arg in &args.epochs {
        let (name, path) = arg
            .split_once('=')
            .ok_or_else(|| anyhow!(UsageError(format!("--epoch expects <name>=<file>, got {arg:?}"))))?;
        epochs.push((name.to_string(), load_beams(path)?));
    }
    let points = similarity_curves(&epochs, &gold, Default::default());
    match &args.out {
        Some(path) => write_curves_csv(BufWriter::new(fs::File::create(path)?), &points)?,
        None => write_curves_csv(stdout(), &points)?,
    }
    Ok(())
}
