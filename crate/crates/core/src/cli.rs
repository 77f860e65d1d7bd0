//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analogy::{self, AnalogyDataset};
use crate::classify::{run_classification_experiment, ClassifyConfig, LogRegConfig};
use crate::corpus::{load_conllu, load_labeled, load_raw_corpus, Stoplist};
use crate::error::{Error, Result};
use crate::store::{EmbeddingStore, DEFAULT_RESTRICT_VOCAB};
use crate::tagger::{run_tagging_experiment, TaggerConfig};
use crate::train::{self, Algorithm, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "embedbench", version, about = "Train and evaluate word embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train embeddings on a whitespace-tokenized corpus
    Train(TrainArgs),
    /// Score a model on word-analogy questions
    EvalAnalogy(AnalogyArgs),
    /// Document classification with tf-idf weighted mean vectors
    EvalClassify(ClassifyArgs),
    /// Train and score the UPOS/FEATS tagger on CoNLL-U data
    EvalTag(TagArgs),
    /// Nearest neighbours of a word
    Nn(NnArgs),
    /// Convert between text (.txt) and binary (.embw) models
    Convert(ConvertArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_algorithm)]
    algo: Algorithm,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    min_count: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    min_n: Option<usize>,
    #[arg(long)]
    max_n: Option<usize>,
    #[arg(long)]
    buckets: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Model path; `.txt` writes the text format, anything else binary
    #[arg(long)]
    out: PathBuf,
    /// Also write the resolved configuration and per-epoch losses as JSON
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalogyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    questions: PathBuf,
    /// Sidecar file of `section kind` lines overriding section kinds
    #[arg(long)]
    kinds: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RESTRICT_VOCAB)]
    restrict_vocab: usize,
    /// Let a, b and c themselves be predicted
    #[arg(long)]
    include_inputs: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON lines with `label` and `text`
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long = "C", default_value_t = 1.0)]
    c: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TagArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    dev_frac: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.6)]
    lr: f64,
    #[arg(long, default_value_t = 0.05)]
    decay: f64,
    /// Number of seeds; runs use seeds 1..=N
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NnArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    word: String,
    #[arg(short, default_value_t = 10)]
    k: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum ModelFormat {
    Text,
    Binary,
}

fn format_for(path: &Path) -> ModelFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("txt") => ModelFormat::Text,
        _ => ModelFormat::Binary,
    }
}

fn save_model(store: &EmbeddingStore, path: &Path) -> Result<()> {
    match format_for(path) {
        ModelFormat::Text => store.save_text(path),
        ModelFormat::Binary => store.save_binary(path),
    }
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            let mut f = File::create(path)?;
            f.write_all(content.as_bytes())?;
            f.write_all(b"\n")?;
        }
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            stdout.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn render<T: Serialize + std::fmt::Display>(report: &T, format: Format) -> Result<String> {
    Ok(match format {
        Format::Json => serde_json::to_string_pretty(report)?,
        Format::Text => report.to_string(),
    })
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config: &'a TrainConfig,
    vocabulary: usize,
    epoch_losses: &'a [f64],
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = TrainConfig::new(args.algo);
    macro_rules! set {
        ($($field:ident = $arg:expr),*) => {
            $(if let Some(v) = $arg { config.$field = v; })*
        };
    }
    set!(
        dim = args.dim,
        window = args.window,
        min_count = args.min_count,
        epochs = args.epochs,
        learning_rate = args.lr,
        negatives = args.negatives,
        min_n = args.min_n,
        max_n = args.max_n,
        buckets = args.buckets,
        seed = args.seed,
        threads = args.threads
    );
    config.validate()?;

    let corpus = load_raw_corpus(&args.corpus)?;
    let (vocab, trained) = train::train(&corpus, &config)?;
    log::info!("trained {} vectors of dimension {}", vocab.len(), config.dim);
    save_model(&trained.store, &args.out)?;

    if let Some(path) = &args.report {
        let report = TrainReport {
            config: &config,
            vocabulary: vocab.len(),
            epoch_losses: &trained.epoch_losses,
        };
        emit(Some(path), &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn cmd_eval_analogy(args: AnalogyArgs) -> Result<()> {
    let store = EmbeddingStore::load(&args.model)?;
    let mut dataset = AnalogyDataset::load(&args.questions)?;
    if let Some(path) = &args.kinds {
        dataset.apply_kinds(BufReader::new(File::open(path)?))?;
    }
    let report = analogy::evaluate(&store, &dataset, args.restrict_vocab, !args.include_inputs)?;
    emit(args.out.as_deref(), &render(&report, args.format)?)
}

fn cmd_eval_classify(args: ClassifyArgs) -> Result<()> {
    let store = EmbeddingStore::load(&args.model)?;
    let corpus = load_labeled(&args.data)?;
    let stoplist = match &args.stopwords {
        Some(path) => Stoplist::load(path)?,
        None => Stoplist::new(Vec::<String>::new()),
    };
    let config = ClassifyConfig {
        seed: args.seed,
        train_fraction: args.train_frac,
        logreg: LogRegConfig {
            c: args.c,
            ..LogRegConfig::default()
        },
    };
    let report = run_classification_experiment(&corpus, &store, &stoplist, &config)?;
    emit(args.out.as_deref(), &render(&report, args.format)?)
}

fn cmd_eval_tag(args: TagArgs) -> Result<()> {
    let store = EmbeddingStore::load(&args.model)?;
    let train = load_conllu(&args.train)?;
    let test = load_conllu(&args.test)?;
    let config = TaggerConfig {
        lr0: args.lr,
        decay: args.decay,
        epochs: args.epochs,
        dev_fraction: args.dev_frac,
        seeds: (1..=args.seeds).collect(),
        ..TaggerConfig::default()
    };
    let report = run_tagging_experiment(&train, &test, &store, &config)?;
    emit(args.out.as_deref(), &render(&report, args.format)?)
}

fn cmd_nn(args: NnArgs) -> Result<()> {
    let store = EmbeddingStore::load(&args.model)?;
    let query = store
        .vector(&args.word)
        .ok_or_else(|| Error::NotInVocabulary(args.word.clone()))?;
    let neighbors = store.nearest(&query, args.k, &[args.word.as_str()])?;
    let content = match args.format {
        Format::Json => serde_json::to_string_pretty(&neighbors)?,
        Format::Text => neighbors
            .iter()
            .map(|n| format!("{}\t{:.6}", n.word, n.similarity))
            .collect::<Vec<_>>()
            .join("\n"),
    };
    emit(args.out.as_deref(), &content)
}

fn cmd_convert(args: ConvertArgs) -> Result<()> {
    let store = EmbeddingStore::load(&args.input)?;
    save_model(&store, &args.out)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

/// Parse `argv` (program name first), run the command and return the exit
/// code: 0 on success, 1 on data or format errors, 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };

    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::EvalAnalogy(a) => cmd_eval_analogy(a),
        Command::EvalClassify(a) => cmd_eval_classify(a),
        Command::EvalTag(a) => cmd_eval_tag(a),
        Command::Nn(a) => cmd_nn(a),
        Command::Convert(a) => cmd_convert(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
