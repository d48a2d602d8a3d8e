//! `coc`: synthetic corpora, toy embeddings, training and evaluation.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use coc_core::corpus::{
    gen_synthetic, load_corpus, make_split, partition_by_date, write_corpus, ArticleId, ArticleText, CorpusFormat,
    Document, Regime, SplitName, SplitSpec, Task,
};
use coc_core::embedding::{read_store, toy_store, write_store, MIN_TOY_DIM};
use coc_core::evaluation::{check_threshold, evaluate_run, format_table};
use coc_core::model::{EncodedCorpus, Variant};
use coc_core::objective::Adaptation;
use coc_core::training::{fit_from, init_state, load_checkpoint, resume_path, FitOptions, TrainConfig, TrainingData};

#[derive(Parser)]
#[command(
    name = "coc",
    version,
    about = "Article-aware case outcome classification experiments"
)]
struct Cli {
    /// Base directory for relative paths.
    #[arg(long, global = true, env = "COC_DATA_DIR", default_value = ".")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-rule synthetic corpus.
    Synth(SynthArgs),
    /// Encode a corpus with the deterministic toy encoder into an EMB1 store.
    EmbedToy(EmbedArgs),
    /// Train a model and write its checkpoint and epoch log.
    Train(TrainArgs),
    /// Score a checkpoint on the test partition.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of documents.
    #[arg(long, default_value_t = 600)]
    docs: usize,
    /// Number of articles, taken in label-set order.
    #[arg(long, default_value_t = 6)]
    articles: usize,
    /// Vocabulary size; at least four tokens per article.
    #[arg(long, default_value_t = 120)]
    vocab: usize,
    /// Probability that an alleged article's triggers are planted.
    #[arg(long, default_value_t = 1.0)]
    strength: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for cases.jsonl and articles.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus directory, or a cases file with articles.jsonl beside it.
    #[arg(long)]
    corpus: PathBuf,
    /// Record layout: native or lexglue.
    #[arg(long, default_value = "native")]
    format: String,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Embedding width, at least 8.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output EMB1 file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PartitionArgs {
    /// Fraction of documents, oldest first, used for training.
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    /// Fraction used for validation; the rest is the test partition.
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
}

#[derive(Args)]
struct SplitArgs {
    /// split0_to_1, split1_to_0 or custom.
    #[arg(long)]
    split: Option<String>,
    /// Comma-separated source articles for a custom split.
    #[arg(long, value_delimiter = ',')]
    source: Vec<String>,
    /// Comma-separated target articles for a custom split.
    #[arg(long, value_delimiter = ',')]
    target: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Article,
    Fact,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    partition: PartitionArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// EMB1 store covering every document and article.
    #[arg(long)]
    emb: PathBuf,
    /// JSON or key = value file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path; the log goes to <out>.log.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// A (violation) or B (allegation).
    #[arg(long)]
    task: Option<String>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// none, uda or ada.
    #[arg(long)]
    regime: Option<String>,
    /// none, disc or wass.
    #[arg(long)]
    adapt: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Schedule steepness for the adversarial weight.
    #[arg(long)]
    gamma: Option<f64>,
    /// Critic weight bound.
    #[arg(long)]
    clip: Option<f64>,
    /// Continue from <out>.last when it exists.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    partition: PartitionArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    emb: PathBuf,
    /// Defaults to the task the checkpoint was trained on.
    #[arg(long)]
    task: Option<String>,
    /// Decision threshold in [0, 1]; defaults to the training setting.
    #[arg(long)]
    threshold: Option<f64>,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Bad flags or flag combinations; exit code 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

fn parse_flag<T: std::str::FromStr<Err = coc_core::Error>>(value: &str) -> anyhow::Result<T> {
    value.parse().map_err(|e: coc_core::Error| usage(e.to_string()))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let base = cli.data_dir;
    match cli.command {
        Command::Synth(a) => synth(&base, a),
        Command::EmbedToy(a) => embed_toy(&base, a),
        Command::Train(a) => train(&base, a),
        Command::Eval(a) => eval(&base, a),
    }
}

fn synth(base: &Path, a: SynthArgs) -> anyhow::Result<()> {
    if a.articles == 0 || a.articles > ArticleId::all().len() {
        return Err(usage(format!("--articles must be in 1..=10, got {}", a.articles)));
    }
    if a.vocab < 4 * a.articles {
        return Err(usage(format!(
            "--vocab {} is too small for {} articles (need at least {})",
            a.vocab,
            a.articles,
            4 * a.articles
        )));
    }
    if !(0.0..=1.0).contains(&a.strength) {
        return Err(usage("--strength must be in [0, 1]"));
    }
    let (docs, articles) = gen_synthetic(a.docs, a.articles, a.vocab, a.strength, a.seed)?;
    let out = resolve(base, &a.out);
    write_corpus(&out, &docs, &articles)?;
    println!(
        "wrote {} cases and {} articles to {}",
        docs.len(),
        articles.len(),
        out.display()
    );
    Ok(())
}

fn read_corpus(base: &Path, c: &CorpusArgs) -> anyhow::Result<(Vec<Document>, Vec<ArticleText>)> {
    let format: CorpusFormat = parse_flag(&c.format)?;
    let path = resolve(base, &c.corpus);
    load_corpus(&path, format).with_context(|| format!("loading corpus {}", path.display()))
}

fn embed_toy(base: &Path, a: EmbedArgs) -> anyhow::Result<()> {
    if a.dim < MIN_TOY_DIM {
        return Err(usage(format!("--dim must be at least {MIN_TOY_DIM}, got {}", a.dim)));
    }
    let (docs, articles) = read_corpus(base, &a.corpus)?;
    let store = toy_store(&docs, &articles, a.dim, a.seed)?;
    let out = resolve(base, &a.out);
    write_store(&store, &out)?;
    println!("wrote {} entries of dim {} to {}", store.len(), a.dim, out.display());
    Ok(())
}

fn partition(docs: &[Document], p: &PartitionArgs) -> anyhow::Result<(Vec<Document>, Vec<Document>, Vec<Document>)> {
    let ok = |f: f64| (0.0..=1.0).contains(&f);
    if !ok(p.train_frac) || !ok(p.val_frac) || p.train_frac + p.val_frac > 1.0 {
        return Err(usage(
            "--train-frac and --val-frac must be fractions summing to at most 1",
        ));
    }
    Ok(partition_by_date(docs, p.train_frac, p.val_frac))
}

fn split_spec(s: &SplitArgs, regime: Regime) -> anyhow::Result<SplitSpec> {
    let name = s.split.as_deref().ok_or_else(|| usage("--split is required"))?;
    let name: SplitName = parse_flag(name)?;
    let ids = |codes: &[String]| -> anyhow::Result<Vec<ArticleId>> {
        codes
            .iter()
            .map(|c| ArticleId::new(c.trim()).map_err(|e| usage(e.to_string())))
            .collect()
    };
    let (source, target) = (ids(&s.source)?, ids(&s.target)?);
    if name != SplitName::Custom && !(source.is_empty() && target.is_empty()) {
        return Err(usage("--source and --target only apply to --split custom"));
    }
    make_split(name, Some(&source), Some(&target), regime).map_err(|e| usage(e.to_string()))
}

fn train_config(base: &Path, a: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::from_file(&resolve(base, p))?,
        None => TrainConfig::default(),
    };
    if let Some(t) = &a.task {
        config.task = parse_flag(t)?;
    }
    if let Some(v) = a.variant {
        config.variant = match v {
            VariantArg::Article => Variant::ArticleAware,
            VariantArg::Fact => Variant::FactOnly,
        };
    }
    if let Some(r) = &a.regime {
        config.regime = parse_flag(r)?;
    }
    if let Some(ad) = &a.adapt {
        config.adaptation = parse_flag(ad)?;
    }
    if config.variant == Variant::FactOnly && config.regime != Regime::None {
        return Err(usage(
            "the fact-only baseline has no article domains; use --regime none",
        ));
    }
    if config.adaptation == Adaptation::None && config.regime != Regime::None {
        eprintln!("note: --adapt none trains source-only; regime reset to none");
        config.regime = Regime::None;
    }
    if config.adaptation != Adaptation::None && config.regime == Regime::None {
        return Err(usage("adaptation needs --regime uda or --regime ada"));
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(e) = a.epochs {
        config.max_epochs = e;
    }
    if let Some(lr) = a.lr {
        config.lr = lr;
    }
    if let Some(g) = a.gamma {
        config.gamma = g;
    }
    if let Some(c) = a.clip {
        config.clip = c;
    }
    Ok(config)
}

fn load_inputs(base: &Path, emb: &Path) -> anyhow::Result<EncodedCorpus> {
    let path = resolve(base, emb);
    let store = read_store(&path).with_context(|| format!("reading embeddings {}", path.display()))?;
    Ok(EncodedCorpus::from_store(&store))
}

fn train(base: &Path, a: TrainArgs) -> anyhow::Result<()> {
    let mut config = train_config(base, &a)?;
    let split = split_spec(&a.split, config.regime)?;
    let (docs, texts) = read_corpus(base, &a.corpus)?;
    let (train_docs, val_docs, _) = partition(&docs, &a.partition)?;
    let inputs = load_inputs(base, &a.emb)?;
    if config.model.d_in == 0 {
        config.model.d_in = inputs.dim;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    let data = TrainingData::new(
        &inputs,
        config.variant,
        &train_docs,
        &val_docs,
        &texts,
        config.task,
        &split,
    )?;
    let out = resolve(base, &a.out);
    let last = resume_path(&out);
    let state = if a.resume && last.exists() {
        let ckpt = load_checkpoint(&last)?;
        if ckpt.config != config {
            return Err(anyhow!("{} was written with a different configuration", last.display()));
        }
        ckpt.state
    } else {
        init_state(&config, &data)?
    };
    let outcome = fit_from(state, &data, &config, &out, FitOptions::default())?;
    for e in &outcome.log {
        println!("{}", serde_json::to_string(e)?);
    }
    println!(
        "checkpoint {} (log {})",
        outcome.checkpoint.display(),
        outcome.log_path.display()
    );
    Ok(())
}

fn eval(base: &Path, a: EvalArgs) -> anyhow::Result<()> {
    if let Some(t) = a.threshold {
        check_threshold(t).map_err(|e| usage(e.to_string()))?;
    }
    let task: Option<Task> = a.task.as_deref().map(parse_flag).transpose()?;
    let ckpt_path = resolve(base, &a.ckpt);
    let ckpt = load_checkpoint(&ckpt_path).with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;
    let config = ckpt.config;
    let task = task.unwrap_or(config.task);
    let threshold = a.threshold.unwrap_or(config.threshold);
    let split = split_spec(&a.split, config.regime)?;
    let (docs, _) = read_corpus(base, &a.corpus)?;
    let (_, _, test) = partition(&docs, &a.partition)?;
    if test.is_empty() {
        return Err(anyhow!("the test partition is empty"));
    }
    let inputs = load_inputs(base, &a.emb)?;
    let (source, target) = evaluate_run(
        &ckpt.state.network,
        &inputs,
        &test,
        &split,
        task,
        threshold,
        config.adaptation,
    )?;
    let report = serde_json::json!({ "source": source, "target": target });
    if let Some(p) = &a.report {
        let p = resolve(base, p);
        std::fs::write(&p, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing report {}", p.display()))?;
    }
    let label = format!("{:?}/{:?}", config.variant, config.adaptation);
    print!("{}", format_table(&[(label, &source, target.as_ref())]));
    Ok(())
}
