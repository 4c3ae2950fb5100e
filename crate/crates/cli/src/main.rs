use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use moral_trace::pipeline::{
    cmd_changepoints, cmd_coherence, cmd_eval, cmd_timecourse, cmd_topics, cmd_trace, CommandOutput, RunConfig,
};
use moral_trace::Error;

/// Trace the textual sources of moral sentiment change toward entities.
///
/// Settings come from built-in defaults, then `--config`, then flags. Data
/// goes to files in the output directory; logs go to standard error.
#[derive(Debug, Parser)]
#[command(name = "moral-trace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write one moral time-course CSV per (entity, dimension).
    Timecourse(RunArgs),
    /// Detect change points in each time course.
    Changepoints(RunArgs),
    /// Fit and save a chained topic model per entity.
    Topics(RunArgs),
    /// Attribute every detected change point to topics and documents.
    Trace(RunArgs),
    /// Score model judgments against annotated ground truth.
    Eval(RunArgs),
    /// Headline coherence of the document sets listed in --doc-sets.
    Coherence(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSONL corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Word embeddings, one `token v1 .. vD` line each.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Seed lexicon, `token<TAB>category` lines.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Entity aliases, `canonical<TAB>alias...` lines.
    #[arg(long)]
    aliases: Option<PathBuf>,
    /// Stopword list replacing the bundled one.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Neutral seed list replacing the lexicon's.
    #[arg(long)]
    neutral: Option<PathBuf>,
    /// Saved topic fit to reuse instead of fitting.
    #[arg(long)]
    topic_fit: Option<PathBuf>,
    /// Document sets for `coherence`, `name<TAB>id id ...` lines.
    #[arg(long)]
    doc_sets: Option<PathBuf>,
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
    /// week or month.
    #[arg(long)]
    bin_width: Option<String>,
    /// Comma-separated canonical entity names.
    #[arg(long)]
    entities: Option<String>,
    /// Comma-separated dimensions (relevance, polarity, care, ...) or `all`.
    #[arg(long)]
    dimensions: Option<String>,
    #[arg(long)]
    window_size: Option<usize>,
    #[arg(long)]
    window_step: Option<usize>,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    p_threshold: Option<f64>,
    #[arg(long)]
    topics_k: Option<usize>,
    /// Document-topic prior; defaults to 50/k.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gibbs_iterations: Option<usize>,
    #[arg(long)]
    chain_strength: Option<f64>,
    /// Source set size as a fraction of the change window.
    #[arg(long)]
    source_fraction: Option<f64>,
    /// Random subsets drawn by the influence-function baseline.
    #[arg(long)]
    if_samples: Option<usize>,
    #[arg(long)]
    if_alpha: Option<f64>,
    /// on or off.
    #[arg(long)]
    baselines: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 picks automatically.
    #[arg(long)]
    threads: Option<usize>,
    /// Use annotation proportions instead of majority votes.
    #[arg(long)]
    graded: bool,
    /// topic_based, topic_free_static, precomputed_vectors, comma list or `all`.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    min_entity_freq: Option<usize>,
    #[arg(long)]
    salient_words: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> moral_trace::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let overrides: [(&str, Option<String>); 31] = [
            ("corpus", path(&self.corpus)),
            ("embeddings", path(&self.embeddings)),
            ("lexicon", path(&self.lexicon)),
            ("aliases", path(&self.aliases)),
            ("stopwords", path(&self.stopwords)),
            ("neutral", path(&self.neutral)),
            ("topic_fit", path(&self.topic_fit)),
            ("doc_sets", path(&self.doc_sets)),
            ("output_dir", path(&self.output_dir)),
            ("bin_width", self.bin_width.clone()),
            ("entities", self.entities.clone()),
            ("dimensions", self.dimensions.clone()),
            ("window_size", self.window_size.map(|v| v.to_string())),
            ("window_step", self.window_step.map(|v| v.to_string())),
            ("permutations", self.permutations.map(|v| v.to_string())),
            ("p_threshold", self.p_threshold.map(|v| v.to_string())),
            ("topics_k", self.topics_k.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("beta", self.beta.map(|v| v.to_string())),
            ("gibbs_iterations", self.gibbs_iterations.map(|v| v.to_string())),
            ("chain_strength", self.chain_strength.map(|v| v.to_string())),
            ("source_fraction", self.source_fraction.map(|v| v.to_string())),
            ("if_samples", self.if_samples.map(|v| v.to_string())),
            ("if_alpha", self.if_alpha.map(|v| v.to_string())),
            ("baselines", self.baselines.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
            ("graded", self.graded.then(|| "on".to_string())),
            ("variant", self.variant.clone()),
            ("min_entity_freq", self.min_entity_freq.map(|v| v.to_string())),
            ("salient_words", self.salient_words.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> moral_trace::Result<CommandOutput> {
    let (args, command): (&RunArgs, fn(&RunConfig) -> moral_trace::Result<CommandOutput>) = match &cli.command {
        Command::Timecourse(a) => (a, cmd_timecourse),
        Command::Changepoints(a) => (a, cmd_changepoints),
        Command::Topics(a) => (a, cmd_topics),
        Command::Trace(a) => (a, cmd_trace),
        Command::Eval(a) => (a, cmd_eval),
        Command::Coherence(a) => (a, cmd_coherence),
    };
    let cfg = args.resolve()?;
    log::debug!("resolved config:\n{}", cfg.to_text());
    command(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            if let Some(notice) = out.notice {
                eprintln!("{notice}");
            }
            log::info!("{} files written", out.files.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
