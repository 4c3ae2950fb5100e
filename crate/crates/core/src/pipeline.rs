//! Run configuration and the end-to-end commands behind the CLI.
//!
//! A config file holds `key = value` lines (`#` starts a comment). Values set
//! later override earlier ones, so callers apply the file first and then the
//! command-line flags. Every artifact carries the config hash and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus::{default_stopwords, load_word_list, parse_alias_file, BinWidth, Corpus, EntityQuery, Stopwords};
use crate::embedding::WordEmbeddingStore;
use crate::error::{Error, Result};
use crate::evaluation::{
    build_ground_truth, eval_docs, model_judgments, score, write_eval_csv, EvalReport, ModelVariant,
};
use crate::lexicon::{CentroidSet, MoralDimension, SeedLexicon};
use crate::timecourse::{
    detect_in_timecourse, score_documents, timecourse_from_scores, write_changepoints_csv, write_timecourse_csv,
    ScoredDoc, SlidingWindowConfig, TimeCoursePoint,
};
use crate::topics::{fit_dynamic_topics, TopicCorpus, TopicModelConfig, TopicModelFit};
use crate::tracer::{coherence, trace_change_point, Provenance, SourceTraceReport, TraceContext, TraceSettings};

/// Keys that do not influence results and so stay out of the config hash.
const UNHASHED: [&str; 2] = ["output_dir", "threads"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub neutral: Option<PathBuf>,
    pub topic_fit: Option<PathBuf>,
    pub doc_sets: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub bin_width: BinWidth,
    /// Empty means every entity in the alias file.
    pub entities: Vec<String>,
    pub dimensions: Vec<MoralDimension>,
    pub window: SlidingWindowConfig,
    pub topics: TopicModelConfig,
    /// `None` derives alpha from `topics.k`.
    pub alpha: Option<f64>,
    pub trace: TraceSettings,
    pub seed: u64,
    /// 0 lets the thread pool pick.
    pub threads: usize,
    pub graded: bool,
    pub variants: Vec<ModelVariant>,
    pub min_entity_freq: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            embeddings: None,
            lexicon: None,
            aliases: None,
            stopwords: None,
            neutral: None,
            topic_fit: None,
            doc_sets: None,
            output_dir: PathBuf::from("out"),
            bin_width: BinWidth::Week,
            entities: Vec::new(),
            dimensions: vec![MoralDimension::Relevance, MoralDimension::Polarity],
            window: SlidingWindowConfig::default(),
            topics: TopicModelConfig::default(),
            alpha: None,
            trace: TraceSettings::default(),
            seed: 0,
            threads: 0,
            graded: false,
            variants: vec![ModelVariant::TopicBased, ModelVariant::TopicFreeStatic],
            min_entity_freq: 1,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value `{value}` for `{key}`; use on or off"))),
    }
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub const KEYS: [&'static str; 31] = [
        "corpus",
        "embeddings",
        "lexicon",
        "aliases",
        "stopwords",
        "neutral",
        "topic_fit",
        "doc_sets",
        "output_dir",
        "bin_width",
        "entities",
        "dimensions",
        "window_size",
        "window_step",
        "permutations",
        "p_threshold",
        "topics_k",
        "alpha",
        "beta",
        "gibbs_iterations",
        "chain_strength",
        "source_fraction",
        "if_samples",
        "if_alpha",
        "baselines",
        "seed",
        "threads",
        "graded",
        "variant",
        "min_entity_freq",
        "salient_words",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key {
            "corpus" => self.corpus = path(),
            "embeddings" => self.embeddings = path(),
            "lexicon" => self.lexicon = path(),
            "aliases" => self.aliases = path(),
            "stopwords" => self.stopwords = path(),
            "neutral" => self.neutral = path(),
            "topic_fit" => self.topic_fit = path(),
            "doc_sets" => self.doc_sets = path(),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "bin_width" => self.bin_width = value.parse()?,
            "entities" => self.entities = list(value).map(String::from).collect(),
            "dimensions" => {
                self.dimensions = if value == "all" {
                    MoralDimension::all()
                } else {
                    list(value).map(str::parse).collect::<Result<_>>()?
                }
            }
            "window_size" => self.window.window_size = parse_num(key, value)?,
            "window_step" => self.window.step = parse_num(key, value)?,
            "permutations" => self.window.permutations = parse_num(key, value)?,
            "p_threshold" => self.window.p_threshold = parse_num(key, value)?,
            "topics_k" => self.topics.k = parse_num(key, value)?,
            "alpha" => self.alpha = Some(parse_num(key, value)?),
            "beta" => self.topics.beta = parse_num(key, value)?,
            "gibbs_iterations" => self.topics.gibbs_iterations = parse_num(key, value)?,
            "chain_strength" => self.topics.chain_strength = parse_num(key, value)?,
            "source_fraction" => self.trace.source_fraction = parse_num(key, value)?,
            "if_samples" => self.trace.influence.n_samples = parse_num(key, value)?,
            "if_alpha" => self.trace.influence.alpha = parse_num(key, value)?,
            "baselines" => self.trace.baselines = parse_bool(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "threads" => self.threads = parse_num(key, value)?,
            "graded" => self.graded = parse_bool(key, value)?,
            "variant" => {
                self.variants = if value == "all" {
                    ModelVariant::ALL.to_vec()
                } else {
                    list(value).map(str::parse).collect::<Result<_>>()?
                }
            }
            "min_entity_freq" => self.min_entity_freq = parse_num(key, value)?,
            "salient_words" => self.trace.salient_words = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines from a config file.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Config(format!("config file not found: {}", path.display())));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path.display().to_string(), idx + 1, "expected `key = value`"))?;
            self.set(key.trim(), value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}:{}: {m}", path.display(), idx + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn topic_config(&self) -> TopicModelConfig {
        TopicModelConfig {
            alpha: self.alpha.unwrap_or(50.0 / self.topics.k.max(1) as f64),
            seed: self.seed,
            ..self.topics.clone()
        }
    }

    pub fn window_config(&self) -> SlidingWindowConfig {
        SlidingWindowConfig {
            seed: self.seed,
            ..self.window.clone()
        }
    }

    pub fn trace_settings(&self) -> TraceSettings {
        let mut t = self.trace.clone();
        t.seed = self.seed;
        t.influence.fraction = t.source_fraction;
        t
    }

    /// Fully resolved settings as canonical key/value text.
    pub fn to_pairs(&self) -> BTreeMap<&'static str, String> {
        let topics = self.topic_config();
        let join = |xs: Vec<String>| xs.join(",");
        let mut m = BTreeMap::new();
        m.insert("corpus", path_str(&self.corpus));
        m.insert("embeddings", path_str(&self.embeddings));
        m.insert("lexicon", path_str(&self.lexicon));
        m.insert("aliases", path_str(&self.aliases));
        m.insert("stopwords", path_str(&self.stopwords));
        m.insert("neutral", path_str(&self.neutral));
        m.insert("topic_fit", path_str(&self.topic_fit));
        m.insert("doc_sets", path_str(&self.doc_sets));
        m.insert("output_dir", self.output_dir.display().to_string());
        m.insert("bin_width", self.bin_width.as_str().to_string());
        m.insert("entities", self.entities.join(","));
        m.insert("dimensions", join(self.dimensions.iter().map(|d| d.to_string()).collect()));
        m.insert("window_size", self.window.window_size.to_string());
        m.insert("window_step", self.window.step.to_string());
        m.insert("permutations", self.window.permutations.to_string());
        m.insert("p_threshold", self.window.p_threshold.to_string());
        m.insert("topics_k", topics.k.to_string());
        m.insert("alpha", topics.alpha.to_string());
        m.insert("beta", topics.beta.to_string());
        m.insert("gibbs_iterations", topics.gibbs_iterations.to_string());
        m.insert("chain_strength", topics.chain_strength.to_string());
        m.insert("source_fraction", self.trace.source_fraction.to_string());
        m.insert("if_samples", self.trace.influence.n_samples.to_string());
        m.insert("if_alpha", self.trace.influence.alpha.to_string());
        m.insert("baselines", if self.trace.baselines { "on" } else { "off" }.to_string());
        m.insert("seed", self.seed.to_string());
        m.insert("threads", self.threads.to_string());
        m.insert("graded", if self.graded { "on" } else { "off" }.to_string());
        m.insert("variant", join(self.variants.iter().map(|v| v.to_string()).collect()));
        m.insert("min_entity_freq", self.min_entity_freq.to_string());
        m.insert("salient_words", self.trace.salient_words.to_string());
        m
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k} = {v}");
            s
        })
    }

    /// SHA-256 over the canonical settings, excluding output location and
    /// thread count.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.to_pairs() {
            if !UNHASHED.contains(&k) {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.topic_config().validate()?;
        if self.dimensions.is_empty() {
            return Err(Error::Config("no dimensions selected".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("no model variant selected".into()));
        }
        if !(self.trace.influence.alpha > 0.0 && self.trace.influence.alpha < 1.0) {
            return Err(Error::Config("if_alpha must lie in (0, 1)".into()));
        }
        if self.trace.influence.n_samples == 0 {
            return Err(Error::Config("if_samples must be positive".into()));
        }
        crate::tracer::source_set_size(1, self.trace.source_fraction)?;
        Ok(())
    }
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let p = p
        .as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` path is required")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{key} file not found: {}", p.display())));
    }
    Ok(p)
}

fn optional<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<Option<&'a Path>> {
    match p {
        None => Ok(None),
        Some(_) => require(p, key).map(Some),
    }
}

pub struct Inputs {
    pub corpus: Corpus,
    pub embeddings: WordEmbeddingStore,
    pub centroids: CentroidSet,
    pub stopwords: Stopwords,
    pub entities: Vec<EntityQuery>,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let corpus_path = require(&cfg.corpus, "corpus")?;
    let emb_path = require(&cfg.embeddings, "embeddings")?;
    let lex_path = require(&cfg.lexicon, "lexicon")?;

    let corpus = Corpus::ingest(corpus_path, cfg.bin_width)?;
    let embeddings = WordEmbeddingStore::load(emb_path, None)?;
    let mut lexicon = SeedLexicon::parse(lex_path)?;
    if let Some(p) = optional(&cfg.neutral, "neutral")? {
        lexicon = lexicon.with_neutral_seeds(load_word_list(p)?.into_iter().collect())?;
    }
    let centroids = CentroidSet::build(&lexicon, &embeddings)?;
    let stopwords = match optional(&cfg.stopwords, "stopwords")? {
        Some(p) => load_word_list(p)?,
        None => default_stopwords(),
    };

    let mut entities = match optional(&cfg.aliases, "aliases")? {
        Some(p) => {
            let all = parse_alias_file(p)?;
            if cfg.entities.is_empty() {
                all
            } else {
                cfg.entities
                    .iter()
                    .map(|name| {
                        all.iter()
                            .find(|q| &q.canonical_name == name)
                            .cloned()
                            .ok_or_else(|| Error::Config(format!("entity `{name}` is not in the alias file")))
                    })
                    .collect::<Result<_>>()?
            }
        }
        None => cfg
            .entities
            .iter()
            .map(|name| EntityQuery::new(name, &[] as &[&str]))
            .collect::<Result<_>>()?,
    };
    if entities.is_empty() {
        return Err(Error::Config("no entities given; set `entities` or `aliases`".into()));
    }
    entities.retain(|e| {
        let n = corpus.documents().iter().filter(|d| e.mentioned_in(d)).count();
        if n < cfg.min_entity_freq {
            log::warn!("entity `{}` has {n} documents, below min_entity_freq; skipped", e.canonical_name);
        }
        n >= cfg.min_entity_freq
    });
    if entities.is_empty() {
        return Err(Error::EmptyResult("no entity meets min_entity_freq".into()));
    }
    log::info!(
        "loaded {} documents in {} bins, {} embeddings, {} entities",
        corpus.documents().len(),
        corpus.bins().len(),
        embeddings.len(),
        entities.len()
    );
    Ok(Inputs {
        corpus,
        embeddings,
        centroids,
        stopwords,
        entities,
    })
}

/// Lowercase alphanumerics with every other run collapsed to `_`.
pub fn sanitize(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    let trimmed = out.trim_matches('_');
    if trimmed.is_empty() {
        "entity".to_string()
    } else {
        trimmed.to_string()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CommandOutput {
    pub files: Vec<PathBuf>,
    pub notice: Option<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    config: BTreeMap<&'static str, String>,
    outputs: Vec<String>,
    notice: Option<String>,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    hash: String,
    out: CommandOutput,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
        Ok(Run {
            cfg,
            hash: cfg.hash(),
            out: CommandOutput::default(),
        })
    }

    fn stamp(&self) -> String {
        format!("# config_hash={} seed={}\n", self.hash, self.cfg.seed)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.cfg.output_dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        log::info!("wrote {}", path.display());
        self.out.files.push(path);
        Ok(())
    }

    fn write_csv(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = self.stamp().into_bytes();
        body(&mut buf)?;
        self.write(name, &buf)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.write(name, &buf)
    }

    fn finish(mut self, command: &str) -> Result<CommandOutput> {
        let manifest = Manifest {
            command,
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            config: self.cfg.to_pairs(),
            outputs: self
                .out
                .files
                .iter()
                .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
                .collect(),
            notice: self.out.notice.clone(),
        };
        self.write_json(&format!("manifest_{command}.json"), &manifest)?;
        Ok(self.out)
    }
}

fn in_pool<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(f)
}

fn entity_series(
    inputs: &Inputs,
    entity: &EntityQuery,
    dims: &[MoralDimension],
) -> Result<(Vec<ScoredDoc>, Vec<(MoralDimension, Vec<TimeCoursePoint>)>)> {
    let scored = score_documents(
        &inputs.corpus,
        entity,
        &inputs.embeddings,
        &inputs.centroids,
        &inputs.stopwords,
    )?;
    let series = dims
        .iter()
        .map(|&d| (d, timecourse_from_scores(&scored, inputs.corpus.bins(), d)))
        .collect();
    Ok((scored, series))
}

/// One CSV time course per (entity, dimension).
pub fn cmd_timecourse(cfg: &RunConfig) -> Result<CommandOutput> {
    in_pool(cfg, || {
        let inputs = load_inputs(cfg)?;
        let mut run = Run::new(cfg)?;
        for entity in &inputs.entities {
            let (_, series) = entity_series(&inputs, entity, &cfg.dimensions)?;
            for (dim, points) in series {
                let name = format!("timecourse_{}_{}.csv", sanitize(&entity.canonical_name), dim);
                run.write_csv(&name, |buf| write_timecourse_csv(buf, &points))?;
            }
        }
        run.finish("timecourse")
    })
}

/// Detected change points per (entity, dimension).
pub fn cmd_changepoints(cfg: &RunConfig) -> Result<CommandOutput> {
    in_pool(cfg, || {
        let inputs = load_inputs(cfg)?;
        let mut run = Run::new(cfg)?;
        let window = cfg.window_config();
        for entity in &inputs.entities {
            let (_, series) = entity_series(&inputs, entity, &cfg.dimensions)?;
            for (dim, points) in series {
                let cps = detect_in_timecourse(&points, &window)?;
                log::info!("{} {dim}: {} change points", entity.canonical_name, cps.len());
                let name = format!("changepoints_{}_{}.csv", sanitize(&entity.canonical_name), dim);
                run.write_csv(&name, |buf| write_changepoints_csv(buf, &cps, inputs.corpus.bins()))?;
            }
        }
        run.finish("changepoints")
    })
}

fn fit_for(cfg: &RunConfig, inputs: &Inputs, entity: &EntityQuery) -> Result<TopicModelFit> {
    if let Some(p) = optional(&cfg.topic_fit, "topic_fit")? {
        return TopicModelFit::load(p);
    }
    let tc = TopicCorpus::for_entity(&inputs.corpus, entity, &inputs.stopwords);
    log::info!(
        "fitting {} topics for `{}` over {} slices",
        cfg.topics.k,
        entity.canonical_name,
        tc.slices.len()
    );
    fit_dynamic_topics(&tc, &cfg.topic_config())
}

fn write_salient_csv(out: &mut Vec<u8>, fit: &TopicModelFit, corpus: &Corpus, n: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_start", "slice", "topic", "rank", "word", "prob"])?;
    for (s, &bin) in fit.slice_bins.iter().enumerate() {
        let label = corpus.bins().get(bin).map(|b| b.start_label()).unwrap_or_default();
        for o in 0..fit.k {
            for (rank, (word, p)) in fit.salient_words(s, o, n)?.into_iter().enumerate() {
                w.write_record([
                    label.clone(),
                    s.to_string(),
                    o.to_string(),
                    (rank + 1).to_string(),
                    word,
                    p.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Fit and save one chained topic model per entity.
pub fn cmd_topics(cfg: &RunConfig) -> Result<CommandOutput> {
    in_pool(cfg, || {
        let inputs = load_inputs(cfg)?;
        let mut run = Run::new(cfg)?;
        for entity in &inputs.entities {
            let tc = TopicCorpus::for_entity(&inputs.corpus, entity, &inputs.stopwords);
            let fit = fit_dynamic_topics(&tc, &cfg.topic_config())?;
            let stem = format!("topics_{}", sanitize(&entity.canonical_name));
            let mut buf = Vec::new();
            fit.write_to(&mut buf).map_err(|e| Error::io(&stem, e))?;
            run.write(&format!("{stem}.fit"), &buf)?;
            run.write_csv(&format!("{stem}_salient.csv"), |b| {
                write_salient_csv(b, &fit, &inputs.corpus, cfg.trace.salient_words)
            })?;
        }
        run.finish("topics")
    })
}

fn write_ranking_csv(out: &mut Vec<u8>, report: &SourceTraceReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "topic", "delta_s", "counterfactual"])?;
    for (i, t) in report.topic_ranking.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            t.topic.to_string(),
            t.delta_s.to_string(),
            t.counterfactual.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

fn write_comparison_csv(out: &mut Vec<u8>, report: &SourceTraceReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "delta_j", "coherence", "n_docs", "p_value_vs_null", "significant"])?;
    let mut sets = vec![("topic_based", &report.source_docs)];
    if let Some(b) = &report.baselines {
        sets.push(("influence_function", &b.influence_function));
        sets.push(("random", &b.random));
    }
    for (method, set) in sets {
        w.write_record([
            method.to_string(),
            set.delta_j.to_string(),
            report.coherence.get(method).map(|c| c.value.to_string()).unwrap_or_default(),
            set.doc_ids.len().to_string(),
            set.p_value_vs_null.map(|p| p.to_string()).unwrap_or_default(),
            set.significant.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Source reports for every detected change point.
pub fn cmd_trace(cfg: &RunConfig) -> Result<CommandOutput> {
    in_pool(cfg, || {
        let inputs = load_inputs(cfg)?;
        if cfg.topic_fit.is_some() && inputs.entities.len() > 1 {
            return Err(Error::Config("`topic_fit` can only be reused for a single entity".into()));
        }
        let mut run = Run::new(cfg)?;
        let window = cfg.window_config();
        let settings = cfg.trace_settings();
        let mut reports = 0usize;
        for entity in &inputs.entities {
            let (scored, series) = entity_series(&inputs, entity, &cfg.dimensions)?;
            let detections: Vec<_> = series
                .iter()
                .map(|(dim, points)| Ok((*dim, points, detect_in_timecourse(points, &window)?)))
                .collect::<Result<_>>()?;
            if detections.iter().all(|(_, _, cps)| cps.is_empty()) {
                log::info!("no change points for `{}`", entity.canonical_name);
                continue;
            }
            let fit = fit_for(cfg, &inputs, entity)?;
            for (dim, points, cps) in detections {
                let ctx = TraceContext {
                    entity: &entity.canonical_name,
                    dimension: dim,
                    series: points,
                    scored: &scored,
                    fit: &fit,
                    corpus: &inputs.corpus,
                    emb: &inputs.embeddings,
                    stopwords: &inputs.stopwords,
                };
                for cp in &cps {
                    let provenance = Provenance {
                        config_hash: run.hash.clone(),
                        seed: cfg.seed,
                        corpus_path: path_str(&cfg.corpus),
                        fit_path: cfg.topic_fit.as_ref().map(|p| p.display().to_string()),
                    };
                    let Some(report) = trace_change_point(&ctx, cp, &settings, provenance)? else {
                        continue;
                    };
                    let stem = format!(
                        "trace_{}_{}_{}",
                        sanitize(&entity.canonical_name),
                        dim,
                        report.change_point.bin_start
                    );
                    run.write_json(&format!("{stem}.json"), &report)?;
                    run.write_csv(&format!("{stem}_topics.csv"), |b| write_ranking_csv(b, &report))?;
                    run.write_csv(&format!("{stem}_comparison.csv"), |b| write_comparison_csv(b, &report))?;
                    reports += 1;
                }
            }
        }
        if reports == 0 {
            let notice = "no change points detected; no reports written".to_string();
            log::warn!("{notice}");
            run.out.notice = Some(notice);
        }
        run.finish("trace")
    })
}

/// Score model variants against the annotated ground truth.
pub fn cmd_eval(cfg: &RunConfig) -> Result<CommandOutput> {
    in_pool(cfg, || {
        let inputs = load_inputs(cfg)?;
        let docs = inputs.corpus.documents();
        if !docs.iter().any(|d| d.annotations.as_ref().is_some_and(|a| !a.is_empty())) {
            return Err(Error::Config("corpus has no annotations; eval needs an annotated corpus".into()));
        }
        if cfg.variants.contains(&ModelVariant::PrecomputedVectors)
            && !docs.iter().any(|d| d.precomputed_vector.is_some())
        {
            return Err(Error::Config("variant precomputed_vectors needs documents with `vector` fields".into()));
        }
        let truth = build_ground_truth(docs, &inputs.entities, cfg.graded, cfg.seed)?;
        let lookup = truth.lookup();
        let dims = MoralDimension::all();
        let mut rows = Vec::new();
        for &variant in &cfg.variants {
            let per_entity = inputs
                .entities
                .iter()
                .map(|e| {
                    let docs = eval_docs(docs, e, &inputs.embeddings, &inputs.centroids, &inputs.stopwords, variant)?;
                    Ok((e.canonical_name.clone(), docs))
                })
                .collect::<Result<BTreeMap<_, _>>>()?;
            rows.extend(score(&model_judgments(&per_entity, variant), &lookup, variant, &dims));
        }
        let report = EvalReport {
            rows,
            graded: cfg.graded,
            polarity_tie_rule: "negative".into(),
        };
        let mut run = Run::new(cfg)?;
        run.write_csv("eval.csv", |b| write_eval_csv(b, &report))?;
        run.write_json("eval.json", &report)?;
        run.write_json("ground_truth.json", &truth.table)?;
        run.finish("eval")
    })
}

/// Parse `name<TAB>id id id` lines (ids separated by spaces or commas).
pub fn parse_doc_sets(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, ids) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path.display().to_string(), idx + 1, "expected `name<TAB>ids`"))?;
        let ids: Vec<String> = ids
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        if out.insert(name.trim().to_string(), ids).is_some() {
            return Err(Error::format(path.display().to_string(), idx + 1, format!("duplicate set `{name}`")));
        }
    }
    Ok(out)
}

/// Headline coherence of each document set in `doc_sets`.
pub fn cmd_coherence(cfg: &RunConfig) -> Result<CommandOutput> {
    in_pool(cfg, || {
        let sets_path = require(&cfg.doc_sets, "doc_sets")?;
        let corpus = Corpus::ingest(require(&cfg.corpus, "corpus")?, cfg.bin_width)?;
        let emb = WordEmbeddingStore::load(require(&cfg.embeddings, "embeddings")?, None)?;
        let stopwords = match optional(&cfg.stopwords, "stopwords")? {
            Some(p) => load_word_list(p)?,
            None => default_stopwords(),
        };
        let mut scores = BTreeMap::new();
        for (name, ids) in parse_doc_sets(sets_path)? {
            scores.insert(name, coherence(&ids, &corpus, &emb, &stopwords)?);
        }
        #[derive(Serialize)]
        struct Out<'a, T> {
            config_hash: &'a str,
            seed: u64,
            coherence: T,
        }
        let mut run = Run::new(cfg)?;
        let hash = run.hash.clone();
        run.write_json(
            "coherence.json",
            &Out {
                config_hash: &hash,
                seed: cfg.seed,
                coherence: scores,
            },
        )?;
        run.finish("coherence")
    })
}
