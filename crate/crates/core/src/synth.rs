//! Synthetic fixtures with known ground truth: a two-topic entity corpus with
//! a planted polarity flip, a two-slice topic-model corpus and noisy step series.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Duration, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Dirichlet, Distribution, Normal};
use serde_json::json;

use crate::corpus::{BinWidth, Corpus, Document, EntityQuery};
use crate::embedding::{Vector, WordEmbeddingStore};
use crate::error::{Error, Result};
use crate::lexicon::{Foundation, SeedLexicon};
use crate::rng::stream_rng;
use crate::topics::TopicCorpus;

const MORAL: usize = 0;
const POLARITY: usize = 1;
const NEUTRAL: usize = 7;
const TOPIC_A: usize = 8;
const TOPIC_B: usize = 9;
pub const SYNTH_DIM: usize = 10;

pub const ENTITY: &str = "acme";
pub const TOPIC_A_LABEL: &str = "alpha";
pub const TOPIC_B_LABEL: &str = "beta";

const SEEDS: [(Foundation, [&str; 3]); 10] = [
    (Foundation::Care, ["compassion", "kindness", "nurture"]),
    (Foundation::Harm, ["cruelty", "hurt", "abuse"]),
    (Foundation::Fairness, ["justice", "equality", "honesty"]),
    (Foundation::Cheating, ["fraud", "cheat", "swindle"]),
    (Foundation::Loyalty, ["loyal", "solidarity", "devotion"]),
    (Foundation::Betrayal, ["betray", "traitor", "treason"]),
    (Foundation::Authority, ["obey", "duty", "tradition"]),
    (Foundation::Subversion, ["rebel", "defy", "riot"]),
    (Foundation::Sanctity, ["pure", "sacred", "holy"]),
    (Foundation::Degradation, ["disgust", "filthy", "sin"]),
];

const NEUTRAL_SEEDS: [&str; 8] = ["table", "chair", "window", "carpet", "pencil", "bottle", "ladder", "basket"];

const TOPIC_A_WORDS: [&str; 12] = [
    "vaccine", "clinic", "dose", "nurse", "trial", "virus", "ward", "booster", "patient", "lab", "swab", "immunity",
];
const TOPIC_B_WORDS: [&str; 12] = [
    "stadium", "league", "coach", "striker", "goal", "season", "derby", "referee", "pitch", "trophy", "fans", "transfer",
];

fn foundation_axis(f: Foundation) -> usize {
    2 + Foundation::ALL.iter().position(|g| *g == f).expect("known foundation") / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftCorpusSpec {
    pub bins: usize,
    /// First weekly bin in which topic A speaks of the entity in vice terms.
    /// `None` keeps both topics virtuous throughout.
    pub flip_bin: Option<usize>,
    pub docs_per_topic: usize,
    pub topic_words_per_doc: usize,
    pub headline_words: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for ShiftCorpusSpec {
    fn default() -> Self {
        ShiftCorpusSpec {
            bins: 30,
            flip_bin: Some(15),
            docs_per_topic: 10,
            topic_words_per_doc: 6,
            headline_words: 3,
            noise: 0.03,
            seed: 0,
        }
    }
}

/// Two topics with disjoint vocabularies that both mention `acme`. Topic A
/// switches from virtue to vice words at `flip_bin`; topic B stays virtuous.
/// Moral words are assigned cyclically, so every bin on either side of the
/// flip has the same moral content.
#[derive(Debug, Clone)]
pub struct ShiftCorpus {
    pub spec: ShiftCorpusSpec,
    pub documents: Vec<Document>,
    pub embeddings: WordEmbeddingStore,
    pub lexicon: SeedLexicon,
    pub entity: EntityQuery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPaths {
    pub corpus: PathBuf,
    pub embeddings: PathBuf,
    pub lexicon: PathBuf,
    pub aliases: PathBuf,
}

impl ShiftCorpus {
    pub fn generate(spec: ShiftCorpusSpec) -> Result<Self> {
        if spec.bins == 0 || spec.docs_per_topic == 0 || spec.topic_words_per_doc == 0 {
            return Err(Error::Config("synthetic corpus needs bins, documents and topic words".into()));
        }
        let embeddings = synth_embeddings(spec.noise, spec.seed)?;
        let lexicon = SeedLexicon::new(
            SEEDS
                .iter()
                .map(|(f, ws)| (*f, ws.iter().map(|w| w.to_string()).collect()))
                .collect(),
            NEUTRAL_SEEDS.iter().map(|w| w.to_string()).collect(),
        )?;
        let virtue: Vec<&str> = SEEDS
            .iter()
            .filter(|(f, _)| f.polarity() == crate::lexicon::Polarity::Virtue)
            .flat_map(|(_, ws)| ws.iter().copied())
            .collect();
        let vice: Vec<&str> = SEEDS
            .iter()
            .filter(|(f, _)| f.polarity() == crate::lexicon::Polarity::Vice)
            .flat_map(|(_, ws)| ws.iter().copied())
            .collect();

        let start = Utc.with_ymd_and_hms(2020, 1, 6, 0, 0, 0).single().expect("valid date");
        let mut rng = stream_rng(spec.seed, &[0x5eed]);
        let mut documents = Vec::new();
        for bin in 0..spec.bins {
            for j in 0..spec.docs_per_topic {
                for (label, words) in [(TOPIC_A_LABEL, &TOPIC_A_WORDS), (TOPIC_B_LABEL, &TOPIC_B_WORDS)] {
                    let flipped = label == TOPIC_A_LABEL && spec.flip_bin.is_some_and(|t| bin >= t);
                    let pool = if flipped { &vice } else { &virtue };
                    let moral = [pool[(2 * j) % pool.len()], pool[(2 * j + 1) % pool.len()]];
                    let mut body: Vec<String> = vec![ENTITY.to_string()];
                    body.extend(moral.iter().map(|w| w.to_string()));
                    body.extend((0..spec.topic_words_per_doc).map(|_| words.choose(&mut rng).expect("nonempty").to_string()));
                    let headline: Vec<String> = (0..spec.headline_words)
                        .map(|_| words.choose(&mut rng).expect("nonempty").to_string())
                        .collect();
                    let minutes = rng.random_range(0..7 * 24 * 60);
                    documents.push(Document {
                        id: format!("b{bin:03}-{label}-{j:03}"),
                        timestamp: start + Duration::weeks(bin as i64) + Duration::minutes(minutes),
                        sentences: vec![body, vec!["the".into(), "weather".into(), "stayed".into(), "calm".into()]],
                        headline_tokens: Some(headline),
                        topic_label: Some(label.to_string()),
                        annotations: None,
                        precomputed_vector: None,
                    });
                }
            }
        }
        Ok(ShiftCorpus {
            spec,
            documents,
            embeddings,
            lexicon,
            entity: EntityQuery::new(ENTITY, &[] as &[&str])?,
        })
    }

    pub fn corpus(&self) -> Result<Corpus> {
        Corpus::from_documents(self.documents.clone(), BinWidth::Week)
    }

    pub fn topic_a_words() -> BTreeSet<&'static str> {
        TOPIC_A_WORDS.into_iter().collect()
    }

    pub fn topic_b_words() -> BTreeSet<&'static str> {
        TOPIC_B_WORDS.into_iter().collect()
    }

    /// Write corpus JSONL, embeddings, lexicon TSV and alias file into `dir`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<SynthPaths> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = SynthPaths {
            corpus: dir.join("corpus.jsonl"),
            embeddings: dir.join("embeddings.txt"),
            lexicon: dir.join("lexicon.tsv"),
            aliases: dir.join("aliases.tsv"),
        };

        let mut jsonl = Vec::new();
        for d in &self.documents {
            let rec = json!({
                "id": d.id,
                "timestamp": d.timestamp.to_rfc3339(),
                "tokens": d.sentences,
                "headline_tokens": d.headline_tokens,
                "topic_label": d.topic_label,
            });
            serde_json::to_writer(&mut jsonl, &rec)?;
            jsonl.push(b'\n');
        }
        fs::write(&paths.corpus, jsonl).map_err(|e| Error::io(&paths.corpus, e))?;
        self.embeddings.save(&paths.embeddings)?;

        let mut lex = String::from("# token\tcategory\n");
        for f in Foundation::ALL {
            for t in self.lexicon.foundation_seeds(f) {
                lex.push_str(&format!("{t}\t{f}\n"));
            }
        }
        for t in self.lexicon.neutral_seeds() {
            lex.push_str(&format!("{t}\tneutral\n"));
        }
        fs::write(&paths.lexicon, lex).map_err(|e| Error::io(&paths.lexicon, e))?;
        let mut f = fs::File::create(&paths.aliases).map_err(|e| Error::io(&paths.aliases, e))?;
        writeln!(f, "{ENTITY}\t{ENTITY}\tacme corp").map_err(|e| Error::io(&paths.aliases, e))?;
        Ok(paths)
    }
}

fn synth_embeddings(noise: f64, seed: u64) -> Result<WordEmbeddingStore> {
    let mut rng = stream_rng(seed, &[0xe3b]);
    let normal = Normal::new(0.0, noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut store = WordEmbeddingStore::new(SYNTH_DIM)?;
    let mut put = |token: &str, mut v: [f64; SYNTH_DIM]| -> Result<()> {
        for x in &mut v {
            *x += normal.sample(&mut rng);
        }
        store.insert(token, Vector::new(v.to_vec())?)?;
        Ok(())
    };
    for (f, words) in SEEDS {
        for w in words {
            let mut v = [0.0; SYNTH_DIM];
            v[MORAL] = 1.0;
            v[POLARITY] = if f.polarity() == crate::lexicon::Polarity::Virtue { 1.0 } else { -1.0 };
            v[foundation_axis(f)] = 1.0;
            put(w, v)?;
        }
    }
    for w in NEUTRAL_SEEDS {
        let mut v = [0.0; SYNTH_DIM];
        v[NEUTRAL] = 1.0;
        put(w, v)?;
    }
    for (axis, words) in [(TOPIC_A, &TOPIC_A_WORDS), (TOPIC_B, &TOPIC_B_WORDS)] {
        for w in words {
            let mut v = [0.0; SYNTH_DIM];
            v[axis] = 1.0;
            v[NEUTRAL] = 0.5;
            put(w, v)?;
        }
    }
    let mut v = [0.0; SYNTH_DIM];
    v[NEUTRAL] = 0.3;
    put(ENTITY, v)?;
    Ok(store)
}

/// A topic corpus drawn from a known two-topic, two-slice generator, with the
/// generating word distributions per slice.
#[derive(Debug, Clone)]
pub struct LdaFixture {
    pub corpus: TopicCorpus,
    /// `[slice][topic][word]`, indexed like `corpus.vocab` and renormalized
    /// over the words that occur.
    pub phi: Vec<Vec<Vec<f64>>>,
}

pub fn lda_fixture(seed: u64, docs_per_slice: usize, doc_len: usize) -> Result<LdaFixture> {
    let v = 30;
    let half = v / 2;
    let mut rng = stream_rng(seed, &[0x1da]);
    let cfg_err = |e: rand_distr::DirichletError| Error::Config(e.to_string());
    let word_dir = Dirichlet::new([1.0; 15]).map_err(cfg_err)?;
    let doc_dir = Dirichlet::new([0.2; 2]).map_err(cfg_err)?;

    let draw_topic = |rng: &mut rand_chacha::ChaCha8Rng, o: usize| -> Vec<f64> {
        let mut phi = vec![0.002; v];
        let mass: [f64; 15] = word_dir.sample(rng);
        for (i, m) in mass.iter().enumerate() {
            phi[o * half + i] += m;
        }
        let z: f64 = phi.iter().sum();
        phi.iter().map(|p| p / z).collect()
    };
    let first: Vec<Vec<f64>> = (0..2).map(|o| draw_topic(&mut rng, o)).collect();
    let drift: Vec<Vec<f64>> = (0..2).map(|o| draw_topic(&mut rng, o)).collect();
    let second: Vec<Vec<f64>> = first
        .iter()
        .zip(&drift)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| 0.8 * x + 0.2 * y).collect())
        .collect();
    let phi = vec![first, second];

    let vocab: Vec<String> = (0..v).map(|i| format!("w{i:02}")).collect();
    let mut groups = Vec::new();
    for (s, slice_phi) in phi.iter().enumerate() {
        let mut docs = Vec::new();
        for d in 0..docs_per_slice {
            let theta: [f64; 2] = doc_dir.sample(&mut rng);
            let tokens = (0..doc_len)
                .map(|_| {
                    let o = if rng.random::<f64>() < theta[0] { 0 } else { 1 };
                    vocab[sample_index(&slice_phi[o], rng.random())].clone()
                })
                .collect();
            docs.push((format!("s{s}-d{d:03}"), tokens));
        }
        groups.push((s, docs));
    }
    let corpus = TopicCorpus::from_tokens(groups);
    let index: BTreeMap<&str, usize> = vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let phi = phi
        .into_iter()
        .map(|slice| {
            slice
                .into_iter()
                .map(|topic| {
                    let kept: Vec<f64> = corpus.vocab.iter().map(|w| topic[index[w.as_str()]]).collect();
                    let z: f64 = kept.iter().sum();
                    kept.into_iter().map(|p| p / z).collect()
                })
                .collect()
        })
        .collect();
    Ok(LdaFixture { corpus, phi })
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// `len` points at `base` plus Gaussian noise, raised by `height` from index
/// `step_at` on.
pub fn step_series(len: usize, step_at: usize, base: f64, height: f64, sigma: f64, seed: u64) -> Result<Vec<Option<f64>>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = stream_rng(seed, &[0x57e9]);
    Ok((0..len)
        .map(|i| {
            let level = if i >= step_at { base + height } else { base };
            Some(level + normal.sample(&mut rng))
        })
        .collect())
}
