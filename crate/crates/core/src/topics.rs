//! Dynamic topics by chained collapsed-Gibbs LDA.
//!
//! Each time slice is fit with its own Gibbs chain. The topic-word prior of
//! slice `s + 1` is the flat `beta` plus `chain_strength` times slice `s`'s
//! final topic-word counts, rescaled to slice `s + 1`'s token total. Topic
//! `o` therefore keeps its identity from slice to slice while adapting to
//! new vocabulary.
//!
//! Fits serialize to a tab-separated text layout:
//!
//! ```text
//! moral-trace-topics<TAB>1
//! k<TAB>K
//! vocab<TAB>V
//! <token>                      (V lines, sorted)
//! slices<TAB>S
//! <slice><TAB><bin index>      (S lines)
//! phi
//! <slice><TAB><topic><TAB>p_1 ... p_V         (S*K lines, tab-separated)
//! theta<TAB>D
//! <doc id><TAB><slice><TAB>p_1 ... p_K        (D lines, sorted by id)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{content_tokens, entity_filter, Corpus, EntityQuery, Stopwords};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub type TopicId = usize;

const FORMAT_MAGIC: &str = "moral-trace-topics";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModelConfig {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gibbs_iterations: usize,
    pub chain_strength: f64,
    pub seed: u64,
}

impl TopicModelConfig {
    /// Standard LDA defaults for `k` topics: alpha = 50/k, beta = 0.01.
    pub fn with_topics(k: usize) -> Self {
        TopicModelConfig {
            k,
            alpha: 50.0 / k.max(1) as f64,
            beta: 0.01,
            gibbs_iterations: 1000,
            chain_strength: 0.5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("topic count k must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("alpha and beta must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.chain_strength) {
            return Err(Error::Config("chain_strength must lie in [0, 1]".into()));
        }
        if self.gibbs_iterations == 0 {
            return Err(Error::Config("gibbs_iterations must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TopicModelConfig {
    fn default() -> Self {
        TopicModelConfig::with_topics(10)
    }
}

#[derive(Debug, Clone)]
pub struct SliceDocs {
    pub bin: usize,
    /// `(doc id, word ids)` pairs.
    pub docs: Vec<(String, Vec<usize>)>,
}

/// Word-id encoded documents grouped into time slices over a shared vocabulary.
#[derive(Debug, Clone)]
pub struct TopicCorpus {
    pub vocab: Vec<String>,
    pub slices: Vec<SliceDocs>,
}

impl TopicCorpus {
    /// Build from `(bin, [(doc id, tokens)])` groups. The vocabulary is the
    /// sorted set of all tokens.
    pub fn from_tokens(groups: Vec<(usize, Vec<(String, Vec<String>)>)>) -> Self {
        let vocab: Vec<String> = groups
            .iter()
            .flat_map(|(_, docs)| docs.iter().flat_map(|(_, t)| t.iter().cloned()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: BTreeMap<&str, usize> =
            vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
        let slices = groups
            .iter()
            .map(|(bin, docs)| SliceDocs {
                bin: *bin,
                docs: docs
                    .iter()
                    .map(|(id, toks)| (id.clone(), toks.iter().map(|t| index[t.as_str()]).collect()))
                    .collect(),
            })
            .collect();
        TopicCorpus { vocab, slices }
    }

    /// Entity-filtered content tokens of every document mentioning `entity`,
    /// one slice per bin that has at least one such document.
    pub fn for_entity(corpus: &Corpus, entity: &EntityQuery, stopwords: &Stopwords) -> Self {
        let mut groups = Vec::new();
        for bin in corpus.bins() {
            let docs: Vec<(String, Vec<String>)> = corpus
                .docs_in_bin(bin.index)
                .filter_map(|d| entity_filter(d, entity))
                .map(|d| {
                    let toks = content_tokens(&d, entity, stopwords).map(String::from).collect();
                    (d.id, toks)
                })
                .collect();
            if docs.is_empty() {
                log::debug!("bin {} has no documents for `{}`; no topic slice", bin.index, entity.canonical_name);
            } else {
                groups.push((bin.index, docs));
            }
        }
        TopicCorpus::from_tokens(groups)
    }

    fn total_tokens(docs: &[(String, Vec<usize>)]) -> usize {
        docs.iter().map(|(_, w)| w.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocTopics {
    pub slice: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicModelFit {
    pub k: usize,
    pub vocab: Vec<String>,
    /// Corpus bin index of each slice.
    pub slice_bins: Vec<usize>,
    /// `phi[slice][topic][word]`.
    pub phi: Vec<Vec<Vec<f64>>>,
    /// `P(topic | doc)` keyed by document id.
    pub theta: BTreeMap<String, DocTopics>,
}

pub(crate) struct SliceSampler<'a> {
    docs: &'a [(String, Vec<usize>)],
    k: usize,
    v: usize,
    alpha: f64,
    prior: Vec<f64>,
    prior_sum: Vec<f64>,
    z: Vec<Vec<usize>>,
    n_dk: Vec<Vec<u32>>,
    n_kw: Vec<u32>,
    n_k: Vec<u32>,
    weights: Vec<f64>,
}

impl<'a> SliceSampler<'a> {
    pub(crate) fn new<R: Rng>(
        docs: &'a [(String, Vec<usize>)],
        k: usize,
        v: usize,
        alpha: f64,
        prior: Vec<f64>,
        rng: &mut R,
    ) -> Self {
        let prior_sum = prior.chunks(v).map(|row| row.iter().sum()).collect();
        let mut s = SliceSampler {
            docs,
            k,
            v,
            alpha,
            prior,
            prior_sum,
            z: Vec::with_capacity(docs.len()),
            n_dk: vec![vec![0; k]; docs.len()],
            n_kw: vec![0; k * v],
            n_k: vec![0; k],
            weights: vec![0.0; k],
        };
        for (d, (_, words)) in docs.iter().enumerate() {
            let mut zd = Vec::with_capacity(words.len());
            for &w in words {
                let t = rng.random_range(0..k);
                zd.push(t);
                s.n_dk[d][t] += 1;
                s.n_kw[t * v + w] += 1;
                s.n_k[t] += 1;
            }
            s.z.push(zd);
        }
        s
    }

    pub(crate) fn sweep<R: Rng>(&mut self, rng: &mut R) {
        let (k, v) = (self.k, self.v);
        for d in 0..self.docs.len() {
            let words = &self.docs[d].1;
            for (i, &w) in words.iter().enumerate() {
                let old = self.z[d][i];
                self.n_dk[d][old] -= 1;
                self.n_kw[old * v + w] -= 1;
                self.n_k[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    let p = (self.n_dk[d][t] as f64 + self.alpha)
                        * (self.n_kw[t * v + w] as f64 + self.prior[t * v + w])
                        / (self.n_k[t] as f64 + self.prior_sum[t]);
                    total += p;
                    self.weights[t] = total;
                }
                let u = rng.random::<f64>() * total;
                let new = self.weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.z[d][i] = new;
                self.n_dk[d][new] += 1;
                self.n_kw[new * v + w] += 1;
                self.n_k[new] += 1;
            }
        }
    }

    #[cfg(test)]
    fn assigned_tokens(&self) -> u64 {
        self.n_dk.iter().flatten().map(|&c| c as u64).sum()
    }

    fn phi(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|t| {
                let denom = self.n_k[t] as f64 + self.prior_sum[t];
                (0..self.v)
                    .map(|w| (self.n_kw[t * self.v + w] as f64 + self.prior[t * self.v + w]) / denom)
                    .collect()
            })
            .collect()
    }

    fn theta(&self, d: usize) -> Vec<f64> {
        let n_d = self.docs[d].1.len() as f64;
        let denom = n_d + self.k as f64 * self.alpha;
        self.n_dk[d]
            .iter()
            .map(|&c| (c as f64 + self.alpha) / denom)
            .collect()
    }
}

/// Prior for the slice after one with counts `prev_counts` (`k * v`) over
/// `prev_tokens` tokens, for a slice of `next_tokens` tokens.
fn chained_prior(cfg: &TopicModelConfig, prev_counts: &[u32], prev_tokens: usize, next_tokens: usize) -> Vec<f64> {
    let scale = if prev_tokens == 0 {
        0.0
    } else {
        cfg.chain_strength * next_tokens as f64 / prev_tokens as f64
    };
    prev_counts.iter().map(|&c| cfg.beta + scale * c as f64).collect()
}

pub fn fit_dynamic_topics(corpus: &TopicCorpus, cfg: &TopicModelConfig) -> Result<TopicModelFit> {
    cfg.validate()?;
    if corpus.slices.is_empty() {
        return Err(Error::Config("topic corpus has no time slices".into()));
    }
    if let Some(s) = corpus.slices.iter().find(|s| s.docs.is_empty()) {
        return Err(Error::Config(format!("time bin {} has no documents to fit", s.bin)));
    }
    let (k, v) = (cfg.k, corpus.vocab.len());
    if k > v {
        return Err(Error::Config(format!(
            "k = {k} exceeds the vocabulary size {v}"
        )));
    }

    let mut phi = Vec::with_capacity(corpus.slices.len());
    let mut theta = BTreeMap::new();
    let mut prior = vec![cfg.beta; k * v];
    let mut prev: Option<(Vec<u32>, usize)> = None;

    for (s, slice) in corpus.slices.iter().enumerate() {
        let tokens = TopicCorpus::total_tokens(&slice.docs);
        if let Some((counts, prev_tokens)) = &prev {
            prior = chained_prior(cfg, counts, *prev_tokens, tokens);
        }
        let mut rng = stream_rng(cfg.seed, &[s as u64]);
        let mut sampler = SliceSampler::new(&slice.docs, k, v, cfg.alpha, prior.clone(), &mut rng);
        for _ in 0..cfg.gibbs_iterations {
            sampler.sweep(&mut rng);
        }
        phi.push(sampler.phi());
        for (d, (id, _)) in slice.docs.iter().enumerate() {
            let previous = theta.insert(
                id.clone(),
                DocTopics {
                    slice: s,
                    probs: sampler.theta(d),
                },
            );
            if previous.is_some() {
                return Err(Error::Contract(format!("document `{id}` appears in two slices")));
            }
        }
        prev = Some((sampler.n_kw.clone(), tokens));
    }

    Ok(TopicModelFit {
        k,
        vocab: corpus.vocab.clone(),
        slice_bins: corpus.slices.iter().map(|s| s.bin).collect(),
        phi,
        theta,
    })
}

impl TopicModelFit {
    pub fn theta(&self, doc_id: &str) -> Option<&[f64]> {
        self.theta.get(doc_id).map(|t| t.probs.as_slice())
    }

    /// Slice index holding corpus bin `bin`, if any.
    pub fn slice_of_bin(&self, bin: usize) -> Option<usize> {
        self.slice_bins.iter().position(|&b| b == bin)
    }

    /// Top `n` words of topic `o` in `slice` by probability; ties go to the
    /// lexicographically smaller token.
    pub fn salient_words(&self, slice: usize, o: TopicId, n: usize) -> Result<Vec<(String, f64)>> {
        let row = self
            .phi
            .get(slice)
            .ok_or_else(|| Error::Contract(format!("slice {slice} out of range")))?
            .get(o)
            .ok_or_else(|| Error::Contract(format!("topic {o} out of range (k = {})", self.k)))?;
        let mut ranked: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.vocab[a.0].cmp(&self.vocab[b.0])));
        Ok(ranked
            .into_iter()
            .take(n)
            .map(|(w, p)| (self.vocab[w].clone(), p))
            .collect())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{FORMAT_MAGIC}\t{FORMAT_VERSION}")?;
        writeln!(out, "k\t{}", self.k)?;
        writeln!(out, "vocab\t{}", self.vocab.len())?;
        for w in &self.vocab {
            writeln!(out, "{w}")?;
        }
        writeln!(out, "slices\t{}", self.slice_bins.len())?;
        for (s, b) in self.slice_bins.iter().enumerate() {
            writeln!(out, "{s}\t{b}")?;
        }
        writeln!(out, "phi")?;
        for (s, topics) in self.phi.iter().enumerate() {
            for (o, row) in topics.iter().enumerate() {
                write!(out, "{s}\t{o}")?;
                for p in row {
                    write!(out, "\t{p}")?;
                }
                writeln!(out)?;
            }
        }
        writeln!(out, "theta\t{}", self.theta.len())?;
        for (id, t) in &self.theta {
            write!(out, "{id}\t{}", t.slice)?;
            for p in &t.probs {
                write!(out, "\t{p}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::format(source, 0, format!("unexpected end of file, expected {what}")))
        };
        let err = |line: usize, msg: String| Error::format(source, line, msg);
        let keyed = |(line, l): (usize, &str), key: &str| -> Result<usize> {
            let (k, v) = l
                .split_once('\t')
                .ok_or_else(|| err(line, format!("expected `{key}<TAB>n`")))?;
            if k != key {
                return Err(err(line, format!("expected `{key}`, found `{k}`")));
            }
            v.parse().map_err(|_| err(line, format!("invalid count `{v}`")))
        };
        let floats = |line: usize, fields: &[&str], n: usize| -> Result<Vec<f64>> {
            if fields.len() != n {
                return Err(err(line, format!("expected {n} values, found {}", fields.len())));
            }
            fields
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| err(line, format!("invalid number `{f}`"))))
                .collect()
        };

        let version = keyed(next("header")?, FORMAT_MAGIC)?;
        if version != FORMAT_VERSION as usize {
            return Err(err(1, format!("unsupported topic fit version {version}")));
        }
        let k = keyed(next("k")?, "k")?;
        let v = keyed(next("vocab")?, "vocab")?;
        let mut vocab = Vec::with_capacity(v);
        for _ in 0..v {
            vocab.push(next("vocabulary token")?.1.to_string());
        }
        let n_slices = keyed(next("slices")?, "slices")?;
        let mut slice_bins = Vec::with_capacity(n_slices);
        for s in 0..n_slices {
            let (line, l) = next("slice row")?;
            let (idx, bin) = l.split_once('\t').ok_or_else(|| err(line, "expected `slice<TAB>bin`".into()))?;
            if idx.parse::<usize>().ok() != Some(s) {
                return Err(err(line, format!("expected slice {s}")));
            }
            slice_bins.push(bin.parse().map_err(|_| err(line, format!("invalid bin `{bin}`")))?);
        }
        let (line, l) = next("phi")?;
        if l != "phi" {
            return Err(err(line, "expected `phi`".into()));
        }
        let mut phi = vec![Vec::with_capacity(k); n_slices];
        for s in 0..n_slices {
            for o in 0..k {
                let (line, l) = next("phi row")?;
                let fields: Vec<&str> = l.split('\t').collect();
                if fields.len() < 2 || fields[0].parse::<usize>().ok() != Some(s) || fields[1].parse::<usize>().ok() != Some(o) {
                    return Err(err(line, format!("expected phi row for slice {s}, topic {o}")));
                }
                phi[s].push(floats(line, &fields[2..], v)?);
            }
        }
        let n_docs = keyed(next("theta")?, "theta")?;
        let mut theta = BTreeMap::new();
        for _ in 0..n_docs {
            let (line, l) = next("theta row")?;
            let fields: Vec<&str> = l.split('\t').collect();
            if fields.len() < 2 {
                return Err(err(line, "expected `id<TAB>slice<TAB>probs`".into()));
            }
            let slice: usize = fields[1].parse().map_err(|_| err(line, "invalid slice".into()))?;
            if slice >= n_slices {
                return Err(err(line, format!("slice {slice} out of range")));
            }
            let probs = floats(line, &fields[2..], k)?;
            theta.insert(fields[0].to_string(), DocTopics { slice, probs });
        }
        Ok(TopicModelFit {
            k,
            vocab,
            slice_bins,
            phi,
            theta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(k: usize, iters: usize, seed: u64) -> TopicModelConfig {
        TopicModelConfig {
            gibbs_iterations: iters,
            seed,
            ..TopicModelConfig::with_topics(k)
        }
    }

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn small_corpus() -> TopicCorpus {
        TopicCorpus::from_tokens(vec![
            (0, vec![("a".into(), words("x y z x")), ("b".into(), words("p q p"))]),
            (1, vec![("c".into(), words("x z p")), ("d".into(), words("q q y"))]),
        ])
    }

    #[test]
    fn single_topic_posterior_is_one() {
        let fit = fit_dynamic_topics(&small_corpus(), &cfg(1, 20, 3)).unwrap();
        for t in fit.theta.values() {
            assert_eq!(t.probs, vec![1.0]);
        }
    }

    #[test]
    fn rows_are_probability_vectors() {
        let fit = fit_dynamic_topics(&small_corpus(), &cfg(3, 50, 9)).unwrap();
        for t in fit.theta.values() {
            assert!((t.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(t.probs.iter().all(|&p| p >= 0.0));
        }
        for slice in &fit.phi {
            for row in slice {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = fit_dynamic_topics(&small_corpus(), &cfg(2, 40, 11)).unwrap();
        let b = fit_dynamic_topics(&small_corpus(), &cfg(2, 40, 11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gibbs_conserves_counts() {
        let corpus = small_corpus();
        let docs = &corpus.slices[0].docs;
        let total: u64 = docs.iter().map(|(_, w)| w.len() as u64).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = SliceSampler::new(docs, 3, corpus.vocab.len(), 0.5, vec![0.01; 3 * corpus.vocab.len()], &mut rng);
        assert_eq!(s.assigned_tokens(), total);
        for _ in 0..25 {
            s.sweep(&mut rng);
            assert_eq!(s.assigned_tokens(), total);
            assert_eq!(s.n_k.iter().map(|&c| c as u64).sum::<u64>(), total);
        }
    }

    #[test]
    fn zero_chain_strength_fits_slices_independently() {
        let corpus = small_corpus();
        let c = TopicModelConfig {
            chain_strength: 0.0,
            ..cfg(2, 30, 21)
        };
        let fit = fit_dynamic_topics(&corpus, &c).unwrap();

        // Refit slice 1 on its own with the same stream.
        let v = corpus.vocab.len();
        let docs = &corpus.slices[1].docs;
        let mut rng = stream_rng(c.seed, &[1]);
        let mut s = SliceSampler::new(docs, 2, v, c.alpha, vec![c.beta; 2 * v], &mut rng);
        for _ in 0..c.gibbs_iterations {
            s.sweep(&mut rng);
        }
        assert_eq!(fit.phi[1], s.phi());
        assert_eq!(fit.theta("c").unwrap(), s.theta(0).as_slice());
    }

    #[test]
    fn empty_bin_and_oversized_k_are_config_errors() {
        let corpus = TopicCorpus::from_tokens(vec![(0, vec![("a".into(), words("x y"))]), (4, vec![])]);
        match fit_dynamic_topics(&corpus, &cfg(1, 5, 0)).unwrap_err() {
            Error::Config(m) => assert!(m.contains("bin 4"), "{m}"),
            e => panic!("{e:?}"),
        }
        let corpus = TopicCorpus::from_tokens(vec![(0, vec![("a".into(), words("x y"))])]);
        assert!(matches!(fit_dynamic_topics(&corpus, &cfg(3, 5, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn salient_words_tie_break_and_argmax() {
        let fit = TopicModelFit {
            k: 2,
            vocab: words("apple banana cherry date"),
            slice_bins: vec![0],
            phi: vec![vec![vec![0.25; 4], vec![0.1, 0.1, 0.7, 0.1]]],
            theta: BTreeMap::new(),
        };
        let top: Vec<String> = fit.salient_words(0, 0, 2).unwrap().into_iter().map(|x| x.0).collect();
        assert_eq!(top, words("apple banana"));
        assert_eq!(fit.salient_words(0, 1, 1).unwrap()[0].0, "cherry");
        assert!(fit.salient_words(0, 2, 1).is_err());
        assert!(fit.salient_words(1, 0, 1).is_err());
    }

    #[test]
    fn serialization_round_trips_exactly() {
        let fit = fit_dynamic_topics(&small_corpus(), &cfg(2, 30, 4)).unwrap();
        let mut buf = Vec::new();
        fit.write_to(&mut buf).unwrap();
        let back = TopicModelFit::parse(std::str::from_utf8(&buf).unwrap(), "mem").unwrap();
        assert_eq!(back, fit);
    }

    #[test]
    fn truncated_fit_is_format_error() {
        let fit = fit_dynamic_topics(&small_corpus(), &cfg(2, 5, 4)).unwrap();
        let mut buf = Vec::new();
        fit.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(TopicModelFit::parse(cut, "mem"), Err(Error::Format { .. })));
    }
}
