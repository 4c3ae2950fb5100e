//! Source attribution for a detected moral change.
//!
//! Given a change point `t` with base value `P(m | e, t)` and the documents
//! in the bins after `t`, this module measures how far removing a topic
//! (`delta_s`) or a document set (`delta_j`) moves the window estimate from
//! the base value. Smaller is more influential: removing the source restores
//! the base state.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{headline_vector, Corpus, Stopwords};
use crate::embedding::{Vector, WordEmbeddingStore};
use crate::error::{Error, Result};
use crate::lexicon::MoralDimension;
use crate::rng::{derive_seed, stream_rng};
use crate::timecourse::{ChangePoint, ScoredDoc, TimeCoursePoint};
use crate::topics::{TopicId, TopicModelFit};

/// A hierarchy-valid document in the change window with its `P_e(m | d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDoc {
    pub id: String,
    pub score: f64,
}

/// Documents of `scored` that fall in the bins after `cp` and pass the gate for `dim`.
pub fn window_docs(scored: &[ScoredDoc], cp: &ChangePoint, dim: MoralDimension) -> Vec<WindowDoc> {
    let bins = cp.after_bins();
    scored
        .iter()
        .filter(|d| bins.contains(&d.bin))
        .filter_map(|d| d.prob(dim).map(|score| WindowDoc { id: d.id.clone(), score }))
        .collect()
}

/// Unweighted mean score of the window.
pub fn window_mean(window: &[WindowDoc]) -> Option<f64> {
    if window.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for d in window {
        sum += d.score;
    }
    Some(sum / window.len() as f64)
}

/// `sum_d s_d (1 - w_d) / sum_d (1 - w_d)`, `None` when every weight is 1.
pub fn counterfactual_from_weights(scores: &[f64], topic_weights: &[f64]) -> Option<f64> {
    debug_assert_eq!(scores.len(), topic_weights.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, w) in scores.iter().zip(topic_weights) {
        let keep = 1.0 - w;
        num += s * keep;
        den += keep;
    }
    (den != 0.0).then(|| num / den)
}

fn topic_weights(window: &[WindowDoc], fit: &TopicModelFit, o: TopicId) -> Result<Vec<f64>> {
    if o >= fit.k {
        return Err(Error::Contract(format!("topic {o} out of range (k = {})", fit.k)));
    }
    window
        .iter()
        .map(|d| {
            fit.theta(&d.id)
                .map(|t| t[o])
                .ok_or_else(|| Error::Contract(format!("document `{}` is not covered by the topic fit", d.id)))
        })
        .collect()
}

/// Window estimate with topic `o` softly removed.
pub fn counterfactual_estimate(window: &[WindowDoc], fit: &TopicModelFit, o: TopicId) -> Result<Option<f64>> {
    let scores: Vec<f64> = window.iter().map(|d| d.score).collect();
    Ok(counterfactual_from_weights(&scores, &topic_weights(window, fit, o)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicInfluence {
    pub topic: TopicId,
    pub delta_s: f64,
    /// `None` when the topic carries all of the window's weight.
    pub counterfactual: Option<f64>,
}

/// `delta_s` for every topic, ascending; ties go to the lower topic id.
pub fn topic_influence(window: &[WindowDoc], base: f64, fit: &TopicModelFit) -> Result<Vec<TopicInfluence>> {
    if !base.is_finite() {
        return Err(Error::Contract("base value must be finite".into()));
    }
    let mut out = (0..fit.k)
        .map(|o| {
            let counterfactual = counterfactual_estimate(window, fit, o)?;
            Ok(TopicInfluence {
                topic: o,
                delta_s: counterfactual.map_or(0.0, |c| (c - base).abs()),
                counterfactual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.delta_s.total_cmp(&b.delta_s).then(a.topic.cmp(&b.topic)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetInfluence {
    /// Sorted.
    pub doc_ids: Vec<String>,
    pub delta_j: f64,
    /// Empirical quantile of `delta_j` in a sampled null distribution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value_vs_null: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub significant: Option<bool>,
}

/// `delta_j` with the documents flagged in `excluded` removed.
fn delta_j_masked(window: &[WindowDoc], base: f64, excluded: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (d, &x) in window.iter().zip(excluded) {
        if !x {
            sum += d.score;
            n += 1;
        }
    }
    if n == 0 {
        return 0.0;
    }
    (sum / n as f64 - base).abs()
}

fn mask_for(window: &[WindowDoc], doc_ids: &BTreeSet<String>) -> Result<Vec<bool>> {
    let present: BTreeSet<&str> = window.iter().map(|d| d.id.as_str()).collect();
    if let Some(missing) = doc_ids.iter().find(|id| !present.contains(id.as_str())) {
        return Err(Error::Contract(format!("document `{missing}` is not in the change window")));
    }
    Ok(window.iter().map(|d| doc_ids.contains(&d.id)).collect())
}

pub fn set_influence(window: &[WindowDoc], base: f64, doc_ids: &BTreeSet<String>) -> Result<SetInfluence> {
    let mask = mask_for(window, doc_ids)?;
    Ok(SetInfluence {
        doc_ids: doc_ids.iter().cloned().collect(),
        delta_j: delta_j_masked(window, base, &mask),
        p_value_vs_null: None,
        significant: None,
    })
}

/// `ceil(fraction * n)` clamped to `1..=n`. A small tolerance keeps products
/// such as `0.1 * 30` from rounding up past the intended integer.
pub fn source_set_size(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("source fraction {fraction} must lie in (0, 1]")));
    }
    if n == 0 {
        return Ok(0);
    }
    let raw = (fraction * n as f64 - 1e-9).ceil() as usize;
    Ok(raw.clamp(1, n))
}

/// The documents with the highest `P(topic = o | d)`; ties go to the smaller id.
pub fn topic_source_docs(
    window: &[WindowDoc],
    base: f64,
    fit: &TopicModelFit,
    o: TopicId,
    fraction: f64,
) -> Result<SetInfluence> {
    let size = source_set_size(window.len(), fraction)?;
    let weights = topic_weights(window, fit, o)?;
    let mut order: Vec<usize> = (0..window.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then_with(|| window[a].id.cmp(&window[b].id)));
    let chosen: BTreeSet<String> = order[..size].iter().map(|&i| window[i].id.clone()).collect();
    set_influence(window, base, &chosen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceSearch {
    pub fraction: f64,
    pub n_samples: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Enumerate every subset instead of sampling when `n_samples` is at
    /// least the number of subsets.
    pub exhaustive_when_feasible: bool,
}

impl Default for InfluenceSearch {
    fn default() -> Self {
        InfluenceSearch {
            fraction: 0.10,
            n_samples: 10_000,
            alpha: 0.05,
            seed: 0,
            exhaustive_when_feasible: true,
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Random-search influence baseline: the fixed-size subset whose removal
/// minimizes `delta_j` among `n_samples` uniform draws, with its quantile in
/// the sampled null distribution.
pub fn influence_function_baseline(window: &[WindowDoc], base: f64, search: &InfluenceSearch) -> Result<SetInfluence> {
    let n = window.len();
    let size = source_set_size(n, search.fraction)?;
    if size == 0 {
        return Err(Error::Config("influence baseline needs a nonempty window".into()));
    }
    if search.n_samples == 0 {
        return Err(Error::Config("influence baseline needs at least one sample".into()));
    }

    let evaluate = |subset: &[usize]| {
        let mut mask = vec![false; n];
        for &i in subset {
            mask[i] = true;
        }
        delta_j_masked(window, base, &mask)
    };

    let exhaustive = search.exhaustive_when_feasible && binomial(n, size) <= search.n_samples as u128;
    let null: Vec<(Vec<usize>, f64)> = if exhaustive {
        combinations(n, size)
            .into_par_iter()
            .map(|s| {
                let d = evaluate(&s);
                (s, d)
            })
            .collect()
    } else {
        (0..search.n_samples)
            .into_par_iter()
            .map(|j| {
                let mut rng = stream_rng(search.seed, &[j as u64]);
                let mut s = rand::seq::index::sample(&mut rng, n, size).into_vec();
                s.sort_unstable();
                let d = evaluate(&s);
                (s, d)
            })
            .collect()
    };

    let ids = |s: &[usize]| -> Vec<String> {
        let mut v: Vec<String> = s.iter().map(|&i| window[i].id.clone()).collect();
        v.sort();
        v
    };
    let (best, best_delta) = null
        .iter()
        .map(|(s, d)| (ids(s), *d))
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
        .expect("at least one subset");
    let at_or_below = null
        .iter()
        .filter(|(_, d)| *d <= best_delta + 1e-12 * (1.0 + best_delta))
        .count();
    let quantile = at_or_below as f64 / null.len() as f64;

    Ok(SetInfluence {
        doc_ids: best,
        delta_j: best_delta,
        p_value_vs_null: Some(quantile),
        significant: Some(quantile <= search.alpha),
    })
}

/// A uniformly random subset of `ceil(fraction * n)` window documents.
pub fn random_baseline(window: &[WindowDoc], base: f64, fraction: f64, seed: u64) -> Result<SetInfluence> {
    let size = source_set_size(window.len(), fraction)?;
    let mut rng = stream_rng(seed, &[]);
    let chosen: BTreeSet<String> = rand::seq::index::sample(&mut rng, window.len(), size)
        .into_iter()
        .map(|i| window[i].id.clone())
        .collect();
    set_influence(window, base, &chosen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceScore {
    pub value: f64,
    /// Documents whose body vector stood in for a missing headline.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub body_substituted: Vec<String>,
}

/// Mean cosine over ordered pairs `i != j`.
pub fn mean_pairwise_cosine(vectors: &[Vector]) -> Result<f64> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Contract(format!("coherence needs at least 2 documents, got {n}")));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += vectors[i].cosine(&vectors[j])?;
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

/// Expected coherence of a document set's headline vectors.
pub fn coherence(
    doc_ids: &[String],
    corpus: &Corpus,
    emb: &WordEmbeddingStore,
    stopwords: &Stopwords,
) -> Result<CoherenceScore> {
    let mut vectors = Vec::with_capacity(doc_ids.len());
    let mut body_substituted = Vec::new();
    for id in doc_ids {
        let doc = corpus
            .get(id)
            .ok_or_else(|| Error::Contract(format!("unknown document `{id}`")))?;
        let (v, substituted) = headline_vector(doc, emb, stopwords);
        if substituted {
            body_substituted.push(id.clone());
        }
        vectors.push(v);
    }
    Ok(CoherenceScore {
        value: mean_pairwise_cosine(&vectors)?,
        body_substituted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSettings {
    pub source_fraction: f64,
    pub influence: InfluenceSearch,
    pub baselines: bool,
    pub salient_words: usize,
    pub seed: u64,
}

impl Default for TraceSettings {
    fn default() -> Self {
        TraceSettings {
            source_fraction: 0.10,
            influence: InfluenceSearch::default(),
            baselines: true,
            salient_words: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointSummary {
    pub bin: usize,
    pub bin_start: String,
    pub window_start: String,
    pub window_end: String,
    pub p_value: f64,
    pub direction: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub influence_function: SetInfluence,
    pub random: SetInfluence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub corpus_path: String,
    pub fit_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTraceReport {
    pub entity: String,
    pub dimension: MoralDimension,
    pub change_point: ChangePointSummary,
    pub base_value: f64,
    pub window_mean: f64,
    pub window_docs: usize,
    pub topic_ranking: Vec<TopicInfluence>,
    pub source_topic: TopicId,
    pub source_docs: SetInfluence,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baselines: Option<Baselines>,
    /// Keyed by method: `topic_based`, `influence_function`, `random`.
    /// Sets with fewer than two documents have no entry.
    pub coherence: BTreeMap<String, CoherenceScore>,
    pub salient_words: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub provenance: Provenance,
}

/// Top words of topic `o` averaged over the fit slices covering `bins`.
fn window_salient_words(fit: &TopicModelFit, bins: std::ops::RangeInclusive<usize>, o: TopicId, n: usize) -> Vec<String> {
    let slices: Vec<usize> = bins.filter_map(|b| fit.slice_of_bin(b)).collect();
    if slices.is_empty() {
        return Vec::new();
    }
    let mut avg = vec![0.0; fit.vocab.len()];
    for &s in &slices {
        for (a, p) in avg.iter_mut().zip(&fit.phi[s][o]) {
            *a += p / slices.len() as f64;
        }
    }
    let mut order: Vec<usize> = (0..avg.len()).collect();
    order.sort_by(|&a, &b| avg[b].total_cmp(&avg[a]).then_with(|| fit.vocab[a].cmp(&fit.vocab[b])));
    order.into_iter().take(n).map(|w| fit.vocab[w].clone()).collect()
}

pub struct TraceContext<'a> {
    pub entity: &'a str,
    pub dimension: MoralDimension,
    pub series: &'a [TimeCoursePoint],
    pub scored: &'a [ScoredDoc],
    pub fit: &'a TopicModelFit,
    pub corpus: &'a Corpus,
    pub emb: &'a WordEmbeddingStore,
    pub stopwords: &'a Stopwords,
}

/// Assemble the full source report for one change point. `None` when the
/// base value is missing or no hierarchy-valid document falls after `t`.
pub fn trace_change_point(
    ctx: &TraceContext<'_>,
    cp: &ChangePoint,
    settings: &TraceSettings,
    provenance: Provenance,
) -> Result<Option<SourceTraceReport>> {
    let Some(base) = ctx.series[cp.bin].value else {
        log::warn!("no observed value at change point bin {}; skipped", cp.bin);
        return Ok(None);
    };
    let window = window_docs(ctx.scored, cp, ctx.dimension);
    let Some(mean) = window_mean(&window) else {
        log::warn!("change window after bin {} has no valid documents; skipped", cp.bin);
        return Ok(None);
    };

    let ranking = topic_influence(&window, base, ctx.fit)?;
    let source_topic = ranking[0].topic;
    let source_docs = topic_source_docs(&window, base, ctx.fit, source_topic, settings.source_fraction)?;

    let if_seed = derive_seed(settings.seed, &[1, cp.bin as u64]);
    let random_seed = derive_seed(settings.seed, &[2, cp.bin as u64]);
    let baselines = if settings.baselines {
        let search = InfluenceSearch {
            fraction: settings.source_fraction,
            seed: if_seed,
            ..settings.influence.clone()
        };
        Some(Baselines {
            influence_function: influence_function_baseline(&window, base, &search)?,
            random: random_baseline(&window, base, settings.source_fraction, random_seed)?,
        })
    } else {
        None
    };

    let mut coherence_scores = BTreeMap::new();
    let mut sets: Vec<(&str, &SetInfluence)> = vec![("topic_based", &source_docs)];
    if let Some(b) = &baselines {
        sets.push(("influence_function", &b.influence_function));
        sets.push(("random", &b.random));
    }
    for (method, set) in sets {
        if set.doc_ids.len() >= 2 {
            coherence_scores.insert(
                method.to_string(),
                coherence(&set.doc_ids, ctx.corpus, ctx.emb, ctx.stopwords)?,
            );
        }
    }

    let bins = ctx.corpus.bins();
    let mut seeds = BTreeMap::new();
    seeds.insert("master".to_string(), settings.seed);
    if settings.baselines {
        seeds.insert("influence_function".to_string(), if_seed);
        seeds.insert("random".to_string(), random_seed);
    }

    Ok(Some(SourceTraceReport {
        entity: ctx.entity.to_string(),
        dimension: ctx.dimension,
        change_point: ChangePointSummary {
            bin: cp.bin,
            bin_start: bins[cp.bin].start_label(),
            window_start: bins[cp.window_start].start_label(),
            window_end: bins[cp.window_end].start_label(),
            p_value: cp.p_value,
            direction: cp.direction,
        },
        base_value: base,
        window_mean: mean,
        window_docs: window.len(),
        salient_words: window_salient_words(ctx.fit, cp.after_bins(), source_topic, settings.salient_words),
        topic_ranking: ranking,
        source_topic,
        source_docs,
        baselines,
        coherence: coherence_scores,
        seeds,
        provenance,
    }))
}
