//! Moral sentiment time courses and sliding-window change-point detection.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify_doc, MoralPosterior};
use crate::corpus::{entity_filter, vectorize, Corpus, EntityQuery, Stopwords, TimeBin};
use crate::embedding::WordEmbeddingStore;
use crate::error::{Error, Result};
use crate::lexicon::{CentroidSet, MoralDimension};
use crate::rng::stream_rng;

/// A document mentioning the entity, with its tiered posterior. `posterior`
/// is `None` when no content word survived vectorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub id: String,
    pub bin: usize,
    pub posterior: Option<MoralPosterior>,
}

impl ScoredDoc {
    /// `P_e(m | d)` if the document passes the hierarchy gate for `dim`.
    pub fn prob(&self, dim: MoralDimension) -> Option<f64> {
        self.posterior.as_ref()?.prob(dim)
    }
}

/// Entity-filter, vectorize and classify every document mentioning `entity`,
/// in corpus order.
pub fn score_documents(
    corpus: &Corpus,
    entity: &EntityQuery,
    emb: &WordEmbeddingStore,
    centroids: &CentroidSet,
    stopwords: &Stopwords,
) -> Result<Vec<ScoredDoc>> {
    let scored: Vec<ScoredDoc> = corpus
        .documents()
        .par_iter()
        .filter_map(|d| entity_filter(d, entity))
        .map(|d| {
            let posterior = match vectorize(&d, entity, emb, centroids, stopwords)? {
                Some(v) => Some(classify_doc(&v, centroids)?),
                None => None,
            };
            Ok(ScoredDoc {
                bin: corpus.bin_of(&d.id).expect("document belongs to corpus"),
                id: d.id,
                posterior,
            })
        })
        .collect::<Result<_>>()?;
    if scored.is_empty() {
        return Err(Error::EmptyResult(format!(
            "entity `{}` is never mentioned in the corpus",
            entity.canonical_name
        )));
    }
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeCoursePoint {
    pub bin: TimeBin,
    /// Missing exactly when `n_docs == 0`.
    pub value: Option<f64>,
    pub n_docs: usize,
}

/// Mean `P_e(m | d)` per bin over documents that pass the hierarchy gate.
pub fn timecourse_from_scores(scored: &[ScoredDoc], bins: &[TimeBin], dim: MoralDimension) -> Vec<TimeCoursePoint> {
    let mut sums = vec![0.0; bins.len()];
    let mut counts = vec![0usize; bins.len()];
    for d in scored {
        if let Some(p) = d.prob(dim) {
            sums[d.bin] += p;
            counts[d.bin] += 1;
        }
    }
    bins.iter()
        .map(|b| {
            let n = counts[b.index];
            TimeCoursePoint {
                bin: *b,
                value: (n > 0).then(|| sums[b.index] / n as f64),
                n_docs: n,
            }
        })
        .collect()
}

pub fn moral_timecourse(
    corpus: &Corpus,
    entity: &EntityQuery,
    dim: MoralDimension,
    emb: &WordEmbeddingStore,
    centroids: &CentroidSet,
    stopwords: &Stopwords,
) -> Result<Vec<TimeCoursePoint>> {
    let scored = score_documents(corpus, entity, emb, centroids, stopwords)?;
    Ok(timecourse_from_scores(&scored, corpus.bins(), dim))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlidingWindowConfig {
    pub window_size: usize,
    pub step: usize,
    pub permutations: usize,
    pub p_threshold: f64,
    pub seed: u64,
}

impl Default for SlidingWindowConfig {
    fn default() -> Self {
        SlidingWindowConfig {
            window_size: 7,
            step: 3,
            permutations: 1000,
            p_threshold: 0.05,
            seed: 0,
        }
    }
}

impl SlidingWindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 {
            return Err(Error::Config("window size must be at least 3".into()));
        }
        if self.step == 0 {
            return Err(Error::Config("window step must be at least 1".into()));
        }
        if self.permutations == 0 {
            return Err(Error::Config("permutation count must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_threshold) {
            return Err(Error::Config("p threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePoint {
    /// Series index of the last point before the shift (`t`).
    pub bin: usize,
    /// Inclusive series indices of the window that produced it.
    pub window_start: usize,
    pub window_end: usize,
    pub p_value: f64,
    /// Sign of `mean(after) - mean(up to t)`.
    pub direction: i8,
    pub statistic: f64,
}

impl ChangePoint {
    /// `t + 1 ..= window_end`, the bins the shifted regime is measured over.
    pub fn after_bins(&self) -> std::ops::RangeInclusive<usize> {
        self.bin + 1..=self.window_end
    }
}

/// Fill missing points linearly between the nearest observed neighbours,
/// holding the edge value flat beyond the first or last observation.
fn interpolate(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let observed: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x)))
        .collect();
    if observed.is_empty() {
        return None;
    }
    Some(
        (0..values.len())
            .map(|i| {
                if let Some(x) = values[i] {
                    return x;
                }
                let right = observed.partition_point(|&(j, _)| j < i);
                match (right.checked_sub(1).map(|l| observed[l]), observed.get(right)) {
                    (Some((l, lv)), Some(&(r, rv))) => lv + (rv - lv) * (i - l) as f64 / (r - l) as f64,
                    (Some((_, lv)), None) => lv,
                    (None, Some(&(_, rv))) => rv,
                    (None, None) => unreachable!(),
                }
            })
            .collect(),
    )
}

/// `|mean(xs[i+1..]) - mean(xs[..=i])|` for every split `i` in `0..len-1`,
/// plus the signed difference.
pub(crate) fn mean_shift_stats(xs: &[f64]) -> Vec<(f64, f64)> {
    let n = xs.len();
    let total: f64 = xs.iter().sum();
    let mut prefix = 0.0;
    (0..n - 1)
        .map(|i| {
            prefix += xs[i];
            let before = prefix / (i + 1) as f64;
            let after = (total - prefix) / (n - i - 1) as f64;
            let diff = after - before;
            (diff.abs(), diff)
        })
        .collect()
}

fn at_least(candidate: f64, observed: f64) -> bool {
    candidate >= observed - 1e-12 * (1.0 + observed.abs())
}

pub fn detect_change_points(values: &[Option<f64>], cfg: &SlidingWindowConfig) -> Result<Vec<ChangePoint>> {
    cfg.validate()?;
    let w = cfg.window_size;
    if values.len() < w {
        return Err(Error::Config(format!(
            "series of length {} is shorter than the window size {w}",
            values.len()
        )));
    }
    let Some(filled) = interpolate(values) else {
        return Ok(Vec::new());
    };

    let mut found: Vec<ChangePoint> = Vec::new();
    for (window_idx, start) in (0..=values.len() - w).step_by(cfg.step).enumerate() {
        let missing = values[start..start + w].iter().filter(|v| v.is_none()).count();
        if missing * 5 > w {
            log::debug!("window at {start} skipped: {missing} of {w} points missing");
            continue;
        }
        let xs = &filled[start..start + w];
        let observed = mean_shift_stats(xs);

        let exceed = (0..cfg.permutations)
            .into_par_iter()
            .map(|j| {
                let mut rng = stream_rng(cfg.seed, &[window_idx as u64, j as u64]);
                let mut shuffled = xs.to_vec();
                shuffled.shuffle(&mut rng);
                mean_shift_stats(&shuffled)
                    .iter()
                    .zip(&observed)
                    .map(|(p, o)| at_least(p.0, o.0) as u32)
                    .collect::<Vec<u32>>()
            })
            .reduce(
                || vec![0; w - 1],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            );

        let p_values: Vec<f64> = exceed
            .iter()
            .map(|&c| (1.0 + c as f64) / (1.0 + cfg.permutations as f64))
            .collect();
        let best = (0..w - 1)
            .min_by(|&a, &b| {
                p_values[a]
                    .total_cmp(&p_values[b])
                    .then_with(|| observed[b].0.total_cmp(&observed[a].0))
                    .then_with(|| a.cmp(&b))
            })
            .expect("window has at least one split");
        if p_values[best] > cfg.p_threshold {
            continue;
        }
        let diff = observed[best].1;
        let cp = ChangePoint {
            bin: start + best,
            window_start: start,
            window_end: start + w - 1,
            p_value: p_values[best],
            direction: if diff > 0.0 { 1 } else if diff < 0.0 { -1 } else { 0 },
            statistic: observed[best].0,
        };
        match found.iter_mut().find(|c| c.bin == cp.bin) {
            Some(existing) if cp.p_value < existing.p_value => *existing = cp,
            Some(_) => {}
            None => found.push(cp),
        }
    }
    found.sort_by_key(|c| c.bin);
    Ok(found)
}

pub fn detect_in_timecourse(series: &[TimeCoursePoint], cfg: &SlidingWindowConfig) -> Result<Vec<ChangePoint>> {
    let values: Vec<Option<f64>> = series.iter().map(|p| p.value).collect();
    detect_change_points(&values, cfg)
}

/// `bin_start,value,n_docs`
pub fn write_timecourse_csv<W: Write>(out: W, series: &[TimeCoursePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_start", "value", "n_docs"])?;
    for p in series {
        w.write_record([
            p.bin.start_label(),
            p.value.map(|v| v.to_string()).unwrap_or_default(),
            p.n_docs.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// `bin_start,p_value,direction,window_start,window_end`
pub fn write_changepoints_csv<W: Write>(out: W, points: &[ChangePoint], bins: &[TimeBin]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_start", "p_value", "direction", "window_start", "window_end"])?;
    for c in points {
        w.write_record([
            bins[c.bin].start_label(),
            c.p_value.to_string(),
            c.direction.to_string(),
            bins[c.window_start].start_label(),
            bins[c.window_end].start_label(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
