//! The centroid model: distance softmax over each tier of the moral hierarchy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{Vector, WordEmbeddingStore};
use crate::error::{Error, Result};
use crate::lexicon::{CentroidSet, Foundation, MoralDimension, Polarity};

/// Softmax over negative Euclidean distances, temperature 1.
///
/// Returned probabilities follow the order of `centroids`. The smallest
/// distance is subtracted before exponentiation, which leaves the result
/// unchanged.
pub fn tier_softmax<L: Copy>(v: &Vector, centroids: &[(L, &Vector)]) -> Result<Vec<(L, f64)>> {
    if centroids.len() < 2 {
        return Err(Error::Contract(format!(
            "tier softmax needs at least 2 centroids, got {}",
            centroids.len()
        )));
    }
    let distances = centroids
        .iter()
        .map(|(_, c)| v.euclidean(c))
        .collect::<Result<Vec<f64>>>()?;
    Ok(softmax_neg_distances(&distances)
        .into_iter()
        .zip(centroids)
        .map(|(p, (label, _))| (*label, p))
        .collect())
}

pub(crate) fn softmax_neg_distances(distances: &[f64]) -> Vec<f64> {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = distances.iter().map(|d| (min - d).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// First label with the highest probability.
fn argmax<L: Copy>(probs: &[(L, f64)]) -> L {
    let mut best = probs[0];
    for &(l, p) in &probs[1..] {
        if p > best.1 {
            best = (l, p);
        }
    }
    best.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceProbs {
    pub relevant: f64,
    pub irrelevant: f64,
}

impl RelevanceProbs {
    /// Ties resolve to relevant.
    pub fn is_relevant(&self) -> bool {
        self.relevant >= self.irrelevant
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarityProbs {
    pub virtue: f64,
    pub vice: f64,
}

impl PolarityProbs {
    /// Ties resolve to virtue.
    pub fn verdict(&self) -> Polarity {
        if self.virtue >= self.vice {
            Polarity::Virtue
        } else {
            Polarity::Vice
        }
    }
}

/// Tiered posterior `P_e(m | d)` for one input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoralPosterior {
    pub relevance: RelevanceProbs,
    /// Present iff the relevance verdict is `relevant`.
    pub polarity: Option<PolarityProbs>,
    /// The five foundations of the winning polarity, renormalized among
    /// themselves. Present iff `polarity` is.
    pub foundations: Option<BTreeMap<Foundation, f64>>,
}

impl MoralPosterior {
    /// Probability for `dim`, or `None` when the hierarchy gates this input
    /// out of that dimension.
    pub fn prob(&self, dim: MoralDimension) -> Option<f64> {
        match dim {
            MoralDimension::Relevance => Some(self.relevance.relevant),
            MoralDimension::Polarity => self.polarity.map(|p| p.virtue),
            MoralDimension::Foundation(f) => self.foundations.as_ref()?.get(&f).copied(),
        }
    }

    pub fn polarity_verdict(&self) -> Option<Polarity> {
        self.polarity.map(|p| p.verdict())
    }
}

pub fn classify_doc(v: &Vector, centroids: &CentroidSet) -> Result<MoralPosterior> {
    let relevance = relevance_probs(v, centroids)?;
    if !relevance.is_relevant() {
        return Ok(MoralPosterior {
            relevance,
            polarity: None,
            foundations: None,
        });
    }

    let pol = tier_softmax(
        v,
        &[
            (Polarity::Virtue, &centroids.virtue),
            (Polarity::Vice, &centroids.vice),
        ],
    )?;
    let polarity = PolarityProbs {
        virtue: pol[0].1,
        vice: pol[1].1,
    };
    let winning = argmax(&pol);

    let candidates: Vec<(Foundation, &Vector)> = Foundation::with_polarity(winning)
        .map(|f| (f, centroids.foundation(f)))
        .collect();
    let foundations = tier_softmax(v, &candidates)?.into_iter().collect();

    Ok(MoralPosterior {
        relevance,
        polarity: Some(polarity),
        foundations: Some(foundations),
    })
}

fn relevance_probs(v: &Vector, centroids: &CentroidSet) -> Result<RelevanceProbs> {
    let probs = tier_softmax(v, &[(true, &centroids.moral), (false, &centroids.neutral)])?;
    Ok(RelevanceProbs {
        relevant: probs[0].1,
        irrelevant: probs[1].1,
    })
}

/// Relevance-tier probabilities for a single word; `None` when out of vocabulary.
pub fn classify_word(
    word: &str,
    emb: &WordEmbeddingStore,
    centroids: &CentroidSet,
) -> Result<Option<RelevanceProbs>> {
    match emb.get(word) {
        Some(v) => relevance_probs(v, centroids).map(Some),
        None => Ok(None),
    }
}
