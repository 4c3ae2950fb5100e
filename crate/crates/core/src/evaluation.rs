//! Scoring model moral judgments against annotated ground truth.
//!
//! Ground truth per annotated document:
//! * irrelevant when more than half of the annotators chose `non-moral`;
//! * positive polarity when virtue-category annotations outnumber vice ones
//!   (exact ties count as negative);
//! * foundation = the category with the most votes, ties broken by a seeded
//!   uniform pick.
//!
//! Judgments are aggregated per (entity, topic, dimension) over documents
//! that pass the hierarchy gate for that dimension.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::classifier::{classify_doc, MoralPosterior};
use crate::corpus::{entity_filter, vectorize, Annotation, Document, EntityQuery, Stopwords};
use crate::embedding::WordEmbeddingStore;
use crate::error::{Error, Result};
use crate::lexicon::{CentroidSet, Foundation, MoralDimension, Polarity};
use crate::rng::stream_rng;

pub const NON_MORAL: &str = "non-moral";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocLabel {
    pub relevant: bool,
    /// Set for relevant documents.
    pub polarity: Option<Polarity>,
    /// Majority-vote foundation, if any foundation label was given.
    pub foundation: Option<Foundation>,
    /// Fraction of annotators not choosing `non-moral`.
    pub graded_relevance: f64,
    /// Virtue share of the moral annotations (0 when there are none).
    pub graded_virtue: f64,
    /// Share of the moral annotations per foundation.
    pub graded_foundations: BTreeMap<Foundation, f64>,
}

impl DocLabel {
    /// Whether the document enters the ground truth for `dim`.
    pub fn passes_gate(&self, dim: MoralDimension) -> bool {
        match dim {
            MoralDimension::Relevance => true,
            MoralDimension::Polarity => self.relevant,
            MoralDimension::Foundation(f) => self.relevant && self.polarity == Some(f.polarity()),
        }
    }

    /// Binary or graded indicator of `dim` for a gated document.
    pub fn indicator(&self, dim: MoralDimension, graded: bool) -> f64 {
        match (dim, graded) {
            (MoralDimension::Relevance, false) => self.relevant as u8 as f64,
            (MoralDimension::Relevance, true) => self.graded_relevance,
            (MoralDimension::Polarity, false) => (self.polarity == Some(Polarity::Virtue)) as u8 as f64,
            (MoralDimension::Polarity, true) => self.graded_virtue,
            (MoralDimension::Foundation(f), false) => (self.foundation == Some(f)) as u8 as f64,
            (MoralDimension::Foundation(f), true) => self.graded_foundations.get(&f).copied().unwrap_or(0.0),
        }
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Apply the majority-vote rules to one document's annotations. Ties between
/// foundations are broken by a pick seeded from `seed` and the document id.
pub fn label_document(doc_id: &str, annotations: &[Annotation], seed: u64) -> Result<DocLabel> {
    if annotations.is_empty() {
        return Err(Error::Record {
            id: doc_id.to_string(),
            message: "no annotations".into(),
        });
    }
    let n = annotations.len();
    let mut non_moral = 0usize;
    let mut votes: BTreeMap<Foundation, usize> = BTreeMap::new();
    for a in annotations {
        let mut said_non_moral = false;
        for label in &a.labels {
            let label = label.trim().to_lowercase();
            if label == NON_MORAL || label == "nonmoral" || label == "non_moral" {
                said_non_moral = true;
                continue;
            }
            let name = label.split('.').next().unwrap_or_default();
            let f: Foundation = name.parse().map_err(|_| Error::Record {
                id: doc_id.to_string(),
                message: format!("unknown annotation label `{label}`"),
            })?;
            *votes.entry(f).or_default() += 1;
        }
        non_moral += said_non_moral as usize;
    }

    let relevant = 2 * non_moral <= n;
    let virtue: usize = votes.iter().filter(|(f, _)| f.polarity() == Polarity::Virtue).map(|(_, c)| c).sum();
    let vice: usize = votes.iter().filter(|(f, _)| f.polarity() == Polarity::Vice).map(|(_, c)| c).sum();
    let moral_total = virtue + vice;
    let polarity = relevant.then_some(if virtue > vice { Polarity::Virtue } else { Polarity::Vice });

    let foundation = votes.values().max().and_then(|&top| {
        let tied: Vec<Foundation> = votes.iter().filter(|(_, &c)| c == top).map(|(f, _)| *f).collect();
        if tied.len() == 1 {
            Some(tied[0])
        } else {
            let mut rng = stream_rng(seed, &[fnv1a(doc_id)]);
            tied.choose(&mut rng).copied()
        }
    });

    let share = |c: usize| if moral_total == 0 { 0.0 } else { c as f64 / moral_total as f64 };
    Ok(DocLabel {
        relevant,
        polarity,
        foundation,
        graded_relevance: 1.0 - non_moral as f64 / n as f64,
        graded_virtue: share(virtue),
        graded_foundations: votes.iter().map(|(f, &c)| (*f, share(c))).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalJudgment {
    pub entity: String,
    pub topic_label: String,
    pub dimension: MoralDimension,
    /// Sum of indicators; a count in binary mode.
    pub count_m_e_o: f64,
    pub count_e_o: usize,
    pub p_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub labels: BTreeMap<String, DocLabel>,
    /// Only cells with at least one gated document.
    pub table: Vec<EmpiricalJudgment>,
    pub skipped_unannotated: usize,
    pub graded: bool,
}

impl GroundTruth {
    pub fn lookup(&self) -> BTreeMap<(String, String, MoralDimension), f64> {
        self.table
            .iter()
            .map(|j| ((j.entity.clone(), j.topic_label.clone(), j.dimension), j.p_hat))
            .collect()
    }
}

pub fn build_ground_truth(docs: &[Document], entities: &[EntityQuery], graded: bool, seed: u64) -> Result<GroundTruth> {
    let mut labels = BTreeMap::new();
    let mut skipped = 0usize;
    for d in docs {
        match &d.annotations {
            Some(a) if !a.is_empty() && d.topic_label.is_some() => {
                labels.insert(d.id.clone(), label_document(&d.id, a, seed)?);
            }
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::info!("{skipped} documents without annotations or topic label skipped");
    }

    // (entity, topic, dim) -> (indicator sum, gated count)
    let mut cells: BTreeMap<(String, String, MoralDimension), (f64, usize)> = BTreeMap::new();
    for d in docs {
        let (Some(label), Some(topic)) = (labels.get(&d.id), &d.topic_label) else {
            continue;
        };
        for e in entities.iter().filter(|e| e.mentioned_in(d)) {
            for dim in MoralDimension::all() {
                if label.passes_gate(dim) {
                    let cell = cells.entry((e.canonical_name.clone(), topic.clone(), dim)).or_default();
                    cell.0 += label.indicator(dim, graded);
                    cell.1 += 1;
                }
            }
        }
    }
    let table = cells
        .into_iter()
        .map(|((entity, topic_label, dimension), (m, n))| EmpiricalJudgment {
            entity,
            topic_label,
            dimension,
            count_m_e_o: m,
            count_e_o: n,
            p_hat: m / n as f64,
        })
        .collect();
    Ok(GroundTruth {
        labels,
        table,
        skipped_unannotated: skipped,
        graded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    TopicBased,
    TopicFreeStatic,
    PrecomputedVectors,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] = [
        ModelVariant::TopicBased,
        ModelVariant::TopicFreeStatic,
        ModelVariant::PrecomputedVectors,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::TopicBased => "topic_based",
            ModelVariant::TopicFreeStatic => "topic_free_static",
            ModelVariant::PrecomputedVectors => "precomputed_vectors",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant `{s}`")))
    }
}

/// One entity-bearing document as the model sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalDoc {
    pub id: String,
    pub topic_label: String,
    pub posterior: Option<MoralPosterior>,
}

impl EvalDoc {
    fn prob(&self, dim: MoralDimension) -> Option<f64> {
        self.posterior.as_ref()?.prob(dim)
    }
}

/// Classify every topic-labelled document mentioning `entity`. Static
/// variants ignore precomputed vectors; the precomputed variant uses only them.
pub fn eval_docs(
    docs: &[Document],
    entity: &EntityQuery,
    emb: &WordEmbeddingStore,
    centroids: &CentroidSet,
    stopwords: &Stopwords,
    variant: ModelVariant,
) -> Result<Vec<EvalDoc>> {
    docs.par_iter()
        .filter(|d| d.topic_label.is_some())
        .filter_map(|d| entity_filter(d, entity))
        .map(|mut d| {
            let vector = match variant {
                ModelVariant::PrecomputedVectors => d.precomputed_vector.clone(),
                _ => {
                    d.precomputed_vector = None;
                    vectorize(&d, entity, emb, centroids, stopwords)?
                }
            };
            let posterior = vector.map(|v| classify_doc(&v, centroids)).transpose()?;
            Ok(EvalDoc {
                id: d.id,
                topic_label: d.topic_label.expect("filtered above"),
                posterior,
            })
        })
        .collect()
}

/// `P(m | e, o)` for one entity's documents. Topic-based averages over the
/// documents labelled `o`; topic-free variants average over all of them.
/// `None` unless at least one document labelled `o` passes the gate for `m`.
pub fn model_judgment(docs: &[EvalDoc], dim: MoralDimension, topic: &str, variant: ModelVariant) -> Option<f64> {
    let in_topic = |d: &&EvalDoc| d.topic_label == topic;
    docs.iter().filter(in_topic).find_map(|d| d.prob(dim))?;
    let probs: Vec<f64> = match variant {
        ModelVariant::TopicBased => docs.iter().filter(in_topic).filter_map(|d| d.prob(dim)).collect(),
        _ => docs.iter().filter_map(|d| d.prob(dim)).collect(),
    };
    Some(probs.iter().sum::<f64>() / probs.len() as f64)
}

/// Model judgments for every (entity, topic, dimension) cell with a defined value.
pub fn model_judgments(
    per_entity: &BTreeMap<String, Vec<EvalDoc>>,
    variant: ModelVariant,
) -> BTreeMap<(String, String, MoralDimension), f64> {
    let mut out = BTreeMap::new();
    for (entity, docs) in per_entity {
        let topics: BTreeSet<&str> = docs.iter().map(|d| d.topic_label.as_str()).collect();
        for topic in topics {
            for dim in MoralDimension::all() {
                if let Some(p) = model_judgment(docs, dim, topic, variant) {
                    out.insert((entity.clone(), topic.to_string(), dim), p);
                }
            }
        }
    }
    out
}

/// F1 of the positive class with both sides thresholded at 0.5. When neither
/// side has a positive, agreement is perfect and F1 is 1.
pub fn f1_score(pairs: &[(f64, f64)]) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for &(pred, truth) in pairs {
        match (pred >= 0.5, truth >= 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fneg == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

/// Pearson r and its two-sided p-value. `None` for fewer than three pairs or
/// a constant side.
pub fn pearson(pairs: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = pairs.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Some((r, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub dimension: MoralDimension,
    pub variant: ModelVariant,
    pub f1: f64,
    pub pearson_r: Option<f64>,
    pub p_value: Option<f64>,
    /// `p_value` times the number of dimensions scored, capped at 1.
    pub p_bonferroni: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub graded: bool,
    /// How an exact virtue/vice vote tie was labelled.
    pub polarity_tie_rule: String,
}

/// Score one variant's judgments on every dimension, over cells valid on both sides.
pub fn score(
    predictions: &BTreeMap<(String, String, MoralDimension), f64>,
    truth: &BTreeMap<(String, String, MoralDimension), f64>,
    variant: ModelVariant,
    dimensions: &[MoralDimension],
) -> Vec<EvalRow> {
    let tests = dimensions.len() as f64;
    dimensions
        .iter()
        .map(|&dim| {
            let pairs: Vec<(f64, f64)> = predictions
                .iter()
                .filter(|((_, _, d), _)| *d == dim)
                .filter_map(|(key, &p)| truth.get(key).map(|&t| (p, t)))
                .collect();
            let corr = pearson(&pairs);
            EvalRow {
                dimension: dim,
                variant,
                f1: f1_score(&pairs),
                pearson_r: corr.map(|c| c.0),
                p_value: corr.map(|c| c.1),
                p_bonferroni: corr.map(|c| (c.1 * tests).min(1.0)),
                n: pairs.len(),
            }
        })
        .collect()
}

/// One row per dimension; `<variant>_f1,<variant>_r,<variant>_p,<variant>_n`
/// column groups per variant present.
pub fn write_eval_csv<W: Write>(out: W, report: &EvalReport) -> Result<()> {
    let variants: Vec<ModelVariant> = report
        .rows
        .iter()
        .map(|r| r.variant)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let dims: Vec<MoralDimension> = MoralDimension::all()
        .into_iter()
        .filter(|d| report.rows.iter().any(|r| r.dimension == *d))
        .collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["dimension".to_string()];
    for v in &variants {
        for col in ["f1", "r", "p", "n"] {
            header.push(format!("{v}_{col}"));
        }
    }
    w.write_record(&header)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for d in dims {
        let mut rec = vec![d.to_string()];
        for v in &variants {
            match report.rows.iter().find(|r| r.dimension == d && r.variant == *v) {
                Some(r) => rec.extend([r.f1.to_string(), opt(r.pearson_r), opt(r.p_bonferroni), r.n.to_string()]),
                None => rec.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{PolarityProbs, RelevanceProbs};

    fn ann(sets: &[&[&str]]) -> Vec<Annotation> {
        sets.iter()
            .enumerate()
            .map(|(i, ls)| Annotation {
                annotator: format!("a{i}"),
                labels: ls.iter().map(|s| s.to_string()).collect(),
            })
            .collect()
    }

    #[test]
    fn three_of_five_non_moral_is_irrelevant() {
        let a = ann(&[&["non-moral"], &["non-moral"], &["non-moral"], &["care"], &["harm"]]);
        let l = label_document("t", &a, 0).unwrap();
        assert!(!l.relevant);
        assert!(l.polarity.is_none());
        assert!(!l.passes_gate(MoralDimension::Polarity));
    }

    #[test]
    fn exactly_half_non_moral_stays_relevant() {
        let a = ann(&[&["non-moral"], &["non-moral"], &["care"], &["care"]]);
        assert!(label_document("t", &a, 0).unwrap().relevant);
    }

    #[test]
    fn majority_care() {
        let a = ann(&[&["care"], &["care"], &["harm"]]);
        let l = label_document("t", &a, 0).unwrap();
        assert_eq!(l.polarity, Some(Polarity::Virtue));
        assert_eq!(l.foundation, Some(Foundation::Care));
    }

    #[test]
    fn polarity_tie_is_negative() {
        let a = ann(&[&["care"], &["harm"]]);
        assert_eq!(label_document("t", &a, 0).unwrap().polarity, Some(Polarity::Vice));
    }

    #[test]
    fn foundation_tie_is_seeded_and_among_tied() {
        let a = ann(&[&["care"], &["harm"]]);
        let picks: BTreeSet<Foundation> = (0..64)
            .map(|s| label_document("t", &a, s).unwrap().foundation.unwrap())
            .collect();
        assert_eq!(picks, [Foundation::Care, Foundation::Harm].into_iter().collect());
        for s in 0..8 {
            assert_eq!(
                label_document("t", &a, s).unwrap().foundation,
                label_document("t", &a, s).unwrap().foundation
            );
        }
    }

    #[test]
    fn unknown_label_is_record_error() {
        let a = ann(&[&["kindness"]]);
        assert!(matches!(label_document("t", &a, 0), Err(Error::Record { .. })));
    }

    #[test]
    fn graded_shares() {
        let a = ann(&[&["non-moral"], &["care", "fairness"], &["harm"], &["care"]]);
        let l = label_document("t", &a, 0).unwrap();
        assert!((l.graded_relevance - 0.75).abs() < 1e-15);
        assert!((l.graded_virtue - 0.75).abs() < 1e-15);
        assert!((l.graded_foundations[&Foundation::Care] - 0.5).abs() < 1e-15);
    }

    fn post(rel: f64, virtue: Option<f64>) -> Option<MoralPosterior> {
        Some(MoralPosterior {
            relevance: RelevanceProbs { relevant: rel, irrelevant: 1.0 - rel },
            polarity: virtue.map(|v| PolarityProbs { virtue: v, vice: 1.0 - v }),
            foundations: virtue.map(|v| {
                let pol = if v >= 0.5 { Polarity::Virtue } else { Polarity::Vice };
                Foundation::with_polarity(pol).map(|f| (f, 0.2)).collect()
            }),
        })
    }

    fn ed(id: &str, topic: &str, p: Option<MoralPosterior>) -> EvalDoc {
        EvalDoc { id: id.into(), topic_label: topic.into(), posterior: p }
    }

    #[test]
    fn judgments_by_variant() {
        let docs = vec![
            ed("1", "blm", post(0.6, Some(0.6))),
            ed("2", "blm", post(0.6, Some(0.6))),
            ed("3", "alm", post(0.9, Some(0.3))),
            ed("4", "alm", post(0.4, None)),
        ];
        let tb = model_judgment(&docs, MoralDimension::Polarity, "blm", ModelVariant::TopicBased).unwrap();
        assert!((tb - 0.6).abs() < 1e-15);
        // topic free: mean over 0.6, 0.6, 0.3
        let tf = model_judgment(&docs, MoralDimension::Polarity, "blm", ModelVariant::TopicFreeStatic).unwrap();
        assert!((tf - 0.5).abs() < 1e-15);
        // relevance alm: topic-based (0.9+0.4)/2, topic-free (0.6+0.6+0.9+0.4)/4
        let r = model_judgment(&docs, MoralDimension::Relevance, "alm", ModelVariant::TopicBased).unwrap();
        assert!((r - 0.65).abs() < 1e-15);
        let r = model_judgment(&docs, MoralDimension::Relevance, "alm", ModelVariant::TopicFreeStatic).unwrap();
        assert!((r - 0.625).abs() < 1e-15);
        assert!(model_judgment(&docs, MoralDimension::Polarity, "sandy", ModelVariant::TopicFreeStatic).is_none());
    }

    #[test]
    fn topic_free_collapses_for_single_topic_entity() {
        let docs = vec![ed("1", "blm", post(0.6, Some(0.7))), ed("2", "blm", post(0.8, Some(0.2)))];
        for dim in MoralDimension::all() {
            assert_eq!(
                model_judgment(&docs, dim, "blm", ModelVariant::TopicBased),
                model_judgment(&docs, dim, "blm", ModelVariant::TopicFreeStatic)
            );
        }
    }

    #[test]
    fn perfect_and_anti_correlation() {
        let same = [(0.1, 0.1), (0.7, 0.7), (0.4, 0.4)];
        assert_eq!(f1_score(&same), 1.0);
        assert!((pearson(&same).unwrap().0 - 1.0).abs() < 1e-12);
        let anti = [(0.1, 0.9), (0.9, 0.1), (0.5, 0.5)];
        assert!((pearson(&anti).unwrap().0 + 1.0).abs() < 1e-12);
        assert!(pearson(&anti[..2]).is_none());
    }

    #[test]
    fn five_pair_hand_fixture() {
        let pairs = [(0.8, 0.9), (0.6, 0.4), (0.3, 0.2), (0.55, 0.7), (0.2, 0.6)];
        // verdicts: (T,T) (T,F) (F,F) (T,T) (F,T): tp 2, fp 1, fn 1 -> 4/6
        assert!((f1_score(&pairs) - 4.0 / 6.0).abs() < 1e-12);
        // means 0.49, 0.56; sxy 0.153, sxx 0.232, syy 0.292
        let r_hand = 0.153 / (0.232f64.sqrt() * 0.292f64.sqrt());
        let (r, p) = pearson(&pairs).unwrap();
        assert!((r - r_hand).abs() < 1e-9);
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn pearson_affine_invariance() {
        let pairs = [(0.1, 0.3), (0.5, 0.2), (0.9, 0.8), (0.4, 0.6)];
        let moved: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (3.0 * x + 1.0, 0.5 * y - 2.0)).collect();
        assert!((pearson(&pairs).unwrap().0 - pearson(&moved).unwrap().0).abs() < 1e-12);
    }

    #[test]
    fn eval_csv_layout() {
        let rows = vec![EvalRow {
            dimension: MoralDimension::Relevance,
            variant: ModelVariant::TopicBased,
            f1: 1.0,
            pearson_r: None,
            p_value: None,
            p_bonferroni: None,
            n: 2,
        }];
        let report = EvalReport { rows, graded: false, polarity_tie_rule: "negative".into() };
        let mut buf = Vec::new();
        write_eval_csv(&mut buf, &report).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "dimension,topic_based_f1,topic_based_r,topic_based_p,topic_based_n\nrelevance,1,,,2\n"
        );
    }
}
