//! Corpus ingestion, time binning, entity alias matching and document
//! vectorization.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, Months, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::classifier::classify_word;
use crate::embedding::{mean_vector, Vector, WordEmbeddingStore};
use crate::error::{Error, Result};
use crate::lexicon::CentroidSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotator: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    /// Lowercased tokens, one list per sentence.
    pub sentences: Vec<Vec<String>>,
    pub headline_tokens: Option<Vec<String>>,
    pub topic_label: Option<String>,
    pub annotations: Option<Vec<Annotation>>,
    pub precomputed_vector: Option<Vector>,
}

impl Document {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }
}

#[derive(Debug, Deserialize)]
struct Record {
    id: String,
    timestamp: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    tokens: Option<Vec<Vec<String>>>,
    #[serde(default)]
    headline: Option<String>,
    #[serde(default)]
    headline_tokens: Option<Vec<String>>,
    #[serde(default)]
    topic_label: Option<String>,
    #[serde(default)]
    annotations: Option<Vec<Annotation>>,
    #[serde(default)]
    vector: Option<Vec<f64>>,
}

impl Record {
    fn into_document(self) -> Result<Document> {
        let id = self.id;
        let record_err = |message: String| Error::Record {
            id: id.clone(),
            message,
        };
        let timestamp = parse_timestamp(&self.timestamp)
            .ok_or_else(|| record_err(format!("unparseable timestamp `{}`", self.timestamp)))?;
        let sentences = match (self.text, self.tokens) {
            (Some(text), None) => tokenize(&text),
            (None, Some(tokens)) => tokens
                .into_iter()
                .map(|s| s.into_iter().map(|t| t.to_lowercase()).collect())
                .collect(),
            _ => return Err(record_err("exactly one of `text` or `tokens` is required".into())),
        };
        let headline_tokens = match (self.headline, self.headline_tokens) {
            (_, Some(tokens)) => Some(tokens.into_iter().map(|t| t.to_lowercase()).collect()),
            (Some(text), None) => Some(tokenize(&text).into_iter().flatten().collect()),
            (None, None) => None,
        };
        let precomputed_vector = self
            .vector
            .map(Vector::new)
            .transpose()
            .map_err(|e| record_err(e.to_string()))?;
        Ok(Document {
            id,
            timestamp,
            sentences,
            headline_tokens,
            topic_label: self.topic_label,
            annotations: self.annotations,
            precomputed_vector,
        })
    }
}

/// Accepts RFC 3339, `YYYY-MM-DDTHH:MM:SS[.f]`, `YYYY-MM-DD HH:MM:SS` and
/// `YYYY-MM-DD`. Offset-free forms are read as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&t));
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| Utc.from_utc_datetime(&t))
}

/// Split raw text into sentences on `.`, `!` or `?` followed by whitespace,
/// then into lowercase tokens with leading and trailing punctuation removed.
pub fn tokenize(text: &str) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
            sentences.push(std::mem::take(&mut current));
        }
    }
    sentences.push(current);
    sentences
        .iter()
        .map(|s| {
            s.split_whitespace()
                .map(|w| {
                    w.trim_matches(|c: char| !c.is_alphanumeric())
                        .to_lowercase()
                })
                .filter(|w| !w.is_empty())
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinWidth {
    /// Monday-anchored calendar weeks.
    Week,
    /// Calendar months.
    Month,
}

impl BinWidth {
    fn floor(self, t: DateTime<Utc>) -> DateTime<Utc> {
        let date = t.date_naive();
        let start = match self {
            BinWidth::Week => date - Duration::days(date.weekday().num_days_from_monday() as i64),
            BinWidth::Month => date.with_day(1).expect("day 1 exists"),
        };
        Utc.from_utc_datetime(&start.and_hms_opt(0, 0, 0).expect("midnight exists"))
    }

    fn advance(self, t: DateTime<Utc>) -> DateTime<Utc> {
        match self {
            BinWidth::Week => t + Duration::days(7),
            BinWidth::Month => t
                .checked_add_months(Months::new(1))
                .expect("month arithmetic in range"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BinWidth::Week => "week",
            BinWidth::Month => "month",
        }
    }
}

impl FromStr for BinWidth {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "week" | "weekly" => Ok(BinWidth::Week),
            "month" | "monthly" => Ok(BinWidth::Month),
            other => Err(Error::Config(format!("unknown bin width `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBin {
    pub index: usize,
    pub start: DateTime<Utc>,
    /// Exclusive.
    pub end: DateTime<Utc>,
}

impl TimeBin {
    pub fn start_label(&self) -> String {
        self.start.format("%Y-%m-%d").to_string()
    }
}

/// Documents indexed by id and partitioned into contiguous time bins.
#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
    bins: Vec<TimeBin>,
    doc_bin: Vec<usize>,
    bin_docs: Vec<Vec<usize>>,
    width: BinWidth,
}

impl Corpus {
    /// Read a JSON-lines corpus and bin it.
    pub fn ingest(path: impl AsRef<Path>, width: BinWidth) -> Result<Self> {
        let path = path.as_ref();
        let source = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut documents = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line)
                .map_err(|e| Error::format(source.clone(), idx + 1, e.to_string()))?;
            documents.push(record.into_document()?);
        }
        Self::from_documents(documents, width)
    }

    pub fn from_documents(documents: Vec<Document>, width: BinWidth) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyResult("corpus has no documents".into()));
        }
        let mut by_id = HashMap::with_capacity(documents.len());
        for (i, d) in documents.iter().enumerate() {
            if by_id.insert(d.id.clone(), i).is_some() {
                return Err(Error::Record {
                    id: d.id.clone(),
                    message: "duplicate document id".into(),
                });
            }
        }

        let first = documents.iter().map(|d| d.timestamp).min().expect("nonempty");
        let last = documents.iter().map(|d| d.timestamp).max().expect("nonempty");
        let mut bins = Vec::new();
        let mut start = width.floor(first);
        while start <= last {
            let end = width.advance(start);
            bins.push(TimeBin {
                index: bins.len(),
                start,
                end,
            });
            start = end;
        }

        let mut bin_docs = vec![Vec::new(); bins.len()];
        let doc_bin: Vec<usize> = documents
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let b = bins.partition_point(|bin| bin.end <= d.timestamp);
                bin_docs[b].push(i);
                b
            })
            .collect();

        Ok(Corpus {
            documents,
            by_id,
            bins,
            doc_bin,
            bin_docs,
            width,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    pub fn bins(&self) -> &[TimeBin] {
        &self.bins
    }

    pub fn bin_width(&self) -> BinWidth {
        self.width
    }

    pub fn bin_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).map(|&i| self.doc_bin[i])
    }

    pub fn docs_in_bin(&self, bin: usize) -> impl Iterator<Item = &Document> {
        self.bin_docs[bin].iter().map(|&i| &self.documents[i])
    }

    /// `D(e, bins)`: documents in `bins` that mention `e`.
    pub fn document_set(&self, entity: &EntityQuery, bins: Range<usize>) -> DocumentSet {
        let members = bins
            .clone()
            .flat_map(|b| self.docs_in_bin(b))
            .filter(|d| entity.mentioned_in(d))
            .map(|d| d.id.clone())
            .collect();
        DocumentSet {
            entity: entity.canonical_name.clone(),
            bins,
            members,
        }
    }
}

/// Documents mentioning an entity within a contiguous bin range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentSet {
    pub entity: String,
    pub bins: Range<usize>,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityQuery {
    pub canonical_name: String,
    aliases: Vec<Vec<String>>,
}

impl EntityQuery {
    /// The canonical name's own token sequence is always an alias.
    pub fn new<S: AsRef<str>>(canonical_name: &str, aliases: &[S]) -> Result<Self> {
        let mut seqs: Vec<Vec<String>> = Vec::new();
        for a in std::iter::once(canonical_name).chain(aliases.iter().map(AsRef::as_ref)) {
            let seq: Vec<String> = a.split_whitespace().map(str::to_lowercase).collect();
            if !seq.is_empty() && !seqs.contains(&seq) {
                seqs.push(seq);
            }
        }
        if seqs.is_empty() {
            return Err(Error::Config(format!("entity `{canonical_name}` has no usable alias")));
        }
        Ok(EntityQuery {
            canonical_name: canonical_name.trim().to_string(),
            aliases: seqs,
        })
    }

    pub fn aliases(&self) -> &[Vec<String>] {
        &self.aliases
    }

    pub fn alias_tokens(&self) -> HashSet<&str> {
        self.aliases.iter().flatten().map(String::as_str).collect()
    }

    /// Whether any alias occurs as a contiguous token run in `sentence`.
    pub fn matches_sentence(&self, sentence: &[String]) -> bool {
        self.aliases.iter().any(|alias| {
            sentence
                .windows(alias.len())
                .any(|w| w.iter().zip(alias).all(|(a, b)| a.to_lowercase() == *b))
        })
    }

    pub fn mentioned_in(&self, doc: &Document) -> bool {
        doc.sentences.iter().any(|s| self.matches_sentence(s))
    }
}

/// Parse `canonical<TAB>alias1<TAB>alias2...` lines.
pub fn parse_alias_file(path: impl AsRef<Path>) -> Result<Vec<EntityQuery>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t').map(str::trim).filter(|f| !f.is_empty());
        let canonical = fields.next().unwrap_or_default();
        let aliases: Vec<&str> = fields.collect();
        let q = EntityQuery::new(canonical, &aliases)
            .map_err(|e| Error::format(path.display().to_string(), idx + 1, e.to_string()))?;
        if !seen.insert(q.canonical_name.clone()) {
            return Err(Error::format(
                path.display().to_string(),
                idx + 1,
                format!("entity `{}` listed twice", q.canonical_name),
            ));
        }
        out.push(q);
    }
    Ok(out)
}

pub type Stopwords = HashSet<String>;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

fn word_list(text: &str) -> Stopwords {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn default_stopwords() -> Stopwords {
    word_list(DEFAULT_STOPWORDS)
}

/// One word per line; `#` comments.
pub fn load_word_list(path: impl AsRef<Path>) -> Result<Stopwords> {
    let path = path.as_ref();
    fs::read_to_string(path)
        .map(|t| word_list(&t))
        .map_err(|e| Error::io(path, e))
}

/// Keep only the sentences that mention `entity`; `None` when none do.
pub fn entity_filter(doc: &Document, entity: &EntityQuery) -> Option<Document> {
    let sentences: Vec<Vec<String>> = doc
        .sentences
        .iter()
        .filter(|s| entity.matches_sentence(s))
        .cloned()
        .collect();
    if sentences.is_empty() {
        return None;
    }
    Some(Document {
        sentences,
        ..doc.clone()
    })
}

/// Tokens of an entity-filtered document with stopwords and alias tokens removed.
pub fn content_tokens<'a>(
    doc: &'a Document,
    entity: &'a EntityQuery,
    stopwords: &'a Stopwords,
) -> impl Iterator<Item = &'a str> + 'a {
    let alias = entity.alias_tokens();
    doc.tokens()
        .filter(move |t| !stopwords.contains(*t) && !alias.contains(t))
}

/// Mean vector of the morally relevant content words of an entity-filtered
/// document. A precomputed vector on the document is returned unchanged.
pub fn vectorize(
    doc: &Document,
    entity: &EntityQuery,
    emb: &WordEmbeddingStore,
    centroids: &CentroidSet,
    stopwords: &Stopwords,
) -> Result<Option<Vector>> {
    if let Some(v) = &doc.precomputed_vector {
        return Ok(Some(v.clone()));
    }
    let mut kept = Vec::new();
    for token in content_tokens(doc, entity, stopwords) {
        let Some(v) = emb.get(token) else { continue };
        let probs = classify_word(token, emb, centroids)?.expect("token is in vocabulary");
        if probs.relevant < 0.5 {
            continue;
        }
        kept.push(v);
    }
    if kept.is_empty() {
        return Ok(None);
    }
    mean_vector(kept).map(Some)
}

/// Mean of the in-vocabulary headline tokens, or of the body's content tokens
/// when there is no usable headline. The flag reports the substitution.
pub fn headline_vector(doc: &Document, emb: &WordEmbeddingStore, stopwords: &Stopwords) -> (Vector, bool) {
    let mean_of = |tokens: &mut dyn Iterator<Item = &str>| {
        let vs: Vec<&Vector> = tokens.filter_map(|t| emb.get(t)).collect();
        mean_vector(vs).ok()
    };
    if let Some(h) = &doc.headline_tokens {
        if let Some(v) = mean_of(&mut h.iter().map(String::as_str)) {
            return (v, false);
        }
    }
    let body = mean_of(&mut doc.tokens().filter(|t| !stopwords.contains(*t)))
        .unwrap_or_else(|| Vector::zeros(emb.dimension()));
    (body, true)
}
