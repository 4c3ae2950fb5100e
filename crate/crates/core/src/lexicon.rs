//! Moral hierarchy labels, seed lexicon parsing and centroid construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{mean_vector, Vector, WordEmbeddingStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Virtue,
    Vice,
}

impl Polarity {
    pub const ALL: [Polarity; 2] = [Polarity::Virtue, Polarity::Vice];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Virtue => "virtue",
            Polarity::Vice => "vice",
        }
    }
}

/// The ten fine-grained moral foundations, in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Foundation {
    Care,
    Harm,
    Fairness,
    Cheating,
    Loyalty,
    Betrayal,
    Authority,
    Subversion,
    Sanctity,
    Degradation,
}

impl Foundation {
    pub const ALL: [Foundation; 10] = [
        Foundation::Care,
        Foundation::Harm,
        Foundation::Fairness,
        Foundation::Cheating,
        Foundation::Loyalty,
        Foundation::Betrayal,
        Foundation::Authority,
        Foundation::Subversion,
        Foundation::Sanctity,
        Foundation::Degradation,
    ];

    pub fn polarity(self) -> Polarity {
        use Foundation::*;
        match self {
            Care | Fairness | Loyalty | Authority | Sanctity => Polarity::Virtue,
            Harm | Cheating | Betrayal | Subversion | Degradation => Polarity::Vice,
        }
    }

    /// The opposite pole of the same virtue/vice pair.
    pub fn counterpart(self) -> Foundation {
        use Foundation::*;
        match self {
            Care => Harm,
            Harm => Care,
            Fairness => Cheating,
            Cheating => Fairness,
            Loyalty => Betrayal,
            Betrayal => Loyalty,
            Authority => Subversion,
            Subversion => Authority,
            Sanctity => Degradation,
            Degradation => Sanctity,
        }
    }

    /// Foundations with the given polarity, in declaration order.
    pub fn with_polarity(polarity: Polarity) -> impl Iterator<Item = Foundation> {
        Foundation::ALL
            .into_iter()
            .filter(move |f| f.polarity() == polarity)
    }

    pub fn as_str(self) -> &'static str {
        use Foundation::*;
        match self {
            Care => "care",
            Harm => "harm",
            Fairness => "fairness",
            Cheating => "cheating",
            Loyalty => "loyalty",
            Betrayal => "betrayal",
            Authority => "authority",
            Subversion => "subversion",
            Sanctity => "sanctity",
            Degradation => "degradation",
        }
    }
}

impl fmt::Display for Foundation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Foundation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Foundation::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown moral foundation `{s}`")))
    }
}

/// A moral dimension a time course or judgment can be computed for.
///
/// `Relevance` reads `P(relevant)`, `Polarity` reads `P(virtue)`, and a
/// foundation reads its fine-grained probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum MoralDimension {
    Relevance,
    Polarity,
    Foundation(Foundation),
}

impl MoralDimension {
    /// All twelve dimensions: relevance, polarity, then the ten foundations.
    pub fn all() -> Vec<MoralDimension> {
        let mut dims = vec![MoralDimension::Relevance, MoralDimension::Polarity];
        dims.extend(Foundation::ALL.into_iter().map(MoralDimension::Foundation));
        dims
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MoralDimension::Relevance => "relevance",
            MoralDimension::Polarity => "polarity",
            MoralDimension::Foundation(f) => f.as_str(),
        }
    }
}

impl fmt::Display for MoralDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MoralDimension {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relevance" => Ok(MoralDimension::Relevance),
            "polarity" => Ok(MoralDimension::Polarity),
            other => other
                .parse::<Foundation>()
                .map(MoralDimension::Foundation)
                .map_err(|_| Error::Config(format!("unknown moral dimension `{other}`"))),
        }
    }
}

impl From<MoralDimension> for String {
    fn from(d: MoralDimension) -> String {
        d.as_str().to_string()
    }
}

impl TryFrom<String> for MoralDimension {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

const DEFAULT_NEUTRAL: &str = include_str!("../data/neutral_words.txt");

/// Bundled morally neutral seed words.
pub fn default_neutral_words() -> BTreeSet<String> {
    DEFAULT_NEUTRAL
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedLexicon {
    foundation_seeds: BTreeMap<Foundation, BTreeSet<String>>,
    neutral_seeds: BTreeSet<String>,
}

impl SeedLexicon {
    pub fn new(
        foundation_seeds: BTreeMap<Foundation, BTreeSet<String>>,
        neutral_seeds: BTreeSet<String>,
    ) -> Result<Self> {
        let missing: Vec<&str> = Foundation::ALL
            .iter()
            .filter(|f| foundation_seeds.get(f).is_none_or(|s| s.is_empty()))
            .map(|f| f.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "lexicon has no seeds for: {}",
                missing.join(", ")
            )));
        }
        if neutral_seeds.is_empty() {
            return Err(Error::Config("lexicon has no neutral seeds".into()));
        }
        if let Some(token) = foundation_seeds
            .values()
            .flatten()
            .find(|t| neutral_seeds.contains(*t))
        {
            return Err(Error::Config(format!(
                "token `{token}` is both a moral seed and a neutral seed"
            )));
        }
        Ok(SeedLexicon {
            foundation_seeds,
            neutral_seeds,
        })
    }

    /// Parse a `token<TAB>category` file. When the file carries no `neutral`
    /// rows the bundled neutral list is used, minus any moral seeds.
    pub fn parse(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, &path.display().to_string())
    }

    pub fn parse_str(text: &str, source: &str) -> Result<Self> {
        let mut foundation_seeds: BTreeMap<Foundation, BTreeSet<String>> = BTreeMap::new();
        let mut neutral: BTreeMap<String, usize> = BTreeMap::new();
        let mut first_moral_line: BTreeMap<String, usize> = BTreeMap::new();

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (token, category) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(source, lineno, "expected `token<TAB>category`"))?;
            let token = token.trim().to_lowercase();
            let category = category.trim().to_lowercase();
            if token.is_empty() || token.contains(char::is_whitespace) {
                return Err(Error::format(source, lineno, format!("invalid token `{token}`")));
            }
            if category == "neutral" {
                if let Some(l) = first_moral_line.get(&token) {
                    return Err(Error::format(
                        source,
                        lineno,
                        format!("`{token}` is neutral here but a moral seed on line {l}"),
                    ));
                }
                neutral.entry(token).or_insert(lineno);
                continue;
            }
            let foundation = parse_category(&category)
                .ok_or_else(|| Error::format(source, lineno, format!("unknown category `{category}`")))?;
            if let Some(l) = neutral.get(&token) {
                return Err(Error::format(
                    source,
                    lineno,
                    format!("`{token}` is a moral seed here but neutral on line {l}"),
                ));
            }
            first_moral_line.entry(token.clone()).or_insert(lineno);
            foundation_seeds.entry(foundation).or_default().insert(token);
        }

        let neutral_seeds: BTreeSet<String> = if neutral.is_empty() {
            default_neutral_words()
                .into_iter()
                .filter(|t| !first_moral_line.contains_key(t))
                .collect()
        } else {
            neutral.into_keys().collect()
        };
        SeedLexicon::new(foundation_seeds, neutral_seeds)
    }

    /// Replace the neutral seed list.
    pub fn with_neutral_seeds(self, neutral_seeds: BTreeSet<String>) -> Result<Self> {
        SeedLexicon::new(self.foundation_seeds, neutral_seeds)
    }

    pub fn foundation_seeds(&self, f: Foundation) -> &BTreeSet<String> {
        &self.foundation_seeds[&f]
    }

    pub fn neutral_seeds(&self) -> &BTreeSet<String> {
        &self.neutral_seeds
    }
}

/// `care`, `care.virtue` and the like. A suffix must agree with the
/// foundation's polarity.
fn parse_category(category: &str) -> Option<Foundation> {
    let (name, suffix) = match category.split_once('.') {
        Some((n, s)) => (n, Some(s)),
        None => (category, None),
    };
    let foundation: Foundation = name.parse().ok()?;
    match suffix {
        None => Some(foundation),
        Some(s) if s == foundation.polarity().as_str() => Some(foundation),
        Some(_) => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    pub moral: Vector,
    pub neutral: Vector,
    pub virtue: Vector,
    pub vice: Vector,
    pub foundations: BTreeMap<Foundation, Vector>,
}

impl CentroidSet {
    pub fn build(lexicon: &SeedLexicon, emb: &WordEmbeddingStore) -> Result<Self> {
        let mut skipped = 0usize;
        let mut resolve = |tokens: &BTreeSet<String>, label: &str| -> Result<Vec<(String, Vector)>> {
            let mut found = Vec::new();
            for t in tokens {
                match emb.get(t) {
                    Some(v) => found.push((t.clone(), v.clone())),
                    None => {
                        log::warn!("seed `{t}` ({label}) not in embedding vocabulary; skipped");
                        skipped += 1;
                    }
                }
            }
            if found.is_empty() {
                return Err(Error::Config(format!(
                    "no seed for `{label}` is present in the embeddings"
                )));
            }
            Ok(found)
        };

        let mut per_foundation = BTreeMap::new();
        for f in Foundation::ALL {
            per_foundation.insert(f, resolve(lexicon.foundation_seeds(f), f.as_str())?);
        }
        let neutral_vectors = resolve(lexicon.neutral_seeds(), "neutral")?;
        if skipped > 0 {
            log::info!("{skipped} seed tokens missing from embeddings were skipped");
        }

        // Pooled tiers average each distinct seed token once.
        let pooled = |filter: &dyn Fn(Foundation) -> bool| -> Result<Vector> {
            let mut seen: BTreeMap<&str, &Vector> = BTreeMap::new();
            for (f, seeds) in &per_foundation {
                if filter(*f) {
                    for (t, v) in seeds {
                        seen.entry(t.as_str()).or_insert(v);
                    }
                }
            }
            mean_vector(seen.values().copied())
        };

        let moral = pooled(&|_| true)?;
        let virtue = pooled(&|f| f.polarity() == Polarity::Virtue)?;
        let vice = pooled(&|f| f.polarity() == Polarity::Vice)?;
        let neutral = mean_vector(neutral_vectors.iter().map(|(_, v)| v))?;
        let foundations = per_foundation
            .iter()
            .map(|(f, seeds)| Ok((*f, mean_vector(seeds.iter().map(|(_, v)| v))?)))
            .collect::<Result<BTreeMap<_, _>>>()?;

        Ok(CentroidSet {
            moral,
            neutral,
            virtue,
            vice,
            foundations,
        })
    }

    pub fn dimension(&self) -> usize {
        self.moral.dim()
    }

    pub fn foundation(&self, f: Foundation) -> &Vector {
        &self.foundations[&f]
    }
}
