//! Static word embeddings and the small amount of vector arithmetic the
//! rest of the pipeline needs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense vector with finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if let Some(i) = components.iter().position(|c| !c.is_finite()) {
            return Err(Error::Contract(format!(
                "vector component {i} is not finite ({})",
                components[i]
            )));
        }
        Ok(Vector(components))
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn check_dim(&self, other: &Vector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::Contract(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn euclidean(&self, other: &Vector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Cosine similarity. Zero if either side has zero norm.
    pub fn cosine(&self, other: &Vector) -> Result<f64> {
        let dot = self.dot(other)?;
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return Ok(0.0);
        }
        Ok((dot / denom).clamp(-1.0, 1.0))
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Componentwise arithmetic mean of a nonempty list of equal-dimension vectors.
pub fn mean_vector<'a, I>(vectors: I) -> Result<Vector>
where
    I: IntoIterator<Item = &'a Vector>,
{
    let mut iter = vectors.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::Contract("mean of an empty vector list".into()))?;
    let mut acc = first.0.clone();
    let mut n = 1usize;
    for v in iter {
        first.check_dim(v)?;
        for (a, x) in acc.iter_mut().zip(&v.0) {
            *a += x;
        }
        n += 1;
    }
    let n = n as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(Vector(acc))
}

/// Token → vector map of a fixed dimension. Immutable once loaded.
#[derive(Debug, Clone)]
pub struct WordEmbeddingStore {
    dimension: usize,
    entries: HashMap<String, Vector>,
}

impl WordEmbeddingStore {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(WordEmbeddingStore {
            dimension,
            entries: HashMap::new(),
        })
    }

    /// Insert or replace a token's vector. Returns the previous vector if any.
    pub fn insert(&mut self, token: impl Into<String>, vector: Vector) -> Result<Option<Vector>> {
        if vector.dim() != self.dimension {
            return Err(Error::Contract(format!(
                "vector of dimension {} inserted into a dimension-{} store",
                vector.dim(),
                self.dimension
            )));
        }
        Ok(self.entries.insert(token.into(), vector))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&Vector> {
        self.entries.get(token)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn load(path: impl AsRef<Path>, expected_dimension: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), &path.display().to_string(), expected_dimension)
    }

    /// Parse the plain-text vector format: optional `COUNT DIM` header, then
    /// `token v1 ... vDIM` per line.
    pub fn from_reader<R: BufRead>(
        reader: R,
        source: &str,
        expected_dimension: Option<usize>,
    ) -> Result<Self> {
        let mut dimension: Option<usize> = None;
        let mut declared_count: Option<usize> = None;
        let mut entries = HashMap::new();

        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::io(source, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().unwrap_or_default();
            let rest: Vec<&str> = fields.collect();

            if idx == 0 && rest.len() == 1 {
                if let (Ok(count), Ok(dim)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                    if dim == 0 {
                        return Err(Error::format(source, lineno, "header declares dimension 0"));
                    }
                    declared_count = Some(count);
                    dimension = Some(dim);
                    continue;
                }
            }

            let dim = *dimension.get_or_insert(rest.len());
            if rest.is_empty() || rest.len() != dim {
                return Err(Error::format(
                    source,
                    lineno,
                    format!(
                        "token `{token}` has {} components, expected {dim}",
                        rest.len()
                    ),
                ));
            }
            let mut components = Vec::with_capacity(dim);
            for field in rest {
                let value: f64 = field.parse().map_err(|_| {
                    Error::format(source, lineno, format!("invalid number `{field}`"))
                })?;
                if !value.is_finite() {
                    return Err(Error::format(source, lineno, format!("non-finite value `{field}`")));
                }
                components.push(value);
            }
            if entries.insert(token.to_string(), Vector(components)).is_some() {
                log::warn!("{source}:{lineno}: duplicate token `{token}`, keeping last occurrence");
            }
        }

        let dimension = dimension
            .ok_or_else(|| Error::format(source, 0, "embedding file has no vectors"))?;
        if let Some(expected) = expected_dimension {
            if expected != dimension {
                return Err(Error::Config(format!(
                    "{source}: embedding dimension {dimension} does not match expected {expected}"
                )));
            }
        }
        if let Some(count) = declared_count {
            if count != entries.len() {
                log::warn!(
                    "{source}: header declares {count} vectors, found {} distinct tokens",
                    entries.len()
                );
            }
        }
        Ok(WordEmbeddingStore { dimension, entries })
    }

    /// Write the store with a `COUNT DIM` header, tokens sorted. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.entries.len(), self.dimension)?;
        let mut tokens: Vec<&String> = self.entries.keys().collect();
        tokens.sort();
        for token in tokens {
            write!(out, "{token}")?;
            for v in self.entries[token].as_slice() {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }
}
