//! Vector spaces, distances and vocabulary alignment shared by every pipeline.
//!
//! Embedding spaces and brain-based concept tables are keyed by normalized
//! tokens: trimmed, lowercased, no internal whitespace, with multiword
//! concepts joined by `_` (`old_man`). Both live in `BTreeMap`s so that every
//! iteration order in the crate is lexicographic and reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where an embedding space came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Linguistic,
    Visual,
    Auditory,
    Fused,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Linguistic => "linguistic",
            Modality::Visual => "visual",
            Modality::Auditory => "auditory",
            Modality::Fused => "fused",
        })
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linguistic" => Ok(Modality::Linguistic),
            "visual" => Ok(Modality::Visual),
            "auditory" => Ok(Modality::Auditory),
            "fused" | "multimodal" => Ok(Modality::Fused),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// Canonical form of a token: trimmed and lowercased. Tokens must be
/// non-empty and free of whitespace after trimming.
pub fn normalize_token(raw: &str) -> Result<String, String> {
    let token = raw.trim().to_lowercase();
    if token.is_empty() {
        return Err("empty token".to_string());
    }
    if token.chars().any(char::is_whitespace) {
        return Err(format!("token `{token}` contains whitespace (join phrases with `_`)"));
    }
    Ok(token)
}

/// Joins an adjective and a noun into a phrase token.
pub fn phrase_token(adjective: &str, noun: &str) -> String {
    format!("{adjective}_{noun}")
}

/// A token to dense vector table for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    modality: Modality,
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingSpace {
    pub fn new(modality: Modality, dim: usize) -> Self {
        EmbeddingSpace {
            modality,
            dim,
            entries: BTreeMap::new(),
        }
    }

    /// Builds a space from `(token, vector)` pairs, validating every entry.
    pub fn from_entries<I, S>(modality: Modality, dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut space = EmbeddingSpace::new(modality, dim);
        for (token, vector) in entries {
            space.insert(token.as_ref(), vector)?;
        }
        Ok(space)
    }

    /// Adds one entry. The token is normalized; duplicates, wrong widths and
    /// non-finite components are rejected.
    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Data("embedding dimension must be positive".into()));
        }
        let token = normalize_token(token).map_err(Error::Data)?;
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if let Some(bad) = vector.iter().find(|x| !x.is_finite()) {
            return Err(Error::Data(format!("non-finite component {bad} for `{token}`")));
        }
        if self.entries.contains_key(&token) {
            return Err(Error::Data(format!("duplicate token `{token}`")));
        }
        self.entries.insert(token, vector);
        Ok(())
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    /// Like [`get`](Self::get) but reports a missing token as an alignment error.
    pub fn vector(&self, token: &str) -> Result<&[f64]> {
        self.get(token)
            .ok_or_else(|| Error::Alignment(format!("token `{token}` not in {} space", self.modality)))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> + '_ {
        self.entries.iter().map(|(t, v)| (t.as_str(), v.as_slice()))
    }

    /// Stacks the vectors of `tokens` as rows of a matrix.
    pub fn matrix(&self, tokens: &[String]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(tokens.len(), self.dim);
        for (i, token) in tokens.iter().enumerate() {
            let v = self.vector(token)?;
            for (j, x) in v.iter().enumerate() {
                m[(i, j)] = *x;
            }
        }
        Ok(m)
    }
}

/// Whether a concept is concrete or abstract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Concreteness {
    Concrete,
    Abstract,
}

impl FromStr for Concreteness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "concrete" => Ok(Concreteness::Concrete),
            "abstract" => Ok(Concreteness::Abstract),
            other => Err(format!(
                "concreteness must be `concrete` or `abstract`, found `{other}`"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptLabel {
    pub concreteness: Concreteness,
    pub category: Option<String>,
}

/// A named group of attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Property {
    pub name: String,
    pub attributes: Vec<String>,
}

/// Ordered grouping of attributes into properties. Attribute order in every
/// brain vector follows the schema: property by property, attributes in
/// declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Property>", into = "Vec<Property>")]
pub struct PropertySchema {
    properties: Vec<Property>,
    ranges: Vec<Range<usize>>,
}

impl PropertySchema {
    pub fn new(properties: Vec<Property>) -> Result<Self> {
        if properties.is_empty() {
            return Err(Error::Schema("schema declares no properties".into()));
        }
        let mut seen_props = BTreeSet::new();
        let mut seen_attrs = BTreeSet::new();
        let mut ranges = Vec::with_capacity(properties.len());
        let mut start = 0;
        for p in &properties {
            if !seen_props.insert(p.name.as_str()) {
                return Err(Error::Schema(format!("property `{}` declared twice", p.name)));
            }
            if p.attributes.is_empty() {
                return Err(Error::Schema(format!("property `{}` has no attributes", p.name)));
            }
            for a in &p.attributes {
                if !seen_attrs.insert(a.as_str()) {
                    return Err(Error::Schema(format!("attribute `{a}` appears more than once")));
                }
            }
            ranges.push(start..start + p.attributes.len());
            start += p.attributes.len();
        }
        Ok(PropertySchema { properties, ranges })
    }

    pub fn properties(&self) -> &[Property] {
        &self.properties
    }

    pub fn property_names(&self) -> impl Iterator<Item = &str> + '_ {
        self.properties.iter().map(|p| p.name.as_str())
    }

    pub fn attribute_count(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    /// All attribute names in vector order.
    pub fn attribute_names(&self) -> impl Iterator<Item = &str> + '_ {
        self.properties
            .iter()
            .flat_map(|p| p.attributes.iter().map(String::as_str))
    }

    /// Index range of a property's attributes inside a brain vector.
    pub fn property_range(&self, name: &str) -> Result<Range<usize>> {
        self.properties
            .iter()
            .position(|p| p.name == name)
            .map(|i| self.ranges[i].clone())
            .ok_or_else(|| Error::Schema(format!("unknown property `{name}`")))
    }

    /// `(property name, index range)` in schema order.
    pub fn ranges(&self) -> impl Iterator<Item = (&str, Range<usize>)> + '_ {
        self.properties
            .iter()
            .zip(&self.ranges)
            .map(|(p, r)| (p.name.as_str(), r.clone()))
    }
}

impl TryFrom<Vec<Property>> for PropertySchema {
    type Error = Error;

    fn try_from(properties: Vec<Property>) -> Result<Self> {
        PropertySchema::new(properties)
    }
}

impl From<PropertySchema> for Vec<Property> {
    fn from(schema: PropertySchema) -> Self {
        schema.properties
    }
}

/// Concept to attribute-rating table with its property schema and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BrainSemanticSpace {
    schema: PropertySchema,
    concepts: BTreeMap<String, Vec<f64>>,
    labels: BTreeMap<String, ConceptLabel>,
}

pub const MIN_RATING: f64 = 0.0;
pub const MAX_RATING: f64 = 6.0;

impl BrainSemanticSpace {
    pub fn new(schema: PropertySchema) -> Self {
        BrainSemanticSpace {
            schema,
            concepts: BTreeMap::new(),
            labels: BTreeMap::new(),
        }
    }

    /// Adds a concept. Ratings must be in schema attribute order, finite and
    /// within `[0, 6]`.
    pub fn insert(&mut self, concept: &str, label: ConceptLabel, ratings: Vec<f64>) -> Result<()> {
        let concept = normalize_token(concept).map_err(Error::Data)?;
        if ratings.len() != self.schema.attribute_count() {
            return Err(Error::Dimension {
                expected: self.schema.attribute_count(),
                found: ratings.len(),
            });
        }
        for (value, attribute) in ratings.iter().zip(self.schema.attribute_names()) {
            if !value.is_finite() || !(MIN_RATING..=MAX_RATING).contains(value) {
                return Err(Error::Range {
                    concept,
                    attribute: attribute.to_string(),
                    value: *value,
                });
            }
        }
        if self.concepts.contains_key(&concept) {
            return Err(Error::Data(format!("duplicate concept `{concept}`")));
        }
        self.labels.insert(concept.clone(), label);
        self.concepts.insert(concept, ratings);
        Ok(())
    }

    pub fn schema(&self) -> &PropertySchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, concept: &str) -> Option<&[f64]> {
        self.concepts.get(concept).map(Vec::as_slice)
    }

    pub fn ratings(&self, concept: &str) -> Result<&[f64]> {
        self.get(concept)
            .ok_or_else(|| Error::Alignment(format!("concept `{concept}` not in brain space")))
    }

    pub fn label(&self, concept: &str) -> Option<&ConceptLabel> {
        self.labels.get(concept)
    }

    pub fn contains(&self, concept: &str) -> bool {
        self.concepts.contains_key(concept)
    }

    pub fn concepts(&self) -> impl Iterator<Item = &str> + '_ {
        self.concepts.keys().map(String::as_str)
    }

    pub fn count_by_concreteness(&self, which: Concreteness) -> usize {
        self.labels.values().filter(|l| l.concreteness == which).count()
    }
}

/// Anything with a token vocabulary.
pub trait Vocabulary {
    fn has_token(&self, token: &str) -> bool;
    fn vocabulary(&self) -> Box<dyn Iterator<Item = &str> + '_>;
}

impl Vocabulary for EmbeddingSpace {
    fn has_token(&self, token: &str) -> bool {
        self.contains(token)
    }

    fn vocabulary(&self) -> Box<dyn Iterator<Item = &str> + '_> {
        Box::new(self.tokens())
    }
}

impl Vocabulary for BrainSemanticSpace {
    fn has_token(&self, token: &str) -> bool {
        self.contains(token)
    }

    fn vocabulary(&self) -> Box<dyn Iterator<Item = &str> + '_> {
        Box::new(self.concepts())
    }
}

/// Sorted intersection of the vocabularies of two or more spaces.
pub fn align_vocabulary(spaces: &[&dyn Vocabulary]) -> Result<Vec<String>> {
    let (first, rest) = spaces
        .split_first()
        .filter(|(_, rest)| !rest.is_empty())
        .ok_or_else(|| Error::Alignment("need at least two spaces to align".into()))?;
    let shared: BTreeSet<&str> = first
        .vocabulary()
        .filter(|t| rest.iter().all(|s| s.has_token(t)))
        .collect();
    if shared.is_empty() {
        return Err(Error::Alignment("spaces share no tokens".into()));
    }
    Ok(shared.into_iter().map(str::to_string).collect())
}

/// Symmetric pairwise-distance matrix over an ordered token list.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    tokens: Vec<String>,
    values: DMatrix<f64>,
}

const SYMMETRY_TOLERANCE: f64 = 1e-12;

impl DissimilarityMatrix {
    /// Validates symmetry, zero diagonal and non-negative finite entries.
    pub fn new(tokens: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let n = tokens.len();
        if values.shape() != (n, n) {
            return Err(Error::Dimension {
                expected: n,
                found: values.nrows().max(values.ncols()),
            });
        }
        for i in 0..n {
            if values[(i, i)] != 0.0 {
                return Err(Error::Data(format!("non-zero diagonal at `{}`", tokens[i])));
            }
            for j in 0..n {
                let v = values[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Data(format!("invalid distance {v} at ({i}, {j})")));
                }
                if (v - values[(j, i)]).abs() > SYMMETRY_TOLERANCE {
                    return Err(Error::Data(format!("asymmetric entry at ({i}, {j})")));
                }
            }
        }
        Ok(DissimilarityMatrix { tokens, values })
    }

    /// Fills the strict upper triangle with `distance(i, j)` and mirrors it,
    /// so the result is exactly symmetric with an exact zero diagonal.
    pub fn from_fn<F>(tokens: Vec<String>, mut distance: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Result<f64>,
    {
        let n = tokens.len();
        let mut values = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let d = distance(i, j)?;
                values[(i, j)] = d;
                values[(j, i)] = d;
            }
        }
        DissimilarityMatrix::new(tokens, values)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Strictly-upper-triangle entries in row-major order, `n(n-1)/2` values.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.values[(i, j)]);
            }
        }
        out
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn check_len(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            found: v.len(),
        });
    }
    Ok(())
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if v.is_empty() || n == 0.0 || !n.is_finite() {
        return Err(Error::normalization("vector"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len(u, v)?;
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Distance("zero vector".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(u, v)?)
}

pub fn euclidean_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len(u, v)?;
    Ok(u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// Componentwise arithmetic mean of equal-length vectors.
pub fn aggregate_mean<V: AsRef<[f64]>>(instances: &[V]) -> Result<Vec<f64>> {
    let first = instances
        .first()
        .ok_or_else(|| Error::Aggregation("no instances".into()))?
        .as_ref();
    let mut sum = vec![0.0; first.len()];
    for v in instances {
        let v = v.as_ref();
        check_len(first, v)?;
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let n = instances.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Averages groups of instance vectors into one vector per key, e.g. word
/// vectors built from the phrases that contain each word.
pub fn aggregate_groups(source: &EmbeddingSpace, groups: &BTreeMap<String, Vec<String>>) -> Result<EmbeddingSpace> {
    let mut out = EmbeddingSpace::new(source.modality(), source.dim());
    for (key, members) in groups {
        let vectors = members.iter().map(|m| source.vector(m)).collect::<Result<Vec<_>>>()?;
        let mean = aggregate_mean(&vectors).map_err(|e| Error::Aggregation(format!("group `{key}`: {e}")))?;
        out.insert(key, mean)?;
    }
    Ok(out)
}
