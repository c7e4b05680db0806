//! Representational similarity analysis between an embedding space and the
//! properties of a brain-based semantic space.
//!
//! The embedding side uses cosine distance. Each brain property uses the
//! Euclidean distance between raw rating sub-vectors, since some concepts
//! have all-zero property vectors. Matrices are compared on their strict
//! upper triangles.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::format_float;
use crate::space::{
    align_vocabulary, cosine_distance, euclidean_distance, BrainSemanticSpace, Concreteness, DissimilarityMatrix,
    EmbeddingSpace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    #[default]
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    #[default]
    All,
    Concrete,
    Abstract,
}

impl fmt::Display for CorrelationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelationMethod::Pearson => "pearson",
            CorrelationMethod::Spearman => "spearman",
        })
    }
}

impl FromStr for CorrelationMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "pearson" => Ok(CorrelationMethod::Pearson),
            "spearman" => Ok(CorrelationMethod::Spearman),
            other => Err(format!("unknown correlation method `{other}`")),
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::All => "all",
            Subset::Concrete => "concrete",
            Subset::Abstract => "abstract",
        })
    }
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(Subset::All),
            "concrete" => Ok(Subset::Concrete),
            "abstract" => Ok(Subset::Abstract),
            other => Err(format!("unknown subset `{other}`")),
        }
    }
}

impl Subset {
    fn admits(self, concreteness: Option<Concreteness>) -> bool {
        match self {
            Subset::All => true,
            Subset::Concrete => concreteness == Some(Concreteness::Concrete),
            Subset::Abstract => concreteness == Some(Concreteness::Abstract),
        }
    }
}

/// Pairwise cosine distances between the vectors of `tokens`.
pub fn embedding_rdm(space: &EmbeddingSpace, tokens: &[String]) -> Result<DissimilarityMatrix> {
    let vectors = tokens.iter().map(|t| space.vector(t)).collect::<Result<Vec<_>>>()?;
    DissimilarityMatrix::from_fn(tokens.to_vec(), |i, j| {
        cosine_distance(vectors[i], vectors[j])
            .map_err(|e| Error::Distance(format!("`{}` vs `{}`: {e}", tokens[i], tokens[j])))
    })
}

/// Pairwise Euclidean distances over one property's attribute sub-vectors.
pub fn property_rdm(space: &BrainSemanticSpace, property: &str, tokens: &[String]) -> Result<DissimilarityMatrix> {
    let range = space.schema().property_range(property)?;
    let vectors = tokens
        .iter()
        .map(|t| space.ratings(t).map(|r| &r[range.clone()]))
        .collect::<Result<Vec<_>>>()?;
    DissimilarityMatrix::from_fn(tokens.to_vec(), |i, j| euclidean_distance(vectors[i], vectors[j]))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Pearson correlation of two equal-length samples.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Degenerate("need at least two observations".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("constant sample has zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end share ranks (start+1)..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn correlate(x: &[f64], y: &[f64], method: CorrelationMethod) -> Result<f64> {
    match method {
        CorrelationMethod::Pearson => pearson(x, y),
        CorrelationMethod::Spearman => spearman(x, y),
    }
}

/// Correlation between the strict upper triangles of two matrices over the
/// same token order.
pub fn matrix_correlation(a: &DissimilarityMatrix, b: &DissimilarityMatrix, method: CorrelationMethod) -> Result<f64> {
    if a.tokens() != b.tokens() {
        return Err(Error::Alignment("matrices are over different token lists".into()));
    }
    if a.len() < 3 {
        return Err(Error::Data(format!("need at least 3 tokens, found {}", a.len())));
    }
    correlate(&a.upper_triangle(), &b.upper_triangle(), method)
}

/// Per-property correlation scores for one embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsaProfile {
    pub property_scores: Vec<(String, f64)>,
    pub n_words: usize,
    pub subset: Subset,
    pub method: CorrelationMethod,
}

impl RsaProfile {
    pub fn score(&self, property: &str) -> Option<f64> {
        self.property_scores
            .iter()
            .find(|(p, _)| p == property)
            .map(|(_, s)| *s)
    }

    /// One row per property: `property,subset,method,n_words,correlation`.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["property", "subset", "method", "n_words", "correlation"])
            .expect("in-memory write");
        for (property, score) in &self.property_scores {
            w.write_record([
                property.as_str(),
                &self.subset.to_string(),
                &self.method.to_string(),
                &self.n_words.to_string(),
                &format_float(*score),
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory write")
    }
}

/// Tokens shared by both spaces, restricted to the requested subset.
pub fn subset_vocabulary(emb: &EmbeddingSpace, brain: &BrainSemanticSpace, subset: Subset) -> Result<Vec<String>> {
    let shared = align_vocabulary(&[emb, brain])?;
    Ok(shared
        .into_iter()
        .filter(|t| subset.admits(brain.label(t).map(|l| l.concreteness)))
        .collect())
}

pub fn rsa_profile(
    emb: &EmbeddingSpace,
    brain: &BrainSemanticSpace,
    subset: Subset,
    method: CorrelationMethod,
) -> Result<RsaProfile> {
    let tokens = subset_vocabulary(emb, brain, subset)?;
    if tokens.len() < 3 {
        return Err(Error::Data(format!(
            "{subset} subset has {} shared words, need at least 3",
            tokens.len()
        )));
    }
    let emb_rdm = embedding_rdm(emb, &tokens)?;
    let properties: Vec<&str> = brain.schema().property_names().collect();
    let property_scores = properties
        .par_iter()
        .map(|&property| {
            let rdm = property_rdm(brain, property, &tokens)?;
            let score = matrix_correlation(&emb_rdm, &rdm, method)
                .map_err(|e| Error::Degenerate(format!("property `{property}`: {e}")))?;
            Ok((property.to_string(), score))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RsaProfile {
        property_scores,
        n_words: tokens.len(),
        subset,
        method,
    })
}
