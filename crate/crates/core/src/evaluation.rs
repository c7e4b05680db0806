//! Rank-quartile evaluation of composed phrases, nearest neighbours, and
//! brain-space difference analyses.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composition::CompositionModel;
use crate::error::{Error, Result};
use crate::ingest::{format_float, PhraseLexicon};
use crate::mapping::{clamp_ratings, map_to_brain, BrainMap};
use crate::space::{cosine_similarity, dot, l2_normalize, EmbeddingSpace};

/// Unit-normalized phrase vectors for repeated similarity ranking.
#[derive(Debug, Clone)]
pub struct PhraseIndex {
    tokens: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl PhraseIndex {
    pub fn new(space: &EmbeddingSpace) -> Result<Self> {
        let mut tokens = Vec::with_capacity(space.len());
        let mut rows = Vec::with_capacity(space.len());
        for (t, v) in space.iter() {
            rows.push(l2_normalize(v).map_err(|_| Error::normalization(format!("phrase vector `{t}`")))?);
            tokens.push(t.to_string());
        }
        Ok(PhraseIndex { tokens, rows })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Position of `gold` among all phrases ordered by descending cosine
    /// similarity to `predicted`. Phrases tied with the gold rank ahead of it.
    pub fn rank_of(&self, predicted: &[f64], gold: &str) -> Result<usize> {
        let g = self
            .tokens
            .binary_search_by(|t| t.as_str().cmp(gold))
            .map_err(|_| Error::Alignment(format!("gold phrase `{gold}` not in phrase space")))?;
        if let Some(row) = self.rows.first() {
            if row.len() != predicted.len() {
                return Err(Error::Dimension {
                    expected: row.len(),
                    found: predicted.len(),
                });
            }
        }
        let p = l2_normalize(predicted).map_err(|_| Error::Degenerate("predicted phrase vector is zero".into()))?;
        let sims: Vec<f64> = self.rows.iter().map(|r| dot(r, &p)).collect();
        let target = sims[g];
        Ok(sims.iter().filter(|&&s| s >= target).count())
    }
}

pub fn rank_of_gold(predicted: &[f64], gold_token: &str, phrase_space: &EmbeddingSpace) -> Result<usize> {
    PhraseIndex::new(phrase_space)?.rank_of(predicted, gold_token)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankQuartiles {
    pub q1: usize,
    pub q2: usize,
    pub q3: usize,
    pub n_test: usize,
    pub zero_vector_count: usize,
}

/// Nearest-rank quartiles: `Qk` is the `ceil(k n / 4)`-th smallest rank.
pub fn rank_quartiles(ranks: &[usize]) -> Result<RankQuartiles> {
    if ranks.is_empty() {
        return Err(Error::Data("no ranks to summarize".into()));
    }
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let q = |k: usize| sorted[(k * n).div_ceil(4) - 1];
    Ok(RankQuartiles {
        q1: q(1),
        q2: q(2),
        q3: q(3),
        n_test: n,
        zero_vector_count: 0,
    })
}

/// Ranks the composed vector of each `test` phrase against every vector
/// in `gold_phrases`. Zero composed vectors are counted and left out.
pub fn evaluate_ranks(
    model: &CompositionModel,
    words: &EmbeddingSpace,
    gold_phrases: &EmbeddingSpace,
    lexicon: &PhraseLexicon,
    test: &[String],
) -> Result<(Vec<Option<usize>>, RankQuartiles)> {
    let index = PhraseIndex::new(gold_phrases)?;
    let composed = crate::composition::predict_phrases(model, words, &lexicon.subset(test))?;
    let ranks = test
        .par_iter()
        .map(|p| {
            let v = composed
                .get(p)
                .ok_or_else(|| Error::Alignment(format!("test phrase `{p}` not in lexicon")))?;
            match index.rank_of(v, p) {
                Ok(r) => Ok(Some(r)),
                Err(Error::Degenerate(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<usize> = ranks.iter().flatten().copied().collect();
    let zero = ranks.len() - kept.len();
    let mut q =
        rank_quartiles(&kept).map_err(|_| Error::Degenerate(format!("all {zero} composed test vectors are zero")))?;
    q.n_test = ranks.len();
    q.zero_vector_count = zero;
    Ok((ranks, q))
}

/// The `k` tokens most cosine-similar to `query`, excluding the query,
/// descending with ties broken lexicographically. Zero vectors are skipped.
pub fn nearest_neighbors(space: &EmbeddingSpace, query: &str, k: usize) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::Data("k must be at least 1".into()));
    }
    let q = space.vector(query)?;
    let mut scored: Vec<(String, f64)> = space
        .iter()
        .filter(|(t, _)| *t != query)
        .filter_map(|(t, v)| match cosine_similarity(q, v) {
            Ok(s) => Some(Ok((t.to_string(), s))),
            Err(_) if crate::space::norm(q) == 0.0 => {
                Some(Err(Error::Degenerate(format!("query `{query}` is a zero vector"))))
            }
            Err(_) => None,
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Per property of the map's schema, the mean absolute attribute change
/// between the mapped noun and the mapped phrase.
pub fn property_difference(map: &BrainMap, noun_vec: &[f64], phrase_vec: &[f64]) -> Result<Vec<f64>> {
    let noun = map_to_brain(map, noun_vec)?;
    let phrase = map_to_brain(map, phrase_vec)?;
    Ok(map
        .schema
        .ranges()
        .map(|(_, r)| {
            let len = r.len() as f64;
            r.map(|i| (phrase[i] - noun[i]).abs()).sum::<f64>() / len
        })
        .collect())
}

/// Where phrase vectors come from.
#[derive(Debug, Clone, Copy)]
pub enum PhraseSource<'a> {
    Gold(&'a EmbeddingSpace),
    Composed(&'a CompositionModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Adjective,
    Noun,
    Cross,
    All,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::Adjective => "adjective",
            Grouping::Noun => "noun",
            Grouping::Cross => "cross",
            Grouping::All => "all",
        })
    }
}

impl FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adjective" => Ok(Grouping::Adjective),
            "noun" => Ok(Grouping::Noun),
            "cross" => Ok(Grouping::Cross),
            "all" => Ok(Grouping::All),
            other => Err(format!("unknown grouping `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyDiffRow {
    pub category: String,
    pub property: String,
    pub n_phrases: usize,
    pub mean_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyDiffReport {
    pub grouping: Grouping,
    pub categories: Vec<String>,
    pub rows: Vec<PropertyDiffRow>,
    /// Unweighted mean over categories, per property.
    pub overall: Vec<(String, f64)>,
    pub skipped: usize,
}

impl PropertyDiffReport {
    /// `category,property,n_phrases,mean_abs_diff`; overall rows last under
    /// the category `overall`.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["category", "property", "n_phrases", "mean_abs_diff"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.category.clone(),
                r.property.clone(),
                r.n_phrases.to_string(),
                format_float(r.mean_abs_diff),
            ])
            .expect("in-memory write");
        }
        let total: usize = self
            .rows
            .iter()
            .filter(|r| r.property == self.rows[0].property)
            .map(|r| r.n_phrases)
            .sum();
        for (p, v) in &self.overall {
            w.write_record(["overall".to_string(), p.clone(), total.to_string(), format_float(*v)])
                .expect("in-memory write");
        }
        w.into_inner().expect("in-memory write")
    }
}

/// Groups key ordered by tag declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum GroupKey {
    Adjective(crate::ingest::AdjectiveCategory),
    Noun(crate::ingest::NounCategory),
    Cross(crate::ingest::AdjectiveCategory, crate::ingest::NounCategory),
    All,
}

impl GroupKey {
    fn label(self) -> String {
        match self {
            GroupKey::Adjective(a) => a.to_string(),
            GroupKey::Noun(n) => n.to_string(),
            GroupKey::Cross(a, n) => format!("{a}/{n}"),
            GroupKey::All => "all".to_string(),
        }
    }
}

/// Mean property difference between nouns and their phrases, per category.
/// Entries without the tags a grouping needs, or without a gold vector in
/// gold mode, are skipped and counted.
pub fn category_property_diff(
    map: &BrainMap,
    words: &EmbeddingSpace,
    source: PhraseSource<'_>,
    lexicon: &PhraseLexicon,
    grouping: Grouping,
) -> Result<PropertyDiffReport> {
    let mut groups: BTreeMap<GroupKey, Vec<&crate::ingest::PhraseEntry>> = BTreeMap::new();
    let mut skipped = 0;
    for e in lexicon.entries() {
        let (adj, noun) = (lexicon.adjective_category(&e.adjective), lexicon.noun_category(&e.noun));
        let key = match (grouping, adj, noun) {
            (Grouping::All, _, _) => Some(GroupKey::All),
            (Grouping::Adjective, Some(a), _) => Some(GroupKey::Adjective(a)),
            (Grouping::Noun, _, Some(n)) => Some(GroupKey::Noun(n)),
            (Grouping::Cross, Some(a), Some(n)) => Some(GroupKey::Cross(a, n)),
            _ => None,
        };
        let has_vector = match source {
            PhraseSource::Gold(g) => g.contains(&e.phrase),
            PhraseSource::Composed(_) => true,
        };
        match key {
            Some(k) if has_vector => groups.entry(k).or_default().push(e),
            _ => skipped += 1,
        }
    }
    if groups.is_empty() {
        return Err(Error::Data(format!(
            "no lexicon entry is usable for {grouping} grouping"
        )));
    }

    let properties: Vec<String> = map.schema.property_names().map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut categories = Vec::new();
    let mut sums = vec![0.0; properties.len()];
    for (key, entries) in &groups {
        let diffs = entries
            .par_iter()
            .map(|e| {
                let noun = words.vector(&e.noun)?;
                let phrase = match source {
                    PhraseSource::Gold(g) => g.vector(&e.phrase)?.to_vec(),
                    PhraseSource::Composed(m) => {
                        let unit = |w: &str| {
                            l2_normalize(words.vector(w)?).map_err(|_| Error::normalization(format!("vector of `{w}`")))
                        };
                        m.compose(&unit(&e.adjective)?, &unit(&e.noun)?)?
                    }
                };
                property_difference(map, noun, &phrase)
            })
            .collect::<Result<Vec<_>>>()?;
        let label = key.label();
        for (p, name) in properties.iter().enumerate() {
            let mean = diffs.iter().map(|d| d[p]).sum::<f64>() / diffs.len() as f64;
            sums[p] += mean;
            rows.push(PropertyDiffRow {
                category: label.clone(),
                property: name.clone(),
                n_phrases: diffs.len(),
                mean_abs_diff: mean,
            });
        }
        categories.push(label);
    }
    let overall = properties
        .into_iter()
        .zip(sums)
        .map(|(p, s)| (p, s / groups.len() as f64))
        .collect();
    Ok(PropertyDiffReport {
        grouping,
        categories,
        rows,
        overall,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub series: String,
    pub x_label: String,
    pub value: f64,
}

/// Mapped attribute values of each named vector, one row per attribute, in
/// input then schema order. `clamp` clips values to the rating range.
pub fn attribute_profile(map: &BrainMap, vectors: &[(String, Vec<f64>)], clamp: bool) -> Result<Vec<ProfileRow>> {
    let attributes: Vec<&str> = map.schema.attribute_names().collect();
    let mut rows = Vec::with_capacity(vectors.len() * attributes.len());
    for (name, v) in vectors {
        let mapped = map_to_brain(map, v)?;
        let mapped = if clamp { clamp_ratings(&mapped) } else { mapped };
        rows.extend(attributes.iter().zip(mapped).map(|(a, value)| ProfileRow {
            series: name.clone(),
            x_label: a.to_string(),
            value,
        }));
    }
    Ok(rows)
}

/// `series,x_label,value`.
pub fn profile_to_csv(rows: &[ProfileRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "x_label", "value"]).expect("in-memory write");
    for r in rows {
        w.write_record([r.series.as_str(), r.x_label.as_str(), &format_float(r.value)])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}
