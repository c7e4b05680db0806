//! Readers and writers for every on-disk format.
//!
//! * embeddings: word2vec text format, `<count> <dim>` header then
//!   `<token> <v1> ... <vdim>` per line
//! * brain ratings: CSV `concept,concreteness,category,<attr1>,...`
//! * property schema: CSV rows `property,attribute` in display order
//! * phrase lexicon: TSV `adjective<TAB>noun[<TAB>adj_category[<TAB>noun_category]]`
//! * matrices: CSV with tokens in the first row and column
//!
//! Floats are written with 9 significant digits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{
    normalize_token, phrase_token, BrainSemanticSpace, ConceptLabel, DissimilarityMatrix, EmbeddingSpace, Modality,
    Property, PropertySchema,
};

/// Formats a float with 9 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.8e}")
}

/// Writes `contents` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Data(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Embeddings

/// Parses word2vec text format. `origin` is used in error locations only.
pub fn parse_embeddings(text: &str, modality: Modality, origin: &Path) -> Result<EmbeddingSpace> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(origin, 1, "missing `<count> <dim>` header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str| s.parse::<usize>().ok();
    let (count, dim) = match fields.as_slice() {
        [c, d] => match (parse_usize(c), parse_usize(d)) {
            (Some(c), Some(d)) if d > 0 => (c, d),
            _ => return Err(Error::format(origin, 1, format!("bad header `{header}`"))),
        },
        _ => return Err(Error::format(origin, 1, "header must be `<count> <dim>`")),
    };

    let mut space = EmbeddingSpace::new(modality, dim);
    let mut last_line = 1;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        last_line = line_no;
        if space.len() == count {
            return Err(Error::format(
                origin,
                line_no,
                format!("header declares {count} entries but more lines follow"),
            ));
        }
        let mut parts = line.split_whitespace();
        let raw_token = parts.next().unwrap_or_default();
        let token = normalize_token(raw_token).map_err(|m| Error::format(origin, line_no, m))?;
        let mut vector = Vec::with_capacity(dim);
        for field in parts {
            let v = f64::from_str(field)
                .map_err(|_| Error::format(origin, line_no, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::format(origin, line_no, format!("non-finite value `{field}`")));
            }
            vector.push(v);
        }
        if vector.len() != dim {
            return Err(Error::format(
                origin,
                line_no,
                format!("expected {dim} values, found {}", vector.len()),
            ));
        }
        if space.contains(&token) {
            return Err(Error::format(origin, line_no, format!("duplicate token `{token}`")));
        }
        space
            .insert(&token, vector)
            .map_err(|e| Error::format(origin, line_no, e.to_string()))?;
    }
    if space.len() != count {
        return Err(Error::format(
            origin,
            last_line + 1,
            format!("header declares {count} entries, found {}", space.len()),
        ));
    }
    Ok(space)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingSpace> {
    load_embeddings_as(path, Modality::Linguistic)
}

pub fn load_embeddings_as(path: &Path, modality: Modality) -> Result<EmbeddingSpace> {
    parse_embeddings(&read_text(path)?, modality, path)
}

pub fn embeddings_to_string(space: &EmbeddingSpace) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", space.len(), space.dim());
    for (token, vector) in space.iter() {
        out.push_str(token);
        for v in vector {
            out.push(' ');
            out.push_str(&format_float(*v));
        }
        out.push('\n');
    }
    out
}

pub fn save_embeddings(space: &EmbeddingSpace, path: &Path) -> Result<()> {
    write_atomic(path, embeddings_to_string(space).as_bytes())
}

// ---------------------------------------------------------------------------
// Brain-based ratings

fn csv_line(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::format(path, line, e.to_string())
}

fn canonical_name(raw: &str) -> String {
    raw.trim().to_lowercase()
}

/// Reads a `property,attribute` CSV. A leading `property,attribute` header
/// row is optional.
pub fn load_schema(path: &Path) -> Result<PropertySchema> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut properties: Vec<Property> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = csv_line(&record);
        if record.len() != 2 {
            return Err(Error::format(path, line, "expected `property,attribute`"));
        }
        let (property, attribute) = (canonical_name(&record[0]), canonical_name(&record[1]));
        if i == 0 && property == "property" && attribute == "attribute" {
            continue;
        }
        if property.is_empty() || attribute.is_empty() {
            return Err(Error::format(path, line, "empty property or attribute name"));
        }
        match properties.last_mut() {
            Some(last) if last.name == property => last.attributes.push(attribute),
            _ => {
                if properties.iter().any(|p| p.name == property) {
                    return Err(Error::Schema(format!(
                        "{}:{line}: attributes of property `{property}` are not contiguous",
                        path.display()
                    )));
                }
                properties.push(Property {
                    name: property,
                    attributes: vec![attribute],
                });
            }
        }
    }
    PropertySchema::new(properties)
}

/// Loads the brain-based ratings table and reorders attributes to schema order.
pub fn load_brain_space(data_path: &Path, schema_path: &Path) -> Result<BrainSemanticSpace> {
    let schema = load_schema(schema_path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(data_path)
        .map_err(|e| csv_error(data_path, e))?;
    let header = reader.headers().map_err(|e| csv_error(data_path, e))?.clone();
    let names: Vec<String> = header.iter().map(canonical_name).collect();
    if names.len() < 4 || names[0] != "concept" || names[1] != "concreteness" || names[2] != "category" {
        return Err(Error::format(
            data_path,
            1,
            "header must start with `concept,concreteness,category` followed by attributes",
        ));
    }

    let data_attrs = &names[3..];
    let mut column_of = BTreeMap::new();
    for (offset, name) in data_attrs.iter().enumerate() {
        if column_of.insert(name.as_str(), offset + 3).is_some() {
            return Err(Error::Schema(format!("attribute `{name}` repeated in data header")));
        }
    }
    let schema_attrs: BTreeSet<&str> = schema.attribute_names().collect();
    if let Some(extra) = data_attrs.iter().find(|a| !schema_attrs.contains(a.as_str())) {
        return Err(Error::Schema(format!(
            "attribute `{extra}` is in the data but not the schema"
        )));
    }
    if let Some(missing) = schema_attrs.iter().find(|a| !column_of.contains_key(*a)) {
        return Err(Error::Schema(format!(
            "attribute `{missing}` is in the schema but not the data"
        )));
    }
    let order: Vec<usize> = schema.attribute_names().map(|a| column_of[a]).collect();

    let mut space = BrainSemanticSpace::new(schema);
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(data_path, e))?;
        let line = csv_line(&record);
        let at = |m: String| Error::format(data_path, line, m);
        let concept = normalize_token(&record[0]).map_err(at)?;
        let concreteness = record[1].parse().map_err(at)?;
        let category = match canonical_name(&record[2]) {
            c if c.is_empty() => None,
            c => Some(c),
        };
        let mut ratings = Vec::with_capacity(order.len());
        for &col in &order {
            let field = &record[col];
            let v: f64 = field
                .parse()
                .map_err(|_| at(format!("rating `{field}` in column `{}` is not a number", names[col])))?;
            ratings.push(v);
        }
        space
            .insert(&concept, ConceptLabel { concreteness, category }, ratings)
            .map_err(|e| match e {
                e @ Error::Range { .. } => e,
                other => at(other.to_string()),
            })?;
    }
    Ok(space)
}

// ---------------------------------------------------------------------------
// Phrase lexicon

/// Adjective groups used for category breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjectiveCategory {
    Spatial,
    Somatosensory,
    Visual,
    Emotional,
}

impl AdjectiveCategory {
    pub const ALL: [AdjectiveCategory; 4] = [
        AdjectiveCategory::Spatial,
        AdjectiveCategory::Somatosensory,
        AdjectiveCategory::Visual,
        AdjectiveCategory::Emotional,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdjectiveCategory::Spatial => "spatial",
            AdjectiveCategory::Somatosensory => "somatosensory",
            AdjectiveCategory::Visual => "visual",
            AdjectiveCategory::Emotional => "emotional",
        }
    }
}

/// Noun groups used for category breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NounCategory {
    #[serde(rename = "place")]
    Place,
    #[serde(rename = "human")]
    Human,
    #[serde(rename = "animal")]
    Animal,
    #[serde(rename = "body part")]
    BodyPart,
    #[serde(rename = "tool")]
    Tool,
    #[serde(rename = "vehicle")]
    Vehicle,
    #[serde(rename = "food")]
    Food,
}

impl NounCategory {
    pub const ALL: [NounCategory; 7] = [
        NounCategory::Place,
        NounCategory::Human,
        NounCategory::Animal,
        NounCategory::BodyPart,
        NounCategory::Tool,
        NounCategory::Vehicle,
        NounCategory::Food,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NounCategory::Place => "place",
            NounCategory::Human => "human",
            NounCategory::Animal => "animal",
            NounCategory::BodyPart => "body part",
            NounCategory::Tool => "tool",
            NounCategory::Vehicle => "vehicle",
            NounCategory::Food => "food",
        }
    }
}

impl fmt::Display for AdjectiveCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for NounCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdjectiveCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim().to_lowercase();
        AdjectiveCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown adjective category `{s}`"))
    }
}

impl FromStr for NounCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim().to_lowercase().replace(['_', '-'], " ");
        let s = if s == "bodypart" { "body part".to_string() } else { s };
        NounCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown noun category `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PhraseEntry {
    pub adjective: String,
    pub noun: String,
    pub phrase: String,
}

/// Adjective-noun pairs with optional category tags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhraseLexicon {
    entries: Vec<PhraseEntry>,
    adjective_categories: BTreeMap<String, AdjectiveCategory>,
    noun_categories: BTreeMap<String, NounCategory>,
    duplicates_removed: usize,
}

impl PhraseLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a pair. Returns `Ok(false)` if the phrase was already present.
    pub fn push(
        &mut self,
        adjective: &str,
        noun: &str,
        adjective_category: Option<AdjectiveCategory>,
        noun_category: Option<NounCategory>,
    ) -> Result<bool, String> {
        let adjective = normalize_token(adjective).map_err(|m| format!("adjective: {m}"))?;
        let noun = normalize_token(noun).map_err(|m| format!("noun: {m}"))?;
        tag(&mut self.adjective_categories, &adjective, adjective_category)?;
        tag(&mut self.noun_categories, &noun, noun_category)?;
        let phrase = phrase_token(&adjective, &noun);
        if self.entries.iter().any(|e| e.phrase == phrase) {
            self.duplicates_removed += 1;
            return Ok(false);
        }
        self.entries.push(PhraseEntry {
            adjective,
            noun,
            phrase,
        });
        Ok(true)
    }

    pub fn entries(&self) -> &[PhraseEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn duplicates_removed(&self) -> usize {
        self.duplicates_removed
    }

    pub fn entry(&self, phrase: &str) -> Option<&PhraseEntry> {
        self.entries.iter().find(|e| e.phrase == phrase)
    }

    pub fn adjective_category(&self, adjective: &str) -> Option<AdjectiveCategory> {
        self.adjective_categories.get(adjective).copied()
    }

    pub fn noun_category(&self, noun: &str) -> Option<NounCategory> {
        self.noun_categories.get(noun).copied()
    }

    /// Restricts the lexicon to the given phrase tokens, keeping category tags.
    pub fn subset(&self, phrases: &[String]) -> PhraseLexicon {
        let keep: BTreeSet<&str> = phrases.iter().map(String::as_str).collect();
        PhraseLexicon {
            entries: self
                .entries
                .iter()
                .filter(|e| keep.contains(e.phrase.as_str()))
                .cloned()
                .collect(),
            adjective_categories: self.adjective_categories.clone(),
            noun_categories: self.noun_categories.clone(),
            duplicates_removed: 0,
        }
    }
}

fn tag<C: Copy + PartialEq + fmt::Display>(
    map: &mut BTreeMap<String, C>,
    word: &str,
    category: Option<C>,
) -> Result<(), String> {
    let Some(category) = category else {
        return Ok(());
    };
    match map.get(word) {
        Some(existing) if *existing != category => Err(format!("`{word}` tagged both `{existing}` and `{category}`")),
        _ => {
            map.insert(word.to_string(), category);
            Ok(())
        }
    }
}

pub fn parse_phrases(text: &str, origin: &Path) -> Result<PhraseLexicon> {
    let mut lexicon = PhraseLexicon::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let at = |m: String| Error::format(origin, line_no, m);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 4 {
            return Err(at(format!(
                "expected 2 to 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let optional = |i: usize| fields.get(i).map(|s| s.trim()).filter(|s| !s.is_empty());
        let adj_cat = optional(2).map(str::parse).transpose().map_err(at)?;
        let noun_cat = optional(3).map(str::parse).transpose().map_err(at)?;
        lexicon.push(fields[0], fields[1], adj_cat, noun_cat).map_err(at)?;
    }
    Ok(lexicon)
}

pub fn load_phrases(path: &Path) -> Result<PhraseLexicon> {
    parse_phrases(&read_text(path)?, path)
}

// ---------------------------------------------------------------------------
// Matrices

/// A real matrix with row and column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: DMatrix<f64>,
}

impl From<&DissimilarityMatrix> for LabeledMatrix {
    fn from(m: &DissimilarityMatrix) -> Self {
        LabeledMatrix {
            row_labels: m.tokens().to_vec(),
            col_labels: m.tokens().to_vec(),
            values: m.values().clone(),
        }
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().from_writer(Vec::new())
}

fn finish_csv(writer: csv::Writer<Vec<u8>>) -> Vec<u8> {
    writer.into_inner().expect("in-memory csv writer cannot fail")
}

pub fn labeled_matrix_to_csv(m: &LabeledMatrix) -> Vec<u8> {
    let mut w = csv_writer();
    let header = std::iter::once("").chain(m.col_labels.iter().map(String::as_str));
    w.write_record(header).expect("in-memory write");
    for (i, label) in m.row_labels.iter().enumerate() {
        let row = (0..m.values.ncols()).map(|j| format_float(m.values[(i, j)]));
        w.write_record(std::iter::once(label.clone()).chain(row))
            .expect("in-memory write");
    }
    finish_csv(w)
}

pub fn save_matrix(m: &LabeledMatrix, path: &Path) -> Result<()> {
    write_atomic(path, &labeled_matrix_to_csv(m))
}

pub fn save_dissimilarity(m: &DissimilarityMatrix, path: &Path) -> Result<()> {
    save_matrix(&LabeledMatrix::from(m), path)
}

pub fn load_matrix(path: &Path) -> Result<LabeledMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| Error::format(path, 1, "empty matrix file"))?
        .map_err(|e| csv_error(path, e))?;
    let col_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut row_labels = Vec::new();
    let mut data = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = csv_line(&record);
        if record.len() != col_labels.len() + 1 {
            return Err(Error::format(
                path,
                line,
                format!(
                    "expected {} values, found {}",
                    col_labels.len(),
                    record.len().saturating_sub(1)
                ),
            ));
        }
        row_labels.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path, line, format!("`{field}` is not a number")))?;
            data.push(v);
        }
    }
    let values = DMatrix::from_row_slice(row_labels.len(), col_labels.len(), &data);
    Ok(LabeledMatrix {
        row_labels,
        col_labels,
        values,
    })
}

/// Loads a dissimilarity matrix, rejecting non-square or asymmetric bodies.
pub fn load_dissimilarity(path: &Path) -> Result<DissimilarityMatrix> {
    let m = load_matrix(path)?;
    if m.row_labels.len() != m.col_labels.len() {
        return Err(Error::format(
            path,
            1,
            format!("matrix is {}x{}, not square", m.row_labels.len(), m.col_labels.len()),
        ));
    }
    if m.row_labels != m.col_labels {
        return Err(Error::format(path, 1, "row and column tokens differ"));
    }
    DissimilarityMatrix::new(m.row_labels, m.values).map_err(|e| Error::format(path, 0, e.to_string()))
}

/// Plain numeric CSV (no labels), used for model weights.
pub fn weights_to_csv(m: &DMatrix<f64>) -> Vec<u8> {
    let mut w = csv_writer();
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| format_float(m[(i, j)])))
            .expect("in-memory write");
    }
    finish_csv(w)
}

pub fn load_weights(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = csv_line(&record);
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(Error::format(path, line, "ragged weight matrix"));
        }
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path, line, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::format(path, line, "non-finite weight"));
            }
            data.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &data))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
    bytes.push(b'\n');
    bytes
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|source| Error::Json {
        path: PathBuf::from(path),
        source,
    })
}
