//! Loading HASOC-style delimited dataset files.
//!
//! A dataset file is UTF-8 text with a header row. The id, text and
//! (optional) label columns are named by a [`Schema`]; label strings are
//! mapped to a canonical [`Label`] through an explicit [`LabelMap`].

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("dataset file not found: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: missing declared column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: unmappable label strings at lines {}", format_lines(.lines))]
    UnmappableLabels { path: PathBuf, lines: Vec<(u64, String)> },
    #[error("{path}: duplicate id `{id}` at lines {first} and {second}")]
    DuplicateId { path: PathBuf, id: String, first: u64, second: u64 },
    #[error("{path}: empty id at line {line}")]
    EmptyId { path: PathBuf, line: u64 },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn format_lines(lines: &[(u64, String)]) -> String {
    lines
        .iter()
        .map(|(line, raw)| format!("{line} ({raw:?})"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Binary offensive-content label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Offensive,
    NotOffensive,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Offensive, Label::NotOffensive];

    /// Row/column index used by confusion matrices and two-way score vectors.
    pub fn index(self) -> usize {
        match self {
            Label::Offensive => 0,
            Label::NotOffensive => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Offensive => "OFFENSIVE",
            Label::NotOffensive => "NOT_OFFENSIVE",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "OFFENSIVE" => Ok(Label::Offensive),
            "NOT_OFFENSIVE" => Ok(Label::NotOffensive),
            other => Err(CorpusError::UnknownLabel(other.to_string())),
        }
    }
}

/// Case-insensitive table from raw label strings to canonical labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub offensive: Vec<String>,
    pub not_offensive: Vec<String>,
}

impl Default for LabelMap {
    fn default() -> Self {
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        LabelMap {
            offensive: owned(&["off", "offensive"]),
            not_offensive: owned(&["not", "not-offensive", "not_offensive", "not offensive"]),
        }
    }
}

impl LabelMap {
    pub fn lookup(&self, raw: &str) -> Option<Label> {
        let key = raw.trim().to_lowercase();
        let hit = |xs: &[String]| xs.iter().any(|s| s.to_lowercase() == key);
        if hit(&self.offensive) {
            Some(Label::Offensive)
        } else if hit(&self.not_offensive) {
            Some(Label::NotOffensive)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Tab,
    Comma,
}

impl Delimiter {
    fn byte(self) -> u8 {
        match self {
            Delimiter::Tab => b'\t',
            Delimiter::Comma => b',',
        }
    }
}

/// Column mapping for a dataset file. Column names match case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub id_column: String,
    pub text_column: String,
    pub label_column: Option<String>,
    pub delimiter: Delimiter,
    /// Honor `"` quoting. Defaults to off for tab files, where raw comments
    /// routinely contain unbalanced quotes.
    pub quoting: Option<bool>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            id_column: "id".into(),
            text_column: "text".into(),
            label_column: Some("label".into()),
            delimiter: Delimiter::Tab,
            quoting: None,
        }
    }
}

impl Schema {
    pub fn quoting_enabled(&self) -> bool {
        self.quoting.unwrap_or(self.delimiter == Delimiter::Comma)
    }
}

/// One dataset row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub text: String,
    pub label: Option<Label>,
}

impl RawRecord {
    /// Rows whose text cell was empty are kept and flagged through this.
    pub fn has_empty_text(&self) -> bool {
        self.text.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub total: usize,
    pub offensive: usize,
    pub not_offensive: usize,
    pub unlabeled: usize,
}

impl DatasetSummary {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }
}

pub fn summarize(records: &[RawRecord]) -> DatasetSummary {
    records.iter().fold(DatasetSummary::default(), |mut acc, r| {
        acc.total += 1;
        match r.label {
            Some(Label::Offensive) => acc.offensive += 1,
            Some(Label::NotOffensive) => acc.not_offensive += 1,
            None => acc.unlabeled += 1,
        }
        acc
    })
}

fn find_column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, CorpusError> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name.trim()))
        .ok_or_else(|| CorpusError::MissingColumn { path: path.to_path_buf(), column: name.to_string() })
}

/// Reads every data row of `path` in file order.
///
/// An empty label cell yields an unlabeled record. Unmappable label strings
/// are collected across the whole file and reported together.
pub fn load_dataset(path: &Path, schema: &Schema, labels: &LabelMap) -> Result<Vec<RawRecord>, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let csv_err = |source| CorpusError::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter.byte())
        .quoting(schema.quoting_enabled())
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let id_col = find_column(&headers, &schema.id_column, path)?;
    let text_col = find_column(&headers, &schema.text_column, path)?;
    let label_col = match &schema.label_column {
        Some(name) => Some(find_column(&headers, name, path)?),
        None => None,
    };

    let mut records = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    let mut bad_labels = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map(|p| p.line()).unwrap_or_default();
        let id = row.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(CorpusError::EmptyId { path: path.to_path_buf(), line });
        }
        if let Some(&first) = seen.get(&id) {
            return Err(CorpusError::DuplicateId { path: path.to_path_buf(), id, first, second: line });
        }
        seen.insert(id.clone(), line);
        let text = row.get(text_col).unwrap_or("").to_string();
        let label = match label_col.and_then(|c| row.get(c)).map(str::trim) {
            None | Some("") => None,
            Some(raw) => match labels.lookup(raw) {
                Some(label) => Some(label),
                None => {
                    bad_labels.push((line, raw.to_string()));
                    None
                }
            },
        };
        records.push(RawRecord { id, text, label });
    }
    if !bad_labels.is_empty() {
        return Err(CorpusError::UnmappableLabels { path: path.to_path_buf(), lines: bad_labels });
    }
    Ok(records)
}

/// Writes records with the canonical header `id`, `text`, `label`, using the
/// schema's delimiter. Labels are written in their canonical spelling, which
/// the default [`LabelMap`] reads back.
pub fn write_dataset<W: Write>(out: W, records: &[RawRecord], delimiter: Delimiter) -> Result<(), csv::Error> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(delimiter.byte())
        .quote_style(match delimiter {
            Delimiter::Tab => csv::QuoteStyle::Never,
            Delimiter::Comma => csv::QuoteStyle::Necessary,
        })
        .from_writer(out);
    writer.write_record(["id", "text", "label"])?;
    for r in records {
        writer.write_record([r.id.as_str(), r.text.as_str(), r.label.map(Label::as_str).unwrap_or("")])?;
    }
    writer.flush()?;
    Ok(())
}
