//! Labeled sentence datasets in tab-separated form.
//!
//! Files are UTF-8 with a header line `sentence_id<TAB>sentence<TAB>label`.
//! Test files may omit the label column (`sentence_id<TAB>sentence`).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "OBJ")]
    Obj,
    #[serde(rename = "SUBJ")]
    Subj,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Obj, ClassLabel::Subj];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::Obj => 0,
            ClassLabel::Subj => 1,
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            0 => Ok(ClassLabel::Obj),
            1 => Ok(ClassLabel::Subj),
            other => Err(Error::IndexOutOfRange(other)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Obj => "OBJ",
            ClassLabel::Subj => "SUBJ",
        }
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "OBJ" => Ok(ClassLabel::Obj),
            "SUBJ" => Ok(ClassLabel::Subj),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn encode_label(label: ClassLabel) -> usize {
    label.index()
}

pub fn decode_label(index: usize) -> Result<ClassLabel> {
    ClassLabel::from_index(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub sentence_id: String,
    pub text: String,
    pub language: String,
    pub label: Option<ClassLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Dev,
    DevTest,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "dev-test" | "dev_test" => Ok(Split::DevTest),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub language: String,
    pub split: Split,
    pub rows: Vec<LabeledSentence>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub obj: usize,
    pub subj: usize,
}

impl ClassCounts {
    pub fn get(&self, label: ClassLabel) -> usize {
        match label {
            ClassLabel::Obj => self.obj,
            ClassLabel::Subj => self.subj,
        }
    }

    pub fn total(&self) -> usize {
        self.obj + self.subj
    }
}

impl Dataset {
    pub fn new(language: impl Into<String>, split: Split, rows: Vec<LabeledSentence>) -> Self {
        Dataset {
            language: language.into(),
            split,
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.text.as_str())
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.rows.iter().all(|r| r.label.is_some())
    }

    /// Golds in row order; fails on the first unlabeled row.
    pub fn labels(&self) -> Result<Vec<ClassLabel>> {
        self.rows
            .iter()
            .map(|r| r.label.ok_or_else(|| Error::UnlabeledRow(r.sentence_id.clone())))
            .collect()
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let labeled = self.is_fully_labeled();
        if labeled {
            out.extend_from_slice(b"sentence_id\tsentence\tlabel\n");
        } else {
            out.extend_from_slice(b"sentence_id\tsentence\n");
        }
        for row in &self.rows {
            match (labeled, row.label) {
                (true, Some(l)) => writeln!(out, "{}\t{}\t{}", row.sentence_id, row.text, l),
                _ => writeln!(out, "{}\t{}", row.sentence_id, row.text),
            }
            .map_err(|e| Error::io(path, e))?;
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn load_dataset(path: &Path, language: &str, split: Split) -> Result<Dataset> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&content, path, language, split)
}

pub fn parse_dataset(content: &str, path: &Path, language: &str, split: Split) -> Result<Dataset> {
    let mut lines = content.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(Error::format(path, "missing header line"));
    };
    let columns = header.trim_end_matches('\r').split('\t').count();
    let has_label = match columns {
        3 => true,
        2 if split == Split::Test => false,
        found => {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line: 1,
                expected: 3,
                found,
            })
        }
    };

    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let label_field = match (has_label, fields.len()) {
            (true, 3) => Some(fields[2]),
            (false, 2) => None,
            // unlabeled test rows may drop the trailing label column
            (true, 2) if split == Split::Test => None,
            (_, found) => {
                return Err(Error::MalformedRow {
                    path: path.to_path_buf(),
                    line: i + 1,
                    expected: columns,
                    found,
                })
            }
        };
        let id = fields[0].to_string();
        let text = fields[1].to_string();
        if text.trim().is_empty() {
            return Err(Error::EmptyText(id));
        }
        let label = match label_field {
            None => None,
            Some(raw) => match raw.parse::<ClassLabel>() {
                Ok(l) => Some(l),
                Err(_) if split == Split::Test => None,
                Err(e) => return Err(e),
            },
        };
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        rows.push(LabeledSentence {
            sentence_id: id,
            text,
            language: language.to_string(),
            label,
        });
    }
    Ok(Dataset::new(language, split, rows))
}

pub fn class_counts(dataset: &Dataset) -> Result<ClassCounts> {
    let mut counts = ClassCounts::default();
    for row in &dataset.rows {
        match row.label {
            Some(ClassLabel::Obj) => counts.obj += 1,
            Some(ClassLabel::Subj) => counts.subj += 1,
            None => return Err(Error::UnlabeledRow(row.sentence_id.clone())),
        }
    }
    Ok(counts)
}

/// Per-class counts keyed by label, for reporting.
pub fn class_count_map(dataset: &Dataset) -> Result<BTreeMap<ClassLabel, usize>> {
    let c = class_counts(dataset)?;
    Ok(ClassLabel::ALL.iter().map(|&l| (l, c.get(l))).collect())
}
