//! Prediction, macro-F1 scoring and result tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ClassLabel, LabeledSentence};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fusion::Logits;
use crate::model::Classifier;

/// Argmax over the two logits; exact ties go to OBJ.
pub fn argmax_label(logits: &Logits) -> ClassLabel {
    if logits[1] > logits[0] {
        ClassLabel::Subj
    } else {
        ClassLabel::Obj
    }
}

pub fn predict(model: &Classifier, rows: &[LabeledSentence], exec: Execution) -> Result<Vec<ClassLabel>> {
    exec.map(rows, |row| -> Result<ClassLabel> {
        let ex = model.prepare_one(row)?;
        Ok(argmax_label(&model.logits(&ex)?))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub obj: ClassCounts,
    pub subj: ClassCounts,
}

impl ConfusionCounts {
    pub fn from_pairs(predictions: &[ClassLabel], golds: &[ClassLabel]) -> Self {
        let mut c = ConfusionCounts::default();
        for (&p, &g) in predictions.iter().zip(golds) {
            if p == g {
                c.class_mut(g).tp += 1;
            } else {
                c.class_mut(p).fp += 1;
                c.class_mut(g).fn_ += 1;
            }
        }
        c
    }

    pub fn class(&self, label: ClassLabel) -> &ClassCounts {
        match label {
            ClassLabel::Obj => &self.obj,
            ClassLabel::Subj => &self.subj,
        }
    }

    fn class_mut(&mut self, label: ClassLabel) -> &mut ClassCounts {
        match label {
            ClassLabel::Obj => &mut self.obj,
            ClassLabel::Subj => &mut self.subj,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub obj: ClassScores,
    pub subj: ClassScores,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub n: usize,
    pub counts: ConfusionCounts,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn scores(c: &ClassCounts) -> ClassScores {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScores { precision, recall, f1 }
}

/// Per-class precision/recall/F1 and their unweighted mean. Any 0/0 is 0,
/// and a class absent from both inputs still counts with F1 = 0.
pub fn macro_f1(predictions: &[ClassLabel], golds: &[ClassLabel]) -> Result<EvalReport> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch(predictions.len(), golds.len()));
    }
    if golds.is_empty() {
        return Err(Error::Empty);
    }
    let counts = ConfusionCounts::from_pairs(predictions, golds);
    let obj = scores(&counts.obj);
    let subj = scores(&counts.subj);
    let correct = counts.obj.tp + counts.subj.tp;
    Ok(EvalReport {
        obj,
        subj,
        macro_f1: (obj.f1 + subj.f1) / 2.0,
        accuracy: correct as f64 / golds.len() as f64,
        n: golds.len(),
        counts,
    })
}

/// Reads `sentence_id<TAB>label` rows; an optional header whose first
/// field is `sentence_id` is skipped.
pub fn read_labels(path: &Path) -> Result<Vec<(String, ClassLabel)>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || (i == 0 && line.starts_with("sentence_id\t")) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        // gold files may carry the sentence text in the middle column
        let (id, label) = match fields.as_slice() {
            [id, label] | [id, _, label] => (*id, *label),
            _ => {
                return Err(Error::MalformedRow {
                    path: path.to_path_buf(),
                    line: i + 1,
                    expected: 2,
                    found: fields.len(),
                })
            }
        };
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        out.push((id.to_string(), label.parse()?));
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, ids: &[String], labels: &[ClassLabel]) -> Result<()> {
    let mut out = String::from("sentence_id\tlabel\n");
    for (id, l) in ids.iter().zip(labels) {
        let _ = writeln!(out, "{id}\t{l}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Aligns predictions with golds by sentence id, in gold order.
pub fn align(predictions: &[(String, ClassLabel)], golds: &[(String, ClassLabel)]) -> Result<(Vec<ClassLabel>, Vec<ClassLabel>)> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch(predictions.len(), golds.len()));
    }
    let by_id: HashMap<&str, ClassLabel> = predictions.iter().map(|(i, l)| (i.as_str(), *l)).collect();
    let mut p = Vec::with_capacity(golds.len());
    let mut g = Vec::with_capacity(golds.len());
    for (id, gold) in golds {
        let pred = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::UnlabeledRow(id.clone()))?;
        p.push(*pred);
        g.push(*gold);
    }
    Ok((p, g))
}

/// A rows × columns grid of scores (e.g. variant × language).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::InvalidConfig(format!("unknown report format {other:?}"))),
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl ResultTable {
    pub fn new(row_header: impl Into<String>, columns: Vec<String>) -> Self {
        ResultTable {
            row_header: row_header.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, label: impl Into<String>, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push((label.into(), values));
    }

    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|(r, _)| r == row).map(|(_, v)| v[c])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = std::iter::once(&self.row_header)
            .chain(&self.columns)
            .map(|s| csv_field(s))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (label, values) in &self.rows {
            out.push_str(&csv_field(label));
            for v in values {
                let _ = write!(out, ",{v:.4}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut cells: Vec<Vec<String>> = vec![std::iter::once(self.row_header.clone())
            .chain(self.columns.iter().cloned())
            .collect()];
        for (label, values) in &self.rows {
            cells.push(
                std::iter::once(label.clone())
                    .chain(values.iter().map(|v| format!("{v:.4}")))
                    .collect(),
            );
        }
        let ncol = cells[0].len();
        let widths: Vec<usize> = (0..ncol)
            .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0).max(3))
            .collect();
        let pad = |s: &str, w: usize, right: bool| {
            let fill = " ".repeat(w - s.chars().count());
            if right {
                format!("{fill}{s}")
            } else {
                format!("{s}{fill}")
            }
        };
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, s)| pad(s, widths[c], c > 0 && i > 0))
                .collect();
            let _ = writeln!(out, "| {} |", line.join(" | "));
            if i == 0 {
                let rule: Vec<String> = widths
                    .iter()
                    .enumerate()
                    .map(|(c, &w)| {
                        if c == 0 {
                            "-".repeat(w)
                        } else {
                            format!("{}:", "-".repeat(w - 1))
                        }
                    })
                    .collect();
                let _ = writeln!(out, "| {} |", rule.join(" | "));
            }
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Markdown => self.to_markdown(),
        }
    }
}

pub fn emit_report(table: &ResultTable, format: ReportFormat, path: &Path) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::Empty);
    }
    fs::write(path, table.render(format)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClassLabel::{Obj as O, Subj as S};

    #[test]
    fn argmax_and_ties() {
        assert_eq!(argmax_label(&[2.0, 1.0]), O);
        assert_eq!(argmax_label(&[1.0, 1.0]), O);
        assert_eq!(argmax_label(&[1.0, 1.5]), S);
        for c in [-7.0, 0.25, 1e6] {
            assert_eq!(argmax_label(&[2.0 + c, 1.0 + c]), O);
        }
    }

    #[test]
    fn hand_computed_case() {
        let r = macro_f1(&[O, S, S, S], &[O, O, S, S]).unwrap();
        assert!((r.obj.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.subj.f1 - 0.8).abs() < 1e-12);
        assert!((r.macro_f1 - 0.733_333_333_333_333_3).abs() < 1e-9);
        assert_eq!(r.accuracy, 0.75);
    }

    #[test]
    fn perfect_and_all_wrong() {
        assert_eq!(macro_f1(&[O, S, O], &[O, S, O]).unwrap().macro_f1, 1.0);
        assert_eq!(macro_f1(&[S, O, S], &[O, S, O]).unwrap().macro_f1, 0.0);
        // one class never appears: it contributes F1 = 0
        assert_eq!(macro_f1(&[O, O], &[O, O]).unwrap().macro_f1, 0.5);
    }

    #[test]
    fn errors() {
        assert!(matches!(macro_f1(&[O], &[O, S]), Err(Error::LengthMismatch(1, 2))));
        assert!(matches!(macro_f1(&[], &[]), Err(Error::Empty)));
    }

    #[test]
    fn table_rendering() {
        let mut t = ResultTable::new(
            "Language Order",
            vec!["de".into(), "it".into(), "en".into()],
        );
        t.push_row("de → it → en", vec![0.8013, 0.7139, 0.8052]);
        t.push_row("en → it → de", vec![0.8195, 0.7787, 0.7818]);
        t.push_row("de → en → it", vec![0.8013, 0.8033, 0.7839]);
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "Language Order,de,it,en");
        assert_eq!(lines[1], "de → it → en,0.8013,0.7139,0.8052");
        let md = t.to_markdown();
        assert_eq!(md.lines().count(), 5);
        assert!(md.lines().all(|l| l.starts_with('|') && l.ends_with('|')));
        let widths: Vec<usize> = md.lines().map(|l| l.chars().count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(t.get("en → it → de", "it"), Some(0.7787));
    }
}
