//! Augmented-record JSONL files and merging them into training data.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DataTuple, Dataset};
use crate::error::{contract, Error, Result};
use crate::label::Label;
use crate::text::tokenize;

/// One accepted rewrite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentedRecord {
    pub id: String,
    pub source_id: String,
    /// Normalized words joined by single spaces.
    pub question: String,
    pub paragraph_id: String,
    pub target_label: Label,
    pub span_start: Option<usize>,
    pub span_end: Option<usize>,
    pub jaccard: f64,
    pub p_target: f64,
    pub eta_init: f64,
    pub eta_index: usize,
    pub step_index: usize,
    /// Source span kept for rewrites that became unanswerable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plausible_span: Option<(usize, usize)>,
}

impl AugmentedRecord {
    pub fn span(&self) -> Option<(usize, usize)> {
        self.span_start.zip(self.span_end)
    }

    pub fn validate(&self) -> Result<()> {
        let ok_span = match (self.target_label, self.span_start, self.span_end) {
            (Label::Answerable, Some(s), Some(e)) => s <= e,
            (Label::Unanswerable, None, None) => true,
            _ => false,
        };
        if !ok_span {
            return Err(contract!("record `{}`: span does not fit label {}", self.id, self.target_label));
        }
        if !(0.0..=1.0).contains(&self.jaccard) || !(0.0..=1.0).contains(&self.p_target) || !self.eta_init.is_finite() {
            return Err(contract!("record `{}`: score out of range", self.id));
        }
        if self.question.trim().is_empty() {
            return Err(contract!("record `{}`: empty question", self.id));
        }
        Ok(())
    }
}

/// One JSON object per line, in the order given.
pub fn write_augmented(records: &[AugmentedRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for r in records {
        r.validate()?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_augmented(path: impl AsRef<Path>) -> Result<Vec<AugmentedRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: AugmentedRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

/// Which augmented records join the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    Ans,
    Unans,
    Both,
}

impl MergeMode {
    pub fn keeps(self, label: Label) -> bool {
        match self {
            MergeMode::Ans => label == Label::Answerable,
            MergeMode::Unans => label == Label::Unanswerable,
            MergeMode::Both => true,
        }
    }
}

impl fmt::Display for MergeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergeMode::Ans => "ans",
            MergeMode::Unans => "unans",
            MergeMode::Both => "both",
        })
    }
}

impl FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ans" => Ok(MergeMode::Ans),
            "unans" => Ok(MergeMode::Unans),
            "both" | "ans+unans" => Ok(MergeMode::Both),
            _ => Err(contract!("unknown merge mode `{s}` (expected ans, unans or both)")),
        }
    }
}

/// Appends the records selected by `mode` to a copy of `original`.
pub fn merge_records(original: &Dataset, records: &[AugmentedRecord], mode: MergeMode) -> Result<Dataset> {
    let dangling: Vec<String> = records
        .iter()
        .filter(|r| !original.paragraphs.contains_key(&r.paragraph_id))
        .map(|r| format!("{} -> {}", r.id, r.paragraph_id))
        .collect();
    if !dangling.is_empty() {
        return Err(contract!("records reference unknown paragraphs: {}", dangling.join(", ")));
    }
    let mut merged = original.clone();
    merged.name = format!("{}+{mode}", original.name);
    for r in records.iter().filter(|r| mode.keeps(r.target_label)) {
        let p = original.paragraph(&r.paragraph_id)?;
        let span = r.span();
        merged.tuples.push(DataTuple {
            id: r.id.clone(),
            question: tokenize(&r.question, &original.vocab),
            paragraph_id: r.paragraph_id.clone(),
            span,
            label: r.target_label,
            answers: span.map(|(s, e)| vec![p.span_text(s, e)]).unwrap_or_default(),
        });
    }
    merged.validate()?;
    Ok(merged)
}

pub fn merge_for_training(original: &Dataset, augmented_path: impl AsRef<Path>, mode: MergeMode) -> Result<Dataset> {
    merge_records(original, &read_augmented(augmented_path)?, mode)
}
