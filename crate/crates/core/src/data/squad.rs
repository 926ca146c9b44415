//! SQuAD-2.0-format JSON reading and writing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataTuple, Dataset, Paragraph};
use crate::error::{contract, Error, Result};
use crate::label::Label;
use crate::text::{tokenize, Vocab};

#[derive(Debug, Serialize, Deserialize)]
struct SquadFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<String>,
    data: Vec<Article>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Article {
    #[serde(default)]
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadParagraph {
    /// Not part of the public schema; written so ids survive a round trip.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    context: String,
    qas: Vec<Qa>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Qa {
    id: String,
    question: String,
    #[serde(default)]
    is_impossible: bool,
    #[serde(default)]
    answers: Vec<Answer>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    plausible_answers: Vec<Answer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Answer {
    text: String,
    answer_start: usize,
}

/// A loaded dataset and the number of answers that did not align to
/// word boundaries.
#[derive(Debug, Clone)]
pub struct SquadLoad {
    pub dataset: Dataset,
    pub dropped: usize,
}

/// Word span `(s, e)` covering exactly the characters of `answer`.
fn align(p: &Paragraph, answer: &Answer) -> Option<(usize, usize)> {
    let start = answer.answer_start;
    let end = start + answer.text.chars().count();
    let s = p.words.iter().position(|w| w.start == start)?;
    let e = p.words.iter().position(|w| w.end == end)?;
    (s <= e).then_some((s, e))
}

/// Reads a SQuAD-2.0 file. Without a vocabulary, one is built from every
/// context and question in the file.
pub fn load_squad_json(path: impl AsRef<Path>, vocab: Option<&Vocab>) -> Result<SquadLoad> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SquadFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))?;
    if file.data.is_empty() {
        return Err(contract!("{}: empty `data` array", path.display()));
    }
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => Vocab::build(
            file.data
                .iter()
                .flat_map(|a| &a.paragraphs)
                .flat_map(|p| std::iter::once(p.context.as_str()).chain(p.qas.iter().map(|q| q.question.as_str()))),
        ),
    };

    let mut paragraphs = BTreeMap::new();
    let mut tuples = Vec::new();
    let mut dropped = 0;
    for (ai, article) in file.data.iter().enumerate() {
        for (pi, sp) in article.paragraphs.iter().enumerate() {
            let pid = sp.id.clone().unwrap_or_else(|| format!("a{ai}-p{pi}"));
            let paragraph = Paragraph::new(pid.clone(), sp.context.clone(), &vocab);
            for qa in &sp.qas {
                let question = tokenize(&qa.question, &vocab);
                if qa.is_impossible {
                    tuples.push(DataTuple {
                        id: qa.id.clone(),
                        question,
                        paragraph_id: pid.clone(),
                        span: None,
                        label: Label::Unanswerable,
                        answers: Vec::new(),
                    });
                    continue;
                }
                match qa.answers.iter().find_map(|a| align(&paragraph, a)) {
                    Some(span) => tuples.push(DataTuple {
                        id: qa.id.clone(),
                        question,
                        paragraph_id: pid.clone(),
                        span: Some(span),
                        label: Label::Answerable,
                        answers: qa.answers.iter().map(|a| a.text.clone()).collect(),
                    }),
                    None => dropped += 1,
                }
            }
            if paragraphs.insert(pid.clone(), paragraph).is_some() {
                return Err(contract!("{}: duplicate paragraph id `{pid}`", path.display()));
            }
        }
    }
    if tuples.is_empty() {
        return Err(contract!("{}: no usable question tuples", path.display()));
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} answers not aligned to word boundaries", path.display());
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "squad".into());
    let dataset = Dataset {
        name,
        tuples,
        paragraphs,
        vocab,
    };
    dataset.validate()?;
    Ok(SquadLoad { dataset, dropped })
}

/// Writes `dataset` as a single-article SQuAD-2.0 file. Answer offsets
/// point at the first character of the span's first word.
pub fn write_squad_json(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut qas: BTreeMap<&str, Vec<Qa>> = BTreeMap::new();
    for t in &dataset.tuples {
        let p = dataset.paragraph(&t.paragraph_id)?;
        let answers = match t.span {
            Some((s, e)) => vec![Answer {
                text: p.span_text(s, e),
                answer_start: p.words[s].start,
            }],
            None => Vec::new(),
        };
        qas.entry(t.paragraph_id.as_str()).or_default().push(Qa {
            id: t.id.clone(),
            question: t.question.surface.clone(),
            is_impossible: t.label == Label::Unanswerable,
            answers,
            plausible_answers: Vec::new(),
        });
    }
    let file = SquadFile {
        version: Some("v2.0".into()),
        data: vec![Article {
            title: dataset.name.clone(),
            paragraphs: dataset
                .paragraphs
                .values()
                .map(|p| SquadParagraph {
                    id: Some(p.id.clone()),
                    context: p.context.clone(),
                    qas: qas.remove(p.id.as_str()).unwrap_or_default(),
                })
                .collect(),
        }],
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
