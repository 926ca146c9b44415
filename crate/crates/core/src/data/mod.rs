//! Datasets, ingestion, augmented-record files and checkpoints.

mod augmented;
mod checkpoint;
mod squad;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

pub use augmented::{merge_for_training, merge_records, read_augmented, write_augmented, AugmentedRecord, MergeMode};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use squad::{load_squad_json, write_squad_json, SquadLoad};
pub use synthetic::{gen_synthetic, synthetic_vocab, SyntheticConfig};

use crate::error::{contract, Result};
use crate::label::Label;
use crate::text::metrics::normalize_answer;
use crate::text::{split_words, TokenSeq, Vocab, Word};

/// A paragraph with its words and their character offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Paragraph {
    pub id: String,
    pub context: String,
    pub words: Vec<Word>,
    pub tokens: TokenSeq,
}

impl Paragraph {
    pub fn new(id: impl Into<String>, context: impl Into<String>, vocab: &Vocab) -> Self {
        let context = context.into();
        let words = split_words(&context);
        let tokens = TokenSeq {
            ids: words.iter().map(|w| vocab.id(&w.text)).collect(),
            tokens: words.iter().map(|w| w.text.clone()).collect(),
            surface: context.clone(),
        };
        Self {
            id: id.into(),
            context,
            words,
            tokens,
        }
    }

    /// Source text covered by words `s..=e`.
    pub fn span_text(&self, s: usize, e: usize) -> String {
        if s > e || e >= self.words.len() {
            return String::new();
        }
        self.context
            .chars()
            .skip(self.words[s].start)
            .take(self.words[e].end - self.words[s].start)
            .collect()
    }
}

/// One `(q, d, s, e, t)` example. `span` is `None` exactly when the
/// question is unanswerable.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTuple {
    pub id: String,
    pub question: TokenSeq,
    pub paragraph_id: String,
    pub span: Option<(usize, usize)>,
    pub label: Label,
    /// Gold answer strings; empty for unanswerable questions.
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub tuples: Vec<DataTuple>,
    pub paragraphs: BTreeMap<String, Paragraph>,
    pub vocab: Vocab,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn paragraph(&self, id: &str) -> Result<&Paragraph> {
        self.paragraphs
            .get(id)
            .ok_or_else(|| contract!("paragraph `{id}` not found in dataset `{}`", self.name))
    }

    pub fn count(&self, label: Label) -> usize {
        self.tuples.iter().filter(|t| t.label == label).count()
    }

    /// Checks id uniqueness, paragraph references and span consistency.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for t in &self.tuples {
            if !seen.insert(t.id.as_str()) {
                return Err(contract!("duplicate tuple id `{}`", t.id));
            }
            let p = self.paragraph(&t.paragraph_id)?;
            match (t.label, t.span) {
                (Label::Answerable, Some((s, e))) => {
                    if s > e || e >= p.words.len() {
                        return Err(contract!("tuple `{}` span ({s}, {e}) outside {} words", t.id, p.words.len()));
                    }
                    let got = normalize_answer(&p.span_text(s, e));
                    if !t.answers.iter().any(|a| normalize_answer(a) == got) {
                        return Err(contract!("tuple `{}` span does not reproduce a gold answer", t.id));
                    }
                }
                (Label::Unanswerable, None) => {}
                _ => return Err(contract!("tuple `{}` label and span disagree", t.id)),
            }
        }
        Ok(())
    }

    /// Splits by paragraph: roughly `dev_fraction` of paragraphs, chosen
    /// by a seeded shuffle, go to the second dataset.
    pub fn partition(&self, dev_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;

        let mut ids: Vec<&String> = self.paragraphs.keys().collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ids.shuffle(&mut rng);
        let n_dev = ((ids.len() as f64) * dev_fraction).round() as usize;
        let dev: BTreeSet<&String> = ids.into_iter().take(n_dev).collect();
        let pick = |want_dev: bool, suffix: &str| Dataset {
            name: format!("{}-{suffix}", self.name),
            tuples: self
                .tuples
                .iter()
                .filter(|t| dev.contains(&t.paragraph_id) == want_dev)
                .cloned()
                .collect(),
            paragraphs: self
                .paragraphs
                .iter()
                .filter(|(k, _)| dev.contains(k) == want_dev)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            vocab: self.vocab.clone(),
        };
        (pick(false, "train"), pick(true, "dev"))
    }

    /// Re-maps every id through another vocabulary.
    pub fn with_vocab(mut self, vocab: Vocab) -> Self {
        for p in self.paragraphs.values_mut() {
            p.tokens.ids = p.tokens.tokens.iter().map(|w| vocab.id(w)).collect();
        }
        for t in &mut self.tuples {
            t.question.ids = t.question.tokens.iter().map(|w| vocab.id(w)).collect();
        }
        self.vocab = vocab;
        self
    }
}
