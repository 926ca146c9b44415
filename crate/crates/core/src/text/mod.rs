//! Tokenization, vocabulary and string-level metrics.

pub mod metrics;
mod tokenize;
pub mod vocab;

pub use metrics::{bleu4, jaccard_unigram, rouge_l, squad_em_f1, SquadScore};
pub use tokenize::{split_words, tokenize, TokenSeq, Word};
pub use vocab::Vocab;
