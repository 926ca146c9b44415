use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{contract, Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const BOS: u32 = 5;
pub const EOS: u32 = 6;

/// Reserved tokens, occupying ids `0..7` in this order.
pub const RESERVED: [&str; 7] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[BOS]", "[EOS]"];

/// Word-level vocabulary with fixed reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from words, in the order given. Duplicates and
    /// reserved names are skipped.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for r in RESERVED {
            v.push(r);
        }
        for w in words {
            let w = w.as_ref();
            if !w.is_empty() && !v.index.contains_key(w) {
                v.push(w);
            }
        }
        v
    }

    /// Vocabulary over every word of `texts`, sorted.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts
            .into_iter()
            .flat_map(|t| super::tokenize::split_words(t).into_iter().map(|w| w.text))
            .collect();
        Self::from_words(words)
    }

    fn push(&mut self, w: &str) {
        self.index.insert(w.to_string(), self.tokens.len() as u32);
        self.tokens.push(w.to_string());
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(RESERVED[UNK as usize], String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([b'\n']);
        }
        hex::encode(h.finalize())
    }

    /// One token per line; line `i` holds id `i + 7`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut body = String::new();
        for w in self.words() {
            body.push_str(w);
            body.push('\n');
        }
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut seen = BTreeSet::new();
        for (i, line) in body.lines().enumerate() {
            if RESERVED.contains(&line) || !seen.insert(line) {
                return Err(contract!("{}: line {} repeats token `{line}`", path.display(), i + 1));
            }
        }
        Ok(Self::from_words(body.lines()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocab::from_words(["what", "color"]);
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(r), i as u32);
        }
        assert_eq!(v.id("what"), 7);
        assert_eq!(v.id("nope"), UNK);
        assert_eq!(v.token(8), "color");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocab::build(["The cat sat.", "a dog"]);
        v.save(&path).unwrap();
        let back = Vocab::load(&path).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.content_hash(), back.content_hash());
    }

    #[test]
    fn duplicate_lines_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "a\nb\na\n").unwrap();
        assert!(Vocab::load(&path).is_err());
    }
}
