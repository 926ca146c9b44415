use std::fmt;

use super::vocab::{Vocab, RESERVED};

/// A word with its character span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Lowercased words; every punctuation character is its own word, and
/// reserved markers such as `[UNK]` are kept whole. Offsets count chars.
pub fn split_words(text: &str) -> Vec<Word> {
    let chars: Vec<char> = text.chars().collect();
    let mut words = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let flush = |current: &mut String, start: usize, end: usize, words: &mut Vec<Word>| {
        if !current.is_empty() {
            words.push(Word {
                text: std::mem::take(current),
                start,
                end,
            });
        }
    };

    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '[' {
            if let Some(r) = RESERVED.iter().find(|r| starts_with(&chars[i..], r)) {
                flush(&mut current, start, i, &mut words);
                let len = r.chars().count();
                words.push(Word {
                    text: r.to_string(),
                    start: i,
                    end: i + len,
                });
                i += len;
                continue;
            }
        }
        if c.is_whitespace() {
            flush(&mut current, start, i, &mut words);
        } else if is_punct(c) {
            flush(&mut current, start, i, &mut words);
            words.push(Word {
                text: c.to_lowercase().collect(),
                start: i,
                end: i + 1,
            });
        } else {
            if current.is_empty() {
                start = i;
            }
            current.extend(c.to_lowercase());
        }
        i += 1;
    }
    flush(&mut current, start, chars.len(), &mut words);
    words
}

fn starts_with(chars: &[char], pat: &str) -> bool {
    let mut it = chars.iter();
    pat.chars().all(|p| it.next() == Some(&p))
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// A tokenized text: normalized words, their ids, and the original text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub tokens: Vec<String>,
    pub surface: String,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Sequence built from ids, e.g. decoder output.
    pub fn from_ids(ids: Vec<u32>, vocab: &Vocab) -> Self {
        let tokens: Vec<String> = ids.iter().map(|&i| vocab.token(i).to_string()).collect();
        let surface = tokens.join(" ");
        Self {
            ids,
            tokens,
            surface,
        }
    }

    /// Normalized words joined by single spaces.
    pub fn detokenize(&self) -> String {
        self.tokens.join(" ")
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.detokenize())
    }
}

/// Lowercases, splits punctuation and maps unknown words to `[UNK]`.
pub fn tokenize(text: &str, vocab: &Vocab) -> TokenSeq {
    let words = split_words(text);
    TokenSeq {
        ids: words.iter().map(|w| vocab.id(&w.text)).collect(),
        tokens: words.into_iter().map(|w| w.text).collect(),
        surface: text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::vocab::UNK;
    use super::*;

    #[test]
    fn question_tokens() {
        let v = Vocab::from_words(["what", "color", "?"]);
        let t = tokenize("What color?", &v);
        assert_eq!(t.tokens, ["what", "color", "?"]);
        assert_eq!(t.ids, [v.id("what"), v.id("color"), v.id("?")]);
    }

    #[test]
    fn empty_text() {
        let v = Vocab::from_words(["a"]);
        assert!(tokenize("", &v).is_empty());
    }

    #[test]
    fn unknown_word() {
        let v = Vocab::from_words(["a"]);
        assert_eq!(tokenize("zzzunknown", &v).ids, [UNK]);
    }

    #[test]
    fn char_offsets_and_reserved_markers() {
        let w = split_words("Héllo, [UNK] world");
        let spans: Vec<_> = w.iter().map(|w| (w.text.as_str(), w.start, w.end)).collect();
        assert_eq!(spans, [("héllo", 0, 5), (",", 5, 6), ("[UNK]", 7, 12), ("world", 13, 18)]);
    }

    #[test]
    fn detokenize_normalizes() {
        let v = Vocab::build(["what  Color?"]);
        assert_eq!(tokenize("what  Color?", &v).detokenize(), "what color ?");
    }
}
