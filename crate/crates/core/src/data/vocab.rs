use std::collections::HashMap;
use std::path::Path;

use crate::{Error, Result};

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;

/// Optional token normalization applied before lookup. Both are off by
/// default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Normalizer {
    pub lowercase: bool,
    pub normalize_digits: bool,
}

impl Normalizer {
    pub fn apply(&self, token: &str) -> String {
        let mut t = if self.lowercase {
            token.to_lowercase()
        } else {
            token.to_string()
        };
        if self.normalize_digits {
            t = t
                .chars()
                .map(|c| if c.is_ascii_digit() { '0' } else { c })
                .collect();
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabLimit {
    /// Keep at most this many words besides `<unk>`.
    MaxSize(usize),
    /// Keep words seen at least this many times.
    MinFreq(u64),
}

/// Token/id bijection. Vocabularies built from text reserve id 0 for
/// `<unk>`; a vocabulary read from a sidecar whose first line is not
/// `<unk>` is closed and rejects unknown words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
    unk: Option<usize>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        if words.is_empty() {
            return Err(Error::InvalidArgument("empty vocabulary".into()));
        }
        let unk = (words[0] == UNK).then_some(UNK_ID);
        Ok(Vocabulary {
            counts: vec![0; words.len()],
            words,
            index,
            unk,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unk(&self) -> Option<usize> {
        self.unk
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Training-corpus frequency of each id (zero when read from a sidecar).
    pub fn count(&self, id: usize) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied().or(self.unk)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| {
                self.id(t.as_ref())
                    .ok_or_else(|| Error::UnknownWord(t.as_ref().to_string()))
            })
            .collect()
    }

    /// One word per line; line number is the id.
    pub fn to_sidecar(&self) -> String {
        let mut out = self.words.join("\n");
        out.push('\n');
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_sidecar()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_words(text.lines().map(str::to_string).collect())
    }
}

/// Most frequent words first, ties by first occurrence; `<unk>` takes id 0.
pub fn build_vocab_from_text(text: &str, limit: VocabLimit, norm: Normalizer) -> Result<Vocabulary> {
    let mut counts: Vec<(String, u64)> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for tok in text.split_whitespace() {
        let tok = norm.apply(tok);
        if tok == UNK {
            continue;
        }
        match seen.get(&tok) {
            Some(&i) => counts[i].1 += 1,
            None => {
                seen.insert(tok.clone(), counts.len());
                counts.push((tok, 1));
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::InvalidArgument("cannot build a vocabulary from an empty corpus".into()));
    }
    // stable sort keeps first-occurrence order among equal counts
    counts.sort_by_key(|c| std::cmp::Reverse(c.1));
    let kept: Vec<(String, u64)> = match limit {
        VocabLimit::MaxSize(n) => counts.into_iter().take(n).collect(),
        VocabLimit::MinFreq(f) => counts.into_iter().filter(|(_, c)| *c >= f).collect(),
    };
    let mut words = vec![UNK.to_string()];
    let mut freq = vec![0];
    for (w, c) in kept {
        words.push(w);
        freq.push(c);
    }
    let mut vocab = Vocabulary::from_words(words)?;
    vocab.counts = freq;
    Ok(vocab)
}

pub fn build_vocab(path: impl AsRef<Path>, limit: VocabLimit, norm: Normalizer) -> Result<Vocabulary> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    build_vocab_from_text(&text, limit, norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_and_frequency_limits() {
        let n = Normalizer::default();
        let v = build_vocab_from_text("a b a", VocabLimit::MaxSize(2), n).unwrap();
        assert_eq!(v.words(), &["<unk>", "a", "b"]);
        let v = build_vocab_from_text("a b a", VocabLimit::MaxSize(1), n).unwrap();
        assert_eq!(v.words(), &["<unk>", "a"]);
        assert_eq!(v.id("b"), Some(UNK_ID));
        let v = build_vocab_from_text("a b a", VocabLimit::MinFreq(2), n).unwrap();
        assert_eq!(v.words(), &["<unk>", "a"]);
        assert_eq!(v.count(1), 2);
    }

    #[test]
    fn ties_keep_first_occurrence() {
        let v = build_vocab_from_text("c b a b c a", VocabLimit::MaxSize(3), Normalizer::default()).unwrap();
        assert_eq!(v.words(), &["<unk>", "c", "b", "a"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(build_vocab_from_text(" \n", VocabLimit::MaxSize(3), Normalizer::default()).is_err());
    }

    #[test]
    fn normalization_flags() {
        let n = Normalizer {
            lowercase: true,
            normalize_digits: true,
        };
        assert_eq!(n.apply("Year1999"), "year0000");
    }

    #[test]
    fn closed_sidecar_rejects_unknown_words() {
        let v = Vocabulary::from_words(vec!["w0".into(), "w1".into()]).unwrap();
        assert_eq!(v.encode(&["w1", "w0"]).unwrap(), vec![1, 0]);
        assert!(matches!(v.encode(&["zz"]), Err(Error::UnknownWord(_))));
        let path = tempfile::NamedTempFile::new().unwrap();
        v.save(path.path()).unwrap();
        assert_eq!(Vocabulary::load(path.path()).unwrap().words(), v.words());
    }
}
