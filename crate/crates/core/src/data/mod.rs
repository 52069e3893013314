//! Vocabularies, corpora, length batching, and synthetic corpora sampled from
//! a known grammar.

mod synthetic;
mod vocab;

pub use synthetic::{generate_synthetic, SyntheticData};
pub use vocab::{build_vocab, build_vocab_from_text, Normalizer, VocabLimit, Vocabulary, UNK, UNK_ID};

use std::path::Path;

use crate::{Error, Result};

/// Sentences as id sequences, with the original strings kept for reporting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub sentences: Vec<Vec<usize>>,
    pub tokens: Vec<Vec<String>>,
    /// Lines with fewer than two tokens that were dropped on load.
    pub filtered_short: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn n_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// Keeps sentences with at most `max_len` tokens.
    pub fn filter_max_len(&self, max_len: usize) -> Corpus {
        let (sentences, tokens) = self
            .sentences
            .iter()
            .zip(&self.tokens)
            .filter(|(s, _)| s.len() <= max_len)
            .map(|(s, t)| (s.clone(), t.clone()))
            .unzip();
        Corpus {
            sentences,
            tokens,
            filtered_short: self.filtered_short,
        }
    }
}

pub fn corpus_from_text(text: &str, vocab: &Vocabulary, norm: Normalizer) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (line_no, line) in text.lines().enumerate() {
        let tokens: Vec<String> = line.split_whitespace().map(|t| norm.apply(t)).collect();
        if tokens.len() < 2 {
            corpus.filtered_short += 1;
            continue;
        }
        let ids = vocab.encode(&tokens).map_err(|e| match e {
            Error::UnknownWord(w) => Error::Parse {
                line: line_no + 1,
                message: format!("word {w:?} is not in the vocabulary"),
            },
            other => other,
        })?;
        corpus.sentences.push(ids);
        corpus.tokens.push(tokens);
    }
    if corpus.filtered_short > 0 {
        log::warn!("filtered {} lines with fewer than two tokens", corpus.filtered_short);
    }
    Ok(corpus)
}

/// Reads one space-separated sentence per line.
pub fn load_corpus(path: impl AsRef<Path>, vocab: &Vocabulary, norm: Normalizer) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    corpus_from_text(&text, vocab, norm)
}

/// Groups sentence indices by length, shortest first, packing each group
/// into batches of at most `max_tokens` tokens in corpus order.
pub fn batch_by_length<S: AsRef<[usize]>>(sentences: &[S], max_tokens: usize) -> Result<Vec<Vec<usize>>> {
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    for &i in &order {
        let len = sentences[i].as_ref().len();
        if len > max_tokens {
            return Err(Error::InvalidArgument(format!(
                "sentence {i} has {len} tokens, above the batch cap of {max_tokens}"
            )));
        }
    }
    order.sort_by_key(|&i| sentences[i].as_ref().len());
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current_len = usize::MAX;
    for i in order {
        let len = sentences[i].as_ref().len();
        let fits = batches
            .last()
            .is_some_and(|b| len == current_len && (b.len() + 1) * len <= max_tokens);
        if fits {
            batches.last_mut().expect("non-empty").push(i);
        } else {
            batches.push(vec![i]);
            current_len = len;
        }
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_group_equal_lengths() {
        let s = vec![vec![0; 2], vec![0; 2], vec![0; 3]];
        assert_eq!(batch_by_length(&s, 4).unwrap(), vec![vec![0, 1], vec![2]]);
        assert!(batch_by_length(&s, 2).is_err());
    }

    #[test]
    fn batch_token_cap_holds() {
        let s: Vec<Vec<usize>> = [2, 3, 2, 2, 5, 3, 2].iter().map(|&l| vec![0; l]).collect();
        let batches = batch_by_length(&s, 6).unwrap();
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort();
        assert_eq!(seen, (0..s.len()).collect::<Vec<_>>());
        for b in &batches {
            let len = s[b[0]].len();
            assert!(b.iter().all(|&i| s[i].len() == len));
            assert!(b.len() * len <= 6);
        }
    }

    #[test]
    fn loads_and_filters() {
        let vocab = build_vocab_from_text("a b a\n", VocabLimit::MaxSize(1), Normalizer::default()).unwrap();
        let c = corpus_from_text("a b a\nb\n\na a\n", &vocab, Normalizer::default()).unwrap();
        assert_eq!(c.sentences, vec![vec![1, 0, 1], vec![1, 1]]);
        assert_eq!(c.filtered_short, 2);
    }
}
