use std::fmt::Write as _;

use rayon::prelude::*;

use super::{decode, Decoder, GoldAnnotation, SpanSet};
use crate::data::Vocabulary;
use crate::grammar::SimpleGrammar;
use crate::{Error, Result};

/// Unlabeled sentence-level F1. The whole-sentence span and single-token
/// spans are removed from both sides first; two empty sets score 1.
pub fn sentence_f1(pred: &SpanSet, gold: &SpanSet, len: usize) -> f64 {
    let keep = |&&(s, e): &&(usize, usize)| e - s >= 2 && !(s == 0 && e == len);
    let pred: SpanSet = pred.iter().filter(keep).copied().collect();
    let gold: SpanSet = gold.iter().filter(keep).copied().collect();
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let hits = pred.intersection(&gold).count() as f64;
    if hits == 0.0 {
        return 0.0;
    }
    let p = hits / pred.len() as f64;
    let r = hits / gold.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceScore {
    pub sentence_id: usize,
    pub length: usize,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    pub sentences: Vec<SentenceScore>,
    /// Sentences shorter than two tokens after punctuation removal.
    pub skipped: usize,
    pub mean_f1: f64,
}

impl F1Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sentence_id,length,f1\n");
        for s in &self.sentences {
            let _ = writeln!(out, "{},{},{}", s.sentence_id, s.length, s.f1);
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "sentences scored: {}\nsentences skipped: {}\nmean S-F1: {:.2}\n",
            self.sentences.len(),
            self.skipped,
            100.0 * self.mean_f1
        )
    }
}

/// Mean S-F1 over a treebank. `predict` receives the punctuation-stripped
/// tokens and returns predicted spans over them; gold spans are re-indexed
/// the same way.
pub fn corpus_f1<P>(treebank: &[GoldAnnotation], predict: P) -> Result<F1Report>
where
    P: Fn(&[String]) -> Result<SpanSet> + Sync,
{
    if treebank.is_empty() {
        return Err(Error::InvalidArgument("treebank is empty".into()));
    }
    let scored: Vec<Option<SentenceScore>> = treebank
        .par_iter()
        .enumerate()
        .map(|(i, gold)| {
            let (tokens, spans) = gold.strip_punctuation();
            if tokens.len() < 2 {
                return Ok(None);
            }
            let pred = predict(&tokens).map_err(|e| e.at_sentence(i))?;
            Ok(Some(SentenceScore {
                sentence_id: i,
                length: tokens.len(),
                f1: sentence_f1(&pred, &spans, tokens.len()),
            }))
        })
        .collect::<Result<_>>()?;
    let skipped = scored.iter().filter(|s| s.is_none()).count();
    let sentences: Vec<SentenceScore> = scored.into_iter().flatten().collect();
    if skipped > 0 {
        log::warn!("skipped {skipped} sentences shorter than 2 tokens after punctuation removal");
    }
    if sentences.is_empty() {
        return Err(Error::InvalidArgument("no sentence has two or more tokens".into()));
    }
    let mean_f1 = sentences.iter().map(|s| s.f1).sum::<f64>() / sentences.len() as f64;
    Ok(F1Report {
        sentences,
        skipped,
        mean_f1,
    })
}

/// Predictor that maps tokens through `vocab` and decodes under `g`.
pub fn grammar_predictor<'a>(
    g: &'a SimpleGrammar,
    vocab: &'a Vocabulary,
    decoder: Decoder,
) -> impl Fn(&[String]) -> Result<SpanSet> + Sync + 'a {
    move |tokens| {
        let ids = vocab.encode(tokens)?;
        Ok(decode(g, &ids, decoder)?.spans())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        let s = |v: &[(usize, usize)]| v.iter().copied().collect::<SpanSet>();
        assert_eq!(sentence_f1(&s(&[(0, 2)]), &s(&[(0, 2)]), 3), 1.0);
        assert_eq!(sentence_f1(&s(&[(0, 2)]), &s(&[(1, 3)]), 3), 0.0);
        let f = sentence_f1(&s(&[(0, 2), (0, 4)]), &s(&[(0, 2), (2, 4), (0, 4)]), 4);
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(sentence_f1(&s(&[(0, 3)]), &s(&[]), 3), 1.0);
    }
}
