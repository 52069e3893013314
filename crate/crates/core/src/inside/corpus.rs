use rayon::prelude::*;

use super::{inside, Engine};
use crate::grammar::SimpleGrammar;
use crate::{Error, Result};

/// Per-sentence log-likelihoods and the corpus perplexity
/// `exp(-sum log_z / sum tokens)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusLikelihood {
    pub log_z: Vec<f64>,
    pub n_tokens: usize,
    pub perplexity: f64,
}

impl CorpusLikelihood {
    pub fn total_log_z(&self) -> f64 {
        self.log_z.iter().sum()
    }
}

/// Likelihood of each sentence, evaluated independently across the pool.
pub fn sentence_log_likelihoods<S: AsRef<[usize]> + Sync>(
    g: &SimpleGrammar,
    corpus: &[S],
    engine: Engine,
) -> Result<Vec<f64>> {
    corpus
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            inside(g, s.as_ref(), engine)
                .map(|c| c.log_z())
                .map_err(|e| e.at_sentence(i))
        })
        .collect()
}

pub fn corpus_log_likelihood<S: AsRef<[usize]> + Sync>(
    g: &SimpleGrammar,
    corpus: &[S],
    engine: Engine,
) -> Result<CorpusLikelihood> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("corpus is empty".into()));
    }
    let log_z = sentence_log_likelihoods(g, corpus, engine)?;
    let n_tokens: usize = corpus.iter().map(|s| s.as_ref().len()).sum();
    let total: f64 = log_z.iter().sum();
    Ok(CorpusLikelihood {
        perplexity: (-total / n_tokens as f64).exp(),
        log_z,
        n_tokens,
    })
}
