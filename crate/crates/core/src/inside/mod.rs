//! The inside algorithm for simple PCFGs.
//!
//! Per span `(i, j)` the chart holds `o = log beta` over all symbols and the
//! cached projections `a = log(L beta)`, `b = log(R beta)` over nonterminals;
//! then `o[i,j] = logsumexp_k (a[i,k] + b[k,j])`.
//!
//! Two forward engines share this contract: [`inside_reference`] uses
//! per-element log-sum-exp everywhere, [`FlashInside`] shifts each span by
//! a scalar so projections become one matrix product against the stacked
//! `[L; R]` table, fuses the surrounding element-wise work, and keeps only
//! `o`, `a`, `b`. [`inside_backward`] recomputes split weights
//! `exp(a[i,k] + b[k,j] - o[i,j])` from the chart instead of storing them.

mod backward;
mod chart;
mod corpus;
mod flash;
pub mod oracle;
mod reference;

pub use backward::inside_backward;
pub(crate) use backward::SharedRows;
pub(crate) use chart::SpanLayout;
pub(crate) use flash::gemm;
pub use chart::{InsideChart, MarginalTable};
pub use corpus::{corpus_log_likelihood, sentence_log_likelihoods, CorpusLikelihood};
pub use flash::{inside_flash, FlashInside};
pub use oracle::brute_force_logprob;
pub use reference::inside_reference;

use serde::{Deserialize, Serialize};

use crate::grammar::SimpleGrammar;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Reference,
    #[default]
    Flash,
}

impl std::str::FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Engine::Reference),
            "flash" => Ok(Engine::Flash),
            other => Err(Error::InvalidArgument(format!("unknown engine {other:?}"))),
        }
    }
}

/// Whether spans of equal width are processed by the rayon pool or in
/// order on the calling thread. Serial mode is bit-reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Parallelism {
    Serial,
    #[default]
    Parallel,
}

pub(crate) fn check_sentence(g: &SimpleGrammar, tokens: &[usize]) -> Result<()> {
    if tokens.len() < 2 {
        return Err(Error::SentenceTooShort(tokens.len()));
    }
    for (position, &token) in tokens.iter().enumerate() {
        if token >= g.dims.vocab_size {
            return Err(Error::UnknownToken {
                token,
                position,
                vocab_size: g.dims.vocab_size,
            });
        }
    }
    Ok(())
}

/// Runs the chosen forward engine.
pub fn inside(g: &SimpleGrammar, tokens: &[usize], engine: Engine) -> Result<InsideChart> {
    match engine {
        Engine::Reference => inside_reference(g, tokens),
        Engine::Flash => inside_flash(g, tokens),
    }
}
