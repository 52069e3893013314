//! Simple PCFGs: binary rules whose left and right children are generated
//! independently given the parent, `p(A -> B C) = p(B <- A) * p(A -> C)`.
//!
//! The crate provides grammar representations (plus a low-rank tensor
//! baseline and its exact conversion), a reference and a fused inside
//! algorithm with a hand-written recomputation-based backward pass, brute
//! force oracles, neural and direct parameterizations trained with Adam,
//! Viterbi/MBR decoding with sentence-level F1 evaluation, and a benchmark
//! harness comparing inside-algorithm variants.

pub mod bench;
pub mod data;
pub mod error;
pub mod grammar;
pub mod inside;
pub mod logspace;
pub mod neural;
pub mod parse;
pub mod train;

pub use error::{Error, Result};
pub use grammar::{GrammarDims, GrammarGrad, LowRankGrammar, SimpleGrammar};
pub use inside::{Engine, InsideChart, MarginalTable, Parallelism};
