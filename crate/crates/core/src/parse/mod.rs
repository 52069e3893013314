//! Tree decoding, bracketed-tree I/O, and sentence-level F1.

mod decode;
mod eval;
mod tree;

pub use decode::{decode, derivation_logprob, mbr_decode, viterbi_decode, Decoder, MBR_TIE_TOLERANCE};
pub use eval::{corpus_f1, grammar_predictor, sentence_f1, F1Report, SentenceScore};
pub use tree::{
    default_punct_tags, parse_bracketed, parse_punct_tags, parse_treebank, read_bracketed_trees, GoldAnnotation,
    ParseTree, Span, SpanSet, TreeNode, Treebank, DEFAULT_PUNCT_TAGS,
};
