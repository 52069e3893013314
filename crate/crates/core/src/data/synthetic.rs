use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Corpus;
use crate::grammar::{SimpleGrammar, TreeSampler};
use crate::parse::{GoldAnnotation, ParseTree};
use crate::Result;

/// Sampled sentences with the trees that generated them. Word `id` is
/// spelled `w{id}`, so ids match the generating grammar's vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub trees: Vec<ParseTree>,
    pub n_nt: usize,
}

impl SyntheticData {
    /// Bracketed treebank, one tree per line; nonterminal `A` is written
    /// `N{A}` and preterminal `T` is written `T{T}`.
    pub fn treebank_text(&self) -> String {
        let n = self.n_nt;
        let label = move |s: usize| if s < n { format!("N{s}") } else { format!("T{}", s - n) };
        let mut out = String::new();
        for (tree, tokens) in self.trees.iter().zip(&self.corpus.tokens) {
            out.push_str(&tree.to_brackets(tokens, &label));
            out.push('\n');
        }
        out
    }

    /// Gold annotations without punctuation, for scoring.
    pub fn gold(&self) -> Vec<GoldAnnotation> {
        self.trees
            .iter()
            .zip(&self.corpus.tokens)
            .map(|(tree, tokens)| GoldAnnotation {
                tokens: tokens.clone(),
                tags: vec![String::new(); tokens.len()],
                spans: tree.spans(),
                punct: vec![false; tokens.len()],
            })
            .collect()
    }

    pub fn filter_max_len(&self, max_len: usize) -> SyntheticData {
        let keep: Vec<bool> = self.corpus.sentences.iter().map(|s| s.len() <= max_len).collect();
        fn pick<T: Clone>(v: &[T], keep: &[bool]) -> Vec<T> {
            v.iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(x, _)| x.clone())
                .collect()
        }
        SyntheticData {
            corpus: Corpus {
                sentences: pick(&self.corpus.sentences, &keep),
                tokens: pick(&self.corpus.tokens, &keep),
                filtered_short: self.corpus.filtered_short,
            },
            trees: pick(&self.trees, &keep),
            n_nt: self.n_nt,
        }
    }
}

/// Draws `n` derivations from `g` with one seeded stream.
pub fn generate_synthetic(g: &SimpleGrammar, n: usize, seed: u64) -> Result<SyntheticData> {
    let sampler = TreeSampler::new(g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = SyntheticData {
        corpus: Corpus::default(),
        trees: Vec::with_capacity(n),
        n_nt: g.dims.n_nt,
    };
    for _ in 0..n {
        let (ids, tree) = sampler.sample(&mut rng)?;
        data.corpus.tokens.push(ids.iter().map(|w| format!("w{w}")).collect());
        data.corpus.sentences.push(ids);
        data.trees.push(tree);
    }
    Ok(data)
}
