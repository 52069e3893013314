//! Ancestral sampling of derivations.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SimpleGrammar;
use crate::parse::{ParseTree, TreeNode};
use crate::{Error, Result};

pub const DEFAULT_MAX_NODES: usize = 1000;
pub const DEFAULT_SAMPLE_RETRIES: usize = 100;

/// Cumulative distribution over `0..len` for inverse-CDF draws.
#[derive(Debug, Clone)]
struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    fn from_log(row: impl Iterator<Item = f64>) -> Self {
        let mut acc = 0.0;
        let cdf: Vec<f64> = row
            .map(|lp| {
                acc += lp.exp();
                acc
            })
            .collect();
        Categorical { cdf }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cdf.last().expect("non-empty row");
        let u = rng.random::<f64>() * total;
        // First index whose cumulative mass exceeds `u`; skips zero-mass entries.
        let idx = self.cdf.partition_point(|&c| c <= u);
        idx.min(self.cdf.len() - 1)
    }
}

/// Precomputed sampling tables for one grammar.
#[derive(Debug, Clone)]
pub struct TreeSampler {
    n_nt: usize,
    root: Categorical,
    left: Vec<Categorical>,
    right: Vec<Categorical>,
    emit: Vec<Categorical>,
    pub max_nodes: usize,
    pub retries: usize,
}

struct Overflow;

impl TreeSampler {
    pub fn new(g: &SimpleGrammar) -> Self {
        let rows = |m: &ndarray::Array2<f64>| {
            m.rows()
                .into_iter()
                .map(|r| Categorical::from_log(r.iter().copied()))
                .collect::<Vec<_>>()
        };
        TreeSampler {
            n_nt: g.dims.n_nt,
            root: Categorical::from_log(g.log_root.iter().copied()),
            left: rows(&g.log_left),
            right: rows(&g.log_right),
            emit: rows(&g.log_emit),
            max_nodes: DEFAULT_MAX_NODES,
            retries: DEFAULT_SAMPLE_RETRIES,
        }
    }

    fn expand<R: Rng>(
        &self,
        symbol: usize,
        rng: &mut R,
        nodes: &mut usize,
        tokens: &mut Vec<usize>,
    ) -> std::result::Result<TreeNode, Overflow> {
        *nodes += 1;
        if *nodes > self.max_nodes {
            return Err(Overflow);
        }
        if symbol >= self.n_nt {
            let word = self.emit[symbol - self.n_nt].draw(rng);
            let position = tokens.len();
            tokens.push(word);
            return Ok(TreeNode::Leaf {
                position,
                label: Some(symbol),
            });
        }
        let left_sym = self.left[symbol].draw(rng);
        let right_sym = self.right[symbol].draw(rng);
        let left = self.expand(left_sym, rng, nodes, tokens)?;
        let right = self.expand(right_sym, rng, nodes, tokens)?;
        Ok(TreeNode::Branch {
            label: Some(symbol),
            left: Box::new(left),
            right: Box::new(right),
        })
    }

    /// Draws one derivation, restarting whenever it grows past `max_nodes`
    /// symbol nodes.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<(Vec<usize>, ParseTree)> {
        for _ in 0..self.retries {
            let start = self.root.draw(rng);
            let mut nodes = 0;
            let mut tokens = Vec::new();
            if let Ok(root) = self.expand(start, rng, &mut nodes, &mut tokens) {
                return Ok((tokens, ParseTree::new(root)?));
            }
        }
        Err(Error::SamplingBudget {
            attempts: self.retries,
            max_nodes: self.max_nodes,
        })
    }
}

/// Samples one sentence and its tree. Nonterminal labels are symbol ids in
/// `0..n_nt`, leaf labels are preterminal symbol ids in `n_nt..n_sym`.
pub fn sample_tree(g: &SimpleGrammar, seed: u64, max_nodes: usize) -> Result<(Vec<usize>, ParseTree)> {
    if max_nodes < 3 {
        return Err(Error::InvalidArgument(format!(
            "max_nodes must be at least 3, got {max_nodes}"
        )));
    }
    let mut sampler = TreeSampler::new(g);
    sampler.max_nodes = max_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sampler.sample(&mut rng)
}
