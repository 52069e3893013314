use serde::{Deserialize, Serialize};

use super::{ParseTree, TreeNode};
use crate::grammar::SimpleGrammar;
use crate::inside::{check_sentence, FlashInside, MarginalTable};
use crate::logspace::NEG_INF;
use crate::{Error, Result};

/// Span scores closer than this are ties in MBR decoding, so rounding noise
/// in posteriors does not override the smallest-split rule.
pub const MBR_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    Viterbi,
    #[default]
    Mbr,
}

impl std::str::FromStr for Decoder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "viterbi" => Ok(Decoder::Viterbi),
            "mbr" => Ok(Decoder::Mbr),
            other => Err(Error::InvalidArgument(format!("unknown decoder {other:?}"))),
        }
    }
}

#[derive(Clone, Copy)]
struct Back {
    split: usize,
    left: usize,
    right: usize,
}

/// Most probable derivation under (max, +). Ties go to the smallest split
/// point, then the smallest symbol id. Branch labels are nonterminal ids,
/// leaf labels are preterminal symbol ids.
pub fn viterbi_decode(g: &SimpleGrammar, tokens: &[usize]) -> Result<ParseTree> {
    check_sentence(g, tokens)?;
    let l = tokens.len();
    let n = g.dims.n_nt;
    let ns = g.dims.n_sym();
    let idx = |i: usize, j: usize| (j - i - 1) * (l + 1) - (j - i - 1) * (j - i) / 2 + i;
    let n_spans = l * (l + 1) / 2;

    let mut best = vec![NEG_INF; n_spans * ns];
    // best left (right) child score and symbol for each parent over a span
    let mut left_max = vec![(NEG_INF, 0usize); n_spans * n];
    let mut right_max = vec![(NEG_INF, 0usize); n_spans * n];
    let mut back = vec![Back { split: 0, left: 0, right: 0 }; n_spans * n];

    for w in 1..=l {
        for i in 0..=l - w {
            let j = i + w;
            let s = idx(i, j);
            if w == 1 {
                for t in 0..g.dims.n_pt {
                    best[s * ns + n + t] = g.log_emit[[t, tokens[i]]];
                }
            } else {
                for a in 0..n {
                    let mut top = (NEG_INF, None);
                    for k in i + 1..j {
                        let (ls, lb) = left_max[idx(i, k) * n + a];
                        let (rs, rc) = right_max[idx(k, j) * n + a];
                        let v = ls + rs;
                        if v > top.0 {
                            top = (v, Some(Back { split: k, left: lb, right: rc }));
                        }
                    }
                    best[s * ns + a] = top.0;
                    if let Some(b) = top.1 {
                        back[s * n + a] = b;
                    }
                }
            }
            if w < l {
                let o = &best[s * ns..(s + 1) * ns];
                for a in 0..n {
                    for (table, out) in [(&g.log_left, &mut left_max), (&g.log_right, &mut right_max)] {
                        let mut m = (NEG_INF, 0);
                        for (b, &ob) in o.iter().enumerate() {
                            let v = table[[a, b]] + ob;
                            if v > m.0 {
                                m = (v, b);
                            }
                        }
                        out[s * n + a] = m;
                    }
                }
            }
        }
    }

    let top = idx(0, l);
    let mut root = (NEG_INF, None);
    for a in 0..n {
        let v = g.log_root[a] + best[top * ns + a];
        if v > root.0 {
            root = (v, Some(a));
        }
    }
    let Some(start) = root.1 else {
        return Err(Error::NonFinite("sentence has no derivation".into()));
    };

    fn build(i: usize, j: usize, sym: usize, n: usize, back: &[Back], idx: &dyn Fn(usize, usize) -> usize) -> TreeNode {
        if j - i == 1 {
            return TreeNode::Leaf {
                position: i,
                label: Some(sym),
            };
        }
        let b = back[idx(i, j) * n + sym];
        TreeNode::Branch {
            label: Some(sym),
            left: Box::new(build(i, b.split, b.left, n, back, idx)),
            right: Box::new(build(b.split, j, b.right, n, back, idx)),
        }
    }
    ParseTree::new(build(0, l, start, n, &back, &idx))
}

/// Log-probability of a fully labelled derivation.
pub fn derivation_logprob(g: &SimpleGrammar, tokens: &[usize], tree: &ParseTree) -> Result<f64> {
    check_sentence(g, tokens)?;
    if tree.len() != tokens.len() {
        return Err(Error::InvalidArgument("tree and sentence lengths differ".into()));
    }
    let n = g.dims.n_nt;
    fn label(node: &TreeNode) -> Result<usize> {
        match node {
            TreeNode::Leaf { label: Some(l), .. } | TreeNode::Branch { label: Some(l), .. } => Ok(*l),
            _ => Err(Error::InvalidArgument("derivation has unlabelled nodes".into())),
        }
    }
    fn go(g: &SimpleGrammar, tokens: &[usize], node: &TreeNode, n: usize) -> Result<f64> {
        let sym = label(node)?;
        match node {
            TreeNode::Leaf { position, .. } => {
                if sym < n || sym >= g.dims.n_sym() {
                    return Err(Error::InvalidArgument(format!("leaf label {sym} is not a preterminal")));
                }
                Ok(g.log_emit[[sym - n, tokens[*position]]])
            }
            TreeNode::Branch { left, right, .. } => {
                if sym >= n {
                    return Err(Error::InvalidArgument(format!("branch label {sym} is not a nonterminal")));
                }
                let (b, c) = (label(left)?, label(right)?);
                Ok(g.log_left[[sym, b]] + g.log_right[[sym, c]] + go(g, tokens, left, n)? + go(g, tokens, right, n)?)
            }
        }
    }
    let root = label(tree.root())?;
    if root >= n {
        return Err(Error::InvalidArgument("root label is not a nonterminal".into()));
    }
    Ok(g.log_root[root] + go(g, tokens, tree.root(), n)?)
}

/// Binary tree maximizing the summed posterior of its spans of width at
/// least two. Ties go to the smallest split point.
pub fn mbr_decode(mu: &MarginalTable) -> Result<ParseTree> {
    let l = mu.len();
    if l < 2 {
        return Err(Error::SentenceTooShort(l));
    }
    let idx = |i: usize, j: usize| (j - i - 1) * (l + 1) - (j - i - 1) * (j - i) / 2 + i;
    let mut score = vec![0.0; l * (l + 1) / 2];
    let mut split = vec![0usize; l * (l + 1) / 2];
    for w in 2..=l {
        for i in 0..=l - w {
            let j = i + w;
            let mut top = (NEG_INF, i + 1);
            for k in i + 1..j {
                let v = score[idx(i, k)] + score[idx(k, j)];
                if v > top.0 + MBR_TIE_TOLERANCE {
                    top = (v, k);
                }
            }
            score[idx(i, j)] = top.0 + mu.get(i, j);
            split[idx(i, j)] = top.1;
        }
    }
    fn build(i: usize, j: usize, split: &[usize], idx: &dyn Fn(usize, usize) -> usize) -> TreeNode {
        if j - i == 1 {
            return TreeNode::Leaf {
                position: i,
                label: None,
            };
        }
        let k = split[idx(i, j)];
        TreeNode::Branch {
            label: None,
            left: Box::new(build(i, k, split, idx)),
            right: Box::new(build(k, j, split, idx)),
        }
    }
    ParseTree::new(build(0, l, &split, &idx))
}

/// Decodes one sentence with the chosen method.
pub fn decode(g: &SimpleGrammar, tokens: &[usize], decoder: Decoder) -> Result<ParseTree> {
    match decoder {
        Decoder::Viterbi => viterbi_decode(g, tokens),
        Decoder::Mbr => {
            let engine = FlashInside::new(g);
            let chart = engine.forward(tokens)?;
            let (_, mu) = engine.backward(tokens, &chart)?;
            mbr_decode(&mu)
        }
    }
}
