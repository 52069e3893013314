//! Exhaustive enumeration oracles: every binary tree shape over the
//! sentence, every symbol assignment per shape. Exponential by design and
//! guarded by size limits.

use std::rc::Rc;

use crate::grammar::{GrammarDims, LowRankGrammar, SimpleGrammar};
use crate::inside::MarginalTable;
use crate::parse::{ParseTree, SpanSet, TreeNode};
use crate::{Error, Result};

pub const MAX_ORACLE_LEN: usize = 8;
pub const MAX_ORACLE_SYMBOLS: usize = 8;

/// Rule probabilities in probability space, for any grammar family.
pub trait RuleSource {
    fn dims(&self) -> GrammarDims;
    fn root_prob(&self, a: usize) -> f64;
    fn rule_prob(&self, a: usize, b: usize, c: usize) -> f64;
    fn emit_prob(&self, t: usize, word: usize) -> f64;
}

impl RuleSource for SimpleGrammar {
    fn dims(&self) -> GrammarDims {
        self.dims
    }
    fn root_prob(&self, a: usize) -> f64 {
        self.log_root[a].exp()
    }
    fn rule_prob(&self, a: usize, b: usize, c: usize) -> f64 {
        (self.log_left[[a, b]] + self.log_right[[a, c]]).exp()
    }
    fn emit_prob(&self, t: usize, word: usize) -> f64 {
        self.log_emit[[t, word]].exp()
    }
}

impl RuleSource for LowRankGrammar {
    fn dims(&self) -> GrammarDims {
        self.dims
    }
    fn root_prob(&self, a: usize) -> f64 {
        self.log_root[a].exp()
    }
    fn rule_prob(&self, a: usize, b: usize, c: usize) -> f64 {
        LowRankGrammar::rule_prob(self, a, b, c).expect("parent is a nonterminal")
    }
    fn emit_prob(&self, t: usize, word: usize) -> f64 {
        self.log_emit[[t, word]].exp()
    }
}

#[derive(Debug)]
enum Shape {
    Leaf(usize),
    Node(Rc<Shape>, Rc<Shape>),
}

impl Shape {
    fn spans(&self, out: &mut SpanSet) -> (usize, usize) {
        match self {
            Shape::Leaf(i) => (*i, i + 1),
            Shape::Node(l, r) => {
                let (s, _) = l.spans(out);
                let (_, e) = r.spans(out);
                out.insert((s, e));
                (s, e)
            }
        }
    }

    fn to_node(&self) -> TreeNode {
        match self {
            Shape::Leaf(i) => TreeNode::Leaf {
                position: *i,
                label: None,
            },
            Shape::Node(l, r) => TreeNode::Branch {
                label: None,
                left: Box::new(l.to_node()),
                right: Box::new(r.to_node()),
            },
        }
    }
}

fn shapes(start: usize, end: usize) -> Vec<Rc<Shape>> {
    if end - start == 1 {
        return vec![Rc::new(Shape::Leaf(start))];
    }
    let mut out = Vec::new();
    for k in start + 1..end {
        let lefts = shapes(start, k);
        let rights = shapes(k, end);
        for l in &lefts {
            for r in &rights {
                out.push(Rc::new(Shape::Node(l.clone(), r.clone())));
            }
        }
    }
    out
}

/// All `Catalan(len - 1)` unlabeled binary trees over `len` leaves.
pub fn tree_shapes(len: usize) -> Result<Vec<ParseTree>> {
    if len == 0 || len > MAX_ORACLE_LEN {
        return Err(Error::OracleLimit(format!("length {len} outside 1..={MAX_ORACLE_LEN}")));
    }
    shapes(0, len)
        .iter()
        .map(|s| ParseTree::new(s.to_node()))
        .collect()
}

fn check_input<G: RuleSource>(g: &G, tokens: &[usize]) -> Result<()> {
    let d = g.dims();
    if tokens.len() > MAX_ORACLE_LEN {
        return Err(Error::OracleLimit(format!(
            "sentence length {} exceeds {MAX_ORACLE_LEN}",
            tokens.len()
        )));
    }
    if d.n_sym() > MAX_ORACLE_SYMBOLS {
        return Err(Error::OracleLimit(format!(
            "{} symbols exceed {MAX_ORACLE_SYMBOLS}",
            d.n_sym()
        )));
    }
    if tokens.len() < 2 {
        return Err(Error::SentenceTooShort(tokens.len()));
    }
    for (position, &token) in tokens.iter().enumerate() {
        if token >= d.vocab_size {
            return Err(Error::UnknownToken {
                token,
                position,
                vocab_size: d.vocab_size,
            });
        }
    }
    Ok(())
}

/// Per-symbol score of one shape, summing (or maximizing) over every
/// labelling of its nodes.
fn score<G: RuleSource>(g: &G, tokens: &[usize], shape: &Shape, use_max: bool) -> Vec<f64> {
    let d = g.dims();
    let mut out = vec![0.0; d.n_sym()];
    match shape {
        Shape::Leaf(i) => {
            for t in 0..d.n_pt {
                out[d.n_nt + t] = g.emit_prob(t, tokens[*i]);
            }
        }
        Shape::Node(l, r) => {
            let lv = score(g, tokens, l, use_max);
            let rv = score(g, tokens, r, use_max);
            for (a, dst) in out.iter_mut().enumerate().take(d.n_nt) {
                for (b, &x) in lv.iter().enumerate() {
                    for (c, &y) in rv.iter().enumerate() {
                        let p = g.rule_prob(a, b, c) * x * y;
                        if use_max {
                            *dst = dst.max(p);
                        } else {
                            *dst += p;
                        }
                    }
                }
            }
        }
    }
    out
}

fn shape_prob<G: RuleSource>(g: &G, tokens: &[usize], shape: &Shape, use_max: bool) -> f64 {
    let top = score(g, tokens, shape, use_max);
    let terms = (0..g.dims().n_nt).map(|a| g.root_prob(a) * top[a]);
    if use_max {
        terms.fold(0.0, f64::max)
    } else {
        terms.sum()
    }
}

/// `log p(tokens)` by direct summation over all trees and labellings.
pub fn brute_force_logprob<G: RuleSource>(g: &G, tokens: &[usize]) -> Result<f64> {
    check_input(g, tokens)?;
    let total: f64 = shapes(0, tokens.len())
        .iter()
        .map(|s| shape_prob(g, tokens, s, false))
        .sum();
    Ok(total.ln())
}

/// Log-probability of the single most probable derivation, and the spans of
/// its tree.
pub fn brute_force_best<G: RuleSource>(g: &G, tokens: &[usize]) -> Result<(f64, SpanSet)> {
    check_input(g, tokens)?;
    let mut best = (0.0, SpanSet::new());
    for s in shapes(0, tokens.len()) {
        let p = shape_prob(g, tokens, &s, true);
        if p > best.0 || best.1.is_empty() {
            let mut spans = SpanSet::new();
            s.spans(&mut spans);
            best = (p, spans);
        }
    }
    Ok((best.0.ln(), best.1))
}

/// Posterior constituent probability of every span.
pub fn brute_force_posteriors<G: RuleSource>(g: &G, tokens: &[usize]) -> Result<MarginalTable> {
    check_input(g, tokens)?;
    let l = tokens.len();
    let mut weights = Vec::new();
    let mut total = 0.0;
    for s in shapes(0, l) {
        let p = shape_prob(g, tokens, &s, false);
        let mut spans = SpanSet::new();
        s.spans(&mut spans);
        total += p;
        weights.push((p, spans));
    }
    Ok(MarginalTable::from_fn(l, |i, j| {
        weights
            .iter()
            .filter(|(_, spans)| spans.contains(&(i, j)))
            .map(|(p, _)| p)
            .sum::<f64>()
            / total
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::coin_grammar;

    #[test]
    fn shape_counts_are_catalan() {
        let catalan = [1, 1, 2, 5, 14, 42, 132, 429];
        for (len, &c) in (1..=8).zip(&catalan) {
            assert_eq!(tree_shapes(len).unwrap().len(), c);
        }
    }

    #[test]
    fn coin_grammar_values() {
        let g = coin_grammar();
        assert!((brute_force_logprob(&g, &[0, 0]).unwrap() - 0.25f64.ln()).abs() < 1e-15);
        let (best, _) = brute_force_best(&g, &[0, 0, 0]).unwrap();
        assert!((best - 0.0625f64.ln()).abs() < 1e-15);
        let mu = brute_force_posteriors(&g, &[0, 0, 0]).unwrap();
        assert!((mu.get(0, 2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn guards() {
        let g = coin_grammar();
        assert!(matches!(brute_force_logprob(&g, &[0, 1]), Err(Error::UnknownToken { .. })));
        assert!(matches!(brute_force_logprob(&g, &[0; 9]), Err(Error::OracleLimit(_))));
    }
}
