//! Binary parse trees, span sets, and the PTB-style bracket format.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

/// Half-open token interval `[start, end)`.
pub type Span = (usize, usize);
pub type SpanSet = BTreeSet<Span>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeNode {
    Leaf {
        position: usize,
        label: Option<usize>,
    },
    Branch {
        label: Option<usize>,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn extent(&self) -> Span {
        match self {
            TreeNode::Leaf { position, .. } => (*position, position + 1),
            TreeNode::Branch { left, right, .. } => (left.extent().0, right.extent().1),
        }
    }

    fn collect_spans(&self, out: &mut SpanSet) -> Span {
        match self {
            TreeNode::Leaf { position, .. } => (*position, position + 1),
            TreeNode::Branch { left, right, .. } => {
                let (s, _) = left.collect_spans(out);
                let (_, e) = right.collect_spans(out);
                out.insert((s, e));
                (s, e)
            }
        }
    }
}

/// A binary tree over leaf positions `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    len: usize,
    root: TreeNode,
}

impl ParseTree {
    /// Wraps a root node after checking that leaves cover `0..len` in order.
    pub fn new(root: TreeNode) -> Result<Self> {
        fn walk(node: &TreeNode, next: &mut usize) -> Result<()> {
            match node {
                TreeNode::Leaf { position, .. } => {
                    if *position != *next {
                        return Err(Error::Structural(format!(
                            "leaf {position} out of order, expected {next}"
                        )));
                    }
                    *next += 1;
                    Ok(())
                }
                TreeNode::Branch { left, right, .. } => {
                    walk(left, next)?;
                    walk(right, next)
                }
            }
        }
        let mut next = 0;
        walk(&root, &mut next)?;
        Ok(ParseTree { len: next, root })
    }

    /// Builds an unlabeled binary tree from a set of spans. The set must
    /// contain `(0, len)` and describe a complete binary bracketing.
    pub fn from_spans(len: usize, spans: &SpanSet) -> Result<Self> {
        fn build(start: usize, end: usize, spans: &SpanSet) -> Result<TreeNode> {
            if end - start == 1 {
                return Ok(TreeNode::Leaf {
                    position: start,
                    label: None,
                });
            }
            let split = (start + 1..end)
                .find(|&k| {
                    (k - start == 1 || spans.contains(&(start, k)))
                        && (end - k == 1 || spans.contains(&(k, end)))
                })
                .ok_or_else(|| {
                    Error::Structural(format!("spans do not binarize ({start}, {end})"))
                })?;
            Ok(TreeNode::Branch {
                label: None,
                left: Box::new(build(start, split, spans)?),
                right: Box::new(build(split, end, spans)?),
            })
        }
        if len < 1 {
            return Err(Error::Structural("empty tree".into()));
        }
        if len > 1 && !spans.contains(&(0, len)) {
            return Err(Error::Structural("span set lacks the root span".into()));
        }
        let tree = ParseTree::new(build(0, len, spans)?)?;
        let wide: SpanSet = spans.iter().copied().filter(|(s, e)| e - s >= 2).collect();
        if tree.spans() != wide {
            return Err(Error::Structural(
                "span set is not a single binary bracketing".into(),
            ));
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    /// Spans of all branch nodes (width >= 2), including the root span.
    pub fn spans(&self) -> SpanSet {
        let mut out = SpanSet::new();
        self.root.collect_spans(&mut out);
        out
    }

    /// Bracketed rendering. Branch labels come from `nt_label` (or `X` when
    /// unlabeled); each leaf is written as a preterminal `(TAG token)`.
    pub fn to_brackets<S: AsRef<str>>(
        &self,
        tokens: &[S],
        label_name: &dyn Fn(usize) -> String,
    ) -> String {
        fn go<S: AsRef<str>>(
            node: &TreeNode,
            tokens: &[S],
            label_name: &dyn Fn(usize) -> String,
            out: &mut String,
        ) {
            let name = |l: &Option<usize>| l.map(label_name).unwrap_or_else(|| "X".to_string());
            match node {
                TreeNode::Leaf { position, label } => {
                    let _ = write!(out, "({} {})", name(label), tokens[*position].as_ref());
                }
                TreeNode::Branch { label, left, right } => {
                    let _ = write!(out, "({} ", name(label));
                    go(left, tokens, label_name, out);
                    out.push(' ');
                    go(right, tokens, label_name, out);
                    out.push(')');
                }
            }
        }
        let mut out = String::new();
        go(&self.root, tokens, label_name, &mut out);
        out
    }

    /// Right-branching tree over `len` leaves.
    pub fn right_branching(len: usize) -> Result<Self> {
        let spans: SpanSet = (0..len.saturating_sub(1)).map(|i| (i, len)).collect();
        ParseTree::from_spans(len, &spans)
    }

    /// Span covered by the root.
    pub fn extent(&self) -> Span {
        self.root.extent()
    }
}

/// Default punctuation tags removed before S-F1 scoring.
pub const DEFAULT_PUNCT_TAGS: &str = include_str!("punct_tags.txt");

pub fn default_punct_tags() -> BTreeSet<String> {
    parse_punct_tags(DEFAULT_PUNCT_TAGS)
}

/// One tag per line; blank lines and `#`-prefixed comment lines are ignored.
pub fn parse_punct_tags(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("# "))
        .map(str::to_string)
        .collect()
}

/// One treebank sentence: tokens, constituent spans, punctuation mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldAnnotation {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    pub spans: SpanSet,
    pub punct: Vec<bool>,
}

impl GoldAnnotation {
    /// Tokens with punctuation removed, and gold spans re-indexed over the
    /// remaining tokens (spans that become empty are dropped).
    pub fn strip_punctuation(&self) -> (Vec<String>, SpanSet) {
        let mut remap = Vec::with_capacity(self.tokens.len() + 1);
        let mut kept = 0;
        for &p in &self.punct {
            remap.push(kept);
            if !p {
                kept += 1;
            }
        }
        remap.push(kept);
        let tokens = self
            .tokens
            .iter()
            .zip(&self.punct)
            .filter(|(_, &p)| !p)
            .map(|(t, _)| t.clone())
            .collect();
        let spans = self
            .spans
            .iter()
            .map(|&(s, e)| (remap[s], remap[e]))
            .filter(|(s, e)| e > s)
            .collect();
        (tokens, spans)
    }
}

#[derive(Debug)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize_sexp(line: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        match c {
            '(' | ')' => {
                if let Some(s) = start.take() {
                    out.push(&line[s..i]);
                }
                out.push(&line[i..i + 1]);
            }
            c if c.is_whitespace() => {
                if let Some(s) = start.take() {
                    out.push(&line[s..i]);
                }
            }
            _ => {
                if start.is_none() {
                    start = Some(i);
                }
            }
        }
    }
    if let Some(s) = start {
        out.push(&line[s..]);
    }
    out
}

fn parse_sexp(line: &str, line_no: usize) -> Result<Sexp> {
    let err = |m: &str| Error::Parse {
        line: line_no,
        message: m.to_string(),
    };
    let mut stack: Vec<Vec<Sexp>> = Vec::new();
    let mut done: Option<Sexp> = None;
    for tok in tokenize_sexp(line) {
        if done.is_some() {
            return Err(err("trailing content after tree"));
        }
        match tok {
            "(" => stack.push(Vec::new()),
            ")" => {
                let list = stack.pop().ok_or_else(|| err("unbalanced ')'"))?;
                let node = Sexp::List(list);
                match stack.last_mut() {
                    Some(parent) => parent.push(node),
                    None => done = Some(node),
                }
            }
            atom => match stack.last_mut() {
                Some(parent) => parent.push(Sexp::Atom(atom.to_string())),
                None => return Err(err("token outside brackets")),
            },
        }
    }
    if !stack.is_empty() {
        return Err(err("unbalanced '(': missing ')'"));
    }
    done.ok_or_else(|| err("no tree"))
}

fn collect_gold(
    node: &Sexp,
    tags: &BTreeSet<String>,
    out: &mut GoldAnnotation,
    line_no: usize,
) -> Result<()> {
    let err = |m: String| Error::Parse {
        line: line_no,
        message: m,
    };
    let Sexp::List(items) = node else {
        return Err(err("expected a bracketed node".into()));
    };
    match items.as_slice() {
        [Sexp::Atom(tag), Sexp::Atom(word)] => {
            out.punct.push(tags.contains(tag));
            out.tags.push(tag.clone());
            out.tokens.push(word.clone());
            Ok(())
        }
        [] => Err(err("empty brackets".into())),
        [first, rest @ ..] => {
            let children: &[Sexp] = match first {
                Sexp::Atom(_) => rest,
                // Unlabeled node such as the PTB outer "( (S ...) )".
                Sexp::List(_) => items,
            };
            if children.is_empty() {
                return Err(err("node without children".into()));
            }
            let start = out.tokens.len();
            for child in children {
                match child {
                    Sexp::List(_) => collect_gold(child, tags, out, line_no)?,
                    Sexp::Atom(a) => {
                        return Err(err(format!("bare token {a:?} mixed with subtrees")))
                    }
                }
            }
            let end = out.tokens.len();
            if end > start + 1 || children.len() > 1 {
                out.spans.insert((start, end));
            }
            Ok(())
        }
    }
}

/// Parses one bracketed tree. Preterminal nodes `(TAG token)` contribute
/// tokens; every other node contributes its span.
pub fn parse_bracketed(line: &str, line_no: usize, punct_tags: &BTreeSet<String>) -> Result<GoldAnnotation> {
    let sexp = parse_sexp(line, line_no)?;
    let mut out = GoldAnnotation {
        tokens: Vec::new(),
        tags: Vec::new(),
        spans: SpanSet::new(),
        punct: Vec::new(),
    };
    collect_gold(&sexp, punct_tags, &mut out, line_no)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Treebank {
    pub trees: Vec<GoldAnnotation>,
    pub skipped_empty_lines: usize,
}

pub fn parse_treebank(text: &str, punct_tags: &BTreeSet<String>) -> Result<Treebank> {
    let mut trees = Vec::new();
    let mut skipped = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            skipped += 1;
            continue;
        }
        trees.push(parse_bracketed(line, i + 1, punct_tags)?);
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} empty treebank lines");
    }
    Ok(Treebank {
        trees,
        skipped_empty_lines: skipped,
    })
}

/// Reads one bracketed tree per line.
pub fn read_bracketed_trees(path: impl AsRef<Path>, punct_tags: &BTreeSet<String>) -> Result<Treebank> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_treebank(&text, punct_tags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags() -> BTreeSet<String> {
        default_punct_tags()
    }

    #[test]
    fn reads_simple_tree() {
        let g = parse_bracketed("(S (NP (D the) (N dog)) (V ran))", 1, &tags()).unwrap();
        assert_eq!(g.tokens, ["the", "dog", "ran"]);
        assert_eq!(g.spans, SpanSet::from([(0, 3), (0, 2)]));
        assert_eq!(g.punct, [false, false, false]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match parse_treebank("((", &tags()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_treebank("(S (A a))\n(S (A a)))", &tags()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_lines_are_skipped_and_counted() {
        let tb = parse_treebank("(S (A a) (B b))\n\n   \n(S (A a) (B b))\n", &tags()).unwrap();
        assert_eq!(tb.trees.len(), 2);
        assert_eq!(tb.skipped_empty_lines, 2);
    }

    #[test]
    fn ptb_outer_brackets_and_escaped_parens() {
        let line = "( (S (-LRB- -LRB-) (NP (N a) (N b)) (-RRB- -RRB-) (. .)) )";
        let g = parse_bracketed(line, 1, &tags()).unwrap();
        assert_eq!(g.tokens, ["-LRB-", "a", "b", "-RRB-", "."]);
        assert_eq!(g.punct, [true, false, false, true, true]);
        assert!(g.spans.contains(&(0, 5)));
        assert!(g.spans.contains(&(1, 3)));
        let (toks, spans) = g.strip_punctuation();
        assert_eq!(toks, ["a", "b"]);
        assert_eq!(spans, SpanSet::from([(0, 2)]));
    }

    #[test]
    fn bracket_round_trip_preserves_spans() {
        let spans = SpanSet::from([(0, 5), (0, 2), (2, 5), (3, 5)]);
        let tree = ParseTree::from_spans(5, &spans).unwrap();
        let toks = ["a", "b", "c", "d", "e"];
        let text = tree.to_brackets(&toks, &|l| format!("N{l}"));
        let back = parse_bracketed(&text, 1, &tags()).unwrap();
        assert_eq!(back.spans, spans);
        assert_eq!(back.tokens, toks);
    }

    #[test]
    fn right_branching_spans() {
        let t = ParseTree::right_branching(4).unwrap();
        assert_eq!(t.spans(), SpanSet::from([(0, 4), (1, 4), (2, 4)]));
    }

    #[test]
    fn from_spans_rejects_non_binary_sets() {
        assert!(ParseTree::from_spans(3, &SpanSet::from([(0, 3), (1, 3)])).is_ok());
        assert!(ParseTree::from_spans(3, &SpanSet::from([(0, 3), (0, 2), (1, 3)])).is_err());
        assert!(ParseTree::from_spans(4, &SpanSet::from([(0, 4)])).is_err());
    }
}
