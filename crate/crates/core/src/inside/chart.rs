use std::fmt::Write as _;

use crate::grammar::GrammarDims;
use crate::logspace::NEG_INF;

/// Width-major span storage: all spans of width 1, then width 2, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct SpanLayout {
    pub len: usize,
}

impl SpanLayout {
    #[inline]
    pub fn width_offset(&self, w: usize) -> usize {
        debug_assert!(w >= 1 && w <= self.len);
        let w1 = w - 1;
        w1 * (self.len + 1) - w1 * w / 2
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j <= self.len);
        self.width_offset(j - i) + i
    }

    #[inline]
    pub fn spans_of_width(&self, w: usize) -> usize {
        self.len + 1 - w
    }

    #[inline]
    pub fn n_spans(&self) -> usize {
        self.len * (self.len + 1) / 2
    }
}

/// Inside chart in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct InsideChart {
    pub(crate) layout: SpanLayout,
    pub(crate) n_nt: usize,
    pub(crate) n_sym: usize,
    pub(crate) o: Vec<f64>,
    pub(crate) a: Vec<f64>,
    pub(crate) b: Vec<f64>,
    pub(crate) log_z: f64,
}

impl InsideChart {
    pub(crate) fn empty(dims: GrammarDims, len: usize) -> Self {
        let layout = SpanLayout { len };
        let n = layout.n_spans();
        InsideChart {
            layout,
            n_nt: dims.n_nt,
            n_sym: dims.n_sym(),
            o: vec![NEG_INF; n * dims.n_sym()],
            a: vec![NEG_INF; n * dims.n_nt],
            b: vec![NEG_INF; n * dims.n_nt],
            log_z: NEG_INF,
        }
    }

    pub fn len(&self) -> usize {
        self.layout.len
    }

    pub fn is_empty(&self) -> bool {
        self.layout.len == 0
    }

    /// Sentence log-likelihood `log p(w)`.
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn n_sym(&self) -> usize {
        self.n_sym
    }

    pub fn n_nt(&self) -> usize {
        self.n_nt
    }

    /// `log beta` over all symbols for span `(i, j)`.
    pub fn o(&self, i: usize, j: usize) -> &[f64] {
        let s = self.layout.index(i, j) * self.n_sym;
        &self.o[s..s + self.n_sym]
    }

    /// `log(L beta)` over nonterminals; only meaningful for `j - i < len`.
    pub fn a(&self, i: usize, j: usize) -> &[f64] {
        let s = self.layout.index(i, j) * self.n_nt;
        &self.a[s..s + self.n_nt]
    }

    /// `log(R beta)` over nonterminals; only meaningful for `j - i < len`.
    pub fn b(&self, i: usize, j: usize) -> &[f64] {
        let s = self.layout.index(i, j) * self.n_nt;
        &self.b[s..s + self.n_nt]
    }

    /// Bytes held by the `o`, `a` and `b` tables.
    pub fn storage_bytes(&self) -> usize {
        (self.o.len() + self.a.len() + self.b.len()) * std::mem::size_of::<f64>()
    }

    /// Every stored value in `o`, `a`, `b` is finite or `-inf`.
    pub fn is_well_formed(&self) -> bool {
        self.o
            .iter()
            .chain(&self.a)
            .chain(&self.b)
            .all(|x| x.is_finite() || *x == NEG_INF)
    }

    /// Debug dump, one line per finite entry: `i j symbol logbeta`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let l = self.len();
        for w in 1..=l {
            for i in 0..=l - w {
                for (sym, v) in self.o(i, i + w).iter().enumerate() {
                    if v.is_finite() {
                        let _ = writeln!(out, "{i} {} {sym} {v:.17e}", i + w);
                    }
                }
            }
        }
        out
    }
}

/// Posterior probability that each span is a constituent.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    pub(crate) layout: SpanLayout,
    pub(crate) span: Vec<f64>,
}

impl MarginalTable {
    pub(crate) fn zeros(len: usize) -> Self {
        let layout = SpanLayout { len };
        MarginalTable {
            layout,
            span: vec![0.0; layout.n_spans()],
        }
    }

    /// Builds a table from explicit span posteriors; unspecified spans are 0
    /// and width-1 spans are 1.
    pub fn from_fn(len: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut t = MarginalTable::zeros(len);
        for w in 1..=len {
            for i in 0..=len - w {
                let idx = t.layout.index(i, i + w);
                t.span[idx] = if w == 1 { 1.0 } else { f(i, i + w) };
            }
        }
        t
    }

    pub fn len(&self) -> usize {
        self.layout.len
    }

    pub fn is_empty(&self) -> bool {
        self.layout.len == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.span[self.layout.index(i, j)]
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        let idx = self.layout.index(i, j);
        self.span[idx] = v;
    }

    /// Sum of posteriors over spans of width at least two.
    pub fn total_constituents(&self) -> f64 {
        let l = self.len();
        (2..=l)
            .flat_map(|w| (0..=l - w).map(move |i| (i, i + w)))
            .map(|(i, j)| self.get(i, j))
            .sum()
    }
}
