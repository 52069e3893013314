use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rayon::prelude::*;

use super::{check_sentence, InsideChart, Parallelism};
use crate::grammar::SimpleGrammar;
use crate::logspace::{logsumexp, NEG_INF};
use crate::Result;

/// Fused inside engine bound to one grammar.
///
/// Holds the vertically stacked `[L; R]` table in probability space so each
/// width's projections are a single matrix product. Only the chart's
/// `o`, `a`, `b` survive a forward pass.
#[derive(Debug, Clone)]
pub struct FlashInside<'g> {
    pub(crate) grammar: &'g SimpleGrammar,
    /// `2 n_nt x n_sym`: rows `0..n_nt` are `L`, rows `n_nt..` are `R`.
    pub(crate) stacked: Array2<f64>,
    pub(crate) parallelism: Parallelism,
}

impl<'g> FlashInside<'g> {
    pub fn new(grammar: &'g SimpleGrammar) -> Self {
        let n = grammar.dims.n_nt;
        let mut stacked = Array2::zeros((2 * n, grammar.dims.n_sym()));
        stacked
            .slice_mut(s![..n, ..])
            .assign(&grammar.log_left.mapv(f64::exp));
        stacked
            .slice_mut(s![n.., ..])
            .assign(&grammar.log_right.mapv(f64::exp));
        FlashInside {
            grammar,
            stacked,
            parallelism: Parallelism::default(),
        }
    }

    pub fn with_parallelism(mut self, parallelism: Parallelism) -> Self {
        self.parallelism = parallelism;
        self
    }

    pub fn grammar(&self) -> &SimpleGrammar {
        self.grammar
    }

    /// Live symbol slots of `o` at a given width: preterminals for single
    /// tokens, nonterminals otherwise. All other slots are `-inf`.
    #[inline]
    pub(crate) fn live_block(&self, width: usize) -> Range<usize> {
        let n = self.grammar.dims.n_nt;
        if width == 1 {
            n..self.grammar.dims.n_sym()
        } else {
            0..n
        }
    }

    pub(crate) fn chunk_rows(&self, rows: usize) -> usize {
        match self.parallelism {
            Parallelism::Serial => rows.max(1),
            Parallelism::Parallel => rows.div_ceil(rayon::current_num_threads()).max(1),
        }
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<InsideChart> {
        let g = self.grammar;
        check_sentence(g, tokens)?;
        let l = tokens.len();
        let n = g.dims.n_nt;
        let ns = g.dims.n_sym();
        let mut chart = InsideChart::empty(g.dims, l);
        let layout = chart.layout;

        for w in 1..=l {
            let first = layout.width_offset(w);
            let spans = layout.spans_of_width(w);
            let (done_o, rest_o) = chart.o.split_at_mut(first * ns);
            let (done_a, rest_a) = chart.a.split_at_mut(first * n);
            let (done_b, rest_b) = chart.b.split_at_mut(first * n);
            let o_blk = &mut rest_o[..spans * ns];
            let a_blk = &mut rest_a[..spans * n];
            let b_blk = &mut rest_b[..spans * n];
            let ctx = WidthCtx {
                engine: self,
                tokens,
                width: w,
                done_a,
                done_b,
                project: w < l,
            };
            let _ = done_o;
            let rows = self.chunk_rows(spans);
            match self.parallelism {
                Parallelism::Serial => o_blk
                    .chunks_mut(rows * ns)
                    .zip(a_blk.chunks_mut(rows * n))
                    .zip(b_blk.chunks_mut(rows * n))
                    .enumerate()
                    .for_each(|(c, ((o, a), b))| ctx.run(c * rows, o, a, b)),
                Parallelism::Parallel => o_blk
                    .par_chunks_mut(rows * ns)
                    .zip(a_blk.par_chunks_mut(rows * n))
                    .zip(b_blk.par_chunks_mut(rows * n))
                    .enumerate()
                    .for_each(|(c, ((o, a), b))| ctx.run(c * rows, o, a, b)),
            }
        }

        let top = chart.o(0, l);
        let root_terms: Vec<f64> = (0..n).map(|a| g.log_root[a] + top[a]).collect();
        chart.log_z = logsumexp(&root_terms);
        Ok(chart)
    }
}

/// Everything one width's kernel needs besides the output rows it owns.
struct WidthCtx<'a, 'g> {
    engine: &'a FlashInside<'g>,
    tokens: &'a [usize],
    width: usize,
    /// `a` and `b` rows of all narrower spans.
    done_a: &'a [f64],
    done_b: &'a [f64],
    project: bool,
}

impl WidthCtx<'_, '_> {
    /// Processes spans `first..first + rows` of this width: merge over split
    /// points with the max/shift/exp fused into the same loop, one matrix
    /// product for `[a | b]`, and the log/add epilogue.
    fn run(&self, first: usize, o_rows: &mut [f64], a_rows: &mut [f64], b_rows: &mut [f64]) {
        let g = self.engine.grammar;
        let n = g.dims.n_nt;
        let ns = g.dims.n_sym();
        let w = self.width;
        let l = self.tokens.len();
        let layout = super::chart::SpanLayout { len: l };
        let rows = o_rows.len() / ns;
        let live = self.engine.live_block(w);
        let m = live.len();

        let mut scaled = if self.project {
            vec![0.0; rows * m]
        } else {
            Vec::new()
        };
        let mut shift = vec![NEG_INF; rows];
        let mut run_max = vec![NEG_INF; n];
        let mut run_sum = vec![0.0; n];
        let mut safe = vec![0.0; n];

        for r in 0..rows {
            let i = first + r;
            let j = i + w;
            let o = &mut o_rows[r * ns..(r + 1) * ns];
            if w == 1 {
                let tok = self.tokens[i];
                for (t, dst) in o[n..].iter_mut().enumerate() {
                    *dst = g.log_emit[[t, tok]];
                }
            } else {
                run_max.fill(NEG_INF);
                run_sum.fill(0.0);
                for k in i + 1..j {
                    let la = layout.index(i, k) * n;
                    let rb = layout.index(k, j) * n;
                    let left = &self.done_a[la..la + n];
                    let right = &self.done_b[rb..rb + n];
                    for ((mx, &x), &y) in run_max.iter_mut().zip(left).zip(right) {
                        *mx = mx.max(x + y);
                    }
                }
                for (dst, &m) in safe.iter_mut().zip(&run_max) {
                    *dst = if m == NEG_INF { 0.0 } else { m };
                }
                for k in i + 1..j {
                    let la = layout.index(i, k) * n;
                    let rb = layout.index(k, j) * n;
                    let left = &self.done_a[la..la + n];
                    let right = &self.done_b[rb..rb + n];
                    for (((acc, &m), &x), &y) in run_sum.iter_mut().zip(&safe).zip(left).zip(right) {
                        *acc += (x + y - m).exp();
                    }
                }
                for sym in 0..n {
                    let mx = run_max[sym];
                    o[sym] = if mx == NEG_INF {
                        NEG_INF
                    } else {
                        mx + run_sum[sym].ln()
                    };
                }
            }
            if self.project {
                let live_o = &o[live.clone()];
                let x = live_o.iter().copied().fold(NEG_INF, f64::max);
                shift[r] = x;
                if x != NEG_INF {
                    for (dst, &v) in scaled[r * m..(r + 1) * m].iter_mut().zip(live_o) {
                        *dst = (v - x).exp();
                    }
                }
            }
        }

        if !self.project {
            return;
        }
        let e = ArrayView2::from_shape((rows, m), &scaled).expect("exact length");
        let p = self.engine.stacked.slice(s![.., live]);
        let mut prod = Array2::<f64>::zeros((rows, 2 * n));
        general_mat_mul(1.0, &e, &p.t(), 0.0, &mut prod);
        for r in 0..rows {
            let x = shift[r];
            let out = prod.row(r);
            let out = out.as_slice().expect("standard layout");
            let (pa, pb) = out.split_at(n);
            for (dst, &v) in a_rows[r * n..(r + 1) * n].iter_mut().zip(pa) {
                *dst = if v > 0.0 { x + v.ln() } else { NEG_INF };
            }
            for (dst, &v) in b_rows[r * n..(r + 1) * n].iter_mut().zip(pb) {
                *dst = if v > 0.0 { x + v.ln() } else { NEG_INF };
            }
        }
    }
}

/// `c = alpha * a . b + beta * c`, splitting output rows across the pool in
/// parallel mode. Each output element is computed by exactly one task.
pub(crate) fn gemm(
    parallelism: Parallelism,
    alpha: f64,
    a: &ArrayView2<'_, f64>,
    b: &ArrayView2<'_, f64>,
    beta: f64,
    c: &mut ArrayViewMut2<'_, f64>,
) {
    let rows = c.nrows();
    let threads = rayon::current_num_threads();
    if parallelism == Parallelism::Serial || threads == 1 || rows < 2 * threads {
        general_mat_mul(alpha, a, b, beta, c);
        return;
    }
    let chunk = rows.div_ceil(threads);
    c.axis_chunks_iter_mut(Axis(0), chunk)
        .into_par_iter()
        .zip(a.axis_chunks_iter(Axis(0), chunk).into_par_iter())
        .for_each(|(mut c, a)| general_mat_mul(alpha, &a, b, beta, &mut c));
}

/// Fused inside pass with span-level parallelism.
pub fn inside_flash(g: &SimpleGrammar, tokens: &[usize]) -> Result<InsideChart> {
    FlashInside::new(g).forward(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{coin_grammar, random_grammar, GrammarDims};
    use crate::inside::inside_reference;

    #[test]
    fn coin_grammar_matches_reference() {
        let g = coin_grammar();
        for len in 2..7 {
            let toks = vec![0; len];
            let r = inside_reference(&g, &toks).unwrap();
            let f = inside_flash(&g, &toks).unwrap();
            assert!((r.log_z() - f.log_z()).abs() < 1e-12);
        }
    }

    #[test]
    fn serial_and_parallel_agree_bitwise() {
        let g = random_grammar(GrammarDims::new(5, 4, 7).unwrap(), 3, 1.0).unwrap();
        let toks = [0, 3, 6, 1, 2, 2, 5, 4, 0];
        let s = FlashInside::new(&g)
            .with_parallelism(Parallelism::Serial)
            .forward(&toks)
            .unwrap();
        let p = FlashInside::new(&g).forward(&toks).unwrap();
        assert_eq!(s.log_z().to_bits(), p.log_z().to_bits());
    }

    #[test]
    fn chart_projections_match_their_definition() {
        let g = random_grammar(GrammarDims::new(3, 3, 4).unwrap(), 21, 1.0).unwrap();
        let toks = [1, 0, 3, 2, 2];
        let chart = inside_flash(&g, &toks).unwrap();
        for w in 1..toks.len() {
            for i in 0..=toks.len() - w {
                let o = chart.o(i, i + w);
                let a = crate::logspace::log_einsum_exp(g.log_left.view(), o);
                let b = crate::logspace::log_einsum_exp(g.log_right.view(), o);
                for (x, y) in chart.a(i, i + w).iter().zip(&a) {
                    assert!((x - y).abs() < 1e-12);
                }
                for (x, y) in chart.b(i, i + w).iter().zip(&b) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
