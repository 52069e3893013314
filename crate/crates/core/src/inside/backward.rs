use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;

use super::flash::{gemm, FlashInside};
use super::{check_sentence, InsideChart, MarginalTable, Parallelism};
use crate::grammar::{GrammarGrad, SimpleGrammar};
use crate::logspace::NEG_INF;
use crate::{Error, Result};

/// Gradient buffer shared across span tasks. Tasks for the spans of one
/// width write to pairwise disjoint rows so no two threads touch the same
/// element.
pub(crate) struct SharedRows {
    ptr: *mut f64,
    len: usize,
}

unsafe impl Send for SharedRows {}
unsafe impl Sync for SharedRows {}

impl SharedRows {
    pub(crate) fn new(buf: &mut [f64]) -> Self {
        SharedRows {
            ptr: buf.as_mut_ptr(),
            len: buf.len(),
        }
    }

    /// # Safety
    /// No other live reference may overlap `row * width .. (row + 1) * width`.
    #[allow(clippy::mut_from_ref)]
    pub(crate) unsafe fn row(&self, row: usize, width: usize) -> &mut [f64] {
        assert!((row + 1) * width <= self.len);
        std::slice::from_raw_parts_mut(self.ptr.add(row * width), width)
    }
}

/// Minimum number of span rows batched into one `dP += M^T E` product.
const FLUSH_ROWS: usize = 128;

/// `E` and `M` rows of nonterminal-block spans awaiting their `dP` update.
/// Batching them turns many products with a tiny inner dimension into a
/// few efficient ones while keeping only `FLUSH_ROWS` rows alive.
#[derive(Default)]
struct PendingOuter {
    e: Vec<f64>,
    m: Vec<f64>,
}

impl PendingOuter {
    fn flush(&mut self, parallelism: Parallelism, n: usize, dp: &mut Array2<f64>) {
        if self.e.is_empty() {
            return;
        }
        let rows = self.m.len() / (2 * n);
        let e = ArrayView2::from_shape((rows, n), &self.e).expect("exact length");
        let m = ArrayView2::from_shape((rows, 2 * n), &self.m).expect("exact length");
        gemm(parallelism, 1.0, &m.t(), &e, 1.0, &mut dp.slice_mut(s![.., ..n]));
        self.e.clear();
        self.m.clear();
    }
}

impl FlashInside<'_> {
    /// Reverse sweep over widths. Split weights and projection softmaxes are
    /// recomputed from `o`, `a`, `b`; nothing else from the forward pass is
    /// needed.
    pub fn backward(&self, tokens: &[usize], chart: &InsideChart) -> Result<(GrammarGrad, MarginalTable)> {
        let g = self.grammar;
        check_chart(g, tokens, chart)?;
        let l = tokens.len();
        let n = g.dims.n_nt;
        let ns = g.dims.n_sym();
        let layout = chart.layout;
        let log_z = chart.log_z;

        let mut grad = GrammarGrad::zeros(g.dims);
        let mut marginals = MarginalTable::zeros(l);
        let mut ga = vec![0.0; layout.n_spans() * n];
        let mut gb = vec![0.0; layout.n_spans() * n];
        let mut dp = Array2::<f64>::zeros((2 * n, ns));
        let mut pending = PendingOuter::default();

        let top = chart.o(0, l);
        let mut g_o: Vec<f64> = (0..n)
            .map(|a| {
                if top[a] == NEG_INF {
                    0.0
                } else {
                    (g.log_root[a] + top[a] - log_z).exp()
                }
            })
            .collect();
        for (dst, v) in grad.root.iter_mut().zip(&g_o) {
            *dst = *v;
        }

        for w in (1..=l).rev() {
            let spans = layout.spans_of_width(w);
            let live = self.live_block(w);
            let m = live.len();
            if w < l {
                g_o = self.project_backward(chart, w, &ga, &gb, &mut dp, &mut pending);
            }
            for i in 0..spans {
                let total: f64 = g_o[i * m..(i + 1) * m].iter().sum();
                marginals.set(i, i + w, total);
            }
            if w >= 2 {
                self.split_backward(chart, w, &g_o, &mut ga, &mut gb);
            } else {
                for (i, &tok) in tokens.iter().enumerate() {
                    for t in 0..g.dims.n_pt {
                        grad.emit[[t, tok]] += g_o[i * m + t];
                    }
                }
            }
        }

        pending.flush(self.parallelism, n, &mut dp);
        let chain = |dst: &mut f64, &p: &f64, &d: &f64| *dst = if p == 0.0 { 0.0 } else { p * d };
        ndarray::Zip::from(&mut grad.left)
            .and(self.stacked.slice(s![..n, ..]))
            .and(dp.slice(s![..n, ..]))
            .for_each(chain);
        ndarray::Zip::from(&mut grad.right)
            .and(self.stacked.slice(s![n.., ..]))
            .and(dp.slice(s![n.., ..]))
            .for_each(chain);
        Ok((grad, marginals))
    }

    /// Pulls `d log_z / d [a | b]` of every width-`w` span back to its `o`
    /// over the live block, accumulating `d log_z / d P` into `dp` (with `P`
    /// the stacked table in probability space).
    fn project_backward(
        &self,
        chart: &InsideChart,
        w: usize,
        ga: &[f64],
        gb: &[f64],
        dp: &mut Array2<f64>,
        pending: &mut PendingOuter,
    ) -> Vec<f64> {
        let n = self.grammar.dims.n_nt;
        let ns = self.grammar.dims.n_sym();
        let layout = chart.layout;
        let spans = layout.spans_of_width(w);
        let first = layout.width_offset(w);
        let live = self.live_block(w);
        let m = live.len();

        // E = exp(o - x), M = g * exp(x - [a | b]) so that
        // d/do = E * (M P) and d/dP = M^T E.
        let mut e = vec![0.0; spans * m];
        let mut mm = vec![0.0; spans * 2 * n];
        let fill = |r: usize, e_row: &mut [f64], m_row: &mut [f64]| {
            let idx = first + r;
            let o = &chart.o[idx * ns + live.start..idx * ns + live.end];
            let x = o.iter().copied().fold(NEG_INF, f64::max);
            if x == NEG_INF {
                return;
            }
            for (dst, &v) in e_row.iter_mut().zip(o) {
                *dst = (v - x).exp();
            }
            let (ma, mb) = m_row.split_at_mut(n);
            let rows = [(ma, &chart.a, ga), (mb, &chart.b, gb)];
            for (dst, proj, gproj) in rows {
                let proj = &proj[idx * n..(idx + 1) * n];
                let gproj = &gproj[idx * n..(idx + 1) * n];
                for ((d, &p), &gv) in dst.iter_mut().zip(proj).zip(gproj) {
                    *d = if gv == 0.0 || p == NEG_INF { 0.0 } else { gv * (x - p).exp() };
                }
            }
        };
        match self.parallelism {
            Parallelism::Serial => e
                .chunks_mut(m)
                .zip(mm.chunks_mut(2 * n))
                .enumerate()
                .for_each(|(r, (er, mr))| fill(r, er, mr)),
            Parallelism::Parallel => e
                .par_chunks_mut(m)
                .zip(mm.par_chunks_mut(2 * n))
                .enumerate()
                .for_each(|(r, (er, mr))| fill(r, er, mr)),
        }

        let e_view = ArrayView2::from_shape((spans, m), &e).expect("exact length");
        let m_view = ArrayView2::from_shape((spans, 2 * n), &mm).expect("exact length");
        let p = self.stacked.slice(s![.., live.clone()]);
        let mut g_o = Array2::<f64>::zeros((spans, m));
        gemm(self.parallelism, 1.0, &m_view, &p, 0.0, &mut g_o.view_mut());
        g_o *= &e_view;
        if w == 1 {
            let mut dp_blk = dp.slice_mut(s![.., live]);
            gemm(self.parallelism, 1.0, &m_view.t(), &e_view, 1.0, &mut dp_blk);
        } else {
            pending.e.extend_from_slice(&e);
            pending.m.extend_from_slice(&mm);
            if pending.m.len() >= FLUSH_ROWS * 2 * n {
                pending.flush(self.parallelism, n, dp);
            }
        }
        g_o.into_raw_vec_and_offset().0
    }

    /// Distributes `d log_z / d o` of width-`w` spans onto the `a` of left
    /// children and `b` of right children with recomputed split weights
    /// `exp(a[i,k] + b[k,j] - o[i,j])`.
    fn split_backward(&self, chart: &InsideChart, w: usize, g_o: &[f64], ga: &mut [f64], gb: &mut [f64]) {
        let n = self.grammar.dims.n_nt;
        let l = chart.len();
        let layout = chart.layout;
        let ga = SharedRows::new(ga);
        let gb = SharedRows::new(gb);
        let task = |i: usize| {
            let j = i + w;
            let go = &g_o[i * n..(i + 1) * n];
            // Underivable parents get o = +inf so their weights vanish.
            let o: Vec<f64> = chart.o(i, j)[..n]
                .iter()
                .map(|&v| if v == NEG_INF { f64::INFINITY } else { v })
                .collect();
            for k in i + 1..j {
                let a = chart.a(i, k);
                let b = chart.b(k, j);
                // SAFETY: for a fixed width each (i, k) with i < k < i + w
                // and each (k, j) belongs to exactly one parent span i.
                let (ga_row, gb_row) = unsafe { (ga.row(layout.index(i, k), n), gb.row(layout.index(k, j), n)) };
                for sym in 0..n {
                    let weight = go[sym] * (a[sym] + b[sym] - o[sym]).exp();
                    ga_row[sym] += weight;
                    gb_row[sym] += weight;
                }
            }
        };
        match self.parallelism {
            Parallelism::Serial => (0..=l - w).for_each(task),
            Parallelism::Parallel => (0..=l - w).into_par_iter().for_each(task),
        }
    }
}

fn check_chart(g: &SimpleGrammar, tokens: &[usize], chart: &InsideChart) -> Result<()> {
    check_sentence(g, tokens)?;
    let mismatch = |what: &str| Err(Error::InvalidArgument(format!("chart does not belong to this sentence: {what}")));
    if chart.len() != tokens.len() {
        return mismatch("length");
    }
    if chart.n_nt != g.dims.n_nt || chart.n_sym != g.dims.n_sym() {
        return mismatch("symbol counts");
    }
    let n = g.dims.n_nt;
    for (i, &tok) in tokens.iter().enumerate() {
        let o = chart.o(i, i + 1);
        if (0..g.dims.n_pt).any(|t| o[n + t].to_bits() != g.log_emit[[t, tok]].to_bits()) {
            return mismatch("leaf scores");
        }
    }
    if !chart.log_z.is_finite() {
        return Err(Error::NonFinite(format!("sentence log-likelihood is {}", chart.log_z)));
    }
    Ok(())
}

/// Gradient of `log_z` with respect to every log-probability entry, plus the
/// span posteriors. `chart` may come from either forward engine.
pub fn inside_backward(g: &SimpleGrammar, tokens: &[usize], chart: &InsideChart) -> Result<(GrammarGrad, MarginalTable)> {
    FlashInside::new(g).backward(tokens, chart)
}
