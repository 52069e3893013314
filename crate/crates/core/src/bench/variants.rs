//! Forward + backward implementations compared by the benchmark.
//!
//! `logsumexp` evaluates every projection and split reduction element by
//! element and keeps an autodiff-style tape of all softmax weights. It
//! differentiates directly in log space. `logeinsumexp` turns projections
//! into matrix products with a scalar shift, but runs every element-wise
//! step as its own pass over materialized buffers, issues separate `L` and
//! `R` products, and tapes split weights and shifted inputs for the
//! backward pass. `flash` is [`FlashInside`].

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grammar::{GrammarGrad, SimpleGrammar};
use crate::inside::{check_sentence, gemm, FlashInside, Parallelism, SharedRows, SpanLayout};
use crate::logspace::{logsumexp, NEG_INF};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    LogSumExp,
    LogEinsumExp,
    Flash,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::LogSumExp, Variant::LogEinsumExp, Variant::Flash];

    pub fn name(self) -> &'static str {
        match self {
            Variant::LogSumExp => "logsumexp",
            Variant::LogEinsumExp => "logeinsumexp",
            Variant::Flash => "flash",
        }
    }

    /// Rough upper bound of the bytes one forward + backward holds at once.
    pub fn estimated_bytes(self, n_nt: usize, n_sym: usize, len: usize) -> usize {
        let spans = len * (len + 1) / 2;
        let chart = spans * (n_sym + 2 * n_nt) * 8;
        let grads = 2 * spans * n_nt * 8 + 6 * n_nt * n_sym * 8;
        let splits = (len + 1) * len * len.saturating_sub(1) / 6 * n_nt * 8;
        match self {
            Variant::Flash => chart + grads,
            Variant::LogEinsumExp => chart + grads + 3 * splits,
            Variant::LogSumExp => chart + grads + splits + 2 * spans * n_nt * (n_sym - n_nt).max(n_nt) * 8,
        }
    }

    /// `log_z` and its gradient with respect to every log-probability.
    pub fn run(self, g: &SimpleGrammar, tokens: &[usize], parallelism: Parallelism) -> Result<(f64, GrammarGrad)> {
        match self {
            Variant::Flash => {
                let engine = FlashInside::new(g).with_parallelism(parallelism);
                let chart = engine.forward(tokens)?;
                let (grad, _) = engine.backward(tokens, &chart)?;
                Ok((chart.log_z(), grad))
            }
            Variant::LogEinsumExp => log_einsum_exp_variant(g, tokens, parallelism),
            Variant::LogSumExp => log_sum_exp_variant(g, tokens, parallelism),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

fn rows_mut<F>(par: Parallelism, buf: &mut [f64], row: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if row == 0 {
        return;
    }
    match par {
        Parallelism::Serial => buf.chunks_mut(row).enumerate().for_each(|(i, r)| f(i, r)),
        Parallelism::Parallel => buf.par_chunks_mut(row).enumerate().for_each(|(i, r)| f(i, r)),
    }
}

struct Chart {
    layout: SpanLayout,
    o: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Chart {
    fn new(g: &SimpleGrammar, tokens: &[usize]) -> Self {
        let l = tokens.len();
        let layout = SpanLayout { len: l };
        let n = g.dims.n_nt;
        let ns = g.dims.n_sym();
        let mut o = vec![NEG_INF; layout.n_spans() * ns];
        for (i, &tok) in tokens.iter().enumerate() {
            let idx = layout.index(i, i + 1);
            for t in 0..g.dims.n_pt {
                o[idx * ns + n + t] = g.log_emit[[t, tok]];
            }
        }
        Chart {
            layout,
            o,
            a: vec![NEG_INF; layout.n_spans() * n],
            b: vec![NEG_INF; layout.n_spans() * n],
        }
    }

    fn root_softmax(&self, g: &SimpleGrammar) -> (f64, Vec<f64>) {
        let n = g.dims.n_nt;
        let ns = g.dims.n_sym();
        let top = self.layout.index(0, self.layout.len) * ns;
        let terms: Vec<f64> = (0..n).map(|a| g.log_root[a] + self.o[top + a]).collect();
        let log_z = logsumexp(&terms);
        let probs = terms
            .iter()
            .map(|&t| if t == NEG_INF { 0.0 } else { (t - log_z).exp() })
            .collect();
        (log_z, probs)
    }
}

fn live(g: &SimpleGrammar, w: usize) -> std::ops::Range<usize> {
    if w == 1 {
        g.dims.n_nt..g.dims.n_sym()
    } else {
        0..g.dims.n_nt
    }
}

fn not_derivable() -> Error {
    Error::NonFinite("sentence log-likelihood is -inf".into())
}

/// Scatters `g_o * weight` of each split onto the children of width-`w`
/// spans, reading weights from a `spans x (w - 1) x n` tape.
#[allow(clippy::too_many_arguments)]
fn split_backward_from_tape(
    layout: SpanLayout,
    n: usize,
    w: usize,
    g_o: &[f64],
    tape: &[f64],
    ga: &mut [f64],
    gb: &mut [f64],
    par: Parallelism,
) {
    let ga = SharedRows::new(ga);
    let gb = SharedRows::new(gb);
    let task = |i: usize| {
        let j = i + w;
        let go = &g_o[i * n..(i + 1) * n];
        for (kk, k) in (i + 1..j).enumerate() {
            let weights = &tape[(i * (w - 1) + kk) * n..(i * (w - 1) + kk + 1) * n];
            // SAFETY: child rows of distinct parents of one width are disjoint.
            let (ra, rb) = unsafe { (ga.row(layout.index(i, k), n), gb.row(layout.index(k, j), n)) };
            for sym in 0..n {
                let v = go[sym] * weights[sym];
                ra[sym] += v;
                rb[sym] += v;
            }
        }
    };
    match par {
        Parallelism::Serial => (0..layout.spans_of_width(w)).for_each(task),
        Parallelism::Parallel => (0..layout.spans_of_width(w)).into_par_iter().for_each(task),
    }
}

fn log_sum_exp_variant(g: &SimpleGrammar, tokens: &[usize], par: Parallelism) -> Result<(f64, GrammarGrad)> {
    check_sentence(g, tokens)?;
    let l = tokens.len();
    let n = g.dims.n_nt;
    let ns = g.dims.n_sym();
    let mut chart = Chart::new(g, tokens);
    let layout = chart.layout;
    let mut split_tape: Vec<Vec<f64>> = vec![Vec::new(); l + 1];
    let mut proj_tape: Vec<Vec<f64>> = vec![Vec::new(); l + 1];

    for w in 1..=l {
        let first = layout.width_offset(w);
        let spans = layout.spans_of_width(w);
        let blk = live(g, w);
        let m = blk.len();
        if w >= 2 {
            let mut tape = vec![0.0; spans * (w - 1) * n];
            let (done_o, rest_o) = chart.o.split_at_mut(first * ns);
            let _ = done_o;
            let (a, b) = (&chart.a, &chart.b);
            let o_rows = &mut rest_o[..spans * ns];
            let work = |i: usize, o: &mut [f64], t: &mut [f64]| {
                let j = i + w;
                let mut terms = vec![0.0; w - 1];
                for sym in 0..n {
                    for (slot, k) in terms.iter_mut().zip(i + 1..j) {
                        *slot = a[layout.index(i, k) * n + sym] + b[layout.index(k, j) * n + sym];
                    }
                    let v = logsumexp(&terms);
                    o[sym] = v;
                    for (kk, &term) in terms.iter().enumerate() {
                        t[kk * n + sym] = if v == NEG_INF { 0.0 } else { (term - v).exp() };
                    }
                }
            };
            match par {
                Parallelism::Serial => o_rows
                    .chunks_mut(ns)
                    .zip(tape.chunks_mut((w - 1) * n))
                    .enumerate()
                    .for_each(|(i, (o, t))| work(i, o, t)),
                Parallelism::Parallel => o_rows
                    .par_chunks_mut(ns)
                    .zip(tape.par_chunks_mut((w - 1) * n))
                    .enumerate()
                    .for_each(|(i, (o, t))| work(i, o, t)),
            }
            split_tape[w] = tape;
        }
        if w < l {
            let mut tape = vec![0.0; spans * 2 * n * m];
            let o = &chart.o;
            let a_rows = &mut chart.a[first * n..(first + spans) * n];
            let b_rows = &mut chart.b[first * n..(first + spans) * n];
            let blk = blk.clone();
            let work = |i: usize, a: &mut [f64], b: &mut [f64], t: &mut [f64]| {
                let ov = &o[(first + i) * ns + blk.start..(first + i) * ns + blk.end];
                let mut terms = vec![0.0; m];
                for (side, table, out) in [(0, &g.log_left, a), (1, &g.log_right, b)] {
                    for sym in 0..n {
                        for (c, slot) in terms.iter_mut().enumerate() {
                            *slot = table[[sym, blk.start + c]] + ov[c];
                        }
                        let v = logsumexp(&terms);
                        out[sym] = v;
                        let base = (side * n + sym) * m;
                        for (c, &term) in terms.iter().enumerate() {
                            t[base + c] = if v == NEG_INF { 0.0 } else { (term - v).exp() };
                        }
                    }
                }
            };
            match par {
                Parallelism::Serial => a_rows
                    .chunks_mut(n)
                    .zip(b_rows.chunks_mut(n))
                    .zip(tape.chunks_mut(2 * n * m))
                    .enumerate()
                    .for_each(|(i, ((a, b), t))| work(i, a, b, t)),
                Parallelism::Parallel => a_rows
                    .par_chunks_mut(n)
                    .zip(b_rows.par_chunks_mut(n))
                    .zip(tape.par_chunks_mut(2 * n * m))
                    .enumerate()
                    .for_each(|(i, ((a, b), t))| work(i, a, b, t)),
            }
            proj_tape[w] = tape;
        }
    }

    let (log_z, root) = chart.root_softmax(g);
    if log_z == NEG_INF {
        return Err(not_derivable());
    }
    let mut grad = GrammarGrad::zeros(g.dims);
    grad.root.iter_mut().zip(&root).for_each(|(d, &v)| *d = v);
    let mut ga = vec![0.0; layout.n_spans() * n];
    let mut gb = vec![0.0; layout.n_spans() * n];
    let mut g_o = root;
    for w in (1..=l).rev() {
        let first = layout.width_offset(w);
        let spans = layout.spans_of_width(w);
        let blk = live(g, w);
        let m = blk.len();
        if w < l {
            let tape = &proj_tape[w];
            let (ga_w, gb_w) = (&ga[first * n..(first + spans) * n], &gb[first * n..(first + spans) * n]);
            let mut next = vec![0.0; spans * m];
            rows_mut(par, &mut next, m, |i, out| {
                for side in 0..2 {
                    let gs = if side == 0 { ga_w } else { gb_w };
                    for sym in 0..n {
                        let gv = gs[i * n + sym];
                        let base = i * 2 * n * m + (side * n + sym) * m;
                        for (c, o) in out.iter_mut().enumerate() {
                            *o += gv * tape[base + c];
                        }
                    }
                }
            });
            for (side, table) in [(0, &mut grad.left), (1, &mut grad.right)] {
                let gs = if side == 0 { ga_w } else { gb_w };
                let mut rows = vec![0.0; n * m];
                rows_mut(par, &mut rows, m, |sym, row| {
                    for i in 0..spans {
                        let gv = gs[i * n + sym];
                        let base = i * 2 * n * m + (side * n + sym) * m;
                        for (c, r) in row.iter_mut().enumerate() {
                            *r += gv * tape[base + c];
                        }
                    }
                });
                let view = ArrayView2::from_shape((n, m), &rows).expect("exact length");
                let mut sub = table.slice_mut(s![.., blk.clone()]);
                sub += &view;
            }
            g_o = next;
        }
        if w >= 2 {
            split_backward_from_tape(layout, n, w, &g_o, &split_tape[w], &mut ga, &mut gb, par);
        } else {
            for (i, &tok) in tokens.iter().enumerate() {
                for t in 0..g.dims.n_pt {
                    grad.emit[[t, tok]] += g_o[i * m + t];
                }
            }
        }
    }
    Ok((log_z, grad))
}

fn log_einsum_exp_variant(g: &SimpleGrammar, tokens: &[usize], par: Parallelism) -> Result<(f64, GrammarGrad)> {
    check_sentence(g, tokens)?;
    let l = tokens.len();
    let n = g.dims.n_nt;
    let ns = g.dims.n_sym();
    let p_left = g.log_left.mapv(f64::exp);
    let p_right = g.log_right.mapv(f64::exp);
    let mut chart = Chart::new(g, tokens);
    let layout = chart.layout;
    let mut split_tape: Vec<Vec<f64>> = vec![Vec::new(); l + 1];
    let mut exp_tape: Vec<Vec<f64>> = vec![Vec::new(); l + 1];
    let mut shift_tape: Vec<Vec<f64>> = vec![Vec::new(); l + 1];

    for w in 1..=l {
        let first = layout.width_offset(w);
        let spans = layout.spans_of_width(w);
        let blk = live(g, w);
        let m = blk.len();
        if w >= 2 {
            let row = (w - 1) * n;
            let (a, b) = (&chart.a, &chart.b);
            let mut terms = vec![0.0; spans * row];
            rows_mut(par, &mut terms, row, |i, t| {
                for (kk, k) in (i + 1..i + w).enumerate() {
                    let la = layout.index(i, k) * n;
                    let rb = layout.index(k, i + w) * n;
                    for sym in 0..n {
                        t[kk * n + sym] = a[la + sym] + b[rb + sym];
                    }
                }
            });
            let mut max = vec![NEG_INF; spans * n];
            rows_mut(par, &mut max, n, |i, mx| {
                for kk in 0..w - 1 {
                    for sym in 0..n {
                        mx[sym] = mx[sym].max(terms[i * row + kk * n + sym]);
                    }
                }
            });
            let mut shifted = vec![0.0; spans * row];
            rows_mut(par, &mut shifted, row, |i, e| {
                for kk in 0..w - 1 {
                    for sym in 0..n {
                        let mx = max[i * n + sym];
                        e[kk * n + sym] = if mx == NEG_INF {
                            0.0
                        } else {
                            (terms[i * row + kk * n + sym] - mx).exp()
                        };
                    }
                }
            });
            drop(terms);
            let mut sum = vec![0.0; spans * n];
            rows_mut(par, &mut sum, n, |i, z| {
                for kk in 0..w - 1 {
                    for sym in 0..n {
                        z[sym] += shifted[i * row + kk * n + sym];
                    }
                }
            });
            let o_rows = &mut chart.o[first * ns..(first + spans) * ns];
            rows_mut(par, o_rows, ns, |i, o| {
                for sym in 0..n {
                    let mx = max[i * n + sym];
                    o[sym] = if mx == NEG_INF { NEG_INF } else { mx + sum[i * n + sym].ln() };
                }
            });
            rows_mut(par, &mut shifted, row, |i, e| {
                for kk in 0..w - 1 {
                    for sym in 0..n {
                        let z = sum[i * n + sym];
                        e[kk * n + sym] = if z > 0.0 { e[kk * n + sym] / z } else { 0.0 };
                    }
                }
            });
            split_tape[w] = shifted;
        }
        if w < l {
            let o = &chart.o;
            let mut shift = vec![NEG_INF; spans];
            rows_mut(par, &mut shift, 1, |i, x| {
                let row = &o[(first + i) * ns + blk.start..(first + i) * ns + blk.end];
                x[0] = row.iter().copied().fold(NEG_INF, f64::max);
            });
            let mut e = vec![0.0; spans * m];
            rows_mut(par, &mut e, m, |i, er| {
                let row = &o[(first + i) * ns + blk.start..(first + i) * ns + blk.end];
                if shift[i] != NEG_INF {
                    for (d, &v) in er.iter_mut().zip(row) {
                        *d = (v - shift[i]).exp();
                    }
                }
            });
            let e_view = ArrayView2::from_shape((spans, m), &e).expect("exact length");
            for (table, out) in [(&p_left, &mut chart.a), (&p_right, &mut chart.b)] {
                let mut prod = Array2::<f64>::zeros((spans, n));
                gemm(par, 1.0, &e_view, &table.slice(s![.., blk.clone()]).t(), 0.0, &mut prod.view_mut());
                let prod = prod.as_slice().expect("standard layout");
                rows_mut(par, &mut out[first * n..(first + spans) * n], n, |i, dst| {
                    for (d, &v) in dst.iter_mut().zip(&prod[i * n..(i + 1) * n]) {
                        *d = if v > 0.0 { shift[i] + v.ln() } else { NEG_INF };
                    }
                });
            }
            exp_tape[w] = e;
            shift_tape[w] = shift;
        }
    }

    let (log_z, root) = chart.root_softmax(g);
    if log_z == NEG_INF {
        return Err(not_derivable());
    }
    let mut grad = GrammarGrad::zeros(g.dims);
    grad.root.iter_mut().zip(&root).for_each(|(d, &v)| *d = v);
    let mut dl = Array2::<f64>::zeros((n, ns));
    let mut dr = Array2::<f64>::zeros((n, ns));
    let mut ga = vec![0.0; layout.n_spans() * n];
    let mut gb = vec![0.0; layout.n_spans() * n];
    let mut g_o = root;
    for w in (1..=l).rev() {
        let first = layout.width_offset(w);
        let spans = layout.spans_of_width(w);
        let blk = live(g, w);
        let m = blk.len();
        if w < l {
            let e_view = ArrayView2::from_shape((spans, m), &exp_tape[w]).expect("exact length");
            let shift = &shift_tape[w];
            let mut total = Array2::<f64>::zeros((spans, m));
            for (table, proj, gproj, dtable) in [
                (&p_left, &chart.a, &ga, &mut dl),
                (&p_right, &chart.b, &gb, &mut dr),
            ] {
                let mut scaled = vec![0.0; spans * n];
                rows_mut(par, &mut scaled, n, |i, out| {
                    for (sym, o) in out.iter_mut().enumerate() {
                        let idx = (first + i) * n + sym;
                        let (gv, p) = (gproj[idx], proj[idx]);
                        *o = if gv == 0.0 || p == NEG_INF { 0.0 } else { gv * (shift[i] - p).exp() };
                    }
                });
                let mv = ArrayView2::from_shape((spans, n), &scaled).expect("exact length");
                let mut part = Array2::<f64>::zeros((spans, m));
                gemm(par, 1.0, &mv, &table.slice(s![.., blk.clone()]), 0.0, &mut part.view_mut());
                total += &part;
                let mut dblk = dtable.slice_mut(s![.., blk.clone()]);
                gemm(par, 1.0, &mv.t(), &e_view, 1.0, &mut dblk);
            }
            total *= &e_view;
            g_o = total.into_raw_vec_and_offset().0;
        }
        if w >= 2 {
            split_backward_from_tape(layout, n, w, &g_o, &split_tape[w], &mut ga, &mut gb, par);
        } else {
            for (i, &tok) in tokens.iter().enumerate() {
                for t in 0..g.dims.n_pt {
                    grad.emit[[t, tok]] += g_o[i * m + t];
                }
            }
        }
    }
    grad.left = &p_left * &dl;
    grad.right = &p_right * &dr;
    Ok((log_z, grad))
}
