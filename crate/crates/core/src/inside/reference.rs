use super::{check_sentence, InsideChart};
use crate::grammar::SimpleGrammar;
use crate::logspace::{logsumexp, NEG_INF};
use crate::Result;

/// `log sum_B exp(table[a, B] + o[B])` for every row `a`, element by element.
fn project(table: &ndarray::Array2<f64>, o: &[f64], out: &mut [f64]) {
    let mut terms = vec![0.0; o.len()];
    for (a, dst) in out.iter_mut().enumerate() {
        for (t, (w, x)) in terms.iter_mut().zip(table.row(a).iter().zip(o)) {
            *t = w + x;
        }
        *dst = logsumexp(&terms);
    }
}

/// Inside pass with plain per-element log-sum-exp and an explicit
/// per-symbol maximum over split points. Serial and bit-reproducible.
pub fn inside_reference(g: &SimpleGrammar, tokens: &[usize]) -> Result<InsideChart> {
    check_sentence(g, tokens)?;
    let l = tokens.len();
    let n = g.dims.n_nt;
    let ns = g.dims.n_sym();
    let mut chart = InsideChart::empty(g.dims, l);
    let layout = chart.layout;

    for (i, &tok) in tokens.iter().enumerate() {
        let idx = layout.index(i, i + 1);
        for t in 0..g.dims.n_pt {
            chart.o[idx * ns + n + t] = g.log_emit[[t, tok]];
        }
    }

    let mut split = vec![0.0; l];
    for w in 1..=l {
        if w >= 2 {
            for i in 0..=l - w {
                let j = i + w;
                let idx = layout.index(i, j);
                for sym in 0..n {
                    for (slot, k) in split.iter_mut().zip(i + 1..j) {
                        *slot = chart.a[layout.index(i, k) * n + sym]
                            + chart.b[layout.index(k, j) * n + sym];
                    }
                    let terms = &split[..w - 1];
                    let x_star = terms.iter().copied().fold(NEG_INF, f64::max);
                    chart.o[idx * ns + sym] = if x_star == NEG_INF {
                        NEG_INF
                    } else {
                        x_star + terms.iter().map(|v| (v - x_star).exp()).sum::<f64>().ln()
                    };
                }
            }
        }
        if w < l {
            for i in 0..=l - w {
                let idx = layout.index(i, i + w);
                let o = chart.o[idx * ns..(idx + 1) * ns].to_vec();
                project(&g.log_left, &o, &mut chart.a[idx * n..(idx + 1) * n]);
                project(&g.log_right, &o, &mut chart.b[idx * n..(idx + 1) * n]);
            }
        }
    }

    let top = layout.index(0, l);
    let root_terms: Vec<f64> = (0..n)
        .map(|a| g.log_root[a] + chart.o[top * ns + a])
        .collect();
    chart.log_z = logsumexp(&root_terms);
    Ok(chart)
}
