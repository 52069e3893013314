#![allow(dead_code)]

use flashpcfg::grammar::{random_grammar, GrammarDims, Table};
use flashpcfg::inside::inside_reference;
use flashpcfg::logspace::log_softmax;
use flashpcfg::neural::Model;
use flashpcfg::{GrammarGrad, SimpleGrammar};
use ndarray::Array2;
use rand::Rng;

/// `|a - b| <= rel * max(|a|, |b|) + floor`.
pub fn close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + floor
}

/// Random grammar with at most `max_sym` symbols and `max_vocab` words,
/// plus a sentence of length `2..=max_len`.
pub fn random_instance<R: Rng>(rng: &mut R, max_sym: usize, max_vocab: usize, max_len: usize) -> (SimpleGrammar, Vec<usize>) {
    let n_nt = rng.random_range(1..max_sym);
    let n_pt = rng.random_range(1..=max_sym - n_nt);
    let vocab = rng.random_range(1..=max_vocab);
    let conc = [0.3, 1.0, 3.0][rng.random_range(0..3)];
    let g = random_grammar(GrammarDims::new(n_nt, n_pt, vocab).unwrap(), rng.random(), conc).unwrap();
    let len = rng.random_range(2..=max_len);
    let tokens = (0..len).map(|_| rng.random_range(0..vocab)).collect();
    (g, tokens)
}

pub fn log_z(g: &SimpleGrammar, tokens: &[usize]) -> f64 {
    inside_reference(g, tokens).unwrap().log_z()
}

fn table_mut(g: &mut SimpleGrammar, table: Table) -> &mut Array2<f64> {
    match table {
        Table::Left => &mut g.log_left,
        Table::Right => &mut g.log_right,
        Table::Emit => &mut g.log_emit,
        Table::Root => unreachable!(),
    }
}

/// Moves the logit of one entry by `h` and renormalizes its row.
fn nudge(g: &SimpleGrammar, table: Table, row: usize, col: usize, h: f64) -> SimpleGrammar {
    let mut out = g.clone();
    let renorm = |values: &mut [f64]| {
        values[col] += h;
        let r = log_softmax(values);
        values.copy_from_slice(&r);
    };
    match table {
        Table::Root => renorm(out.log_root.as_slice_mut().unwrap()),
        t => {
            let m = table_mut(&mut out, t);
            let mut r = m.row_mut(row);
            renorm(r.as_slice_mut().unwrap());
        }
    }
    out
}

/// Central differences of `log_z` along row-renormalized logit moves; the
/// result is comparable with `GrammarGrad::projected`.
pub fn finite_difference_grad(g: &SimpleGrammar, tokens: &[usize], h: f64) -> GrammarGrad {
    let mut fd = GrammarGrad::zeros(g.dims);
    let diff = |t: Table, r: usize, c: usize| {
        (log_z(&nudge(g, t, r, c, h), tokens) - log_z(&nudge(g, t, r, c, -h), tokens)) / (2.0 * h)
    };
    for c in 0..g.dims.n_nt {
        fd.root[c] = diff(Table::Root, 0, c);
    }
    for (t, m) in [(Table::Left, &mut fd.left), (Table::Right, &mut fd.right), (Table::Emit, &mut fd.emit)] {
        for ((r, c), v) in m.indexed_iter_mut() {
            *v = diff(t, r, c);
        }
    }
    fd
}

/// Entries of `analytic` that disagree with `fd`, as `(table, index, a, f)`.
pub fn grad_mismatches(analytic: &GrammarGrad, fd: &GrammarGrad, rel: f64, floor: f64) -> Vec<(String, usize, f64, f64)> {
    let mut bad = Vec::new();
    let pairs = [
        ("root", analytic.root.as_slice().unwrap(), fd.root.as_slice().unwrap()),
        ("left", analytic.left.as_slice().unwrap(), fd.left.as_slice().unwrap()),
        ("right", analytic.right.as_slice().unwrap(), fd.right.as_slice().unwrap()),
        ("emit", analytic.emit.as_slice().unwrap(), fd.emit.as_slice().unwrap()),
    ];
    for (name, a, f) in pairs {
        for (i, (&x, &y)) in a.iter().zip(f).enumerate() {
            if !close(x, y, rel, floor) {
                bad.push((name.to_string(), i, x, y));
            }
        }
    }
    bad
}

/// Largest violation of `|a - f| <= rel * max(|a|, |f|) + floor` over every
/// parameter of `model`, for the objective `log_z(tokens)`.
pub fn model_fd_violation(model: &Model, tokens: &[usize], h: f64, rel: f64, floor: f64) -> f64 {
    let (g, cache) = model.forward().unwrap();
    let chart = flashpcfg::inside::inside_flash(&g, tokens).unwrap();
    let (grad, _) = flashpcfg::inside::inside_backward(&g, tokens, &chart).unwrap();
    let analytic = model.backward(&g, &cache, &grad).unwrap();
    let objective = |m: &Model| log_z(&m.grammar().unwrap(), tokens);
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for (ti, tensor) in model.tensors().iter().enumerate() {
        let a = analytic.iter().nth(ti).unwrap();
        assert_eq!(a.name, tensor.name);
        for (k, &base) in tensor.value.iter().enumerate() {
            let set = |p: &mut Model, v: f64| {
                let t = p.tensors_mut().iter_mut().nth(ti).unwrap();
                *t.value.iter_mut().nth(k).unwrap() = v;
            };
            set(&mut probe, base + h);
            let up = objective(&probe);
            set(&mut probe, base - h);
            let down = objective(&probe);
            set(&mut probe, base);
            let f = (up - down) / (2.0 * h);
            let x = *a.value.iter().nth(k).unwrap();
            let allowed = rel * x.abs().max(f.abs()) + floor;
            worst = worst.max((x - f).abs() / allowed);
        }
    }
    worst
}

/// Probability that the fair-coin grammar yields `len` tokens:
/// `Catalan(len - 1) / 4^(len - 1)`.
pub fn coin_length_prob(len: usize) -> f64 {
    let mut p = 1.0;
    for k in 0..len - 1 {
        // C(k+1) / C(k) = 2 (2k + 1) / (k + 2)
        p *= 2.0 * (2 * k + 1) as f64 / (k + 2) as f64 / 4.0;
    }
    p
}
