//! Log-space arithmetic shared by the inside engines and the oracles.

use ndarray::ArrayView2;

pub const NEG_INF: f64 = f64::NEG_INFINITY;

/// `log(exp(a) + exp(b))` without overflow; `-inf` is the additive identity.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Two-pass log-sum-exp. Returns `-inf` for an empty or all `-inf` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = max_of(xs);
    if max == NEG_INF {
        return NEG_INF;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

#[inline]
pub fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(NEG_INF, f64::max)
}

/// Softmax of `xs` as probabilities; an all `-inf` input yields all zeros.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = logsumexp(xs);
    if lse == NEG_INF {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

/// Log-softmax of `xs`.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = logsumexp(xs);
    xs.iter().map(|&x| x - lse).collect()
}

/// Computes `log(exp(log_weights) . exp(o))` with a single scalar shift
/// `x = max(o)`: `x + log(W exp(o - x))`.
///
/// The shift makes the bulk of the work one matrix-vector product in
/// probability space. Rows with no reachable mass are `-inf`; an all `-inf`
/// input produces an all `-inf` output.
pub fn log_einsum_exp(log_weights: ArrayView2<'_, f64>, o: &[f64]) -> Vec<f64> {
    assert_eq!(
        log_weights.ncols(),
        o.len(),
        "log_einsum_exp: weight columns must match the input length"
    );
    let shift = max_of(o);
    if shift == NEG_INF {
        return vec![NEG_INF; log_weights.nrows()];
    }
    let scaled: Vec<f64> = o.iter().map(|&x| (x - shift).exp()).collect();
    log_weights
        .rows()
        .into_iter()
        .map(|row| {
            let mass: f64 = row
                .iter()
                .zip(&scaled)
                .map(|(&lw, &e)| if e == 0.0 { 0.0 } else { lw.exp() * e })
                .sum();
            if mass > 0.0 {
                shift + mass.ln()
            } else {
                NEG_INF
            }
        })
        .collect()
}
