use ndarray::{s, Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{
    check_finite, relu_residual, relu_residual_backward, res_block, res_block_backward, AffineGrad,
    ReluResidualCache, ResBlockCache, ResBlockWeights,
};
use super::{log_softmax_rows, log_softmax_rows_backward, Tensors};
use crate::grammar::{GrammarDims, GrammarGrad, SimpleGrammar};
use crate::{Error, Result};

pub const DEFAULT_EMBED_DIM: usize = 512;

/// Symbol-embedding parameterization.
///
/// `w_sym` row 0 is the start symbol, rows `1..1 + n_nt` the nonterminals
/// and the remaining rows the preterminals. Root scores are
/// `u_A . f1(w_S)`, left scores `f2(w_B) . f3(w_A)`, right scores
/// `f4(w_C) . f3(w_A)` and emission scores `u_w . f5(w_T)`, each normalized
/// by a softmax. `f1`, `f5` are two residual blocks
/// `x + W2 relu(W1 x + b1) + b2`; `f2`, `f3`, `f4` are `relu(W x + b) + x`.
/// With `tied`, `f4` is absent and the right table is the left table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    pub dims: GrammarDims,
    pub d: usize,
    pub tied: bool,
    pub tensors: Tensors,
}


fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ArrayD<f64> {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    ArrayD::from_shape_fn(IxDyn(&[rows, cols]), |_| normal.sample(rng))
}

fn embedding(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> ArrayD<f64> {
    let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
    ArrayD::from_shape_fn(IxDyn(&[rows, d]), |_| normal.sample(rng))
}

/// Xavier-normal weights, zero biases, `N(0, 1/d)` embeddings.
pub fn init_params(dims: GrammarDims, d: usize, seed: u64, tied: bool) -> Result<EmbeddingParams> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("embedding dimension {d} must be at least 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensors::default();
    t.push("w_sym", embedding(&mut rng, 1 + dims.n_sym(), d));
    t.push("u_nt", embedding(&mut rng, dims.n_nt, d));
    t.push("u_voc", embedding(&mut rng, dims.vocab_size, d));
    let bias = || ArrayD::zeros(IxDyn(&[d]));
    let res_net = |t: &mut Tensors, rng: &mut ChaCha8Rng, name: &str| {
        for block in 0..2 {
            t.push(format!("{name}.{block}.w1"), xavier(rng, d, d));
            t.push(format!("{name}.{block}.b1"), bias());
            t.push(format!("{name}.{block}.w2"), xavier(rng, d, d));
            t.push(format!("{name}.{block}.b2"), bias());
        }
    };
    res_net(&mut t, &mut rng, "f1");
    let heads: &[&str] = if tied { &["f2", "f3"] } else { &["f2", "f3", "f4"] };
    for head in heads {
        t.push(format!("{head}.w"), xavier(&mut rng, d, d));
        t.push(format!("{head}.b"), bias());
    }
    res_net(&mut t, &mut rng, "f5");
    Ok(EmbeddingParams { dims, d, tied, tensors: t })
}

/// Forward intermediates of [`EmbeddingParams::forward_cached`].
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    f1: [ResBlockCache; 2],
    f1_out: Array2<f64>,
    f2: ReluResidualCache,
    h2: Array2<f64>,
    f3: ReluResidualCache,
    h3: Array2<f64>,
    f4: Option<(ReluResidualCache, Array2<f64>)>,
    f5: [ResBlockCache; 2],
    h5: Array2<f64>,
}

impl EmbeddingParams {
    fn block(&self, net: &str, i: usize) -> ResBlockWeights<'_> {
        ResBlockWeights {
            w1: self.tensors.m2(&format!("{net}.{i}.w1")),
            b1: self.tensors.v1(&format!("{net}.{i}.b1")),
            w2: self.tensors.m2(&format!("{net}.{i}.w2")),
            b2: self.tensors.v1(&format!("{net}.{i}.b2")),
        }
    }

    fn res_net(&self, net: &str, x: Array2<f64>) -> Result<(Array2<f64>, [ResBlockCache; 2])> {
        let (y0, c0) = res_block(x, &self.block(net, 0));
        check_finite(&y0, &format!("{net}.0"))?;
        let (y1, c1) = res_block(y0, &self.block(net, 1));
        check_finite(&y1, &format!("{net}.1"))?;
        Ok((y1, [c0, c1]))
    }

    fn head(&self, name: &str, x: Array2<f64>) -> Result<(Array2<f64>, ReluResidualCache)> {
        let (y, c) = relu_residual(
            x,
            self.tensors.m2(&format!("{name}.w")),
            self.tensors.v1(&format!("{name}.b")),
        );
        check_finite(&y, name)?;
        Ok((y, c))
    }

    pub fn check_shapes(&self) -> Result<()> {
        let reference = init_params(self.dims, self.d, 0, self.tied)?;
        reference.tensors.check_matches(&self.tensors)
    }

    pub fn forward_cached(&self) -> Result<(SimpleGrammar, EmbeddingCache)> {
        let n = self.dims.n_nt;
        let ns = self.dims.n_sym();
        let w = self.tensors.m2("w_sym");
        let (f1_out, f1) = self.res_net("f1", w.slice(s![0..1, ..]).to_owned())?;
        let (h2, f2) = self.head("f2", w.slice(s![1..1 + ns, ..]).to_owned())?;
        let (h3, f3) = self.head("f3", w.slice(s![1..1 + n, ..]).to_owned())?;
        let f4 = if self.tied {
            None
        } else {
            Some(self.head("f4", w.slice(s![1..1 + ns, ..]).to_owned())?)
        };
        let (h5, f5) = self.res_net("f5", w.slice(s![1 + n..1 + ns, ..]).to_owned())?;

        let root = log_softmax_rows(&f1_out.dot(&self.tensors.m2("u_nt").t()));
        let left = log_softmax_rows(&h3.dot(&h2.t()));
        let right = match &f4 {
            Some((h4, _)) => log_softmax_rows(&h3.dot(&h4.t())),
            None => left.clone(),
        };
        let emit = log_softmax_rows(&h5.dot(&self.tensors.m2("u_voc").t()));
        for (table, name) in [(&root, "root"), (&left, "left"), (&right, "right"), (&emit, "emit")] {
            check_finite(table, &format!("{name} softmax"))?;
        }
        let g = SimpleGrammar::from_tables(root.row(0).to_owned(), left, right, emit, self.tied)?;
        let cache = EmbeddingCache {
            f1,
            f1_out,
            f2,
            h2,
            f3,
            h3,
            f4: f4.map(|(h4, c)| (c, h4)),
            f5,
            h5,
        };
        Ok((g, cache))
    }

    fn put_affine(&self, out: &mut Tensors, name: &str, g: AffineGrad) {
        out.add_to(&format!("{name}.w"), g.w.into_dyn());
        out.add_to(&format!("{name}.b"), g.b.into_dyn());
    }

    fn res_net_backward(&self, net: &str, cache: &[ResBlockCache; 2], dy: &Array2<f64>, out: &mut Tensors) -> Array2<f64> {
        let mut d = dy.clone();
        for i in (0..2).rev() {
            let (dx, g1, g2) = res_block_backward(&cache[i], &self.block(net, i), &d);
            out.add_to(&format!("{net}.{i}.w1"), g1.w.into_dyn());
            out.add_to(&format!("{net}.{i}.b1"), g1.b.into_dyn());
            out.add_to(&format!("{net}.{i}.w2"), g2.w.into_dyn());
            out.add_to(&format!("{net}.{i}.b2"), g2.b.into_dyn());
            d = dx;
        }
        d
    }

    fn head_backward(&self, name: &str, cache: &ReluResidualCache, dy: &Array2<f64>, out: &mut Tensors) -> Array2<f64> {
        let (dx, g) = relu_residual_backward(cache, self.tensors.m2(&format!("{name}.w")), dy);
        self.put_affine(out, name, g);
        dx
    }

    pub fn backward_cached(&self, g: &SimpleGrammar, cache: &EmbeddingCache, grad: &GrammarGrad) -> Result<Tensors> {
        if grad.dims() != self.dims {
            return Err(Error::Structural(format!(
                "gradient dims {:?} do not match parameter dims {:?}",
                grad.dims(),
                self.dims
            )));
        }
        let n = self.dims.n_nt;
        let ns = self.dims.n_sym();
        let mut out = self.tensors.zeros_like();
        let mut d_w = Array2::<f64>::zeros((1 + ns, self.d));

        let log_root = g.log_root.clone().insert_axis(ndarray::Axis(0));
        let d_root = log_softmax_rows_backward(&log_root, &grad.root.clone().insert_axis(ndarray::Axis(0)));
        out.add_to("u_nt", d_root.t().dot(&cache.f1_out).into_dyn());
        let d_f1 = d_root.dot(&self.tensors.m2("u_nt"));
        let dx = self.res_net_backward("f1", &cache.f1, &d_f1, &mut out);
        d_w.slice_mut(s![0..1, ..]).scaled_add(1.0, &dx);

        let mut d_left = log_softmax_rows_backward(&g.log_left, &grad.left);
        let d_right = log_softmax_rows_backward(&g.log_right, &grad.right);
        let mut d_h3 = Array2::<f64>::zeros(cache.h3.raw_dim());
        match &cache.f4 {
            Some((f4, h4)) => {
                d_h3 += &d_right.dot(h4);
                let d_h4 = d_right.t().dot(&cache.h3);
                let dx = self.head_backward("f4", f4, &d_h4, &mut out);
                d_w.slice_mut(s![1..1 + ns, ..]).scaled_add(1.0, &dx);
            }
            None => d_left += &d_right,
        }
        d_h3 += &d_left.dot(&cache.h2);
        let d_h2 = d_left.t().dot(&cache.h3);
        let dx = self.head_backward("f2", &cache.f2, &d_h2, &mut out);
        d_w.slice_mut(s![1..1 + ns, ..]).scaled_add(1.0, &dx);
        let dx = self.head_backward("f3", &cache.f3, &d_h3, &mut out);
        d_w.slice_mut(s![1..1 + n, ..]).scaled_add(1.0, &dx);

        let d_emit = log_softmax_rows_backward(&g.log_emit, &grad.emit);
        out.add_to("u_voc", d_emit.t().dot(&cache.h5).into_dyn());
        let d_h5 = d_emit.dot(&self.tensors.m2("u_voc"));
        let dx = self.res_net_backward("f5", &cache.f5, &d_h5, &mut out);
        d_w.slice_mut(s![1 + n..1 + ns, ..]).scaled_add(1.0, &dx);

        out.add_to("w_sym", d_w.into_dyn());
        Ok(out)
    }
}

/// Materializes the grammar defined by `params`.
pub fn forward_grammar(params: &EmbeddingParams) -> Result<SimpleGrammar> {
    Ok(params.forward_cached()?.0)
}

/// Gradient of a loss with respect to every parameter tensor, given its
/// gradient with respect to the log-probability tables of
/// `forward_grammar(params)`.
pub fn backward_params(params: &EmbeddingParams, grad: &GrammarGrad) -> Result<Tensors> {
    let (g, cache) = params.forward_cached()?;
    params.backward_cached(&g, &cache, grad)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::validate_grammar;
    use crate::inside::inside_reference;

    fn dims() -> GrammarDims {
        GrammarDims::new(2, 2, 3).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(dims(), 8, 1, false).unwrap();
        let b = init_params(dims(), 8, 1, false).unwrap();
        assert_eq!(a, b);
        assert!(init_params(dims(), 1, 1, false).is_err());
    }

    #[test]
    fn xavier_std() {
        let p = init_params(GrammarDims::new(1, 1, 1).unwrap(), 512, 5, true).unwrap();
        let w = p.tensors.get("f2.w").unwrap();
        let mean = w.mean().unwrap();
        let std = (w.mapv(|x| (x - mean).powi(2)).mean().unwrap()).sqrt();
        let target = (2.0f64 / 1024.0).sqrt();
        assert!((std / target - 1.0).abs() < 0.2);
    }

    #[test]
    fn smoke_grammar_is_valid_and_usable() {
        let p = init_params(dims(), 8, 1, false).unwrap();
        let g = forward_grammar(&p).unwrap();
        assert!(validate_grammar(&g, 1e-6).unwrap().is_valid());
        assert!(inside_reference(&g, &[0, 1]).unwrap().log_z().is_finite());
    }

    #[test]
    fn tied_tables_are_bitwise_equal() {
        let p = init_params(dims(), 8, 3, true).unwrap();
        let g = forward_grammar(&p).unwrap();
        assert!(g.tied);
        assert_eq!(g.log_left, g.log_right);
    }

    #[test]
    fn zero_grammar_grad_gives_zero_param_grad() {
        let p = init_params(dims(), 8, 2, false).unwrap();
        let grad = backward_params(&p, &GrammarGrad::zeros(dims())).unwrap();
        assert_eq!(grad.global_norm(), 0.0);
    }

    #[test]
    fn rejects_mismatched_grad() {
        let p = init_params(dims(), 8, 2, false).unwrap();
        let other = GrammarGrad::zeros(GrammarDims::new(3, 2, 3).unwrap());
        assert!(backward_params(&p, &other).is_err());
    }
}
