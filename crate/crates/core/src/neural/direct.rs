use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{log_softmax_rows, log_softmax_rows_backward, Tensors};
use crate::grammar::{GrammarDims, GrammarGrad, SimpleGrammar};
use crate::{Error, Result};

pub const DEFAULT_DIRECT_INIT_STD: f64 = 1.0;

/// Unnormalized scores with the shapes of the grammar tables; each row is
/// normalized by a softmax. Tensors are `root`, `left`, `right` (absent
/// when tied) and `emit`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectLogits {
    pub dims: GrammarDims,
    pub tied: bool,
    pub tensors: Tensors,
}

impl DirectLogits {
    pub fn zeros(dims: GrammarDims, tied: bool) -> Self {
        Self::from_fn(dims, tied, || 0.0)
    }

    /// Scores drawn from `N(0, std^2)`, in tensor order.
    pub fn random(dims: GrammarDims, tied: bool, seed: u64, std: f64) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(format!("init std: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::from_fn(dims, tied, || normal.sample(&mut rng)))
    }

    fn from_fn(dims: GrammarDims, tied: bool, mut f: impl FnMut() -> f64) -> Self {
        let mut t = Tensors::default();
        let mut shapes: Vec<(&str, Vec<usize>)> = vec![("root", vec![dims.n_nt]), ("left", vec![dims.n_nt, dims.n_sym()])];
        if !tied {
            shapes.push(("right", vec![dims.n_nt, dims.n_sym()]));
        }
        shapes.push(("emit", vec![dims.n_pt, dims.vocab_size]));
        for (name, shape) in shapes {
            t.push(name, ArrayD::from_shape_fn(IxDyn(&shape), |_| f()));
        }
        DirectLogits { dims, tied, tensors: t }
    }

    pub fn check_shapes(&self) -> Result<()> {
        DirectLogits::zeros(self.dims, self.tied).tensors.check_matches(&self.tensors)
    }
}

/// Row softmax of every score table.
pub fn forward_grammar_direct(p: &DirectLogits) -> Result<SimpleGrammar> {
    let t = &p.tensors;
    let root = log_softmax_rows(&t.v1("root").to_owned().insert_axis(Axis(0)));
    let left = log_softmax_rows(&t.m2("left").to_owned());
    let right = if p.tied {
        left.clone()
    } else {
        log_softmax_rows(&t.m2("right").to_owned())
    };
    let emit = log_softmax_rows(&t.m2("emit").to_owned());
    let root: Array1<f64> = root.row(0).to_owned();
    if !root.iter().chain(&left).chain(&right).chain(&emit).all(|x| x.is_finite()) {
        return Err(Error::NonFinite("direct logits".into()));
    }
    SimpleGrammar::from_tables(root, left, right, emit, p.tied)
}

/// Softmax backward of every table; a tied model receives the sum of the
/// left and right gradients.
pub fn backward_direct(p: &DirectLogits, g: &SimpleGrammar, grad: &GrammarGrad) -> Result<Tensors> {
    if grad.dims() != p.dims {
        return Err(Error::Structural(format!(
            "gradient dims {:?} do not match parameter dims {:?}",
            grad.dims(),
            p.dims
        )));
    }
    let mut out = p.tensors.zeros_like();
    let root = log_softmax_rows_backward(
        &g.log_root.clone().insert_axis(Axis(0)),
        &grad.root.clone().insert_axis(Axis(0)),
    );
    out.add_to("root", root.row(0).to_owned().into_dyn());
    if p.tied {
        let total: Array2<f64> = &grad.left + &grad.right;
        out.add_to("left", log_softmax_rows_backward(&g.log_left, &total).into_dyn());
    } else {
        out.add_to("left", log_softmax_rows_backward(&g.log_left, &grad.left).into_dyn());
        out.add_to("right", log_softmax_rows_backward(&g.log_right, &grad.right).into_dyn());
    }
    out.add_to("emit", log_softmax_rows_backward(&g.log_emit, &grad.emit).into_dyn());
    Ok(out)
}
