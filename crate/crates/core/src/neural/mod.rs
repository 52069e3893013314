//! Trainable parameterizations that materialize a [`SimpleGrammar`]: the
//! symbol-embedding network and plain per-table logits, each with a
//! hand-written backward pass, plus Adam and parameter checkpoints.

mod adam;
mod checkpoint;
mod direct;
mod embedding;
mod layers;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState, DEFAULT_CLIP_NORM};
pub use checkpoint::{load_params, read_params, save_params, write_params, PARAM_MAGIC};
pub use direct::{backward_direct, forward_grammar_direct, DirectLogits, DEFAULT_DIRECT_INIT_STD};
pub use embedding::{backward_params, forward_grammar, init_params, EmbeddingCache, EmbeddingParams, DEFAULT_EMBED_DIM};

use ndarray::{ArrayD, ArrayView1, ArrayView2, Ix1, Ix2};

use crate::grammar::{GrammarDims, GrammarGrad, SimpleGrammar};
use crate::{Error, Result};

/// Gradient with respect to every parameter tensor, in parameter order.
pub type ParamGrad = Tensors;

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub value: ArrayD<f64>,
}

/// Ordered list of named tensors. Gradients and optimizer moments use the
/// same order and names as the parameters they belong to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tensors(pub Vec<Tensor>);

impl Tensors {
    pub fn push(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.0.push(Tensor {
            name: name.into(),
            value,
        });
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.0.iter_mut()
    }

    fn position(&self, name: &str) -> usize {
        self.0
            .iter()
            .position(|t| t.name == name)
            .unwrap_or_else(|| panic!("no tensor named {name}"))
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.0.iter().find(|t| t.name == name).map(|t| &t.value)
    }

    pub(crate) fn m2(&self, name: &str) -> ArrayView2<'_, f64> {
        self.0[self.position(name)]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matrix tensor")
    }

    pub(crate) fn v1(&self, name: &str) -> ArrayView1<'_, f64> {
        self.0[self.position(name)]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("vector tensor")
    }

    pub(crate) fn add_to(&mut self, name: &str, delta: ArrayD<f64>) {
        let i = self.position(name);
        self.0[i].value += &delta;
    }

    pub fn zeros_like(&self) -> Tensors {
        Tensors(
            self.0
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    value: ArrayD::zeros(t.value.raw_dim()),
                })
                .collect(),
        )
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.value.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.0 {
            t.value *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|t| t.value.iter().all(|x| x.is_finite()))
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_matches(&self, other: &Tensors) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Structural(format!(
                "expected {} tensors, got {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.0.iter().zip(&other.0) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Structural(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.0.iter().map(|t| t.value.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Neural,
    #[default]
    Direct,
}

impl std::str::FromStr for ParamKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neural" => Ok(ParamKind::Neural),
            "direct" => Ok(ParamKind::Direct),
            other => Err(Error::InvalidArgument(format!("unknown parameterization {other:?}"))),
        }
    }
}

/// Either parameterization behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Neural(EmbeddingParams),
    Direct(DirectLogits),
}

/// Forward intermediates kept for the backward pass of one materialization.
#[derive(Debug, Clone)]
pub enum ModelCache {
    Neural(Box<EmbeddingCache>),
    Direct,
}

impl Model {
    pub fn kind(&self) -> ParamKind {
        match self {
            Model::Neural(_) => ParamKind::Neural,
            Model::Direct(_) => ParamKind::Direct,
        }
    }

    pub fn dims(&self) -> GrammarDims {
        match self {
            Model::Neural(p) => p.dims,
            Model::Direct(p) => p.dims,
        }
    }

    pub fn tied(&self) -> bool {
        match self {
            Model::Neural(p) => p.tied,
            Model::Direct(p) => p.tied,
        }
    }

    pub fn embed_dim(&self) -> usize {
        match self {
            Model::Neural(p) => p.d,
            Model::Direct(_) => 0,
        }
    }

    pub fn tensors(&self) -> &Tensors {
        match self {
            Model::Neural(p) => &p.tensors,
            Model::Direct(p) => &p.tensors,
        }
    }

    pub fn tensors_mut(&mut self) -> &mut Tensors {
        match self {
            Model::Neural(p) => &mut p.tensors,
            Model::Direct(p) => &mut p.tensors,
        }
    }

    pub fn grammar(&self) -> Result<SimpleGrammar> {
        Ok(self.forward()?.0)
    }

    pub fn forward(&self) -> Result<(SimpleGrammar, ModelCache)> {
        match self {
            Model::Neural(p) => {
                let (g, cache) = p.forward_cached()?;
                Ok((g, ModelCache::Neural(Box::new(cache))))
            }
            Model::Direct(p) => Ok((forward_grammar_direct(p)?, ModelCache::Direct)),
        }
    }

    /// Pulls a gradient with respect to the grammar's log-probabilities
    /// back to the parameters.
    pub fn backward(&self, g: &SimpleGrammar, cache: &ModelCache, grad: &GrammarGrad) -> Result<Tensors> {
        match (self, cache) {
            (Model::Neural(p), ModelCache::Neural(c)) => p.backward_cached(g, c, grad),
            (Model::Direct(p), ModelCache::Direct) => backward_direct(p, g, grad),
            _ => Err(Error::InvalidArgument("cache belongs to another parameterization".into())),
        }
    }
}

/// Row-wise log-softmax of a score matrix.
pub(crate) fn log_softmax_rows(scores: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let lse = crate::logspace::logsumexp(row.as_slice().expect("standard layout"));
        row.mapv_inplace(|x| x - lse);
    }
    out
}

/// Backward of [`log_softmax_rows`]: `g - p * sum(g)` per row.
pub(crate) fn log_softmax_rows_backward(log_p: &ndarray::Array2<f64>, grad: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    let mut out = grad.clone();
    for (mut row, lp) in out.rows_mut().into_iter().zip(log_p.rows()) {
        let total = row.sum();
        for (x, l) in row.iter_mut().zip(lp) {
            *x -= l.exp() * total;
        }
    }
    out
}
