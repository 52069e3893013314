//! Row-batched layers: inputs are `rows x d`, weights are `out x in`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::{Error, Result};

pub(crate) fn check_finite(x: &Array2<f64>, layer: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("activation of layer {layer}")))
    }
}

fn affine(x: &ArrayView2<f64>, w: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Array2<f64> {
    x.dot(&w.t()) + b
}

fn relu_mask(z: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dz = dy.clone();
    ndarray::Zip::from(&mut dz).and(z).for_each(|d, &zv| {
        if zv <= 0.0 {
            *d = 0.0;
        }
    });
    dz
}

/// Gradients of one affine map.
pub(crate) struct AffineGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// `y = relu(x W^T + b) + x`.
#[derive(Debug, Clone)]
pub(crate) struct ReluResidualCache {
    pub x: Array2<f64>,
    pub z: Array2<f64>,
}

pub(crate) fn relu_residual(x: Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> (Array2<f64>, ReluResidualCache) {
    let z = affine(&x.view(), &w, &b);
    let y = z.mapv(|v| v.max(0.0)) + &x;
    (y, ReluResidualCache { x, z })
}

pub(crate) fn relu_residual_backward(
    cache: &ReluResidualCache,
    w: ArrayView2<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, AffineGrad) {
    let dz = relu_mask(&cache.z, dy);
    let grad = AffineGrad {
        w: dz.t().dot(&cache.x),
        b: dz.sum_axis(Axis(0)),
    };
    (dy + &dz.dot(&w), grad)
}

/// `y = x + relu(x W1^T + b1) W2^T + b2`.
#[derive(Debug, Clone)]
pub(crate) struct ResBlockCache {
    pub x: Array2<f64>,
    pub z1: Array2<f64>,
    pub h: Array2<f64>,
}

pub(crate) struct ResBlockWeights<'a> {
    pub w1: ArrayView2<'a, f64>,
    pub b1: ArrayView1<'a, f64>,
    pub w2: ArrayView2<'a, f64>,
    pub b2: ArrayView1<'a, f64>,
}

pub(crate) fn res_block(x: Array2<f64>, p: &ResBlockWeights) -> (Array2<f64>, ResBlockCache) {
    let z1 = affine(&x.view(), &p.w1, &p.b1);
    let h = z1.mapv(|v| v.max(0.0));
    let y = affine(&h.view(), &p.w2, &p.b2) + &x;
    (y, ResBlockCache { x, z1, h })
}

pub(crate) fn res_block_backward(
    cache: &ResBlockCache,
    p: &ResBlockWeights,
    dy: &Array2<f64>,
) -> (Array2<f64>, AffineGrad, AffineGrad) {
    let g2 = AffineGrad {
        w: dy.t().dot(&cache.h),
        b: dy.sum_axis(Axis(0)),
    };
    let dh = dy.dot(&p.w2);
    let dz1 = relu_mask(&cache.z1, &dh);
    let g1 = AffineGrad {
        w: dz1.t().dot(&cache.x),
        b: dz1.sum_axis(Axis(0)),
    };
    (dy + &dz1.dot(&p.w1), g1, g2)
}
