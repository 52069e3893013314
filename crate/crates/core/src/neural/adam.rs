use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use super::Tensors;
use crate::{Error, Result};

pub const DEFAULT_CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.002,
            beta1: 0.75,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per tensor, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<ArrayD<f64>>,
    pub v: Vec<ArrayD<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &Tensors) -> Self {
        let zeros: Vec<ArrayD<f64>> = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients are an error and
/// leave parameters and state untouched.
pub fn adam_step(params: &mut Tensors, grads: &Tensors, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    params.check_matches(grads)?;
    if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.value.shape()) {
        return Err(Error::Structural("optimizer state does not match parameters".into()));
    }
    if let Some(bad) = grads.iter().find(|g| g.value.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite(format!("gradient of {}", bad.name)));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        Zip::from(&mut p.value)
            .and(&g.value)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            });
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut Tensors, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn scalar(x: f64) -> Tensors {
        let mut t = Tensors::default();
        t.push("p", ArrayD::from_elem(IxDyn(&[1]), x));
        t
    }

    fn value(t: &Tensors) -> f64 {
        t.iter().next().unwrap().value[[0]]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(0.3);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &scalar(0.0), &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(value(&p), 0.3);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &scalar(1.0), &mut s, &AdamConfig::default()).unwrap();
        assert!((value(&p) + 0.002).abs() < 1e-10);
    }

    #[test]
    fn two_step_trace() {
        // g = 0.5 both steps: m1 = 0.125, v1 = 0.00025, m2 = 0.21875,
        // v2 = 0.00049975; corrected m = 0.5, v = 0.25 at both steps.
        let cfg = AdamConfig::default();
        let mut p = scalar(1.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &scalar(0.5), &mut s, &cfg).unwrap();
        adam_step(&mut p, &scalar(0.5), &mut s, &cfg).unwrap();
        let step = 0.002 * 0.5 / (0.5 + 1e-8);
        assert!((value(&p) - (1.0 - 2.0 * step)).abs() < 1e-12);
        assert!((s.m[0][[0]] - 0.21875).abs() < 1e-15);
        assert!((s.v[0][[0]] - 0.00049975).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &scalar(f64::NAN), &mut s, &AdamConfig::default()).is_err());
        assert_eq!(s.t, 0);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = scalar(10.0);
        assert_eq!(clip_grad_norm(&mut g, 5.0), 10.0);
        assert!((value(&g) - 5.0).abs() < 1e-15);
    }
}
