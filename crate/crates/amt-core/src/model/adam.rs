//! Adam with bias correction. Moment math runs in f64 regardless of the
//! parameter type, so one update is the same function everywhere it is
//! computed; moments are stored back at parameter precision.


use super::{Architecture, Real, TensorSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates plus the step counter they were
/// corrected for.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub step: u64,
    pub m: TensorSet<F>,
    pub v: TensorSet<F>,
}

impl<F: Real> AdamState<F> {
    pub fn new(arch: &Architecture) -> Self {
        AdamState { step: 0, m: TensorSet::zeros(arch), v: TensorSet::zeros(arch) }
    }
}

/// One update over a flat slice; `step` counts from 1.
pub fn adam_update<F: Real>(
    params: &mut [F],
    grads: &[F],
    m: &mut [F],
    v: &mut [F],
    hyper: &AdamHyper,
    step: u64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), m.len());
    assert_eq!(params.len(), v.len());
    let c1 = 1.0 - hyper.beta1.powi(step as i32);
    let c2 = 1.0 - hyper.beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i].to_f64().unwrap();
        let mi = hyper.beta1 * m[i].to_f64().unwrap() + (1.0 - hyper.beta1) * g;
        let vi = hyper.beta2 * v[i].to_f64().unwrap() + (1.0 - hyper.beta2) * g * g;
        m[i] = F::from_f64(mi).unwrap();
        v[i] = F::from_f64(vi).unwrap();
        let update = hyper.lr * (mi / c1) / ((vi / c2).sqrt() + hyper.eps);
        params[i] = F::from_f64(params[i].to_f64().unwrap() - update).unwrap();
    }
}

/// Applies [`adam_update`] across every tensor of the model.
pub fn adam_step<F: Real>(
    params: &mut TensorSet<F>,
    grads: &TensorSet<F>,
    state: &mut AdamState<F>,
    hyper: &AdamHyper,
) {
    state.step += 1;
    let step = state.step;
    let gs = grads.fields();
    for (((p, g), m), v) in params
        .fields_mut()
        .into_iter()
        .zip(gs)
        .zip(state.m.fields_mut())
        .zip(state.v.fields_mut())
    {
        adam_update(p, g, m, v, hyper, step);
    }
}
