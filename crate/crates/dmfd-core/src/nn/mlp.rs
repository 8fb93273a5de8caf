//! Dense network forward and backward passes.
//!
//! Inputs are batch-major flat slices (`batch * width`), which keeps hot
//! loops contiguous. The forward pass returns a cache of post-activation
//! values; both supported activations can recover their derivative from the
//! output alone, so no pre-activations are stored.

use super::{GradMap, MlpSpec, ParamSet};
use crate::tensor::{axpy_slice, dot, Tensor};

/// Values captured during a forward pass, sufficient for one backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    batch: usize,
    /// `acts[0]` is the input; `acts[i]` for `i >= 1` is the post-activation
    /// output of layer `i - 1`. Length equals the number of affine layers.
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Applies one affine layer: `y[b, o] = bias[o] + W[o, :] . x[b, :]`.
pub(crate) fn affine(w: &Tensor, b: &Tensor, x: &[f64], batch: usize, y: &mut Vec<f64>) {
    let out = w.shape()[0];
    let inp = w.shape()[1];
    debug_assert_eq!(x.len(), batch * inp);
    y.clear();
    y.reserve(batch * out);
    let wd = w.data();
    let bd = b.data();
    for bi in 0..batch {
        let xr = &x[bi * inp..(bi + 1) * inp];
        for o in 0..out {
            let wr = &wd[o * inp..(o + 1) * inp];
            y.push(bd[o] + dot(xr, wr));
        }
    }
}

/// Forward pass over a batch. `x` has length `batch * input_dim`; the output
/// has length `batch * spec.output_dim()`. The result is a pure function of
/// `(params, x)`: same inputs give bit-identical outputs.
pub fn mlp_forward(params: &ParamSet, spec: &MlpSpec, x: &[f64], batch: usize) -> (Vec<f64>, MlpCache) {
    assert_eq!(
        x.len(),
        batch * spec.input_dim(),
        "mlp input length {} does not match batch {} x input dim {}",
        x.len(),
        batch,
        spec.input_dim()
    );
    debug_assert!(x.iter().all(|v| v.is_finite()), "non-finite mlp input");
    let n = spec.n_layers();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n);
    acts.push(x.to_vec());
    let mut out = Vec::new();
    for i in 0..n {
        let w = params.get(&MlpSpec::weight_name(i));
        let b = params.get(&MlpSpec::bias_name(i));
        let input = acts.last().unwrap();
        let mut y = Vec::new();
        affine(w, b, input, batch, &mut y);
        if i + 1 < n {
            for v in y.iter_mut() {
                *v = spec.hidden_activation.apply(*v);
            }
            acts.push(y);
        } else {
            out = y;
        }
    }
    (out, MlpCache { batch, acts })
}

/// Single-row convenience wrapper around [`mlp_forward`].
pub fn mlp_forward_one(params: &ParamSet, spec: &MlpSpec, x: &[f64]) -> (Vec<f64>, MlpCache) {
    mlp_forward(params, spec, x, 1)
}

/// Backward pass. `upstream` is dLoss/dOutput with the same layout as the
/// forward output; returns parameter gradients (summed over the batch) and
/// dLoss/dInput.
pub fn mlp_backward(
    params: &ParamSet,
    spec: &MlpSpec,
    cache: &MlpCache,
    upstream: &[f64],
) -> (GradMap, Vec<f64>) {
    let batch = cache.batch;
    let n = spec.n_layers();
    assert_eq!(
        upstream.len(),
        batch * spec.output_dim(),
        "upstream length does not match forward output"
    );
    let mut grads = GradMap::new();
    let mut cur = upstream.to_vec();
    for i in (0..n).rev() {
        let w = params.get(&MlpSpec::weight_name(i));
        let x = &cache.acts[i];
        let (dw, db, dx) = affine_backward(w, x, &cur, batch);
        grads.insert(MlpSpec::weight_name(i), dw);
        grads.insert(MlpSpec::bias_name(i), db);

        let mut dx = dx;
        if i > 0 {
            // Undo the activation that produced acts[i].
            for (d, y) in dx.iter_mut().zip(cache.acts[i].iter()) {
                *d *= spec.hidden_activation.derivative_from_output(*y);
            }
        }
        cur = dx;
    }
    (grads, cur)
}

/// Backward of one affine layer given upstream dLoss/dOutput `up`; returns
/// `(dW, dBias, dInput)` with parameter gradients summed over the batch.
pub(crate) fn affine_backward(
    w: &Tensor,
    x: &[f64],
    up: &[f64],
    batch: usize,
) -> (Tensor, Tensor, Vec<f64>) {
    let out = w.shape()[0];
    let inp = w.shape()[1];
    debug_assert_eq!(x.len(), batch * inp);
    debug_assert_eq!(up.len(), batch * out);
    let wd = w.data();
    let mut dw = Tensor::zeros(&[out, inp]);
    let mut db = Tensor::zeros(&[out]);
    let mut dx = vec![0.0f64; batch * inp];
    {
        let dwd = dw.data_mut();
        let dbd = db.data_mut();
        for bi in 0..batch {
            let xr = &x[bi * inp..(bi + 1) * inp];
            let ur = &up[bi * out..(bi + 1) * out];
            let dxr = &mut dx[bi * inp..(bi + 1) * inp];
            for o in 0..out {
                let u = ur[o];
                if u != 0.0 {
                    axpy_slice(&mut dwd[o * inp..(o + 1) * inp], u, xr);
                    axpy_slice(dxr, u, &wd[o * inp..(o + 1) * inp]);
                }
                dbd[o] += u;
            }
        }
    }
    (dw, db, dx)
}
