//! Convolutional image encoder: a stack of square convolutions with zero
//! "same" padding, followed by dense layers. Images are batch-major flat
//! slices in channel-height-width order, values already scaled to `[0, 1]`.

use super::mlp::{affine, affine_backward};
use super::{ConvEncoderSpec, GradMap, ParamSet};
use crate::tensor::Tensor;

/// Forward cache for one encoder pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    batch: usize,
    /// `conv_acts[0]` is the input image batch; `conv_acts[i]` for `i >= 1`
    /// is the post-activation output of conv layer `i - 1`. The final entry
    /// doubles as the flattened dense input.
    conv_acts: Vec<Vec<f64>>,
    /// `dense_acts[i]` is the post-activation output of dense layer `i`.
    dense_acts: Vec<Vec<f64>>,
}

impl ConvCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Post-activation feature map of conv layer `i` (diagnostics/tests).
    pub fn conv_map(&self, i: usize) -> &[f64] {
        &self.conv_acts[i + 1]
    }
}

/// Zero "same" padding offsets: returns `(out_side, pad_begin)`.
fn same_padding(in_side: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = in_side.div_ceil(stride);
    let needed = ((out - 1) * stride + kernel).saturating_sub(in_side);
    (out, needed / 2)
}

/// Forward pass; `images` has length `batch * in_channels * side * side` and
/// the output has length `batch * spec.feature_len()`.
pub fn conv_forward(
    params: &ParamSet,
    spec: &ConvEncoderSpec,
    images: &[f64],
    batch: usize,
) -> (Vec<f64>, ConvCache) {
    spec.validate();
    assert_eq!(
        images.len(),
        batch * spec.in_channels * spec.image_side * spec.image_side,
        "image batch length does not match encoder spec"
    );
    let k = spec.kernel;
    let mut conv_acts: Vec<Vec<f64>> = Vec::with_capacity(spec.n_conv_layers + 1);
    conv_acts.push(images.to_vec());
    for layer in 0..spec.n_conv_layers {
        let in_ch = if layer == 0 { spec.in_channels } else { spec.channels };
        let out_ch = spec.channels;
        let in_side = spec.side_after(layer);
        let (out_side, pad) = same_padding(in_side, k, spec.stride);
        let w = params.get(&ConvEncoderSpec::conv_weight_name(layer));
        let b = params.get(&ConvEncoderSpec::conv_bias_name(layer));
        debug_assert_eq!(w.shape(), &[out_ch, in_ch, k, k]);
        let wd = w.data();
        let bd = b.data();
        let x = conv_acts.last().unwrap();
        let mut y = vec![0.0f64; batch * out_ch * out_side * out_side];
        for bi in 0..batch {
            let x_img = &x[bi * in_ch * in_side * in_side..(bi + 1) * in_ch * in_side * in_side];
            let y_img =
                &mut y[bi * out_ch * out_side * out_side..(bi + 1) * out_ch * out_side * out_side];
            for oc in 0..out_ch {
                let w_oc = &wd[oc * in_ch * k * k..(oc + 1) * in_ch * k * k];
                for oy in 0..out_side {
                    for ox in 0..out_side {
                        let mut acc = bd[oc];
                        for ic in 0..in_ch {
                            let x_ch = &x_img[ic * in_side * in_side..(ic + 1) * in_side * in_side];
                            let w_ic = &w_oc[ic * k * k..(ic + 1) * k * k];
                            for ky in 0..k {
                                let iy = (oy * spec.stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= in_side as isize {
                                    continue;
                                }
                                let row = &x_ch[iy as usize * in_side..(iy as usize + 1) * in_side];
                                let w_row = &w_ic[ky * k..(ky + 1) * k];
                                for kx in 0..k {
                                    let ix = (ox * spec.stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= in_side as isize {
                                        continue;
                                    }
                                    acc += w_row[kx] * row[ix as usize];
                                }
                            }
                        }
                        y_img[(oc * out_side + oy) * out_side + ox] = spec.activation.apply(acc);
                    }
                }
            }
        }
        conv_acts.push(y);
    }

    let mut dense_acts: Vec<Vec<f64>> = Vec::with_capacity(spec.dense_widths.len());
    for i in 0..spec.dense_widths.len() {
        let w = params.get(&ConvEncoderSpec::dense_weight_name(i));
        let b = params.get(&ConvEncoderSpec::dense_bias_name(i));
        let input: &[f64] = if i == 0 {
            conv_acts.last().unwrap()
        } else {
            &dense_acts[i - 1]
        };
        let mut y = Vec::new();
        affine(w, b, input, batch, &mut y);
        for v in y.iter_mut() {
            *v = spec.activation.apply(*v);
        }
        dense_acts.push(y);
    }
    let features = dense_acts.last().unwrap().clone();
    (
        features,
        ConvCache {
            batch,
            conv_acts,
            dense_acts,
        },
    )
}

/// Backward pass; `upstream` is dLoss/dFeatures. Returns parameter
/// gradients only — the input is data, so its gradient is not materialized.
pub fn conv_backward(
    params: &ParamSet,
    spec: &ConvEncoderSpec,
    cache: &ConvCache,
    upstream: &[f64],
) -> GradMap {
    let batch = cache.batch;
    assert_eq!(upstream.len(), batch * spec.feature_len());
    let mut grads = GradMap::new();

    // Dense stack, last to first. `cur` is dLoss/d(post-activation output).
    let mut cur = upstream.to_vec();
    for i in (0..spec.dense_widths.len()).rev() {
        let y = &cache.dense_acts[i];
        for (d, out) in cur.iter_mut().zip(y.iter()) {
            *d *= spec.activation.derivative_from_output(*out);
        }
        let w = params.get(&ConvEncoderSpec::dense_weight_name(i));
        let input: &[f64] = if i == 0 {
            cache.conv_acts.last().unwrap()
        } else {
            &cache.dense_acts[i - 1]
        };
        let (dw, db, dx) = affine_backward(w, input, &cur, batch);
        grads.insert(ConvEncoderSpec::dense_weight_name(i), dw);
        grads.insert(ConvEncoderSpec::dense_bias_name(i), db);
        cur = dx;
    }

    // Conv stack, last to first.
    let k = spec.kernel;
    for layer in (0..spec.n_conv_layers).rev() {
        let in_ch = if layer == 0 { spec.in_channels } else { spec.channels };
        let out_ch = spec.channels;
        let in_side = spec.side_after(layer);
        let (out_side, pad) = same_padding(in_side, k, spec.stride);
        let w = params.get(&ConvEncoderSpec::conv_weight_name(layer));
        let wd = w.data();
        let x = &cache.conv_acts[layer];
        let y = &cache.conv_acts[layer + 1];

        // Undo the activation on this layer's outputs.
        for (d, out) in cur.iter_mut().zip(y.iter()) {
            *d *= spec.activation.derivative_from_output(*out);
        }

        let mut dw = Tensor::zeros(&[out_ch, in_ch, k, k]);
        let mut db = Tensor::zeros(&[out_ch]);
        let need_dx = layer > 0;
        let mut dx = if need_dx {
            vec![0.0f64; batch * in_ch * in_side * in_side]
        } else {
            Vec::new()
        };
        {
            let dwd = dw.data_mut();
            let dbd = db.data_mut();
            for bi in 0..batch {
                let x_img =
                    &x[bi * in_ch * in_side * in_side..(bi + 1) * in_ch * in_side * in_side];
                let u_img = &cur
                    [bi * out_ch * out_side * out_side..(bi + 1) * out_ch * out_side * out_side];
                for oc in 0..out_ch {
                    let w_oc = &wd[oc * in_ch * k * k..(oc + 1) * in_ch * k * k];
                    let dw_oc = &mut dwd[oc * in_ch * k * k..(oc + 1) * in_ch * k * k];
                    for oy in 0..out_side {
                        for ox in 0..out_side {
                            let u = u_img[(oc * out_side + oy) * out_side + ox];
                            if u == 0.0 {
                                continue;
                            }
                            dbd[oc] += u;
                            for ic in 0..in_ch {
                                let x_ch =
                                    &x_img[ic * in_side * in_side..(ic + 1) * in_side * in_side];
                                for ky in 0..k {
                                    let iy = (oy * spec.stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= in_side as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = (ox * spec.stride + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= in_side as isize {
                                            continue;
                                        }
                                        let xi = x_ch[iy as usize * in_side + ix as usize];
                                        dw_oc[(ic * k + ky) * k + kx] += u * xi;
                                        if need_dx {
                                            dx[bi * in_ch * in_side * in_side
                                                + (ic * in_side + iy as usize) * in_side
                                                + ix as usize] +=
                                                u * w_oc[(ic * k + ky) * k + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        grads.insert(ConvEncoderSpec::conv_weight_name(layer), dw);
        grads.insert(ConvEncoderSpec::conv_bias_name(layer), db);
        cur = dx;
    }
    grads
}
