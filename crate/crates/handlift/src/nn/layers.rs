//! Layer kinds and their forward/backward kernels.
//!
//! Activations are height-width-channel; convolution weights are
//! `[kernel, kernel, in_channels, out_channels]` so the innermost loops run
//! over contiguous channel slices. Backward passes accumulate into
//! caller-provided buffers, which lets the network route gradients through
//! branching topologies (concatenation taps).

use super::tensor::Scalar;
use super::NnError;
use crate::rng::counter_hash;
use serde::{Deserialize, Serialize};

/// Where a layer reads its input from. Layers read their predecessor by
/// default; concatenation names its sources explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRef {
    /// The network's primary input.
    Input,
    /// The auxiliary input vector (hand-side flag).
    Aux,
    /// Output of an earlier layer (0-based).
    Layer(usize),
}

/// One layer of a [`super::NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    MaxPool { kernel: usize, stride: usize, padding: usize },
    FullyConnected { out_features: usize },
    Dropout { probability: f64 },
    Concat { sources: Vec<LayerRef> },
    BilinearUpsample { target_height: usize, target_width: usize },
    /// Flatten to a rank-1 vector.
    Reshape,
}

impl LayerSpec {
    pub fn has_parameters(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::FullyConnected { .. })
    }

    /// Output shape for the given input shape(s). `inputs` carries one shape
    /// per source (only `Concat` has more than one).
    pub fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>, NnError> {
        let shape_err = |msg: String| NnError::ShapeMismatch(msg);
        let single = || -> Result<&[usize], NnError> {
            if inputs.len() == 1 {
                Ok(inputs[0])
            } else {
                Err(shape_err(format!("{self:?} expects one input, got {}", inputs.len())))
            }
        };
        match self {
            LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                let input = single()?;
                let [h, w, _c] = as_image(input)?;
                let oh = conv_out(h, *kernel, *stride, *padding)
                    .ok_or_else(|| shape_err(format!("conv kernel {kernel} too large for {h}")))?;
                let ow = conv_out(w, *kernel, *stride, *padding)
                    .ok_or_else(|| shape_err(format!("conv kernel {kernel} too large for {w}")))?;
                Ok(vec![oh, ow, *out_channels])
            }
            LayerSpec::Relu | LayerSpec::Dropout { .. } => Ok(single()?.to_vec()),
            LayerSpec::MaxPool { kernel, stride, padding } => {
                let input = single()?;
                let [h, w, c] = as_image(input)?;
                if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                    return Err(shape_err(format!(
                        "pool kernel {kernel} exceeds padded input {h}x{w}"
                    )));
                }
                let oh = conv_out(h, *kernel, *stride, *padding).unwrap();
                let ow = conv_out(w, *kernel, *stride, *padding).unwrap();
                Ok(vec![oh, ow, c])
            }
            LayerSpec::FullyConnected { out_features } => {
                let input = single()?;
                if input.len() != 1 {
                    return Err(shape_err(format!(
                        "fully-connected input must be rank 1, got {input:?}"
                    )));
                }
                Ok(vec![*out_features])
            }
            LayerSpec::Concat { .. } => {
                if inputs.is_empty() {
                    return Err(shape_err("concat needs at least one source".into()));
                }
                if inputs.iter().all(|s| s.len() == 1) {
                    Ok(vec![inputs.iter().map(|s| s[0]).sum()])
                } else if inputs.iter().all(|s| s.len() == 3) {
                    let [h, w, _] = as_image(inputs[0])?;
                    let mut channels = 0;
                    for s in inputs {
                        let [sh, sw, sc] = as_image(s)?;
                        if sh != h || sw != w {
                            return Err(shape_err(format!(
                                "concat spatial mismatch: {h}x{w} vs {sh}x{sw}"
                            )));
                        }
                        channels += sc;
                    }
                    Ok(vec![h, w, channels])
                } else {
                    Err(shape_err("concat sources must all be vectors or all images".into()))
                }
            }
            LayerSpec::BilinearUpsample { target_height, target_width } => {
                let input = single()?;
                let [h, w, c] = as_image(input)?;
                if *target_height < h || *target_width < w {
                    return Err(shape_err(format!(
                        "upsample target {target_height}x{target_width} below source {h}x{w}"
                    )));
                }
                Ok(vec![*target_height, *target_width, c])
            }
            LayerSpec::Reshape => {
                let input = single()?;
                Ok(vec![input.iter().product()])
            }
        }
    }

    /// `(weight shape, bias shape)` for parameterized layers.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match self {
            LayerSpec::Conv { out_channels, kernel, .. } => {
                let c_in = *input.last().unwrap_or(&0);
                Some((vec![*kernel, *kernel, c_in, *out_channels], vec![*out_channels]))
            }
            LayerSpec::FullyConnected { out_features } => {
                let n_in: usize = input.iter().product();
                Some((vec![*out_features, n_in], vec![*out_features]))
            }
            _ => None,
        }
    }
}

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn as_image(shape: &[usize]) -> Result<[usize; 3], NnError> {
    if shape.len() == 3 {
        Ok([shape[0], shape[1], shape[2]])
    } else {
        Err(NnError::ShapeMismatch(format!("expected an HxWxC tensor, got {shape:?}")))
    }
}

/// Cross-correlation with zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<T: Scalar>(
    input: &[T],
    in_shape: [usize; 3],
    weights: &[T],
    bias: &[T],
    kernel: usize,
    stride: usize,
    padding: usize,
    out: &mut [T],
    out_shape: [usize; 3],
) {
    let [ih, iw, ic] = in_shape;
    let [oh, ow, oc] = out_shape;
    debug_assert_eq!(weights.len(), kernel * kernel * ic * oc);
    debug_assert_eq!(out.len(), oh * ow * oc);

    for oy in 0..oh {
        for ox in 0..ow {
            let out_base = (oy * ow + ox) * oc;
            let acc = &mut out[out_base..out_base + oc];
            acc.copy_from_slice(bias);
            let y0 = (oy * stride) as isize - padding as isize;
            let x0 = (ox * stride) as isize - padding as isize;
            for ky in 0..kernel {
                let iy = y0 + ky as isize;
                if iy < 0 || iy >= ih as isize {
                    continue;
                }
                for kx in 0..kernel {
                    let ix = x0 + kx as isize;
                    if ix < 0 || ix >= iw as isize {
                        continue;
                    }
                    let in_base = ((iy as usize) * iw + ix as usize) * ic;
                    let w_base = (ky * kernel + kx) * ic * oc;
                    for c_in in 0..ic {
                        let x = input[in_base + c_in];
                        let w_row = &weights[w_base + c_in * oc..w_base + (c_in + 1) * oc];
                        for (a, &w) in acc.iter_mut().zip(w_row) {
                            *a += x * w;
                        }
                    }
                }
            }
        }
    }
}

/// Backward pass of [`conv2d_forward`]; accumulates into `d_input`,
/// `d_weights` and `d_bias`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    in_shape: [usize; 3],
    weights: &[T],
    kernel: usize,
    stride: usize,
    padding: usize,
    d_out: &[T],
    out_shape: [usize; 3],
    d_input: &mut [T],
    d_weights: &mut [T],
    d_bias: &mut [T],
) {
    let [ih, iw, ic] = in_shape;
    let [oh, ow, oc] = out_shape;

    for oy in 0..oh {
        for ox in 0..ow {
            let g = &d_out[(oy * ow + ox) * oc..(oy * ow + ox + 1) * oc];
            for (b, &gv) in d_bias.iter_mut().zip(g) {
                *b += gv;
            }
            let y0 = (oy * stride) as isize - padding as isize;
            let x0 = (ox * stride) as isize - padding as isize;
            for ky in 0..kernel {
                let iy = y0 + ky as isize;
                if iy < 0 || iy >= ih as isize {
                    continue;
                }
                for kx in 0..kernel {
                    let ix = x0 + kx as isize;
                    if ix < 0 || ix >= iw as isize {
                        continue;
                    }
                    let in_base = ((iy as usize) * iw + ix as usize) * ic;
                    let w_base = (ky * kernel + kx) * ic * oc;
                    for c_in in 0..ic {
                        let x = input[in_base + c_in];
                        let w_row = &weights[w_base + c_in * oc..w_base + (c_in + 1) * oc];
                        let dw_row = &mut d_weights[w_base + c_in * oc..w_base + (c_in + 1) * oc];
                        let mut dx = T::zero();
                        for ((dw, &w), &gv) in dw_row.iter_mut().zip(w_row).zip(g) {
                            *dw += x * gv;
                            dx += w * gv;
                        }
                        d_input[in_base + c_in] += dx;
                    }
                }
            }
        }
    }
}

pub fn relu_forward<T: Scalar>(input: &[T], out: &mut [T]) {
    for (o, &x) in out.iter_mut().zip(input) {
        *o = if x > T::zero() { x } else { T::zero() };
    }
}

pub fn relu_backward<T: Scalar>(input: &[T], d_out: &[T], d_input: &mut [T]) {
    for ((di, &x), &g) in d_input.iter_mut().zip(input).zip(d_out) {
        if x > T::zero() {
            *di += g;
        }
    }
}

/// Max pooling over valid cells of each window (padding only positions the
/// windows). Returns the argmax input index per output element so the
/// backward pass can route gradients; first occurrence wins on ties.
#[allow(clippy::too_many_arguments)]
pub fn maxpool_forward<T: Scalar>(
    input: &[T],
    in_shape: [usize; 3],
    kernel: usize,
    stride: usize,
    padding: usize,
    out: &mut [T],
    out_shape: [usize; 3],
    argmax: &mut Vec<u32>,
) {
    let [ih, iw, c] = in_shape;
    let [oh, ow, oc] = out_shape;
    debug_assert_eq!(c, oc);
    argmax.clear();
    argmax.resize(oh * ow * oc, 0);

    for oy in 0..oh {
        for ox in 0..ow {
            let y0 = (oy * stride) as isize - padding as isize;
            let x0 = (ox * stride) as isize - padding as isize;
            let out_base = (oy * ow + ox) * c;
            for ch in 0..c {
                let mut best = T::neg_infinity();
                let mut best_ix = 0u32;
                for ky in 0..kernel {
                    let iy = y0 + ky as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = x0 + kx as isize;
                        if ix < 0 || ix >= iw as isize {
                            continue;
                        }
                        let idx = ((iy as usize) * iw + ix as usize) * c + ch;
                        if input[idx] > best {
                            best = input[idx];
                            best_ix = idx as u32;
                        }
                    }
                }
                out[out_base + ch] = best;
                argmax[out_base + ch] = best_ix;
            }
        }
    }
}

pub fn maxpool_backward<T: Scalar>(argmax: &[u32], d_out: &[T], d_input: &mut [T]) {
    for (&idx, &g) in argmax.iter().zip(d_out) {
        d_input[idx as usize] += g;
    }
}

pub fn fc_forward<T: Scalar>(input: &[T], weights: &[T], bias: &[T], out: &mut [T]) {
    let n_in = input.len();
    for (o, out_v) in out.iter_mut().enumerate() {
        let row = &weights[o * n_in..(o + 1) * n_in];
        let mut acc = bias[o];
        for (&w, &x) in row.iter().zip(input) {
            acc += w * x;
        }
        *out_v = acc;
    }
}

pub fn fc_backward<T: Scalar>(
    input: &[T],
    weights: &[T],
    d_out: &[T],
    d_input: &mut [T],
    d_weights: &mut [T],
    d_bias: &mut [T],
) {
    let n_in = input.len();
    for (o, &g) in d_out.iter().enumerate() {
        d_bias[o] += g;
        let row = &weights[o * n_in..(o + 1) * n_in];
        let d_row = &mut d_weights[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            d_row[i] += g * input[i];
            d_input[i] += g * row[i];
        }
    }
}

/// Key identifying one dropout evaluation so masks are pure functions of
/// `(seed, layer, step, sample, element)`.
#[derive(Debug, Clone, Copy)]
pub struct DropoutKey {
    pub seed: u64,
    pub layer: u64,
    pub step: u64,
    pub sample: u64,
}

/// Inverted dropout: surviving activations scale by `1 / keep` so the
/// expectation matches eval mode.
pub fn dropout_forward<T: Scalar>(
    input: &[T],
    probability: f64,
    key: &DropoutKey,
    out: &mut [T],
    mask: &mut Vec<bool>,
) {
    let keep = 1.0 - probability;
    let scale = T::from_f64(1.0 / keep);
    mask.clear();
    mask.reserve(input.len());
    for (e, (o, &x)) in out.iter_mut().zip(input).enumerate() {
        let draw = counter_hash(key.seed, &[key.layer, key.step, key.sample, e as u64]);
        let kept = draw < keep;
        mask.push(kept);
        *o = if kept { x * scale } else { T::zero() };
    }
}

pub fn dropout_backward<T: Scalar>(mask: &[bool], probability: f64, d_out: &[T], d_input: &mut [T]) {
    let scale = T::from_f64(1.0 / (1.0 - probability));
    for ((di, &kept), &g) in d_input.iter_mut().zip(mask).zip(d_out) {
        if kept {
            *di += g * scale;
        }
    }
}

/// Bilinear interpolation positions: for each output index, the two source
/// indices and the interpolation weight of the second one. Half-pixel-center
/// convention with edge clamping, so constants are preserved exactly.
fn bilinear_axis(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

pub fn bilinear_forward<T: Scalar>(
    input: &[T],
    in_shape: [usize; 3],
    out: &mut [T],
    out_shape: [usize; 3],
) {
    let [ih, iw, c] = in_shape;
    let [oh, ow, _] = out_shape;
    let ys = bilinear_axis(ih, oh);
    let xs = bilinear_axis(iw, ow);
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let w00 = T::from_f64((1.0 - fy) * (1.0 - fx));
            let w01 = T::from_f64((1.0 - fy) * fx);
            let w10 = T::from_f64(fy * (1.0 - fx));
            let w11 = T::from_f64(fy * fx);
            let b00 = (y0 * iw + x0) * c;
            let b01 = (y0 * iw + x1) * c;
            let b10 = (y1 * iw + x0) * c;
            let b11 = (y1 * iw + x1) * c;
            let out_base = (oy * ow + ox) * c;
            for ch in 0..c {
                out[out_base + ch] = input[b00 + ch] * w00
                    + input[b01 + ch] * w01
                    + input[b10 + ch] * w10
                    + input[b11 + ch] * w11;
            }
        }
    }
}

pub fn bilinear_backward<T: Scalar>(
    d_out: &[T],
    out_shape: [usize; 3],
    d_input: &mut [T],
    in_shape: [usize; 3],
) {
    let [ih, iw, c] = in_shape;
    let [oh, ow, _] = out_shape;
    let ys = bilinear_axis(ih, oh);
    let xs = bilinear_axis(iw, ow);
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let w00 = T::from_f64((1.0 - fy) * (1.0 - fx));
            let w01 = T::from_f64((1.0 - fy) * fx);
            let w10 = T::from_f64(fy * (1.0 - fx));
            let w11 = T::from_f64(fy * fx);
            let out_base = (oy * ow + ox) * c;
            for ch in 0..c {
                let g = d_out[out_base + ch];
                d_input[(y0 * iw + x0) * c + ch] += g * w00;
                d_input[(y0 * iw + x1) * c + ch] += g * w01;
                d_input[(y1 * iw + x0) * c + ch] += g * w10;
                d_input[(y1 * iw + x1) * c + ch] += g * w11;
            }
        }
    }
}

/// Channel-wise (or vector) concatenation of the source buffers.
pub fn concat_forward<T: Scalar>(sources: &[(&[T], &[usize])], out: &mut [T]) {
    if sources.iter().all(|(_, s)| s.len() == 1) {
        let mut cursor = 0;
        for (data, _) in sources {
            out[cursor..cursor + data.len()].copy_from_slice(data);
            cursor += data.len();
        }
        return;
    }
    let [h, w, _] = [sources[0].1[0], sources[0].1[1], sources[0].1[2]];
    let total_c: usize = sources.iter().map(|(_, s)| s[2]).sum();
    for y in 0..h {
        for x in 0..w {
            let mut c_off = 0;
            let out_base = (y * w + x) * total_c;
            for (data, shape) in sources {
                let c = shape[2];
                let in_base = (y * w + x) * c;
                out[out_base + c_off..out_base + c_off + c]
                    .copy_from_slice(&data[in_base..in_base + c]);
                c_off += c;
            }
        }
    }
}

/// Split the output gradient back to the per-source gradient buffers.
pub fn concat_backward<T: Scalar>(d_out: &[T], shapes: &[&[usize]], d_sources: &mut [&mut [T]]) {
    if shapes.iter().all(|s| s.len() == 1) {
        let mut cursor = 0;
        for d_src in d_sources.iter_mut() {
            for v in d_src.iter_mut() {
                *v += d_out[cursor];
                cursor += 1;
            }
        }
        return;
    }
    let [h, w] = [shapes[0][0], shapes[0][1]];
    let total_c: usize = shapes.iter().map(|s| s[2]).sum();
    for y in 0..h {
        for x in 0..w {
            let mut c_off = 0;
            let out_base = (y * w + x) * total_c;
            for (d_src, shape) in d_sources.iter_mut().zip(shapes) {
                let c = shape[2];
                let in_base = (y * w + x) * c;
                for ch in 0..c {
                    d_src[in_base + ch] += d_out[out_base + c_off + ch];
                }
                c_off += c;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference convolution: direct quadruple loop over output pixels and
    /// kernel taps, independent of the production kernel's loop structure.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn conv2d_naive(
        input: &[f64],
        in_shape: [usize; 3],
        weights: &[f64],
        bias: &[f64],
        kernel: usize,
        stride: usize,
        padding: usize,
        out_shape: [usize; 3],
    ) -> Vec<f64> {
        let [ih, iw, ic] = in_shape;
        let [oh, ow, oc] = out_shape;
        let mut out = vec![0.0; oh * ow * oc];
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..oc {
                    let mut acc = bias[co];
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy < 0 || ix < 0 || iy >= ih as isize || ix >= iw as isize {
                                continue;
                            }
                            for ci in 0..ic {
                                let x = input[((iy as usize) * iw + ix as usize) * ic + ci];
                                let w = weights[((ky * kernel + kx) * ic + ci) * oc + co];
                                acc += x * w;
                            }
                        }
                    }
                    out[(oy * ow + ox) * oc + co] = acc;
                }
            }
        }
        out
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        use crate::rng::stream;
        use rand::Rng;
        let mut rng = stream(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_identity_with_one_by_one_kernel() {
        let in_shape = [4, 4, 3];
        let input = rand_vec(48, 1);
        // 1x1 kernel with identity channel mixing.
        let mut weights = vec![0.0; 3 * 3];
        for c in 0..3 {
            weights[c * 3 + c] = 1.0;
        }
        let bias = vec![0.0; 3];
        let mut out = vec![0.0; 48];
        conv2d_forward(&input, in_shape, &weights, &bias, 1, 1, 0, &mut out, in_shape);
        assert_eq!(out, input);
    }

    #[test]
    fn conv_all_ones_sums_window() {
        let in_shape = [5, 5, 1];
        let input = vec![1.0f64; 25];
        let weights = vec![1.0; 9];
        let bias = vec![0.0];
        let mut out = vec![0.0; 25];
        conv2d_forward(&input, in_shape, &weights, &bias, 3, 1, 1, &mut out, in_shape);
        // Center pixel sees the full 3x3 window of ones.
        assert_eq!(out[2 * 5 + 2], 9.0);
        // Corner sees only the valid 2x2 part.
        assert_eq!(out[0], 4.0);
    }

    #[test]
    fn conv_matches_naive_reference() {
        for (seed, kernel, stride, padding, ih, iw, ic, oc) in [
            (1u64, 3usize, 1usize, 1usize, 6usize, 5usize, 2usize, 3usize),
            (2, 3, 2, 1, 8, 8, 3, 4),
            (3, 1, 1, 0, 4, 7, 5, 2),
            (4, 7, 1, 3, 9, 9, 2, 2),
            (5, 4, 2, 1, 8, 8, 1, 2),
        ] {
            let oh = (ih + 2 * padding - kernel) / stride + 1;
            let ow = (iw + 2 * padding - kernel) / stride + 1;
            let input = rand_vec(ih * iw * ic, seed);
            let weights = rand_vec(kernel * kernel * ic * oc, seed + 100);
            let bias = rand_vec(oc, seed + 200);
            let mut out = vec![0.0; oh * ow * oc];
            conv2d_forward(
                &input,
                [ih, iw, ic],
                &weights,
                &bias,
                kernel,
                stride,
                padding,
                &mut out,
                [oh, ow, oc],
            );
            let reference = conv2d_naive(
                &input,
                [ih, iw, ic],
                &weights,
                &bias,
                kernel,
                stride,
                padding,
                [oh, ow, oc],
            );
            for (a, b) in out.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-6, "conv mismatch: {a} vs {b}");
            }
        }
    }

    #[test]
    fn maxpool_constant_input_and_shape_halving() {
        let input = vec![0.7f64; 8 * 8 * 2];
        let mut out = vec![0.0; 4 * 4 * 2];
        let mut argmax = Vec::new();
        maxpool_forward(&input, [8, 8, 2], 4, 2, 1, &mut out, [4, 4, 2], &mut argmax);
        assert!(out.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn maxpool_matches_naive_window_max() {
        let input = rand_vec(10 * 10 * 3, 9);
        let (k, s, p) = (4, 2, 1);
        let (oh, ow) = (5, 5);
        let mut out = vec![0.0; oh * ow * 3];
        let mut argmax = Vec::new();
        maxpool_forward(&input, [10, 10, 3], k, s, p, &mut out, [oh, ow, 3], &mut argmax);
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..3 {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            let ix = (ox * s + kx) as isize - p as isize;
                            if iy < 0 || ix < 0 || iy >= 10 || ix >= 10 {
                                continue;
                            }
                            best = best.max(input[((iy as usize) * 10 + ix as usize) * 3 + c]);
                        }
                    }
                    assert_eq!(out[(oy * ow + ox) * 3 + c], best);
                }
            }
        }
    }

    #[test]
    fn bilinear_preserves_constants_and_ramps() {
        let input = vec![0.3f64; 4 * 4 * 2];
        let mut out = vec![0.0; 16 * 16 * 2];
        bilinear_forward(&input, [4, 4, 2], &mut out, [16, 16, 2]);
        assert!(out.iter().all(|&v| (v - 0.3).abs() < 1e-12));

        // Closed-form ramp oracle: a linear ramp maps to the clamped linear
        // interpolant of the half-pixel sampling positions.
        let (src, dst) = (8usize, 32usize);
        let ramp: Vec<f64> = (0..src).map(|i| 0.25 * i as f64 + 1.0).collect();
        let mut out = vec![0.0; dst];
        bilinear_forward(&ramp, [1, src, 1], &mut out, [1, dst, 1]);
        let ratio = src as f64 / dst as f64;
        for (x, &v) in out.iter().enumerate() {
            let pos = ((x as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let expected = 0.25 * pos + 1.0;
            assert!((v - expected).abs() < 1e-6, "ramp mismatch at {x}: {v} vs {expected}");
        }
    }

    #[test]
    fn dropout_mask_is_deterministic_and_mean_preserving() {
        let input = vec![1.0f64; 10_000];
        let key = DropoutKey { seed: 5, layer: 2, step: 7, sample: 0 };
        let mut out_a = vec![0.0; input.len()];
        let mut out_b = vec![0.0; input.len()];
        let mut mask_a = Vec::new();
        let mut mask_b = Vec::new();
        dropout_forward(&input, 0.2, &key, &mut out_a, &mut mask_a);
        dropout_forward(&input, 0.2, &key, &mut out_b, &mut mask_b);
        assert_eq!(out_a, out_b);
        let mean = out_a.iter().sum::<f64>() / out_a.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "dropout mean {mean}");
    }

    #[test]
    fn concat_round_trips_vectors_and_images() {
        let a = vec![1.0f64, 2.0];
        let b = vec![3.0, 4.0, 5.0];
        let mut out = vec![0.0; 5];
        concat_forward(&[(&a, &[2][..]), (&b, &[3][..])], &mut out);
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0, 5.0]);

        // 2x1 images with 1 and 2 channels.
        let img_a = vec![10.0, 20.0];
        let img_b = vec![1.0, 2.0, 3.0, 4.0];
        let mut out = vec![0.0; 6];
        concat_forward(&[(&img_a, &[2, 1, 1][..]), (&img_b, &[2, 1, 2][..])], &mut out);
        assert_eq!(out, vec![10.0, 1.0, 2.0, 20.0, 3.0, 4.0]);

        let mut da = vec![0.0; 2];
        let mut db = vec![0.0; 4];
        let d_out = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        {
            let mut splits: Vec<&mut [f64]> = vec![&mut da, &mut db];
            concat_backward(&d_out, &[&[2, 1, 1][..], &[2, 1, 2][..]], &mut splits);
        }
        assert_eq!(da, vec![1.0, 4.0]);
        assert_eq!(db, vec![2.0, 3.0, 5.0, 6.0]);
    }
}
