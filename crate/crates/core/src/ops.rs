//! Differentiable layer primitives: convolution, pooling, activation, linear,
//! softmax, cross-entropy and global average pooling.
//!
//! Every forward function is pure. Backward functions are also pure: they take
//! the saved forward inputs plus the incoming gradient and return the
//! gradients for each argument. Training code accumulates those into the
//! parameter tensors' gradient slots.
//!
//! Conventions (documented, deterministic):
//! - convolution uses cross-correlation semantics (no kernel flip);
//! - `relu` backward passes zero at exactly 0;
//! - `max_pool2d` backward routes the gradient to the first maximum in
//!   row-major window order on ties;
//! - probabilities are clamped to `PROB_FLOOR` inside logs, never raising.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower clamp applied to probabilities inside `log`, so a confidently wrong
/// prediction yields a large finite loss instead of infinity.
pub const PROB_FLOOR: f64 = 1e-12;

fn expect_rank(t: &Tensor, rank: usize, op: &'static str) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::ShapeMismatch {
            op,
            expected: format!("rank-{rank} tensor"),
            got: format!("shape {:?}", t.shape()),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/// Output spatial extent of a convolution: floor((n + 2p - k)/s) + 1.
pub fn conv_out_extent(n: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = n + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// 2-D cross-correlation of `input` `[C_in, H, W]` with `kernels`
/// `[C_out, C_in, k, k]` plus `bias` `[C_out]`.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    expect_rank(input, 3, "conv2d")?;
    expect_rank(kernels, 4, "conv2d")?;
    expect_rank(bias, 1, "conv2d")?;
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, kc, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    if kc != c_in {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            expected: format!("kernel channels matching input {:?}", input.shape()),
            got: format!("kernels {:?}", kernels.shape()),
        });
    }
    if kh != kw {
        return Err(Error::invalid(format!("conv2d: non-square kernel {kh}x{kw}")));
    }
    if bias.shape()[0] != c_out {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            expected: format!("bias of length {c_out}"),
            got: format!("bias {:?}", bias.shape()),
        });
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d: stride must be >= 1"));
    }
    let oh = conv_out_extent(h, kh, stride, padding).ok_or_else(|| {
        Error::invalid(format!("conv2d: kernel {kh} exceeds padded extent {h}+2*{padding}"))
    })?;
    let ow = conv_out_extent(w, kw, stride, padding).ok_or_else(|| {
        Error::invalid(format!("conv2d: kernel {kw} exceeds padded extent {w}+2*{padding}"))
    })?;

    let x = input.data();
    let k = kernels.data();
    let b = bias.data();
    let mut out = vec![0.0; c_out * oh * ow];
    for co in 0..c_out {
        out[co * oh * ow..(co + 1) * oh * ow].fill(b[co]);
    }
    // Padding is handled by clamping each row's kernel-column range up front,
    // so the innermost loop is a branch-free dot product over slices.
    for co in 0..c_out {
        for ci in 0..c_in {
            let xplane = &x[ci * h * w..(ci + 1) * h * w];
            let kbase = (co * c_in + ci) * kh * kw;
            for oy in 0..oh {
                let orow = (co * oh + oy) * ow;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &xplane[iy as usize * w..(iy as usize + 1) * w];
                    let krow = &k[kbase + ky * kw..kbase + (ky + 1) * kw];
                    for ox in 0..ow {
                        let x0 = ox * stride;
                        let kx_lo = padding.saturating_sub(x0);
                        let kx_hi = kw.min((w + padding).saturating_sub(x0));
                        if kx_lo >= kx_hi {
                            continue;
                        }
                        let xs = &xrow[x0 + kx_lo - padding..x0 + kx_hi - padding];
                        let ks = &krow[kx_lo..kx_hi];
                        let mut acc = 0.0;
                        for (xv, kv) in xs.iter().zip(ks) {
                            acc += xv * kv;
                        }
                        out[orow + ox] += acc;
                    }
                }
            }
        }
    }
    let out = Tensor::new(&[c_out, oh, ow], out)?;
    out.check_finite("conv2d")?;
    Ok(out)
}

pub struct Conv2dGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

/// Gradients of `conv2d` w.r.t. input, kernels and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<Conv2dGrads> {
    expect_rank(grad_out, 3, "conv2d_backward")?;
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, _, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    let oh = grad_out.shape()[1];
    let ow = grad_out.shape()[2];
    if grad_out.shape()[0] != c_out {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            expected: format!("{c_out} output channels"),
            got: format!("grad {:?}", grad_out.shape()),
        });
    }

    let x = input.data();
    let k = kernels.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; c_out];
    for co in 0..c_out {
        db[co] = g[co * oh * ow..(co + 1) * oh * ow].iter().sum();
    }
    for co in 0..c_out {
        let gplane = &g[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..c_in {
            let xplane = &x[ci * h * w..(ci + 1) * h * w];
            let dxplane = &mut dx[ci * h * w..(ci + 1) * h * w];
            let kbase = (co * c_in + ci) * kh * kw;
            for oy in 0..oh {
                let grow = &gplane[oy * ow..(oy + 1) * ow];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &xplane[iy as usize * w..(iy as usize + 1) * w];
                    let dxrow = &mut dxplane[iy as usize * w..(iy as usize + 1) * w];
                    let krow = &k[kbase + ky * kw..kbase + (ky + 1) * kw];
                    let dkrow = &mut dk[kbase + ky * kw..kbase + (ky + 1) * kw];
                    for (ox, &go) in grow.iter().enumerate() {
                        let x0 = ox * stride;
                        let kx_lo = padding.saturating_sub(x0);
                        let kx_hi = kw.min((w + padding).saturating_sub(x0));
                        if kx_lo >= kx_hi {
                            continue;
                        }
                        let base = x0 + kx_lo - padding;
                        let n = kx_hi - kx_lo;
                        let xs = &xrow[base..base + n];
                        let dxs = &mut dxrow[base..base + n];
                        let ks = &krow[kx_lo..kx_hi];
                        let dks = &mut dkrow[kx_lo..kx_hi];
                        for i in 0..n {
                            dxs[i] += go * ks[i];
                            dks[i] += go * xs[i];
                        }
                    }
                }
            }
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::new(input.shape(), dx)?,
        kernels: Tensor::new(kernels.shape(), dk)?,
        bias: Tensor::new(&[c_out], db)?,
    })
}

// ---------------------------------------------------------------------------
// max_pool2d
// ---------------------------------------------------------------------------

/// Max pooling over `window`x`window` patches of a `[C, H, W]` tensor.
pub fn max_pool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    Ok(max_pool2d_with_indices(input, window, stride)?.0)
}

/// Max pooling that also returns, per output element, the flat input index of
/// the selected maximum (first in row-major order on ties). The indices drive
/// the backward scatter.
pub fn max_pool2d_with_indices(
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    expect_rank(input, 3, "max_pool2d")?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if window == 0 || stride == 0 {
        return Err(Error::invalid("max_pool2d: window and stride must be >= 1"));
    }
    if window > h || window > w {
        return Err(Error::ShapeMismatch {
            op: "max_pool2d",
            expected: format!("window <= spatial extents {h}x{w}"),
            got: format!("window {window}"),
        });
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let x = input.data();
    let mut out = vec![0.0; c * oh * ow];
    let mut argmax = vec![0usize; c * oh * ow];
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        let v = x[row + kx];
                        if v > best {
                            best = v;
                            best_idx = row + kx;
                        }
                    }
                }
                let o = (ci * oh + oy) * ow + ox;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((Tensor::new(&[c, oh, ow], out)?, argmax))
}

/// Scatter `grad_out` back to the argmax positions recorded by the forward.
pub fn max_pool2d_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor> {
    if argmax.len() != grad_out.numel() {
        return Err(Error::ShapeMismatch {
            op: "max_pool2d_backward",
            expected: format!("{} indices", grad_out.numel()),
            got: format!("{}", argmax.len()),
        });
    }
    let mut dx = vec![0.0; input_shape.iter().product()];
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        dx[idx] += g;
    }
    Tensor::new(input_shape, dx)
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

/// Elementwise max(0, x).
pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Backward of relu: passes gradient where the saved input is strictly
/// positive, zero elsewhere (including at exactly 0).
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch {
            op: "relu_backward",
            expected: format!("{:?}", input.shape()),
            got: format!("{:?}", grad_out.shape()),
        });
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), data)
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

/// Fully-connected layer: `weight [d_out, d_in] * input [d_in] + bias [d_out]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    expect_rank(input, 1, "linear")?;
    expect_rank(weight, 2, "linear")?;
    expect_rank(bias, 1, "linear")?;
    let d_in = input.shape()[0];
    let (d_out, wd_in) = (weight.shape()[0], weight.shape()[1]);
    if wd_in != d_in || bias.shape()[0] != d_out {
        return Err(Error::ShapeMismatch {
            op: "linear",
            expected: format!("weight [d_out, {d_in}] and bias [d_out]"),
            got: format!("weight {:?}, bias {:?}", weight.shape(), bias.shape()),
        });
    }
    let x = input.data();
    let w = weight.data();
    let mut out = bias.data().to_vec();
    for (o, out_v) in out.iter_mut().enumerate() {
        let row = &w[o * d_in..(o + 1) * d_in];
        let mut acc = 0.0;
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *out_v += acc;
    }
    Tensor::new(&[d_out], out)
}

pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients of `linear` w.r.t. input, weight and bias.
pub fn linear_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<LinearGrads> {
    let d_in = input.shape()[0];
    let d_out = weight.shape()[0];
    if grad_out.shape() != [d_out] {
        return Err(Error::ShapeMismatch {
            op: "linear_backward",
            expected: format!("[{d_out}]"),
            got: format!("{:?}", grad_out.shape()),
        });
    }
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; d_in];
    let mut dw = vec![0.0; d_out * d_in];
    for o in 0..d_out {
        let go = g[o];
        let row = &w[o * d_in..(o + 1) * d_in];
        let drow = &mut dw[o * d_in..(o + 1) * d_in];
        for i in 0..d_in {
            dx[i] += go * row[i];
            drow[i] = go * x[i];
        }
    }
    Ok(LinearGrads {
        input: Tensor::new(&[d_in], dx)?,
        weight: Tensor::new(weight.shape(), dw)?,
        bias: Tensor::new(&[d_out], g.to_vec())?,
    })
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy
// ---------------------------------------------------------------------------

/// Numerically stable softmax over a rank-1 tensor of at least 2 logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    expect_rank(logits, 1, "softmax")?;
    if logits.numel() < 2 {
        return Err(Error::invalid("softmax: need at least 2 logits"));
    }
    logits.check_finite("softmax")?;
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.data().iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    Tensor::new(logits.shape(), exp.into_iter().map(|e| e / sum).collect())
}

/// Backward of softmax alone: dL/dx_i = s_i * (g_i - sum_j g_j s_j).
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if probs.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch {
            op: "softmax_backward",
            expected: format!("{:?}", probs.shape()),
            got: format!("{:?}", grad_out.shape()),
        });
    }
    let dot: f64 = probs
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| s * g)
        .sum();
    let data = probs
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| s * (g - dot))
        .collect();
    Tensor::new(probs.shape(), data)
}

fn one_hot_class(label: &Tensor) -> Result<usize> {
    expect_rank(label, 1, "cross_entropy")?;
    let mut class = None;
    for (i, &v) in label.data().iter().enumerate() {
        if v == 1.0 {
            if class.is_some() {
                return Err(Error::invalid("cross_entropy: label has multiple 1 entries"));
            }
            class = Some(i);
        } else if v != 0.0 {
            return Err(Error::invalid(format!(
                "cross_entropy: label entry {i} is {v}, expected 0 or 1"
            )));
        }
    }
    class.ok_or_else(|| Error::invalid("cross_entropy: label has no 1 entry"))
}

/// Cross-entropy -sum_m y_m log(p_m) for a single one-hot label. Probabilities
/// are clamped to `PROB_FLOOR` inside the log.
pub fn cross_entropy(prob: &Tensor, label: &Tensor) -> Result<f64> {
    if prob.shape() != label.shape() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            expected: format!("{:?}", prob.shape()),
            got: format!("{:?}", label.shape()),
        });
    }
    let class = one_hot_class(label)?;
    Ok(-prob.data()[class].max(PROB_FLOOR).ln())
}

/// Mean cross-entropy over a batch of (probabilities, class index) pairs.
pub fn cross_entropy_batch(probs: &[Tensor], classes: &[usize]) -> Result<f64> {
    if probs.len() != classes.len() || probs.is_empty() {
        return Err(Error::invalid(format!(
            "cross_entropy_batch: {} prob vectors vs {} labels",
            probs.len(),
            classes.len()
        )));
    }
    let mut total = 0.0;
    for (p, &c) in probs.iter().zip(classes) {
        if c >= p.numel() {
            return Err(Error::invalid(format!("class {c} out of range")));
        }
        total += -p.data()[c].max(PROB_FLOOR).ln();
    }
    Ok(total / probs.len() as f64)
}

/// Gradient of `cross_entropy` w.r.t. the probability vector. Zero where the
/// floor clamp is active.
pub fn cross_entropy_backward(prob: &Tensor, label: &Tensor) -> Result<Tensor> {
    let class = one_hot_class(label)?;
    let mut data = vec![0.0; prob.numel()];
    let p = prob.data()[class];
    if p > PROB_FLOOR {
        data[class] = -1.0 / p;
    }
    Tensor::new(prob.shape(), data)
}

pub struct SoftmaxCrossEntropy {
    pub loss: f64,
    pub probs: Tensor,
}

/// Fused softmax + cross-entropy against a class index.
pub fn softmax_cross_entropy(logits: &Tensor, class: usize) -> Result<SoftmaxCrossEntropy> {
    let probs = softmax(logits)?;
    if class >= probs.numel() {
        return Err(Error::invalid(format!(
            "softmax_cross_entropy: class {class} out of range for {} classes",
            probs.numel()
        )));
    }
    let loss = -probs.data()[class].max(PROB_FLOOR).ln();
    Ok(SoftmaxCrossEntropy { loss, probs })
}

/// Gradient of the fused softmax + cross-entropy w.r.t. the logits: sigma - y.
pub fn softmax_cross_entropy_backward(probs: &Tensor, class: usize) -> Result<Tensor> {
    let mut data = probs.data().to_vec();
    if class >= data.len() {
        return Err(Error::invalid(format!("class {class} out of range")));
    }
    data[class] -= 1.0;
    Tensor::new(probs.shape(), data)
}

// ---------------------------------------------------------------------------
// global average pooling
// ---------------------------------------------------------------------------

/// Per-channel spatial mean: `[C, H, W] -> [C]`.
pub fn global_average_pool(feature: &Tensor) -> Result<Tensor> {
    expect_rank(feature, 3, "global_average_pool")?;
    let (c, h, w) = (feature.shape()[0], feature.shape()[1], feature.shape()[2]);
    let n = (h * w) as f64;
    let x = feature.data();
    let mut out = vec![0.0; c];
    for (ci, out_v) in out.iter_mut().enumerate() {
        let slice = &x[ci * h * w..(ci + 1) * h * w];
        *out_v = slice.iter().sum::<f64>() / n;
    }
    Tensor::new(&[c], out)
}

/// Backward of global average pooling: spreads each channel gradient evenly
/// over its spatial positions.
pub fn global_average_pool_backward(feature_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if feature_shape.len() != 3 || grad_out.shape() != [feature_shape[0]] {
        return Err(Error::ShapeMismatch {
            op: "global_average_pool_backward",
            expected: format!("[C] gradient for [C, H, W] = {feature_shape:?}"),
            got: format!("{:?}", grad_out.shape()),
        });
    }
    let (c, h, w) = (feature_shape[0], feature_shape[1], feature_shape[2]);
    let scale = 1.0 / (h * w) as f64;
    let mut dx = vec![0.0; c * h * w];
    for ci in 0..c {
        let g = grad_out.data()[ci] * scale;
        for v in &mut dx[ci * h * w..(ci + 1) * h * w] {
            *v = g;
        }
    }
    Tensor::new(feature_shape, dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, DEFAULT_STEP};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Uniform in [-1, -margin] u [margin, 1]: keeps relu kinks and other
    /// zero-crossings at a safe distance from the finite-difference step.
    fn away_from_zero(rng: &mut StdRng, margin: f64) -> f64 {
        let v = rng.gen_range(margin..1.0);
        if rng.gen::<bool>() {
            v
        } else {
            -v
        }
    }

    fn random_tensor(rng: &mut StdRng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| away_from_zero(rng, 1e-3))
    }

    /// Scalar probe: weighted sum of all outputs with fixed weights, turning
    /// a vector-valued op into a gradient-checkable function.
    fn probe_weights(rng: &mut StdRng, numel: usize) -> Tensor {
        Tensor::from_fn(&[numel], |_| rng.gen::<f64>() + 0.5)
    }

    fn weighted_sum(out: &Tensor, weights: &Tensor) -> f64 {
        out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    }

    // ----- conv2d -----

    #[test]
    fn conv_identity_kernel() {
        let mut rng = StdRng::seed_from_u64(1);
        let x = random_tensor(&mut rng, &[1, 5, 5]);
        let k = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &k, &b, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_hand_sum() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &k, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn conv_zero_input_yields_bias() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let mut rng = StdRng::seed_from_u64(2);
        let k = random_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = Tensor::new(&[3], vec![0.5, -1.5, 2.0]).unwrap();
        let y = conv2d(&x, &k, &b, 1, 1).unwrap();
        for co in 0..3 {
            for &v in &y.data()[co * 16..(co + 1) * 16] {
                assert_eq!(v, b.data()[co]);
            }
        }
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[3, 5, 3, 3]);
        let b = Tensor::zeros(&[3]);
        let err = conv2d(&x, &k, &b, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 4, 4]") && msg.contains("[3, 5, 3, 3]"), "{msg}");
    }

    #[test]
    fn conv_output_extent_formula() {
        // 7x7, kernel 3, stride 2, pad 1 -> floor((7+2-3)/2)+1 = 4.
        let x = Tensor::zeros(&[1, 7, 7]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &k, &b, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4]);
    }

    #[test]
    fn conv_is_linear_in_input() {
        let mut rng = StdRng::seed_from_u64(3);
        let k = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let b = Tensor::zeros(&[2]);
        for _ in 0..20 {
            let x = random_tensor(&mut rng, &[2, 5, 5]);
            let y = random_tensor(&mut rng, &[2, 5, 5]);
            let (alpha, beta) = (rng.gen::<f64>() * 3.0 - 1.5, rng.gen::<f64>() * 3.0 - 1.5);
            let mixed = Tensor::from_fn(&[2, 5, 5], |i| alpha * x.data()[i] + beta * y.data()[i]);
            let lhs = conv2d(&mixed, &k, &b, 1, 1).unwrap();
            let cx = conv2d(&x, &k, &b, 1, 1).unwrap();
            let cy = conv2d(&y, &k, &b, 1, 1).unwrap();
            for i in 0..lhs.numel() {
                let rhs = alpha * cx.data()[i] + beta * cy.data()[i];
                assert!((lhs.data()[i] - rhs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = StdRng::seed_from_u64(100 + seed);
            let x = random_tensor(&mut rng, &[2, 6, 6]);
            let k = random_tensor(&mut rng, &[3, 2, 3, 3]);
            let b = random_tensor(&mut rng, &[3]);
            let out = conv2d(&x, &k, &b, 1, 1).unwrap();
            let w = probe_weights(&mut rng, out.numel());
            let w_t = w.reshaped(out.shape()).unwrap();
            let g = conv2d_backward(&x, &k, 1, 1, &w_t).unwrap();

            let ex = grad_check(
                |t| Ok(weighted_sum(&conv2d(t, &k, &b, 1, 1)?, &w)),
                &x,
                g.input.data(),
                DEFAULT_STEP,
            )
            .unwrap();
            let ek = grad_check(
                |t| Ok(weighted_sum(&conv2d(&x, t, &b, 1, 1)?, &w)),
                &k,
                g.kernels.data(),
                DEFAULT_STEP,
            )
            .unwrap();
            let eb = grad_check(
                |t| Ok(weighted_sum(&conv2d(&x, &k, t, 1, 1)?, &w)),
                &b,
                g.bias.data(),
                DEFAULT_STEP,
            )
            .unwrap();
            assert!(ex <= 1e-4 && ek <= 1e-4 && eb <= 1e-4, "seed {seed}: {ex} {ek} {eb}");
        }
    }

    // ----- max_pool2d -----

    #[test]
    fn pool_hand_max() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = max_pool2d(&x, 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn pool_constant_input() {
        let x = Tensor::filled(&[2, 4, 4], 0.7);
        let y = max_pool2d(&x, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn pool_window_one_is_identity() {
        let mut rng = StdRng::seed_from_u64(4);
        let x = random_tensor(&mut rng, &[2, 3, 3]);
        let y = max_pool2d(&x, 1, 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn pool_window_too_large_errors() {
        let x = Tensor::zeros(&[1, 2, 2]);
        assert!(matches!(
            max_pool2d(&x, 3, 1),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn pool_tie_routes_to_first_in_row_major_order() {
        let x = Tensor::new(&[1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let (_, idx) = max_pool2d_with_indices(&x, 2, 2).unwrap();
        assert_eq!(idx, vec![0]);
        let g = Tensor::new(&[1, 1, 1], vec![2.0]).unwrap();
        let dx = max_pool2d_backward(&[1, 2, 2], &idx, &g).unwrap();
        assert_eq!(dx.data(), &[2.0, 0.0, 0.0, 0.0]);
    }

    /// Margin between the best and second-best value of every pooling window.
    fn pool_tie_margin(x: &Tensor, window: usize, stride: usize) -> f64 {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut min_margin = f64::INFINITY;
        for ci in 0..c {
            for oy in 0..=(h - window) / stride {
                for ox in 0..=(w - window) / stride {
                    let mut vals = Vec::new();
                    for ky in 0..window {
                        for kx in 0..window {
                            vals.push(x.at(&[ci, oy * stride + ky, ox * stride + kx]));
                        }
                    }
                    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    min_margin = min_margin.min(vals[0] - vals[1]);
                }
            }
        }
        min_margin
    }

    #[test]
    fn pool_gradient_matches_finite_differences() {
        let mut checked = 0;
        let mut seed = 200u64;
        while checked < 10 {
            let mut rng = StdRng::seed_from_u64(seed);
            seed += 1;
            let x = random_tensor(&mut rng, &[2, 6, 6]);
            if pool_tie_margin(&x, 2, 2) < 1e-3 {
                continue; // too close to a tie for finite differences
            }
            let out = max_pool2d(&x, 2, 2).unwrap();
            let w = probe_weights(&mut rng, out.numel());
            let w_t = w.reshaped(out.shape()).unwrap();
            let (_, idx) = max_pool2d_with_indices(&x, 2, 2).unwrap();
            let dx = max_pool2d_backward(x.shape(), &idx, &w_t).unwrap();
            let err = grad_check(
                |t| Ok(weighted_sum(&max_pool2d(t, 2, 2)?, &w)),
                &x,
                dx.data(),
                DEFAULT_STEP,
            )
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
            checked += 1;
        }
    }

    // ----- relu -----

    #[test]
    fn relu_sign_cases() {
        let x = Tensor::new(&[3], vec![-1.0, 2.0, 0.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0, 0.0]);

        let pos = Tensor::new(&[3], vec![0.5, 1.0, 9.0]).unwrap();
        assert_eq!(relu(&pos).data(), pos.data());

        let neg = Tensor::new(&[3], vec![-0.5, -1.0, -9.0]).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_backward_zero_at_kink() {
        let x = Tensor::new(&[3], vec![-1.0, 0.0, 1.0]).unwrap();
        let g = Tensor::filled(&[3], 3.0);
        let dx = relu_backward(&x, &g).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn relu_gradient_matches_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = StdRng::seed_from_u64(300 + seed);
            let x = random_tensor(&mut rng, &[2, 4, 4]); // margin 1e-3 from the kink
            let w = probe_weights(&mut rng, x.numel());
            let w_t = w.reshaped(x.shape()).unwrap();
            let dx = relu_backward(&x, &w_t).unwrap();
            let err = grad_check(
                |t| Ok(weighted_sum(&relu(t), &w)),
                &x,
                dx.data(),
                DEFAULT_STEP,
            )
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    // ----- linear -----

    #[test]
    fn linear_identity_and_zero_weight() {
        let x = Tensor::new(&[2], vec![3.0, -4.0]).unwrap();
        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero_b = Tensor::zeros(&[2]);
        assert_eq!(linear(&x, &eye, &zero_b).unwrap().data(), x.data());

        let zero_w = Tensor::zeros(&[2, 2]);
        let b = Tensor::new(&[2], vec![0.25, -0.5]).unwrap();
        assert_eq!(linear(&x, &zero_w, &b).unwrap().data(), b.data());
    }

    #[test]
    fn linear_hand_matvec() {
        let w = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = Tensor::new(&[2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[2]);
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn linear_extent_mismatch_errors() {
        let x = Tensor::zeros(&[3]);
        let w = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2]);
        assert!(matches!(
            linear(&x, &w, &b),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = StdRng::seed_from_u64(400 + seed);
            let x = random_tensor(&mut rng, &[5]);
            let w = random_tensor(&mut rng, &[3, 5]);
            let b = random_tensor(&mut rng, &[3]);
            let probe = probe_weights(&mut rng, 3);
            let g = linear_backward(&x, &w, &probe).unwrap();

            let ex = grad_check(
                |t| Ok(weighted_sum(&linear(t, &w, &b)?, &probe)),
                &x,
                g.input.data(),
                DEFAULT_STEP,
            )
            .unwrap();
            let ew = grad_check(
                |t| Ok(weighted_sum(&linear(&x, t, &b)?, &probe)),
                &w,
                g.weight.data(),
                DEFAULT_STEP,
            )
            .unwrap();
            let eb = grad_check(
                |t| Ok(weighted_sum(&linear(&x, &w, t)?, &probe)),
                &b,
                g.bias.data(),
                DEFAULT_STEP,
            )
            .unwrap();
            assert!(ex <= 1e-4 && ew <= 1e-4 && eb <= 1e-4, "seed {seed}");
        }
    }

    // ----- softmax / cross-entropy -----

    #[test]
    fn softmax_symmetry_cases() {
        let p = softmax(&Tensor::new(&[2], vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);

        let p = softmax(&Tensor::filled(&[3], 4.2)).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form_ratio() {
        let p = softmax(&Tensor::new(&[2], vec![1.0f64.ln(), 3.0f64.ln()]).unwrap()).unwrap();
        assert!((p.data()[0] - 0.25).abs() < 1e-12);
        assert!((p.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_and_shift_invariant() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(2..8);
            let x = Tensor::from_fn(&[n], |_| rng.gen::<f64>() * 20.0 - 10.0);
            let p = softmax(&x).unwrap();
            let sum: f64 = p.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));

            let c = rng.gen::<f64>() * 100.0 - 50.0;
            let shifted = x.map(|v| v + c);
            let ps = softmax(&shifted).unwrap();
            for (a, b) in p.data().iter().zip(ps.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rejects_non_finite_and_short_input() {
        assert!(matches!(
            softmax(&Tensor::new(&[2], vec![f64::INFINITY, 0.0]).unwrap()),
            Err(Error::NonFinite { .. })
        ));
        assert!(softmax(&Tensor::new(&[1], vec![0.0]).unwrap()).is_err());
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = StdRng::seed_from_u64(500 + seed);
            let x = Tensor::from_fn(&[5], |_| rng.gen::<f64>() * 4.0 - 2.0);
            let w = probe_weights(&mut rng, 5);
            let p = softmax(&x).unwrap();
            let dx = softmax_backward(&p, &w).unwrap();
            let err = grad_check(
                |t| Ok(weighted_sum(&softmax(t)?, &w)),
                &x,
                dx.data(),
                DEFAULT_STEP,
            )
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn cross_entropy_reference_values() {
        // Perfect prediction: loss ~ 0.
        let eps = 1e-9;
        let p = Tensor::new(&[2], vec![1.0 - eps, eps]).unwrap();
        let y = Tensor::new(&[2], vec![1.0, 0.0]).unwrap();
        assert!(cross_entropy(&p, &y).unwrap() < 1e-8);

        // Uniform over two classes: ln 2.
        let p = Tensor::new(&[2], vec![0.5, 0.5]).unwrap();
        let loss = cross_entropy(&p, &y).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        // Probability 0.25 at the true class: ln 4.
        let p = Tensor::new(&[4], vec![0.25, 0.25, 0.25, 0.25]).unwrap();
        let y = Tensor::new(&[4], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let loss = cross_entropy(&p, &y).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_floor_never_panics() {
        let p = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        let y = Tensor::new(&[2], vec![1.0, 0.0]).unwrap();
        let loss = cross_entropy(&p, &y).unwrap();
        assert!(loss.is_finite());
        assert!((loss - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_nonnegative_zero_iff_certain() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..200 {
            let n = rng.gen_range(2..6);
            let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            let p = Tensor::new(&[n], raw.iter().map(|v| v / sum).collect()).unwrap();
            let class = rng.gen_range(0..n);
            let mut y = vec![0.0; n];
            y[class] = 1.0;
            let y = Tensor::new(&[n], y).unwrap();
            let loss = cross_entropy(&p, &y).unwrap();
            assert!(loss >= 0.0);
            assert_eq!(loss == 0.0, p.data()[class] >= 1.0);
        }
    }

    #[test]
    fn cross_entropy_rejects_malformed_labels() {
        let p = Tensor::new(&[2], vec![0.5, 0.5]).unwrap();
        assert!(cross_entropy(&p, &Tensor::new(&[2], vec![1.0, 1.0]).unwrap()).is_err());
        assert!(cross_entropy(&p, &Tensor::new(&[2], vec![0.0, 0.0]).unwrap()).is_err());
        assert!(cross_entropy(&p, &Tensor::new(&[2], vec![0.5, 0.5]).unwrap()).is_err());
    }

    #[test]
    fn batch_cross_entropy_averages() {
        let p1 = Tensor::new(&[2], vec![0.5, 0.5]).unwrap();
        let p2 = Tensor::new(&[2], vec![0.25, 0.75]).unwrap();
        let loss = cross_entropy_batch(&[p1, p2], &[0, 0]).unwrap();
        let want = (std::f64::consts::LN_2 + 4.0f64.ln()) / 2.0;
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn fused_softmax_ce_gradient_is_probs_minus_onehot() {
        // Two independent code routes must agree within 1e-10: the chained
        // softmax_backward(cross_entropy_backward(..)) path and sigma - y.
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(2..7);
            let x = Tensor::from_fn(&[n], |_| rng.gen::<f64>() * 8.0 - 4.0);
            let class = rng.gen_range(0..n);
            let p = softmax(&x).unwrap();
            let mut y = vec![0.0; n];
            y[class] = 1.0;
            let y_t = Tensor::new(&[n], y).unwrap();

            let dp = cross_entropy_backward(&p, &y_t).unwrap();
            let chained = softmax_backward(&p, &dp).unwrap();
            let fused = softmax_cross_entropy_backward(&p, class).unwrap();
            for (a, b) in chained.data().iter().zip(fused.data()) {
                assert!((a - b).abs() < 1e-10, "chained {a} vs fused {b}");
            }
        }
    }

    #[test]
    fn fused_softmax_ce_matches_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = StdRng::seed_from_u64(600 + seed);
            let x = Tensor::from_fn(&[6], |_| rng.gen::<f64>() * 6.0 - 3.0);
            let class = rng.gen_range(0..6);
            let out = softmax_cross_entropy(&x, class).unwrap();
            let dx = softmax_cross_entropy_backward(&out.probs, class).unwrap();
            let err = grad_check(
                |t| Ok(softmax_cross_entropy(t, class)?.loss),
                &x,
                dx.data(),
                DEFAULT_STEP,
            )
            .unwrap();
            assert!(err <= 1e-6, "seed {seed}: {err}");
        }
    }

    // ----- global average pooling -----

    #[test]
    fn gap_constant_and_hand_mean() {
        let f = Tensor::filled(&[3, 4, 4], 1.25);
        let g = global_average_pool(&f).unwrap();
        assert!(g.data().iter().all(|&v| (v - 1.25).abs() < 1e-15));

        let f = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = global_average_pool(&f).unwrap();
        assert_eq!(g.data(), &[2.5]);
    }

    #[test]
    fn gap_is_linear() {
        let mut rng = StdRng::seed_from_u64(8);
        let f = random_tensor(&mut rng, &[2, 3, 3]);
        let alpha = 2.75;
        let scaled = f.map(|v| alpha * v);
        let g = global_average_pool(&f).unwrap();
        let gs = global_average_pool(&scaled).unwrap();
        for (a, b) in g.data().iter().zip(gs.data()) {
            assert!((alpha * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_gradient_matches_finite_differences() {
        for seed in 0..10u64 {
            let mut rng = StdRng::seed_from_u64(700 + seed);
            let f = random_tensor(&mut rng, &[3, 4, 4]);
            let w = probe_weights(&mut rng, 3);
            let dx = global_average_pool_backward(f.shape(), &w).unwrap();
            let err = grad_check(
                |t| Ok(weighted_sum(&global_average_pool(t)?, &w)),
                &f,
                dx.data(),
                DEFAULT_STEP,
            )
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }
}
