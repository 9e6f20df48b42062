//! The feature extractor and classification head: a small configurable CNN
//! built from the layer primitives in `ops`.
//!
//! A `BackboneSpec` lists the feature-stage layers and the head widths; a
//! `BranchParams` holds the matching weight tensors. The feature stage maps an
//! image `[C, H, W]` to a feature block `[C', H', W']`; the head flattens that
//! block (channel-major, row-major — the physical layout) and applies linear
//! layers with relu between hidden stages, then softmax.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// One layer of the feature stage. `Linear` is only valid inside the head and
/// is rejected by spec validation when it appears among the feature layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Relu,
    Linear {
        out_features: usize,
    },
    Gap,
}

impl LayerSpec {
    fn validate(&self, index: usize) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidSpec { layer: index, reason });
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return bad(format!(
                        "conv extents must be positive (out_channels={out_channels}, kernel={kernel}, stride={stride})"
                    ));
                }
                if padding >= kernel {
                    return bad(format!("conv padding {padding} must be < kernel {kernel}"));
                }
                Ok(())
            }
            LayerSpec::MaxPool { window, stride } => {
                if window == 0 || stride == 0 {
                    return bad(format!(
                        "maxpool extents must be positive (window={window}, stride={stride})"
                    ));
                }
                Ok(())
            }
            LayerSpec::Linear { out_features } => {
                if out_features == 0 {
                    return bad("linear out_features must be positive".into());
                }
                Ok(())
            }
            LayerSpec::Relu | LayerSpec::Gap => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub input_channels: usize,
    /// Square input images: `input_size` x `input_size`.
    pub input_size: usize,
    pub features: Vec<LayerSpec>,
    /// Hidden widths of the head; each hidden linear is followed by relu.
    pub head_hidden: Vec<usize>,
    /// Output classes M (>= 2).
    pub classes: usize,
    /// Initialization scheme identifier; only He fan-in is implemented.
    pub init: InitScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    HeNormal,
}

impl BackboneSpec {
    /// The default desk-scale backbone: two conv/relu/pool stages with 8 then
    /// 16 channels (3x3 conv, padding 1, 2x2 pool), then a single linear head.
    /// On 32x32 inputs the feature block is 16x8x8.
    pub fn desk(input_size: usize, input_channels: usize, classes: usize) -> Self {
        BackboneSpec {
            input_channels,
            input_size,
            features: vec![
                LayerSpec::Conv {
                    out_channels: 8,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: 2, stride: 2 },
                LayerSpec::Conv {
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: 2, stride: 2 },
            ],
            head_hidden: vec![],
            classes,
            init: InitScheme::HeNormal,
        }
    }

    /// Walk the feature layers and return the resulting `[C, H, W]` block,
    /// erroring on the first layer whose output would be degenerate.
    pub fn feature_shape(&self) -> Result<(usize, usize, usize)> {
        if self.input_channels == 0 || self.input_size == 0 {
            return Err(Error::InvalidSpec {
                layer: 0,
                reason: format!(
                    "input extents must be positive ({}ch, {}px)",
                    self.input_channels, self.input_size
                ),
            });
        }
        let (mut c, mut h, mut w) = (self.input_channels, self.input_size, self.input_size);
        for (i, layer) in self.features.iter().enumerate() {
            layer.validate(i)?;
            match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let oh = ops::conv_out_extent(h, kernel, stride, padding);
                    let ow = ops::conv_out_extent(w, kernel, stride, padding);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => {
                            c = out_channels;
                            h = oh;
                            w = ow;
                        }
                        _ => {
                            return Err(Error::InvalidSpec {
                                layer: i,
                                reason: format!(
                                    "conv collapses spatial extent {h}x{w} below 1 (kernel {kernel}, stride {stride}, padding {padding})"
                                ),
                            })
                        }
                    }
                }
                LayerSpec::MaxPool { window, stride } => {
                    if window > h || window > w {
                        return Err(Error::InvalidSpec {
                            layer: i,
                            reason: format!(
                                "maxpool window {window} exceeds spatial extent {h}x{w}"
                            ),
                        });
                    }
                    h = (h - window) / stride + 1;
                    w = (w - window) / stride + 1;
                }
                LayerSpec::Relu => {}
                LayerSpec::Gap => {
                    h = 1;
                    w = 1;
                }
                LayerSpec::Linear { .. } => {
                    return Err(Error::InvalidSpec {
                        layer: i,
                        reason: "linear layers belong to the head, not the feature stage".into(),
                    })
                }
            }
        }
        Ok((c, h, w))
    }

    /// Head layer widths: flattened feature size, hidden widths, then M.
    pub fn head_widths(&self) -> Result<Vec<usize>> {
        if self.classes < 2 {
            return Err(Error::InvalidSpec {
                layer: self.features.len(),
                reason: format!("head must output at least 2 classes, got {}", self.classes),
            });
        }
        let (c, h, w) = self.feature_shape()?;
        let mut widths = vec![c * h * w];
        widths.extend_from_slice(&self.head_hidden);
        widths.push(self.classes);
        Ok(widths)
    }

    pub fn validate(&self) -> Result<()> {
        self.head_widths().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParam {
    pub kernels: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParam {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// All trainable tensors of one branch: the feature-stage conv parameters and
/// the head linear parameters, in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    pub conv: Vec<ConvParam>,
    pub head: Vec<LinearParam>,
}

impl BranchParams {
    /// Every parameter tensor in a stable order (conv kernels/bias pairs, then
    /// head weight/bias pairs). Checkpoints, SGD and gradient bookkeeping all
    /// rely on this order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.conv {
            out.push(&c.kernels);
            out.push(&c.bias);
        }
        for l in &self.head {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.conv {
            out.push(&mut c.kernels);
            out.push(&mut c.bias);
        }
        for l in &mut self.head {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// He fan-in initialization: weights from N(0, 2/fan_in), zero biases.
/// Deterministic for a given spec and seed.
pub fn init_backbone(spec: &BackboneSpec, seed: u64) -> Result<BranchParams> {
    spec.validate()?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut draw = |shape: &[usize], fan_in: usize| -> Tensor {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        Tensor::from_fn(shape, |_| normal.sample(&mut rng))
    };

    let mut conv = Vec::new();
    let mut in_c = spec.input_channels;
    for layer in &spec.features {
        if let LayerSpec::Conv {
            out_channels,
            kernel,
            ..
        } = *layer
        {
            let fan_in = in_c * kernel * kernel;
            conv.push(ConvParam {
                kernels: draw(&[out_channels, in_c, kernel, kernel], fan_in),
                bias: Tensor::zeros(&[out_channels]),
            });
            in_c = out_channels;
        }
    }

    let widths = spec.head_widths()?;
    let mut head = Vec::new();
    for pair in widths.windows(2) {
        let (d_in, d_out) = (pair[0], pair[1]);
        head.push(LinearParam {
            weight: draw(&[d_out, d_in], d_in),
            bias: Tensor::zeros(&[d_out]),
        });
    }
    Ok(BranchParams { conv, head })
}

/// Deep copy of both parameter groups for the next branch. Gradient slots are
/// dropped; mutating the copy never affects the source.
pub fn clone_into_next_branch(params: &BranchParams) -> BranchParams {
    let strip = |t: &Tensor| {
        let mut c = t.clone();
        c.clear_grad();
        c
    };
    BranchParams {
        conv: params
            .conv
            .iter()
            .map(|c| ConvParam {
                kernels: strip(&c.kernels),
                bias: strip(&c.bias),
            })
            .collect(),
        head: params
            .head
            .iter()
            .map(|l| LinearParam {
                weight: strip(&l.weight),
                bias: strip(&l.bias),
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

fn check_input(x: &Tensor, spec: &BackboneSpec) -> Result<()> {
    let want = [spec.input_channels, spec.input_size, spec.input_size];
    if x.shape() != want {
        return Err(Error::ShapeMismatch {
            op: "feature_extract",
            expected: format!("{want:?}"),
            got: format!("{:?}", x.shape()),
        });
    }
    Ok(())
}

/// Run the feature stage on one image: `[C, H, W] -> [C', H', W']`.
pub fn feature_extract(x: &Tensor, spec: &BackboneSpec, params: &BranchParams) -> Result<Tensor> {
    check_input(x, spec)?;
    let mut cur = x.clone();
    let mut conv_idx = 0;
    for layer in &spec.features {
        cur = match *layer {
            LayerSpec::Conv { stride, padding, .. } => {
                let p = &params.conv[conv_idx];
                conv_idx += 1;
                ops::conv2d(&cur, &p.kernels, &p.bias, stride, padding)?
            }
            LayerSpec::MaxPool { window, stride } => ops::max_pool2d(&cur, window, stride)?,
            LayerSpec::Relu => ops::relu(&cur),
            LayerSpec::Gap => {
                let pooled = ops::global_average_pool(&cur)?;
                let c = pooled.numel();
                pooled.reshaped(&[c, 1, 1])?
            }
            LayerSpec::Linear { .. } => unreachable!("rejected by validation"),
        };
    }
    cur.check_finite("feature_extract")?;
    Ok(cur)
}

/// Batch feature extraction, parallel over images, order preserved.
pub fn feature_extract_batch(
    xs: &[Tensor],
    spec: &BackboneSpec,
    params: &BranchParams,
) -> Result<Vec<Tensor>> {
    xs.par_iter()
        .map(|x| feature_extract(x, spec, params))
        .collect()
}

/// Apply the head and softmax to a feature block: `[C, H, W] -> [M]` probabilities.
pub fn classify(feature: &Tensor, spec: &BackboneSpec, params: &BranchParams) -> Result<Tensor> {
    let flat_len = feature.numel();
    let widths = spec.head_widths()?;
    if widths[0] != flat_len {
        return Err(Error::ShapeMismatch {
            op: "classify",
            expected: format!("feature of {} values", widths[0]),
            got: format!("{:?}", feature.shape()),
        });
    }
    let mut cur = feature.reshaped(&[flat_len])?;
    let last = params.head.len() - 1;
    for (i, l) in params.head.iter().enumerate() {
        cur = ops::linear(&cur, &l.weight, &l.bias)?;
        if i < last {
            cur = ops::relu(&cur);
        }
    }
    ops::softmax(&cur)
}

/// Feature stage + head + softmax on one image.
pub fn predict(x: &Tensor, spec: &BackboneSpec, params: &BranchParams) -> Result<Tensor> {
    let f = feature_extract(x, spec, params)?;
    classify(&f, spec, params)
}

// ---------------------------------------------------------------------------
// training forward/backward
// ---------------------------------------------------------------------------

/// Gradients for every tensor of a `BranchParams`, in `tensors()` order.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub grads: Vec<Tensor>,
}

impl ParamGrads {
    pub fn zeros_like(params: &BranchParams) -> Self {
        ParamGrads {
            grads: params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        debug_assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (av, bv) in a.data_mut().iter_mut().zip(b.data()) {
                *av += bv;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

enum FeatureStep {
    Conv { input: Tensor, conv_idx: usize, stride: usize, padding: usize },
    Pool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Relu { input: Tensor },
    Gap { input_shape: Vec<usize> },
}

/// Loss, probabilities and parameter gradients for a single labelled image.
/// Also returns the gradient w.r.t. the input image (the full network is
/// differentiable end to end).
pub fn loss_and_grads(
    x: &Tensor,
    class: usize,
    spec: &BackboneSpec,
    params: &BranchParams,
) -> Result<SampleGrads> {
    check_input(x, spec)?;
    // Forward through the feature stage, recording what backward needs.
    let mut steps = Vec::with_capacity(spec.features.len());
    let mut cur = x.clone();
    let mut conv_idx = 0;
    for layer in &spec.features {
        match *layer {
            LayerSpec::Conv { stride, padding, .. } => {
                let p = &params.conv[conv_idx];
                let out = ops::conv2d(&cur, &p.kernels, &p.bias, stride, padding)?;
                steps.push(FeatureStep::Conv {
                    input: std::mem::replace(&mut cur, out),
                    conv_idx,
                    stride,
                    padding,
                });
                conv_idx += 1;
            }
            LayerSpec::MaxPool { window, stride } => {
                let (out, argmax) = ops::max_pool2d_with_indices(&cur, window, stride)?;
                steps.push(FeatureStep::Pool {
                    input_shape: cur.shape().to_vec(),
                    argmax,
                });
                cur = out;
            }
            LayerSpec::Relu => {
                let out = ops::relu(&cur);
                steps.push(FeatureStep::Relu {
                    input: std::mem::replace(&mut cur, out),
                });
            }
            LayerSpec::Gap => {
                let pooled = ops::global_average_pool(&cur)?;
                let c = pooled.numel();
                steps.push(FeatureStep::Gap {
                    input_shape: cur.shape().to_vec(),
                });
                cur = pooled.reshaped(&[c, 1, 1])?;
            }
            LayerSpec::Linear { .. } => unreachable!("rejected by validation"),
        }
    }

    // Head forward with caches.
    let feature_shape = cur.shape().to_vec();
    let flat_len = cur.numel();
    let mut h = cur.reshaped(&[flat_len])?;
    let last = params.head.len() - 1;
    let mut head_inputs = Vec::with_capacity(params.head.len());
    let mut head_preacts = Vec::with_capacity(params.head.len());
    for (i, l) in params.head.iter().enumerate() {
        head_inputs.push(h.clone());
        let z = ops::linear(&h, &l.weight, &l.bias)?;
        if i < last {
            head_preacts.push(Some(z.clone()));
            h = ops::relu(&z);
        } else {
            head_preacts.push(None);
            h = z;
        }
    }
    let fused = ops::softmax_cross_entropy(&h, class)?;

    // Backward.
    let mut grads = ParamGrads::zeros_like(params);
    let n_conv = params.conv.len();
    let mut g = ops::softmax_cross_entropy_backward(&fused.probs, class)?;
    for i in (0..params.head.len()).rev() {
        if let Some(z) = &head_preacts[i] {
            g = ops::relu_backward(z, &g)?;
        }
        let lg = ops::linear_backward(&head_inputs[i], &params.head[i].weight, &g)?;
        // tensors() order: conv pairs first, then head pairs.
        let slot = 2 * n_conv + 2 * i;
        grads.grads[slot] = lg.weight;
        grads.grads[slot + 1] = lg.bias;
        g = lg.input;
    }
    let mut g = g.reshaped(&feature_shape)?;
    for step in steps.iter().rev() {
        g = match step {
            FeatureStep::Conv { input, conv_idx, stride, padding } => {
                let cg = ops::conv2d_backward(
                    input,
                    &params.conv[*conv_idx].kernels,
                    *stride,
                    *padding,
                    &g,
                )?;
                let slot = 2 * conv_idx;
                grads.grads[slot] = cg.kernels;
                grads.grads[slot + 1] = cg.bias;
                cg.input
            }
            FeatureStep::Pool { input_shape, argmax } => {
                ops::max_pool2d_backward(input_shape, argmax, &g)?
            }
            FeatureStep::Relu { input } => ops::relu_backward(input, &g)?,
            FeatureStep::Gap { input_shape } => {
                let c = g.numel();
                let flat = g.reshaped(&[c])?;
                ops::global_average_pool_backward(input_shape, &flat)?
            }
        };
    }

    Ok(SampleGrads {
        loss: fused.loss,
        probs: fused.probs,
        params: grads,
        input: g,
    })
}

pub struct SampleGrads {
    pub loss: f64,
    pub probs: Tensor,
    pub params: ParamGrads,
    pub input: Tensor,
}
