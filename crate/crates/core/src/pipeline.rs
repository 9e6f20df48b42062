//! The multi-branch training pipeline.
//!
//! For s = 1..S: initialize a branch (scale 1 from seeded He init, later
//! scales from the previous branch's trained parameters), train it with
//! minibatch momentum SGD on the current image set, record predictions, then
//! build the next image set by adding the branch's own per-image attention
//! maps scaled by the next weight. Scale 1 always consumes the raw dataset.
//! Branch predictions on the eval split are fused by majority voting.
//!
//! Seed derivations (all deterministic):
//! - scale s shuffles with base `seed + s`; epoch e uses a generator seeded
//!   with `mix(base, e)`;
//! - chained init draws scale 1 from `seed`;
//! - fresh-init mode (the ablation baseline) draws scale s from `seed + s`;
//! - ablation repeat r uses `seed + r` for both init and shuffling, so a
//!   fresh-init zero-weight pipeline and the ablation repeats are the same
//!   computation.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::attention::{attention_map, enhance_batch, normalize_attention, upsample_attention, AttentionMap};
use crate::backbone::{
    clone_into_next_branch, feature_extract, init_backbone, loss_and_grads, predict, BackboneSpec,
    BranchParams,
};
use crate::config::PipelineConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_labels, mean_report, MetricReport};
use crate::optim::{sgd_step, SgdHyper, VelocityState};
use crate::tensor::Tensor;

/// splitmix64 finalizer; decorrelates nearby (base, stream) pairs.
fn mix(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// branch training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub hyper: SgdHyper,
    /// Base seed for shuffling; epoch e shuffles with `mix(shuffle_base, e)`.
    pub shuffle_base: u64,
    /// Scale index carried into training errors.
    pub scale: usize,
}

impl TrainParams {
    pub fn from_config(cfg: &PipelineConfig, scale: usize) -> Self {
        TrainParams {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            hyper: SgdHyper {
                learning_rate: cfg.learning_rate,
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
            },
            shuffle_base: cfg.seed.wrapping_add(scale as u64),
            scale,
        }
    }
}

#[derive(Debug)]
pub struct TrainedBranch {
    pub params: BranchParams,
    /// Mean cross-entropy over the final epoch; `None` when `epochs == 0`.
    pub final_loss: Option<f64>,
}

/// Minibatch momentum-SGD training of one branch. Per-image gradients within
/// a batch are computed in parallel but summed in sample order, so results do
/// not depend on the worker count.
pub fn train_branch(
    images: &[Tensor],
    classes: &[usize],
    spec: &BackboneSpec,
    init: BranchParams,
    tp: &TrainParams,
) -> Result<TrainedBranch> {
    if images.is_empty() || images.len() != classes.len() {
        return Err(Error::invalid(format!(
            "train_branch: {} images vs {} labels",
            images.len(),
            classes.len()
        )));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= spec.classes) {
        return Err(Error::invalid(format!(
            "train_branch: class {c} out of range for {} classes",
            spec.classes
        )));
    }

    let mut params = init;
    let mut velocity = VelocityState::new();
    let n = images.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut final_loss = None;

    for epoch in 0..tp.epochs {
        let mut rng = StdRng::seed_from_u64(mix(tp.shuffle_base, epoch as u64));
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        for batch in order.chunks(tp.batch_size) {
            let grads = batch
                .par_iter()
                .map(|&i| loss_and_grads(&images[i], classes[i], spec, &params))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| training_error(e, epoch, tp.scale))?;

            params.zero_grads();
            let mut tensors = params.tensors_mut();
            for sg in &grads {
                epoch_loss += sg.loss;
                for (t, g) in tensors.iter_mut().zip(&sg.params.grads) {
                    t.accumulate_grad(g.data())?;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for t in tensors.iter_mut() {
                for v in t.grad_mut().expect("grads just written") {
                    *v *= inv;
                }
            }
            sgd_step(&mut tensors, &mut velocity, &tp.hyper)
                .map_err(|e| training_error(e, epoch, tp.scale))?;
        }

        let mean_loss = epoch_loss / n as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                scale: tp.scale,
                reason: format!("mean loss is {mean_loss}"),
            });
        }
        final_loss = Some(mean_loss);
    }

    Ok(TrainedBranch { params, final_loss })
}

fn training_error(e: Error, epoch: usize, scale: usize) -> Error {
    match e {
        Error::NonFinite { op, detail } => Error::Training {
            epoch,
            scale,
            reason: format!("{op}: {detail}"),
        },
        other => other,
    }
}

// ---------------------------------------------------------------------------
// prediction and attention helpers
// ---------------------------------------------------------------------------

/// Probabilities and argmax labels for a batch, parallel with order preserved.
pub fn predict_batch(
    images: &[Tensor],
    spec: &BackboneSpec,
    params: &BranchParams,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let probs = images
        .par_iter()
        .map(|x| predict(x, spec, params).map(|p| p.into_data()))
        .collect::<Result<Vec<_>>>()?;
    let labels = probs.iter().map(|p| argmax(p)).collect();
    Ok((labels, probs))
}

/// Per-image attention at image resolution: raw map from the branch's feature
/// block, min-max normalized at feature resolution, bilinearly upsampled.
pub fn attention_batch(
    images: &[Tensor],
    spec: &BackboneSpec,
    params: &BranchParams,
    scale: usize,
) -> Result<Vec<AttentionMap>> {
    images
        .par_iter()
        .map(|x| {
            let f = feature_extract(x, spec, params)?;
            let raw = attention_map(&f, scale)?;
            let norm = normalize_attention(&raw);
            upsample_attention(&norm, x.shape()[2], x.shape()[1])
        })
        .collect()
}

// ---------------------------------------------------------------------------
// majority voting
// ---------------------------------------------------------------------------

/// Fuse S branches' predictions per sample: modal label wins; ties break by
/// the highest softmax probability summed across branches, then by the lowest
/// class index. Invariant under branch permutation.
pub fn majority_vote(labels: &[Vec<usize>], probs: &[Vec<Vec<f64>>]) -> Result<Vec<usize>> {
    if labels.is_empty() || labels.len() != probs.len() {
        return Err(Error::ShapeMismatch {
            op: "majority_vote",
            expected: format!("{} probability vectors", labels.len()),
            got: format!("{}", probs.len()),
        });
    }
    let n = labels[0].len();
    for (b, (l, p)) in labels.iter().zip(probs).enumerate() {
        if l.len() != n || p.len() != n {
            return Err(Error::ShapeMismatch {
                op: "majority_vote",
                expected: format!("{n} samples per branch"),
                got: format!("branch {b}: {} labels, {} prob vectors", l.len(), p.len()),
            });
        }
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = probs[0][0].len();
    let mut fused = Vec::with_capacity(n);
    for i in 0..n {
        let mut votes = vec![0usize; m];
        let mut summed = vec![0.0f64; m];
        for b in 0..labels.len() {
            let label = labels[b][i];
            if label >= m || probs[b][i].len() != m {
                return Err(Error::invalid(format!(
                    "majority_vote: branch {b} sample {i} inconsistent with {m} classes"
                )));
            }
            votes[label] += 1;
            for (s, &p) in summed.iter_mut().zip(&probs[b][i]) {
                *s += p;
            }
        }
        let mut best = 0;
        for c in 1..m {
            if votes[c] > votes[best] || (votes[c] == votes[best] && summed[c] > summed[best]) {
                best = c;
            }
        }
        fused.push(best);
    }
    Ok(fused)
}

// ---------------------------------------------------------------------------
// the pipeline
// ---------------------------------------------------------------------------

/// How each scale's parameters are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitPolicy {
    /// Scale 1 from seeded init, later scales from the previous branch.
    Chained,
    /// Every scale from its own seeded init; with zero weights this is the
    /// independent-repeats ablation baseline.
    Fresh,
}

pub struct ScaleOutcome {
    /// 1-based scale index.
    pub scale: usize,
    pub params: BranchParams,
    pub final_loss: Option<f64>,
    pub train_labels: Vec<usize>,
    pub train_probs: Vec<Vec<f64>>,
    pub eval_labels: Vec<usize>,
    pub eval_probs: Vec<Vec<f64>>,
    /// Normalized attention at image resolution for the eval split.
    pub eval_attention: Vec<AttentionMap>,
    /// Eval-split metrics.
    pub report: MetricReport,
}

pub struct PipelineResult {
    pub spec: BackboneSpec,
    pub scales: Vec<ScaleOutcome>,
    pub fused_labels: Vec<usize>,
    pub fused_report: MetricReport,
}

fn dataset_channels(ds: &Dataset, cfg: &PipelineConfig, what: &str) -> Result<usize> {
    if ds.is_empty() {
        return Err(Error::invalid(format!("{what} split is empty")));
    }
    let c = ds.images[0].shape()[0];
    let want = [c, cfg.image_size, cfg.image_size];
    for (i, img) in ds.images.iter().enumerate() {
        if img.shape() != want {
            return Err(Error::ShapeMismatch {
                op: "run_pipeline",
                expected: format!("{want:?} ({what} split)"),
                got: format!("image {i}: {:?}", img.shape()),
            });
        }
    }
    Ok(c)
}

pub fn run_pipeline(train: &Dataset, eval: &Dataset, cfg: &PipelineConfig) -> Result<PipelineResult> {
    run_pipeline_with(train, eval, cfg, InitPolicy::Chained)
}

pub fn run_pipeline_with(
    train: &Dataset,
    eval: &Dataset,
    cfg: &PipelineConfig,
    policy: InitPolicy,
) -> Result<PipelineResult> {
    cfg.validate()?;
    let channels = dataset_channels(train, cfg, "train")?;
    let eval_channels = dataset_channels(eval, cfg, "eval")?;
    if channels != eval_channels || train.num_classes != eval.num_classes {
        return Err(Error::invalid(format!(
            "train/eval splits disagree: {channels} vs {eval_channels} channels, {} vs {} classes",
            train.num_classes, eval.num_classes
        )));
    }
    if cfg.positive_class >= train.num_classes {
        return Err(Error::ConfigValidation {
            field: "positive_class",
            reason: format!(
                "{} out of range for {} classes",
                cfg.positive_class, train.num_classes
            ),
        });
    }
    let spec = cfg.backbone.build(cfg.image_size, channels, train.num_classes);
    spec.validate()?;

    // Scale 1 trains on the raw images; later scales on enhanced copies.
    let mut train_images = train.images.clone();
    let mut eval_images = eval.images.clone();
    let mut outcomes: Vec<ScaleOutcome> = Vec::with_capacity(cfg.scales);

    for s in 1..=cfg.scales {
        let init = match (policy, outcomes.last()) {
            (InitPolicy::Chained, None) => init_backbone(&spec, cfg.seed)?,
            (InitPolicy::Chained, Some(prev)) => clone_into_next_branch(&prev.params),
            (InitPolicy::Fresh, _) => init_backbone(&spec, cfg.seed.wrapping_add(s as u64))?,
        };
        let tp = TrainParams::from_config(cfg, s);
        let trained = train_branch(&train_images, &train.labels, &spec, init, &tp)
            .map_err(|e| annotate_scale(e, s))?;

        let (train_labels, train_probs) = predict_batch(&train_images, &spec, &trained.params)?;
        let (eval_labels, eval_probs) = predict_batch(&eval_images, &spec, &trained.params)?;
        let report = evaluate_labels(
            &eval.labels,
            &eval_labels,
            eval.num_classes,
            cfg.positive_class,
        )?;
        let eval_attention = attention_batch(&eval_images, &spec, &trained.params, s)?;

        // Build the next scale's inputs with this branch's maps. Weight 0
        // skips enhancement entirely, keeping the images bit-identical.
        if s < cfg.scales {
            let lambda = cfg.lambdas[s];
            if lambda != 0.0 {
                let train_maps = attention_batch(&train_images, &spec, &trained.params, s)?;
                train_images = enhance_batch(&train_images, &train_maps, lambda)?;
                eval_images = enhance_batch(&eval_images, &eval_attention, lambda)?;
            }
        }

        outcomes.push(ScaleOutcome {
            scale: s,
            params: trained.params,
            final_loss: trained.final_loss,
            train_labels,
            train_probs,
            eval_labels,
            eval_probs,
            eval_attention,
            report,
        });
    }

    let per_scale_labels: Vec<Vec<usize>> =
        outcomes.iter().map(|o| o.eval_labels.clone()).collect();
    let per_scale_probs: Vec<Vec<Vec<f64>>> =
        outcomes.iter().map(|o| o.eval_probs.clone()).collect();
    let fused_labels = majority_vote(&per_scale_labels, &per_scale_probs)?;
    let fused_report = evaluate_labels(
        &eval.labels,
        &fused_labels,
        eval.num_classes,
        cfg.positive_class,
    )?;

    Ok(PipelineResult {
        spec,
        scales: outcomes,
        fused_labels,
        fused_report,
    })
}

fn annotate_scale(e: Error, scale: usize) -> Error {
    match e {
        Error::Training { epoch, reason, .. } => Error::Training { epoch, scale, reason },
        other => other,
    }
}

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------

pub struct RepeatOutcome {
    pub seed: u64,
    pub eval_labels: Vec<usize>,
    pub eval_probs: Vec<Vec<f64>>,
    pub report: MetricReport,
}

/// Train independent single-branch models on the raw images, one per seed.
/// Each repeat uses its seed for both init and shuffling.
pub fn ablation_repeats(
    train: &Dataset,
    eval: &Dataset,
    cfg: &PipelineConfig,
    seeds: &[u64],
) -> Result<Vec<RepeatOutcome>> {
    let channels = dataset_channels(train, cfg, "train")?;
    let spec = cfg.backbone.build(cfg.image_size, channels, train.num_classes);
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let init = init_backbone(&spec, seed)?;
        let tp = TrainParams {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            hyper: SgdHyper {
                learning_rate: cfg.learning_rate,
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
            },
            shuffle_base: seed,
            scale: 1,
        };
        let trained = train_branch(&train.images, &train.labels, &spec, init, &tp)?;
        let (eval_labels, eval_probs) = predict_batch(&eval.images, &spec, &trained.params)?;
        let report = evaluate_labels(
            &eval.labels,
            &eval_labels,
            eval.num_classes,
            cfg.positive_class,
        )?;
        out.push(RepeatOutcome {
            seed,
            eval_labels,
            eval_probs,
            report,
        });
    }
    Ok(out)
}

pub struct AblationOutcome {
    pub repeats: Vec<RepeatOutcome>,
    /// Mean of the repeat metrics, component-wise.
    pub average: MetricReport,
    pub boosting_labels: Vec<usize>,
    /// Metrics of the repeats' majority-vote fusion.
    pub boosting: MetricReport,
    /// The full pipeline on the same data, for the Scale/Fused rows.
    pub pipeline: PipelineResult,
}

/// The ablation protocol: `repeats` independent baseline trainings (seeds
/// `seed+1 .. seed+repeats`, raw images) reported as their metric average and
/// their majority-vote fusion, alongside the chained pipeline itself.
pub fn run_ablation(
    train: &Dataset,
    eval: &Dataset,
    cfg: &PipelineConfig,
    repeats: usize,
) -> Result<AblationOutcome> {
    if repeats < 2 {
        return Err(Error::invalid(format!("ablation needs >= 2 repeats, got {repeats}")));
    }
    let seeds: Vec<u64> = (1..=repeats as u64).map(|r| cfg.seed.wrapping_add(r)).collect();
    let repeats = ablation_repeats(train, eval, cfg, &seeds)?;
    summarize_ablation(train, eval, cfg, repeats)
}

/// Score a set of already-trained branches on a dataset, replaying the same
/// enhancement chain the pipeline applies at training time: branch s predicts
/// on X_s, its attention maps build X_{s+1}. No labels feed the enhancement.
/// Training-split fields of the outcomes are left empty.
pub fn evaluate_branches(
    data: &Dataset,
    cfg: &PipelineConfig,
    spec: &BackboneSpec,
    branches: &[BranchParams],
) -> Result<PipelineResult> {
    if branches.is_empty() {
        return Err(Error::invalid("evaluate_branches: no checkpoints given"));
    }
    if branches.len() != cfg.lambdas.len() {
        return Err(Error::ShapeMismatch {
            op: "evaluate_branches",
            expected: format!("{} weights for {} branches", branches.len(), branches.len()),
            got: format!("{}", cfg.lambdas.len()),
        });
    }
    let mut images = data.images.clone();
    let mut outcomes = Vec::with_capacity(branches.len());
    for (idx, params) in branches.iter().enumerate() {
        let s = idx + 1;
        let (labels, probs) = predict_batch(&images, spec, params)?;
        let report = evaluate_labels(&data.labels, &labels, data.num_classes, cfg.positive_class)?;
        let eval_attention = attention_batch(&images, spec, params, s)?;
        if s < branches.len() {
            let lambda = cfg.lambdas[s];
            if lambda != 0.0 {
                images = enhance_batch(&images, &eval_attention, lambda)?;
            }
        }
        outcomes.push(ScaleOutcome {
            scale: s,
            params: clone_into_next_branch(params),
            final_loss: None,
            train_labels: Vec::new(),
            train_probs: Vec::new(),
            eval_labels: labels,
            eval_probs: probs,
            eval_attention,
            report,
        });
    }
    let labels: Vec<Vec<usize>> = outcomes.iter().map(|o| o.eval_labels.clone()).collect();
    let probs: Vec<Vec<Vec<f64>>> = outcomes.iter().map(|o| o.eval_probs.clone()).collect();
    let fused_labels = majority_vote(&labels, &probs)?;
    let fused_report =
        evaluate_labels(&data.labels, &fused_labels, data.num_classes, cfg.positive_class)?;
    Ok(PipelineResult {
        spec: spec.clone(),
        scales: outcomes,
        fused_labels,
        fused_report,
    })
}

/// Assemble an `AblationOutcome` from already-trained repeats. Split out so
/// degenerate repeat sets (identical seeds) are directly testable.
pub fn summarize_ablation(
    train: &Dataset,
    eval: &Dataset,
    cfg: &PipelineConfig,
    repeats: Vec<RepeatOutcome>,
) -> Result<AblationOutcome> {
    let reports: Vec<MetricReport> = repeats.iter().map(|r| r.report).collect();
    let average = mean_report(&reports);
    let labels: Vec<Vec<usize>> = repeats.iter().map(|r| r.eval_labels.clone()).collect();
    let probs: Vec<Vec<Vec<f64>>> = repeats.iter().map(|r| r.eval_probs.clone()).collect();
    let boosting_labels = majority_vote(&labels, &probs)?;
    let boosting = evaluate_labels(
        &eval.labels,
        &boosting_labels,
        eval.num_classes,
        cfg.positive_class,
    )?;
    let pipeline = run_pipeline(train, eval, cfg)?;
    Ok(AblationOutcome {
        repeats,
        average,
        boosting_labels,
        boosting,
        pipeline,
    })
}
