//! Losses, Adam, patch sampling, and the segmentation and fusion training loops.

pub mod adam;
pub mod init;
pub mod loss;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use init::{glorot_init, glorot_uniform};
pub use loss::{loss_graph, loss_tonemapped, ms_ssim_graph, LossKind};

use crate::error::{Error, Result};
use crate::fusion_net::{order_masks, zero_masks, FusionInput, FusionNet};
use crate::image::Image;
use crate::metrics::{evaluate_images, Tonemapper};
use crate::segmentation::{diff_segment_stack, SegModel, SegmenterConfig};
use crate::stack_io::{ExposureStack, MotionMask, RadianceImage, Sample};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    TwoStage,
    EndToEnd,
    EndToEndWithSegLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay: f64,
    pub patch: usize,
    pub loss: LossKind,
    pub mode: TrainMode,
    pub seed: u64,
    /// Optimizer steps per epoch; defaults to one pass over the training items.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_per_epoch: Option<usize>,
    /// Where per-epoch checkpoints go.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 4,
            epochs: 200,
            lr_decay: 0.96,
            patch: 128,
            loss: LossKind::L2,
            mode: TrainMode::TwoStage,
            seed: 0,
            steps_per_epoch: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::BadConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::BadConfig(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.patch == 0 || !self.patch.is_multiple_of(4) {
            return Err(Error::BadConfig(format!(
                "patch must be a positive multiple of 4, got {}",
                self.patch
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::BadConfig("batch_size must be >= 1".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::BadConfig("steps_per_epoch must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate during epoch `e` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_psnr_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_psnr_t: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }

    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }
}

/// Identically cropped training example.
#[derive(Clone, Debug)]
pub struct Patch {
    pub x0: usize,
    pub y0: usize,
    pub stack: ExposureStack,
    pub gt: Option<RadianceImage>,
    pub masks: Vec<MotionMask>,
}

/// Crops a `size x size` window, uniform over valid positions, from every
/// frame, the ground truth and every mask.
pub fn sample_patch(
    stack: &ExposureStack,
    gt: Option<&RadianceImage>,
    masks: &[MotionMask],
    size: usize,
    rng: &mut impl Rng,
) -> Result<Patch> {
    let (h, w) = (stack.height(), stack.width());
    if size == 0 || size > h || size > w {
        return Err(Error::PatchTooLarge {
            size,
            height: h,
            width: w,
        });
    }
    let x0 = rng.random_range(0..=w - size);
    let y0 = rng.random_range(0..=h - size);
    Ok(Patch {
        x0,
        y0,
        stack: stack.crop(x0, y0, size, size),
        gt: gt.map(|g| g.crop(x0, y0, size, size)),
        masks: masks.iter().map(|m| m.crop(x0, y0, size, size)).collect(),
    })
}

/// Per-parameter gradient slots, summed in a fixed order.
fn sum_gradients(per_item: Vec<Vec<Option<Tensor>>>, n_params: usize, scale: f64) -> Vec<Option<Tensor>> {
    let mut total: Vec<Option<Tensor>> = vec![None; n_params];
    for item in per_item {
        for (slot, g) in total.iter_mut().zip(item) {
            if let Some(g) = g {
                match slot {
                    Some(acc) => acc.add_assign(&g),
                    None => *slot = Some(g),
                }
            }
        }
    }
    for t in total.iter_mut().flatten() {
        for v in t.data_mut() {
            *v *= scale;
        }
    }
    total
}

fn collect_grads(grads: &mut crate::tensor::Gradients, vars: &[Var]) -> Vec<Option<Tensor>> {
    vars.iter().map(|&v| grads.take(v)).collect()
}

fn guard_finite(g: &Graph, loss: Var) -> Result<()> {
    if g.value(loss).all_finite() {
        return Ok(());
    }
    let bad = g.non_finite_nodes();
    Err(Error::NumericFailure(format!(
        "non-finite values in {}",
        bad.join(", ")
    )))
}

fn steps_per_epoch(cfg: &TrainConfig, items: usize) -> usize {
    cfg.steps_per_epoch
        .unwrap_or_else(|| items.div_ceil(cfg.batch_size).max(1))
}

/// Draws `batch` item indices: a shuffled pass over the items, reshuffled when exhausted.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new(n: usize) -> Self {
        BatchSampler {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

struct SegPair {
    source: Image,
    reference: Image,
    target: MotionMask,
}

fn seg_pairs(samples: &[Sample]) -> Result<Vec<SegPair>> {
    let mut pairs = Vec::new();
    for s in samples {
        let masks = s.gt_masks.as_ref().ok_or_else(|| Error::ModeDataMismatch {
            mode: "segmentation".into(),
            what: format!("{} has no ground-truth masks", s.id),
        })?;
        for m in masks {
            pairs.push(SegPair {
                source: s.stack.image(m.source_index).clone(),
                reference: s.stack.reference().clone(),
                target: m.clone(),
            });
        }
    }
    Ok(pairs)
}

/// Random crop of a segmentation pair.
fn crop_pair(p: &SegPair, size: usize, rng: &mut ChaCha8Rng) -> Result<(Image, Image, MotionMask)> {
    let (h, w) = (p.source.height, p.source.width);
    if size > h || size > w {
        return Err(Error::PatchTooLarge {
            size,
            height: h,
            width: w,
        });
    }
    let x0 = rng.random_range(0..=w - size);
    let y0 = rng.random_range(0..=h - size);
    Ok((
        p.source.crop(x0, y0, size, size),
        p.reference.crop(x0, y0, size, size),
        p.target.crop(x0, y0, size, size),
    ))
}

fn seg_loss_graph(
    model: &SegModel,
    g: &mut Graph,
    p: &crate::nn::Binding,
    src: &Image,
    reference: &Image,
    target: &MotionMask,
) -> Var {
    let s = g.constant(src.to_tensor());
    let r = g.constant(reference.to_tensor());
    let logits = model.forward_logits(g, p, s, r);
    g.bce_with_logits(logits, Arc::new(target.to_tensor()))
}

fn save_checkpoint(dir: Option<&Path>, name: &str, save: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save(&dir.join(name))?;
    }
    Ok(())
}

/// Trains a segmenter with per-pixel binary cross-entropy on ground-truth masks.
pub fn train_segmentation(
    samples: &[Sample],
    seg_config: &SegmenterConfig,
    cfg: &TrainConfig,
) -> Result<(SegModel, TrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pairs = seg_pairs(samples)?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = SegModel::new(seg_config.clone(), cfg.seed)?;
    model.check_dims(cfg.patch, cfg.patch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e6);
    let mut sampler = BatchSampler::new(pairs.len());
    let mut opt = AdamState::new(model.params().tensors());
    let steps = steps_per_epoch(cfg, pairs.len());
    let start = Instant::now();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0;
        for _ in 0..steps {
            let batch = (0..cfg.batch_size)
                .map(|_| {
                    let i = sampler.next(&mut rng);
                    crop_pair(&pairs[i], cfg.patch, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let results = batch
                .par_iter()
                .map(|(s, r, t)| {
                    let mut g = Graph::new();
                    let p = model.params().bind(&mut g, true);
                    let loss = seg_loss_graph(&model, &mut g, &p, s, r, t);
                    guard_finite(&g, loss)?;
                    let mut grads = g.backward(loss);
                    Ok((g.value(loss).item(), collect_grads(&mut grads, p.vars())))
                })
                .collect::<Result<Vec<_>>>()?;
            let (losses, grads): (Vec<f64>, Vec<_>) = results.into_iter().unzip();
            loss_sum += losses.iter().sum::<f64>() / losses.len() as f64;
            let total = sum_gradients(grads, model.params().len(), 1.0 / cfg.batch_size as f64);
            adam_step(model.params_mut().tensors_mut(), &total, &mut opt, lr);
        }
        report.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / steps as f64,
            lr,
            steps,
            val_psnr_l: None,
            val_psnr_t: None,
        });
        save_checkpoint(cfg.checkpoint_dir.as_deref(), "segmenter.ckpt", |p| model.save(p))?;
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((model, report))
}

/// Where fusion training gets its motion masks.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum MaskSource {
    /// Soft predictions of a segmenter.
    Segmenter(SegModel),
    GroundTruth,
    /// Thresholded difference with the given threshold.
    Difference(f64),
    /// No motion anywhere.
    Zero,
}

impl MaskSource {
    pub fn masks_for(&self, stack: &ExposureStack, gt: Option<&[MotionMask]>) -> Result<Vec<MotionMask>> {
        match self {
            MaskSource::Segmenter(m) => m.predict_stack(stack),
            MaskSource::GroundTruth => gt.map(<[MotionMask]>::to_vec).ok_or_else(|| Error::ModeDataMismatch {
                mode: "ground-truth masks".into(),
                what: "sample has no ground-truth masks".into(),
            }),
            MaskSource::Difference(tau) => diff_segment_stack(stack, *tau),
            MaskSource::Zero => Ok(zero_masks(stack)),
        }
    }

    pub fn segmenter(&self) -> Option<&SegModel> {
        match self {
            MaskSource::Segmenter(m) => Some(m),
            _ => None,
        }
    }
}

/// Outcome of [`train_fusion`].
#[derive(Clone, Debug)]
pub struct FusionTraining {
    pub model: FusionNet,
    /// The segmenter after training; unchanged in two-stage mode.
    pub segmenter: Option<SegModel>,
    pub report: TrainReport,
}

struct FusionItem {
    stack: ExposureStack,
    gt: RadianceImage,
    /// Fixed masks, used unless the segmenter is trained jointly.
    masks: Vec<MotionMask>,
    gt_masks: Option<Vec<MotionMask>>,
}

/// Predicts and scores the validation set.
pub fn validate_fusion(model: &FusionNet, source: &MaskSource, val: &[Sample]) -> Result<Option<(f64, f64)>> {
    let items = val
        .iter()
        .filter_map(|s| s.gt_hdr.as_ref().map(|gt| (s, gt)))
        .map(|(s, gt)| {
            let masks = source.masks_for(&s.stack, s.gt_masks.as_deref())?;
            Ok((s.id.clone(), model.forward(&s.stack, &masks)?, gt.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    if items.is_empty() {
        return Ok(None);
    }
    let rep = evaluate_images(&items, &[Tonemapper::MuLaw])?;
    Ok(Some((rep.mean.psnr_l, rep.mean.psnr_t_mu.unwrap_or(f64::NAN))))
}

/// Trains the fusion network. Two-stage mode keeps the segmenter frozen;
/// the end-to-end modes backpropagate the HDR loss into it, optionally
/// adding cross-entropy against ground-truth masks.
pub fn train_fusion(
    train: &[Sample],
    val: &[Sample],
    mut model: FusionNet,
    source: MaskSource,
    cfg: &TrainConfig,
) -> Result<FusionTraining> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let joint = cfg.mode != TrainMode::TwoStage;
    if joint && source.segmenter().is_none() {
        return Err(Error::ModeDataMismatch {
            mode: format!("{:?}", cfg.mode),
            what: "end-to-end training needs a segmenter".into(),
        });
    }
    let seg_loss = cfg.mode == TrainMode::EndToEndWithSegLoss;
    let mut items = Vec::with_capacity(train.len());
    for s in train {
        let gt = s.gt_hdr.clone().ok_or_else(|| Error::ModeDataMismatch {
            mode: "fusion".into(),
            what: format!("{} has no ground-truth HDR", s.id),
        })?;
        if seg_loss && s.gt_masks.is_none() {
            return Err(Error::ModeDataMismatch {
                mode: "end_to_end_with_seg_loss".into(),
                what: format!("{} has no ground-truth masks", s.id),
            });
        }
        let masks = if joint {
            zero_masks(&s.stack)
        } else {
            source.masks_for(&s.stack, s.gt_masks.as_deref())?
        };
        items.push(FusionItem {
            masks: order_masks(&s.stack, &masks)?,
            gt_masks: s.gt_masks.as_ref().map(|m| order_masks(&s.stack, m)).transpose()?,
            stack: s.stack.clone(),
            gt,
        });
    }
    let mut segmenter = source.segmenter().cloned();
    if joint {
        if let Some(seg) = &segmenter {
            seg.check_dims(cfg.patch, cfg.patch)?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xf05e);
    let mut sampler = BatchSampler::new(items.len());
    let mut opt = AdamState::new(model.params().tensors());
    let mut seg_opt = segmenter.as_ref().map(|s| AdamState::new(s.params().tensors()));
    let steps = steps_per_epoch(cfg, items.len());
    let start = Instant::now();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut loss_sum = 0.0;
        for _ in 0..steps {
            let batch = (0..cfg.batch_size)
                .map(|_| {
                    let it = &items[sampler.next(&mut rng)];
                    let patch = sample_patch(&it.stack, Some(&it.gt), &it.masks, cfg.patch, &mut rng)?;
                    let gt_masks = it.gt_masks.as_ref().map(|ms| {
                        ms.iter()
                            .map(|m| m.crop(patch.x0, patch.y0, cfg.patch, cfg.patch))
                            .collect::<Vec<_>>()
                    });
                    Ok((patch, gt_masks))
                })
                .collect::<Result<Vec<_>>>()?;
            let seg_ref = if joint { segmenter.as_ref() } else { None };
            let results = batch
                .par_iter()
                .map(|(patch, gt_masks)| {
                    fusion_item_grads(&model, seg_ref, patch, gt_masks.as_deref(), cfg.loss, seg_loss)
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / cfg.batch_size as f64;
            let mut losses = 0.0;
            let mut fgrads = Vec::with_capacity(results.len());
            let mut sgrads = Vec::with_capacity(results.len());
            for (l, f, s) in results {
                losses += l;
                fgrads.push(f);
                sgrads.push(s);
            }
            loss_sum += losses * scale;
            let total = sum_gradients(fgrads, model.params().len(), scale);
            adam_step(model.params_mut().tensors_mut(), &total, &mut opt, lr);
            if let (Some(seg), Some(so), true) = (segmenter.as_mut(), seg_opt.as_mut(), joint) {
                let total = sum_gradients(sgrads, seg.params().len(), scale);
                adam_step(seg.params_mut().tensors_mut(), &total, so, lr);
            }
        }
        let eval_source = match (&segmenter, joint) {
            (Some(seg), true) => MaskSource::Segmenter(seg.clone()),
            _ => source.clone(),
        };
        let val_scores = validate_fusion(&model, &eval_source, val)?;
        report.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / steps as f64,
            lr,
            steps,
            val_psnr_l: val_scores.map(|v| v.0),
            val_psnr_t: val_scores.map(|v| v.1),
        });
        save_checkpoint(cfg.checkpoint_dir.as_deref(), "fusion.ckpt", |p| model.save(p))?;
        if joint {
            if let Some(seg) = &segmenter {
                save_checkpoint(cfg.checkpoint_dir.as_deref(), "segmenter.ckpt", |p| seg.save(p))?;
            }
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(FusionTraining {
        model,
        segmenter,
        report,
    })
}

type ItemGrads = (f64, Vec<Option<Tensor>>, Vec<Option<Tensor>>);

fn fusion_item_grads(
    model: &FusionNet,
    segmenter: Option<&SegModel>,
    patch: &Patch,
    gt_masks: Option<&[MotionMask]>,
    kind: LossKind,
    seg_loss: bool,
) -> Result<ItemGrads> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, true);
    let gt = patch.gt.as_ref().expect("fusion patches carry ground truth");
    let (input, mask_vars, seg_binding, bce) = match segmenter {
        None => {
            let input = FusionInput::new(&patch.stack, &patch.masks, model.config())?;
            let mv = patch.masks.iter().map(|m| g.constant(m.to_tensor())).collect();
            (input, mv, None, None)
        }
        Some(seg) => {
            let sp = seg.params().bind(&mut g, true);
            let r = g.constant(patch.stack.reference().to_tensor());
            let mut mv = Vec::new();
            let mut hard = Vec::new();
            let mut bce_terms = Vec::new();
            for (i, k) in patch.stack.source_indices().enumerate() {
                let s = g.constant(patch.stack.image(k).to_tensor());
                let logits = seg.forward_logits(&mut g, &sp, s, r);
                let prob = g.sigmoid(logits);
                let values = g.value(prob).data().iter().map(|&v| v as f32).collect();
                hard.push(MotionMask::new(patch.stack.width(), patch.stack.height(), values, k)?);
                mv.push(prob);
                if seg_loss {
                    let target = gt_masks.expect("checked before training")[i].to_tensor();
                    bce_terms.push(g.bce_with_logits(logits, Arc::new(target)));
                }
            }
            let input = FusionInput::new(&patch.stack, &hard, model.config())?;
            let bce = if bce_terms.is_empty() {
                None
            } else {
                Some(g.mean_of(&bce_terms))
            };
            (input, mv, Some(sp), bce)
        }
    };
    let trace = model.forward_graph(&mut g, &p, &input, &mask_vars)?;
    let target = g.constant(input.tonemap_target(gt, model.config().mu));
    let mut loss = loss_graph(&mut g, trace.output, target, kind);
    if let Some(b) = bce {
        loss = g.add(loss, b);
    }
    guard_finite(&g, loss)?;
    let mut grads = g.backward(loss);
    let fusion = collect_grads(&mut grads, p.vars());
    let seg = seg_binding
        .map(|sp| collect_grads(&mut grads, sp.vars()))
        .unwrap_or_default();
    Ok((g.value(loss).item(), fusion, seg))
}

/// Training-set loss for a fixed set of examples, without updating anything.
pub fn fusion_loss(
    model: &FusionNet,
    stack: &ExposureStack,
    masks: &[MotionMask],
    gt: &RadianceImage,
    kind: LossKind,
) -> Result<f64> {
    let (t, input) = model.forward_tonemapped(stack, masks)?;
    let mut g = Graph::new();
    let p = g.constant(t);
    let target = g.constant(input.tonemap_target(gt, model.config().mu));
    let l = loss_graph(&mut g, p, target, kind);
    Ok(g.value(l).item())
}
