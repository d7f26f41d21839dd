use std::fs;
use std::path::{Path, PathBuf};

use hdrfuse::metrics::{evaluate, EvalReport};
use hdrfuse::radiometry::{deghost_triangle, mu_law_tonemap};
use hdrfuse::stack_io::{
    load_ldr, load_sample, save_hdr, save_ldr, save_mask, synth_scene_with, write_scene, Split, SynthConfig,
};
use hdrfuse::training::{train_fusion, train_segmentation};
use hdrfuse::{
    DatasetManifest, Error, ExposureStack, FusionNet, MaskSource, MotionMask, RadianceImage, Result, Sample, SegModel,
    TrainReport,
};

use crate::config::{io_error, Device, MaskMode, Pipeline, RunConfig};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const MANIFEST: &str = "manifest.json";
pub const ABLATION_ROW: &str = "ablation_row.csv";
pub const ABLATION_COLUMNS: [&str; 5] = ["preset", "description", "psnr_l", "psnr_t_mu", "psnr_t_reinhard"];

/// Process exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::BadConfig(_) | Error::BadEv(_) | Error::NonPositiveExposure(_) | Error::Json(_) => 2,
        Error::MissingFile(_)
        | Error::Io { .. }
        | Error::CorruptHeader(_)
        | Error::Decode(_)
        | Error::WrongChannelCount(_) => 3,
        Error::ShapeMismatch(_)
        | Error::BadSpatialDims { .. }
        | Error::SlotOutOfRange { .. }
        | Error::ArityMismatch { .. }
        | Error::SoftMaskRejected
        | Error::PatchTooLarge { .. }
        | Error::ImageTooSmall { .. }
        | Error::EmptyDataset
        | Error::ModeDataMismatch { .. }
        | Error::MissingPrediction(_)
        | Error::CheckpointMismatch(_) => 4,
        Error::NumericFailure(_) => 5,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

/// Validates `cfg`, creates the output directory and records the resolved config.
pub fn prepare(cfg: &mut RunConfig) -> Result<()> {
    cfg.resolve()?;
    if cfg.device == Device::Accelerator {
        eprintln!("warning: no accelerator backend in this build, running on cpu");
    }
    create_dir(&cfg.out_dir)?;
    cfg.save(&cfg.out_dir.join(RESOLVED_CONFIG))
}

fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

pub fn cmd_synth(cfg: &mut RunConfig) -> Result<PathBuf> {
    prepare(cfg)?;
    let s = &cfg.synth;
    let mut manifest = DatasetManifest::new(Split::Train, &cfg.out_dir);
    for i in 0..s.count {
        let mut sc = SynthConfig::new(scene_seed(cfg.seed, i), s.size, s.size, s.ev_bias.clone());
        if s.occlusion {
            sc = sc.with_occlusion();
        }
        let scene = synth_scene_with(&sc)?;
        manifest
            .entries
            .push(write_scene(&scene, &cfg.out_dir, &format!("scene_{i:03}"))?);
    }
    let path = cfg.out_dir.join(MANIFEST);
    manifest.save(&path)?;
    Ok(path)
}

fn load_manifest_samples(path: &Path) -> Result<Vec<Sample>> {
    let m = DatasetManifest::load(path)?;
    m.entries.iter().map(|e| load_sample(&m, e)).collect()
}

/// Stacks to run inference on: a single stack directory, else the
/// validation manifest, else the training manifest.
pub fn inference_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    if let Some(dir) = &cfg.data.stack_dir {
        let ev = cfg
            .data
            .stack_ev
            .clone()
            .ok_or_else(|| Error::BadConfig("a stack directory needs its exposure values".into()))?;
        let images = (0..ev.len())
            .map(|k| load_ldr(&dir.join(format!("ldr_{k:02}.png"))))
            .collect::<Result<Vec<_>>>()?;
        let id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "stack".into());
        return Ok(vec![Sample {
            id,
            stack: ExposureStack::new(images, ev, None)?,
            gt_hdr: None,
            gt_masks: None,
        }]);
    }
    let path = cfg
        .data
        .val_manifest
        .as_ref()
        .or(cfg.data.train_manifest.as_ref())
        .ok_or_else(|| Error::BadConfig("no stack directory or manifest given".into()))?;
    load_manifest_samples(path)
}

fn train_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    let path = cfg
        .data
        .train_manifest
        .as_ref()
        .ok_or_else(|| Error::BadConfig("no training manifest given".into()))?;
    load_manifest_samples(path)
}

fn load_segmenter(cfg: &RunConfig) -> Result<SegModel> {
    let path = cfg
        .checkpoints
        .segmenter
        .as_ref()
        .ok_or_else(|| Error::BadConfig("masks = segmenter needs a segmenter checkpoint".into()))?;
    SegModel::load(path)
}

pub fn mask_source(cfg: &RunConfig) -> Result<MaskSource> {
    Ok(match cfg.masks {
        MaskMode::Segmenter => MaskSource::Segmenter(load_segmenter(cfg)?),
        MaskMode::Difference => MaskSource::Difference(cfg.diff_threshold),
        MaskMode::Zero => MaskSource::Zero,
        MaskMode::GroundTruth => MaskSource::GroundTruth,
    })
}

fn sample_masks(source: &MaskSource, s: &Sample) -> Result<Vec<MotionMask>> {
    source.masks_for(&s.stack, s.gt_masks.as_deref())
}

pub fn cmd_segment(cfg: &mut RunConfig) -> Result<()> {
    prepare(cfg)?;
    let source = mask_source(cfg)?;
    for s in inference_samples(cfg)? {
        let dir = cfg.out_dir.join(&s.id);
        create_dir(&dir)?;
        for m in sample_masks(&source, &s)? {
            let m = match &source {
                MaskSource::Segmenter(seg) => hdrfuse::segmentation::hard_mask(&m, seg.config().threshold),
                _ => m,
            };
            save_mask(&m, &dir.join(format!("mask_{:02}.png", m.source_index)))?;
        }
    }
    Ok(())
}

fn run_train_seg(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, TrainReport)> {
    let samples = train_samples(cfg)?;
    let mut tc = cfg.seg_train.clone();
    tc.checkpoint_dir = Some(out.to_path_buf());
    let (model, report) = train_segmentation(&samples, &cfg.segmenter, &tc)?;
    let ckpt = out.join("segmenter.ckpt");
    model.save(&ckpt)?;
    report.save_jsonl(&out.join("train_seg.jsonl"))?;
    Ok((ckpt, report))
}

pub fn cmd_train_seg(cfg: &mut RunConfig) -> Result<TrainReport> {
    prepare(cfg)?;
    let out = cfg.out_dir.clone();
    run_train_seg(cfg, &out).map(|(_, r)| r)
}

fn run_train_fusion(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, TrainReport)> {
    let train = train_samples(cfg)?;
    let val = match &cfg.data.val_manifest {
        Some(p) => load_manifest_samples(p)?,
        None => Vec::new(),
    };
    let model = FusionNet::new(cfg.model.clone(), cfg.seed)?;
    let mut tc = cfg.fusion_train.clone();
    tc.checkpoint_dir = Some(out.to_path_buf());
    let trained = train_fusion(&train, &val, model, mask_source(cfg)?, &tc)?;
    let ckpt = out.join("fusion.ckpt");
    trained.model.save(&ckpt)?;
    if let Some(seg) = &trained.segmenter {
        seg.save(&out.join("segmenter.ckpt"))?;
    }
    trained.report.save_jsonl(&out.join("train_fusion.jsonl"))?;
    Ok((ckpt, trained.report))
}

pub fn cmd_train_fusion(cfg: &mut RunConfig) -> Result<TrainReport> {
    prepare(cfg)?;
    let out = cfg.out_dir.clone();
    run_train_fusion(cfg, &out).map(|(_, r)| r)
}

fn load_fusion(cfg: &RunConfig) -> Result<FusionNet> {
    let path = cfg
        .checkpoints
        .fusion
        .as_ref()
        .ok_or_else(|| Error::BadConfig("the neural pipeline needs a fusion checkpoint".into()))?;
    FusionNet::load(path)
}

/// Writes `<id>.pfm` and a mu-law preview `<id>.png`.
pub fn write_prediction(img: &RadianceImage, dir: &Path, id: &str, mu: f64) -> Result<PathBuf> {
    let pfm = dir.join(format!("{id}.pfm"));
    save_hdr(img, &pfm)?;
    save_ldr(&mu_law_tonemap(img.image(), mu, None), &dir.join(format!("{id}.png")))?;
    Ok(pfm)
}

fn run_fuse(cfg: &RunConfig, model: Option<&FusionNet>, out: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let source = mask_source(cfg)?;
    let mut written = Vec::new();
    for s in inference_samples(cfg)? {
        let masks = sample_masks(&source, &s)?;
        let img = match (cfg.pipeline, model) {
            (Pipeline::Neural, Some(m)) => m.forward(&s.stack, &masks)?,
            (Pipeline::Neural, None) => unreachable!("neural fusion without a model"),
            (Pipeline::Classical, _) => deghost_triangle(&s.stack, &masks, cfg.model.gamma)?,
        };
        written.push(write_prediction(&img, out, &s.id, cfg.model.mu)?);
    }
    Ok(written)
}

/// Fuses every input stack. The neural pipeline takes its model
/// configuration from the fusion checkpoint.
pub fn cmd_fuse(cfg: &mut RunConfig) -> Result<Vec<PathBuf>> {
    let model = match cfg.pipeline {
        Pipeline::Neural => {
            let m = load_fusion(cfg)?;
            cfg.model = m.config().clone();
            Some(m)
        }
        Pipeline::Classical => None,
    };
    prepare(cfg)?;
    let out = cfg.out_dir.clone();
    run_fuse(cfg, model.as_ref(), &out)
}

fn eval_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = cfg
        .data
        .val_manifest
        .as_ref()
        .or(cfg.data.train_manifest.as_ref())
        .ok_or_else(|| Error::BadConfig("no manifest to evaluate against".into()))?;
    DatasetManifest::load(path)
}

fn run_eval(cfg: &RunConfig, pred_dir: &Path, out: &Path) -> Result<EvalReport> {
    let manifest = eval_manifest(cfg)?;
    let mut report = evaluate(pred_dir, &manifest, &cfg.tonemappers)?;
    if let Some(p) = &cfg.data.hdr_vdp2 {
        report.attach_hdr_vdp2(p)?;
    }
    report.save(&out.join("eval.csv"), &out.join("eval.json"))?;
    Ok(report)
}

pub fn cmd_eval(cfg: &mut RunConfig) -> Result<EvalReport> {
    prepare(cfg)?;
    let pred = cfg
        .data
        .pred_dir
        .clone()
        .ok_or_else(|| Error::BadConfig("no prediction directory given".into()))?;
    let out = cfg.out_dir.clone();
    run_eval(cfg, &pred, &out)
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// One row of the aggregate ablation table.
pub fn ablation_row(preset: &str, description: &str, report: &EvalReport) -> String {
    let desc = description.replace(',', ";");
    format!(
        "{}\n{preset},{desc},{:.4},{},{}\n",
        ABLATION_COLUMNS.join(","),
        report.mean.psnr_l,
        fmt_metric(report.mean.psnr_t_mu),
        fmt_metric(report.mean.psnr_t_reinhard)
    )
}

/// Trains what the preset needs, fuses the evaluation set and scores it.
pub fn cmd_ablate(cfg: &mut RunConfig, preset: &str) -> Result<EvalReport> {
    prepare(cfg)?;
    let out = cfg.out_dir.clone();
    let mut run = cfg.clone();
    if run.masks == MaskMode::Segmenter && run.checkpoints.segmenter.is_none() {
        let (ckpt, _) = run_train_seg(&run, &out)?;
        run.checkpoints.segmenter = Some(ckpt);
    }
    let model = match run.pipeline {
        Pipeline::Neural => {
            let (ckpt, _) = run_train_fusion(&run, &out)?;
            if run.fusion_train.mode != hdrfuse::TrainMode::TwoStage {
                run.checkpoints.segmenter = Some(out.join("segmenter.ckpt"));
            }
            Some(FusionNet::load(&ckpt)?)
        }
        Pipeline::Classical => None,
    };
    let pred = out.join("pred");
    run_fuse(&run, model.as_ref(), &pred)?;
    let report = run_eval(&run, &pred, &out)?;
    let row = ablation_row(preset, run.description.as_deref().unwrap_or(""), &report);
    let path = out.join(ABLATION_ROW);
    fs::write(&path, row).map_err(|e| io_error(&path, e))?;
    Ok(report)
}
