//! PSNR, SSIM and IoU, and dataset-level evaluation reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::radiometry::{mu_law, reinhard, DEFAULT_MU};
use crate::stack_io::{load_hdr, DatasetManifest, MotionMask, RadianceImage};
use crate::tensor::kernels::blur_valid;
use crate::tensor::Tensor;

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 99.99;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// `10 log10(peak^2 / MSE)`; identical images give `+inf`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::BadConfig(format!("peak must be positive, got {peak}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// PSNR limited to [`PSNR_CAP`] for tables and averages.
pub fn psnr_capped(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    Ok(psnr(a, b, peak)?.min(PSNR_CAP))
}

/// PSNR restricted to pixels where `mask >= 0.5`.
pub fn masked_psnr(a: &Image, b: &Image, mask: &MotionMask, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if mask.width != a.width || mask.height != a.height {
        return Err(Error::ShapeMismatch("mask does not match image".into()));
    }
    let c = a.channels;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, &m) in mask.values.iter().enumerate() {
        if m >= 0.5 {
            for ch in 0..c {
                let d = a.data[p * c + ch] as f64 - b.data[p * c + ch] as f64;
                sum += d * d;
            }
            n += c;
        }
    }
    if n == 0 {
        return Err(Error::BadConfig("mask selects no pixels".into()));
    }
    if sum == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak * n as f64 / sum).log10())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - mid;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

fn channel_planes(img: &Image) -> Tensor {
    img.to_tensor()
}

/// Mean SSIM over every valid 11x11 Gaussian window and every channel.
pub fn ssim(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if a.width.min(a.height) < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            height: a.height,
            width: a.width,
            window: SSIM_WINDOW,
        });
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let x = channel_planes(a);
    let y = channel_planes(b);
    let xx = Tensor::from_vec(x.shape().to_vec(), x.data().iter().map(|v| v * v).collect());
    let yy = Tensor::from_vec(y.shape().to_vec(), y.data().iter().map(|v| v * v).collect());
    let xy = Tensor::from_vec(
        x.shape().to_vec(),
        x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect(),
    );
    let (mx, my) = (blur_valid(&x, &k), blur_valid(&y, &k));
    let (sxx, syy, sxy) = (blur_valid(&xx, &k), blur_valid(&yy, &k), blur_valid(&xy, &k));
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx.data()[i], my.data()[i]);
        let vx = sxx.data()[i] - ux * ux;
        let vy = syy.data()[i] - uy * uy;
        let cxy = sxy.data()[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / n as f64)
}

/// Intersection over union of masks binarized at 0.5. Two empty masks score 1.
pub fn iou(a: &MotionMask, b: &MotionMask) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch("masks differ in size".into()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let (x, y) = (x >= 0.5, y >= 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tonemapper {
    MuLaw,
    Reinhard,
}

fn normalize(img: &Image, peak: f64) -> Image {
    img.map(|v| (v.max(0.0) as f64 / peak) as f32)
}

fn apply(tm: Tonemapper, img: &Image) -> Image {
    match tm {
        Tonemapper::MuLaw => img.map(|v| mu_law(v as f64, DEFAULT_MU) as f32),
        Tonemapper::Reinhard => img.map(|v| reinhard(v as f64) as f32),
    }
}

/// Per-image scores. Linear images are divided by the ground-truth peak
/// before scoring; tonemapped scores apply the operator after that.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub psnr_l: f64,
    pub psnr_t_mu: Option<f64>,
    pub psnr_t_reinhard: Option<f64>,
    pub ssim_l: f64,
    pub ssim_t_mu: Option<f64>,
    pub hdr_vdp2: Option<f64>,
}

impl EvalRow {
    pub fn compute(id: &str, pred: &RadianceImage, gt: &RadianceImage, tonemappers: &[Tonemapper]) -> Result<Self> {
        pred.image().ensure_same_shape(gt.image())?;
        let peak = (gt.image().max_value() as f64).max(f64::MIN_POSITIVE);
        let p = normalize(pred.image(), peak);
        let g = normalize(gt.image(), peak);
        let small = p.width.min(p.height) < SSIM_WINDOW;
        let ssim_or_nan = |a: &Image, b: &Image| if small { Ok(f64::NAN) } else { ssim(a, b, 1.0) };
        let mut row = EvalRow {
            id: id.to_string(),
            psnr_l: psnr_capped(&p, &g, 1.0)?,
            psnr_t_mu: None,
            psnr_t_reinhard: None,
            ssim_l: ssim_or_nan(&p, &g)?,
            ssim_t_mu: None,
            hdr_vdp2: None,
        };
        for &tm in tonemappers {
            let (pt, gtm) = (apply(tm, &p), apply(tm, &g));
            let v = psnr_capped(&pt, &gtm, 1.0)?;
            match tm {
                Tonemapper::MuLaw => {
                    row.psnr_t_mu = Some(v);
                    row.ssim_t_mu = Some(ssim_or_nan(&pt, &gtm)?);
                }
                Tonemapper::Reinhard => row.psnr_t_reinhard = Some(v),
            }
        }
        Ok(row)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub psnr_l: f64,
    pub psnr_t_mu: Option<f64>,
    pub psnr_t_reinhard: Option<f64>,
    pub ssim_l: f64,
    pub ssim_t_mu: Option<f64>,
    pub hdr_vdp2: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean: EvalSummary,
}

pub const CSV_COLUMNS: [&str; 7] = [
    "id",
    "psnr_l",
    "psnr_t_mu",
    "psnr_t_reinhard",
    "ssim_l",
    "ssim_t_mu",
    "hdr_vdp2",
];

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn mean_opt<'a>(rows: &'a [EvalRow], f: impl Fn(&'a EvalRow) -> Option<f64>) -> Option<f64> {
    let vals: Option<Vec<f64>> = rows.iter().map(f).collect();
    vals.filter(|v| !v.is_empty()).map(|v| mean_of(v.into_iter()))
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let mean = EvalSummary {
            psnr_l: mean_of(rows.iter().map(|r| r.psnr_l)),
            psnr_t_mu: mean_opt(&rows, |r| r.psnr_t_mu),
            psnr_t_reinhard: mean_opt(&rows, |r| r.psnr_t_reinhard),
            ssim_l: mean_of(rows.iter().map(|r| r.ssim_l)),
            ssim_t_mu: mean_opt(&rows, |r| r.ssim_t_mu),
            hdr_vdp2: mean_opt(&rows, |r| r.hdr_vdp2),
        };
        EvalReport { rows, mean }
    }

    /// Fills the HDR-VDP-2 column from an external `id,score` CSV.
    pub fn attach_hdr_vdp2(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let Some((id, score)) = line.split_once(',') else {
                continue;
            };
            let Ok(score) = score.trim().parse::<f64>() else {
                continue;
            };
            if let Some(row) = self.rows.iter_mut().find(|r| r.id == id.trim()) {
                row.hdr_vdp2 = Some(score);
            }
        }
        *self = EvalReport::from_rows(std::mem::take(&mut self.rows));
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        let mut line =
            |id: &str, l: f64, tm: Option<f64>, tr: Option<f64>, sl: f64, st: Option<f64>, v: Option<f64>| {
                let _ = writeln!(
                    out,
                    "{id},{},{},{},{},{},{}",
                    cell(Some(l)),
                    cell(tm),
                    cell(tr),
                    cell(Some(sl)),
                    cell(st),
                    cell(v)
                );
            };
        for r in &self.rows {
            line(
                &r.id,
                r.psnr_l,
                r.psnr_t_mu,
                r.psnr_t_reinhard,
                r.ssim_l,
                r.ssim_t_mu,
                r.hdr_vdp2,
            );
        }
        let m = &self.mean;
        line(
            "mean",
            m.psnr_l,
            m.psnr_t_mu,
            m.psnr_t_reinhard,
            m.ssim_l,
            m.ssim_t_mu,
            m.hdr_vdp2,
        );
        out
    }

    pub fn save(&self, csv: &Path, json: &Path) -> Result<()> {
        fs::write(csv, self.to_csv()).map_err(|e| Error::io(csv, e))?;
        fs::write(json, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(json, e))
    }
}

/// Scores in-memory `(id, prediction, ground truth)` triples.
pub fn evaluate_images(
    items: &[(String, RadianceImage, RadianceImage)],
    tonemappers: &[Tonemapper],
) -> Result<EvalReport> {
    let rows = items
        .par_iter()
        .map(|(id, p, g)| EvalRow::compute(id, p, g, tonemappers))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(rows))
}

/// Scores `<pred_dir>/<id>.pfm` against every manifest entry's ground truth.
pub fn evaluate(pred_dir: &Path, manifest: &DatasetManifest, tonemappers: &[Tonemapper]) -> Result<EvalReport> {
    let rows = manifest
        .entries
        .par_iter()
        .map(|e| {
            let id = e.id();
            let pred_path = pred_dir.join(format!("{id}.pfm"));
            if !pred_path.exists() {
                return Err(Error::MissingPrediction(id));
            }
            let gt_path = e
                .gt_hdr
                .as_ref()
                .ok_or_else(|| Error::BadConfig(format!("{id}: entry has no ground truth")))?;
            let pred = load_hdr(&pred_path)?;
            let gt = load_hdr(&manifest.resolve(gt_path))?;
            EvalRow::compute(&id, &pred, &gt, tonemappers)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(rows))
}
