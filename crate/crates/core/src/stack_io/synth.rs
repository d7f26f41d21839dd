//! Desk-scale synthetic scenes with known radiance and motion.
//!
//! The radiance field is a squared ramp (exactly zero at one extreme, so the
//! shortest exposure always holds black pixels) tinted per channel, with a few
//! sinusoidally textured patches. A dark rectangle translates by a constant
//! per-frame offset. Each LDR frame is the 8-bit quantization of
//! `clamp((L_k t_k)^(1/gamma), 0, 1)`.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{exposure_time, save_hdr, save_ldr, save_mask, ExposureStack, ManifestEntry, MotionMask, RadianceImage};
use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_GAMMA: f64 = 2.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motion {
    /// Random per-frame offset, never zero.
    Random,
    /// Fixed per-frame offset in pixels; `(0, 0)` yields a static scene.
    PerFrame { dx: i64, dy: i64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub ev_bias: Vec<i32>,
    pub reference_index: Option<usize>,
    pub motion: Motion,
    /// Place the rectangle of the shortest exposure over a region that is
    /// clipped in the reference, and move it out of the way in the reference.
    pub occlude_saturated: bool,
    pub gamma: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, height: usize, width: usize, ev_bias: Vec<i32>) -> Self {
        SynthConfig {
            seed,
            height,
            width,
            ev_bias,
            reference_index: None,
            motion: Motion::Random,
            occlude_saturated: false,
            gamma: DEFAULT_GAMMA,
        }
    }

    pub fn with_motion(mut self, motion: Motion) -> Self {
        self.motion = motion;
        self
    }

    pub fn with_occlusion(mut self) -> Self {
        self.occlude_saturated = true;
        self
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub stack: ExposureStack,
    /// Radiance of the reference frame.
    pub ground_truth: RadianceImage,
    /// One hard mask per non-reference frame, in stack order.
    pub masks: Vec<MotionMask>,
    /// Radiance of every frame before exposure and quantization.
    pub frames: Vec<RadianceImage>,
    /// Top-left rectangle corner per frame.
    pub rect_positions: Vec<(i64, i64)>,
    pub rect_size: (usize, usize),
}

impl SynthScene {
    /// Pixels clipped in the reference that some source frame sees covered by
    /// the moving rectangle.
    pub fn saturated_occluded_mask(&self) -> MotionMask {
        let r = self.stack.reference();
        let (w, h) = (r.width, r.height);
        let mut out = MotionMask::zeros(w, h, self.stack.reference_index());
        for y in 0..h {
            for x in 0..w {
                let clipped = (0..3).any(|c| r.get(x, y, c) >= 1.0);
                let moving = self.masks.iter().any(|m| m.get(x, y) > 0.5);
                if clipped && moving {
                    out.values[y * w + x] = 1.0;
                }
            }
        }
        out
    }
}

struct Patch {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    px: f64,
    py: f64,
    phase_x: f64,
    phase_y: f64,
}

struct Background {
    width: usize,
    values: Vec<[f64; 3]>,
    ramp: Vec<f64>,
}

impl Background {
    fn at(&self, x: usize, y: usize) -> [f64; 3] {
        self.values[y * self.width + x]
    }
}

fn background(rng: &mut ChaCha8Rng, w: usize, h: usize, peak: f64) -> Background {
    let theta = rng.random_range(0.0..TAU);
    let (cs, sn) = (theta.cos(), theta.sin());
    let raw: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| cs * (x as f64 + 0.5) / w as f64 + sn * (y as f64 + 0.5) / h as f64))
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ramp: Vec<f64> = raw.iter().map(|r| (r - lo) / (hi - lo)).collect();

    let mut tint = [0.0; 3];
    for t in &mut tint {
        *t = rng.random_range(0.75..1.0);
    }
    tint[rng.random_range(0..3)] = 1.0;

    let patches: Vec<Patch> = (0..3)
        .map(|_| {
            let pw = rng.random_range(w / 5..=w / 2);
            let ph = rng.random_range(h / 5..=h / 2);
            Patch {
                x0: rng.random_range(0..=w - pw),
                y0: rng.random_range(0..=h - ph),
                w: pw,
                h: ph,
                px: rng.random_range(6.0..14.0),
                py: rng.random_range(6.0..14.0),
                phase_x: rng.random_range(0.0..TAU),
                phase_y: rng.random_range(0.0..TAU),
            }
        })
        .collect();

    let scale = peak / 1.35;
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let texture = patches
                .iter()
                .find(|p| x >= p.x0 && x < p.x0 + p.w && y >= p.y0 && y < p.y0 + p.h)
                .map_or(0.0, |p| {
                    0.35 * (TAU * x as f64 / p.px + p.phase_x).sin() * (TAU * y as f64 / p.py + p.phase_y).sin()
                });
            let u = ramp[y * w + x];
            let base = scale * u * u * (1.0 + texture);
            values.push([base * tint[0], base * tint[1], base * tint[2]]);
        }
    }
    Background { width: w, values, ramp }
}

fn quantize8(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}

/// Scene with default options (random motion, no forced occlusion).
pub fn synth_scene(
    seed: u64,
    height: usize,
    width: usize,
    k: usize,
    ev_bias: &[i32],
) -> Result<(ExposureStack, RadianceImage, Vec<MotionMask>)> {
    if ev_bias.len() != k {
        return Err(Error::BadConfig(format!(
            "K = {k} but {} exposure values",
            ev_bias.len()
        )));
    }
    let s = synth_scene_with(&SynthConfig::new(seed, height, width, ev_bias.to_vec()))?;
    Ok((s.stack, s.ground_truth, s.masks))
}

pub fn synth_scene_with(cfg: &SynthConfig) -> Result<SynthScene> {
    let (w, h) = (cfg.width, cfg.height);
    let k = cfg.ev_bias.len();
    if w < 16 || h < 16 {
        return Err(Error::BadConfig(format!("scene {w}x{h} is smaller than 16x16")));
    }
    if k < 2 || cfg.ev_bias.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::BadConfig(format!(
            "need >= 2 strictly increasing exposure values, got {:?}",
            cfg.ev_bias
        )));
    }
    if !(cfg.gamma > 0.0) {
        return Err(Error::BadConfig(format!("gamma must be positive, got {}", cfg.gamma)));
    }
    let ref_idx = cfg.reference_index.unwrap_or(k / 2);
    if ref_idx >= k {
        return Err(Error::BadConfig(format!("reference index {ref_idx} out of range")));
    }
    let ev_ref = cfg.ev_bias[ref_idx];
    let times: Vec<f64> = cfg.ev_bias.iter().map(|&e| exposure_time(e, ev_ref)).collect();
    let t_min = times.iter().copied().fold(f64::INFINITY, f64::min);
    let peak = 0.875 / t_min;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bg = background(&mut rng, w, h, peak);

    let rw = rng.random_range((w / 5).max(3)..=(w / 4 + 1));
    let rh = rng.random_range((h / 5).max(3)..=(h / 4 + 1));
    let mut rect_color = [0.0; 3];
    for c in &mut rect_color {
        *c = rng.random_range(0.01..0.03);
    }

    let (mut vx, mut vy) = match cfg.motion {
        Motion::PerFrame { dx, dy } => (dx, dy),
        Motion::Random if cfg.occlude_saturated => {
            let sign = if rng.random_bool(0.5) { 1 } else { -1 };
            (sign * (rw as i64 + 2), 0)
        }
        Motion::Random => {
            let sign = if rng.random_bool(0.5) { 1 } else { -1 };
            let dy = (rh as i64 / 4).max(1);
            (
                sign * rng.random_range(rw as i64 / 2..=rw as i64),
                rng.random_range(-dy..=dy),
            )
        }
    };

    // Shrink the offset until every frame's rectangle fits inside the image.
    let steps: Vec<i64> = (0..k).map(|i| i as i64 - ref_idx as i64).collect();
    let span = |v: i64| {
        let lo = steps.iter().map(|s| s * v).min().unwrap();
        let hi = steps.iter().map(|s| s * v).max().unwrap();
        (lo, hi)
    };
    while {
        let (lx, hx) = span(vx);
        let (ly, hy) = span(vy);
        hx - lx + rw as i64 > w as i64 || hy - ly + rh as i64 > h as i64
    } {
        vx /= 2;
        vy /= 2;
    }
    let (lx, hx) = span(vx);
    let (ly, hy) = span(vy);
    let x_range = (-lx)..=(w as i64 - rw as i64 - hx);
    let y_range = (-ly)..=(h as i64 - rh as i64 - hy);

    let occluder_frame = (0..k).min_by(|&a, &b| times[a].total_cmp(&times[b])).unwrap();
    let score = |px: i64, py: i64| -> f64 {
        if cfg.occlude_saturated && occluder_frame != ref_idx {
            // brightest guarantee: minimum radiance under the occluder, over channels
            let ox = px + steps[occluder_frame] * vx;
            let oy = py + steps[occluder_frame] * vy;
            let mut m = f64::INFINITY;
            for y in oy..oy + rh as i64 {
                for x in ox..ox + rw as i64 {
                    let v = bg.at(x as usize, y as usize);
                    m = m.min(v[0].min(v[1]).min(v[2]));
                }
            }
            m
        } else {
            let mut m = f64::INFINITY;
            for &s in &steps {
                let (ox, oy) = (px + s * vx, py + s * vy);
                for y in oy..oy + rh as i64 {
                    for x in ox..ox + rw as i64 {
                        m = m.min(bg.ramp[y as usize * w + x as usize]);
                    }
                }
            }
            m
        }
    };
    let target = if cfg.occlude_saturated { 1.1 } else { 0.45 };
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for _ in 0..400 {
        let px = rng.random_range(x_range.clone());
        let py = rng.random_range(y_range.clone());
        let s = score(px, py);
        if s > best.0 {
            best = (s, px, py);
        }
        if s >= target {
            break;
        }
    }
    let (_, px, py) = best;
    let positions: Vec<(i64, i64)> = steps.iter().map(|s| (px + s * vx, py + s * vy)).collect();

    let frames: Vec<Image> = positions
        .iter()
        .map(|&(ox, oy)| {
            Image::from_fn(w, h, 3, |x, y, c| {
                let (xi, yi) = (x as i64, y as i64);
                if xi >= ox && xi < ox + rw as i64 && yi >= oy && yi < oy + rh as i64 {
                    rect_color[c] as f32
                } else {
                    bg.at(x, y)[c] as f32
                }
            })
        })
        .collect();

    let inv_gamma = 1.0 / cfg.gamma;
    let ldr: Vec<Image> = frames
        .iter()
        .zip(&times)
        .map(|(f, &t)| f.map(|v| quantize8((v as f64 * t).powf(inv_gamma))))
        .collect();

    let reference = &frames[ref_idx];
    let masks = (0..k)
        .filter(|&i| i != ref_idx)
        .map(|i| {
            let f = &frames[i];
            let values = (0..w * h)
                .map(|p| {
                    let differs = (0..3).any(|c| {
                        let (a, b) = (f.data[p * 3 + c], reference.data[p * 3 + c]);
                        (a - b).abs() > f32::EPSILON * a.abs().max(b.abs())
                    });
                    if differs {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            MotionMask {
                width: w,
                height: h,
                values,
                source_index: i,
            }
        })
        .collect();

    let stack = ExposureStack::new(ldr, cfg.ev_bias.clone(), Some(ref_idx))?;
    let frames = frames.into_iter().map(RadianceImage::new).collect::<Result<Vec<_>>>()?;
    Ok(SynthScene {
        stack,
        ground_truth: frames[ref_idx].clone(),
        masks,
        frames,
        rect_positions: positions,
        rect_size: (rw, rh),
    })
}

/// Writes `dir/<id>/ldr_XX.png`, `gt.pfm` and `mask_XX.png` (one per source
/// frame) and returns the manifest entry, with paths relative to `dir`.
pub fn write_scene(scene: &SynthScene, dir: &Path, id: &str) -> Result<ManifestEntry> {
    let rel = PathBuf::from(id);
    let scene_dir = dir.join(&rel);
    fs::create_dir_all(&scene_dir).map_err(|e| Error::io(&scene_dir, e))?;
    let mut names = Vec::with_capacity(scene.stack.len());
    for (k, img) in scene.stack.images().iter().enumerate() {
        let name = format!("ldr_{k:02}.png");
        save_ldr(img, &scene_dir.join(&name))?;
        names.push(name);
    }
    save_hdr(&scene.ground_truth, &scene_dir.join("gt.pfm"))?;
    let mut masks = Vec::with_capacity(scene.masks.len());
    for m in &scene.masks {
        let name = format!("mask_{:02}.png", m.source_index);
        save_mask(m, &scene_dir.join(&name))?;
        masks.push(rel.join(name));
    }
    Ok(ManifestEntry {
        id: Some(id.to_string()),
        stack_dir: rel.clone(),
        images: Some(names),
        gt_hdr: Some(rel.join("gt.pfm")),
        gt_masks: Some(masks),
        ev_bias: scene.stack.ev_bias().to_vec(),
        reference_index: Some(scene.stack.reference_index()),
    })
}
