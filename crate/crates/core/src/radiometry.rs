//! Conversions between the LDR and linear domains, tonemapping, and classical
//! triangle-weighted exposure merging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::segmentation::hard_mask;
use crate::stack_io::{exposure_time, ExposureStack, MotionMask, RadianceImage};

pub const DEFAULT_MU: f64 = 5000.0;
pub const DEFAULT_GAMMA: f64 = 2.2;
/// Added to every triangle weight so fully clipped pixels still average.
pub const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TonemapParams {
    pub mu: f64,
    pub gamma: f64,
}

impl Default for TonemapParams {
    fn default() -> Self {
        TonemapParams {
            mu: DEFAULT_MU,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl TonemapParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::BadConfig(format!(
                "mu and gamma must be positive, got mu={} gamma={}",
                self.mu, self.gamma
            )));
        }
        Ok(())
    }
}

/// `I^gamma / t`, elementwise.
pub fn ldr_to_hdr_domain(img: &Image, t: f64, gamma: f64) -> Result<RadianceImage> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveExposure(t));
    }
    RadianceImage::new(img.map(|v| ((v as f64).powf(gamma) / t) as f32))
}

/// Scales a linear-domain image from exposure `ev_src` to `ev_dst`. Not clamped.
pub fn exposure_compensate(img: &Image, ev_src: i32, ev_dst: i32) -> Image {
    let f = exposure_time(ev_dst, ev_src);
    img.map(|v| (v as f64 * f) as f32)
}

#[inline]
fn normalize_value(v: f64, factor: f64, gamma: f64) -> f64 {
    (v.powf(gamma) * factor).powf(1.0 / gamma).clamp(0.0, 1.0)
}

/// Re-renders `src` as if captured at `ev_ref`: `clamp((src^g 2^(ev_ref - ev_src))^(1/g), 0, 1)`.
pub fn brightness_normalize(src: &Image, ev_src: i32, ev_ref: i32, gamma: f64) -> Image {
    if ev_src == ev_ref {
        return src.clone();
    }
    let factor = exposure_time(ev_ref, ev_src);
    src.map(|v| normalize_value(v as f64, factor, gamma) as f32)
}

/// `ln(1 + mu x) / ln(1 + mu)` for `x` already normalized to the peak.
#[inline]
pub fn mu_law(x: f64, mu: f64) -> f64 {
    (mu * x).ln_1p() / mu.ln_1p()
}

#[inline]
pub fn mu_law_derivative(x: f64, mu: f64) -> f64 {
    mu / ((1.0 + mu * x) * mu.ln_1p())
}

#[inline]
pub fn mu_law_inverse(y: f64, mu: f64) -> f64 {
    (y * mu.ln_1p()).exp_m1() / mu
}

/// Divides by `peak` (the image maximum when `None`) and applies the mu-law.
/// An all-zero image maps to all zeros.
pub fn mu_law_tonemap(img: &Image, mu: f64, peak: Option<f64>) -> Image {
    let peak = peak.unwrap_or_else(|| img.max_value() as f64);
    if !(peak > 0.0) {
        return Image::zeros(img.width, img.height, img.channels);
    }
    img.map(|v| mu_law(v as f64 / peak, mu) as f32)
}

#[inline]
pub fn reinhard(x: f64) -> f64 {
    x / (1.0 + x)
}

/// Global `L / (1 + L)` applied to each channel value.
pub fn reinhard_tonemap(img: &Image) -> Image {
    img.map(|v| reinhard(v.max(0.0) as f64) as f32)
}

/// Hat weight peaking at mid-gray, plus [`WEIGHT_FLOOR`].
#[inline]
pub fn triangle_weight(z: f64) -> f64 {
    let w = if z <= 0.5 { z } else { 1.0 - z };
    w.max(0.0) + WEIGHT_FLOOR
}

/// Triangle-weighted merge of `(frame, exposure time)` pairs.
pub fn merge_triangle_frames(frames: &[(&Image, f64)], gamma: f64) -> Result<RadianceImage> {
    let Some(&(first, _)) = frames.first() else {
        return Err(Error::BadConfig("merge needs at least one frame".into()));
    };
    for &(im, t) in frames {
        first.ensure_same_shape(im)?;
        if !(t > 0.0) {
            return Err(Error::NonPositiveExposure(t));
        }
    }
    let n = first.data.len();
    let mut out = vec![0f32; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for &(im, t) in frames {
            let z = im.data[i] as f64;
            let w = triangle_weight(z);
            num += w * z.powf(gamma) / t;
            den += w;
        }
        *o = (num / den) as f32;
    }
    RadianceImage::new(Image::new(first.width, first.height, first.channels, out)?)
}

pub fn merge_triangle(stack: &ExposureStack, gamma: f64) -> Result<RadianceImage> {
    let frames: Vec<(&Image, f64)> = stack
        .images()
        .iter()
        .zip(stack.exposure_times())
        .map(|(im, &t)| (im, t))
        .collect();
    merge_triangle_frames(&frames, gamma)
}

/// Replaces the moving pixels of each source frame with the reference pixel
/// re-exposed to that frame's EV. Masks are binarized at 0.5.
pub fn compensate_motion(stack: &ExposureStack, masks: &[MotionMask], gamma: f64) -> Result<ExposureStack> {
    let r = stack.reference_index();
    let ev_ref = stack.ev_bias()[r];
    let mut images = stack.images().to_vec();
    for m in masks {
        let k = m.source_index;
        if k == r || k >= stack.len() {
            return Err(Error::BadConfig(format!("mask source index {k} is not a source frame")));
        }
        if m.width != stack.width() || m.height != stack.height() {
            return Err(Error::ShapeMismatch("mask does not match stack".into()));
        }
        let hard = hard_mask(m, 0.5);
        let compensated = brightness_normalize(stack.reference(), ev_ref, stack.ev_bias()[k], gamma);
        let img = &mut images[k];
        for (p, &mv) in hard.values.iter().enumerate() {
            if mv > 0.5 {
                for c in 0..3 {
                    img.data[p * 3 + c] = compensated.data[p * 3 + c];
                }
            }
        }
    }
    stack.with_images(images)
}

/// Classical deghosting: motion compensation followed by triangle merging.
pub fn deghost_triangle(stack: &ExposureStack, masks: &[MotionMask], gamma: f64) -> Result<RadianceImage> {
    merge_triangle(&compensate_motion(stack, masks, gamma)?, gamma)
}
