//! Exposure stacks, motion masks and radiance images, plus their disk formats
//! and a synthetic scene generator.

mod manifest;
mod pfm;
mod png;
mod synth;

pub use manifest::{load_sample, load_stack, DatasetManifest, ManifestEntry, Sample, Split};
pub use pfm::{decode_pfm, encode_pfm, load_hdr, save_hdr};
pub use png::{load_ldr, load_mask, save_ldr, save_mask};
pub use synth::{synth_scene, synth_scene_with, write_scene, Motion, SynthConfig, SynthScene};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Tensor;

/// Exposure time relative to the reference frame, `2^(ev - ev_ref)` seconds.
pub fn exposure_time(ev: i32, ev_ref: i32) -> f64 {
    2f64.powi(ev - ev_ref)
}

/// Bracketed LDR frames with their exposure metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ExposureStack {
    images: Vec<Image>,
    ev_bias: Vec<i32>,
    exposure_times: Vec<f64>,
    reference_index: usize,
}

impl ExposureStack {
    /// Validates the frames and clamps pixels to `[0, 1]`. The reference
    /// defaults to the middle frame.
    pub fn new(images: Vec<Image>, ev_bias: Vec<i32>, reference_index: Option<usize>) -> Result<Self> {
        let k = images.len();
        if k < 2 {
            return Err(Error::BadConfig(format!("a stack needs at least 2 frames, got {k}")));
        }
        if ev_bias.len() != k {
            return Err(Error::BadConfig(format!(
                "{} exposure values for {k} frames",
                ev_bias.len()
            )));
        }
        if ev_bias.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::BadEv(ev_bias));
        }
        let reference_index = reference_index.unwrap_or(k / 2);
        if reference_index >= k {
            return Err(Error::BadConfig(format!(
                "reference index {reference_index} out of range for {k} frames"
            )));
        }
        let first = &images[0];
        if first.channels != 3 {
            return Err(Error::ShapeMismatch(format!(
                "frames must be RGB, got {} channels",
                first.channels
            )));
        }
        for im in &images[1..] {
            first.ensure_same_shape(im)?;
        }
        let images = images
            .into_iter()
            .map(|im| im.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
            .collect();
        let ev_ref = ev_bias[reference_index];
        let exposure_times = ev_bias.iter().map(|&ev| exposure_time(ev, ev_ref)).collect();
        Ok(ExposureStack {
            images,
            ev_bias,
            exposure_times,
            reference_index,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn image(&self, k: usize) -> &Image {
        &self.images[k]
    }

    pub fn ev_bias(&self) -> &[i32] {
        &self.ev_bias
    }

    pub fn exposure_times(&self) -> &[f64] {
        &self.exposure_times
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn reference(&self) -> &Image {
        &self.images[self.reference_index]
    }

    pub fn width(&self) -> usize {
        self.images[0].width
    }

    pub fn height(&self) -> usize {
        self.images[0].height
    }

    /// Indices of every frame except the reference, in stack order.
    pub fn source_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&k| k != self.reference_index)
    }

    /// Largest radiance representable without clipping in the shortest
    /// exposure, relative to the reference exposure time.
    pub fn radiance_ceiling(&self) -> f64 {
        let t_min = self.exposure_times.iter().copied().fold(f64::INFINITY, f64::min);
        1.0 / t_min
    }

    /// Same frames cropped to a window.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> ExposureStack {
        ExposureStack {
            images: self.images.iter().map(|im| im.crop(x0, y0, w, h)).collect(),
            ev_bias: self.ev_bias.clone(),
            exposure_times: self.exposure_times.clone(),
            reference_index: self.reference_index,
        }
    }

    /// Same metadata with new frames of identical shape.
    pub fn with_images(&self, images: Vec<Image>) -> Result<ExposureStack> {
        if images.len() != self.len() {
            return Err(Error::BadConfig(format!(
                "{} frames for a stack of {}",
                images.len(),
                self.len()
            )));
        }
        for im in &images {
            self.images[0].ensure_same_shape(im)?;
        }
        Ok(ExposureStack {
            images,
            ev_bias: self.ev_bias.clone(),
            exposure_times: self.exposure_times.clone(),
            reference_index: self.reference_index,
        })
    }

    /// Reorders the frames; metadata follows its frame.
    pub fn permuted(&self, order: &[usize]) -> ExposureStack {
        assert_eq!(order.len(), self.len());
        ExposureStack {
            images: order.iter().map(|&k| self.images[k].clone()).collect(),
            ev_bias: order.iter().map(|&k| self.ev_bias[k]).collect(),
            exposure_times: order.iter().map(|&k| self.exposure_times[k]).collect(),
            reference_index: order
                .iter()
                .position(|&k| k == self.reference_index)
                .expect("permutation keeps the reference"),
        }
    }
}

/// Soft or hard per-pixel membership in the moving region of one source frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    /// Stack index of the frame compared against the reference.
    pub source_index: usize,
}

impl MotionMask {
    pub fn new(width: usize, height: usize, values: Vec<f32>, source_index: usize) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} mask values for {width}x{height}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::BadConfig("mask values must lie in [0, 1]".into()));
        }
        Ok(MotionMask {
            width,
            height,
            values,
            source_index,
        })
    }

    pub fn zeros(width: usize, height: usize, source_index: usize) -> Self {
        Self::filled(width, height, source_index, 0.0)
    }

    pub fn filled(width: usize, height: usize, source_index: usize, value: f32) -> Self {
        MotionMask {
            width,
            height,
            values: vec![value; width * height],
            source_index,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn is_hard(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Number of pixels at or above one half.
    pub fn area(&self) -> usize {
        self.values.iter().filter(|&&v| v >= 0.5).count()
    }

    pub fn same_shape(&self, other: &MotionMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> MotionMask {
        let mut values = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            values.extend_from_slice(&self.values[y * self.width + x0..y * self.width + x0 + w]);
        }
        MotionMask {
            width: w,
            height: h,
            values,
            source_index: self.source_index,
        }
    }

    /// `[1, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            vec![1, self.height, self.width],
            self.values.iter().map(|&v| v as f64).collect(),
        )
    }
}

/// Linear-domain HDR image: three channels, finite and nonnegative.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceImage(Image);

impl RadianceImage {
    pub fn new(image: Image) -> Result<Self> {
        if image.channels != 3 {
            return Err(Error::ShapeMismatch(format!(
                "radiance images are RGB, got {} channels",
                image.channels
            )));
        }
        if let Some(v) = image.data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::NumericFailure(format!("radiance value {v}")));
        }
        Ok(RadianceImage(image))
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        RadianceImage(Image::zeros(width, height, 3))
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> RadianceImage {
        RadianceImage(self.0.crop(x0, y0, w, h))
    }
}

impl AsRef<Image> for RadianceImage {
    fn as_ref(&self) -> &Image {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(v: f32) -> Image {
        Image::filled(4, 4, 3, v)
    }

    #[test]
    fn exposure_times_follow_ev() {
        let s = ExposureStack::new(vec![frame(0.1), frame(0.5), frame(0.9)], vec![-2, 0, 2], Some(1)).unwrap();
        assert_eq!(s.exposure_times(), &[0.25, 1.0, 4.0]);
        let s = ExposureStack::new((0..5).map(|_| frame(0.5)).collect(), vec![-2, -1, 0, 1, 2], None).unwrap();
        assert_eq!(s.reference_index(), 2);
        for (k, &t) in s.exposure_times().iter().enumerate() {
            let ratio = t / s.exposure_times()[2];
            assert_eq!(ratio, 2f64.powi(s.ev_bias()[k] - s.ev_bias()[2]));
        }
    }

    #[test]
    fn stack_invariants_are_enforced() {
        let bad_ev = ExposureStack::new(vec![frame(0.1), frame(0.5)], vec![0, 0], None);
        assert!(matches!(bad_ev, Err(Error::BadEv(_))));
        let shape = ExposureStack::new(vec![frame(0.1), Image::zeros(5, 4, 3)], vec![0, 1], None);
        assert!(matches!(shape, Err(Error::ShapeMismatch(_))));
        let single = ExposureStack::new(vec![frame(0.1)], vec![0], None);
        assert!(matches!(single, Err(Error::BadConfig(_))));
        let clamped = ExposureStack::new(vec![frame(-0.5), frame(1.5)], vec![0, 1], None).unwrap();
        assert_eq!(clamped.image(0).max_value(), 0.0);
        assert_eq!(clamped.image(1).min_value(), 1.0);
    }

    #[test]
    fn radiance_rejects_negative() {
        assert!(RadianceImage::new(Image::filled(2, 2, 3, -1.0)).is_err());
        assert!(RadianceImage::new(Image::filled(2, 2, 3, 2.0)).is_ok());
    }
}
