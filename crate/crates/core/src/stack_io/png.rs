use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, RgbImage};

use super::MotionMask;
use crate::error::{Error, Result};
use crate::image::Image;

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
}

/// Loads an 8- or 16-bit RGB(A) image scaled to `[0, 1]`.
pub fn load_ldr(path: &Path) -> Result<Image> {
    let (w, h, data) = match open(path)? {
        DynamicImage::ImageRgb8(im) => {
            let (w, h) = im.dimensions();
            (w, h, im.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
        }
        DynamicImage::ImageRgb16(im) => {
            let (w, h) = im.dimensions();
            (w, h, im.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect())
        }
        other if other.color().bytes_per_pixel() / other.color().channel_count() > 1 => {
            let im = other.to_rgb16();
            let (w, h) = im.dimensions();
            (w, h, im.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect())
        }
        other => {
            let im = other.to_rgb8();
            let (w, h) = im.dimensions();
            (w, h, im.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
        }
    };
    Image::new(w as usize, h as usize, 3, data)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an RGB image as 8-bit PNG, rounding to the nearest level.
pub fn save_ldr(img: &Image, path: &Path) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected RGB, got {} channels",
            img.channels
        )));
    }
    let raw = img.data.iter().map(|&v| quantize(v)).collect();
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, raw).expect("buffer sized from image");
    buf.save(path)
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
}

/// Loads an 8-bit single-channel mask: 0 maps to 0.0 and 255 to 1.0.
pub fn load_mask(path: &Path, source_index: usize) -> Result<MotionMask> {
    match open(path)? {
        DynamicImage::ImageLuma8(im) => {
            let (w, h) = im.dimensions();
            let values = im.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            MotionMask::new(w as usize, h as usize, values, source_index)
        }
        other => Err(Error::WrongChannelCount(format!("{:?}", other.color()))),
    }
}

pub fn save_mask(mask: &MotionMask, path: &Path) -> Result<()> {
    let raw = mask.values.iter().map(|&v| quantize(v)).collect();
    let buf = GrayImage::from_raw(mask.width as u32, mask.height as u32, raw).expect("buffer sized from mask");
    buf.save(path)
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_masks() {
        let dir = tempfile::tempdir().unwrap();
        for (v, expect) in [(255u8, 1.0f32), (0, 0.0)] {
            let p = dir.path().join(format!("m{v}.png"));
            GrayImage::from_pixel(5, 3, image::Luma([v])).save(&p).unwrap();
            let m = load_mask(&p, 0).unwrap();
            assert_eq!((m.width, m.height), (5, 3));
            assert!(m.values.iter().all(|&x| x == expect));
        }
    }

    #[test]
    fn checkerboard_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let values = (0..64).map(|i| ((i % 8 + i / 8) % 2) as f32).collect();
        let m = MotionMask::new(8, 8, values, 2).unwrap();
        save_mask(&m, &p).unwrap();
        assert_eq!(load_mask(&p, 2).unwrap(), m);
    }

    #[test]
    fn soft_mask_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.png");
        let values = (0..30).map(|i| i as f32 / 29.0).collect();
        let m = MotionMask::new(6, 5, values, 0).unwrap();
        save_mask(&m, &p).unwrap();
        let back = load_mask(&p, 0).unwrap();
        for (a, b) in m.values.iter().zip(&back.values) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn rgb_mask_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        RgbImage::new(2, 2).save(&p).unwrap();
        assert!(matches!(load_mask(&p, 0), Err(Error::WrongChannelCount(_))));
    }

    #[test]
    fn sixteen_bit_ldr_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("16.png");
        let im = image::ImageBuffer::<image::Rgb<u16>, _>::from_pixel(2, 2, image::Rgb([65535, 0, 32768]));
        im.save(&p).unwrap();
        let loaded = load_ldr(&p).unwrap();
        assert_eq!(loaded.get(1, 1, 0), 1.0);
        assert_eq!(loaded.get(1, 1, 1), 0.0);
        assert!((loaded.get(1, 1, 2) - 0.5).abs() < 1e-4);
    }

    #[test]
    fn ldr_round_trip_on_quantized_levels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.png");
        let im = Image::from_fn(3, 2, 3, |x, y, c| ((x * 50 + y * 20 + c * 7) as f32) / 255.0);
        save_ldr(&im, &p).unwrap();
        assert_eq!(load_ldr(&p).unwrap(), im);
    }
}
