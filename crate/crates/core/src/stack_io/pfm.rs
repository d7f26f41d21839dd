//! Portable float map I/O.
//!
//! Files are written as `PF\n<width> <height>\n-1.0\n` followed by
//! little-endian `f32` RGB triplets. Scanlines run bottom-to-top, as the
//! format prescribes. Big-endian files (positive scale) are accepted on read.

use std::fs;
use std::path::Path;

use super::RadianceImage;
use crate::error::{Error, Result};
use crate::image::Image;

pub fn encode_pfm(img: &RadianceImage) -> Vec<u8> {
    let im = img.image();
    let (w, h) = (im.width, im.height);
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 12);
    for y in (0..h).rev() {
        for v in &im.data[y * w * 3..(y + 1) * w * 3] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::CorruptHeader("unexpected end of PFM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::CorruptHeader("non-ASCII PFM header".into()))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<RadianceImage> {
    let mut pos = 0;
    match next_token(bytes, &mut pos)? {
        "PF" => {}
        "Pf" => return Err(Error::CorruptHeader("grayscale PFM where RGB expected".into())),
        other => return Err(Error::CorruptHeader(format!("bad PFM magic {other:?}"))),
    }
    let parse = |t: &str| {
        t.parse::<usize>()
            .map_err(|_| Error::CorruptHeader(format!("bad PFM dimension {t:?}")))
    };
    let w = parse(next_token(bytes, &mut pos)?)?;
    let h = parse(next_token(bytes, &mut pos)?)?;
    let scale_tok = next_token(bytes, &mut pos)?;
    let scale: f32 = scale_tok
        .parse()
        .map_err(|_| Error::CorruptHeader(format!("bad PFM scale {scale_tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::CorruptHeader(format!("bad PFM scale {scale}")));
    }
    // exactly one whitespace byte separates header and payload
    pos += 1;
    let n = w * h * 3;
    let payload = bytes.get(pos..).filter(|p| p.len() == n * 4).ok_or_else(|| {
        Error::CorruptHeader(format!(
            "PFM payload has {} bytes, expected {}",
            bytes.len().saturating_sub(pos),
            n * 4
        ))
    })?;
    let little = scale < 0.0;
    let mut data = vec![0f32; n];
    for (i, c) in payload.chunks_exact(4).enumerate() {
        let b = [c[0], c[1], c[2], c[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let row = i / (w * 3);
        let within = i % (w * 3);
        data[(h - 1 - row) * w * 3 + within] = v;
    }
    RadianceImage::new(Image::new(w, h, 3, data)?)
}

pub fn save_hdr(img: &RadianceImage, path: &Path) -> Result<()> {
    fs::write(path, encode_pfm(img)).map_err(|e| Error::io(path, e))
}

pub fn load_hdr(path: &Path) -> Result<RadianceImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn radiance(w: usize, h: usize, data: Vec<f32>) -> RadianceImage {
        RadianceImage::new(Image::new(w, h, 3, data).unwrap()).unwrap()
    }

    proptest! {
        #[test]
        fn pfm_round_trip_is_bit_exact(
            (w, h, data) in (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
                (Just(w), Just(h), proptest::collection::vec(0f32..1e4, w * h * 3))
            })
        ) {
            let img = radiance(w, h, data);
            let back = decode_pfm(&encode_pfm(&img)).unwrap();
            let same = img.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
            prop_assert_eq!(back.width(), w);
            prop_assert_eq!(back.height(), h);
        }
    }

    #[test]
    fn zeros_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pfm");
        let img = RadianceImage::zeros(4, 4);
        save_hdr(&img, &path).unwrap();
        assert_eq!(load_hdr(&path).unwrap(), img);
    }

    #[test]
    fn header_and_scanline_order() {
        // top row red, bottom row green
        let img = radiance(1, 2, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let bytes = encode_pfm(&img);
        assert!(bytes.starts_with(b"PF\n1 2\n-1.0\n"));
        let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        let second = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
        assert_eq!((first, second), (0.0, 1.0));
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let bytes = encode_pfm(&RadianceImage::zeros(3, 3));
        let err = decode_pfm(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(matches!(err, Error::CorruptHeader(_)));
        assert!(matches!(decode_pfm(b"P6\n1 1\n255\n"), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn big_endian_input_is_accepted() {
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [0.5f32, 2.0, 8.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        assert_eq!(decode_pfm(&bytes).unwrap().data(), &[0.5, 2.0, 8.0]);
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_hdr(Path::new("/nonexistent/x.pfm")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
