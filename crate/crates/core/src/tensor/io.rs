//! 8-bit PNG / PGM conversion.
//!
//! Reading maps a byte `p` to `p / 255`; writing maps `v` to
//! `round(v * 255)` clamped to `[0, 255]`. Grayscale files load as one
//! channel, everything else as RGB (alpha is dropped).

use super::{Image, Shape, TensorError};
use image::{DynamicImage, GrayImage, ImageBuffer, RgbImage};
use std::path::Path;

pub fn read_image(path: impl AsRef<Path>) -> Result<Image, TensorError> {
    let decoded = image::open(path.as_ref())?;
    let gray = !decoded.color().has_color();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if gray {
        let buf = decoded.to_luma8();
        let data = buf.as_raw().iter().map(|&p| f64::from(p) / 255.0).collect();
        Image::new(Shape::new(1, h, w)?, data)
    } else {
        let buf = decoded.to_rgb8();
        let raw = buf.as_raw();
        let plane = h * w;
        let mut data = vec![0.0; 3 * plane];
        for (idx, px) in raw.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + idx] = f64::from(px[c]) / 255.0;
            }
        }
        Image::new(Shape::new(3, h, w)?, data)
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes a 1- or 3-channel image; the format follows the file extension.
pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let s = img.shape();
    let (w, h) = (s.width as u32, s.height as u32);
    let dynamic = match s.channels {
        1 => {
            let bytes = img.as_slice().iter().map(|&v| quantize(v)).collect();
            let buf: GrayImage =
                ImageBuffer::from_raw(w, h, bytes).expect("buffer length matches shape");
            DynamicImage::ImageLuma8(buf)
        }
        3 => {
            let plane = s.plane_len();
            let data = img.as_slice();
            let mut bytes = Vec::with_capacity(3 * plane);
            for idx in 0..plane {
                for c in 0..3 {
                    bytes.push(quantize(data[c * plane + idx]));
                }
            }
            let buf: RgbImage =
                ImageBuffer::from_raw(w, h, bytes).expect("buffer length matches shape");
            DynamicImage::ImageRgb8(buf)
        }
        n => return Err(TensorError::UnsupportedChannels(n)),
    };
    dynamic.save(path.as_ref())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rule() {
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(10.0 / 255.0), 10);
    }

    #[test]
    fn gray_png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(Shape::gray(5, 6), |_, i, j| ((i * 6 + j) * 7) as f64 / 255.0);
        for name in ["a.png", "a.pgm"] {
            let path = dir.path().join(name);
            write_image(&img, &path).unwrap();
            let back = read_image(&path).unwrap();
            assert_eq!(back.shape(), img.shape());
            for (a, b) in back.as_slice().iter().zip(img.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rgb_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = Shape::new(3, 3, 4).unwrap();
        let img = Image::from_fn(s, |c, i, j| ((c * 40 + i * 9 + j) % 256) as f64 / 255.0);
        let path = dir.path().join("rgb.png");
        write_image(&img, &path).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
    }

    #[test]
    fn two_channels_rejected() {
        let img = Image::zeros(Shape::new(2, 2, 2).unwrap());
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_image(&img, dir.path().join("x.png")),
            Err(TensorError::UnsupportedChannels(2))
        ));
    }
}
