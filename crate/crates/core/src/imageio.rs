//! PNG encoding of rasters, in memory and on disk.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, Luma, RgbImage};
use thiserror::Error;

use crate::grid::{DepthMap, Grid, ImageBuffer, MaskMap};

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad raster: {0}")]
    Shape(String),
}

/// `[0, 1]` to 8 bits, rounding to nearest.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_rgb8(image: &ImageBuffer) -> RgbImage {
    let bytes = image.data().iter().flat_map(|px| px.map(quantize)).collect();
    RgbImage::from_raw(image.width() as u32, image.height() as u32, bytes).expect("sized")
}

pub fn from_rgb8(img: &RgbImage) -> ImageBuffer {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
        .collect();
    Grid::from_vec(w, h, data)
}

fn encode(img: DynamicImage) -> Result<Vec<u8>, ImageIoError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn encode_rgb_png(image: &ImageBuffer) -> Result<Vec<u8>, ImageIoError> {
    encode(DynamicImage::ImageRgb8(to_rgb8(image)))
}

/// Any PNG color type, converted to RGB.
pub fn decode_rgb_png(bytes: &[u8]) -> Result<ImageBuffer, ImageIoError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    Ok(from_rgb8(&img.to_rgb8()))
}

/// 8-bit grayscale, 255 where the mask is set.
pub fn encode_mask_png(mask: &MaskMap) -> Result<Vec<u8>, ImageIoError> {
    let bytes = mask.data().iter().map(|&m| if m { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes).expect("sized");
    encode(DynamicImage::ImageLuma8(img))
}

/// Pixels at or above half intensity are set.
pub fn decode_mask_png(bytes: &[u8]) -> Result<MaskMap, ImageIoError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Grid::from_vec(w, h, img.pixels().map(|p| p[0] >= 128).collect()))
}

/// Depth quantized to 16 bits as `round((d − offset) / scale)`, with 0
/// reserved for undefined pixels. Returns the PNG and `(scale, offset)`.
pub fn encode_depth_png(depth: &DepthMap) -> Result<(Vec<u8>, f64, f64), ImageIoError> {
    let valid = depth.data().iter().copied().filter(|d| d.is_finite() && *d > 0.0);
    let (lo, hi) = valid.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    let (scale, offset) = if lo.is_finite() {
        // codes 1..=65535 span [lo, hi]
        let span = (hi - lo).max(1e-12);
        (span / 65534.0, lo - span / 65534.0)
    } else {
        (1.0, 0.0)
    };
    let codes: Vec<u16> = depth
        .data()
        .iter()
        .map(|&d| {
            if d.is_finite() && d > 0.0 {
                ((d - offset) / scale).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    let img = image::ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(depth.width() as u32, depth.height() as u32, codes)
        .expect("sized");
    Ok((encode(DynamicImage::ImageLuma16(img))?, scale, offset))
}

pub fn decode_depth_png(bytes: &[u8], scale: f64, offset: f64) -> Result<DepthMap, ImageIoError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| {
            if p[0] == 0 {
                f64::NAN
            } else {
                p[0] as f64 * scale + offset
            }
        })
        .collect();
    Ok(Grid::from_vec(w, h, data))
}

pub fn write_rgb_png(path: &Path, image: &ImageBuffer) -> Result<(), ImageIoError> {
    std::fs::write(path, encode_rgb_png(image)?)?;
    Ok(())
}

pub fn read_rgb_png(path: &Path) -> Result<ImageBuffer, ImageIoError> {
    decode_rgb_png(&std::fs::read(path)?)
}

pub fn write_mask_png(path: &Path, mask: &MaskMap) -> Result<(), ImageIoError> {
    std::fs::write(path, encode_mask_png(mask)?)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<MaskMap, ImageIoError> {
    decode_mask_png(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_roundtrip_is_exact_on_8bit_values() {
        let img = ImageBuffer::from_fn(5, 3, |r, c| [(r * 40) as f32 / 255.0, (c * 50) as f32 / 255.0, 1.0]);
        let back = decode_rgb_png(&encode_rgb_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn depth_roundtrip_within_quantum() {
        let mut depth = DepthMap::from_fn(7, 4, |r, c| 0.5 + 0.37 * r as f64 + 0.11 * c as f64);
        depth[(1, 1)] = f64::NAN;
        let (png, scale, offset) = encode_depth_png(&depth).unwrap();
        let back = decode_depth_png(&png, scale, offset).unwrap();
        for (a, b) in back.data().iter().zip(depth.data()) {
            if b.is_nan() {
                assert!(a.is_nan());
            } else {
                assert!((a - b).abs() <= scale);
            }
        }
    }

    #[test]
    fn mask_roundtrip() {
        let mask = MaskMap::from_fn(6, 5, |r, c| (r * c) % 3 == 1);
        assert_eq!(decode_mask_png(&encode_mask_png(&mask).unwrap()).unwrap(), mask);
    }
}
