//! File formats for maps and images.
//!
//! The VCX1 raw format is `b"VCX1"`, then `u32` LE height, `u32` LE width,
//! then `height * width` `f32` LE values in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use image::imageops::FilterType;
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::types::{Image, SaliencyMap};

pub const VCX1_MAGIC: &[u8; 4] = b"VCX1";

/// A plain H×W float map as stored in a VCX1 file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

pub fn encode_vcx1(height: usize, width: usize, values: &[f32]) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::mismatch(
            format!("{height}x{width} values"),
            format!("{} values", values.len()),
        ));
    }
    let h = u32::try_from(height).map_err(|_| Error::InvalidDimension("height exceeds u32".into()))?;
    let w = u32::try_from(width).map_err(|_| Error::InvalidDimension("width exceeds u32".into()))?;
    let mut out = Vec::with_capacity(12 + values.len() * 4);
    out.extend_from_slice(VCX1_MAGIC);
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_vcx1(bytes: &[u8]) -> Result<RawMap> {
    if bytes.len() < 12 || &bytes[..4] != VCX1_MAGIC {
        return Err(Error::InvalidArgument("not a VCX1 file".into()));
    }
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != height * width * 4 {
        return Err(Error::mismatch(
            format!("{} payload bytes", height * width * 4),
            format!("{} bytes", body.len()),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(RawMap { height, width, values })
}

pub fn write_vcx1(path: &Path, height: usize, width: usize, values: &[f32]) -> Result<()> {
    let bytes = encode_vcx1(height, width, values)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_vcx1(path: &Path) -> Result<RawMap> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_vcx1(&bytes)
}

fn to_byte(v: f32) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// 8-bit grayscale rendering, `v -> round(255 v)`.
pub fn grayscale(height: usize, width: usize, values: &[f32]) -> GrayImage {
    ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        Luma([to_byte(values[y as usize * width + x as usize])])
    })
}

pub fn encode_png(img: &image::DynamicImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn grayscale_png(map: &SaliencyMap) -> Result<Vec<u8>> {
    let (h, w) = map.dims();
    encode_png(&grayscale(h, w, map.values()).into())
}

/// Jet colour map on `[0, 1]`.
fn jet(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let ramp = |c: f32| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// Heat-map overlay: `0.5 * input + 0.5 * jet(saliency)`.
pub fn overlay(image: &Image, map: &SaliencyMap) -> Result<RgbImage> {
    let (h, w) = map.dims();
    if image.height() != h || image.width() != w {
        return Err(Error::mismatch(
            format!("{h}x{w} image"),
            format!("{}x{}", image.height(), image.width()),
        ));
    }
    let c = image.channels();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        let px = image.pixel(p);
        let heat = jet(map.values()[p]);
        let mut rgb = [0u8; 3];
        for (k, out) in rgb.iter_mut().enumerate() {
            let base = if c >= 3 { px[k] } else { px[0] };
            *out = to_byte(0.5 * base + 0.5 * heat[k]);
        }
        Rgb(rgb)
    }))
}

/// Load an image file as RGB, bilinearly resized to `height × width`, with
/// values scaled to `[0, 1]`.
pub fn load_image(path: &Path, height: usize, width: usize) -> Result<(Image, (u32, u32))> {
    let decoded = image::open(path)?;
    let original = (decoded.width(), decoded.height());
    let rgb = decoded.to_rgb8();
    let resized = if rgb.dimensions() == (width as u32, height as u32) {
        rgb
    } else {
        image::imageops::resize(&rgb, width as u32, height as u32, FilterType::Triangle)
    };
    let data = resized.as_raw().iter().map(|&b| f32::from(b) / 255.0).collect();
    Ok((Image::new(height, width, 3, data)?, original))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SaliencyKind;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let bytes = encode_vcx1(2, 3, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(&bytes[..4], b"VCX1");
        assert_eq!(&bytes[4..8], &[2, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[3, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 12 + 24);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let mut bytes = encode_vcx1(2, 2, &[0.5; 4]).unwrap();
        bytes.pop();
        assert!(decode_vcx1(&bytes).is_err());
        assert!(decode_vcx1(b"VCX2\0\0\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn grayscale_rounds() {
        let map = SaliencyMap::new(1, 3, vec![0.0, 0.5, 1.0], SaliencyKind::Normalized).unwrap();
        let g = grayscale(1, 3, map.values());
        assert_eq!(g.as_raw(), &vec![0u8, 128, 255]);
    }

    #[test]
    fn overlay_blends_half() {
        let image = Image::new(1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        let map = SaliencyMap::new(1, 1, vec![0.0], SaliencyKind::Normalized).unwrap();
        let img = overlay(&image, &map).unwrap();
        // jet(0) = (0, 0, 0.5)
        assert_eq!(img.as_raw(), &vec![128u8, 128, 191]);
    }

    proptest! {
        #[test]
        fn vcx1_round_trip(h in 1usize..8, w in 1usize..8, seed in any::<u32>()) {
            let values: Vec<f32> = (0..h * w).map(|i| (i as u32 ^ seed) as f32 * 1e-3).collect();
            let decoded = decode_vcx1(&encode_vcx1(h, w, &values).unwrap()).unwrap();
            prop_assert_eq!(decoded, RawMap { height: h, width: w, values });
        }
    }
}
