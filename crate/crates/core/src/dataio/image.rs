//! Grayscale image buffers and their two on-disk formats.
//!
//! * `.raw`: `"LDRW"`, height and width as little-endian `u16`, then
//!   `height * width` little-endian `f32` values in row-major order.
//! * `.png`: 16-bit grayscale; sample `k` maps to the value `k / 65535`.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, ImageError, Result};

const RAW_MAGIC: &[u8; 4] = b"LDRW";
const RAW_HEADER: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    /// Row-major values in storage units.
    pub values: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::contract(format!(
                "image {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("image contains non-finite values"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.values[y * self.width + x] = v;
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Raw,
    Png,
}

fn format_of(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("raw") => Ok(Format::Raw),
        Some(e) if e.eq_ignore_ascii_case("png") => Ok(Format::Png),
        other => Err(ImageError::UnknownFormat(format!(
            "unsupported extension {:?} for {}",
            other.unwrap_or(""),
            path.display()
        ))
        .into()),
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let format = format_of(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Raw => decode_raw(&bytes),
        Format::Png => decode_png(&bytes),
    }
}

pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format_of(path)? {
        Format::Raw => encode_raw(img)?,
        Format::Png => encode_png(img)?,
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn check_dims(img: &ImageBuffer) -> Result<(u16, u16)> {
    match (u16::try_from(img.height), u16::try_from(img.width)) {
        (Ok(h), Ok(w)) if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(ImageError::DimensionOverflow {
            height: img.height,
            width: img.width,
        }
        .into()),
    }
}

pub fn encode_raw(img: &ImageBuffer) -> Result<Vec<u8>> {
    let (h, w) = check_dims(img)?;
    let mut out = Vec::with_capacity(RAW_HEADER + 4 * img.values.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    for v in &img.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_raw(bytes: &[u8]) -> Result<ImageBuffer> {
    if bytes.len() < RAW_HEADER {
        return Err(ImageError::TruncatedPayload {
            expected: RAW_HEADER,
            found: bytes.len(),
        }
        .into());
    }
    if &bytes[..4] != RAW_MAGIC {
        return Err(ImageError::UnknownFormat("bad raw magic".into()).into());
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    if h == 0 || w == 0 {
        return Err(ImageError::DimensionOverflow {
            height: h,
            width: w,
        }
        .into());
    }
    let expected = RAW_HEADER + 4 * h * w;
    if bytes.len() < expected {
        return Err(ImageError::TruncatedPayload {
            expected,
            found: bytes.len(),
        }
        .into());
    }
    let values = bytes[RAW_HEADER..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ImageBuffer::new(h, w, values)
}

/// 16-bit grayscale PNG; values are clamped to `[0, 1]` and scaled by 65535.
pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    check_dims(img)?;
    let mut out = Vec::new();
    {
        let mut encoder =
            png::Encoder::new(BufWriter::new(&mut out), img.width as u32, img.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Sixteen);
        let mut writer = encoder
            .write_header()
            .map_err(|e| ImageError::Png(e.to_string()))?;
        let mut data = Vec::with_capacity(img.values.len() * 2);
        for &v in &img.values {
            let q = (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16;
            data.extend_from_slice(&q.to_be_bytes());
        }
        writer
            .write_image_data(&data)
            .map_err(|e| ImageError::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageBuffer> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| ImageError::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ImageError::Png(e.to_string()))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let values: Vec<f32> = match (info.color_type, info.bit_depth) {
        (png::ColorType::Grayscale, png::BitDepth::Sixteen) => buf[..h * w * 2]
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0) as f32)
            .collect(),
        (png::ColorType::Grayscale, png::BitDepth::Eight) => buf[..h * w]
            .iter()
            .map(|&b| (b as f64 / 255.0) as f32)
            .collect(),
        (color, depth) => {
            return Err(ImageError::UnknownFormat(format!(
                "unsupported PNG layout {color:?}/{depth:?}; expected grayscale"
            ))
            .into())
        }
    };
    ImageBuffer::new(h, w, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn raw_round_trip_is_bit_exact() {
        let mut rng = Rng::new(1);
        let values = (0..64 * 64).map(|_| rng.normal(0.0, 3.0) as f32).collect();
        let img = ImageBuffer::new(64, 64, values).unwrap();
        let back = decode_raw(&encode_raw(&img).unwrap()).unwrap();
        let a: Vec<u32> = img.values.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!((back.height, back.width), (64, 64));
    }

    #[test]
    fn truncated_raw_payload() {
        let img = ImageBuffer::filled(4, 5, 1.0);
        let bytes = encode_raw(&img).unwrap();
        let err = decode_raw(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().starts_with("truncated payload"), "{err}");
        let err = decode_raw(&bytes[..5]).unwrap_err();
        assert!(matches!(err, Error::Image(ImageError::TruncatedPayload { .. })));
    }

    #[test]
    fn bad_magic_and_extension() {
        let mut bytes = encode_raw(&ImageBuffer::filled(2, 2, 0.0)).unwrap();
        bytes[0] = b'Q';
        assert!(matches!(
            decode_raw(&bytes).unwrap_err(),
            Error::Image(ImageError::UnknownFormat(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        let err = save_image(&ImageBuffer::filled(2, 2, 0.0), dir.path().join("x.tif")).unwrap_err();
        assert!(matches!(err, Error::Image(ImageError::UnknownFormat(_))));
    }

    #[test]
    fn dimension_overflow() {
        let img = ImageBuffer::filled(1, 70_000, 0.0);
        assert!(matches!(
            encode_raw(&img).unwrap_err(),
            Error::Image(ImageError::DimensionOverflow { .. })
        ));
    }

    #[test]
    fn png_round_trip_on_the_16_bit_grid() {
        let values: Vec<f32> = (0..30u32)
            .map(|i| ((i * 2179) % 65536) as f64 / 65535.0)
            .map(|v| v as f32)
            .collect();
        let img = ImageBuffer::new(5, 6, values).unwrap();
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }
}
