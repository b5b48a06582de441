//! Image files, intensity normalization, cropping, pair manifests and
//! side-by-side montages.

mod image;
mod manifest;

pub use image::{
    decode_png, decode_raw, encode_png, encode_raw, load_image, save_image, ImageBuffer,
};
pub use manifest::{PairEntry, PairManifest, Split, MANIFEST_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    MinMax,
}

/// Min-max intensity window mapping `[lo, hi]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mode: NormMode,
    pub lo: f64,
    pub hi: f64,
}

impl Normalization {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::contract(format!(
                "normalization needs finite lo < hi, got lo={lo} hi={hi}"
            )));
        }
        Ok(Self {
            mode: NormMode::MinMax,
            lo,
            hi,
        })
    }

    /// Global min and max over every value of every image.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a ImageBuffer>) -> Result<Self> {
        let (lo, hi) = images
            .into_iter()
            .map(ImageBuffer::min_max)
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), (lo, hi)| {
                (a.min(lo), b.max(hi))
            });
        Self::new(lo as f64, hi as f64)
    }

    fn check(&self) -> Result<()> {
        Self::new(self.lo, self.hi).map(|_| ())
    }
}

/// Maps an image to a `1×1×H×W` tensor via `(v − lo) / (hi − lo)`, clamped to `[0, 1]`.
pub fn normalize(img: &ImageBuffer, norm: &Normalization) -> Result<Tensor<f32>> {
    norm.check()?;
    let scale = norm.hi - norm.lo;
    let values = img
        .values
        .iter()
        .map(|&v| ((v as f64 - norm.lo) / scale).clamp(0.0, 1.0) as f32)
        .collect();
    Tensor::from_vec(&[1, 1, img.height, img.width], values)
}

/// Inverse of [`normalize`] for a single-image tensor (`H×W`, `1×H×W` or
/// `1×1×H×W`); results are clamped to `[lo, hi]`.
pub fn denormalize(t: &Tensor<f32>, norm: &Normalization) -> Result<ImageBuffer> {
    norm.check()?;
    let shape = t.shape();
    let (h, w) = match shape.len() {
        2.. if shape[..shape.len() - 2].iter().all(|&d| d == 1) => {
            (shape[shape.len() - 2], shape[shape.len() - 1])
        }
        _ => {
            return Err(Error::contract(format!(
                "denormalize expects a single image tensor, got shape {shape:?}"
            )))
        }
    };
    let scale = norm.hi - norm.lo;
    let values = t
        .data()
        .iter()
        .map(|&v| (v as f64 * scale + norm.lo).clamp(norm.lo, norm.hi) as f32)
        .collect();
    ImageBuffer::new(h, w, values)
}

/// Crops equally from both sides; an odd remainder leaves the extra
/// row/column at the bottom/right, so 4→3 keeps rows 0..=2.
pub fn center_crop(img: &ImageBuffer, target_h: usize, target_w: usize) -> Result<ImageBuffer> {
    if target_h == 0 || target_w == 0 || target_h > img.height || target_w > img.width {
        return Err(Error::contract(format!(
            "cannot crop {}x{} to {target_h}x{target_w}",
            img.height, img.width
        )));
    }
    let top = (img.height - target_h) / 2;
    let left = (img.width - target_w) / 2;
    let mut values = Vec::with_capacity(target_h * target_w);
    for y in top..top + target_h {
        let row = y * img.width;
        values.extend_from_slice(&img.values[row + left..row + left + target_w]);
    }
    ImageBuffer::new(target_h, target_w, values)
}

/// Rectangle inside an image, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZoomBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

pub const MONTAGE_SEPARATOR: usize = 2;

/// Full, quarter and enhanced panels left to right with 2-px separators.
///
/// With a zoom box, the boxed region of each panel is magnified by the largest
/// integer factor that fits the panel width (nearest neighbour) and placed in a
/// strip below, again separated by 2 px. Separators take the montage maximum.
pub fn montage(
    full: &ImageBuffer,
    quarter: &ImageBuffer,
    enhanced: &ImageBuffer,
    zoom: Option<ZoomBox>,
) -> Result<ImageBuffer> {
    if !full.same_shape(quarter) || !full.same_shape(enhanced) {
        return Err(Error::contract(format!(
            "montage panels differ in shape: {}x{}, {}x{}, {}x{}",
            full.height, full.width, quarter.height, quarter.width, enhanced.height, enhanced.width
        )));
    }
    let (h, w) = (full.height, full.width);
    let sep = MONTAGE_SEPARATOR;
    if let Some(z) = zoom {
        if z.height == 0 || z.width == 0 || z.top + z.height > h || z.left + z.width > w {
            return Err(Error::contract(format!(
                "zoom box {z:?} lies outside the {h}x{w} image"
            )));
        }
    }
    let scale = zoom.map(|z| (w / z.width).max(1)).unwrap_or(0);
    let strip_h = zoom.map(|z| sep + z.height * scale).unwrap_or(0);
    let out_w = 3 * w + 2 * sep;
    let out_h = h + strip_h;

    let panels = [full, quarter, enhanced];
    let peak = panels
        .iter()
        .map(|p| p.min_max().1)
        .fold(f32::NEG_INFINITY, f32::max);
    let mut out = ImageBuffer::filled(out_h, out_w, peak);
    for (k, p) in panels.iter().enumerate() {
        let x0 = k * (w + sep);
        for y in 0..h {
            let dst = y * out_w + x0;
            out.values[dst..dst + w].copy_from_slice(&p.values[y * w..(y + 1) * w]);
        }
        if let Some(z) = zoom {
            for y in 0..z.height * scale {
                for x in 0..z.width * scale {
                    let v = p.get(z.top + y / scale, z.left + x / scale);
                    out.set(h + sep + y, x0 + x, v);
                }
            }
        }
    }
    Ok(out)
}
