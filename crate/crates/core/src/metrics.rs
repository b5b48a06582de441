//! Correlation, error and PSNR metrics plus the per-patient triplet report.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataio::ImageBuffer;
use crate::error::{Error, Result};

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::contract(format!(
            "sample lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::contract("correlation needs at least 2 samples"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::contract("samples must be finite"));
    }
    Ok(())
}

/// Pearson's r in double precision. Zero variance in either input is an
/// [`Error::UndefinedCorrelation`].
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "zero variance in a correlation input".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks `1..=n`; ties share the average of their positions.
pub fn rank(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean of (i+1)..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            out[k] = r;
        }
        i = j;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&rank(x), &rank(y))
}

fn check_images(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::contract(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

pub fn mse_metric(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_images(a, b)?;
    let sum: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum();
    Ok(sum / a.values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    /// The images are identical.
    Infinite,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> Psnr {
    if mse == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(10.0 * (max_val * max_val / mse).log10())
    }
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, max_val: f64) -> Result<Psnr> {
    Ok(psnr_from_mse(mse_metric(a, b)?, max_val))
}

/// Pearson and Spearman coefficients for one image pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: String,
    pub full_quarter: Correlation,
    pub full_enhanced: Correlation,
    pub quarter_enhanced: Correlation,
}

fn pixels(img: &ImageBuffer) -> Vec<f64> {
    img.values.iter().map(|&v| v as f64).collect()
}

fn correlate(a: &ImageBuffer, b: &ImageBuffer, label: &str) -> Result<Correlation> {
    check_images(a, b)?;
    let (x, y) = (pixels(a), pixels(b));
    let tag = |e: Error| match e {
        Error::UndefinedCorrelation(m) => Error::UndefinedCorrelation(format!("{label}: {m}")),
        other => other,
    };
    Ok(Correlation {
        pearson: pearson(&x, &y).map_err(tag)?,
        spearman: spearman(&x, &y).map_err(tag)?,
    })
}

pub fn triplet_report(
    full: &ImageBuffer,
    quarter: &ImageBuffer,
    enhanced: &ImageBuffer,
    id: &str,
) -> Result<TripletRecord> {
    Ok(TripletRecord {
        id: id.to_string(),
        full_quarter: correlate(full, quarter, &format!("{id} full-quarter"))?,
        full_enhanced: correlate(full, enhanced, &format!("{id} full-enhanced"))?,
        quarter_enhanced: correlate(quarter, enhanced, &format!("{id} quarter-enhanced"))?,
    })
}

/// One report row: correlations plus error figures against the full-dose
/// image and, when available, the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    #[serde(flatten)]
    pub triplet: TripletRecord,
    pub mse_quarter_full: f64,
    pub mse_enhanced_full: f64,
    pub psnr_quarter_full: Option<f64>,
    pub psnr_enhanced_full: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse_quarter_truth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse_enhanced_truth: Option<f64>,
}

pub const REPORT_CSV_HEADER: &str = "id,pearson_full_quarter,spearman_full_quarter,\
pearson_full_enhanced,spearman_full_enhanced,pearson_quarter_enhanced,spearman_quarter_enhanced,\
mse_quarter_full,mse_enhanced_full,psnr_quarter_full,psnr_enhanced_full,\
mse_quarter_truth,mse_enhanced_truth";

fn opt(v: Option<f64>, inf_if_none: bool) -> String {
    match v {
        Some(v) => format!("{v}"),
        None if inf_if_none => "inf".into(),
        None => String::new(),
    }
}

pub fn report_csv(rows: &[EvalRecord]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let t = &r.triplet;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            t.id,
            t.full_quarter.pearson,
            t.full_quarter.spearman,
            t.full_enhanced.pearson,
            t.full_enhanced.spearman,
            t.quarter_enhanced.pearson,
            t.quarter_enhanced.spearman,
            r.mse_quarter_full,
            r.mse_enhanced_full,
            opt(r.psnr_quarter_full, true),
            opt(r.psnr_enhanced_full, true),
            opt(r.mse_quarter_truth, false),
            opt(r.mse_enhanced_truth, false),
        ));
    }
    out
}

pub fn report_json(rows: &[EvalRecord]) -> String {
    serde_json::to_string_pretty(rows).expect("report serializes")
}
