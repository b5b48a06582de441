use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use ldct_core::dataio::{load_image, montage, normalize, save_image, ImageBuffer, Normalization, PairManifest, Split};
use ldct_core::metrics::{mse_metric, psnr, report_csv, report_json, triplet_report, EvalRecord};

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding `<id>.raw` for every evaluated pair.
    #[arg(long)]
    enhanced_dir: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Write the report as JSON instead of CSV.
    #[arg(long)]
    json: bool,
    /// Also write a full | quarter | enhanced PNG per pair here.
    #[arg(long)]
    montage: Option<PathBuf>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
}

/// Maps through the manifest window so PSNR uses a peak of 1.
fn unit(img: &ImageBuffer, norm: &Normalization) -> Result<ImageBuffer> {
    let t = normalize(img, norm)?;
    Ok(ImageBuffer::new(img.height, img.width, t.into_data())?)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

pub fn run(a: Args) -> Result<()> {
    let manifest = PairManifest::read(&a.manifest)?;
    let norm = manifest.normalization;
    let split: Option<Split> = a.split.map(Into::into);
    let pairs: Vec<_> = manifest
        .pairs
        .iter()
        .filter(|p| split.is_none() || p.split == split)
        .collect();
    if pairs.is_empty() {
        bail!("no pairs selected from {}", a.manifest.display());
    }
    let enhanced_path = |id: &str| a.enhanced_dir.join(format!("{id}.raw"));
    let missing: Vec<&str> = pairs
        .iter()
        .filter(|p| !enhanced_path(&p.id).is_file())
        .map(|p| p.id.as_str())
        .collect();
    if !missing.is_empty() {
        bail!(
            "no enhanced image in {} for: {}",
            a.enhanced_dir.display(),
            missing.join(", ")
        );
    }
    if let Some(dir) = &a.montage {
        crate::create_dir(dir)?;
    }

    let mut rows = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let full = load_image(manifest.resolve(&p.full_path))?;
        let quarter = load_image(manifest.resolve(&p.quarter_path))?;
        let enhanced = load_image(enhanced_path(&p.id))?;
        let triplet = triplet_report(&full, &quarter, &enhanced, &p.id).with_context(|| format!("pair {}", p.id))?;
        let (f, q, e) = (unit(&full, &norm)?, unit(&quarter, &norm)?, unit(&enhanced, &norm)?);
        let truth = match &p.ground_truth_path {
            Some(t) => Some(unit(&load_image(manifest.resolve(t))?, &norm)?),
            None => None,
        };
        rows.push(EvalRecord {
            triplet,
            mse_quarter_full: mse_metric(&q, &f)?,
            mse_enhanced_full: mse_metric(&e, &f)?,
            psnr_quarter_full: psnr(&q, &f, 1.0)?.db(),
            psnr_enhanced_full: psnr(&e, &f, 1.0)?.db(),
            mse_quarter_truth: truth.as_ref().map(|t| mse_metric(&q, t)).transpose()?,
            mse_enhanced_truth: truth.as_ref().map(|t| mse_metric(&e, t)).transpose()?,
        });
        if let Some(dir) = &a.montage {
            save_image(&montage(&f, &q, &e, None)?, dir.join(format!("{}.png", p.id)))?;
        }
    }

    let text = if a.json { report_json(&rows) } else { report_csv(&rows) };
    std::fs::write(&a.report, text).with_context(|| format!("writing {}", a.report.display()))?;
    let finite = |v: Option<f64>| v.filter(|x| x.is_finite());
    eprintln!(
        "{} pairs  psnr quarter {:.3} dB  enhanced {:.3} dB  pearson(full, quarter) {:.5}  pearson(full, enhanced) {:.5}",
        rows.len(),
        mean(rows.iter().filter_map(|r| finite(r.psnr_quarter_full))),
        mean(rows.iter().filter_map(|r| finite(r.psnr_enhanced_full))),
        mean(rows.iter().map(|r| r.triplet.full_quarter.pearson)),
        mean(rows.iter().map(|r| r.triplet.full_enhanced.pearson)),
    );
    Ok(())
}
