use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use ldct_core::ctsim::{
    simulate_many, DoseModel, SimConfig, SimulatedPair, DEFAULT_ANGLES, DEFAULT_N0,
    DEFAULT_PIXEL_SPACING, DEFAULT_SIZE,
};
use ldct_core::dataio::{center_crop, save_image, Normalization, PairEntry, PairManifest, Split};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Number of pairs.
    #[arg(long)]
    count: usize,
    /// Reconstruction grid side, in pixels.
    #[arg(long, default_value_t = DEFAULT_SIZE)]
    size: usize,
    #[arg(long, default_value_t = DEFAULT_ANGLES)]
    angles: usize,
    /// Full-dose incident photons per detector bin.
    #[arg(long, default_value_t = DEFAULT_N0)]
    n0: f64,
    /// Pixel side in cm.
    #[arg(long, default_value_t = DEFAULT_PIXEL_SPACING)]
    pixel_spacing: f64,
    /// Center-crop every image to this side after reconstruction.
    #[arg(long)]
    crop: Option<usize>,
    /// Tag the last N pairs as the test split.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn crop(p: SimulatedPair, side: Option<usize>) -> Result<SimulatedPair> {
    let Some(s) = side else { return Ok(p) };
    Ok(SimulatedPair {
        full: center_crop(&p.full, s, s)?,
        quarter: center_crop(&p.quarter, s, s)?,
        truth: center_crop(&p.truth, s, s)?,
    })
}

pub fn run(a: Args) -> Result<()> {
    if a.count == 0 {
        bail!("--count must be at least 1");
    }
    if a.holdout >= a.count {
        bail!("--holdout {} leaves no pairs for training out of {}", a.holdout, a.count);
    }
    if a.size < 2 || a.angles == 0 || !(a.pixel_spacing > 0.0 && a.pixel_spacing.is_finite()) {
        bail!(
            "invalid geometry: size {}, angles {}, pixel spacing {}",
            a.size,
            a.angles,
            a.pixel_spacing
        );
    }
    if let Some(c) = a.crop {
        if c == 0 || c > a.size {
            bail!("--crop {c} must lie in 1..={}", a.size);
        }
    }
    let cfg = SimConfig {
        size: a.size,
        num_angles: a.angles,
        pixel_spacing: a.pixel_spacing,
        dose: DoseModel::new(a.n0)?,
    };

    for dir in ["full", "quarter", "truth"] {
        crate::create_dir(&a.out.join(dir))?;
    }
    let pairs = simulate_many(&cfg, a.seed, a.count)?
        .into_iter()
        .map(|p| crop(p, a.crop))
        .collect::<Result<Vec<_>>>()?;

    let first_test = a.count - a.holdout;
    let mut entries = Vec::with_capacity(a.count);
    for (i, p) in pairs.iter().enumerate() {
        let id = format!("pair_{i:04}");
        let rel = |dir: &str| format!("{dir}/{id}.raw");
        for (dir, img) in [("full", &p.full), ("quarter", &p.quarter), ("truth", &p.truth)] {
            save_image(img, a.out.join(rel(dir)))?;
        }
        entries.push(PairEntry {
            full_path: rel("full"),
            quarter_path: rel("quarter"),
            ground_truth_path: Some(rel("truth")),
            split: (i >= first_test).then_some(Split::Test),
            id,
        });
    }
    let norm = Normalization::from_images(pairs[..first_test].iter().flat_map(|p| [&p.full, &p.quarter]))
        .context("computing the normalization window")?;
    let manifest = PairManifest::new(norm, entries, &a.out)?;
    manifest.write(a.out.join("manifest.json"))?;
    eprintln!(
        "simulated {} pairs ({} held out) into {}",
        a.count,
        a.holdout,
        a.out.display()
    );
    Ok(())
}
