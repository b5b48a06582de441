use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ldct_core::dataio::{denormalize, load_image, normalize, save_image, ImageBuffer, Normalization, PairManifest, Split};
use ldct_core::unet::{load_checkpoint, UNetParams};

use crate::evaluate::SplitArg;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    ckpt: PathBuf,
    /// A `.raw`/`.png` image, or a pair manifest (`.json`) to enhance every
    /// quarter-dose image it lists.
    #[arg(long)]
    input: PathBuf,
    /// Output image for a single input; output directory for a manifest,
    /// receiving `<id>.raw` per pair.
    #[arg(long)]
    output: PathBuf,
    /// With a manifest, only pairs tagged with this split.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
}

fn enhance(net: &UNetParams<f32>, norm: &Normalization, img: &ImageBuffer, what: &Path) -> Result<ImageBuffer> {
    let cfg = net.config();
    if img.height != img.width {
        bail!(
            "{} is {}x{}; the network expects square images, center-crop first",
            what.display(),
            img.height,
            img.width
        );
    }
    cfg.check_size(img.height).with_context(|| format!("{}", what.display()))?;
    let y = net.predict(&normalize(img, norm)?)?;
    Ok(denormalize(&y, norm)?)
}

pub fn run(a: Args) -> Result<()> {
    let (net, meta) = load_checkpoint::<f32>(&a.ckpt)?;
    let norm = meta
        .normalization
        .ok_or_else(|| anyhow!("{} carries no normalization window", a.ckpt.display()))?;

    let is_manifest = a.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if !is_manifest {
        if a.split.is_some() {
            bail!("--split applies only to manifest input");
        }
        let img = load_image(&a.input)?;
        let out = enhance(&net, &norm, &img, &a.input)?;
        save_image(&out, &a.output)?;
        return Ok(());
    }

    let manifest = PairManifest::read(&a.input)?;
    let split: Option<Split> = a.split.map(Into::into);
    crate::create_dir(&a.output)?;
    let mut n = 0;
    for p in manifest.pairs.iter().filter(|p| split.is_none() || p.split == split) {
        let path = manifest.resolve(&p.quarter_path);
        let out = enhance(&net, &norm, &load_image(&path)?, &path)?;
        save_image(&out, a.output.join(format!("{}.raw", p.id)))?;
        n += 1;
    }
    if n == 0 {
        bail!("no pairs selected from {}", a.input.display());
    }
    eprintln!("enhanced {n} images into {}", a.output.display());
    Ok(())
}
