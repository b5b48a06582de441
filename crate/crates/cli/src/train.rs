use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use ldct_core::dataio::{load_image, PairManifest, Split};
use ldct_core::trainkit::{fit, CheckpointWriter, EpochReport, ManifestSource, TrainConfig, TrainObserver};
use ldct_core::unet::{UNetConfig, UNetParams};
use ldct_core::Rng;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long = "batch", default_value_t = 4)]
    batch: usize,
    #[arg(long = "lr", default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 16)]
    base_channels: usize,
    /// Output channels of the bottleneck 1x1 projection.
    #[arg(long, default_value_t = 64)]
    bottleneck: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Checkpoints plus one progress line per epoch on stderr.
struct Progress(CheckpointWriter);

impl TrainObserver for Progress {
    fn on_epoch(&mut self, r: &EpochReport<'_>) -> ldct_core::Result<()> {
        let val = r.record.val_mse.map_or("-".to_string(), |v| format!("{v:.6e}"));
        eprintln!(
            "epoch {:>3}  train_mse {:.6e}  val_mse {val}{}",
            r.record.epoch,
            r.record.train_mse,
            if r.is_best { "  *" } else { "" }
        );
        self.0.on_epoch(r)
    }
}

/// Copy of the input manifest with the train/val split filled in, the
/// normalization actually used and absolute image paths.
fn resolved_manifest(
    m: &PairManifest,
    train_ids: &[String],
    val_ids: &[String],
    norm: ldct_core::dataio::Normalization,
    out: &std::path::Path,
) -> Result<PairManifest> {
    let abs = |rel: &str| -> Result<String> {
        let p = m.resolve(rel);
        let p = std::fs::canonicalize(&p).with_context(|| format!("resolving {}", p.display()))?;
        Ok(p.to_string_lossy().into_owned())
    };
    let mut pairs = Vec::with_capacity(m.pairs.len());
    for p in &m.pairs {
        let mut e = p.clone();
        e.full_path = abs(&p.full_path)?;
        e.quarter_path = abs(&p.quarter_path)?;
        e.ground_truth_path = p.ground_truth_path.as_deref().map(abs).transpose()?;
        if train_ids.contains(&p.id) {
            e.split = Some(Split::Train);
        } else if val_ids.contains(&p.id) {
            e.split = Some(Split::Val);
        }
        pairs.push(e);
    }
    Ok(PairManifest::new(norm, pairs, out)?)
}

pub fn run(a: Args) -> Result<()> {
    let manifest = PairManifest::read(&a.manifest)?;
    let ids = manifest.trainable_ids();
    let Some(first) = ids.first() else {
        bail!("{} has no pairs outside the test split", a.manifest.display());
    };
    let entry = manifest.get(first).expect("id from manifest");
    let probe = load_image(manifest.resolve(&entry.quarter_path))?;
    let net = UNetConfig {
        depth: a.depth,
        base_channels: a.base_channels,
        bottleneck_features: a.bottleneck,
        input_size: probe.height,
    };
    net.validate()?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        val_fraction: a.val_frac,
        ..TrainConfig::with_seed(a.seed)
    };
    cfg.validate()?;
    if a.epochs == 0 {
        bail!("--epochs must be at least 1");
    }

    crate::create_dir(&a.out)?;
    // The split draws from `Rng::new(seed)` inside `fit`; initialization
    // gets a separate stream.
    let params = UNetParams::build(net, &mut Rng::new(a.seed ^ 0x1417_1a11))?;
    let mut progress = Progress(CheckpointWriter {
        last: a.out.join("final.ckpt"),
        best: a.out.join("best.ckpt"),
    });
    let out = fit(params, &ManifestSource { manifest: &manifest }, &cfg, &mut progress)?;

    let curve_path = a.out.join("loss_curve.csv");
    std::fs::write(&curve_path, out.curve.to_csv()).with_context(|| format!("writing {}", curve_path.display()))?;
    resolved_manifest(&manifest, &out.train_ids, &out.val_ids, out.normalization, &a.out)?
        .write(a.out.join("train_manifest.json"))?;
    eprintln!(
        "trained {} epochs on {} pairs ({} validation); best epoch {}",
        out.curve.len(),
        out.train_ids.len(),
        out.val_ids.len(),
        out.best_epoch.map_or("-".to_string(), |e| e.to_string())
    );
    Ok(())
}
