use crate::dataio::{load_image, ImageBuffer, PairManifest};
use crate::error::{Error, Result};

/// Supplies `(quarter, full)` image pairs by id.
pub trait PairSource: Sync {
    fn ids(&self) -> Vec<String>;
    fn load(&self, id: &str) -> Result<(ImageBuffer, ImageBuffer)>;
}

/// Every manifest pair not tagged `test`.
pub struct ManifestSource<'a> {
    pub manifest: &'a PairManifest,
}

impl PairSource for ManifestSource<'_> {
    fn ids(&self) -> Vec<String> {
        self.manifest.trainable_ids()
    }

    fn load(&self, id: &str) -> Result<(ImageBuffer, ImageBuffer)> {
        let e = self
            .manifest
            .get(id)
            .ok_or_else(|| Error::Manifest(format!("no pair with id {id}")))?;
        Ok((
            load_image(self.manifest.resolve(&e.quarter_path))?,
            load_image(self.manifest.resolve(&e.full_path))?,
        ))
    }
}

#[derive(Debug, Clone, Default)]
pub struct InMemorySource {
    /// `(id, quarter, full)`.
    pub pairs: Vec<(String, ImageBuffer, ImageBuffer)>,
}

impl PairSource for InMemorySource {
    fn ids(&self) -> Vec<String> {
        self.pairs.iter().map(|p| p.0.clone()).collect()
    }

    fn load(&self, id: &str) -> Result<(ImageBuffer, ImageBuffer)> {
        self.pairs
            .iter()
            .find(|p| p.0 == id)
            .map(|p| (p.1.clone(), p.2.clone()))
            .ok_or_else(|| Error::contract(format!("no pair with id {id}")))
    }
}
