//! Desk-scale CT simulator: ellipse phantoms, parallel-beam projection,
//! Poisson transmission noise and filtered back-projection.

mod fft;
mod phantom;
mod projection;

pub use fft::fft_in_place;
pub use phantom::{make_phantom, Ellipse, Phantom, PhantomSpec};
pub use projection::{angles, fbp, radon, Sinogram};

use rayon::prelude::*;

use crate::dataio::ImageBuffer;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_SIZE: usize = 64;
pub const DEFAULT_ANGLES: usize = 180;
pub const DEFAULT_PIXEL_SPACING: f64 = 0.25;
pub const DEFAULT_N0: f64 = 1e5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoseModel {
    /// Mean unattenuated photon count per bin at full dose.
    pub n0_full: f64,
}

impl DoseModel {
    pub fn new(n0_full: f64) -> Result<Self> {
        if !(n0_full > 0.0 && n0_full.is_finite()) {
            return Err(Error::contract(format!("n0 must be positive, got {n0_full}")));
        }
        Ok(Self { n0_full })
    }

    pub fn n0_quarter(&self) -> f64 {
        self.n0_full / 4.0
    }
}

impl Default for DoseModel {
    fn default() -> Self {
        Self { n0_full: DEFAULT_N0 }
    }
}

/// Per bin: `k ~ Poisson(n0·e^−p)`, `p̂ = −ln(max(k, 1) / n0)`.
pub fn apply_dose(sino: &Sinogram, n0: f64, rng: &mut Rng) -> Result<Sinogram> {
    DoseModel::new(n0)?;
    let mut out = sino.clone();
    for v in &mut out.p {
        let k = rng.poisson(n0 * (-*v).exp()).max(1.0);
        *v = -(k / n0).ln();
    }
    Ok(out)
}

/// One simulated slice: full- and quarter-dose reconstructions of a shared
/// noiseless sinogram, plus the phantom itself as ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPair {
    pub full: ImageBuffer,
    pub quarter: ImageBuffer,
    pub truth: ImageBuffer,
}

fn to_image(size: usize, values: &[f64]) -> Result<ImageBuffer> {
    ImageBuffer::new(size, size, values.iter().map(|&v| v as f32).collect())
}

pub fn simulate_pair(
    phantom: &Phantom,
    dose: DoseModel,
    num_angles: usize,
    bins: usize,
    rng: &mut Rng,
) -> Result<SimulatedPair> {
    let clean = radon(phantom, num_angles, bins)?;
    let full = apply_dose(&clean, dose.n0_full, rng)?;
    let quarter = apply_dose(&clean, dose.n0_quarter(), rng)?;
    let s = phantom.size;
    Ok(SimulatedPair {
        full: to_image(s, &fbp(&full, s)?)?,
        quarter: to_image(s, &fbp(&quarter, s)?)?,
        truth: to_image(s, &phantom.mu)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub size: usize,
    pub num_angles: usize,
    pub pixel_spacing: f64,
    pub dose: DoseModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_SIZE,
            num_angles: DEFAULT_ANGLES,
            pixel_spacing: DEFAULT_PIXEL_SPACING,
            dose: DoseModel::default(),
        }
    }
}

/// Random phantom and pair for one dataset index; seeded with
/// `master_seed + index` so any subset can be regenerated independently.
pub fn simulate_indexed(cfg: &SimConfig, master_seed: u64, index: usize) -> Result<SimulatedPair> {
    let mut rng = Rng::new(master_seed.wrapping_add(index as u64));
    let spec = PhantomSpec::random(cfg.size, cfg.pixel_spacing, &mut rng);
    let phantom = make_phantom(&spec)?;
    simulate_pair(&phantom, cfg.dose, cfg.num_angles, cfg.size, &mut rng)
}

pub fn simulate_many(cfg: &SimConfig, master_seed: u64, count: usize) -> Result<Vec<SimulatedPair>> {
    (0..count)
        .into_par_iter()
        .map(|i| simulate_indexed(cfg, master_seed, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variance(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    }

    #[test]
    fn high_dose_limit() {
        let mut rng = Rng::new(1);
        let mut sino = Sinogram::zeros(100, 100, 0.25);
        for (k, v) in sino.p.iter_mut().enumerate() {
            *v = 5.0 * (k as f64 / 10_000.0);
        }
        let noisy = apply_dose(&sino, 1e12, &mut rng).unwrap();
        let err = noisy.p.iter().zip(&sino.p).map(|(a, b)| (a - b).abs()).sum::<f64>() / 1e4;
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn noise_variance_at_zero_attenuation() {
        let sino = Sinogram::zeros(100, 100, 0.25);
        let full = apply_dose(&sino, 1e5, &mut Rng::new(2)).unwrap();
        let quarter = apply_dose(&sino, 2.5e4, &mut Rng::new(3)).unwrap();
        let (vf, vq) = (variance(&full.p), variance(&quarter.p));
        assert!((vf - 1e-5).abs() < 0.1e-5, "{vf}");
        assert!((vq / vf - 4.0).abs() < 0.15 * 4.0, "{}", vq / vf);
    }

    #[test]
    fn photon_starvation_is_clamped() {
        let mut sino = Sinogram::zeros(1, 4, 0.25);
        sino.p.fill(60.0);
        let noisy = apply_dose(&sino, 100.0, &mut Rng::new(1)).unwrap();
        assert!(noisy.p.iter().all(|&v| (v - 100f64.ln()).abs() < 1e-12));
        assert!(apply_dose(&sino, 0.0, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn pairs_are_seeded() {
        let cfg = SimConfig {
            size: 32,
            num_angles: 60,
            ..SimConfig::default()
        };
        let a = simulate_indexed(&cfg, 5, 2).unwrap();
        let b = simulate_indexed(&cfg, 5, 2).unwrap();
        assert_eq!(a, b);
        let c = simulate_indexed(&cfg, 5, 3).unwrap();
        assert_ne!(a.full, c.full);
        assert_ne!(a.full, a.quarter);
        assert_eq!(simulate_many(&cfg, 5, 3).unwrap()[2], a);
    }
}
