//! Parallel-beam Radon transform and filtered back-projection.
//!
//! Angle `a` of `A` is `θ = a·π/A`. Detector bin `d` of `D` sits at signed
//! offset `s = (d − (D−1)/2)·sp` and integrates along the line
//! `{ s·(cos θ, sin θ) + t·(−sin θ, cos θ) }`.

use std::f64::consts::PI;

use rayon::prelude::*;

use super::fft::fft_in_place;
use super::phantom::{pixel_center, Phantom};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub angles: Vec<f64>,
    pub bins: usize,
    /// Detector spacing (cm); equals the phantom pixel spacing.
    pub bin_spacing: f64,
    /// Row-major `A × D` line integrals.
    pub p: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(num_angles: usize, bins: usize, bin_spacing: f64) -> Self {
        Self {
            angles: angles(num_angles),
            bins,
            bin_spacing,
            p: vec![0.0; num_angles * bins],
        }
    }

    pub fn num_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.p[a * self.bins..(a + 1) * self.bins]
    }

    pub fn bin_offset(&self, d: usize) -> f64 {
        (d as f64 - (self.bins as f64 - 1.0) / 2.0) * self.bin_spacing
    }
}

pub fn angles(count: usize) -> Vec<f64> {
    (0..count).map(|a| a as f64 * PI / count as f64).collect()
}

/// Bilinear sample of a row-major `size × size` grid at world point `(x, y)`;
/// zero outside the grid.
pub(crate) fn bilinear(grid: &[f64], size: usize, sp: f64, x: f64, y: f64) -> f64 {
    let c = (size as f64 - 1.0) / 2.0;
    let jf = x / sp + c;
    let i_f = c - y / sp;
    let (j0, i0) = (jf.floor(), i_f.floor());
    let (fx, fy) = (jf - j0, i_f - i0);
    let (j0, i0) = (j0 as isize, i0 as isize);
    let n = size as isize;
    let at = |i: isize, j: isize| {
        if i < 0 || j < 0 || i >= n || j >= n {
            0.0
        } else {
            grid[i as usize * size + j as usize]
        }
    };
    (1.0 - fy) * ((1.0 - fx) * at(i0, j0) + fx * at(i0, j0 + 1))
        + fy * ((1.0 - fx) * at(i0 + 1, j0) + fx * at(i0 + 1, j0 + 1))
}

/// Line integrals sampled every `pixel_spacing` along each ray.
pub fn radon(phantom: &Phantom, num_angles: usize, bins: usize) -> Result<Sinogram> {
    if num_angles == 0 || bins < phantom.size {
        return Err(Error::contract(format!(
            "radon needs ≥ 1 angle and ≥ {} bins, got {num_angles} angles and {bins} bins",
            phantom.size
        )));
    }
    let (s, sp) = (phantom.size, phantom.pixel_spacing);
    let mut sino = Sinogram::zeros(num_angles, bins, sp);
    let half = (s as f64 * sp / 2.0).hypot(s as f64 * sp / 2.0) + sp;
    let k_max = (half / sp).ceil() as isize;
    let offsets: Vec<f64> = (0..bins).map(|d| sino.bin_offset(d)).collect();
    let angles = sino.angles.clone();
    sino.p
        .par_chunks_mut(bins)
        .zip(angles.par_iter())
        .for_each(|(row, &theta)| {
            let (sn, cs) = theta.sin_cos();
            for (out, &off) in row.iter_mut().zip(&offsets) {
                let mut acc = 0.0;
                for k in -k_max..=k_max {
                    let t = k as f64 * sp;
                    acc += bilinear(&phantom.mu, s, sp, off * cs - t * sn, off * sn + t * cs);
                }
                *out = acc * sp;
            }
        });
    Ok(sino)
}

/// Ram-Lak filtered back-projection onto a `size × size` grid with the
/// sinogram's bin spacing as pixel spacing.
pub fn fbp(sino: &Sinogram, size: usize) -> Result<Vec<f64>> {
    let (na, nd) = (sino.num_angles(), sino.bins);
    if na == 0 || nd == 0 || sino.p.len() != na * nd || size == 0 {
        return Err(Error::contract(format!(
            "fbp: inconsistent sinogram {na}×{nd} with {} values for a {size}×{size} image",
            sino.p.len()
        )));
    }
    let tau = sino.bin_spacing;
    let n = (2 * nd).next_power_of_two();

    // Spatial Ram-Lak kernel laid out circularly, then transformed once.
    let mut hr = vec![0.0; n];
    let mut hi = vec![0.0; n];
    hr[0] = 1.0 / (4.0 * tau * tau);
    for k in 1..n / 2 {
        if k % 2 == 1 {
            let v = -1.0 / ((k * k) as f64 * PI * PI * tau * tau);
            hr[k] = v;
            hr[n - k] = v;
        }
    }
    fft_in_place(&mut hr, &mut hi, false);

    let filtered: Vec<Vec<f64>> = (0..na)
        .into_par_iter()
        .map(|a| {
            let mut re = vec![0.0; n];
            let mut im = vec![0.0; n];
            re[..nd].copy_from_slice(sino.row(a));
            fft_in_place(&mut re, &mut im, false);
            for k in 0..n {
                let (r, i) = (re[k] * hr[k] - im[k] * hi[k], re[k] * hi[k] + im[k] * hr[k]);
                re[k] = r;
                im[k] = i;
            }
            fft_in_place(&mut re, &mut im, true);
            let scale = tau / n as f64;
            re[..nd].iter().map(|v| v * scale).collect()
        })
        .collect();

    let trig: Vec<(f64, f64)> = sino.angles.iter().map(|t| t.sin_cos()).collect();
    let centre = (nd as f64 - 1.0) / 2.0;
    let mut img = vec![0.0; size * size];
    img.par_chunks_mut(size).enumerate().for_each(|(i, row)| {
        for (j, out) in row.iter_mut().enumerate() {
            let (x, y) = pixel_center(size, tau, i, j);
            let mut acc = 0.0;
            for (q, &(sn, cs)) in filtered.iter().zip(&trig) {
                let d = (x * cs + y * sn) / tau + centre;
                let d0 = d.floor();
                let f = d - d0;
                let d0 = d0 as isize;
                let at = |k: isize| {
                    if k < 0 || k >= nd as isize {
                        0.0
                    } else {
                        q[k as usize]
                    }
                };
                acc += (1.0 - f) * at(d0) + f * at(d0 + 1);
            }
            *out = acc * PI / na as f64;
        }
    });
    Ok(img)
}
