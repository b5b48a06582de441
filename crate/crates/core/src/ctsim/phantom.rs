//! Ellipse phantoms on a square pixel grid.
//!
//! World coordinates are in cm with the origin at the grid centre, `x` to the
//! right and `y` up. Pixel `(i, j)` (row, column) has its centre at
//! `x = (j − (S−1)/2)·sp`, `y = ((S−1)/2 − i)·sp`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Sub-pixel samples per axis when rasterizing an ellipse.
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axis along the rotated x direction (cm).
    pub a: f64,
    /// Semi-axis along the rotated y direction (cm).
    pub b: f64,
    /// Counter-clockwise rotation in radians.
    pub angle: f64,
    /// Attenuation added inside the ellipse (1/cm).
    pub mu: f64,
}

impl Ellipse {
    pub fn disk(cx: f64, cy: f64, r: f64, mu: f64) -> Self {
        Self {
            cx,
            cy,
            a: r,
            b: r,
            angle: 0.0,
            mu,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    /// Unit vector along the longer semi-axis.
    pub fn major_axis(&self) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        if self.a >= self.b {
            (c, s)
        } else {
            (-s, c)
        }
    }

    fn max_radius(&self) -> f64 {
        let (s, c) = self.angle.sin_cos();
        (0..720)
            .map(|k| {
                let t = k as f64 * PI / 360.0;
                let (u, v) = (self.a * t.cos(), self.b * t.sin());
                let x = self.cx + u * c - v * s;
                let y = self.cy + u * s + v * c;
                x.hypot(y)
            })
            .fold(0.0, f64::max)
    }
}

/// Serializable description of a phantom; the textual form is JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub size: usize,
    pub pixel_spacing: f64,
    pub ellipses: Vec<Ellipse>,
}

impl PhantomSpec {
    pub fn empty(size: usize, pixel_spacing: f64) -> Self {
        Self {
            size,
            pixel_spacing,
            ellipses: Vec::new(),
        }
    }

    /// Radius of the circle inscribed in the grid (cm).
    pub fn inscribed_radius(&self) -> f64 {
        self.size as f64 * self.pixel_spacing / 2.0
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("phantom spec serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::contract(format!("phantom spec: {e}")))
    }

    /// Random thoracic-like slice: a body ellipse with 3–9 internal
    /// soft-tissue ellipses and, half the time, 1–2 bone-like inserts in the
    /// upper part of the body.
    pub fn random(size: usize, pixel_spacing: f64, rng: &mut Rng) -> Self {
        let mut spec = Self::empty(size, pixel_spacing);
        let r = spec.inscribed_radius();
        let body = Ellipse {
            cx: rng.uniform_in(-0.03, 0.03) * r,
            cy: rng.uniform_in(-0.03, 0.03) * r,
            a: rng.uniform_in(0.78, 0.9) * r,
            b: rng.uniform_in(0.62, 0.8) * r,
            angle: rng.uniform_in(-0.15, 0.15),
            mu: rng.uniform_in(0.17, 0.21),
        };
        spec.ellipses.push(body);

        let inner = rng.int_in(3, 9);
        for _ in 0..inner {
            let e = loop {
                let rho = 0.55 * r * rng.uniform().sqrt();
                let phi = rng.uniform_in(0.0, 2.0 * PI);
                let e = Ellipse {
                    cx: body.cx + rho * phi.cos(),
                    cy: body.cy + 0.8 * rho * phi.sin(),
                    a: rng.uniform_in(0.06, 0.28) * r,
                    b: rng.uniform_in(0.06, 0.28) * r,
                    angle: rng.uniform_in(0.0, PI),
                    mu: rng.uniform_in(0.01, 0.08),
                };
                if e.max_radius() < 0.95 * r {
                    break e;
                }
            };
            spec.ellipses.push(e);
        }

        if rng.bernoulli(0.5) {
            for _ in 0..rng.int_in(1, 2) {
                let a = rng.uniform_in(0.08, 0.16) * r;
                spec.ellipses.push(Ellipse {
                    cx: rng.uniform_in(-0.35, 0.35) * r,
                    cy: rng.uniform_in(0.3, 0.45) * r,
                    a,
                    b: a * rng.uniform_in(0.25, 0.45),
                    angle: rng.uniform_in(-0.6, 0.6),
                    mu: rng.uniform_in(0.4, 0.5),
                });
            }
        }
        spec
    }
}

/// Rasterized attenuation map plus the spec it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub size: usize,
    pub pixel_spacing: f64,
    /// Row-major `size × size` attenuation (1/cm).
    pub mu: Vec<f64>,
    pub spec: PhantomSpec,
}

impl Phantom {
    pub fn pixel_center(&self, i: usize, j: usize) -> (f64, f64) {
        pixel_center(self.size, self.pixel_spacing, i, j)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mu[i * self.size + j]
    }
}

pub(crate) fn pixel_center(size: usize, sp: f64, i: usize, j: usize) -> (f64, f64) {
    let c = (size as f64 - 1.0) / 2.0;
    ((j as f64 - c) * sp, (c - i as f64) * sp)
}

/// Rasterizes a spec. Each ellipse contributes its `mu` times the fraction of
/// a pixel's 4×4 sub-samples that fall inside it.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let (s, sp) = (spec.size, spec.pixel_spacing);
    if s == 0 || !(sp > 0.0 && sp.is_finite()) {
        return Err(Error::contract(format!(
            "phantom needs size ≥ 1 and positive spacing, got {s} and {sp}"
        )));
    }
    let limit = spec.inscribed_radius();
    for (k, e) in spec.ellipses.iter().enumerate() {
        if !(e.a > 0.0 && e.b > 0.0) {
            return Err(Error::contract(format!("ellipse {k} has non-positive axes")));
        }
        if e.max_radius() > limit * (1.0 + 1e-9) {
            return Err(Error::contract(format!(
                "ellipse {k} extends outside the inscribed circle of radius {limit} cm"
            )));
        }
    }

    let mut mu = vec![0.0; s * s];
    let sub = SUPERSAMPLE as f64;
    let weight = 1.0 / (sub * sub);
    for e in &spec.ellipses {
        let reach = e.a.max(e.b) + sp;
        for i in 0..s {
            for j in 0..s {
                let (x, y) = pixel_center(s, sp, i, j);
                if (x - e.cx).abs() > reach || (y - e.cy).abs() > reach {
                    continue;
                }
                let mut hits = 0usize;
                for u in 0..SUPERSAMPLE {
                    for v in 0..SUPERSAMPLE {
                        let dx = ((v as f64 + 0.5) / sub - 0.5) * sp;
                        let dy = (0.5 - (u as f64 + 0.5) / sub) * sp;
                        hits += e.contains(x + dx, y + dy) as usize;
                    }
                }
                mu[i * s + j] += e.mu * hits as f64 * weight;
            }
        }
    }
    if let Some(v) = mu.iter().find(|v| **v < 0.0) {
        return Err(Error::contract(format!(
            "phantom has negative attenuation {v}; ellipse contributions must sum to ≥ 0"
        )));
    }
    Ok(Phantom {
        size: s,
        pixel_spacing: sp,
        mu,
        spec: spec.clone(),
    })
}
