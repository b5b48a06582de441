//! Packed matrix product used by every convolution kernel.
//!
//! Operands are strided views, so transposed operands never need to be
//! materialized. Products accumulate in `f64`. Each output element is
//! reduced over `r` in the same order regardless of how many rayon workers
//! run, so results are bit-identical for any worker count.

use rayon::prelude::*;

use crate::tensor::Scalar;

const MR: usize = 4;
const NR: usize = 8;
const KC: usize = 256;
const MC: usize = 64;

/// Read-only strided view of a logical `rows x cols` matrix.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T: Scalar> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// View of the transpose of a row-major `rows x cols` buffer.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self {
            data,
            rows: cols,
            cols: rows,
            row_stride: 1,
            col_stride: cols,
        }
    }

    #[inline(always)]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.row_stride + c * self.col_stride].to_f64()
    }
}

/// `a (M x R) * b (R x P)`, returned row-major as `M x P` doubles.
pub(crate) fn matmul<A: Scalar, B: Scalar>(a: MatRef<'_, A>, b: MatRef<'_, B>) -> Vec<f64> {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, r, p) = (a.rows, a.cols, b.cols);
    let mut c = vec![0.0f64; m * p];
    if m == 0 || p == 0 || r == 0 {
        return c;
    }
    let m_panels = m.div_ceil(MR);
    let p_panels = p.div_ceil(NR);
    let mut apack = vec![0.0f64; m_panels * MR * KC.min(r)];
    let mut bpack = vec![0.0f64; p_panels * NR * KC.min(r)];

    let mut r0 = 0;
    while r0 < r {
        let kc = KC.min(r - r0);
        pack_a(&a, r0, kc, &mut apack);
        pack_b(&b, r0, kc, &mut bpack);
        let apack = &apack[..];
        let bpack = &bpack[..];
        c.par_chunks_mut(MC * p)
            .enumerate()
            .for_each(|(block, cblock)| {
                let row0 = block * MC;
                let rows = cblock.len() / p;
                let first_panel = row0 / MR;
                let panels = rows.div_ceil(MR);
                for pj in 0..p_panels {
                    let bp = &bpack[pj * kc * NR..(pj + 1) * kc * NR];
                    for pi in first_panel..first_panel + panels {
                        let ap = &apack[pi * kc * MR..(pi + 1) * kc * MR];
                        let tile = micro_kernel(ap, bp, kc);
                        let mi0 = pi * MR - row0;
                        for (i, row) in tile.iter().enumerate() {
                            let mi = mi0 + i;
                            if mi >= rows {
                                break;
                            }
                            let base = mi * p + pj * NR;
                            let width = NR.min(p - pj * NR);
                            for (dst, v) in cblock[base..base + width].iter_mut().zip(row) {
                                *dst += v;
                            }
                        }
                    }
                }
            });
        r0 += kc;
    }
    c
}

fn pack_a<T: Scalar>(a: &MatRef<'_, T>, r0: usize, kc: usize, out: &mut [f64]) {
    let panels = a.rows.div_ceil(MR);
    for pi in 0..panels {
        let panel = &mut out[pi * kc * MR..(pi + 1) * kc * MR];
        for i in 0..MR {
            let m = pi * MR + i;
            if m < a.rows {
                for k in 0..kc {
                    panel[k * MR + i] = a.at(m, r0 + k);
                }
            } else {
                for k in 0..kc {
                    panel[k * MR + i] = 0.0;
                }
            }
        }
    }
}

fn pack_b<T: Scalar>(b: &MatRef<'_, T>, r0: usize, kc: usize, out: &mut [f64]) {
    let panels = b.cols.div_ceil(NR);
    for pj in 0..panels {
        let panel = &mut out[pj * kc * NR..(pj + 1) * kc * NR];
        for k in 0..kc {
            let dst = &mut panel[k * NR..(k + 1) * NR];
            for (j, d) in dst.iter_mut().enumerate() {
                let col = pj * NR + j;
                *d = if col < b.cols { b.at(r0 + k, col) } else { 0.0 };
            }
        }
    }
}

#[inline(always)]
fn micro_kernel(ap: &[f64], bp: &[f64], kc: usize) -> [[f64; NR]; MR] {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
        {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { micro_kernel_fma(ap, bp, kc) };
        }
    }
    micro_kernel_generic(ap, bp, kc)
}

#[inline(always)]
fn micro_kernel_generic(ap: &[f64], bp: &[f64], kc: usize) -> [[f64; NR]; MR] {
    let mut acc = [[0.0f64; NR]; MR];
    for (a, b) in ap.chunks_exact(MR).zip(bp.chunks_exact(NR)).take(kc) {
        let a: &[f64; MR] = a.try_into().unwrap();
        let b: &[f64; NR] = b.try_into().unwrap();
        for i in 0..MR {
            for j in 0..NR {
                acc[i][j] += a[i] * b[j];
            }
        }
    }
    acc
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn micro_kernel_fma(ap: &[f64], bp: &[f64], kc: usize) -> [[f64; NR]; MR] {
    let mut acc = [[0.0f64; NR]; MR];
    for (a, b) in ap.chunks_exact(MR).zip(bp.chunks_exact(NR)).take(kc) {
        let a: &[f64; MR] = a.try_into().unwrap();
        let b: &[f64; NR] = b.try_into().unwrap();
        for i in 0..MR {
            for j in 0..NR {
                acc[i][j] = a[i].mul_add(b[j], acc[i][j]);
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive(a: &[f64], b: &[f64], m: usize, r: usize, p: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * p];
        for i in 0..m {
            for j in 0..p {
                c[i * p + j] = (0..r).map(|k| a[i * r + k] * b[k * p + j]).sum();
            }
        }
        c
    }

    #[test]
    fn matches_naive_product_on_ragged_shapes() {
        let mut rng = Rng::new(11);
        for &(m, r, p) in &[(1, 1, 1), (5, 3, 7), (9, 300, 13), (70, 17, 33), (4, 513, 8)] {
            let a: Vec<f64> = (0..m * r).map(|_| rng.normal(0.0, 1.0)).collect();
            let b: Vec<f64> = (0..r * p).map(|_| rng.normal(0.0, 1.0)).collect();
            let want = naive(&a, &b, m, r, p);
            let got = matmul(MatRef::row_major(&a, m, r), MatRef::row_major(&b, r, p));
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn transposed_views() {
        let mut rng = Rng::new(5);
        let (m, r, p) = (6, 11, 10);
        let a: Vec<f64> = (0..m * r).map(|_| rng.normal(0.0, 1.0)).collect();
        let b: Vec<f64> = (0..r * p).map(|_| rng.normal(0.0, 1.0)).collect();
        // Store a^T and b^T explicitly, then read them back through transposed views.
        let mut at = vec![0.0; m * r];
        let mut bt = vec![0.0; r * p];
        for i in 0..m {
            for k in 0..r {
                at[k * m + i] = a[i * r + k];
            }
        }
        for k in 0..r {
            for j in 0..p {
                bt[j * r + k] = b[k * p + j];
            }
        }
        let want = naive(&a, &b, m, r, p);
        let got = matmul(MatRef::transposed(&at, r, m), MatRef::transposed(&bt, p, r));
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()));
        }
    }
}
