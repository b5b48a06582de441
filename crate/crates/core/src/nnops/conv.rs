//! Stride-1 2-D convolution (cross-correlation convention).

use super::gemm::{matmul, MatRef};
use super::{LayerCache, LayerGrads};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that keeps `H x W` unchanged.
    Same,
    /// No padding; a 3x3 kernel trims one pixel from each side.
    Valid,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T: Scalar> {
    pub(crate) input: Tensor<T>,
    pub(crate) weights: Tensor<T>,
    pub(crate) padding: Padding,
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, padding: Padding) -> Result<Self> {
        let (_, c, h, w) = input.dims4()?;
        let (out_c, in_c, kh, kw) = weights.dims4().map_err(|_| {
            Error::contract(format!(
                "conv2d: weights must be OutC x InC x k x k, got {:?}",
                weights.shape()
            ))
        })?;
        if kh != kw || !(kh == 3 || kh == 1) {
            return Err(Error::contract(format!(
                "conv2d: kernel must be 3x3 or 1x1, got {kh}x{kw}"
            )));
        }
        if in_c != c {
            return Err(Error::contract(format!(
                "conv2d: input channels {c} != weight InC {in_c}"
            )));
        }
        let pad = match padding {
            Padding::Same => kh / 2,
            Padding::Valid => 0,
        };
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::contract(format!(
                "conv2d: spatial size {h}x{w} smaller than the kernel"
            )));
        }
        Ok(Self {
            c,
            h,
            w,
            out_c,
            k: kh,
            pad,
            oh: h + 2 * pad + 1 - kh,
            ow: w + 2 * pad + 1 - kw,
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1 kernels read the input directly.
    fn is_pointwise(&self) -> bool {
        self.k == 1
    }
}

/// Unfolds one `C x H x W` sample into a `(C*k*k) x (OH*OW)` patch matrix.
fn im2col<T: Scalar>(src: &[T], g: &Geometry) -> Vec<T> {
    let p = g.out_pixels();
    let mut col = vec![T::ZERO; g.patch_len() * p];
    for c in 0..g.c {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for dy in 0..g.k {
            for dx in 0..g.k {
                let row = (c * g.k + dy) * g.k + dx;
                let dst = &mut col[row * p..(row + 1) * p];
                for y in 0..g.oh {
                    let sy = y + dy;
                    if sy < g.pad || sy - g.pad >= g.h {
                        continue;
                    }
                    let sy = sy - g.pad;
                    for x in 0..g.ow {
                        let sx = x + dx;
                        if sx < g.pad || sx - g.pad >= g.w {
                            continue;
                        }
                        dst[y * g.ow + x] = plane[sy * g.w + sx - g.pad];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im(col: &[f64], g: &Geometry, dst: &mut [f64]) {
    let p = g.out_pixels();
    for c in 0..g.c {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for dy in 0..g.k {
            for dx in 0..g.k {
                let row = (c * g.k + dy) * g.k + dx;
                let src = &col[row * p..(row + 1) * p];
                for y in 0..g.oh {
                    let sy = y + dy;
                    if sy < g.pad || sy - g.pad >= g.h {
                        continue;
                    }
                    let sy = sy - g.pad;
                    for x in 0..g.ow {
                        let sx = x + dx;
                        if sx < g.pad || sx - g.pad >= g.w {
                            continue;
                        }
                        plane[sy * g.w + sx - g.pad] += src[y * g.ow + x];
                    }
                }
            }
        }
    }
}

/// `output[n,o,y,x] = bias[o] + sum_{c,dy,dx} weights[o,c,dy,dx] * input[n,c,y+dy-p,x+dx-p]`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
) -> Result<(Tensor<T>, LayerCache<T>)> {
    let g = Geometry::new(input, weights, padding)?;
    if bias.shape() != [g.out_c] {
        return Err(Error::contract(format!(
            "conv2d: bias shape {:?} != [{}]",
            bias.shape(),
            g.out_c
        )));
    }
    let n = input.shape()[0];
    let p = g.out_pixels();
    let kk = g.patch_len();
    let in_len = g.c * g.h * g.w;
    let mut out = Vec::with_capacity(n * g.out_c * p);
    let wmat = MatRef::row_major(weights.data(), g.out_c, kk);
    for s in 0..n {
        let src = &input.data()[s * in_len..(s + 1) * in_len];
        let prod = if g.is_pointwise() {
            matmul(wmat, MatRef::row_major(src, kk, p))
        } else {
            let col = im2col(src, &g);
            matmul(wmat, MatRef::row_major(&col, kk, p))
        };
        for (o, row) in prod.chunks_exact(p).enumerate() {
            let b = bias.data()[o].to_f64();
            out.extend(row.iter().map(|&v| T::from_f64(v + b)));
        }
    }
    let output = Tensor::from_vec(&[n, g.out_c, g.oh, g.ow], out)?;
    let cache = LayerCache::Conv2d(ConvCache {
        input: input.clone(),
        weights: weights.clone(),
        padding,
    });
    Ok((output, cache))
}

pub fn conv2d_backward<T: Scalar>(cache: ConvCache<T>, grad_output: &Tensor<T>) -> Result<LayerGrads<T>> {
    let ConvCache {
        input,
        weights,
        padding,
    } = cache;
    let g = Geometry::new(&input, &weights, padding)?;
    let n = input.shape()[0];
    let expected = [n, g.out_c, g.oh, g.ow];
    if grad_output.shape() != expected {
        return Err(Error::contract(format!(
            "conv2d backward: grad_output shape {:?} != forward output {expected:?}",
            grad_output.shape()
        )));
    }
    let p = g.out_pixels();
    let kk = g.patch_len();
    let in_len = g.c * g.h * g.w;
    let out_len = g.out_c * p;

    let mut grad_input = vec![0.0f64; n * in_len];
    let mut grad_w = vec![0.0f64; g.out_c * kk];
    let mut grad_b = vec![0.0f64; g.out_c];
    let w_t = MatRef::transposed(weights.data(), g.out_c, kk);

    for s in 0..n {
        let src = &input.data()[s * in_len..(s + 1) * in_len];
        let gout = &grad_output.data()[s * out_len..(s + 1) * out_len];
        let gout_mat = MatRef::row_major(gout, g.out_c, p);

        for (o, row) in gout.chunks_exact(p).enumerate() {
            grad_b[o] += row.iter().map(|v| v.to_f64()).sum::<f64>();
        }

        let dcol = matmul(w_t, gout_mat);
        let gin = &mut grad_input[s * in_len..(s + 1) * in_len];
        let dw = if g.is_pointwise() {
            for (d, v) in gin.iter_mut().zip(&dcol) {
                *d += v;
            }
            matmul(gout_mat, MatRef::transposed(src, kk, p))
        } else {
            col2im(&dcol, &g, gin);
            let col = im2col(src, &g);
            matmul(gout_mat, MatRef::transposed(&col, kk, p))
        };
        for (acc, v) in grad_w.iter_mut().zip(dw) {
            *acc += v;
        }
    }

    Ok(LayerGrads {
        inputs: vec![to_tensor(input.shape(), grad_input)?],
        weight: Some(to_tensor(weights.shape(), grad_w)?),
        bias: Some(to_tensor(&[g.out_c], grad_b)?),
    })
}

pub(crate) fn to_tensor<T: Scalar>(shape: &[usize], data: Vec<f64>) -> Result<Tensor<T>> {
    Tensor::from_vec(shape, data.into_iter().map(T::from_f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn pointwise_scalar() {
        let (y, _) = conv2d_forward(
            &t(&[1, 1, 1, 1], &[2.0]),
            &t(&[1, 1, 1, 1], &[3.0]),
            &t(&[1], &[1.0]),
            Padding::Same,
        )
        .unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 1, 5, 4], |i| (i as f64 * 0.37).sin());
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let (y, _) =
            conv2d_forward(&x, &t(&[1, 1, 3, 3], &k), &t(&[1], &[0.0]), Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_kernel_on_two_by_two() {
        let (y, _) = conv2d_forward(
            &t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]),
            &t(&[1, 1, 3, 3], &[1.0; 9]),
            &t(&[1], &[0.0]),
            Padding::Same,
        )
        .unwrap();
        assert_eq!(y.data(), &[10.0, 10.0, 10.0, 10.0]);
    }

    #[test]
    fn valid_padding_trims_border() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 4, 5], |i| i as f64);
        let (y, _) = conv2d_forward(
            &x,
            &t(&[1, 1, 3, 3], &[1.0; 9]),
            &t(&[1], &[0.0]),
            Padding::Valid,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 3]);
        // window rows 0..3, cols 0..3 of the 4x5 ramp
        let want: f64 = [0, 1, 2, 5, 6, 7, 10, 11, 12].iter().map(|&v| v as f64).sum();
        assert_eq!(y.data()[0], want);
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let err = conv2d_forward(
            &Tensor::<f64>::zeros(&[1, 2, 4, 4]),
            &Tensor::<f64>::zeros(&[3, 1, 3, 3]),
            &Tensor::<f64>::zeros(&[3]),
            Padding::Same,
        )
        .unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let err = conv2d_forward(
            &Tensor::<f64>::zeros(&[1, 1, 4, 4]),
            &Tensor::<f64>::zeros(&[3, 1, 5, 5]),
            &Tensor::<f64>::zeros(&[3]),
            Padding::Same,
        )
        .unwrap_err();
        assert!(err.to_string().contains("kernel"), "{err}");
    }

    #[test]
    fn zero_parameters_zero_gradients() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let (y, cache) = conv2d_forward(
            &x,
            &Tensor::zeros(&[3, 2, 3, 3]),
            &Tensor::zeros(&[3]),
            Padding::Same,
        )
        .unwrap();
        let LayerCache::Conv2d(cache) = cache else {
            unreachable!()
        };
        let grads = conv2d_backward(cache, &Tensor::zeros(y.shape())).unwrap();
        assert_eq!(grads.inputs[0].max_abs(), 0.0);
        assert_eq!(grads.weight.unwrap().max_abs(), 0.0);
        assert_eq!(grads.bias.unwrap().max_abs(), 0.0);
    }
}
