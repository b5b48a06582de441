//! 2x2 stride-2 transposed convolution (learned upsampling).

use super::conv::to_tensor;
use super::gemm::{matmul, MatRef};
use super::{LayerCache, LayerGrads};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct UpConvCache<T: Scalar> {
    pub(crate) input: Tensor<T>,
    pub(crate) weights: Tensor<T>,
}

fn check<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    let (in_c, out_c, kh, kw) = weights.dims4()?;
    if (kh, kw) != (2, 2) {
        return Err(Error::contract(format!(
            "upconv2: kernel must be 2x2, got {kh}x{kw}"
        )));
    }
    if in_c != c {
        return Err(Error::contract(format!(
            "upconv2: input channels {c} != weight InC {in_c}"
        )));
    }
    Ok((n, c, h, w, out_c))
}

/// Every input pixel scatters `weights[c, o, :, :]` into its own 2x2 output block.
pub fn upconv2_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, LayerCache<T>)> {
    let (n, c, h, w, out_c) = check(input, weights)?;
    if bias.shape() != [out_c] {
        return Err(Error::contract(format!(
            "upconv2: bias shape {:?} != [{out_c}]",
            bias.shape()
        )));
    }
    let p = h * w;
    let q = out_c * 4;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::ZERO; n * out_c * oh * ow];
    let w_t = MatRef::transposed(weights.data(), c, q);
    for s in 0..n {
        let src = &input.data()[s * c * p..(s + 1) * c * p];
        let z = matmul(w_t, MatRef::row_major(src, c, p));
        let dst = &mut out[s * out_c * oh * ow..(s + 1) * out_c * oh * ow];
        for o in 0..out_c {
            let b = bias.data()[o].to_f64();
            for i in 0..2 {
                for j in 0..2 {
                    let zrow = &z[(o * 4 + i * 2 + j) * p..(o * 4 + i * 2 + j + 1) * p];
                    for y in 0..h {
                        for x in 0..w {
                            dst[(o * oh + 2 * y + i) * ow + 2 * x + j] =
                                T::from_f64(zrow[y * w + x] + b);
                        }
                    }
                }
            }
        }
    }
    let output = Tensor::from_vec(&[n, out_c, oh, ow], out)?;
    Ok((
        output,
        LayerCache::UpConv2(UpConvCache {
            input: input.clone(),
            weights: weights.clone(),
        }),
    ))
}

pub fn upconv2_backward<T: Scalar>(
    cache: UpConvCache<T>,
    grad_output: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    let UpConvCache { input, weights } = cache;
    let (n, c, h, w, out_c) = check(&input, &weights)?;
    let (oh, ow) = (2 * h, 2 * w);
    if grad_output.shape() != [n, out_c, oh, ow] {
        return Err(Error::contract(format!(
            "upconv2 backward: grad_output shape {:?} != forward output {:?}",
            grad_output.shape(),
            [n, out_c, oh, ow]
        )));
    }
    let p = h * w;
    let q = out_c * 4;
    let mut grad_input = vec![0.0f64; n * c * p];
    let mut grad_w = vec![0.0f64; c * q];
    let mut grad_b = vec![0.0f64; out_c];
    let mut gathered = vec![0.0f64; q * p];
    let w_mat = MatRef::row_major(weights.data(), c, q);

    for s in 0..n {
        let gout = &grad_output.data()[s * out_c * oh * ow..(s + 1) * out_c * oh * ow];
        for o in 0..out_c {
            grad_b[o] += gout[o * oh * ow..(o + 1) * oh * ow]
                .iter()
                .map(|v| v.to_f64())
                .sum::<f64>();
            for i in 0..2 {
                for j in 0..2 {
                    let row = &mut gathered[(o * 4 + i * 2 + j) * p..(o * 4 + i * 2 + j + 1) * p];
                    for y in 0..h {
                        for x in 0..w {
                            row[y * w + x] = gout[(o * oh + 2 * y + i) * ow + 2 * x + j].to_f64();
                        }
                    }
                }
            }
        }
        let gmat = MatRef::row_major(&gathered[..], q, p);
        let gin = matmul(w_mat, gmat);
        for (d, v) in grad_input[s * c * p..(s + 1) * c * p].iter_mut().zip(gin) {
            *d += v;
        }
        let src = &input.data()[s * c * p..(s + 1) * c * p];
        let dw = matmul(
            MatRef::row_major(src, c, p),
            MatRef::transposed(&gathered[..], q, p),
        );
        for (acc, v) in grad_w.iter_mut().zip(dw) {
            *acc += v;
        }
    }

    Ok(LayerGrads {
        inputs: vec![to_tensor(input.shape(), grad_input)?],
        weight: Some(to_tensor(weights.shape(), grad_w)?),
        bias: Some(to_tensor(&[out_c], grad_b)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_scatters_kernel() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let k = Tensor::from_vec(&[1, 1, 2, 2], vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let (y, _) = upconv2_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), k.data());
    }

    #[test]
    fn zero_input_broadcasts_bias() {
        let x = Tensor::<f64>::zeros(&[2, 3, 2, 2]);
        let k = Tensor::<f64>::full(&[3, 2, 2, 2], 0.7);
        let b = Tensor::from_vec(&[2], vec![1.5, -2.0]).unwrap();
        let (y, _) = upconv2_forward(&x, &k, &b).unwrap();
        assert_eq!(y.shape(), &[2, 2, 4, 4]);
        for (i, v) in y.data().iter().enumerate() {
            let o = (i / 16) % 2;
            assert_eq!(*v, b.data()[o]);
        }
    }

    #[test]
    fn disjoint_block_scatter() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = upconv2_forward(&x, &Tensor::full(&[1, 1, 2, 2], 1.0), &Tensor::zeros(&[1])).unwrap();
        #[rustfmt::skip]
        let want = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), &want);
    }

    #[test]
    fn channel_mismatch() {
        let err = upconv2_forward(
            &Tensor::<f64>::zeros(&[1, 2, 2, 2]),
            &Tensor::zeros(&[3, 1, 2, 2]),
            &Tensor::zeros(&[1]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("input channels"));
    }
}
