use super::{LayerCache, LayerGrads};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct ReluCache {
    pub(crate) active: Vec<bool>,
    pub(crate) shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ConcatCache {
    pub(crate) a_shape: Vec<usize>,
    pub(crate) b_shape: Vec<usize>,
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, LayerCache<T>) {
    let active: Vec<bool> = input.data().iter().map(|&v| v > T::ZERO).collect();
    let output = input.map(|v| if v > T::ZERO { v } else { T::ZERO });
    (
        output,
        LayerCache::Relu(ReluCache {
            active,
            shape: input.shape().to_vec(),
        }),
    )
}

pub fn relu_backward<T: Scalar>(cache: ReluCache, grad_output: &Tensor<T>) -> Result<LayerGrads<T>> {
    if grad_output.shape() != cache.shape.as_slice() {
        return Err(Error::contract(format!(
            "relu backward: grad_output shape {:?} != forward shape {:?}",
            grad_output.shape(),
            cache.shape
        )));
    }
    let data = grad_output
        .data()
        .iter()
        .zip(&cache.active)
        .map(|(&g, &on)| if on { g } else { T::ZERO })
        .collect();
    Ok(LayerGrads::input_only(vec![Tensor::from_vec(&cache.shape, data)?]))
}

/// Channels of `a` followed by channels of `b`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, LayerCache<T>)> {
    let (na, ca, ha, wa) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::contract(format!(
            "concat: batch/spatial mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let plane = ha * wa;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for s in 0..na {
        data.extend_from_slice(&a.data()[s * ca * plane..(s + 1) * ca * plane]);
        data.extend_from_slice(&b.data()[s * cb * plane..(s + 1) * cb * plane]);
    }
    let output = Tensor::from_vec(&[na, ca + cb, ha, wa], data)?;
    Ok((
        output,
        LayerCache::Concat(ConcatCache {
            a_shape: a.shape().to_vec(),
            b_shape: b.shape().to_vec(),
        }),
    ))
}

pub fn concat_backward<T: Scalar>(cache: ConcatCache, grad_output: &Tensor<T>) -> Result<LayerGrads<T>> {
    let (n, ca, h, w) = (cache.a_shape[0], cache.a_shape[1], cache.a_shape[2], cache.a_shape[3]);
    let cb = cache.b_shape[1];
    if grad_output.shape() != [n, ca + cb, h, w] {
        return Err(Error::contract(format!(
            "concat backward: grad_output shape {:?} != {:?}",
            grad_output.shape(),
            [n, ca + cb, h, w]
        )));
    }
    let plane = h * w;
    let mut ga = Vec::with_capacity(n * ca * plane);
    let mut gb = Vec::with_capacity(n * cb * plane);
    let g = grad_output.data();
    for s in 0..n {
        let base = s * (ca + cb) * plane;
        ga.extend_from_slice(&g[base..base + ca * plane]);
        gb.extend_from_slice(&g[base + ca * plane..base + (ca + cb) * plane]);
    }
    Ok(LayerGrads::input_only(vec![
        Tensor::from_vec(&cache.a_shape, ga)?,
        Tensor::from_vec(&cache.b_shape, gb)?,
    ]))
}

/// Mean squared error and its gradient `(2/M)(pred - target)`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    pred.check_same_shape(target, "mse_loss")?;
    let m = pred.len() as f64;
    let mut sum = 0.0;
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p.to_f64() - t.to_f64();
            sum += d * d;
            T::from_f64(2.0 * d / m)
        })
        .collect();
    Ok((sum / m, Tensor::from_vec(pred.shape(), grad)?))
}
