use super::{LayerCache, LayerGrads};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    pub(crate) input_shape: Vec<usize>,
    /// Flat input index of the winning element of each output cell.
    pub(crate) argmax: Vec<usize>,
}

/// 2x2 max pooling with stride 2. Ties resolve to the first element in
/// row-major order within the window.
pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, LayerCache<T>)> {
    let (n, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::contract(format!(
            "maxpool2: spatial size {h}x{w} must be even"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let top = base + 2 * y * w + 2 * x;
                let candidates = [top, top + 1, top + w, top + w + 1];
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    let output = Tensor::from_vec(&[n, c, oh, ow], out)?;
    Ok((
        output,
        LayerCache::MaxPool2(MaxPoolCache {
            input_shape: input.shape().to_vec(),
            argmax,
        }),
    ))
}

pub fn maxpool2_backward<T: Scalar>(cache: MaxPoolCache, grad_output: &Tensor<T>) -> Result<LayerGrads<T>> {
    if grad_output.len() != cache.argmax.len() {
        return Err(Error::contract(format!(
            "maxpool2 backward: grad_output shape {:?} does not match the cached forward",
            grad_output.shape()
        )));
    }
    let mut grad = Tensor::zeros(&cache.input_shape);
    let dst = grad.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_output.data()) {
        dst[idx] = g;
    }
    Ok(LayerGrads::input_only(vec![grad]))
}
