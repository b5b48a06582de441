//! Forward and backward kernels for the fixed layer set of the U-Net.
//!
//! Each forward returns its output plus a [`LayerCache`]; the cache is
//! consumed by exactly one call to [`layer_backward`].

mod conv;
mod elementwise;
pub(crate) mod gemm;
mod pool;
mod upconv;

pub use conv::{conv2d_backward, conv2d_forward, ConvCache, Padding};
pub use elementwise::{
    concat_backward, concat_channels, mse_loss, relu_backward, relu_forward, ConcatCache,
    ReluCache,
};
pub use pool::{maxpool2_backward, maxpool2_forward, MaxPoolCache};
pub use upconv::{upconv2_backward, upconv2_forward, UpConvCache};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv2d,
    Relu,
    MaxPool2,
    UpConv2,
    Concat,
}

/// Activations saved by a forward call for its backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<T: Scalar> {
    Conv2d(ConvCache<T>),
    Relu(ReluCache),
    MaxPool2(MaxPoolCache),
    UpConv2(UpConvCache<T>),
    Concat(ConcatCache),
}

impl<T: Scalar> LayerCache<T> {
    pub fn layer(&self) -> Layer {
        match self {
            LayerCache::Conv2d(_) => Layer::Conv2d,
            LayerCache::Relu(_) => Layer::Relu,
            LayerCache::MaxPool2(_) => Layer::MaxPool2,
            LayerCache::UpConv2(_) => Layer::UpConv2,
            LayerCache::Concat(_) => Layer::Concat,
        }
    }
}

/// Gradients of one layer: one entry per forward input (two for concat),
/// plus parameter gradients for conv/upconv.
#[derive(Debug, Clone)]
pub struct LayerGrads<T: Scalar> {
    pub inputs: Vec<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> LayerGrads<T> {
    fn input_only(inputs: Vec<Tensor<T>>) -> Self {
        Self {
            inputs,
            weight: None,
            bias: None,
        }
    }
}

pub fn layer_backward<T: Scalar>(
    layer: Layer,
    cache: LayerCache<T>,
    grad_output: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    if cache.layer() != layer {
        return Err(Error::contract(format!(
            "backward for {layer:?} given a {:?} cache",
            cache.layer()
        )));
    }
    match cache {
        LayerCache::Conv2d(c) => conv2d_backward(c, grad_output),
        LayerCache::Relu(c) => relu_backward(c, grad_output),
        LayerCache::MaxPool2(c) => maxpool2_backward(c, grad_output),
        LayerCache::UpConv2(c) => upconv2_backward(c, grad_output),
        LayerCache::Concat(c) => concat_backward(c, grad_output),
    }
}

/// He-normal initialization: i.i.d. `N(0, 2 / fan_in)`.
pub fn he_init<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::contract("he_init: fan_in must be at least 1"));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    Ok(Tensor::from_fn(shape, |_| T::from_f64(rng.normal(0.0, std))))
}
