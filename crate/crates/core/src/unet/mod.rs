//! Encoder-decoder network with concatenating skip connections.
//!
//! Contracting level `l` runs two same-padded 3x3 conv+ReLU layers producing
//! `base_channels * 2^l` channels, then 2x2 max pooling. The bottleneck is
//! another conv block followed by a linear 1x1 projection to
//! `bottleneck_features` channels. Each expanding level upsamples with a 2x2
//! transposed convolution, concatenates the contracting features of the same
//! level in front of the upsampled ones, and runs two conv+ReLU layers. A 1x1
//! linear head produces the single output channel.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnops::{
    concat_channels, conv2d_forward, he_init, layer_backward, maxpool2_forward, relu_forward,
    upconv2_forward, Layer, LayerCache, Padding,
};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Number of pooling levels.
    pub depth: usize,
    /// Channels produced by the first contracting block.
    pub base_channels: usize,
    /// Output channels of the bottleneck 1x1 projection.
    pub bottleneck_features: usize,
    /// Nominal square input size; must be divisible by `2^depth`.
    pub input_size: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            bottleneck_features: 64,
            input_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConvKind {
    Conv3,
    Conv1,
    Up2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerSpec {
    name: String,
    kind: ConvKind,
    in_c: usize,
    out_c: usize,
}

impl LayerSpec {
    fn new(name: String, kind: ConvKind, in_c: usize, out_c: usize) -> Self {
        Self {
            name,
            kind,
            in_c,
            out_c,
        }
    }

    fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            ConvKind::Conv3 => vec![self.out_c, self.in_c, 3, 3],
            ConvKind::Conv1 => vec![self.out_c, self.in_c, 1, 1],
            ConvKind::Up2 => vec![self.in_c, self.out_c, 2, 2],
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            ConvKind::Conv3 => self.in_c * 9,
            ConvKind::Conv1 => self.in_c,
            // each output pixel receives exactly one tap per input channel
            ConvKind::Up2 => self.in_c,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.bottleneck_features == 0 {
            return Err(Error::contract(format!(
                "invalid U-Net config {self:?}: depth, base_channels and bottleneck_features must be >= 1"
            )));
        }
        if self.depth > 16 {
            return Err(Error::contract(format!("U-Net depth {} too large", self.depth)));
        }
        self.check_size(self.input_size)
    }

    /// Spatial sizes must survive `depth` halvings.
    pub fn check_size(&self, size: usize) -> Result<()> {
        let factor = 1usize << self.depth;
        if size == 0 || !size.is_multiple_of(factor) {
            return Err(Error::contract(format!(
                "input size {size} is not divisible by 2^depth = {factor}; center-crop the image to a multiple of {factor}"
            )));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Upper bound, in input pixels, on how far an output pixel sees.
    /// Along the deepest path each 3x3 conv at level `l` adds `2^l`, and so
    /// does each pool and upconv crossing level `l`: `8·2^depth − 6`.
    pub fn receptive_radius(&self) -> usize {
        8 * (1usize << self.depth) - 6
    }

    fn layers(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        for l in 0..self.depth {
            let in_c = if l == 0 { 1 } else { self.channels(l - 1) };
            let c = self.channels(l);
            specs.push(LayerSpec::new(format!("enc{l}.conv1"), ConvKind::Conv3, in_c, c));
            specs.push(LayerSpec::new(format!("enc{l}.conv2"), ConvKind::Conv3, c, c));
        }
        let top = self.channels(self.depth);
        specs.push(LayerSpec::new(
            "bottleneck.conv1".into(),
            ConvKind::Conv3,
            self.channels(self.depth - 1),
            top,
        ));
        specs.push(LayerSpec::new("bottleneck.conv2".into(), ConvKind::Conv3, top, top));
        specs.push(LayerSpec::new(
            "bottleneck.proj".into(),
            ConvKind::Conv1,
            top,
            self.bottleneck_features,
        ));
        for l in (0..self.depth).rev() {
            let from = if l == self.depth - 1 {
                self.bottleneck_features
            } else {
                self.channels(l + 1)
            };
            let c = self.channels(l);
            specs.push(LayerSpec::new(format!("dec{l}.up"), ConvKind::Up2, from, c));
            specs.push(LayerSpec::new(format!("dec{l}.conv1"), ConvKind::Conv3, 2 * c, c));
            specs.push(LayerSpec::new(format!("dec{l}.conv2"), ConvKind::Conv3, c, c));
        }
        specs.push(LayerSpec::new("head".into(), ConvKind::Conv1, self.channels(0), 1));
        specs
    }

    /// Ordered `(name, shape)` of every parameter tensor.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers()
            .into_iter()
            .flat_map(|spec| {
                let w = spec.weight_shape();
                [
                    (format!("{}.weight", spec.name), w),
                    (format!("{}.bias", spec.name), vec![spec.out_c]),
                ]
            })
            .collect()
    }
}

static PARAM_GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    PARAM_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Named network parameters; weights and biases alternate, in layer order.
#[derive(Debug)]
pub struct UNetParams<T: Scalar = f32> {
    config: UNetConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    /// Changes whenever the tensors may have been modified; caches carry it
    /// so a backward pass cannot be paired with a different parameter set.
    generation: u64,
}

impl<T: Scalar> Clone for UNetParams<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            names: self.names.clone(),
            tensors: self.tensors.clone(),
            generation: next_generation(),
        }
    }
}

impl<T: Scalar> PartialEq for UNetParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.names == other.names && self.tensors == other.tensors
    }
}

impl<T: Scalar> UNetParams<T> {
    /// He-normal weights, zero biases.
    pub fn build(config: UNetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for spec in config.layers() {
            tensors.push(he_init(&spec.weight_shape(), spec.fan_in(), rng)?);
            tensors.push(Tensor::zeros(&[spec.out_c]));
            names.push(format!("{}.weight", spec.name));
            names.push(format!("{}.bias", spec.name));
        }
        Ok(Self {
            config,
            names,
            tensors,
            generation: next_generation(),
        })
    }

    pub fn zeros(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let (names, tensors) = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .unzip();
        Ok(Self {
            config,
            names,
            tensors,
            generation: next_generation(),
        })
    }

    /// Assembles parameters from named tensors, checking them against `config`.
    pub fn from_named(config: UNetConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != named.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                named.len()
            )));
        }
        for ((name, shape), (got_name, t)) in expected.iter().zip(&named) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::contract(format!(
                    "parameter {got_name} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self {
            config,
            names,
            tensors,
            generation: next_generation(),
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        self.generation = next_generation();
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> UNetParams<U> {
        UNetParams {
            config: self.config,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            generation: next_generation(),
        }
    }

    fn layer(&self, index: usize) -> (&Tensor<T>, &Tensor<T>) {
        (&self.tensors[2 * index], &self.tensors[2 * index + 1])
    }

    /// Runs the network and keeps every activation needed for [`Self::backward`].
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 {
            return Err(Error::contract(format!(
                "U-Net input must have 1 channel, got {c}"
            )));
        }
        self.config.check_size(h)?;
        self.config.check_size(w)?;

        let mut steps = Vec::new();
        let mut layer = 0usize;
        let conv = |input: &Tensor<T>,
                        layer: &mut usize,
                        steps: &mut Vec<Step<T>>,
                        relu: bool|
         -> Result<Tensor<T>> {
            let (wt, b) = self.layer(*layer);
            let (out, cache) = if wt.shape()[2] == 2 {
                upconv2_forward(input, wt, b)?
            } else {
                conv2d_forward(input, wt, b, Padding::Same)?
            };
            steps.push(Step::Param(*layer, cache));
            *layer += 1;
            if relu {
                let (out, cache) = relu_forward(&out);
                steps.push(Step::Plain(cache));
                Ok(out)
            } else {
                Ok(out)
            }
        };

        let mut cur = x.clone();
        let mut skips = Vec::with_capacity(self.config.depth);
        for _ in 0..self.config.depth {
            cur = conv(&cur, &mut layer, &mut steps, true)?;
            cur = conv(&cur, &mut layer, &mut steps, true)?;
            let (pooled, cache) = maxpool2_forward(&cur)?;
            steps.push(Step::Plain(cache));
            skips.push(cur);
            cur = pooled;
        }
        cur = conv(&cur, &mut layer, &mut steps, true)?;
        cur = conv(&cur, &mut layer, &mut steps, true)?;
        cur = conv(&cur, &mut layer, &mut steps, false)?;

        for _ in 0..self.config.depth {
            let up = conv(&cur, &mut layer, &mut steps, false)?;
            let skip = skips.pop().expect("one skip per level");
            let (joined, cache) = concat_channels(&skip, &up)?;
            steps.push(Step::Plain(cache));
            cur = conv(&joined, &mut layer, &mut steps, true)?;
            cur = conv(&cur, &mut layer, &mut steps, true)?;
        }
        let y = conv(&cur, &mut layer, &mut steps, false)?;

        Ok((
            y,
            ForwardCache {
                steps,
                generation: self.generation,
                output_shape: vec![x.shape()[0], 1, h, w],
            },
        ))
    }

    /// Inference only.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x)?.0)
    }

    /// Gradients of a scalar loss w.r.t. every parameter, given `dL/dy`.
    pub fn backward(&self, cache: ForwardCache<T>, grad_y: &Tensor<T>) -> Result<Gradients<T>> {
        if cache.generation != self.generation {
            return Err(Error::contract(
                "stale cache: parameters changed since the forward pass",
            ));
        }
        if grad_y.shape() != cache.output_shape.as_slice() {
            return Err(Error::contract(format!(
                "grad_y shape {:?} != network output {:?}",
                grad_y.shape(),
                cache.output_shape
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.tensors.len()];
        let depth = self.config.depth;
        let mut skip_grads: Vec<Tensor<T>> = Vec::with_capacity(depth);
        let mut g = grad_y.clone();

        let mut steps = cache.steps;
        // Decoder and bottleneck run in reverse; skip gradients are collected
        // at each concat and added back where the encoder forks.
        while let Some(step) = steps.pop() {
            match step {
                Step::Param(index, layer_cache) => {
                    let kind = layer_cache.layer();
                    let lg = layer_backward(kind, layer_cache, &g)?;
                    grads[2 * index] = lg.weight;
                    grads[2 * index + 1] = lg.bias;
                    g = lg.inputs.into_iter().next().expect("one input");
                }
                Step::Plain(layer_cache) => match layer_cache.layer() {
                    Layer::Concat => {
                        let mut parts = layer_backward(Layer::Concat, layer_cache, &g)?.inputs;
                        g = parts.pop().expect("upsampled half");
                        skip_grads.push(parts.pop().expect("skip half"));
                    }
                    Layer::MaxPool2 => {
                        let mut lg = layer_backward(Layer::MaxPool2, layer_cache, &g)?;
                        g = lg.inputs.pop().expect("one input");
                        let skip = skip_grads.pop().ok_or_else(|| {
                            Error::contract("cache is missing a skip connection")
                        })?;
                        g.add_assign(&skip)?;
                    }
                    kind => {
                        let mut lg = layer_backward(kind, layer_cache, &g)?;
                        g = lg.inputs.pop().expect("one input");
                    }
                },
            }
        }
        let tensors = grads
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                t.ok_or_else(|| Error::contract(format!("no gradient for {}", self.names[i])))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients {
            names: self.names.clone(),
            tensors,
        })
    }
}

enum Step<T: Scalar> {
    /// Layer with parameters at the given layer index.
    Param(usize, LayerCache<T>),
    Plain(LayerCache<T>),
}

/// Saved activations of one [`UNetParams::forward`] call.
pub struct ForwardCache<T: Scalar> {
    steps: Vec<Step<T>>,
    generation: u64,
    output_shape: Vec<usize>,
}

/// Parameter gradients, laid out like [`UNetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Scalar = f32> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(depth: usize, base: usize, bf: usize, size: usize) -> UNetConfig {
        UNetConfig {
            depth,
            base_channels: base,
            bottleneck_features: bf,
            input_size: size,
        }
    }

    #[test]
    fn depth_one_layout_matches_hand_enumeration() {
        let cfg = small(1, 4, 64, 16);
        #[rustfmt::skip]
        let want: Vec<(&str, Vec<usize>)> = vec![
            ("enc0.conv1.weight", vec![4, 1, 3, 3]), ("enc0.conv1.bias", vec![4]),
            ("enc0.conv2.weight", vec![4, 4, 3, 3]), ("enc0.conv2.bias", vec![4]),
            ("bottleneck.conv1.weight", vec![8, 4, 3, 3]), ("bottleneck.conv1.bias", vec![8]),
            ("bottleneck.conv2.weight", vec![8, 8, 3, 3]), ("bottleneck.conv2.bias", vec![8]),
            ("bottleneck.proj.weight", vec![64, 8, 1, 1]), ("bottleneck.proj.bias", vec![64]),
            ("dec0.up.weight", vec![64, 4, 2, 2]), ("dec0.up.bias", vec![4]),
            ("dec0.conv1.weight", vec![4, 8, 3, 3]), ("dec0.conv1.bias", vec![4]),
            ("dec0.conv2.weight", vec![4, 4, 3, 3]), ("dec0.conv2.bias", vec![4]),
            ("head.weight", vec![1, 4, 1, 1]), ("head.bias", vec![1]),
        ];
        let p = UNetParams::<f32>::build(cfg, &mut Rng::new(0)).unwrap();
        let got: Vec<(&str, Vec<usize>)> =
            p.iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        assert_eq!(got, want);
        assert!(p.iter().filter(|(n, _)| n.ends_with("bias")).all(|(_, t)| t.max_abs() == 0.0));
    }

    #[test]
    fn invalid_configs() {
        assert!(small(2, 4, 8, 15).validate().is_err());
        assert!(small(0, 4, 8, 16).validate().is_err());
        assert!(small(1, 0, 8, 16).validate().is_err());
        assert!(UNetParams::<f32>::build(small(2, 4, 8, 15), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = small(2, 4, 8, 16);
        let a = UNetParams::<f32>::build(cfg, &mut Rng::new(9)).unwrap();
        let b = UNetParams::<f32>::build(cfg, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        let c = UNetParams::<f32>::build(cfg, &mut Rng::new(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shape_contract_and_zero_network() {
        let cfg = small(2, 4, 8, 16);
        let p = UNetParams::<f32>::build(cfg, &mut Rng::new(1)).unwrap();
        let x = Tensor::from_fn(&[3, 1, 16, 16], |i| (i % 7) as f32 / 7.0);
        assert_eq!(p.predict(&x).unwrap().shape(), x.shape());
        let x32 = Tensor::from_fn(&[1, 1, 32, 32], |i| (i % 5) as f32);
        assert_eq!(p.predict(&x32).unwrap().shape(), x32.shape());

        let z = UNetParams::<f32>::zeros(cfg).unwrap();
        assert_eq!(z.predict(&Tensor::zeros(&[1, 1, 16, 16])).unwrap().max_abs(), 0.0);

        assert!(p.predict(&Tensor::zeros(&[1, 2, 16, 16])).is_err());
        assert!(p.predict(&Tensor::zeros(&[1, 1, 18, 18])).is_err());
    }

    #[test]
    fn backward_linearity_and_zero() {
        let cfg = small(2, 2, 4, 8);
        let p = UNetParams::<f64>::build(cfg, &mut Rng::new(4)).unwrap();
        let x = Tensor::from_fn(&[2, 1, 8, 8], |i| ((i * 31) % 17) as f64 / 17.0);
        let (y, cache) = p.forward(&x).unwrap();
        let g0 = p.backward(cache, &Tensor::zeros(y.shape())).unwrap();
        assert!(g0.tensors.iter().all(|t| t.max_abs() == 0.0));

        let gy = Tensor::from_fn(y.shape(), |i| ((i * 13) % 11) as f64 - 5.0);
        let g1 = p.backward(p.forward(&x).unwrap().1, &gy).unwrap();
        let g2 = p.backward(p.forward(&x).unwrap().1, &gy.scaled(2.0)).unwrap();
        for (a, b) in g1.tensors.iter().zip(&g2.tensors) {
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((2.0 * u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let cfg = small(1, 2, 4, 4);
        let mut p = UNetParams::<f64>::build(cfg, &mut Rng::new(4)).unwrap();
        let x = Tensor::full(&[1, 1, 4, 4], 0.5);
        let (y, cache) = p.forward(&x).unwrap();
        p.tensors_mut()[0].data_mut()[0] += 1.0;
        let err = p.backward(cache, &Tensor::zeros(y.shape())).unwrap_err();
        assert!(err.to_string().contains("stale"));
    }
}
