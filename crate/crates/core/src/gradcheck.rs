//! Central finite-difference checks of the analytic backward passes.
//!
//! Every check uses a random linear probe `L = <r, f(x)>` so that `dL/dy = r`
//! exercises all output positions at once. Errors are reported per tensor as
//! `|g_analytic - g_numeric|_2 / max(|g_analytic|_2, |g_numeric|_2)`.

use crate::error::Result;
use crate::nnops::{
    concat_channels, conv2d_forward, layer_backward, maxpool2_forward, mse_loss, relu_forward,
    upconv2_forward, Layer, Padding,
};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::unet::{UNetConfig, UNetParams};

pub const STEP: f64 = 1e-6;

/// Largest relative error of one check, with the tensor it occurred in.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub what: String,
    pub worst: f64,
    pub worst_tensor: String,
}

impl GradCheck {
    fn new(what: impl Into<String>) -> Self {
        Self {
            what: what.into(),
            worst: 0.0,
            worst_tensor: String::new(),
        }
    }

    fn record(&mut self, tensor: &str, analytic: &[f64], numeric: &[f64]) {
        let e = relative_error(analytic, numeric);
        if e > self.worst || self.worst_tensor.is_empty() {
            self.worst = e;
            self.worst_tensor = tensor.to_string();
        }
    }
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// `dL/dx` by central differences, perturbing `x` in place.
pub fn numeric_gradient(x: &mut Tensor<f64>, mut loss: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + STEP;
            let up = loss(x);
            x.data_mut()[i] = orig - STEP;
            let down = loss(x);
            x.data_mut()[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn normal(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal(0.0, std))
}

fn probe(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.dot(r)
}

fn conv_check(padding: Padding, rng: &mut Rng) -> Result<GradCheck> {
    let mut x = normal(&[2, 3, 6, 5], 1.0, rng);
    let mut w = normal(&[4, 3, 3, 3], 0.5, rng);
    let mut b = normal(&[4], 0.5, rng);
    let (y, cache) = conv2d_forward(&x, &w, &b, padding)?;
    let r = normal(y.shape(), 1.0, rng);
    let g = layer_backward(Layer::Conv2d, cache, &r)?;
    let mut c = GradCheck::new(format!("conv2d {padding:?}"));
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
        probe(&conv2d_forward(x, w, b, padding).unwrap().0, &r)
    };
    let (w0, b0) = (w.clone(), b.clone());
    c.record("input", g.inputs[0].data(), &numeric_gradient(&mut x, |x| f(x, &w0, &b0)));
    let x0 = x.clone();
    c.record("weight", g.weight.as_ref().unwrap().data(), &numeric_gradient(&mut w, |w| f(&x0, w, &b0)));
    let w0 = w.clone();
    c.record("bias", g.bias.as_ref().unwrap().data(), &numeric_gradient(&mut b, |b| f(&x0, &w0, b)));
    Ok(c)
}

fn pointwise_conv_check(rng: &mut Rng) -> Result<GradCheck> {
    let mut x = normal(&[2, 3, 4, 4], 1.0, rng);
    let mut w = normal(&[2, 3, 1, 1], 0.5, rng);
    let b = normal(&[2], 0.5, rng);
    let (y, cache) = conv2d_forward(&x, &w, &b, Padding::Same)?;
    let r = normal(y.shape(), 1.0, rng);
    let g = layer_backward(Layer::Conv2d, cache, &r)?;
    let mut c = GradCheck::new("conv2d 1x1");
    let w0 = w.clone();
    c.record(
        "input",
        g.inputs[0].data(),
        &numeric_gradient(&mut x, |x| probe(&conv2d_forward(x, &w0, &b, Padding::Same).unwrap().0, &r)),
    );
    let x0 = x.clone();
    c.record(
        "weight",
        g.weight.as_ref().unwrap().data(),
        &numeric_gradient(&mut w, |w| probe(&conv2d_forward(&x0, w, &b, Padding::Same).unwrap().0, &r)),
    );
    Ok(c)
}

/// Values at least `gap` apart so that no finite-difference step crosses a
/// ReLU kink or reorders a pooling window.
fn separated(shape: &[usize], gap: f64, rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * gap).collect();
    rng.shuffle(&mut values);
    Tensor::from_vec(shape, values).expect("shape matches")
}

fn relu_check(rng: &mut Rng) -> Result<GradCheck> {
    let mut x = separated(&[2, 2, 3, 3], 0.1, rng);
    let (y, cache) = relu_forward(&x);
    let r = normal(y.shape(), 1.0, rng);
    let g = layer_backward(Layer::Relu, cache, &r)?;
    let mut c = GradCheck::new("relu");
    c.record("input", g.inputs[0].data(), &numeric_gradient(&mut x, |x| probe(&relu_forward(x).0, &r)));
    Ok(c)
}

fn maxpool_check(rng: &mut Rng) -> Result<GradCheck> {
    let mut x = separated(&[2, 2, 4, 6], 0.1, rng);
    let (y, cache) = maxpool2_forward(&x)?;
    let r = normal(y.shape(), 1.0, rng);
    let g = layer_backward(Layer::MaxPool2, cache, &r)?;
    let mut c = GradCheck::new("maxpool2");
    c.record(
        "input",
        g.inputs[0].data(),
        &numeric_gradient(&mut x, |x| probe(&maxpool2_forward(x).unwrap().0, &r)),
    );
    Ok(c)
}

fn upconv_check(rng: &mut Rng) -> Result<GradCheck> {
    let mut x = normal(&[2, 3, 3, 4], 1.0, rng);
    let mut w = normal(&[3, 2, 2, 2], 0.5, rng);
    let mut b = normal(&[2], 0.5, rng);
    let (y, cache) = upconv2_forward(&x, &w, &b)?;
    let r = normal(y.shape(), 1.0, rng);
    let g = layer_backward(Layer::UpConv2, cache, &r)?;
    let mut c = GradCheck::new("upconv2");
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| probe(&upconv2_forward(x, w, b).unwrap().0, &r);
    let (w0, b0) = (w.clone(), b.clone());
    c.record("input", g.inputs[0].data(), &numeric_gradient(&mut x, |x| f(x, &w0, &b0)));
    let x0 = x.clone();
    c.record("weight", g.weight.as_ref().unwrap().data(), &numeric_gradient(&mut w, |w| f(&x0, w, &b0)));
    let w0 = w.clone();
    c.record("bias", g.bias.as_ref().unwrap().data(), &numeric_gradient(&mut b, |b| f(&x0, &w0, b)));
    Ok(c)
}

fn concat_check(rng: &mut Rng) -> Result<GradCheck> {
    let mut a = normal(&[2, 2, 3, 3], 1.0, rng);
    let mut b = normal(&[2, 3, 3, 3], 1.0, rng);
    let (y, cache) = concat_channels(&a, &b)?;
    let r = normal(y.shape(), 1.0, rng);
    let g = layer_backward(Layer::Concat, cache, &r)?;
    let mut c = GradCheck::new("concat");
    let b0 = b.clone();
    c.record(
        "first",
        g.inputs[0].data(),
        &numeric_gradient(&mut a, |a| probe(&concat_channels(a, &b0).unwrap().0, &r)),
    );
    let a0 = a.clone();
    c.record(
        "second",
        g.inputs[1].data(),
        &numeric_gradient(&mut b, |b| probe(&concat_channels(&a0, b).unwrap().0, &r)),
    );
    Ok(c)
}

fn mse_check(rng: &mut Rng) -> Result<GradCheck> {
    let mut p = normal(&[2, 1, 4, 4], 1.0, rng);
    let t = normal(&[2, 1, 4, 4], 1.0, rng);
    let (_, grad) = mse_loss(&p, &t)?;
    let mut c = GradCheck::new("mse_loss");
    c.record("pred", grad.data(), &numeric_gradient(&mut p, |p| mse_loss(p, &t).unwrap().0));
    Ok(c)
}

/// One check per layer kind: conv (same, valid, 1x1), relu, maxpool,
/// upconv, concat and the MSE loss.
pub fn check_layers(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = Rng::new(seed);
    Ok(vec![
        conv_check(Padding::Same, &mut rng)?,
        conv_check(Padding::Valid, &mut rng)?,
        pointwise_conv_check(&mut rng)?,
        relu_check(&mut rng)?,
        maxpool_check(&mut rng)?,
        upconv_check(&mut rng)?,
        concat_check(&mut rng)?,
        mse_check(&mut rng)?,
    ])
}

/// Checks every parameter tensor of a freshly built double-precision U-Net
/// on a `batch x 1 x size x size` input under the MSE loss.
pub fn check_unet(config: UNetConfig, size: usize, batch: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = Rng::new(seed);
    let params: UNetParams<f64> = UNetParams::build(config, &mut rng)?;
    let x = normal(&[batch, 1, size, size], 1.0, &mut rng);
    let target = normal(&[batch, 1, size, size], 1.0, &mut rng);
    let (y, cache) = params.forward(&x)?;
    let (_, grad_y) = mse_loss(&y, &target)?;
    let grads = params.backward(cache, &grad_y)?;

    let mut c = GradCheck::new(format!(
        "unet depth {} base {} on {size}x{size}",
        config.depth, config.base_channels
    ));
    let names = params.names().to_vec();
    let mut named: Vec<Tensor<f64>> = params.tensors().to_vec();
    for (i, name) in names.iter().enumerate() {
        let mut t = named[i].clone();
        let numeric = numeric_gradient(&mut t, |t| {
            named[i] = t.clone();
            let p = UNetParams::from_named(
                config,
                names.iter().cloned().zip(named.iter().cloned()).collect(),
            )
            .expect("same layout");
            mse_loss(&p.predict(&x).unwrap(), &target).unwrap().0
        });
        named[i] = t;
        c.record(name, grads.tensors[i].data(), &numeric);
    }
    Ok(c)
}
