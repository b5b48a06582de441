//! RMSprop training of the U-Net on quarter-dose → full-dose pairs.

mod curve;
mod source;

pub use curve::{plateau_epoch, EpochRecord, LossCurve};
pub use source::{InMemorySource, ManifestSource, PairSource};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataio::{normalize, ImageBuffer, Normalization};
use crate::error::{Error, Result};
use crate::nnops::mse_loss;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};
use crate::unet::{save_checkpoint, CheckpointMeta, UNetParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub val_fraction: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 4,
            epochs: 100,
            val_fraction: 0.1,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            seed,
        }
    }

    /// `learning_rate == 0` is accepted so a run can be replayed without
    /// moving the parameters.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be ≥ 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return bad(format!("rmsprop decay must lie in [0, 1), got {}", self.rmsprop_decay));
        }
        if !(self.rmsprop_epsilon > 0.0) {
            return bad(format!("rmsprop epsilon must be > 0, got {}", self.rmsprop_epsilon));
        }
        Ok(())
    }
}

/// Running mean of squared gradients, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsState<T: Scalar = f32> {
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> RmsState<T> {
    pub fn zeros_like(params: &[Tensor<T>]) -> Self {
        Self {
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// `v ← ρv + (1−ρ)g²; θ ← θ − lr·g/(√v + ε)`, elementwise, computed in f64.
pub fn rmsprop_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut RmsState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.v.len() {
        return Err(Error::contract(format!(
            "rmsprop: {} params, {} grads, {} accumulators",
            params.len(),
            grads.len(),
            state.v.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.v) {
        p.check_same_shape(g, "rmsprop gradient")?;
        p.check_same_shape(v, "rmsprop accumulator")?;
    }
    let (lr, rho, eps) = (cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.v.iter_mut()) {
        for ((theta, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let gf = gi.to_f64();
            let vf = rho * vi.to_f64() + (1.0 - rho) * gf * gf;
            *vi = T::from_f64(vf);
            *theta = T::from_f64(theta.to_f64() - lr * gf / (vf.sqrt() + eps));
        }
    }
    Ok(())
}

/// Seeded random partition; `|val| = round(frac·n)`, at least one when
/// `n ≥ 2` and never the whole list. Both halves keep input order.
pub fn split_train_val(
    ids: &[String],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if ids.is_empty() {
        return Err(Error::contract("cannot split an empty id list"));
    }
    let n = ids.len();
    let mut n_val = (val_fraction * n as f64).round() as usize;
    if n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = 0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (val, train): (Vec<_>, Vec<_>) = ids.iter().cloned().zip(is_val).partition(|(_, v)| *v);
    Ok((
        train.into_iter().map(|(id, _)| id).collect(),
        val.into_iter().map(|(id, _)| id).collect(),
    ))
}

/// Passed to a [`TrainObserver`] after every completed epoch.
pub struct EpochReport<'a> {
    pub record: EpochRecord,
    pub params: &'a UNetParams<f32>,
    pub normalization: Normalization,
    /// Validation MSE is the lowest seen so far.
    pub is_best: bool,
}

pub trait TrainObserver {
    fn on_epoch(&mut self, report: &EpochReport<'_>) -> Result<()>;
}

impl<F: FnMut(&EpochReport<'_>) -> Result<()>> TrainObserver for F {
    fn on_epoch(&mut self, report: &EpochReport<'_>) -> Result<()> {
        self(report)
    }
}

/// Rewrites `last` after every epoch and `best` whenever validation improves.
pub struct CheckpointWriter {
    pub last: PathBuf,
    pub best: PathBuf,
}

impl TrainObserver for CheckpointWriter {
    fn on_epoch(&mut self, r: &EpochReport<'_>) -> Result<()> {
        let meta = CheckpointMeta {
            epoch: Some(r.record.epoch),
            normalization: Some(r.normalization),
        };
        save_checkpoint(r.params, &meta, &self.last)?;
        if r.is_best {
            save_checkpoint(r.params, &meta, &self.best)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub params: UNetParams<f32>,
    pub curve: LossCurve,
    pub normalization: Normalization,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub best_epoch: Option<usize>,
}

struct Sample {
    input: Tensor<f32>,
    target: Tensor<f32>,
}

fn load_pairs(source: &dyn PairSource, ids: &[String]) -> Result<Vec<(ImageBuffer, ImageBuffer)>> {
    ids.iter()
        .map(|id| {
            let (q, f) = source.load(id).map_err(|e| Error::PairLoad {
                id: id.clone(),
                source: Box::new(e),
            })?;
            if !q.same_shape(&f) {
                return Err(Error::PairLoad {
                    id: id.clone(),
                    source: Box::new(Error::contract(format!(
                        "quarter {}x{} and full {}x{} differ",
                        q.height, q.width, f.height, f.width
                    ))),
                });
            }
            Ok((q, f))
        })
        .collect()
}

fn batch_of(samples: &[Sample], idx: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let x: Vec<_> = idx.iter().map(|&i| samples[i].input.clone()).collect();
    let y: Vec<_> = idx.iter().map(|&i| samples[i].target.clone()).collect();
    Ok((Tensor::stack(&x)?, Tensor::stack(&y)?))
}

/// Mean per-sample MSE over `samples` without touching the parameters.
pub fn evaluate_mse(params: &UNetParams<f32>, samples: &[(Tensor<f32>, Tensor<f32>)], batch: usize) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in samples.chunks(batch.max(1)) {
        let x: Vec<_> = chunk.iter().map(|s| s.0.clone()).collect();
        let y: Vec<_> = chunk.iter().map(|s| s.1.clone()).collect();
        let pred = params.predict(&Tensor::stack(&x)?)?;
        let (loss, _) = mse_loss(&pred, &Tensor::stack(&y)?)?;
        sum += loss * chunk.len() as f64;
    }
    Ok(sum / samples.len() as f64)
}

/// Trains `params` on every pair the source offers.
///
/// The ids are split into training and validation sets, the min-max
/// normalization is computed from the training pairs only (both doses), and
/// each epoch shuffles the training ids, steps RMSprop once per mini-batch
/// (the last batch may be smaller), then measures validation MSE.
pub fn fit(
    mut params: UNetParams<f32>,
    source: &dyn PairSource,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<FitOutput> {
    cfg.validate()?;
    let ids = source.ids();
    let (train_ids, val_ids) = split_train_val(&ids, cfg.val_fraction, cfg.seed)?;
    let train_raw = load_pairs(source, &train_ids)?;
    let val_raw = load_pairs(source, &val_ids)?;

    let first = &train_raw[0].0;
    for (id, (q, _)) in train_ids.iter().chain(&val_ids).zip(train_raw.iter().chain(&val_raw)) {
        if !q.same_shape(first) {
            return Err(Error::PairLoad {
                id: id.clone(),
                source: Box::new(Error::contract(format!(
                    "image is {}x{}, expected {}x{}",
                    q.height, q.width, first.height, first.width
                ))),
            });
        }
    }
    if first.height != first.width {
        return Err(Error::contract(format!(
            "training images must be square, got {}x{}",
            first.height, first.width
        )));
    }
    params.config().check_size(first.height)?;

    let norm = Normalization::from_images(train_raw.iter().flat_map(|(q, f)| [q, f]))?;
    let prepare = |raw: &[(ImageBuffer, ImageBuffer)]| -> Result<Vec<Sample>> {
        raw.iter()
            .map(|(q, f)| {
                Ok(Sample {
                    input: normalize(q, &norm)?,
                    target: normalize(f, &norm)?,
                })
            })
            .collect()
    };
    let train = prepare(&train_raw)?;
    let val: Vec<(Tensor<f32>, Tensor<f32>)> = prepare(&val_raw)?
        .into_iter()
        .map(|s| (s.input, s.target))
        .collect();

    // The split consumed `Rng::new(seed)`; batch order uses its own stream.
    let mut rng = Rng::new(cfg.seed ^ 0x05ee_d0fb_a7c4);
    let mut state = RmsState::zeros_like(params.tensors());
    let mut curve = LossCurve::default();
    let mut best: Option<(usize, f64)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = batch_of(&train, idx)?;
            let (pred, cache) = params.forward(&x)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            let grads = params.backward(cache, &grad)?;
            rmsprop_step(params.tensors_mut(), &grads.tensors, &mut state, cfg)?;
            sum += loss * idx.len() as f64;
        }
        let train_mse = sum / train.len() as f64;
        let val_mse = if val.is_empty() {
            None
        } else {
            Some(evaluate_mse(&params, &val, cfg.batch_size)?)
        };
        let record = EpochRecord {
            epoch,
            train_mse,
            val_mse,
        };
        curve.push(record)?;
        let score = val_mse.unwrap_or(train_mse);
        let is_best = best.is_none_or(|(_, b)| score < b);
        if is_best {
            best = Some((epoch, score));
        }
        observer.on_epoch(&EpochReport {
            record,
            params: &params,
            normalization: norm,
            is_best,
        })?;
    }

    Ok(FitOutput {
        params,
        curve,
        normalization: norm,
        train_ids,
        val_ids,
        best_epoch: best.map(|(e, _)| e),
    })
}
