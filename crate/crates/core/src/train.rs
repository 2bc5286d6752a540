//! Mini-batch training: Adam with bias correction, learning-rate decay on
//! plateau, early stopping with best-checkpoint restore, dropout and
//! feature dropout.

use std::time::Instant;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelGrad, NamlssModel};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_patience: usize,
    /// Dropout rate for subnets that carry a dropout layer.
    pub dropout: f64,
    /// Probability of dropping a whole feature's contribution for a batch.
    pub feature_dropout: f64,
    /// Share of the training rows held out for early stopping. With `0`
    /// the schedule monitors the training loss instead.
    pub validation_fraction: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// A monitored loss must drop by at least this much to count as an
    /// improvement.
    pub min_improvement: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 256,
            max_epochs: 2000,
            early_stop_patience: 150,
            lr_decay_factor: 0.95,
            lr_decay_patience: 10,
            dropout: 0.0,
            feature_dropout: 0.0,
            validation_fraction: 0.2,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: Some(10.0),
            min_improvement: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return fail(format!("lr_decay_factor must be in (0, 1), got {}", self.lr_decay_factor));
        }
        if self.early_stop_patience == 0 || self.lr_decay_patience == 0 {
            return fail("patience values must be >= 1".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return fail("batch_size and max_epochs must be >= 1".into());
        }
        for (name, v) in [("dropout", self.dropout), ("feature_dropout", self.feature_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return fail(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return fail("invalid Adam constants".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return fail(format!("clip_norm must be > 0, got {c}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub learning_rate: f64,
    /// Seconds since training started. Not serialised, so that history
    /// files are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time: f64,
}

impl PartialEq for EpochRecord {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.validation_loss.map(f64::to_bits) == other.validation_loss.map(f64::to_bits)
            && self.learning_rate.to_bits() == other.learning_rate.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were restored.
    pub best_epoch: usize,
    /// Best monitored loss (validation loss when a split exists).
    pub best_loss: f64,
    pub stop_epoch: usize,
    pub stop_reason: StopReason,
    pub lr_decays: usize,
    pub clipped_steps: usize,
}

impl TrainHistory {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn validation_losses(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.validation_loss).collect()
    }
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> AdamState {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    fn update(&mut self, offset: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let m = &mut self.m[offset..offset + params.len()];
        let v = &mut self.v[offset..offset + params.len()];
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    /// One Adam step over every model parameter.
    pub fn step_model(&mut self, model: &mut NamlssModel, grad: &ModelGrad, lr: f64) -> Result<()> {
        if self.m.len() != model.num_params() {
            return Err(Error::Dimension(format!(
                "optimizer state holds {} entries for {} parameters",
                self.m.len(),
                model.num_params()
            )));
        }
        self.t += 1;
        let mut offset = 0;
        model.for_each_param_mut(grad, |p, g| {
            self.update(offset, p, g, lr);
            offset += p.len();
        });
        Ok(())
    }
}

/// Adam update with bias correction on a flat parameter vector.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "adam step with {} params, {} grads, {} state entries",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    state.update(0, params, grads, lr);
    Ok(())
}

/// Which features survive a batch: `true` keeps, each dropped with
/// probability `rate`.
pub fn feature_dropout_mask<R: Rng + ?Sized>(n_features: usize, rate: f64, rng: &mut R) -> Vec<bool> {
    if rate <= 0.0 {
        return vec![true; n_features];
    }
    (0..n_features).map(|_| rng.gen::<f64>() >= rate).collect()
}

/// Deterministic train/validation split of `0..n`.
pub fn split_indices(n: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if validation_fraction <= 0.0 || n < 2 {
        return (idx, Vec::new());
    }
    idx.shuffle(&mut stream(seed, Purpose::Split, 0));
    let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn locate_non_finite(raw: &ndarray::Array2<f64>, grad: &ndarray::Array2<f64>) -> Option<usize> {
    (0..raw.ncols()).find(|&k| {
        raw.column(k).iter().any(|v| !v.is_finite()) || grad.column(k).iter().any(|v| !v.is_finite())
    })
}

/// Fits `model` to `data`, returning the parameters with the best monitored
/// loss.
pub fn train(mut model: NamlssModel, data: &Dataset, config: &TrainConfig) -> Result<(NamlssModel, TrainHistory)> {
    config.validate()?;
    if data.x.ncols() != model.n_features {
        return Err(Error::Dimension(format!(
            "data has {} features, model expects {}",
            data.x.ncols(),
            model.n_features
        )));
    }
    if data.n() == 0 {
        return Err(Error::Domain("no training rows".into()));
    }
    // surface support violations before any optimisation
    if let crate::model::Head::Distribution { family } = model.head {
        for (i, &y) in data.y.iter().enumerate() {
            if !family.in_support(y) {
                return Err(Error::Domain(format!(
                    "row {i}: y = {y} is outside the support of {}",
                    family.id
                )));
            }
        }
    }

    let (train_idx, val_idx) = split_indices(data.n(), config.validation_fraction, config.seed);
    let val = (!val_idx.is_empty()).then(|| data.select(&val_idx));

    let start = Instant::now();
    let mut adam = AdamState::new(model.num_params(), config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut best_model = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stagnant = 0;
    let mut lr_stagnant = 0;
    let mut decays = 0;
    let mut lr = config.learning_rate;
    let mut clipped = 0;
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 0..config.max_epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut stream(config.seed, Purpose::Shuffle, epoch as u64));
        let mut noise_rng = stream(config.seed, Purpose::Dropout, epoch as u64);
        let mut loss_sum = 0.0;

        for (b, rows) in order.chunks(config.batch_size).enumerate() {
            let xb = data.x.select(Axis(0), rows);
            let yb = data.y.select(Axis(0), rows);
            let noise = model.sample_noise(rows.len(), config.dropout, config.feature_dropout, &mut noise_rng);
            let fwd = model.forward_train(xb.view(), &noise)?;
            let (loss, raw_grad) = model.loss_and_raw_grad(fwd.raw.view(), yb.view()).map_err(|e| match e {
                Error::Numeric(_) => Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    column: locate_non_finite(&fwd.raw, &fwd.raw),
                },
                other => other,
            })?;
            if !loss.is_finite() || raw_grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    column: locate_non_finite(&fwd.raw, &raw_grad),
                });
            }
            let mut grad = model.backward(&fwd, raw_grad.view())?;
            if !grad.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    column: None,
                });
            }
            if let Some(max_norm) = config.clip_norm {
                let norm = grad.squared_norm().sqrt();
                if norm > max_norm {
                    grad.scale(max_norm / norm);
                    clipped += 1;
                    log::debug!("epoch {epoch} batch {b}: gradient norm {norm:.3e} clipped to {max_norm}");
                }
            }
            adam.step_model(&mut model, &grad, lr)?;
            loss_sum += loss * rows.len() as f64;
        }
        let train_loss = loss_sum / train_idx.len() as f64;

        let validation_loss = match &val {
            Some(v) => {
                let l = model.loss(v.x.view(), v.y.view())?;
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: usize::MAX,
                        column: None,
                    });
                }
                Some(l)
            }
            None => None,
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
            learning_rate: lr,
            wall_time: start.elapsed().as_secs_f64(),
        });

        let monitored = validation_loss.unwrap_or(train_loss);
        if monitored < best_loss - config.min_improvement {
            best_loss = monitored;
            best_epoch = epoch;
            best_model = model.clone();
            stagnant = 0;
            lr_stagnant = 0;
        } else {
            stagnant += 1;
            lr_stagnant += 1;
            if lr_stagnant >= config.lr_decay_patience {
                decays += 1;
                lr = config.learning_rate * config.lr_decay_factor.powi(decays as i32);
                lr_stagnant = 0;
            }
            if stagnant >= config.early_stop_patience {
                stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }

    let stop_epoch = epochs.last().map_or(0, |e| e.epoch);
    Ok((
        best_model,
        TrainHistory {
            epochs,
            best_epoch,
            best_loss,
            stop_epoch,
            stop_reason,
            lr_decays: decays,
            clipped_steps: clipped,
        },
    ))
}
