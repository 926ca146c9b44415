//! Mini-batch training with Adam and a warmup/decay learning-rate schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of all optimizer steps spent ramping the learning rate up.
    pub warmup_frac: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr: 3e-4,
            warmup_frac: 0.1,
            clip_norm: Some(1.0),
            seed: 0,
        }
    }
}

/// Linear warmup to `base`, then linear decay to zero.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.base * (step + 1) as f64 / self.warmup as f64;
        }
        let rest = self.total.saturating_sub(self.warmup).max(1);
        let done = (step - self.warmup) as f64 / rest as f64;
        self.base * (1.0 - done).max(0.0)
    }
}

pub struct Adam<T: Scalar> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(contract!("{} parameters but {} gradients", params.len(), grads.len()));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(Tensor::zeros_like).collect();
            self.v = grads.iter().map(Tensor::zeros_like).collect();
        }
        self.step += 1;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let c1 = T::c(1.0 - self.beta1.powi(self.step));
        let c2 = T::c(1.0 - self.beta2.powi(self.step));
        let (lr, eps) = (T::c(lr), T::c(self.eps));
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A model trainable by [`fit`].
pub(crate) trait Trainable<T: Scalar>: Sync {
    type Example: Sync;

    /// Loss and gradients for one example, in the order of `trainable_mut`.
    /// `seed` is unique per (epoch, example) for any stochastic corruption.
    fn loss_and_grads(&self, example: &Self::Example, seed: u64) -> Result<(T, Vec<Tensor<T>>)>;

    fn trainable_mut(&mut self) -> Result<Vec<&mut Tensor<T>>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Runs `cfg.epochs` epochs of shuffled mini-batch Adam.
///
/// Per-example gradients may be computed in parallel; they are summed in
/// batch order so results do not depend on the thread count.
pub(crate) fn fit<T, M, F>(model: &mut M, examples: &[M::Example], cfg: &TrainConfig, mut after_epoch: F) -> Result<Vec<EpochStats>>
where
    T: Scalar,
    M: Trainable<T>,
    F: FnMut(&M, EpochStats),
{
    if examples.is_empty() {
        return Err(contract!("cannot train on an empty dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(contract!("batch size must be positive"));
    }
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let schedule = LrSchedule {
        base: cfg.lr,
        warmup: ((total as f64) * cfg.warmup_frac).ceil().max(1.0) as usize,
        total,
    };
    let mut adam = Adam::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<(T, Vec<Tensor<T>>)>> = batch
                .par_iter()
                .map(|&i| {
                    let seed = cfg.seed.wrapping_add((epoch * examples.len() + i) as u64).wrapping_mul(0xD134_2543_DE82_EF95);
                    model.loss_and_grads(&examples[i], seed)
                })
                .collect();
            let mut sum: Option<Vec<Tensor<T>>> = None;
            for (k, r) in results.into_iter().enumerate() {
                let (loss, grads) = r.map_err(|e| diverged(epoch, step, e))?;
                let lf = loss.to_f64().unwrap_or(f64::NAN);
                if !lf.is_finite() {
                    return Err(Error::Diverged(format!(
                        "non-finite loss at epoch {epoch}, step {step}, example {}",
                        batch[k]
                    )));
                }
                loss_sum += lf;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            let mut grads = sum.expect("non-empty batch");
            let inv = T::c(1.0 / batch.len() as f64);
            for g in &mut grads {
                g.scale_in_place(inv);
            }
            if let Some(max) = cfg.clip_norm {
                let norm = grads.iter().map(|g| g.sq_norm().to_f64().unwrap()).sum::<f64>().sqrt();
                if !norm.is_finite() {
                    return Err(Error::Diverged(format!("non-finite gradient at epoch {epoch}, step {step}")));
                }
                if norm > max {
                    let k = T::c(max / norm);
                    for g in &mut grads {
                        g.scale_in_place(k);
                    }
                }
            }
            let mut params = model.trainable_mut()?;
            adam.update(&mut params, &grads, schedule.at(step))?;
            step += 1;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / examples.len() as f64,
        };
        history.push(stats);
        after_epoch(model, stats);
    }
    Ok(history)
}

fn diverged(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::Numeric(what) => Error::Diverged(format!("{what} went non-finite at epoch {epoch}, step {step}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LrSchedule {
            base: 1.0,
            warmup: 4,
            total: 20,
        };
        assert_eq!(s.at(0), 0.25);
        assert_eq!(s.at(3), 1.0);
        assert!(s.at(10) < 1.0 && s.at(10) > 0.0);
        assert_eq!(s.at(20), 0.0);
    }

    #[test]
    fn adam_moves_against_the_gradient() {
        let mut w = Tensor::<f64>::row_vector(vec![1.0, -1.0]);
        let g = Tensor::row_vector(vec![0.5, -0.5]);
        let mut adam = Adam::new();
        adam.update(&mut [&mut w], &[g], 0.1).unwrap();
        assert!((w.data()[0] - 0.9).abs() < 1e-6);
        assert!((w.data()[1] + 0.9).abs() < 1e-6);
    }
}
