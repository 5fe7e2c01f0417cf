//! Mini-batch Adam training with best-epoch selection.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::ClipSample;
use crate::model::{
    loss_and_gradients, shape_mismatch, Clip, ModelConfig, ModelError, ParameterSet,
    PoseBatchOutput,
};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainingError {
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("no training samples")]
    EmptyTrainingSet,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("epoch callback failed: {0}")]
    Observer(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Mean squared error over every element of a batch output.
pub fn mse_loss<T: Real>(pred: &PoseBatchOutput<T>, target: &[T]) -> Result<T, ModelError> {
    if pred.values.len() != target.len() {
        return Err(shape_mismatch(
            alloc::format!("{} target values", pred.values.len()),
            alloc::format!("{}", target.len()),
        ));
    }
    if target.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let sum: T = pred
        .values
        .iter()
        .zip(target)
        .map(|(&y, &t)| (y - t) * (y - t))
        .sum();
    Ok(sum / T::from_usize(target.len()))
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: ParameterSet<T>,
    v: ParameterSet<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParameterSet<T>, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &ParameterSet<T>) {
        self.step += 1;
        let t = self.step as f64;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let c1 = T::from_f64(1.0 - libm::pow(self.beta1, t));
        let c2 = T::from_f64(1.0 - libm::pow(self.beta2, t));
        let lr = T::from_f64(self.learning_rate);
        let eps = T::from_f64(self.epsilon);
        let tensors = params
            .named_tensors_mut()
            .into_iter()
            .zip(grads.named_tensors())
            .zip(
                self.m
                    .named_tensors_mut()
                    .into_iter()
                    .zip(self.v.named_tensors_mut()),
            );
        for (((_, p), (_, g)), ((_, m), (_, v))) in tensors {
            for (((p, &g), m), v) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(m.data.iter_mut())
                .zip(v.data.iter_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Computes batch loss and gradients. The std crate supplies a threaded
/// implementation; the result must not depend on how work is split.
pub trait GradientEngine<T: Real> {
    fn loss_and_gradients(
        &self,
        clips: &[Clip<T>],
        targets: &[T],
        params: &ParameterSet<T>,
        config: &ModelConfig,
    ) -> Result<(T, ParameterSet<T>), ModelError>;
}

/// Single-threaded gradient computation.
#[derive(Debug, Clone, Copy, Default)]
pub struct SerialEngine;

impl<T: Real> GradientEngine<T> for SerialEngine {
    fn loss_and_gradients(
        &self,
        clips: &[Clip<T>],
        targets: &[T],
        params: &ParameterSet<T>,
        config: &ModelConfig,
    ) -> Result<(T, ParameterSet<T>), ModelError> {
        loss_and_gradients(clips, targets, params, config)
    }
}

/// Wall-clock source for epoch timing.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// A clock that never advances.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-5,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.batch_size == 0 {
            return Err(TrainingError::InvalidConfig(
                "batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainingError::InvalidConfig(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Losses of one epoch; epochs are numbered from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

impl EpochRecord {
    /// The loss used for model selection.
    pub fn selection_loss(&self) -> f64 {
        self.val_loss.unwrap_or(self.train_loss)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the lowest selection loss, or 0 before any epoch ran.
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// Called after every epoch with the current parameters; `improved` is set
/// when this epoch became the best one.
pub trait EpochObserver<T: Real> {
    fn on_epoch(
        &mut self,
        record: &EpochRecord,
        params: &ParameterSet<T>,
        improved: bool,
    ) -> Result<(), TrainingError>;
}

impl<T: Real, F> EpochObserver<T> for F
where
    F: FnMut(&EpochRecord, &ParameterSet<T>, bool) -> Result<(), TrainingError>,
{
    fn on_epoch(
        &mut self,
        record: &EpochRecord,
        params: &ParameterSet<T>,
        improved: bool,
    ) -> Result<(), TrainingError> {
        self(record, params, improved)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters after the best epoch.
    pub best: ParameterSet<T>,
    /// Parameters after the last epoch.
    pub last: ParameterSet<T>,
    pub log: TrainLog,
}

fn batch_inputs<T: Real>(samples: &[&ClipSample<T>]) -> (Vec<Clip<T>>, Vec<T>) {
    let clips = samples.iter().map(|s| s.clip.clone()).collect();
    let targets = samples
        .iter()
        .flat_map(|s| s.targets.iter().map(|&v| T::from_f64(v)))
        .collect();
    (clips, targets)
}

/// Sample-weighted mean loss over `samples`.
pub fn evaluate_loss<T: Real>(
    params: &ParameterSet<T>,
    config: &ModelConfig,
    samples: &[ClipSample<T>],
    batch_size: usize,
) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&ClipSample<T>> = chunk.iter().collect();
        let (clips, targets) = batch_inputs(&refs);
        let out = crate::model::forward(&clips, params, config)?;
        total += mse_loss(&out, &targets)?.as_f64() * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Seed of the shuffle for a given epoch.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Trains for `config.epochs` epochs and returns the parameters of the epoch
/// with the lowest validation loss (training loss when `val` is empty).
#[allow(clippy::too_many_arguments)]
pub fn train<T, E, C, O>(
    params: ParameterSet<T>,
    model: &ModelConfig,
    train_set: &[ClipSample<T>],
    val_set: &[ClipSample<T>],
    config: &TrainConfig,
    engine: &E,
    clock: &C,
    observer: &mut O,
) -> Result<TrainOutcome<T>, TrainingError>
where
    T: Real,
    E: GradientEngine<T>,
    C: Clock,
    O: EpochObserver<T>,
{
    config.validate()?;
    model.validate()?;
    params.check_config(model)?;
    if train_set.is_empty() {
        return Err(TrainingError::EmptyTrainingSet);
    }
    let mut params = params;
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut log = TrainLog::default();
    let mut adam = Adam::new(&params, config.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let start = clock.seconds();
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(
            config.seed,
            epoch,
        )));
        let mut train_loss = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<&ClipSample<T>> = idx.iter().map(|&i| &train_set[i]).collect();
            let (clips, targets) = batch_inputs(&refs);
            let (loss, grads) = engine.loss_and_gradients(&clips, &targets, &params, model)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainingError::NonFiniteLoss { epoch, batch });
            }
            adam.step(&mut params, &grads);
            train_loss += loss.as_f64() * idx.len() as f64;
        }
        train_loss /= train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_loss(&params, model, val_set, config.batch_size)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: clock.seconds() - start,
        };
        let improved = record.selection_loss() < best_loss;
        if improved {
            best_loss = record.selection_loss();
            best.clone_from(&params);
            log.best_epoch = epoch;
        }
        observer.on_epoch(&record, &params, improved)?;
        log.epochs.push(record);
    }
    Ok(TrainOutcome {
        best,
        last: params,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tensor;

    fn scalar_params(v: f64) -> ParameterSet<f64> {
        let mut p = ParameterSet::<f64>::zeros(&ModelConfig::tiny()).unwrap();
        p.head_bias = Tensor::filled(&[6], v);
        p
    }

    #[test]
    fn mse_by_hand() {
        let pred = PoseBatchOutput {
            batch: 1,
            pairs: 1,
            values: alloc::vec![1.0f64, 2.0, 3.0, 0.0, 0.0, 0.0],
        };
        let loss = mse_loss(&pred, &[0.0, 2.0, 5.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((loss - 1.0).abs() < 1e-15);
        assert!(mse_loss(&pred, &[0.0; 5]).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = scalar_params(1.0);
        let mut g = p.zeros_like();
        g.head_bias = Tensor::filled(&[6], 3.0);
        let mut adam = Adam::new(&p, 0.01);
        adam.step(&mut p, &g);
        for v in &p.head_bias.data {
            assert!((v - (1.0 - 0.01 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
        }
        assert!(p.head_weight.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut p = ParameterSet::<f32>::init(&ModelConfig::tiny(), 3).unwrap();
        let before = p.clone();
        let mut g = p.clone();
        g.head_bias.data.iter_mut().for_each(|v| *v = 1.0);
        let mut adam = Adam::new(&p, 0.0);
        for _ in 0..3 {
            adam.step(&mut p, &g);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn epoch_seeds_differ() {
        assert_ne!(epoch_seed(1, 1), epoch_seed(1, 2));
        assert_eq!(epoch_seed(5, 3), epoch_seed(5, 3));
    }
}
