//! Thread-parallel gradient and inference back ends.

use std::thread;

use stvo_core::inference::{InferenceError, MotionPredictor};
use stvo_core::model::{forward, loss_and_gradients, Clip, ModelConfig, ModelError, ParameterSet};
use stvo_core::training::GradientEngine;
use stvo_core::Real;

/// Splits each batch into contiguous chunks, one per thread, and combines
/// the per-chunk means weighted by chunk size. With one thread it is the
/// serial computation.
#[derive(Debug, Clone, Copy)]
pub struct ThreadedEngine {
    pub threads: usize,
}

impl<T: Real> GradientEngine<T> for ThreadedEngine {
    fn loss_and_gradients(
        &self,
        clips: &[Clip<T>],
        targets: &[T],
        params: &ParameterSet<T>,
        config: &ModelConfig,
    ) -> Result<(T, ParameterSet<T>), ModelError> {
        let n = clips.len();
        let workers = self.threads.clamp(1, n.max(1));
        if workers == 1 {
            return loss_and_gradients(clips, targets, params, config);
        }
        let k = config.output_dim();
        if targets.len() != n * k {
            return loss_and_gradients(clips, targets, params, config);
        }
        let chunk = n.div_ceil(workers);
        let parts: Vec<Result<(T, ParameterSet<T>), ModelError>> = thread::scope(|s| {
            let handles: Vec<_> = clips
                .chunks(chunk)
                .zip(targets.chunks(chunk * k))
                .map(|(c, t)| s.spawn(move || loss_and_gradients(c, t, params, config)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        });
        let mut loss = T::zero();
        let mut grad = params.zeros_like();
        for (part, c) in parts.into_iter().zip(clips.chunks(chunk)) {
            let (l, g) = part?;
            let w = T::from_usize(c.len()) / T::from_usize(n);
            loss = loss + l * w;
            for ((_, acc), (_, gi)) in grad.named_tensors_mut().into_iter().zip(g.named_tensors()) {
                for (a, &b) in acc.data.iter_mut().zip(&gi.data) {
                    *a = *a + b * w;
                }
            }
        }
        Ok((loss, grad))
    }
}

/// Runs clips of a batch on several threads. Per-clip results do not depend
/// on the thread count.
#[derive(Debug, Clone, Copy)]
pub struct ThreadedPredictor<'a> {
    pub params: &'a ParameterSet<f32>,
    pub config: &'a ModelConfig,
    pub threads: usize,
}

impl ThreadedPredictor<'_> {
    fn run(&self, clips: &[Clip<f32>]) -> Result<Vec<Vec<f64>>, ModelError> {
        let out = forward(clips, self.params, self.config)?;
        Ok(out
            .values
            .chunks_exact(self.config.output_dim())
            .map(|c| c.iter().map(|&v| v as f64).collect())
            .collect())
    }
}

impl MotionPredictor for ThreadedPredictor<'_> {
    fn predict(
        &mut self,
        clip: &Clip<f32>,
        _start_frame: usize,
    ) -> Result<Vec<f64>, InferenceError> {
        Ok(self.run(std::slice::from_ref(clip))?.remove(0))
    }

    fn predict_batch(
        &mut self,
        clips: &[Clip<f32>],
        _first_start: usize,
    ) -> Result<Vec<Vec<f64>>, InferenceError> {
        let workers = self.threads.clamp(1, clips.len().max(1));
        let chunk = clips.len().div_ceil(workers).max(1);
        let this = *self;
        let parts: Vec<Result<Vec<Vec<f64>>, ModelError>> = thread::scope(|s| {
            let handles: Vec<_> = clips
                .chunks(chunk)
                .map(|c| s.spawn(move || this.run(c)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("inference worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(clips.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}
