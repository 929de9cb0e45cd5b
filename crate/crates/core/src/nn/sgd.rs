//! Plain mini-batch SGD and the seeded epoch loop every model trains with.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::param::Param;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 300,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Argument(format!(
                "learning rate must be a non-negative finite number, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// `value ← value − lr·grad`, then clears the gradient.
pub fn sgd_step<'a>(params: impl IntoIterator<Item = &'a mut Param>, learning_rate: f64) {
    for p in params {
        for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *v -= learning_rate * g;
        }
        p.zero_grad();
    }
}

/// Which phase of training an epoch belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Single-stage training of a spectral model.
    Train,
    /// Per-band convolutional pretraining.
    Pretrain,
    /// Recurrent layers trained on frozen convolutional features.
    Rnn,
    /// Joint fine-tuning of the whole network.
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Train => "train",
            Stage::Pretrain => "pretrain",
            Stage::Rnn => "rnn",
            Stage::Finetune => "finetune",
        }
    }

    fn stream_base(self) -> u64 {
        (self as u64) << 32
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stage: Stage,
    /// 1-based within the stage.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of samples classified correctly by the forward passes of
    /// this epoch, i.e. before each batch's update.
    pub train_oa: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn extend(&mut self, other: TrainingLog) {
        self.epochs.extend(other.epochs);
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "stage,epoch,mean_loss,train_oa")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{:.12e},{:.6}", e.stage, e.epoch, e.mean_loss, e.train_oa)?;
        }
        Ok(())
    }
}

/// Outcome of a forward/backward pass on one sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleOutcome {
    pub loss: f64,
    pub correct: bool,
}

/// A model that can accumulate the gradient of its loss on one sample.
pub trait Objective<S> {
    /// Forward + backward on `sample`, adding `scale × ∇loss` into the
    /// gradient accumulators.
    fn accumulate(&mut self, sample: &S, scale: f64) -> Result<SampleOutcome>;

    /// Parameters the optimizer updates.
    fn trainable(&mut self) -> Vec<&mut Param>;
}

/// Seeded mini-batch loop: per epoch, shuffle with a generator derived from
/// `(seed, stage, epoch)`, then for each batch zero the gradients,
/// accumulate the batch-mean gradient and take one SGD step.
pub fn fit<S, M: Objective<S>>(model: &mut M, samples: &[S], cfg: &SgdConfig, stage: Stage) -> Result<TrainingLog> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainingLog::default();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stage.stream_base() | epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            for p in model.trainable() {
                p.zero_grad();
            }
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let out = model.accumulate(&samples[i], scale)?;
                total_loss += out.loss;
                correct += usize::from(out.correct);
            }
            sgd_step(model.trainable(), cfg.learning_rate);
        }
        log.epochs.push(EpochRecord {
            stage,
            epoch: epoch + 1,
            mean_loss: total_loss / samples.len() as f64,
            train_oa: correct as f64 / samples.len() as f64,
        });
    }
    Ok(log)
}
