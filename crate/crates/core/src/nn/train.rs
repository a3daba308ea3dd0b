use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::Model;
use super::optim::{lr_schedule, sgd_step};
use crate::dataset::{DatasetSplit, Label, Sample};
use crate::error::{Error, Result};
use crate::imaging::{augment, AugmentationConfig};
use crate::rng::{seeded, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Applied to each training patch as it is batched.
    pub augmentation: Option<AugmentationConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_start: 1e-3,
            lr_end: 5e-4,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            augmentation: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Protocol(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if !(self.lr_end <= self.lr_start && self.lr_end >= 0.0) {
            return bad(format!("need 0 <= lr_end <= lr_start, got {} and {}", self.lr_end, self.lr_start));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must be in [0, 1) and weight_decay >= 0".into());
        }
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the returned weights.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once validation accuracy has failed to beat the best value for
/// `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
    seen: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
            seen: 0,
        }
    }

    pub fn observe(&mut self, validation_accuracy: f64) -> StopDecision {
        let epoch = self.seen;
        self.seen += 1;
        if self.best.is_none_or(|b| validation_accuracy > b) {
            self.best = Some(validation_accuracy);
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Fraction of samples whose argmax prediction matches the label.
/// Predictions run in parallel; the count is order-independent.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Protocol("cannot evaluate on an empty set".into()));
    }
    let correct = samples
        .par_iter()
        .map(|s| Ok::<_, Error>(usize::from(model.predict(&s.patch)? == s.label)))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(correct as f64 / samples.len() as f64)
}

/// Mini-batch gradient steps over `samples` in a fresh shuffled order.
/// Returns mean loss and accuracy over the epoch.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_epoch(
    model: &mut Model,
    samples: &[Sample],
    batch_size: usize,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    augmentation: Option<&AugmentationConfig>,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let (mut loss_sum, mut correct) = (0.0, 0);
    for chunk in order.chunks(batch_size) {
        let batch: Vec<(Vec<f64>, Label)> = chunk
            .iter()
            .map(|&i| {
                let s = &samples[i];
                let patch = match augmentation {
                    Some(cfg) => augment(&s.patch, cfg, rng).to_f64(),
                    None => s.patch.to_f64(),
                };
                (patch, s.label)
            })
            .collect();
        let (loss, grads, c) = model.loss_and_gradients(&batch)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss became {loss}")));
        }
        sgd_step(model, &grads, lr, momentum, weight_decay)?;
        loss_sum += loss * batch.len() as f64;
        correct += c;
    }
    let n = samples.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Trains until validation accuracy stalls for `patience` epochs or
/// `max_epochs` is reached, and returns the weights of the best validation
/// epoch. Single-threaded apart from validation inference; identical
/// inputs and seed reproduce the history bit for bit.
pub fn train(model: Model, split: &DatasetSplit, cfg: &TrainConfig) -> Result<(Model, History)> {
    train_with_observer(model, split, cfg, |_| {})
}

/// [`train`] with a callback after each epoch, for progress logging.
pub fn train_with_observer(
    mut model: Model,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, History)> {
    cfg.validate()?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::Protocol(format!(
            "training needs samples in train ({}) and validation ({})",
            split.train.len(),
            split.validation.len()
        )));
    }
    let mut rng = seeded(cfg.seed);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut history = History::default();
    for epoch in 0..cfg.max_epochs {
        let lr = lr_schedule(epoch, cfg.max_epochs, cfg.lr_start, cfg.lr_end);
        let (train_loss, train_accuracy) = run_epoch(
            &mut model,
            &split.train,
            cfg.batch_size,
            lr,
            cfg.momentum,
            cfg.weight_decay,
            cfg.augmentation.as_ref(),
            &mut rng,
        )?;
        let validation_accuracy = evaluate(&model, &split.validation)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            train_accuracy,
            validation_accuracy,
        };
        on_epoch(&record);
        history.epochs.push(record);
        match stopper.observe(validation_accuracy) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.best_epoch = stopper.best_epoch();
    Ok((best, history))
}
