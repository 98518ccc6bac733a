//! Epoch-based minibatch SGD with step-decay learning rates.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augmentation::{apply_transforms, regime_mask, AugmentationPolicy, ViewKey};
use crate::dataset::{LabeledDataset, StratifiedDataset};
use crate::error::{Error, Result};
use crate::model::{argmax, Model, ModelSpec};
use crate::rng;
use crate::tensor::Tensor;
use crate::tracking::MspTrace;

pub type TrainedModel = Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSchedule {
    pub epochs: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    /// Epochs (1-based) from which the rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainingSchedule {
    /// Desk-scale schedule: 30 epochs, decays at 10 and 20.
    fn default() -> Self {
        Self {
            epochs: 30,
            base_lr: 0.1,
            decay_factor: 0.2,
            decay_epochs: vec![10, 20],
            batch_size: 128,
            seed: 0,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl TrainingSchedule {
    /// 60 epochs at 0.1, dampened by 0.2 at epochs 10, 20 and 30.
    pub fn cifar10(seed: u64) -> Self {
        Self {
            epochs: 60,
            decay_epochs: vec![10, 20, 30],
            seed,
            ..Self::default()
        }
    }

    /// 60 epochs at 0.1, dampened by 0.2 at epochs 40, 50 and 55.
    pub fn cifar100(seed: u64) -> Self {
        Self {
            epochs: 60,
            decay_epochs: vec![40, 50, 55],
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("base_lr must be finite and >= 0, got {}", self.base_lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::config(format!(
                "decay_factor must lie in (0, 1), got {}",
                self.decay_factor
            )));
        }
        if !self.decay_epochs.windows(2).all(|w| w[0] < w[1])
            || self.decay_epochs.iter().any(|&e| e == 0 || e > self.epochs)
        {
            return Err(Error::config(format!(
                "decay_epochs must be strictly ascending within [1, {}], got {:?}",
                self.epochs, self.decay_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::config("momentum must lie in [0, 1) and weight_decay be >= 0"));
        }
        Ok(())
    }
}

/// `base_lr × decay_factor^k`, where `k` counts decay epochs `<= epoch`.
pub fn learning_rate(schedule: &TrainingSchedule, epoch: usize) -> Result<f64> {
    if epoch == 0 || epoch > schedule.epochs {
        return Err(Error::contract(format!(
            "epoch {epoch} outside 1..={}",
            schedule.epochs
        )));
    }
    let k = schedule.decay_epochs.iter().filter(|&&d| d <= epoch).count();
    Ok(schedule.base_lr * schedule.decay_factor.powi(k as i32))
}

/// Trains a fresh model from `spec`, recording MSPs into `tracker` after
/// every epoch. On divergence the tracker keeps the epochs completed so far.
pub fn train(
    dataset: &StratifiedDataset,
    spec: &ModelSpec,
    schedule: &TrainingSchedule,
    policy: &AugmentationPolicy,
    tracker: &mut MspTrace,
) -> Result<TrainedModel> {
    schedule.validate()?;
    policy.validate()?;
    if dataset.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    if let Some((i, _)) = dataset.examples.iter().enumerate().find(|(i, e)| e.id != *i) {
        return Err(Error::contract(format!("example at position {i} does not carry id {i}")));
    }
    if tracker.len() != dataset.len() {
        return Err(Error::contract("tracker does not match the dataset"));
    }
    let mut model = Model::new(spec.clone())?;
    let mut velocity: Vec<Vec<f64>> = model
        .params
        .iter()
        .map(|p| vec![0.0; p.value.numel()])
        .collect();
    let n = dataset.len();

    for epoch in 1..=schedule.epochs {
        let lr = learning_rate(schedule, epoch)?;
        let previous = tracker.last_table();
        let mask = regime_mask(policy, epoch, previous.as_deref(), n)?;

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(schedule.seed, "batch-order", &[epoch as u64]));

        for (batch_index, ids) in order.chunks(schedule.batch_size).enumerate() {
            let views: Vec<Tensor> = ids
                .iter()
                .filter(|&&id| mask[id])
                .map(|&id| {
                    let key = ViewKey {
                        seed: schedule.seed,
                        epoch,
                        example_id: id,
                    };
                    apply_transforms(&dataset.examples[id].features, &policy.transforms, key)
                })
                .collect::<Result<_>>()?;
            let mut augmented = views.iter();
            let inputs: Vec<&Tensor> = ids
                .iter()
                .map(|&id| {
                    if mask[id] {
                        augmented.next().expect("one view per masked id")
                    } else {
                        &dataset.examples[id].features
                    }
                })
                .collect();
            let labels: Vec<usize> = ids.iter().map(|&id| dataset.examples[id].assigned_label).collect();

            let (loss, grads) = model.loss_and_gradients(&inputs, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_index + 1,
                    loss,
                });
            }
            sgd_step(&mut model, &grads, &mut velocity, lr, schedule);
        }
        tracker.record(&model, dataset, epoch)?;
    }
    Ok(model)
}

fn sgd_step(
    model: &mut Model,
    grads: &[Vec<f64>],
    velocity: &mut [Vec<f64>],
    lr: f64,
    schedule: &TrainingSchedule,
) {
    for ((param, grad), vel) in model.params.iter_mut().zip(grads).zip(velocity) {
        for ((w, &g), v) in param.value.data_mut().iter_mut().zip(grad).zip(vel.iter_mut()) {
            let g = g + schedule.weight_decay * *w;
            *v = schedule.momentum * *v + g;
            *w -= lr * *v;
        }
    }
}

/// Top-1 accuracy, argmax ties resolved to the lowest class index.
pub fn evaluate(model: &Model, test_set: &LabeledDataset) -> Result<f64> {
    if test_set.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (xs, ys) in test_set.features.chunks(256).zip(test_set.labels.chunks(256)) {
        let batch: Vec<&Tensor> = xs.iter().collect();
        let logits = model.logits(&batch)?;
        let classes = logits.shape()[1];
        correct += logits
            .data()
            .chunks_exact(classes)
            .zip(ys)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
    }
    Ok(correct as f64 / test_set.len() as f64)
}
