//! Training loop, evaluation and optimiser state.

use rand::seq::SliceRandom;

use super::config::NetworkConfig;
use super::layers::Batch;
use super::metrics::{cross_entropy, Confusion};
use super::model::{argmax_rows, Mode, Network};
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::rng::{indexed_seed, rng_for};
use crate::spatial::PointCloud;

/// Everything that changes during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub net: Network,
    pub adam: Adam,
    pub seed: u64,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let net = Network::new(config, seed)?;
        let adam = Adam::new(config.learning_rate, net.param_count());
        Ok(TrainState {
            net,
            adam,
            seed,
            epoch: 0,
        })
    }

    /// One Adam step on the mean cross-entropy of `batch`. Returns the loss
    /// before the update. A batch whose labels are all ignored is rejected
    /// without touching the state.
    pub fn train_step(&mut self, batch: &[PointCloud]) -> Result<f64> {
        let labels = batch_labels(batch)?;
        let ignore = self.net.config.ignore_label;
        if labels.iter().all(|l| l.iter().all(|&v| Some(v) == ignore)) {
            return Err(Error::AllIgnored);
        }
        let dropout_seed = indexed_seed(self.seed, "dropout", self.adam.step);
        let fwd = self.net.forward(batch, Mode::Train, dropout_seed)?;
        let (loss, dlogits) = cross_entropy(&fwd.logits, &labels, ignore)?;
        let grads = self.net.backward(&fwd, &dlogits)?.flat();
        self.adam
            .update(self.net.tensors_mut().into_iter().map(|t| t.data), &grads)?;
        Ok(loss)
    }
}

pub(crate) fn batch_labels(batch: &[PointCloud]) -> Result<Vec<&[u32]>> {
    batch
        .iter()
        .map(|c| c.labels.as_deref().ok_or(Error::MissingLabels))
        .collect()
}

/// Loss of `batch` in train mode without updating anything.
pub fn batch_loss(net: &Network, batch: &[PointCloud], dropout_seed: u64) -> Result<(f64, Batch)> {
    let mut net = net.clone();
    let fwd = net.forward(batch, Mode::Train, dropout_seed)?;
    let labels = batch_labels(batch)?;
    cross_entropy(&fwd.logits, &labels, net.config.ignore_label)
}

/// Eval-mode confusion counts over `scenes`.
pub fn evaluate(net: &mut Network, scenes: &[PointCloud]) -> Result<Confusion> {
    let mut conf = Confusion::new(net.config.n_classes, net.config.ignore_label);
    let chunk = net.config.batch_size.max(1);
    for group in scenes.chunks(chunk) {
        // eval mode uses running statistics, so items do not interact
        let fwd = net.forward(group, Mode::Eval, 0)?;
        for (logits, scene) in fwd.logits.iter().zip(group) {
            let labels = scene.labels.as_deref().ok_or(Error::MissingLabels)?;
            conf.add(&argmax_rows(logits.view()), labels)?;
        }
    }
    Ok(conf)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Stop after the first epoch whose validation accuracy and mIoU both
    /// reach these values.
    pub early_stop: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
    pub validation: Option<Confusion>,
}

/// Train for `options.epochs` epochs, shuffling with a per-epoch stream and
/// evaluating on `validation` after each epoch when it is non-empty.
pub fn train(
    state: &mut TrainState,
    scenes: &[PointCloud],
    validation: &[PointCloud],
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    if scenes.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let batch = state.net.config.batch_size.max(1);
    let mut history = Vec::new();
    for _ in 0..options.epochs {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut rng_for(indexed_seed(state.seed, "shuffle", state.epoch as u64), "order"));
        let mut total = 0.0;
        let mut steps = 0;
        for idx in order.chunks(batch) {
            let items: Vec<PointCloud> = idx.iter().map(|&i| scenes[i].clone()).collect();
            match state.train_step(&items) {
                Ok(loss) => {
                    total += loss;
                    steps += 1;
                }
                Err(Error::AllIgnored) => continue,
                Err(e) => return Err(e),
            }
        }
        state.epoch += 1;
        let validation = if validation.is_empty() {
            None
        } else {
            Some(evaluate(&mut state.net, validation)?)
        };
        let record = EpochRecord {
            epoch: state.epoch,
            mean_loss: if steps > 0 { total / steps as f64 } else { f64::NAN },
            steps,
            validation,
        };
        on_epoch(&record);
        let done = match (&record.validation, options.early_stop) {
            (Some(v), Some((acc, miou))) => v.accuracy() >= acc && v.miou() >= miou,
            _ => false,
        };
        history.push(record);
        if done {
            break;
        }
    }
    Ok(history)
}
