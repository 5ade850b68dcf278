use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::schedule::LrSchedule;
use crate::autograd::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{model_forward, DrGazeModel, ModelConfig};
use crate::tensor::{Element, Precision};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            batch_size: 32,
            epochs: 60,
            seed: 0,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.schedule.base > 0.0) || !(self.schedule.gamma > 0.0) {
            return Err(Error::Config("learning rate and gamma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean pixel L1 over the epoch's batches.
    pub train_l1: f64,
    /// Pixel L1 of the end-of-epoch model on the validation set.
    pub val_l1: Option<f64>,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_l1,val_l1";

    /// `epoch,lr,train_l1,val_l1`; values print in shortest round-trip form.
    pub fn csv_line(&self) -> String {
        let val = self.val_l1.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.epoch, self.lr, self.train_l1, val)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: DrGazeModel<T>,
    /// Model from the epoch with the lowest validation L1 (train L1 when no
    /// validation set is given); earliest epoch wins ties.
    pub best: DrGazeModel<T>,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
    pub steps: u64,
}

/// Sample order for `epoch`: Fisher–Yates shuffle from a stream derived from
/// the run seed and the epoch index.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Sum of absolute pixel residuals between scaled network output and targets.
fn pixel_abs_sum<T: Element>(raw: &[T], data: &Dataset<T>, indices: &[usize], scale: [f64; 2]) -> f64 {
    indices
        .iter()
        .zip(raw.chunks_exact(2))
        .map(|(&i, out)| {
            let t = data.targets[i];
            (out[0].as_f64() * scale[0] - t[0]).abs() + (out[1].as_f64() * scale[1] - t[1]).abs()
        })
        .sum()
}

/// Mean pixel L1 of `model` over `data`, residuals accumulated in sample order.
pub fn evaluate<T: Element>(model: &DrGazeModel<T>, data: &Dataset<T>, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scale = model.config.output_scale();
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk, scale)?;
        let raw = model.forward_raw(&batch.eye, &batch.features)?;
        total += pixel_abs_sum(raw.data(), data, chunk, scale);
    }
    Ok(total / (2 * data.len()) as f64)
}

/// Predictions in pixels for every sample, in order.
pub fn predict_all<T: Element>(model: &DrGazeModel<T>, data: &Dataset<T>, batch_size: usize) -> Result<Vec<[f64; 2]>> {
    let scale = model.config.output_scale();
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk, scale)?;
        let pred = model.predict(&batch.eye, &batch.features)?;
        out.extend(pred.data().chunks_exact(2).map(|r| [r[0].as_f64(), r[1].as_f64()]));
    }
    Ok(out)
}

/// One optimizer step on the samples at `indices`; returns the batch loss
/// and the sum of absolute pixel residuals.
fn train_step<T: Element>(
    model: &mut DrGazeModel<T>,
    state: &mut AdamState<T>,
    data: &Dataset<T>,
    indices: &[usize],
    lr: f64,
) -> Result<(f64, f64)> {
    let scale = model.config.output_scale();
    let batch = data.batch(indices, scale)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let eye = tape.leaf(batch.eye);
    let features = tape.leaf(batch.features);
    let truth = tape.leaf(batch.targets);
    let pred = model_forward(&mut tape, &model.config, &vars, eye, features)?;
    let loss = tape.l1_loss(pred, truth)?;
    let loss_value = tape.value(loss).item().as_f64();
    let abs_sum = pixel_abs_sum(tape.value(pred).data(), data, indices, scale);
    if !loss_value.is_finite() {
        return Ok((loss_value, abs_sum));
    }
    let grads = tape.backward(loss)?;
    let grad_tensors: Vec<_> = vars
        .values()
        .into_iter()
        .map(|&v| grads.wrt(v, tape.shape(v)))
        .collect();
    let grad_refs: Vec<_> = grad_tensors.iter().collect();
    let mut params = model.params.values_mut();
    adam_step(&mut params, &grad_refs, state, lr)?;
    Ok((loss_value, abs_sum))
}

/// Train a freshly initialized model. `on_epoch` sees each epoch's metrics
/// as soon as they are available.
pub fn train_loop<T: Element>(
    config: &TrainConfig,
    train: &Dataset<T>,
    val: Option<&Dataset<T>>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let val = val.filter(|v| !v.is_empty());
    let mut model = DrGazeModel::<T>::init(config.model, config.seed)?;
    let mut state = AdamState::new(config.adam, model.params.values());
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, 0usize, model.clone());

    for epoch in 0..config.epochs {
        let lr = config.schedule.lr_at_epoch(epoch);
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut abs_total = 0.0;
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let (loss, abs_sum) = train_step(&mut model, &mut state, train, chunk, lr)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_index,
                });
            }
            abs_total += abs_sum;
        }
        let train_l1 = abs_total / (2 * train.len()) as f64;
        let val_l1 = val.map(|v| evaluate(&model, v, config.batch_size)).transpose()?;
        let m = EpochMetrics {
            epoch,
            lr,
            train_l1,
            val_l1,
        };
        let score = val_l1.unwrap_or(train_l1);
        if score < best.0 {
            best = (score, epoch, model.clone());
        }
        on_epoch(&m);
        metrics.push(m);
    }
    Ok(TrainOutcome {
        model,
        best: best.2,
        best_epoch: best.1,
        metrics,
        steps: state.t,
    })
}
