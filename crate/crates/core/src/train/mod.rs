//! Training loop, optimizer, evaluation metrics and run statistics.

mod metrics;
mod optim;
mod stats;

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use metrics::{roc_auc, ClassCounts, MetricsReport};
pub use optim::AdamW;
pub use stats::{confidence_interval, t_test, t_two_sided_p, T_95_DF4};

use crate::config::KeyValues;
use crate::data::EcgRecord;
use crate::error::{Error, Result};
use crate::model::{batch_tensor, Mode, ModelConfig, S2m2Ecg};
use crate::numerics::{Backend, Graph, ParamId, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Epochs without a validation-F1 improvement before stopping; 0 never
    /// stops early.
    pub patience: usize,
    /// Also score the training split each epoch (eval mode).
    pub track_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            seed: 0,
            patience: 0,
            track_train: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 for batch norm".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be finite and non-negative", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay {} must be finite and non-negative", self.weight_decay)));
        }
        Ok(())
    }

    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        let d = self.clone();
        self.epochs = kv.take_or("epochs", d.epochs)?;
        self.batch_size = kv.take_or("batch_size", d.batch_size)?;
        self.learning_rate = kv.take_or("learning_rate", d.learning_rate)?;
        self.weight_decay = kv.take_or("weight_decay", d.weight_decay)?;
        self.seed = kv.take_or("seed", d.seed)?;
        self.patience = kv.take_or("patience", d.patience)?;
        self.track_train = kv.take_or("track_train", crate::config::Switch(d.track_train))?.0;
        Ok(())
    }
}

/// One line of training history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub train_accuracy: Option<f64>,
    pub val: MetricsReport,
    pub seconds: f64,
}

impl fmt::Display for EpochRecord {
    /// logfmt: `epoch loss [train_acc] val_acc val_f1 val_auc seconds`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} loss={:.6}", self.epoch, self.loss)?;
        if let Some(a) = self.train_accuracy {
            write!(f, " train_acc={a:.6}")?;
        }
        write!(
            f,
            " val_acc={:.6} val_f1={:.6} val_auc={:.6} seconds={:.3}",
            self.val.accuracy, self.val.f1, self.val.auc, self.seconds
        )
    }
}

/// Mini-batch index lists for one epoch; a trailing batch of one joins the
/// previous batch so batch norm always sees two samples.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("checked non-empty");
        batches.last_mut().expect("at least one batch left").extend(last);
    }
    batches
}

/// Class probabilities for `records` in eval mode, `[records, classes]`.
pub fn predict(model: &S2m2Ecg, records: &[EcgRecord]) -> Result<Tensor> {
    const CHUNK: usize = 64;
    let classes = model.config().classes;
    let mut data = Vec::with_capacity(records.len() * classes);
    for chunk in records.chunks(CHUNK) {
        let refs: Vec<&EcgRecord> = chunk.iter().collect();
        data.extend_from_slice(model.predict_proba(&refs)?.data());
    }
    Tensor::new(vec![records.len(), classes], data)
}

pub fn evaluate(model: &S2m2Ecg, records: &[EcgRecord]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let probs = predict(model, records)?;
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    MetricsReport::from_scores(probs.data(), &labels, model.config().classes)
}

/// Stateful training run that advances one epoch at a time and keeps the
/// checkpoint with the best validation macro-F1.
pub struct Trainer {
    model: S2m2Ecg,
    config: TrainConfig,
    optimizer: AdamW,
    rng: ChaCha8Rng,
    best: Option<(f64, usize, S2m2Ecg)>,
    history: Vec<EpochRecord>,
}

/// Result of a finished run.
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation macro-F1.
    pub model: S2m2Ecg,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = S2m2Ecg::new(model_config, config.seed)?;
        Ok(Self::from_model(model, config))
    }

    /// Continues from existing weights.
    pub fn from_model(model: S2m2Ecg, config: TrainConfig) -> Self {
        Self {
            optimizer: AdamW::new(config.learning_rate, config.weight_decay),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e),
            model,
            config,
            best: None,
            history: Vec::new(),
        }
    }

    pub fn model(&self) -> &S2m2Ecg {
        &self.model
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// One gradient step on `batch`; returns the batch loss.
    pub fn step(&mut self, batch: &[&EcgRecord]) -> Result<f64> {
        let input = batch_tensor(batch)?;
        let labels: Vec<usize> = batch.iter().map(|r| r.label).collect();
        let mut g = Graph::new();
        let out = self.model.forward(&mut g, &input, Mode::Train)?;
        let loss = g.cross_entropy(&out.logits, &labels)?;
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss)?;
        let updates: Vec<(ParamId, Tensor)> = g.bound_params().map(|(id, v)| (id, grads.get_or_zeros(v))).collect();
        self.optimizer.step(self.model.params_mut(), &updates);
        if let Some(stats) = &out.batch_stats {
            self.model.running_stats_mut().update(stats);
        }
        Ok(value)
    }

    pub fn run_epoch(&mut self, train: &[EcgRecord], val: &[EcgRecord]) -> Result<&EpochRecord> {
        if train.len() < 2 {
            return Err(Error::InvalidArgument(format!("training split has {} records, need 2", train.len())));
        }
        if val.is_empty() {
            return Err(Error::InvalidArgument("validation split is empty".into()));
        }
        let start = Instant::now();
        let mut total = 0.0;
        let batches = epoch_batches(train.len(), self.config.batch_size, &mut self.rng);
        for idx in &batches {
            let batch: Vec<&EcgRecord> = idx.iter().map(|&i| &train[i]).collect();
            total += self.step(&batch)? * batch.len() as f64;
        }
        let train_accuracy = if self.config.track_train {
            Some(evaluate(&self.model, train)?.accuracy)
        } else {
            None
        };
        let report = evaluate(&self.model, val)?;
        let epoch = self.history.len() + 1;
        if self.best.as_ref().is_none_or(|(f1, _, _)| report.f1 > *f1) {
            self.best = Some((report.f1, epoch, self.model.clone()));
        }
        self.history.push(EpochRecord {
            epoch,
            loss: total / train.len() as f64,
            train_accuracy,
            val: report,
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Epochs since the best validation F1.
    pub fn epochs_since_best(&self) -> usize {
        self.best.as_ref().map_or(0, |(_, e, _)| self.history.len() - e)
    }

    pub fn finish(self) -> TrainOutcome {
        let (model, best_epoch) = match self.best {
            Some((_, e, m)) => (m, e),
            None => (self.model, 0),
        };
        TrainOutcome {
            model,
            best_epoch,
            history: self.history,
        }
    }
}

/// Full run: `epochs` epochs, stopping early after `patience` epochs
/// without validation improvement. `on_epoch` sees each history line.
pub fn train(
    train: &[EcgRecord],
    val: &[EcgRecord],
    model_config: ModelConfig,
    config: TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let epochs = config.epochs;
    let patience = config.patience;
    let mut trainer = Trainer::new(model_config, config)?;
    for _ in 0..epochs {
        on_epoch(trainer.run_epoch(train, val)?);
        if patience > 0 && trainer.epochs_since_best() >= patience {
            break;
        }
    }
    Ok(trainer.finish())
}
