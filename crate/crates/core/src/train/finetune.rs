use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, TargetScale};
use crate::train::metrics::{compute_metrics, MetricsReport};
use crate::train::optim::{clip_grad_norm, Sgd};
use crate::train::workers::Workers;
use crate::train::{mean_gradients, steps_per_epoch};
use crate::SeededRng;

pub const MIN_LABELED: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Epochs without a new best validation R² before stopping.
    pub patience: usize,
    pub freeze_encoder: bool,
    /// Largest joint gradient norm per step; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub threads: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            patience: 20,
            freeze_encoder: false,
            clip_norm: Some(1.0),
            threads: 1,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch size and patience must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "need lr > 0 and momentum in [0, 1), got {} and {}",
                self.lr, self.momentum
            )));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidArgument("clip norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_r2: f64,
    pub val_rmse: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Weights from the epoch with the best validation R².
    pub model: Model<f32>,
    pub best_epoch: usize,
    pub best_val_r2: f64,
    pub history: Vec<FinetuneEpoch>,
    pub stopped_early: bool,
}

/// Predictions in target units, one per patch.
pub fn predict(model: &Model<f32>, data: &Dataset, workers: &Workers) -> Result<Vec<f64>> {
    workers.map(data.patches(), |x| model.predict_target(x))
}

/// Predictions plus metrics against the dataset's targets.
pub fn evaluate_regression(
    model: &Model<f32>,
    data: &Dataset,
    workers: &Workers,
) -> Result<(Vec<f64>, MetricsReport)> {
    let targets = labels(data)?;
    let preds = predict(model, data, workers)?;
    let report = compute_metrics(&preds, &targets)?;
    Ok((preds, report))
}

fn labels(data: &Dataset) -> Result<Vec<f64>> {
    data.targets()
        .map(|t| t.iter().map(|&v| v as f64).collect())
        .ok_or_else(|| Error::InvalidArgument("dataset has no targets".into()))
}

/// Attach a fresh regression head and train end to end (or head only with
/// `freeze_encoder`), keeping the weights with the best validation R².
pub fn finetune(
    mut model: Model<f32>,
    train: &Dataset,
    val: &Dataset,
    cfg: &FinetuneConfig,
    rng: &mut SeededRng,
    on_epoch: &mut dyn FnMut(&FinetuneEpoch),
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let train_targets = labels(train)?;
    labels(val)?;
    let total = train.len() + val.len();
    if total < MIN_LABELED || train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "fine-tuning needs at least {MIN_LABELED} labeled samples split into training and validation, got {} + {}",
            train.len(),
            val.len()
        )));
    }
    let workers = Workers::new(cfg.threads)?;
    model.drop_perm_head();
    let scale = TargetScale::fit(train.targets().expect("checked"));
    model.init_regression_head(scale, rng);
    let encoder = model.encoder_param_names();

    let steps = steps_per_epoch(train.len(), cfg.batch_size);
    let mut opt = Sgd::<f32>::new(cfg.lr, cfg.momentum, steps * cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    // ranked by validation R², then by lower RMSE (which also covers
    // constant targets, where R² is undefined)
    let mut best = (model.clone(), 0usize, (f64::NEG_INFINITY, f64::NEG_INFINITY));
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let lr = opt.lr();
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let per = workers.map(batch, |&i| {
                model.regression_gradients(&train.patches()[i], train_targets[i])
            })?;
            let (loss, mut grads) = mean_gradients(per)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, reason: format!("training loss is {loss}") });
            }
            if cfg.freeze_encoder {
                for name in &encoder {
                    grads.remove(name);
                }
            }
            if let Some(c) = cfg.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            loss_sum += loss * batch.len() as f64;
            opt.apply(&mut model.params, &grads);
        }
        let (_, report) = evaluate_regression(&model, val, &workers).map_err(|e| match e {
            Error::NonFinite { op } => {
                Error::Diverged { epoch, reason: format!("non-finite value in {op}") }
            }
            other => other,
        })?;
        let val_r2 = report.r2_or_zero();
        let record = FinetuneEpoch {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_r2,
            val_rmse: report.rmse,
            lr,
        };
        on_epoch(&record);
        history.push(record);
        let score = (val_r2, -report.rmse);
        if score > best.2 {
            best = (model.clone(), epoch, score);
        } else if epoch - best.1 >= cfg.patience {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    let (model, best_epoch, (best_val_r2, _)) = best;
    Ok(FinetuneOutcome { model, best_epoch, best_val_r2, history, stopped_early })
}
