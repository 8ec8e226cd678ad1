//! Optimization loops, evaluation and checkpoints.

mod checkpoint;
mod finetune;
mod metrics;
mod optim;
mod pretext;
mod pretrain;
mod workers;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointMeta, ParamEntry, RngState, META_FILE, PARAMS_DIR,
};
pub use finetune::{
    evaluate_regression, finetune, predict, FinetuneConfig, FinetuneEpoch, FinetuneOutcome,
    MIN_LABELED,
};
pub use metrics::{compute_metrics, MetricsReport, EXCELLENT_RPD};
pub use optim::{clip_grad_norm, cosine_lr, Sgd};
pub use pretext::{evaluate_pretext, pretext_accuracy, PretextSet};
pub use pretrain::{
    pretrain, EpochLog, PretextMode, PretrainConfig, PretrainEvent, PretrainOutcome, StopRule,
};
pub use workers::{threads_from_env, Workers, THREADS_ENV};

use crate::error::{Error, Result};
use crate::model::Params;
use crate::scalar::Scalar;

pub(crate) fn steps_per_epoch(samples: usize, batch: usize) -> usize {
    samples.div_ceil(batch.max(1))
}

/// Average per-sample losses and gradients, summing in input order.
pub fn mean_gradients<T: Scalar>(per_sample: Vec<(f64, Params<T>)>) -> Result<(f64, Params<T>)> {
    let n = per_sample.len();
    let mut iter = per_sample.into_iter();
    let (mut loss, mut total) =
        iter.next().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    for (l, g) in iter {
        loss += l;
        total.axpy(T::one(), &g);
    }
    let inv = T::one() / T::of(n as f64);
    for (_, g) in total.iter_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    Ok((loss / n as f64, total))
}
