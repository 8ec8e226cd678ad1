use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::curriculum::{CurriculumState, PhaseTransition, SamplerCache, Schedule, PHASES};
use crate::data::{apply_permutation, Dataset, MAX_SEGMENTS, MIN_SEGMENTS};
use crate::error::{Error, Result};
use crate::model::{Model, Params};
use crate::permutation::{uniform_sample, Permutation};
use crate::train::optim::Sgd;
use crate::train::pretext::{evaluate_pretext, PretextSet};
use crate::train::workers::Workers;
use crate::train::{mean_gradients, steps_per_epoch};
use crate::SeededRng;

/// How permutations are drawn during pretraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PretextMode {
    /// Start at three segments, advance on validation accuracy, draw
    /// permutations with a rising temperature.
    Curriculum { thresholds: [f64; PHASES], schedule: Schedule },
    /// Fixed segment count with uniform permutations.
    Direct { n: usize },
}

impl Default for PretextMode {
    fn default() -> Self {
        Self::Curriculum { thresholds: [0.99; PHASES], schedule: Schedule::default() }
    }
}

/// Finish early once validation exact-match reaches `exact_acc` while
/// training on `phase_n` segments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub phase_n: usize,
    pub exact_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub threads: usize,
    /// Seeds the fixed validation permutations.
    pub val_seed: u64,
    pub mode: PretextMode,
    pub stop: Option<StopRule>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            threads: 1,
            val_seed: 0,
            mode: PretextMode::default(),
            stop: None,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "need lr > 0 and momentum in [0, 1), got {} and {}",
                self.lr, self.momentum
            )));
        }
        match &self.mode {
            PretextMode::Direct { n } if !(MIN_SEGMENTS..=MAX_SEGMENTS).contains(n) => {
                Err(Error::InvalidArgument(format!("segment count {n} is outside [3, 8]")))
            }
            PretextMode::Curriculum { thresholds, schedule } => {
                CurriculumState::new(*thresholds)?;
                Schedule::new(schedule.t_min, schedule.t_max, schedule.phase_length_hint)?;
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// One line of the epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase_n: usize,
    pub temperature: Option<f64>,
    pub train_loss: f64,
    pub val_exact_acc: f64,
    pub val_seg_acc: f64,
    pub lr: f64,
}

pub enum PretrainEvent<'a> {
    Epoch(&'a EpochLog),
    Transition(&'a PhaseTransition),
}

#[derive(Debug)]
pub struct PretrainOutcome {
    /// The last model whose epoch completed with finite values.
    pub model: Model<f32>,
    pub logs: Vec<EpochLog>,
    pub transitions: Vec<PhaseTransition>,
    pub curriculum: Option<CurriculumState>,
    /// Set when training stopped on a non-finite value.
    pub diverged: Option<Error>,
    pub stopped_early: bool,
}

impl PretrainOutcome {
    pub fn epochs_run(&self) -> usize {
        self.logs.len()
    }

    pub fn final_phase(&self) -> usize {
        self.logs.last().map(|l| l.phase_n).unwrap_or(MIN_SEGMENTS)
    }
}

/// Self-supervised permutation pretraining of `model` on `train`, with
/// accuracy measured on uniformly shuffled copies of `val`.
pub fn pretrain(
    mut model: Model<f32>,
    train: &Dataset,
    val: &Dataset,
    cfg: &PretrainConfig,
    rng: &mut SeededRng,
    on_event: &mut dyn FnMut(PretrainEvent<'_>),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("pretraining needs training and validation data".into()));
    }
    let workers = Workers::new(cfg.threads)?;
    let steps = steps_per_epoch(train.len(), cfg.batch_size);
    let mut opt = Sgd::<f32>::new(cfg.lr, cfg.momentum, steps * cfg.epochs);
    let (mut curriculum, schedule) = match &cfg.mode {
        PretextMode::Curriculum { thresholds, schedule } => {
            (Some(CurriculumState::new(*thresholds)?), Some(*schedule))
        }
        PretextMode::Direct { .. } => (None, None),
    };
    let mut samplers = SamplerCache::default();
    let mut val_sets: Vec<Option<PretextSet>> = vec![None; MAX_SEGMENTS + 1];
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut out = PretrainOutcome {
        model: model.clone(),
        logs: vec![],
        transitions: vec![],
        curriculum: curriculum.clone(),
        diverged: None,
        stopped_early: false,
    };

    for epoch in 1..=cfg.epochs {
        let (n, temperature) = match (&cfg.mode, &curriculum, &schedule) {
            (PretextMode::Direct { n }, _, _) => (*n, None),
            (_, Some(c), Some(s)) => (c.current_n(), Some(c.temperature(s))),
            _ => unreachable!("curriculum state exists in curriculum mode"),
        };
        if model.perm_segments() != Some(n) {
            model.init_perm_head(n, rng);
            opt.forget("perm.");
        }
        let sampler = match temperature {
            Some(t) => Some(samplers.sampler(n, t)?),
            None => None,
        };

        let lr = opt.lr();
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut failure = None;
        for batch in order.chunks(cfg.batch_size) {
            let perms: Vec<Permutation> = batch
                .iter()
                .map(|_| match &sampler {
                    Some(s) => s.sample(rng),
                    None => uniform_sample(n, rng),
                })
                .collect();
            let items: Vec<(usize, &Permutation)> = batch.iter().copied().zip(&perms).collect();
            let result = workers.map(&items, |&(i, p)| {
                let shuffled = apply_permutation(&train.patches()[i], p)?;
                model.pretext_gradients(&shuffled, &p.inverse())
            });
            match result.and_then(|g| checked_mean(g, epoch)) {
                Ok((loss, grads)) => {
                    loss_sum += loss * batch.len() as f64;
                    opt.apply(&mut model.params, &grads);
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        if failure.is_none() && !model.params.is_finite() {
            failure = Some(Error::Diverged { epoch, reason: "non-finite parameters".into() });
        }
        if let Some(e) = failure {
            out.diverged = Some(as_divergence(e, epoch)?);
            return Ok(out);
        }

        if val_sets[n].is_none() {
            let mut vrng = SeededRng::seed_from_u64(cfg.val_seed ^ (0x9e37_79b9 * n as u64));
            val_sets[n] = Some(PretextSet::uniform(val.patches(), n, &mut vrng)?);
        }
        let val_set = val_sets[n].as_ref().expect("built above");
        let (exact, seg) = match evaluate_pretext(&model, val_set, &workers) {
            Ok(acc) => acc,
            Err(e) => {
                out.diverged = Some(as_divergence(e, epoch)?);
                return Ok(out);
            }
        };

        let log = EpochLog {
            epoch,
            phase_n: n,
            temperature,
            train_loss: loss_sum / train.len() as f64,
            val_exact_acc: exact,
            val_seg_acc: seg,
            lr,
        };
        on_event(PretrainEvent::Epoch(&log));
        out.logs.push(log);

        if let (Some(c), Some(s)) = (&mut curriculum, &schedule) {
            if let Some(mut t) = c.update(exact, s)? {
                t.epoch = epoch;
                on_event(PretrainEvent::Transition(&t));
                out.transitions.push(t);
            }
        }
        out.model = model.clone();
        out.curriculum = curriculum.clone();

        if let Some(rule) = cfg.stop {
            if n == rule.phase_n && exact >= rule.exact_acc {
                out.stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    Ok(out)
}

fn checked_mean(per_sample: Vec<(f64, Params<f32>)>, epoch: usize) -> Result<(f64, Params<f32>)> {
    let (loss, grads) = mean_gradients(per_sample)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Diverged { epoch, reason: format!("training loss is {loss}") });
    }
    Ok((loss, grads))
}

/// Numeric failures end training gracefully; anything else is a real error.
fn as_divergence(e: Error, epoch: usize) -> Result<Error> {
    match e {
        Error::Diverged { .. } => Ok(e),
        Error::NonFinite { op } => {
            Ok(Error::Diverged { epoch, reason: format!("non-finite value in {op}") })
        }
        other => Err(other),
    }
}
