use rand::Rng;

use crate::data::{apply_permutation, Patch};
use crate::error::{Error, Result};
use crate::model::{argmax_decode, Model};
use crate::permutation::{uniform_sample, BoltzmannSampler, Permutation};
use crate::scalar::Scalar;
use crate::train::workers::Workers;

/// Shuffled patches with the permutation that restores each one.
#[derive(Clone, Debug)]
pub struct PretextSet {
    pub n: usize,
    pub shuffled: Vec<Patch>,
    pub inverses: Vec<Permutation>,
}

impl PretextSet {
    pub fn from_perms(patches: &[Patch], perms: &[Permutation]) -> Result<Self> {
        let n = perms.first().map(Permutation::len).unwrap_or(0);
        let shuffled =
            patches.iter().zip(perms).map(|(x, p)| apply_permutation(x, p)).collect::<Result<_>>()?;
        Ok(Self { n, shuffled, inverses: perms.iter().map(Permutation::inverse).collect() })
    }

    /// Uniform permutations over S_n, one per patch.
    pub fn uniform<R: Rng + ?Sized>(patches: &[Patch], n: usize, rng: &mut R) -> Result<Self> {
        let perms: Vec<_> = patches.iter().map(|_| uniform_sample(n, rng)).collect();
        let mut set = Self::from_perms(patches, &perms)?;
        set.n = n;
        Ok(set)
    }

    pub fn sampled<R: Rng + ?Sized>(
        patches: &[Patch],
        sampler: &BoltzmannSampler,
        rng: &mut R,
    ) -> Result<Self> {
        let perms: Vec<_> = patches.iter().map(|_| sampler.sample(rng)).collect();
        let mut set = Self::from_perms(patches, &perms)?;
        set.n = sampler.n_segments();
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.shuffled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shuffled.is_empty()
    }
}

/// Exact-match and per-segment accuracy of decoded assignments.
pub fn pretext_accuracy(decoded: &[Vec<usize>], truth: &[Permutation]) -> Result<(f64, f64)> {
    if decoded.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    if decoded.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} targets",
            decoded.len(),
            truth.len()
        )));
    }
    let mut exact = 0usize;
    let mut placed = 0usize;
    let mut total = 0usize;
    for (d, t) in decoded.iter().zip(truth) {
        let hits = d.iter().zip(t.as_slice()).filter(|(a, b)| a == b).count();
        placed += hits;
        total += t.len();
        if hits == t.len() && d.len() == t.len() {
            exact += 1;
        }
    }
    Ok((exact as f64 / decoded.len() as f64, placed as f64 / total as f64))
}

/// Argmax-decoded accuracy of the model's permutation head on `set`.
pub fn evaluate_pretext<T: Scalar>(
    model: &Model<T>,
    set: &PretextSet,
    workers: &Workers,
) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    if model.perm_segments() != Some(set.n) {
        return Err(Error::InvalidArgument(format!(
            "head predicts {:?} segments, validation set uses {}",
            model.perm_segments(),
            set.n
        )));
    }
    let decoded = workers.map(&set.shuffled, |x| argmax_decode(&model.predict_perm(x)?))?;
    pretext_accuracy(&decoded, &set.inverses)
}
