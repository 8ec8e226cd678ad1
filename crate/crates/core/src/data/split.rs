use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::SeededRng;

pub const STRATA: usize = 10;

/// Index sets of a train/validation/test partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// False when there were too few samples to stratify.
    pub stratified: bool,
}

/// Partition `0..n`. With `targets`, stratify on 10 equal-count target
/// quantile bins; otherwise (or with fewer than 10 samples) split at random.
///
/// Per-bin counts use cumulative rounding, which keeps every bin within one
/// sample of the global fractions and makes the global sizes exact.
pub fn split_dataset(
    n: usize,
    targets: Option<&[f32]>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Split> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    if let Some(t) = targets {
        if t.len() != n {
            return Err(Error::InvalidArgument(format!("{} targets for {n} samples", t.len())));
        }
    }
    let mut rng = SeededRng::seed_from_u64(seed);

    let stratified = targets.is_some() && n >= STRATA;
    let bins: Vec<Vec<usize>> = match targets {
        Some(t) if stratified => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| t[a].total_cmp(&t[b]).then(a.cmp(&b)));
            (0..STRATA).map(|k| order[k * n / STRATA..(k + 1) * n / STRATA].to_vec()).collect()
        }
        _ => vec![(0..n).collect()],
    };

    let mut split = Split { train: vec![], val: vec![], test: vec![], stratified };
    let mut seen = 0usize;
    for mut bin in bins {
        bin.shuffle(&mut rng);
        let before = seen;
        seen += bin.len();
        let cut = |cum: usize, f: f64| (cum as f64 * f).round() as usize;
        let n_train = cut(seen, ft) - cut(before, ft);
        let n_tv = cut(seen, ft + fv) - cut(before, ft + fv);
        let n_val = n_tv.saturating_sub(n_train);
        split.train.extend_from_slice(&bin[..n_train]);
        split.val.extend_from_slice(&bin[n_train..n_train + n_val]);
        split.test.extend_from_slice(&bin[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
