//! Permutations of segment positions and the displacement-biased sampler.
//!
//! A [`Permutation`] stores `map[i] = π(i)` zero-based. Applying it to a
//! sequence produces `out[i] = items[π(i)]`, so position `i` of the shuffled
//! sequence holds original item `π(i)`, and applying `π⁻¹` afterwards
//! restores the original order.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest segment count supported by exhaustive enumeration (8! = 40,320).
pub const MAX_ENUMERABLE: usize = 8;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    /// Validates that `map` is a bijection on `0..map.len()`.
    pub fn new(map: Vec<usize>) -> Result<Self> {
        if map.is_empty() {
            return Err(Error::InvalidPermutation("empty".into()));
        }
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || seen[m] {
                return Err(Error::InvalidPermutation(format!("{map:?} is not a bijection")));
            }
            seen[m] = true;
        }
        Ok(Self { map })
    }

    /// Build from 1-based images, e.g. `(2,3,1)`.
    pub fn from_one_based(images: &[usize]) -> Result<Self> {
        if images.contains(&0) {
            return Err(Error::InvalidPermutation("0 in 1-based notation".into()));
        }
        Self::new(images.iter().map(|&i| i - 1).collect())
    }

    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Zero-based images.
    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.map.iter().map(|&i| i + 1).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            inv[m] = i;
        }
        Self { map: inv }
    }

    /// `(self ∘ other)(i) = self(other(i))`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::InvalidPermutation(format!(
                "cannot compose sizes {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Self { map: other.map.iter().map(|&j| self.map[j]).collect() })
    }

    /// `φ(π) = Σ |i − π(i)|`. Zero iff identity.
    pub fn displacement(&self) -> usize {
        self.map.iter().enumerate().map(|(i, &m)| i.abs_diff(m)).sum()
    }

    /// `out[i] = items[π(i)]`.
    pub fn apply<S: Clone>(&self, items: &[S]) -> Result<Vec<S>> {
        if items.len() != self.len() {
            return Err(Error::InvalidPermutation(format!(
                "permutation of {} applied to {} items",
                self.len(),
                items.len()
            )));
        }
        Ok(self.map.iter().map(|&m| items[m].clone()).collect())
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(map: Vec<usize>) -> Result<Self> {
        Self::new(map)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.map
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// One-based cycle-free notation: `(2,3,1)`.
impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.map.iter().map(|m| (m + 1).to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// All of S_n in lexicographic order.
pub fn enumerate_sn(n: usize) -> Result<Vec<Permutation>> {
    if n == 0 || n > MAX_ENUMERABLE {
        return Err(Error::InvalidArgument(format!(
            "enumeration needs 1 <= n <= {MAX_ENUMERABLE}, got {n}"
        )));
    }
    let mut cur: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity((1..=n).product());
    loop {
        out.push(Permutation { map: cur.clone() });
        // next lexicographic permutation
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| cur[j] > cur[i]).expect("successor exists");
        cur.swap(i, j);
        cur[i + 1..].reverse();
    }
    Ok(out)
}

/// Uniform draw from S_n via Fisher–Yates.
pub fn uniform_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Permutation {
    let mut map: Vec<usize> = (0..n).collect();
    map.shuffle(rng);
    Permutation { map }
}

/// Exact sampler for `p(π) ∝ exp(−φ(π)/T)` over an enumerated S_n.
#[derive(Clone, Debug)]
pub struct BoltzmannSampler {
    n: usize,
    temperature: f64,
    table: Arc<Vec<Permutation>>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl BoltzmannSampler {
    pub fn new(n: usize, temperature: f64) -> Result<Self> {
        Self::with_table(Arc::new(enumerate_sn(n)?), temperature)
    }

    /// Reuse an existing enumeration of S_n.
    pub fn with_table(table: Arc<Vec<Permutation>>, temperature: f64) -> Result<Self> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let n = table.first().map(Permutation::len).unwrap_or(0);
        if n == 0 || table.iter().any(|p| p.len() != n) {
            return Err(Error::InvalidArgument("inconsistent permutation table".into()));
        }
        // min φ is 0 (identity), so the largest weight is exactly 1
        let weights: Vec<f64> =
            table.iter().map(|p| (-(p.displacement() as f64) / temperature).exp()).collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut cdf = Vec::with_capacity(probs.len());
        let mut run = 0.0;
        for p in &probs {
            run += p;
            cdf.push(run);
        }
        Ok(Self { n, temperature, table, probs, cdf })
    }

    pub fn n_segments(&self) -> usize {
        self.n
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn table(&self) -> &[Permutation] {
        &self.table
    }

    pub fn shared_table(&self) -> Arc<Vec<Permutation>> {
        Arc::clone(&self.table)
    }

    /// Exact normalized probabilities, aligned with [`Self::table`].
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Inverse-CDF draw over the enumerated table.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Permutation {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        let idx = self.cdf.partition_point(|&c| c <= u).min(self.table.len() - 1);
        self.table[idx].clone()
    }
}
