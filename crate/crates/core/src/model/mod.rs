//! The encoder, the permutation head and the regression head.

pub mod encoder;
pub mod heads;
mod params;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use heads::{argmax_decode, greedy_decode, pretext_loss};
pub use params::{Bound, Params};

use crate::data::Patch;
use crate::error::{Error, Result};
use crate::permutation::Permutation;
use crate::scalar::Scalar;
use crate::tensor::{Array, Tape, Var};
use encoder::{AttentionVars, DualAttentionVars, MultiScaleVars, SCALES};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    /// Token width inside spectral attention.
    pub attn_dim: usize,
    pub attn_heads: usize,
    /// Channels per multi-scale branch.
    pub ms_channels: usize,
    /// Embedding size `d`.
    pub embed_dim: usize,
    /// Bottleneck ratio of the channel-attention MLP.
    pub ca_ratio: usize,
    pub sa_kernel: usize,
    /// ReLU on each multi-scale branch before fusion.
    pub ms_activation: bool,
    /// Standardize each pixel spectrum to zero mean and unit variance
    /// before the encoder.
    pub input_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            bands: 64,
            height: 8,
            width: 8,
            attn_dim: 8,
            attn_heads: 2,
            ms_channels: 32,
            embed_dim: 64,
            ca_ratio: 4,
            sa_kernel: 7,
            ms_activation: true,
            input_norm: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.bands < 3 || self.height == 0 || self.width == 0 {
            return bad(format!(
                "input {}x{}x{} is too small",
                self.height, self.width, self.bands
            ));
        }
        if self.attn_heads == 0 || self.attn_dim == 0 || self.attn_dim % self.attn_heads != 0 {
            return bad(format!(
                "attention width {} is not divisible by {} heads",
                self.attn_dim, self.attn_heads
            ));
        }
        if self.ms_channels == 0 || self.embed_dim < 2 {
            return bad("multi-scale and embedding widths must be positive".into());
        }
        if self.ca_ratio == 0 || self.embed_dim / self.ca_ratio == 0 {
            return bad(format!(
                "channel-attention ratio {} leaves no hidden units for d = {}",
                self.ca_ratio, self.embed_dim
            ));
        }
        if self.sa_kernel % 2 == 0 {
            return bad(format!("spatial-attention kernel {} must be odd", self.sa_kernel));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Standardization applied to regression targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    /// Fit on targets; a zero spread falls back to unit scale.
    pub fn fit(targets: &[f32]) -> Self {
        let n = targets.len().max(1) as f64;
        let mean = targets.iter().map(|&t| t as f64).sum::<f64>() / n;
        let var = targets.iter().map(|&t| (t as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        y * self.std + self.mean
    }
}

/// Fan-in scaled uniform: variance `1/fan_in`.
fn fan_in<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Array<T> {
    Array::uniform(shape, (3.0 / fan_in as f64).sqrt(), rng)
}

fn standardize<T: Scalar>(v: &mut [T]) {
    let n = T::of(v.len() as f64);
    let mean = v.iter().copied().sum::<T>() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let inv = T::one() / (var.sqrt() + T::of(1e-6));
    v.iter_mut().for_each(|x| *x = (*x - mean) * inv);
}

const PERM_PREFIX: &str = "perm.";
const REG_PREFIX: &str = "reg.";

/// Encoder plus whichever heads are attached.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
    perm_segments: Option<usize>,
    target_scale: Option<TargetScale>,
}

impl<T: Scalar> Model<T> {
    /// Fresh encoder with no heads.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (b, a, m, d) = (c.bands, c.attn_dim, c.ms_channels, c.embed_dim);
        let hidden = d / c.ca_ratio;
        let mut p = Params::default();
        for name in ["q", "k", "v"] {
            p.insert(format!("attn.w_{name}"), fan_in(&[1, a], 1, rng));
            p.insert(format!("attn.pos_{name}"), fan_in(&[b, a], a, rng));
        }
        p.insert("attn.w_o", fan_in(&[a, 1], a, rng));
        p.insert("band_weights", Array::ones(&[1, b]));
        for s in SCALES {
            p.insert(format!("ms.dw{s}"), fan_in(&[b, s * s], s * s, rng));
            p.insert(format!("ms.pw_w{s}"), fan_in(&[b, m], b, rng));
            p.insert(format!("ms.pw_b{s}"), Array::zeros(&[1, m]));
        }
        p.insert("ms.fuse_w", fan_in(&[3 * m, d], 3 * m, rng));
        p.insert("ms.fuse_b", Array::zeros(&[1, d]));
        p.insert("da.ca_w1", fan_in(&[d, hidden], d, rng));
        p.insert("da.ca_w2", fan_in(&[hidden, d], hidden, rng));
        let taps = c.sa_kernel * c.sa_kernel;
        p.insert("da.sa_kernel", fan_in(&[1, 2 * taps], 2 * taps, rng));
        Ok(Self { config, params: p, perm_segments: None, target_scale: None })
    }

    /// Assemble from stored parts (used when loading checkpoints).
    pub fn from_parts(
        config: ModelConfig,
        params: Params<T>,
        perm_segments: Option<usize>,
        target_scale: Option<TargetScale>,
    ) -> Result<Self> {
        config.validate()?;
        let model = Self { config, params, perm_segments, target_scale };
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        AttentionVars::from_bound(&bound, model.config.attn_heads)?;
        MultiScaleVars::from_bound(&bound)?;
        DualAttentionVars::from_bound(&bound, model.config.sa_kernel)?;
        if perm_segments.is_some() {
            bound.var("perm.w")?;
            bound.var("perm.b")?;
        }
        if target_scale.is_some() {
            for n in ["reg.w1", "reg.b1", "reg.w2", "reg.b2"] {
                bound.var(n)?;
            }
        }
        Ok(model)
    }

    pub fn perm_segments(&self) -> Option<usize> {
        self.perm_segments
    }

    pub fn target_scale(&self) -> Option<TargetScale> {
        self.target_scale
    }

    /// (Re)create the permutation head for `n` segments.
    pub fn init_perm_head<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) {
        let d = self.config.embed_dim;
        self.params.remove_prefix(PERM_PREFIX);
        self.params.insert("perm.w", fan_in(&[d, n * n], d, rng));
        self.params.insert("perm.b", Array::zeros(&[1, n * n]));
        self.perm_segments = Some(n);
    }

    pub fn drop_perm_head(&mut self) {
        self.params.remove_prefix(PERM_PREFIX);
        self.perm_segments = None;
    }

    /// (Re)create the regression head `d -> d/2 -> 1`.
    pub fn init_regression_head<R: Rng + ?Sized>(&mut self, scale: TargetScale, rng: &mut R) {
        let d = self.config.embed_dim;
        let h = (d / 2).max(1);
        self.params.remove_prefix(REG_PREFIX);
        self.params.insert("reg.w1", fan_in(&[d, h], d, rng));
        self.params.insert("reg.b1", Array::zeros(&[1, h]));
        self.params.insert("reg.w2", fan_in(&[h, 1], h, rng));
        self.params.insert("reg.b2", Array::zeros(&[1, 1]));
        self.target_scale = Some(scale);
    }

    /// Names of encoder parameters (everything except heads).
    pub fn encoder_param_names(&self) -> Vec<String> {
        self.params
            .names()
            .filter(|n| !n.starts_with(PERM_PREFIX) && !n.starts_with(REG_PREFIX))
            .cloned()
            .collect()
    }

    fn check_patch(&self, patch: &Patch) -> Result<()> {
        let c = &self.config;
        if (patch.height, patch.width, patch.bands) != (c.height, c.width, c.bands) {
            return Err(Error::shape(
                "encoder",
                format!(
                    "model expects {}x{}x{} input, got {}x{}x{}",
                    c.height, c.width, c.bands, patch.height, patch.width, patch.bands
                ),
            ));
        }
        Ok(())
    }

    /// Record the patch as a `[pixels, bands]` leaf.
    pub fn input(&self, tape: &mut Tape<T>, patch: &Patch) -> Result<Var> {
        self.check_patch(patch)?;
        let mut data: Vec<T> = patch.cube.iter().map(|&v| T::of(v as f64)).collect();
        if self.config.input_norm {
            for px in data.chunks_mut(patch.bands) {
                standardize(px);
            }
        }
        Ok(tape.leaf(Array::new(vec![patch.pixels(), patch.bands], data)?))
    }

    /// Encoder forward from an input leaf to the pooled embedding `z [1,d]`.
    pub fn encode(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let c = &self.config;
        let attn = AttentionVars::from_bound(bound, c.attn_heads)?;
        let a = encoder::spectral_attention(tape, x, &attn)?;
        let f = tape.add(x, a)?;
        let f = encoder::band_weighting(tape, f, bound.var("band_weights")?)?;
        let ms = MultiScaleVars::from_bound(bound)?;
        let f_ms = encoder::multiscale_block(tape, f, &ms, c.height, c.width, c.ms_activation)?;
        let da = DualAttentionVars::from_bound(bound, c.sa_kernel)?;
        encoder::dual_attention(tape, f_ms, &da, c.height, c.width)
    }

    fn perm_n(&self) -> Result<usize> {
        self.perm_segments
            .ok_or_else(|| Error::InvalidArgument("model has no permutation head".into()))
    }

    /// Permutation logits `[N, N]` from an embedding.
    pub fn perm_logits(&self, tape: &mut Tape<T>, bound: &Bound, z: Var) -> Result<Var> {
        let n = self.perm_n()?;
        heads::perm_logits(tape, z, bound.var("perm.w")?, bound.var("perm.b")?, n)
    }

    /// Standardized regression output `[1,1]`.
    pub fn regression(&self, tape: &mut Tape<T>, bound: &Bound, z: Var) -> Result<Var> {
        heads::regression_forward(
            tape,
            z,
            bound.var("reg.w1")?,
            bound.var("reg.b1")?,
            bound.var("reg.w2")?,
            bound.var("reg.b2")?,
        )
    }

    /// Loss and parameter gradients for one shuffled patch.
    pub fn pretext_gradients(
        &self,
        shuffled: &Patch,
        true_inverse: &Permutation,
    ) -> Result<(f64, Params<T>)> {
        let n = self.perm_n()?;
        if true_inverse.len() != n {
            return Err(Error::InvalidArgument(format!(
                "head predicts {n} segments, target has {}",
                true_inverse.len()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = self.input(&mut tape, shuffled)?;
        let z = self.encode(&mut tape, &bound, x)?;
        let logits = self.perm_logits(&mut tape, &bound, z)?;
        let loss = heads::perm_loss(&mut tape, logits, true_inverse)?;
        let mut grads = tape.backward(loss)?;
        let value = tape.value(loss).data()[0].to_f64_lossy();
        Ok((value, bound.collect_grads(&self.params, &mut grads)))
    }

    /// Squared error (in standardized units) and gradients for one labeled patch.
    pub fn regression_gradients(&self, patch: &Patch, target: f64) -> Result<(f64, Params<T>)> {
        let scale = self
            .target_scale
            .ok_or_else(|| Error::InvalidArgument("model has no regression head".into()))?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = self.input(&mut tape, patch)?;
        let z = self.encode(&mut tape, &bound, x)?;
        let y = self.regression(&mut tape, &bound, z)?;
        let loss = heads::squared_error(&mut tape, y, T::of(scale.normalize(target)))?;
        let mut grads = tape.backward(loss)?;
        let value = tape.value(loss).data()[0].to_f64_lossy();
        Ok((value, bound.collect_grads(&self.params, &mut grads)))
    }

    pub fn embed(&self, patch: &Patch) -> Result<Array<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = self.input(&mut tape, patch)?;
        let z = self.encode(&mut tape, &bound, x)?;
        Ok(tape.value(z).clone())
    }

    /// Row-stochastic `P [N, N]` for a shuffled patch.
    pub fn predict_perm(&self, shuffled: &Patch) -> Result<Array<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = self.input(&mut tape, shuffled)?;
        let z = self.encode(&mut tape, &bound, x)?;
        let logits = self.perm_logits(&mut tape, &bound, z)?;
        let p = tape.softmax_rows(logits)?;
        Ok(tape.value(p).clone())
    }

    /// Prediction in target units.
    pub fn predict_target(&self, patch: &Patch) -> Result<f64> {
        let scale = self
            .target_scale
            .ok_or_else(|| Error::InvalidArgument("model has no regression head".into()))?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = self.input(&mut tape, patch)?;
        let z = self.encode(&mut tape, &bound, x)?;
        let y = self.regression(&mut tape, &bound, z)?;
        Ok(scale.denormalize(tape.value(y).data()[0].to_f64_lossy()))
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            perm_segments: self.perm_segments,
            target_scale: self.target_scale,
        }
    }
}
