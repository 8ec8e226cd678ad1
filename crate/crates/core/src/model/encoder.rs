//! Encoder layers. Feature maps are `[height*width, channels]` arrays on a
//! tape; the raw input has one channel per band.

use crate::error::Result;
use crate::model::params::Bound;
use crate::scalar::Scalar;
use crate::tensor::{ConvGeom, Tape, Var};

pub const SCALES: [usize; 3] = [3, 5, 7];

/// Parameter handles for per-pixel spectral self-attention.
///
/// Tokens are the bands of one pixel. Each scalar token is lifted to
/// `width` features by `x·w + pos[band]` separately for queries, keys and
/// values; the concatenated head outputs are projected back to one value
/// per band by `w_o`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub pos_q: Var,
    pub pos_k: Var,
    pub pos_v: Var,
    pub w_o: Var,
    pub heads: usize,
}

impl AttentionVars {
    pub fn from_bound(b: &Bound, heads: usize) -> Result<Self> {
        Ok(Self {
            w_q: b.var("attn.w_q")?,
            w_k: b.var("attn.w_k")?,
            w_v: b.var("attn.w_v")?,
            pos_q: b.var("attn.pos_q")?,
            pos_k: b.var("attn.pos_k")?,
            pos_v: b.var("attn.pos_v")?,
            w_o: b.var("attn.w_o")?,
            heads,
        })
    }
}

/// `softmax(QKᵀ/√d_k)V` over the bands of every pixel: `[P,B] -> [P,B]`.
pub fn spectral_attention<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &AttentionVars) -> Result<Var> {
    let (pixels, bands) = tape.value(x).dims2()?;
    let q = tape.token_embed(x, p.w_q, p.pos_q)?;
    let k = tape.token_embed(x, p.w_k, p.pos_k)?;
    let v = tape.token_embed(x, p.w_v, p.pos_v)?;
    let ctx = tape.attention(q, k, v, bands, p.heads)?;
    let out = tape.matmul(ctx, p.w_o)?;
    tape.reshape(out, &[pixels, bands])
}

/// `F' = F ⊙ α`, one weight per band broadcast over pixels.
pub fn band_weighting<T: Scalar>(tape: &mut Tape<T>, f: Var, alpha: Var) -> Result<Var> {
    tape.mul(f, alpha)
}

#[derive(Clone, Copy, Debug)]
pub struct MultiScaleVars {
    pub dw: [Var; 3],
    pub pw_w: [Var; 3],
    pub pw_b: [Var; 3],
    pub fuse_w: Var,
    pub fuse_b: Var,
}

impl MultiScaleVars {
    pub fn from_bound(b: &Bound) -> Result<Self> {
        let each = |what: &str| -> Result<[Var; 3]> {
            Ok([
                b.var(&format!("ms.{what}{}", SCALES[0]))?,
                b.var(&format!("ms.{what}{}", SCALES[1]))?,
                b.var(&format!("ms.{what}{}", SCALES[2]))?,
            ])
        };
        Ok(Self {
            dw: each("dw")?,
            pw_w: each("pw_w")?,
            pw_b: each("pw_b")?,
            fuse_w: b.var("ms.fuse_w")?,
            fuse_b: b.var("ms.fuse_b")?,
        })
    }
}

/// `F_s = PWConv(DWConv_s(F'))` for s ∈ {3,5,7}, then
/// `F_MS = Concat(F_3, F_5, F_7)·W + b`. With `activate`, each `F_s` passes
/// through a ReLU before fusion.
pub fn multiscale_block<T: Scalar>(
    tape: &mut Tape<T>,
    f: Var,
    p: &MultiScaleVars,
    height: usize,
    width: usize,
    activate: bool,
) -> Result<Var> {
    let mut branches = [f; 3];
    for (i, &kernel) in SCALES.iter().enumerate() {
        let geom = ConvGeom { height, width, kernel };
        let d = tape.dwconv(f, p.dw[i], geom)?;
        let s = tape.pwconv(d, p.pw_w[i], p.pw_b[i])?;
        branches[i] = if activate { tape.relu(s)? } else { s };
    }
    let cat = tape.concat_cols(&branches)?;
    tape.pwconv(cat, p.fuse_w, p.fuse_b)
}

#[derive(Clone, Copy, Debug)]
pub struct DualAttentionVars {
    pub ca_w1: Var,
    pub ca_w2: Var,
    pub sa_kernel: Var,
    pub sa_kernel_size: usize,
}

impl DualAttentionVars {
    pub fn from_bound(b: &Bound, sa_kernel_size: usize) -> Result<Self> {
        Ok(Self {
            ca_w1: b.var("da.ca_w1")?,
            ca_w2: b.var("da.ca_w2")?,
            sa_kernel: b.var("da.sa_kernel")?,
            sa_kernel_size,
        })
    }
}

/// Channel gate `α_c = σ(W₂ δ(W₁ GAP(F)))`: `[P,C] -> [1,C]`.
pub fn channel_gate<T: Scalar>(tape: &mut Tape<T>, f: Var, p: &DualAttentionVars) -> Result<Var> {
    let gap = tape.mean_rows(f)?;
    let h = tape.matmul(gap, p.ca_w1)?;
    let h = tape.relu(h)?;
    let a = tape.matmul(h, p.ca_w2)?;
    tape.sigmoid(a)
}

/// Spatial gate `α_s = σ(f(MaxPool(F), AvgPool(F)))` with channel-wise
/// pooling concatenated into a two-channel map: `[P,C] -> [P,1]`.
pub fn spatial_gate<T: Scalar>(
    tape: &mut Tape<T>,
    f: Var,
    p: &DualAttentionVars,
    height: usize,
    width: usize,
) -> Result<Var> {
    let mx = tape.max_cols(f)?;
    let av = tape.mean_cols(f)?;
    let pooled = tape.concat_cols(&[mx, av])?;
    let geom = ConvGeom { height, width, kernel: p.sa_kernel_size };
    let s = tape.conv2d(pooled, p.sa_kernel, geom)?;
    tape.sigmoid(s)
}

/// `z = GAP(F ⊙ α_c ⊙ α_s)`.
pub fn gated_pool<T: Scalar>(tape: &mut Tape<T>, f: Var, a_c: Var, a_s: Var) -> Result<Var> {
    let g = tape.mul(f, a_c)?;
    let g = tape.mul(g, a_s)?;
    tape.mean_rows(g)
}

/// Both gates followed by pooling: `[P,C] -> z [1,C]`.
pub fn dual_attention<T: Scalar>(
    tape: &mut Tape<T>,
    f_ms: Var,
    p: &DualAttentionVars,
    height: usize,
    width: usize,
) -> Result<Var> {
    let a_c = channel_gate(tape, f_ms, p)?;
    let a_s = spatial_gate(tape, f_ms, p, height, width)?;
    gated_pool(tape, f_ms, a_c, a_s)
}
