//! Raw loops behind the tape operations. Everything here works on flat
//! row-major slices; shape validation happens in the tape.

use crate::scalar::Scalar;

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    acc.iter().fold(s, |s, &v| s + v)
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c[m,n] = a[m,k] · b[k,n]`
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != T::zero() {
                axpy(aip, &b[p * n..(p + 1) * n], crow);
            }
        }
    }
    c
}

/// `transpose(a[m,n]) -> [n,m]`
pub fn transpose<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

/// Numerically stable in-place softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Spatial geometry of a feature map stored as `[height * width, channels]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvGeom {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn taps(&self) -> usize {
        self.kernel * self.kernel
    }

    /// Visit every `(output position, source position, tap index)` triple
    /// that falls inside the zero-padded window.
    #[inline]
    pub fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let pad = (self.kernel / 2) as isize;
        let (h, w) = (self.height as isize, self.width as isize);
        for y in 0..h {
            for x in 0..w {
                let out = (y * w + x) as usize;
                for dy in 0..self.kernel as isize {
                    let sy = y + dy - pad;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for dx in 0..self.kernel as isize {
                        let sx = x + dx - pad;
                        if sx < 0 || sx >= w {
                            continue;
                        }
                        let tap = (dy * self.kernel as isize + dx) as usize;
                        f(out, (sy * w + sx) as usize, tap);
                    }
                }
            }
        }
    }
}

/// Depthwise convolution: `x[P,C]`, `kernel[C, k*k]`.
pub fn dwconv_forward<T: Scalar>(x: &[T], kernel: &[T], channels: usize, g: ConvGeom) -> Vec<T> {
    let taps = g.taps();
    let kt = transpose(kernel, channels, taps);
    let mut out = vec![T::zero(); g.positions() * channels];
    g.for_each_tap(|o, s, t| {
        let src = &x[s * channels..(s + 1) * channels];
        let kk = &kt[t * channels..(t + 1) * channels];
        let dst = &mut out[o * channels..(o + 1) * channels];
        for c in 0..channels {
            dst[c] += src[c] * kk[c];
        }
    });
    out
}

/// Returns `(dx, dkernel)`.
pub fn dwconv_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dout: &[T],
    channels: usize,
    g: ConvGeom,
) -> (Vec<T>, Vec<T>) {
    let taps = g.taps();
    let kt = transpose(kernel, channels, taps);
    let mut dx = vec![T::zero(); x.len()];
    let mut dkt = vec![T::zero(); taps * channels];
    g.for_each_tap(|o, s, t| {
        let go = &dout[o * channels..(o + 1) * channels];
        let src = &x[s * channels..(s + 1) * channels];
        let kk = &kt[t * channels..(t + 1) * channels];
        let dsrc = &mut dx[s * channels..(s + 1) * channels];
        for c in 0..channels {
            dsrc[c] += go[c] * kk[c];
        }
        let dk = &mut dkt[t * channels..(t + 1) * channels];
        for c in 0..channels {
            dk[c] += go[c] * src[c];
        }
    });
    (dx, transpose(&dkt, taps, channels))
}

/// Dense convolution: `x[P,Cin]`, `kernel[Cout, Cin*k*k]` (input channel major).
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    c_in: usize,
    c_out: usize,
    g: ConvGeom,
) -> Vec<T> {
    let taps = g.taps();
    let mut out = vec![T::zero(); g.positions() * c_out];
    g.for_each_tap(|o, s, t| {
        for co in 0..c_out {
            let mut acc = T::zero();
            for ci in 0..c_in {
                acc += x[s * c_in + ci] * kernel[co * c_in * taps + ci * taps + t];
            }
            out[o * c_out + co] += acc;
        }
    });
    out
}

pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dout: &[T],
    c_in: usize,
    c_out: usize,
    g: ConvGeom,
) -> (Vec<T>, Vec<T>) {
    let taps = g.taps();
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); kernel.len()];
    g.for_each_tap(|o, s, t| {
        for co in 0..c_out {
            let go = dout[o * c_out + co];
            for ci in 0..c_in {
                let ki = co * c_in * taps + ci * taps + t;
                dx[s * c_in + ci] += go * kernel[ki];
                dk[ki] += go * x[s * c_in + ci];
            }
        }
    });
    (dx, dk)
}

/// Shape of a batched multi-head attention call: `groups` independent
/// sequences of `seq` tokens, each token of width `heads * head_dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnGeom {
    pub groups: usize,
    pub seq: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttnGeom {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Copy one head of one group into `[head_dim, seq]` layout.
    fn gather_t<T: Scalar>(&self, src: &[T], g: usize, h: usize, dst: &mut [T]) {
        let (s, w, dk) = (self.seq, self.width(), self.head_dim);
        for i in 0..s {
            let row = &src[(g * s + i) * w + h * dk..(g * s + i) * w + (h + 1) * dk];
            for d in 0..dk {
                dst[d * s + i] = row[d];
            }
        }
    }

    fn scatter_t<T: Scalar>(&self, src: &[T], g: usize, h: usize, dst: &mut [T]) {
        let (s, w, dk) = (self.seq, self.width(), self.head_dim);
        for i in 0..s {
            let row = &mut dst[(g * s + i) * w + h * dk..(g * s + i) * w + (h + 1) * dk];
            for d in 0..dk {
                row[d] += src[d * s + i];
            }
        }
    }
}

/// Scaled dot-product attention. Returns `(output, probabilities)` where the
/// probabilities are stored `[groups, heads, seq, seq]`.
pub fn attention_forward<T: Scalar>(q: &[T], k: &[T], v: &[T], a: AttnGeom) -> (Vec<T>, Vec<T>) {
    let (s, dk) = (a.seq, a.head_dim);
    let scale = T::one() / T::of(dk as f64).sqrt();
    let mut out = vec![T::zero(); q.len()];
    let mut probs = vec![T::zero(); a.groups * a.heads * s * s];
    let mut qt = vec![T::zero(); dk * s];
    let mut kt = vec![T::zero(); dk * s];
    let mut vt = vec![T::zero(); dk * s];
    let mut ot = vec![T::zero(); dk * s];
    for g in 0..a.groups {
        for h in 0..a.heads {
            a.gather_t(q, g, h, &mut qt);
            a.gather_t(k, g, h, &mut kt);
            a.gather_t(v, g, h, &mut vt);
            let pblock = &mut probs[(g * a.heads + h) * s * s..(g * a.heads + h + 1) * s * s];
            for i in 0..s {
                let row = &mut pblock[i * s..(i + 1) * s];
                for d in 0..dk {
                    axpy(qt[d * s + i] * scale, &kt[d * s..(d + 1) * s], row);
                }
                softmax_in_place(row);
                for d in 0..dk {
                    ot[d * s + i] = dot(row, &vt[d * s..(d + 1) * s]);
                }
            }
            a.scatter_t(&ot, g, h, &mut out);
        }
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
pub fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    a: AttnGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (s, dk) = (a.seq, a.head_dim);
    let scale = T::one() / T::of(dk as f64).sqrt();
    let mut dq = vec![T::zero(); q.len()];
    let mut dkk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut qt = vec![T::zero(); dk * s];
    let mut kt = vec![T::zero(); dk * s];
    let mut vt = vec![T::zero(); dk * s];
    let mut got = vec![T::zero(); dk * s];
    let mut dqt = vec![T::zero(); dk * s];
    let mut dkt = vec![T::zero(); dk * s];
    let mut dvt = vec![T::zero(); dk * s];
    let mut ds = vec![T::zero(); s];
    for g in 0..a.groups {
        for h in 0..a.heads {
            a.gather_t(q, g, h, &mut qt);
            a.gather_t(k, g, h, &mut kt);
            a.gather_t(v, g, h, &mut vt);
            a.gather_t(dout, g, h, &mut got);
            dkt.iter_mut().for_each(|x| *x = T::zero());
            dvt.iter_mut().for_each(|x| *x = T::zero());
            let pblock = &probs[(g * a.heads + h) * s * s..(g * a.heads + h + 1) * s * s];
            for i in 0..s {
                let prow = &pblock[i * s..(i + 1) * s];
                ds.iter_mut().for_each(|x| *x = T::zero());
                for d in 0..dk {
                    let go = got[d * s + i];
                    axpy(go, &vt[d * s..(d + 1) * s], &mut ds);
                    axpy(go, prow, &mut dvt[d * s..(d + 1) * s]);
                }
                let inner = dot(&ds, prow);
                for (dsj, &pj) in ds.iter_mut().zip(prow) {
                    *dsj = pj * (*dsj - inner) * scale;
                }
                for d in 0..dk {
                    dqt[d * s + i] = dot(&ds, &kt[d * s..(d + 1) * s]);
                    axpy(qt[d * s + i], &ds, &mut dkt[d * s..(d + 1) * s]);
                }
            }
            a.scatter_t(&dqt, g, h, &mut dq);
            a.scatter_t(&dkt, g, h, &mut dkk);
            a.scatter_t(&dvt, g, h, &mut dv);
        }
    }
    (dq, dkk, dv)
}
