use crate::data::{Patch, Spectrum};
use crate::error::{Error, Result};
use crate::permutation::Permutation;

pub const MIN_SEGMENTS: usize = 3;
pub const MAX_SEGMENTS: usize = 8;

/// A patch cut along the band axis into `n_segments` runs of `segment_len`
/// bands. The trailing `dropped_tail` bands (`B mod N`) are kept aside and
/// never shuffled.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentedSpectrum {
    pub n_segments: usize,
    pub segment_len: usize,
    pub dropped_tail: usize,
    height: usize,
    width: usize,
    /// `segments[k]` holds band slice `k` for every pixel, pixel-major.
    segments: Vec<Vec<f32>>,
    tail: Vec<f32>,
}

/// `(segment_len, dropped_tail)` for `bands` split into `n` segments.
pub fn segment_layout(bands: usize, n: usize) -> Result<(usize, usize)> {
    if !(MIN_SEGMENTS..=MAX_SEGMENTS).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "segment count must be in [{MIN_SEGMENTS}, {MAX_SEGMENTS}], got {n}"
        )));
    }
    if bands < n {
        return Err(Error::InvalidArgument(format!("{bands} bands cannot form {n} segments")));
    }
    Ok((bands / n, bands % n))
}

impl SegmentedSpectrum {
    pub fn from_patch(patch: &Patch, n: usize) -> Result<Self> {
        let (len, tail_len) = segment_layout(patch.bands, n)?;
        let pixels = patch.pixels();
        let mut segments = vec![Vec::with_capacity(pixels * len); n];
        let mut tail = Vec::with_capacity(pixels * tail_len);
        for p in 0..pixels {
            let px = patch.pixel(p);
            for (k, seg) in segments.iter_mut().enumerate() {
                seg.extend_from_slice(&px[k * len..(k + 1) * len]);
            }
            tail.extend_from_slice(&px[n * len..]);
        }
        Ok(Self {
            n_segments: n,
            segment_len: len,
            dropped_tail: tail_len,
            height: patch.height,
            width: patch.width,
            segments,
            tail,
        })
    }

    pub fn from_spectrum(s: &Spectrum, n: usize) -> Result<Self> {
        Self::from_patch(&s.clone().into_patch(), n)
    }

    /// Band slice `k` of pixel `p`.
    pub fn segment(&self, k: usize, p: usize) -> &[f32] {
        &self.segments[k][p * self.segment_len..(p + 1) * self.segment_len]
    }

    /// Output segment `i` is input segment `π(i)`; the tail stays in place.
    pub fn permute(&self, p: &Permutation) -> Result<Self> {
        if p.len() != self.n_segments {
            return Err(Error::InvalidArgument(format!(
                "permutation of {} applied to {} segments",
                p.len(),
                self.n_segments
            )));
        }
        Ok(Self { segments: p.apply(&self.segments)?, ..self.clone() })
    }

    /// Reassemble a patch: segments in their current order, then the tail.
    pub fn to_patch(&self) -> Patch {
        let pixels = self.height * self.width;
        let bands = self.n_segments * self.segment_len + self.dropped_tail;
        let mut cube = Vec::with_capacity(pixels * bands);
        for p in 0..pixels {
            for k in 0..self.n_segments {
                cube.extend_from_slice(self.segment(k, p));
            }
            cube.extend_from_slice(&self.tail[p * self.dropped_tail..(p + 1) * self.dropped_tail]);
        }
        Patch { height: self.height, width: self.width, bands, cube }
    }
}

/// Shuffle the segments of a patch in one step: `out = π(x)`.
pub fn apply_permutation(patch: &Patch, p: &Permutation) -> Result<Patch> {
    Ok(SegmentedSpectrum::from_patch(patch, p.len())?.permute(p)?.to_patch())
}
