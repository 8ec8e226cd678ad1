use crate::error::{Error, Result};

pub const DEFAULT_WAVELENGTH_START_NM: f64 = 420.0;
pub const DEFAULT_WAVELENGTH_END_NM: f64 = 2450.0;

/// One reflectance signature.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub bands: Vec<f32>,
    pub wavelength_start_nm: f64,
    pub wavelength_end_nm: f64,
}

impl Spectrum {
    pub fn new(bands: Vec<f32>) -> Result<Self> {
        if bands.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "a spectrum needs at least 3 bands, got {}",
                bands.len()
            )));
        }
        if bands.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("spectrum contains non-finite values".into()));
        }
        Ok(Self {
            bands,
            wavelength_start_nm: DEFAULT_WAVELENGTH_START_NM,
            wavelength_end_nm: DEFAULT_WAVELENGTH_END_NM,
        })
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// A 1x1 patch holding this spectrum.
    pub fn into_patch(self) -> Patch {
        let b = self.bands.len();
        Patch { height: 1, width: 1, bands: b, cube: self.bands }
    }
}

/// `height x width` pixels of `bands` values each, pixel-major
/// (`cube[(y*width + x)*bands + b]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub cube: Vec<f32>,
}

impl Patch {
    pub fn new(height: usize, width: usize, bands: usize, cube: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("patch needs a non-empty spatial extent".into()));
        }
        if bands < 3 {
            return Err(Error::InvalidArgument(format!("a spectrum needs at least 3 bands, got {bands}")));
        }
        if cube.len() != height * width * bands {
            return Err(Error::Malformed(format!(
                "{height}x{width}x{bands} patch given {} values",
                cube.len()
            )));
        }
        if cube.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("patch contains non-finite values".into()));
        }
        Ok(Self { height, width, bands, cube })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, p: usize) -> &[f32] {
        &self.cube[p * self.bands..(p + 1) * self.bands]
    }

    /// Per-band mean over all pixels.
    pub fn mean_spectrum(&self) -> Vec<f32> {
        let mut acc = vec![0f64; self.bands];
        for p in 0..self.pixels() {
            for (a, &v) in acc.iter_mut().zip(self.pixel(p)) {
                *a += v as f64;
            }
        }
        acc.iter().map(|a| (a / self.pixels() as f64) as f32).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSpectrum {
    pub patch: Patch,
    pub target: f32,
}

/// Patches of a common shape with optional scalar targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    patches: Vec<Patch>,
    targets: Option<Vec<f32>>,
}

impl Dataset {
    pub fn new(patches: Vec<Patch>, targets: Option<Vec<f32>>) -> Result<Self> {
        let Some(first) = patches.first() else {
            return Err(Error::InvalidArgument("empty dataset".into()));
        };
        let dims = (first.height, first.width, first.bands);
        if patches.iter().any(|p| (p.height, p.width, p.bands) != dims) {
            return Err(Error::Malformed("patches have differing shapes".into()));
        }
        if let Some(t) = &targets {
            if t.len() != patches.len() {
                return Err(Error::Malformed(format!(
                    "{} targets for {} patches",
                    t.len(),
                    patches.len()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Malformed("non-finite target".into()));
            }
        }
        Ok(Self { patches, targets })
    }

    pub fn from_labeled(items: Vec<LabeledSpectrum>) -> Result<Self> {
        let (patches, targets) = items.into_iter().map(|l| (l.patch, l.target)).unzip();
        Self::new(patches, Some(targets))
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn targets(&self) -> Option<&[f32]> {
        self.targets.as_deref()
    }

    /// `(height, width, bands)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let p = &self.patches[0];
        (p.height, p.width, p.bands)
    }

    pub fn labeled(&self, i: usize) -> Option<LabeledSpectrum> {
        let t = self.targets.as_ref()?[i];
        Some(LabeledSpectrum { patch: self.patches[i].clone(), target: t })
    }

    /// Items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let patches = indices.iter().map(|&i| self.patches[i].clone()).collect();
        let targets = self.targets.as_ref().map(|t| indices.iter().map(|&i| t[i]).collect());
        Self::new(patches, targets)
    }
}
