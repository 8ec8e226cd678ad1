//! Synthetic soil-like reflectance patches with a known regression target.
//!
//! Each patch has one base spectrum: a smooth quadratic continuum multiplied
//! by 2–5 Gaussian absorption dips. One dip always sits inside the
//! "organic" band window and its depth drives the target; the others are
//! placed outside that window. Pixels add a small brightness jitter and
//! white noise (σ = 0.005), and values are clipped to `[0, 1]`.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Patch};
use crate::error::{Error, Result};

pub const TARGET_MIN: f32 = 0.5;
pub const TARGET_MAX: f32 = 23.8;
pub const NOISE_SIGMA: f64 = 0.005;
/// Largest fractional depth of the organic dip.
pub const MAX_ORGANIC_DEPTH: f64 = 0.25;
const TARGET_NOISE_SIGMA: f64 = 0.25;
const BRIGHTNESS_SIGMA: f64 = 0.02;

/// Human-readable description stored next to generated datasets.
pub const PROVENANCE: &str = "synthetic: quadratic continuum x Gaussian absorption dips (2-5), \
one dip inside the organic window [0.55B, 0.75B); target = 0.5 + 23.3 * depth / 0.25 + N(0, 0.25) \
clipped to [0.5, 23.8]; per-pixel brightness jitter N(0, 0.02) and noise N(0, 0.005), clipped to [0, 1]";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub count: usize,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
}

impl SynthConfig {
    pub fn new(count: usize, bands: usize) -> Self {
        Self { count, bands, height: 8, width: 8 }
    }
}

/// Band indices whose absorption depth sets the target.
pub fn organic_window(bands: usize) -> Range<usize> {
    (bands * 55 / 100)..(bands * 75 / 100)
}

struct Dip {
    center: f64,
    sigma: f64,
    depth: f64,
}

impl Dip {
    fn absorb(&self, b: f64) -> f64 {
        let z = (b - self.center) / self.sigma;
        self.depth * (-0.5 * z * z).exp()
    }
}

fn base_spectrum<R: Rng + ?Sized>(bands: usize, rng: &mut R) -> (Vec<f64>, f64) {
    let window = organic_window(bands);
    let (wlo, whi) = (window.start as f64, window.end as f64);
    let wlen = whi - wlo;

    let a0 = rng.random_range(0.25..0.45);
    let a1 = rng.random_range(-0.1..0.25);
    let a2 = rng.random_range(-0.1..0.15);

    let organic_depth = rng.random_range(0.0..MAX_ORGANIC_DEPTH);
    let mut dips = vec![Dip {
        center: rng.random_range(wlo + 0.35 * wlen..whi - 0.35 * wlen),
        sigma: wlen / 6.0,
        depth: organic_depth,
    }];
    let others = rng.random_range(1..=4);
    let max_sigma = 1.0 + bands as f64 / 20.0;
    while dips.len() < others + 1 {
        let sigma = rng.random_range(1.0..max_sigma);
        let center = rng.random_range(0.0..(bands - 1) as f64);
        // keep foreign dips clear of the window
        if center > wlo - 3.0 * sigma && center < whi + 3.0 * sigma {
            continue;
        }
        dips.push(Dip { center, sigma, depth: rng.random_range(0.05..0.3) });
    }

    let spectrum = (0..bands)
        .map(|b| {
            let t = b as f64 / (bands - 1) as f64;
            let continuum = a0 + a1 * t + a2 * t * t;
            let absorbed: f64 = dips.iter().map(|d| d.absorb(b as f64)).sum();
            continuum * (1.0 - absorbed).max(0.0)
        })
        .collect();
    (spectrum, organic_depth)
}

/// Generate `count` labeled patches. Deterministic for a given RNG state.
pub fn generate_synthetic<R: Rng + ?Sized>(cfg: SynthConfig, rng: &mut R) -> Result<Dataset> {
    if cfg.count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    if cfg.bands < 16 {
        return Err(Error::InvalidArgument(format!("need at least 16 bands, got {}", cfg.bands)));
    }
    if cfg.height == 0 || cfg.width == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let bright = Normal::new(0.0, BRIGHTNESS_SIGMA).expect("valid sigma");
    let target_noise = Normal::new(0.0, TARGET_NOISE_SIGMA).expect("valid sigma");

    let pixels = cfg.height * cfg.width;
    let mut patches = Vec::with_capacity(cfg.count);
    let mut targets = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let (base, depth) = base_spectrum(cfg.bands, rng);
        let mut cube = Vec::with_capacity(pixels * cfg.bands);
        for _ in 0..pixels {
            let scale = 1.0 + bright.sample(rng);
            cube.extend(
                base.iter().map(|&v| (v * scale + noise.sample(rng)).clamp(0.0, 1.0) as f32),
            );
        }
        patches.push(Patch::new(cfg.height, cfg.width, cfg.bands, cube)?);
        let target = TARGET_MIN as f64
            + (TARGET_MAX - TARGET_MIN) as f64 * depth / MAX_ORGANIC_DEPTH
            + target_noise.sample(rng);
        targets.push((target as f32).clamp(TARGET_MIN, TARGET_MAX));
    }
    Dataset::new(patches, Some(targets))
}
