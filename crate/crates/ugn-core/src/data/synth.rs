//! Deterministic synthetic land-cover scenes.
//!
//! Each scene is a Voronoi partition of the frame: random sites are assigned
//! classes round-robin, and every pixel takes the class of its nearest site.
//! Rendering paints each class with its palette color, modulates it with a
//! class-specific sinusoidal texture, and adds Gaussian pixel noise, so the
//! classes stay linearly separable in RGB while being far from constant.
//! A small fraction of pixels is blanked to the unknown class in irregular
//! blobs to exercise the valid-pixel handling downstream.
//!
//! Every sample is generated from its own derived random stream, so sample
//! `i` of a given seed is reproducible regardless of how many samples are
//! requested.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::palette::Palette;
use crate::data::sample::SegSample;
use crate::error::{Error, Result};
use crate::rngstream::derive_rng;

/// Shape of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Scene height in pixels; must be a positive multiple of 32.
    pub height: usize,
    /// Scene width in pixels; must be a positive multiple of 32.
    pub width: usize,
    /// Number of active classes drawn from the palette prefix (at least 2).
    pub classes: usize,
    /// Target fraction of pixels blanked to unknown, in `[0, 0.5]`.
    pub unknown_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            classes: 4,
            unknown_fraction: 0.02,
        }
    }
}

impl SynthConfig {
    fn validate(&self, palette: &Palette) -> Result<()> {
        const OP: &str = "synth_generate";
        if self.height == 0 || self.width == 0 || self.height % 32 != 0 || self.width % 32 != 0 {
            return Err(Error::shape(
                OP,
                format!(
                    "extents must be positive multiples of 32, got {}x{}",
                    self.height, self.width
                ),
            ));
        }
        if self.classes < 2 {
            return Err(Error::contract(
                OP,
                format!("need at least 2 classes, got {}", self.classes),
            ));
        }
        if self.classes > palette.active_classes() {
            return Err(Error::contract(
                OP,
                format!(
                    "{} classes requested, but the palette has only {} active classes",
                    self.classes,
                    palette.active_classes()
                ),
            ));
        }
        if !(0.0..=0.5).contains(&self.unknown_fraction) {
            return Err(Error::contract(
                OP,
                format!(
                    "unknown_fraction must lie in [0, 0.5], got {}",
                    self.unknown_fraction
                ),
            ));
        }
        Ok(())
    }
}

/// Amplitude of the class texture sinusoid, in image units.
const TEXTURE_AMPLITUDE: f64 = 0.08;
/// Standard deviation of the additive pixel noise, in image units.
const NOISE_STD: f64 = 0.05;

/// Generates `count` deterministic synthetic samples.
///
/// Classes come from the first `cfg.classes` active entries of `palette`;
/// unknown pixels carry the palette's unknown index and `valid = false`.
pub fn synth_generate(
    count: usize,
    cfg: &SynthConfig,
    palette: &Palette,
    seed: u64,
) -> Result<Vec<SegSample>> {
    cfg.validate(palette)?;
    (0..count)
        .map(|i| generate_one(cfg, palette, seed, i as u64))
        .collect()
}

fn generate_one(cfg: &SynthConfig, palette: &Palette, seed: u64, index: u64) -> Result<SegSample> {
    let mut rng = derive_rng(seed, "synth", &[index]);
    let (h, w, k) = (cfg.height, cfg.width, cfg.classes);
    let pixels = h * w;

    // Voronoi sites, assigned classes round-robin so every class owns at
    // least one site.
    let sites = k.max(6);
    let mut site_pos = Vec::with_capacity(sites);
    for _ in 0..sites {
        let y = rng.random_range(0..h);
        let x = rng.random_range(0..w);
        site_pos.push((y as f64, x as f64));
    }

    // One texture phase per class.
    let phases: Vec<f64> = (0..k)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();

    let mut mask = vec![0u8; pixels];
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (s, &(sy, sx)) in site_pos.iter().enumerate() {
                let (dy, dx) = (y as f64 - sy, x as f64 - sx);
                let d = dy * dy + dx * dx;
                if d < best_d {
                    best_d = d;
                    best = s;
                }
            }
            mask[y * w + x] = (best % k) as u8;
        }
    }

    // Render: palette base color + class sinusoid + noise, clamped to [0,1].
    // Noise is drawn in planar (channel, row, column) order.
    let mut image = vec![0.0f32; 3 * pixels];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let class = mask[y * w + x] as usize;
                let base = palette.color(class).expect("class < palette size")[c] as f64 / 255.0;
                let tex = texture(class, y, x, phases[class]);
                let noise = NOISE_STD * rng.sample::<f64, _>(StandardNormal);
                let v = base + tex + noise;
                image[c * pixels + y * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }

    // Blank irregular blobs to unknown until the target fraction is met.
    let unknown = palette.unknown_index() as u8;
    let target = (cfg.unknown_fraction * pixels as f64).round() as usize;
    let mut blanked = 0usize;
    let mut attempts = 0usize;
    while blanked < target && attempts < 10_000 {
        attempts += 1;
        let cy = rng.random_range(0..h) as f64;
        let cx = rng.random_range(0..w) as f64;
        let radius = rng.random_range(2.0..6.0f64);
        let wobble = rng.random_range(0.0..std::f64::consts::TAU);
        let reach = (radius * 1.4).ceil() as isize;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (y, x) = (cy as isize + dy, cx as isize + dx);
                if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
                    continue;
                }
                let (fy, fx) = (y as f64 - cy, x as f64 - cx);
                let dist = (fy * fy + fx * fx).sqrt();
                let angle = fy.atan2(fx);
                let edge = radius * (1.0 + 0.35 * (3.0 * angle + wobble).sin());
                let p = y as usize * w + x as usize;
                if dist <= edge && mask[p] != unknown {
                    mask[p] = unknown;
                    blanked += 1;
                }
            }
        }
    }

    let valid = mask.iter().map(|&m| m != unknown).collect();
    SegSample::new(h, w, image, mask, valid)
}

/// Class texture: a plane wave whose frequency pair is class-specific.
fn texture(class: usize, y: usize, x: usize, phase: f64) -> f64 {
    let fx = (1 + class) as f64 / 16.0;
    let fy = (2 + class) as f64 / 24.0;
    TEXTURE_AMPLITUDE * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + phase).sin()
}
