//! Synthetic traversals: a reference set of distinct places and a perturbed
//! query set (circular horizontal shift, brightness offset, Gaussian noise).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imaging::{write_pgm, RawFrame};
use crate::seed::{derive_seed, substream};

pub const SYNTH_WIDTH: usize = 128;
pub const SYNTH_HEIGHT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub places: usize,
    /// Standard deviation of the additive noise as a fraction of 255.
    pub noise_sigma: f64,
    /// Additive brightness offset as a fraction of 255.
    pub brightness_shift: f64,
    /// Circular horizontal shift in pixels, positive to the right.
    pub shift_px: i32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            places: 50,
            noise_sigma: 0.0,
            brightness_shift: 0.0,
            shift_px: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.places < 2 {
            return Err(Error::TooFewPlaces(self.places));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("noise sigma {} must be >= 0", self.noise_sigma)));
        }
        if !self.brightness_shift.is_finite() {
            return Err(Error::invalid("brightness shift must be finite"));
        }
        if self.shift_px.unsigned_abs() as usize >= SYNTH_WIDTH / 2 {
            return Err(Error::invalid(format!(
                "shift {} must satisfy |shift| < {}",
                self.shift_px,
                SYNTH_WIDTH / 2
            )));
        }
        Ok(())
    }
}

fn compose(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let (w, h) = (SYNTH_WIDTH as f64, SYNTH_HEIGHT as f64);
    let base = rng.random_range(40.0..215.0);
    let gx = rng.random_range(-1.2..1.2);
    let gy = rng.random_range(-1.5..1.5);
    let mut canvas: Vec<f64> = (0..SYNTH_WIDTH * SYNTH_HEIGHT)
        .map(|i| {
            let (x, y) = ((i % SYNTH_WIDTH) as f64, (i / SYNTH_WIDTH) as f64);
            base + gx * (x - w / 2.0) + gy * (y - h / 2.0)
        })
        .collect();

    let rects = rng.random_range(6..12);
    for _ in 0..rects {
        let rw = rng.random_range(8..64);
        let rh = rng.random_range(6..40);
        let x0 = rng.random_range(0..SYNTH_WIDTH - rw);
        let y0 = rng.random_range(0..SYNTH_HEIGHT - rh);
        let level = rng.random_range(0.0..255.0);
        // Half of the rectangles carry their own horizontal ramp.
        let slope = if rng.random_bool(0.5) { rng.random_range(-3.0..3.0) } else { 0.0 };
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                canvas[y * SYNTH_WIDTH + x] = level + slope * (x - x0) as f64;
            }
        }
    }
    canvas.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
}

/// `cfg.places` pairwise distinct 128x64 gray frames.
pub fn generate_reference(cfg: &SynthConfig) -> Result<Vec<RawFrame>> {
    cfg.validate()?;
    let mut seen = HashSet::new();
    let mut frames = Vec::with_capacity(cfg.places);
    for place in 0..cfg.places {
        let mut attempt = 0u64;
        let pixels = loop {
            let mut rng = ChaCha8Rng::seed_from_u64(substream(derive_seed(cfg.seed, place as u64), attempt));
            let px = compose(&mut rng);
            if seen.insert(px.clone()) {
                break px;
            }
            attempt += 1;
        };
        frames.push(RawFrame::gray(SYNTH_WIDTH, SYNTH_HEIGHT, pixels)?);
    }
    Ok(frames)
}

/// Perturbed copy of every reference frame: circular shift, then brightness
/// offset and Gaussian noise, rounded and clamped to `[0, 255]`.
pub fn generate_query(reference: &[RawFrame], cfg: &SynthConfig) -> Result<Vec<RawFrame>> {
    if reference.is_empty() {
        return Err(Error::Empty("reference frames"));
    }
    cfg.validate()?;
    let noise = if cfg.noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sigma * 255.0).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let offset = cfg.brightness_shift * 255.0;

    reference
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            if frame.channels() != 1 {
                return Err(Error::invalid("synthetic queries need gray reference frames"));
            }
            let (w, h) = (frame.width(), frame.height());
            let shift = (cfg.shift_px as i64).rem_euclid(w as i64) as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(substream(derive_seed(cfg.seed, i as u64), 0x5155));
            let mut pixels = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    let src = frame.at((x + w - shift) % w, y) as f64;
                    let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                    pixels.push((src + offset + n).round().clamp(0.0, 255.0) as u8);
                }
            }
            RawFrame::gray(w, h, pixels)
        })
        .collect()
}

/// Writes frames as `000000.pgm`, `000001.pgm`, ... so name order is frame order.
pub fn write_frames(dir: &Path, frames: &[RawFrame]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(format!("{i:06}.pgm"));
            write_pgm(&path, f)?;
            Ok(path)
        })
        .collect()
}
