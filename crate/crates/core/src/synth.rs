//! Band-limited analytic scenes with exact sub-pixel ground truth.
//!
//! A scene is a per-channel sum of 2-D sinusoids, so it can be evaluated at any
//! continuous position. Rendering at `(x + s_x, y + s_y)` yields the exact
//! shifted frame without any resampling.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid};
use crate::scalar::Scalar;
use crate::train::AlignInstance;

/// `amplitude * sin(2 pi (freq_x a + freq_y b) + phase)`, frequencies in cycles/pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub freq_x: f64,
    pub freq_y: f64,
    pub phase: f64,
}

impl Sinusoid {
    pub fn new(amplitude: f64, freq_x: f64, freq_y: f64, phase: f64) -> Self {
        Self {
            amplitude,
            freq_x,
            freq_y,
            phase,
        }
    }

    #[inline]
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        self.amplitude * (2.0 * PI * (self.freq_x * a + self.freq_y * b) + self.phase).sin()
    }

    fn below_nyquist(&self) -> bool {
        self.freq_x.abs() < 0.5 && self.freq_y.abs() < 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelSpec {
    pub offset: f64,
    pub sinusoids: Vec<Sinusoid>,
}

/// Low-pass random field drawn as a seeded sum of sinusoids whose per-axis
/// frequencies stay below `cutoff`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothNoise {
    pub components: usize,
    pub cutoff: f64,
    /// Total amplitude, split evenly in power across components.
    pub amplitude: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticImage {
    channels: Vec<ChannelSpec>,
}

impl AnalyticImage {
    pub fn new(channels: Vec<ChannelSpec>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidArgument("scene needs at least one channel".into()));
        }
        for (c, spec) in channels.iter().enumerate() {
            if let Some(bad) = spec.sinusoids.iter().find(|s| !s.below_nyquist()) {
                return Err(Error::InvalidArgument(format!(
                    "channel {c}: frequency ({}, {}) is not below 0.5 cycles/pixel",
                    bad.freq_x, bad.freq_y
                )));
            }
            let finite = spec.offset.is_finite()
                && spec
                    .sinusoids
                    .iter()
                    .all(|s| [s.amplitude, s.freq_x, s.freq_y, s.phase].iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::NonFinite(format!("scene channel {c}")));
            }
        }
        Ok(Self { channels })
    }

    /// `channels` copies of one sinusoid, channel `c` phase-advanced by
    /// `c * phase_step`.
    pub fn phase_stepped(channels: usize, offset: f64, base: Sinusoid, phase_step: f64) -> Result<Self> {
        Self::new(
            (0..channels)
                .map(|c| ChannelSpec {
                    offset,
                    sinusoids: vec![Sinusoid {
                        phase: base.phase + c as f64 * phase_step,
                        ..base
                    }],
                })
                .collect(),
        )
    }

    /// Appends an independent smooth random field to every channel.
    pub fn add_smooth_noise(&mut self, noise: SmoothNoise) -> Result<()> {
        if !(noise.cutoff > 0.0 && noise.cutoff <= 0.5) {
            return Err(Error::InvalidArgument(format!(
                "noise cutoff {} outside (0, 0.5]",
                noise.cutoff
            )));
        }
        if noise.components == 0 {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let amp = noise.amplitude / (noise.components as f64).sqrt();
        let lim = noise.cutoff * (1.0 - 1e-9);
        for spec in &mut self.channels {
            for _ in 0..noise.components {
                spec.sinusoids.push(Sinusoid {
                    amplitude: amp * rng.gen_range(0.5..1.0),
                    freq_x: rng.gen_range(-lim..lim),
                    freq_y: rng.gen_range(-lim..lim),
                    phase: rng.gen_range(0.0..2.0 * PI),
                });
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &ChannelSpec {
        &self.channels[c]
    }

    pub fn evaluate(&self, c: usize, a: f64, b: f64) -> f64 {
        let spec = &self.channels[c];
        spec.offset + spec.sinusoids.iter().map(|s| s.eval(a, b)).sum::<f64>()
    }

    /// Largest-amplitude component across channels, if any.
    pub fn dominant(&self) -> Option<Sinusoid> {
        self.channels.iter().flat_map(|c| c.sinusoids.iter()).copied().fold(
            None,
            |best: Option<Sinusoid>, s| match best {
                Some(b) if b.amplitude.abs() >= s.amplitude.abs() => Some(b),
                _ => Some(s),
            },
        )
    }
}

/// `Grid[y][x][c] = image_c(x + shift_x, y + shift_y)`.
pub fn render<T: Scalar>(image: &AnalyticImage, height: usize, width: usize, shift: (f64, f64)) -> Result<Grid<T>> {
    render_at(image, height, width, (0.0, 0.0), shift)
}

/// Like [`render`], with the lattice origin placed at `origin` in scene coordinates.
pub fn render_at<T: Scalar>(
    image: &AnalyticImage,
    height: usize,
    width: usize,
    origin: (f64, f64),
    shift: (f64, f64),
) -> Result<Grid<T>> {
    if !(shift.0.is_finite() && shift.1.is_finite() && origin.0.is_finite() && origin.1.is_finite()) {
        return Err(Error::NonFinite("render shift".into()));
    }
    Grid::from_fn(height, width, image.channels(), |y, x, c| {
        let a = origin.0 + x as f64 + shift.0;
        let b = origin.1 + y as f64 + shift.1;
        T::from_f64_lossy(image.evaluate(c, a, b))
    })
}

/// Reference, shifted current frame, constant flow and ideal target.
pub fn make_pair<T: Scalar>(
    image: &AnalyticImage,
    height: usize,
    width: usize,
    shift: (f64, f64),
) -> Result<AlignInstance<T>> {
    make_pair_at(image, height, width, (0.0, 0.0), shift)
}

pub fn make_pair_at<T: Scalar>(
    image: &AnalyticImage,
    height: usize,
    width: usize,
    origin: (f64, f64),
    shift: (f64, f64),
) -> Result<AlignInstance<T>> {
    let limit = height.min(width) as f64 / 4.0;
    if !(shift.0.abs() < limit && shift.1.abs() < limit) {
        return Err(Error::InvalidArgument(format!(
            "shift ({}, {}) must stay below min(H, W)/4 = {limit}",
            shift.0, shift.1
        )));
    }
    let reference = render_at(image, height, width, origin, (0.0, 0.0))?;
    let current = render_at(image, height, width, origin, shift)?;
    let flow = FlowField::constant(height, width, T::from_f64_lossy(shift.0), T::from_f64_lossy(shift.1))?;
    Ok(AlignInstance {
        target: current.clone(),
        current,
        reference,
        flow,
    })
}
