//! Sinusoidal positional encoding and integer/fractional offset splitting.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ratio between the fastest and slowest angular speed (`100 pi / 2 pi`).
const SPEED_SPAN: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingConfig {
    /// Number of frequency bands `D`; the encoding of a 2-D point has `4D` entries.
    pub bands: usize,
    /// Base period constant. Kept for reference; the speeds follow the fixed
    /// geometric schedule from `2 pi` to `100 pi`.
    pub period_constant: f64,
}

impl EncodingConfig {
    pub const DEFAULT_PERIOD_CONSTANT: f64 = 0.01;

    pub fn new(bands: usize) -> Result<Self> {
        if bands == 0 {
            return Err(Error::InvalidArgument("encoding needs at least one band".into()));
        }
        Ok(Self {
            bands,
            period_constant: Self::DEFAULT_PERIOD_CONSTANT,
        })
    }

    /// Encoding width for a 2-D point.
    pub fn dim(&self) -> usize {
        4 * self.bands
    }

    /// `omega_k = 2 pi * 50^(k / (D-1))`, or just `2 pi` when `D = 1`.
    pub fn angular_speeds(&self) -> Vec<f64> {
        if self.bands == 1 {
            return vec![2.0 * PI];
        }
        let last = (self.bands - 1) as f64;
        (0..self.bands)
            .map(|k| 2.0 * PI * SPEED_SPAN.powf(k as f64 / last))
            .collect()
    }
}

/// Encoder with the angular speeds resolved once.
#[derive(Debug, Clone)]
pub struct PositionalEncoder<T> {
    speeds: Vec<T>,
}

impl<T: Scalar> PositionalEncoder<T> {
    pub fn new(config: &EncodingConfig) -> Self {
        Self {
            speeds: config.angular_speeds().into_iter().map(T::from_f64_lossy).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        4 * self.speeds.len()
    }

    pub fn max_speed(&self) -> T {
        *self.speeds.last().expect("at least one band")
    }

    /// Writes `[sin(w px), sin(w py), cos(w px), cos(w py)]` per band into `out`.
    pub fn encode_into(&self, p: [T; 2], out: &mut [T]) {
        debug_assert_eq!(out.len(), self.dim());
        for (chunk, &w) in out.chunks_exact_mut(4).zip(&self.speeds) {
            let (sx, cx) = (w * p[0]).sin_cos();
            let (sy, cy) = (w * p[1]).sin_cos();
            chunk[0] = sx;
            chunk[1] = sy;
            chunk[2] = cx;
            chunk[3] = cy;
        }
    }

    pub fn encode(&self, p: [T; 2]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.encode_into(p, &mut out);
        out
    }
}

/// `gamma(p)`, a point on the `4D`-dimensional sphere of radius `sqrt(2D)`.
pub fn positional_encoding<T: Scalar>(p: [T; 2], config: &EncodingConfig) -> Vec<T> {
    PositionalEncoder::new(config).encode(p)
}

/// `x + gamma(p)`; the feature width must equal `4D`.
pub fn encode_feature<T: Scalar>(x: &[T], p: [T; 2], config: &EncodingConfig) -> Result<Vec<T>> {
    if x.len() != config.dim() {
        return Err(Error::ShapeMismatch(format!(
            "feature width {} does not match encoding width {}",
            x.len(),
            config.dim()
        )));
    }
    let mut out = positional_encoding(p, config);
    out.iter_mut().zip(x).for_each(|(o, &v)| *o += v);
    Ok(out)
}

/// Integral window anchor `z` and fractional residue `d` of a displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetParts<T> {
    pub z: (i64, i64),
    pub d: (T, T),
}

fn split_axis<T: Scalar>(delta: T) -> (i64, T) {
    let f = delta.floor();
    let d = delta - f;
    let z = f.to_i64().expect("finite displacement");
    // A tiny negative delta can round `delta - floor` up to exactly 1.
    if d >= T::one() {
        (z + 1, T::zero())
    } else {
        (z, d)
    }
}

/// `z = floor(delta)`, `d = delta - z`, so every `d` lies in `[0, 1)`.
///
/// `z + d == delta` holds exactly whenever the fractional bits of `delta` fit
/// in the mantissa of `d`; small negative displacements with finer bits are
/// rounded.
pub fn decompose_offset<T: Scalar>(delta: (T, T)) -> OffsetParts<T> {
    let (zx, dx) = split_axis(delta.0);
    let (zy, dy) = split_axis(delta.1);
    OffsetParts {
        z: (zx, zy),
        d: (dx, dy),
    }
}
