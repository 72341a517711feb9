//! Grid and flow containers plus their on-disk formats.
//!
//! Coordinates follow one convention everywhere: `x` indexes columns in
//! `[0, W-1]`, `y` indexes rows in `[0, H-1]`, and the integer coordinate
//! `(x, y)` is the sample location of pixel `[y][x]` (origin at pixel centres).

mod flo;
mod pnm;

pub use flo::{decode_flo, encode_flo, read_flo, write_flo};
pub use pnm::{decode_pnm, encode_pnm, read_pnm, write_pnm};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `H x W x C` array of scalars stored row-major as `[y][x][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T = f32> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid data".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![T::zero(); height * width * channels])
    }

    /// Builds a grid from `f(y, x, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// All channels of pixel `[y][x]`.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Pixel lookup with indices clamped into the lattice.
    #[inline]
    pub fn pixel_clamped(&self, y: i64, x: i64) -> &[T] {
        let yc = y.clamp(0, self.height as i64 - 1) as usize;
        let xc = x.clamp(0, self.width as i64 - 1) as usize;
        self.pixel(yc, xc)
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn cast<U: Scalar>(&self) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    /// Copy of the rectangle `[y0, y0+h) x [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::ShapeMismatch(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Self::from_fn(h, w, self.channels, |y, x, c| self.get(y0 + y, x0 + x, c))
    }

    /// Wraps already validated storage. Callers guarantee shape and finiteness.
    pub(crate) fn from_parts(height: usize, width: usize, channels: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }
}

/// Per-pixel displacement `(u, v) = (dx, dy)` into the reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T = f32> {
    height: usize,
    width: usize,
    u: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> FlowField<T> {
    pub fn new(height: usize, width: usize, u: Vec<T>, v: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "flow dimensions must be positive, got {height}x{width}"
            )));
        }
        if u.len() != height * width || v.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "flow {height}x{width} needs {} components per axis, got u={} v={}",
                height * width,
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(v.iter()).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("flow field".into()));
        }
        Ok(Self { height, width, u, v })
    }

    pub fn constant(height: usize, width: usize, dx: T, dy: T) -> Result<Self> {
        Self::new(height, width, vec![dx; height * width], vec![dy; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::constant(height, width, T::zero(), T::zero())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn u(&self) -> &[T] {
        &self.u
    }

    pub fn v(&self) -> &[T] {
        &self.v
    }

    /// Displacement `(dx, dy)` at pixel `[y][x]`.
    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (T, T) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn matches<U>(&self, grid: &Grid<U>) -> bool {
        self.height == grid.height && self.width == grid.width
    }

    pub fn cast<U: Scalar>(&self) -> FlowField<U> {
        let conv = |s: &[T]| s.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect();
        FlowField {
            height: self.height,
            width: self.width,
            u: conv(&self.u),
            v: conv(&self.v),
        }
    }
}

/// Continuous position `(a, b)`: `a` along columns, `b` along rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousCoord<T = f32> {
    pub a: T,
    pub b: T,
}

impl<T: Scalar> ContinuousCoord<T> {
    pub fn new(a: T, b: T) -> Self {
        Self { a, b }
    }
}
