//! Sub-pixel resampling and backward warping.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ContinuousCoord, FlowField, Grid};
use crate::scalar::{lit, Scalar};

/// How lookups outside the lattice are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryPolicy {
    /// Out-of-range indices map to the nearest valid row/column.
    #[default]
    ClampToEdge,
}

impl BoundaryPolicy {
    #[inline]
    fn index(self, i: i64, len: usize) -> usize {
        match self {
            BoundaryPolicy::ClampToEdge => i.clamp(0, len as i64 - 1) as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResampleMethod {
    Nearest,
    Bilinear,
    Bicubic,
}

impl ResampleMethod {
    pub const ALL: [ResampleMethod; 3] = [Self::Nearest, Self::Bilinear, Self::Bicubic];

    pub fn name(self) -> &'static str {
        match self {
            Self::Nearest => "nearest",
            Self::Bilinear => "bilinear",
            Self::Bicubic => "bicubic",
        }
    }

    /// Side length of the square support read per sample.
    pub fn support(self) -> usize {
        match self {
            Self::Nearest => 1,
            Self::Bilinear => 2,
            Self::Bicubic => 4,
        }
    }
}

impl fmt::Display for ResampleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nearest" | "nn" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            "bicubic" => Ok(Self::Bicubic),
            other => Err(Error::InvalidArgument(format!("unknown resampling method '{other}'"))),
        }
    }
}

/// Keys cubic convolution parameter.
pub const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`.
#[inline]
pub fn keys_kernel<T: Scalar>(x: T) -> T {
    let a: T = lit(KEYS_A);
    let t = x.abs();
    let one = T::one();
    let two = lit::<T>(2.0);
    if t <= one {
        ((a + two) * t - (a + lit(3.0))) * t * t + one
    } else if t < two {
        ((a * t - lit::<T>(5.0) * a) * t + lit::<T>(8.0) * a) * t - lit::<T>(4.0) * a
    } else {
        T::zero()
    }
}

/// Weights for the taps at offsets `-1, 0, 1, 2` from `floor(a)`, given the
/// fractional part `t` of `a`.
#[inline]
pub fn bicubic_weights<T: Scalar>(t: T) -> [T; 4] {
    let one = T::one();
    [
        keys_kernel(one + t),
        keys_kernel(t),
        keys_kernel(one - t),
        keys_kernel(lit::<T>(2.0) - t),
    ]
}

/// Weights for the taps at offsets `0, 1` from `floor(a)`.
#[inline]
pub fn bilinear_weights<T: Scalar>(t: T) -> [T; 2] {
    [T::one() - t, t]
}

#[inline]
fn split<T: Scalar>(a: T) -> (i64, T) {
    let f = a.floor();
    (f.to_i64().unwrap_or(0), a - f)
}

/// Writes the nearest-lattice value into `out`. Ties round half up per axis.
pub fn sample_nearest_into<T: Scalar>(
    grid: &Grid<T>,
    coord: ContinuousCoord<T>,
    boundary: BoundaryPolicy,
    out: &mut [T],
) {
    let half = lit::<T>(0.5);
    let x = (coord.a + half).floor().to_i64().unwrap_or(0);
    let y = (coord.b + half).floor().to_i64().unwrap_or(0);
    let px = grid.pixel(boundary.index(y, grid.height()), boundary.index(x, grid.width()));
    out.copy_from_slice(px);
}

pub fn sample_bilinear_into<T: Scalar>(
    grid: &Grid<T>,
    coord: ContinuousCoord<T>,
    boundary: BoundaryPolicy,
    out: &mut [T],
) {
    let (x0, tx) = split(coord.a);
    let (y0, ty) = split(coord.b);
    let wx = bilinear_weights(tx);
    let wy = bilinear_weights(ty);
    separable(grid, x0, y0, &wx, &wy, boundary, out);
}

pub fn sample_bicubic_into<T: Scalar>(
    grid: &Grid<T>,
    coord: ContinuousCoord<T>,
    boundary: BoundaryPolicy,
    out: &mut [T],
) {
    let (x0, tx) = split(coord.a);
    let (y0, ty) = split(coord.b);
    let wx = bicubic_weights(tx);
    let wy = bicubic_weights(ty);
    separable(grid, x0 - 1, y0 - 1, &wx, &wy, boundary, out);
}

/// `out[c] = sum_j wy[j] * sum_i wx[i] * X[y0+j][x0+i][c]`.
#[inline]
fn separable<T: Scalar>(grid: &Grid<T>, x0: i64, y0: i64, wx: &[T], wy: &[T], boundary: BoundaryPolicy, out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::zero());
    for (j, &wyj) in wy.iter().enumerate() {
        let yy = boundary.index(y0 + j as i64, grid.height());
        for (c, o) in out.iter_mut().enumerate() {
            let mut row = T::zero();
            for (i, &wxi) in wx.iter().enumerate() {
                let xx = boundary.index(x0 + i as i64, grid.width());
                row += wxi * grid.get(yy, xx, c);
            }
            *o += wyj * row;
        }
    }
}

pub fn sample_into<T: Scalar>(
    grid: &Grid<T>,
    coord: ContinuousCoord<T>,
    method: ResampleMethod,
    boundary: BoundaryPolicy,
    out: &mut [T],
) {
    match method {
        ResampleMethod::Nearest => sample_nearest_into(grid, coord, boundary, out),
        ResampleMethod::Bilinear => sample_bilinear_into(grid, coord, boundary, out),
        ResampleMethod::Bicubic => sample_bicubic_into(grid, coord, boundary, out),
    }
}

/// Value vector (length `C`) of `grid` at the continuous position `coord`.
pub fn sample<T: Scalar>(
    grid: &Grid<T>,
    coord: ContinuousCoord<T>,
    method: ResampleMethod,
    boundary: BoundaryPolicy,
) -> Vec<T> {
    let mut out = vec![T::zero(); grid.channels()];
    sample_into(grid, coord, method, boundary, &mut out);
    out
}

pub fn sample_nearest<T: Scalar>(grid: &Grid<T>, coord: ContinuousCoord<T>, boundary: BoundaryPolicy) -> Vec<T> {
    sample(grid, coord, ResampleMethod::Nearest, boundary)
}

pub fn sample_bilinear<T: Scalar>(grid: &Grid<T>, coord: ContinuousCoord<T>, boundary: BoundaryPolicy) -> Vec<T> {
    sample(grid, coord, ResampleMethod::Bilinear, boundary)
}

pub fn sample_bicubic<T: Scalar>(grid: &Grid<T>, coord: ContinuousCoord<T>, boundary: BoundaryPolicy) -> Vec<T> {
    sample(grid, coord, ResampleMethod::Bicubic, boundary)
}

/// Aligned frame `out[y][x] = reference(x + dx, y + dy)`.
pub fn backward_warp<T: Scalar>(
    reference: &Grid<T>,
    flow: &FlowField<T>,
    method: ResampleMethod,
    boundary: BoundaryPolicy,
) -> Result<Grid<T>> {
    if !flow.matches(reference) {
        return Err(Error::ShapeMismatch(format!(
            "flow {}x{} vs reference {}x{}",
            flow.height(),
            flow.width(),
            reference.height(),
            reference.width()
        )));
    }
    let (w, c) = (reference.width(), reference.channels());
    let mut data = vec![T::zero(); reference.height() * w * c];
    data.par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        for (x, out) in row.chunks_exact_mut(c).enumerate() {
            let (dx, dy) = flow.at(y, x);
            let coord = ContinuousCoord::new(T::of_usize(x) + dx, T::of_usize(y) + dy);
            sample_into(reference, coord, method, boundary, out);
        }
    });
    Ok(Grid::from_parts(reference.height(), w, c, data))
}
