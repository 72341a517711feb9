//! Frequency behaviour of the nearest and bilinear interpolators.
//!
//! Two views are provided: the continuous reconstruction-kernel responses
//! (`|sinc|` for nearest, `sinc^2` for bilinear) and the exact transfer
//! function that a fixed sub-pixel shift applies to a sampled sinusoid, which
//! [`measure_attenuation`] recovers empirically.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ContinuousCoord, Grid};
use crate::resample::{sample_into, BoundaryPolicy, ResampleMethod};

/// Samples excluded at each end before the amplitude fit.
pub const FIT_MARGIN: usize = 4;

/// Normalized sinc, `sin(pi x) / (pi x)` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

fn check_method(method: ResampleMethod) -> Result<()> {
    match method {
        ResampleMethod::Nearest | ResampleMethod::Bilinear => Ok(()),
        ResampleMethod::Bicubic => Err(Error::Unsupported("no closed-form response for bicubic".into())),
    }
}

/// Magnitude of the reconstruction kernel's Fourier transform at `f / f_s`.
pub fn kernel_response(method: ResampleMethod, f_over_fs: f64) -> Result<f64> {
    check_method(method)?;
    if f_over_fs.is_nan() || f_over_fs < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "frequency must be >= 0, got {f_over_fs}"
        )));
    }
    let s = sinc(f_over_fs);
    Ok(match method {
        ResampleMethod::Nearest => s.abs(),
        _ => s * s,
    })
}

/// Complex gain applied to `exp(i 2 pi f n)` by resampling at `n + shift`,
/// expressed relative to the ideal shifted signal's reference tap at `n`.
///
/// Bilinear: `(1 - d) + d e^{-i 2 pi f}`. Nearest: `e^{-i 2 pi f round(d)}`.
pub fn shift_transfer(method: ResampleMethod, shift: f64, f_over_fs: f64) -> Result<Complex64> {
    check_method(method)?;
    if !(0.0..1.0).contains(&shift) {
        return Err(Error::InvalidArgument(format!("shift must lie in [0, 1), got {shift}")));
    }
    let theta = -2.0 * PI * f_over_fs;
    Ok(match method {
        ResampleMethod::Nearest => {
            let r = (shift + 0.5).floor();
            Complex64::from_polar(1.0, theta * r)
        }
        _ => Complex64::new(1.0 - shift, 0.0) + Complex64::from_polar(shift, theta),
    })
}

/// Least-squares amplitude of `a sin(2 pi f n) + b cos(2 pi f n)` fitted to
/// `signal[n]` over `n in range`.
pub fn fit_amplitude(signal: &[f64], freq: f64, range: std::ops::Range<usize>) -> Result<f64> {
    let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for n in range {
        let ph = 2.0 * PI * freq * n as f64;
        let (s, c) = ph.sin_cos();
        let y = signal[n];
        ss += s * s;
        sc += s * c;
        cc += c * c;
        ys += y * s;
        yc += y * c;
    }
    let det = ss * cc - sc * sc;
    if det.abs() <= 1e-12 * (ss * cc).max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument("degenerate amplitude fit".into()));
    }
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    Ok(a.hypot(b))
}

/// Resamples `sin(2 pi f n)` at `n + shift` with `method` and returns the
/// fitted amplitude relative to the original unit amplitude.
pub fn measure_attenuation(signal_freq: f64, shift: f64, method: ResampleMethod, length: usize) -> Result<f64> {
    if !(signal_freq > 0.0 && signal_freq < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "signal frequency must lie in (0, 0.5), got {signal_freq}"
        )));
    }
    if length < 64 {
        return Err(Error::InvalidArgument(format!("length must be >= 64, got {length}")));
    }
    if !shift.is_finite() {
        return Err(Error::NonFinite("shift".into()));
    }
    let original: Vec<f64> = (0..length).map(|n| (2.0 * PI * signal_freq * n as f64).sin()).collect();
    let grid = Grid::new(1, length, 1, original)?;
    let mut resampled = vec![0.0; length];
    for (n, out) in resampled.iter_mut().enumerate() {
        let coord = ContinuousCoord::new(n as f64 + shift, 0.0);
        sample_into(
            &grid,
            coord,
            method,
            BoundaryPolicy::ClampToEdge,
            std::slice::from_mut(out),
        );
    }
    let interior = FIT_MARGIN..length - FIT_MARGIN;
    let reference = fit_amplitude(grid.data(), signal_freq, interior.clone())?;
    if reference == 0.0 {
        return Err(Error::InvalidArgument("zero-variance reference signal".into()));
    }
    Ok(fit_amplitude(&resampled, signal_freq, interior)? / reference)
}
