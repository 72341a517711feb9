//! PSNR, SSIM and sinusoid-amplitude attenuation between two grids.

use std::f64::consts::PI;

use resalign::{Grid, Scalar};

use anyhow::{bail, ensure, Result};

/// SSIM window side.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes<T: Scalar>(a: &Grid<T>, b: &Grid<T>) -> Result<()> {
    ensure!(
        a.same_shape(b),
        "shape mismatch: {}x{}x{} vs {}x{}x{}",
        a.height(),
        a.width(),
        a.channels(),
        b.height(),
        b.width(),
        b.channels()
    );
    Ok(())
}

pub fn mse<T: Scalar>(a: &Grid<T>, b: &Grid<T>) -> Result<f64> {
    check_shapes(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(peak^2 / mse)`; identical grids give `+inf`.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn psnr<T: Scalar>(a: &Grid<T>, b: &Grid<T>, peak: f64) -> Result<f64> {
    ensure!(peak > 0.0, "peak must be positive, got {peak}");
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let taps: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    let norm: Vec<f64> = taps.iter().map(|t| t / total).collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for &wy in &norm {
        for &wx in &norm {
            w.push(wy * wx);
        }
    }
    w
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over
/// valid window positions and then over channels.
pub fn ssim<T: Scalar>(a: &Grid<T>, b: &Grid<T>, peak: f64) -> Result<f64> {
    check_shapes(a, b)?;
    ensure!(peak > 0.0, "peak must be positive, got {peak}");
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        bail!(
            "grid {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            a.height(),
            a.width()
        );
    }
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let window = gaussian_window();
    let rows = a.height() - SSIM_WINDOW + 1;
    let cols = a.width() - SSIM_WINDOW + 1;
    let mut per_channel = 0.0;
    for c in 0..a.channels() {
        let mut total = 0.0;
        for y0 in 0..rows {
            for x0 in 0..cols {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let w = window[dy * SSIM_WINDOW + dx];
                        let va = a.get(y0 + dy, x0 + dx, c).to_f64_lossy();
                        let vb = b.get(y0 + dy, x0 + dx, c).to_f64_lossy();
                        ma += w * va;
                        mb += w * vb;
                        saa += w * va * va;
                        sbb += w * vb * vb;
                        sab += w * va * vb;
                    }
                }
                let var_a = saa - ma * ma;
                let var_b = sbb - mb * mb;
                let cov = sab - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            }
        }
        per_channel += total / (rows * cols) as f64;
    }
    Ok(per_channel / a.channels() as f64)
}

/// Least-squares fit of `a sin(phi) + b cos(phi) + c` with
/// `phi = 2 pi (fx x + fy y)` over the interior of one channel; returns `hypot(a, b)`.
fn fitted_amplitude<T: Scalar>(grid: &Grid<T>, channel: usize, freq: (f64, f64), margin: usize) -> Option<f64> {
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for y in margin..grid.height().saturating_sub(margin) {
        for x in margin..grid.width().saturating_sub(margin) {
            let phi = 2.0 * PI * (freq.0 * x as f64 + freq.1 * y as f64);
            let basis = [phi.sin(), phi.cos(), 1.0];
            let v = grid.get(y, x, channel).to_f64_lossy();
            for i in 0..3 {
                atb[i] += basis[i] * v;
                for j in 0..3 {
                    ata[i][j] += basis[i] * basis[j];
                }
            }
        }
    }
    let sol = solve3(ata, atb)?;
    Some(sol[0].hypot(sol[1]))
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    let scale = m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() <= 1e-10 * scale {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            let pivot_row = m[col];
            for (dst, src) in m[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= f * src;
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / m[row][row];
    }
    Some(x)
}

/// Ratio of fitted sinusoid amplitudes `aligned / target` at `freq`, averaged
/// over channels. `NaN` when the fit is degenerate.
pub fn attenuation_ratio<T: Scalar>(
    aligned: &Grid<T>,
    target: &Grid<T>,
    freq: (f64, f64),
    margin: usize,
) -> Result<f64> {
    check_shapes(aligned, target)?;
    let mut total = 0.0;
    for c in 0..aligned.channels() {
        match (
            fitted_amplitude(aligned, c, freq, margin),
            fitted_amplitude(target, c, freq, margin),
        ) {
            (Some(a), Some(t)) if t > 0.0 => total += a / t,
            _ => return Ok(f64::NAN),
        }
    }
    Ok(total / aligned.channels() as f64)
}
