//! Implicit alignment by window-based cross-attention.
//!
//! For pixel `[y][x]` with displacement `(dx, dy)`:
//!
//! 1. `z = floor(delta)` anchors a `w x w` window of reference pixels at
//!    `(x + z_x, y + z_y)`; window offsets run over
//!    `-floor(w/2) ..= w - floor(w/2) - 1` on each axis.
//! 2. Window pixel `(i, j)` is fused with `gamma([i, j] / w)`; the current
//!    pixel is fused with `gamma([d_x, d_y] / 2w)`.
//! 3. Single linear layers produce `Q` (1 x C) and `K`, `V` (w^2 x C), which are
//!    split into heads; each head returns `softmax(Q K^T / sqrt(C/h)) V`.

mod model;

pub use model::{decode_model, encode_model, read_model, write_model, AlignModel, ParamKind, ParamSet};

use rayon::prelude::*;

use crate::encoding::{decompose_offset, PositionalEncoder};
use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid};
use crate::scalar::Scalar;

/// Window offsets `(i, j)` in row-major order (`j` outer).
pub fn window_offsets(window: usize) -> Vec<(i64, i64)> {
    let w = window as i64;
    let lo = -(w / 2);
    let hi = w - w / 2 - 1;
    (lo..=hi).flat_map(|j| (lo..=hi).map(move |i| (i, j))).collect()
}

/// Reference support for one output pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample<T> {
    /// `w^2 x C` reference features.
    pub values: Vec<T>,
    /// `w^2 x 4D` encodings `gamma([i, j] / w)`.
    pub encodings: Vec<T>,
    /// Window offsets matching the rows of `values`.
    pub offsets: Vec<(i64, i64)>,
    /// Window anchor `(x + z_x, y + z_y)`.
    pub anchor: (i64, i64),
}

/// Current-frame pixel and its decimal-offset encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySample<T> {
    pub value: Vec<T>,
    /// `gamma([d_x, d_y] / 2w)`.
    pub encoding: Vec<T>,
}

impl<T: Scalar> QuerySample<T> {
    pub fn from_pixel(current: &Grid<T>, x: usize, y: usize, d: (T, T), model: &AlignModel<T>) -> Self {
        let enc = PositionalEncoder::new(model.encoding());
        Self {
            value: current.pixel(y, x).to_vec(),
            encoding: enc.encode(query_position(d, model.window())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalStats {
    /// Number of query-key score evaluations, `w^2 * H * W` for a full grid.
    pub score_evals: u64,
}

fn query_position<T: Scalar>(d: (T, T), window: usize) -> [T; 2] {
    let denom = T::of_usize(2 * window);
    [d.0 / denom, d.1 / denom]
}

fn window_encodings<T: Scalar>(enc: &PositionalEncoder<T>, offsets: &[(i64, i64)], window: usize) -> Vec<T> {
    let w = T::of_usize(window);
    let mut out = vec![T::zero(); offsets.len() * enc.dim()];
    for (chunk, &(i, j)) in out.chunks_exact_mut(enc.dim()).zip(offsets) {
        enc.encode_into([T::of_i64(i) / w, T::of_i64(j) / w], chunk);
    }
    out
}

/// Gathers the clamped `w x w` reference window anchored at `(x + z_x, y + z_y)`.
pub fn extract_window<T: Scalar>(
    reference: &Grid<T>,
    x: usize,
    y: usize,
    z: (i64, i64),
    model: &AlignModel<T>,
) -> WindowSample<T> {
    let offsets = window_offsets(model.window());
    let anchor = (x as i64 + z.0, y as i64 + z.1);
    let mut values = Vec::with_capacity(offsets.len() * reference.channels());
    for &(i, j) in &offsets {
        values.extend_from_slice(reference.pixel_clamped(anchor.1 + j, anchor.0 + i));
    }
    let enc = PositionalEncoder::new(model.encoding());
    WindowSample {
        encodings: window_encodings(&enc, &offsets, model.window()),
        values,
        offsets,
        anchor,
    }
}

/// Every intermediate of one attention evaluation, kept for inspection and
/// for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace<T> {
    /// Query input `X_t (+ P_t)`, length C.
    pub query_input: Vec<T>,
    /// Key/value inputs `W_r (+ P_r)`, `n x C`.
    pub window_input: Vec<T>,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    /// Softmax weights, `heads x n`.
    pub weights: Vec<T>,
    pub output: Vec<T>,
}

impl<T: Scalar> AttentionTrace<T> {
    pub fn new(channels: usize, heads: usize, n: usize) -> Self {
        let z = T::zero();
        Self {
            query_input: vec![z; channels],
            window_input: vec![z; n * channels],
            q: vec![z; channels],
            k: vec![z; n * channels],
            v: vec![z; n * channels],
            weights: vec![z; heads * n],
            output: vec![z; channels],
        }
    }

    pub fn window_len(&self) -> usize {
        self.window_input.len() / self.q.len()
    }
}

/// `out = W x + b` for a `C x C` row-major weight.
#[inline]
pub(crate) fn linear<T: Scalar>(weight: &[T], bias: &[T], x: &[T], out: &mut [T]) {
    let c = x.len();
    for (o, (row, &b)) in out.iter_mut().zip(weight.chunks_exact(c).zip(bias)) {
        *o = row.iter().zip(x).fold(b, |acc, (&w, &v)| acc + w * v);
    }
}

/// Runs the encoders and attention on already fused inputs in `trace`.
fn attend_fused<T: Scalar>(model: &AlignModel<T>, trace: &mut AttentionTrace<T>) -> Result<()> {
    let c = model.channels();
    let n = trace.window_len();
    let hd = model.head_dim();
    linear(
        model.param(ParamKind::QueryWeight),
        model.param(ParamKind::QueryBias),
        &trace.query_input,
        &mut trace.q,
    );
    for (src, (k, v)) in trace
        .window_input
        .chunks_exact(c)
        .zip(trace.k.chunks_exact_mut(c).zip(trace.v.chunks_exact_mut(c)))
    {
        linear(
            model.param(ParamKind::KeyWeight),
            model.param(ParamKind::KeyBias),
            src,
            k,
        );
        linear(
            model.param(ParamKind::ValueWeight),
            model.param(ParamKind::ValueBias),
            src,
            v,
        );
    }
    let scale = T::one() / T::of_usize(hd).sqrt();
    for h in 0..model.heads() {
        let cols = h * hd..(h + 1) * hd;
        let q = &trace.q[cols.clone()];
        let weights = &mut trace.weights[h * n..(h + 1) * n];
        for (m, s) in weights.iter_mut().enumerate() {
            let k = &trace.k[m * c..(m + 1) * c][cols.clone()];
            *s = q.iter().zip(k).fold(T::zero(), |acc, (&a, &b)| acc + a * b) * scale;
        }
        let max = weights.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for s in weights.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        for s in weights.iter_mut() {
            *s /= total;
        }
        for (ci, o) in cols.clone().zip(trace.output[cols.clone()].iter_mut()) {
            *o = weights
                .iter()
                .enumerate()
                .fold(T::zero(), |acc, (m, &a)| acc + a * trace.v[m * c + ci]);
        }
    }
    if trace.output.iter().chain(&trace.weights).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attention output".into()));
    }
    Ok(())
}

fn fuse<T: Scalar>(dst: &mut [T], value: &[T], encoding: &[T], enabled: bool) {
    if enabled {
        for ((d, &v), &e) in dst.iter_mut().zip(value).zip(encoding) {
            *d = v + e;
        }
    } else {
        dst.copy_from_slice(value);
    }
}

fn check_sample_shapes<T: Scalar>(
    query: &QuerySample<T>,
    window: &WindowSample<T>,
    model: &AlignModel<T>,
) -> Result<()> {
    let c = model.channels();
    let n = model.window_len();
    if query.value.len() != c
        || query.encoding.len() != c
        || window.values.len() != n * c
        || window.encodings.len() != n * c
    {
        return Err(Error::ShapeMismatch(format!(
            "query/window shapes do not match model with C={c}, w^2={n}"
        )));
    }
    Ok(())
}

/// Attention with all intermediates returned.
pub fn attend_traced<T: Scalar>(
    query: &QuerySample<T>,
    window: &WindowSample<T>,
    model: &AlignModel<T>,
) -> Result<AttentionTrace<T>> {
    check_sample_shapes(query, window, model)?;
    let mut trace = AttentionTrace::new(model.channels(), model.heads(), model.window_len());
    fuse(&mut trace.query_input, &query.value, &query.encoding, model.pe_decimal);
    fuse(
        &mut trace.window_input,
        &window.values,
        &window.encodings,
        model.pe_window,
    );
    attend_fused(model, &mut trace)?;
    Ok(trace)
}

/// Aligned feature (length C) for one query and its reference window.
pub fn attend<T: Scalar>(query: &QuerySample<T>, window: &WindowSample<T>, model: &AlignModel<T>) -> Result<Vec<T>> {
    attend_traced(query, window, model).map(|t| t.output)
}

/// Per-call state shared by all pixels: encoder, window offsets and their encodings.
pub(crate) struct PixelContext<'a, T> {
    pub model: &'a AlignModel<T>,
    encoder: PositionalEncoder<T>,
    offsets: Vec<(i64, i64)>,
    window_pe: Vec<T>,
}

impl<'a, T: Scalar> PixelContext<'a, T> {
    pub fn new(model: &'a AlignModel<T>) -> Self {
        let encoder = PositionalEncoder::new(model.encoding());
        let offsets = window_offsets(model.window());
        let window_pe = window_encodings(&encoder, &offsets, model.window());
        Self {
            model,
            encoder,
            offsets,
            window_pe,
        }
    }

    /// Forward pass for pixel `[y][x]`, leaving every intermediate in `trace`.
    pub fn forward(
        &self,
        current: &Grid<T>,
        reference: &Grid<T>,
        flow: &FlowField<T>,
        x: usize,
        y: usize,
        trace: &mut AttentionTrace<T>,
    ) -> Result<()> {
        let model = self.model;
        let c = model.channels();
        let parts = decompose_offset(flow.at(y, x));
        let xt = current.pixel(y, x);
        if model.pe_decimal {
            self.encoder
                .encode_into(query_position(parts.d, model.window()), &mut trace.query_input);
            trace.query_input.iter_mut().zip(xt).for_each(|(d, &v)| *d += v);
        } else {
            trace.query_input.copy_from_slice(xt);
        }
        let ax = x as i64 + parts.z.0;
        let ay = y as i64 + parts.z.1;
        for (m, &(i, j)) in self.offsets.iter().enumerate() {
            let src = reference.pixel_clamped(ay + j, ax + i);
            let dst = &mut trace.window_input[m * c..(m + 1) * c];
            fuse(dst, src, &self.window_pe[m * c..(m + 1) * c], model.pe_window);
        }
        attend_fused(model, trace)
    }
}

pub(crate) fn check_align_shapes<T: Scalar>(
    current: &Grid<T>,
    reference: &Grid<T>,
    flow: &FlowField<T>,
    model: &AlignModel<T>,
) -> Result<()> {
    if !current.same_shape(reference) || !flow.matches(current) {
        return Err(Error::ShapeMismatch(format!(
            "current {}x{}x{}, reference {}x{}x{}, flow {}x{}",
            current.height(),
            current.width(),
            current.channels(),
            reference.height(),
            reference.width(),
            reference.channels(),
            flow.height(),
            flow.width()
        )));
    }
    if current.channels() != model.channels() {
        return Err(Error::ShapeMismatch(format!(
            "grid has {} channels, model expects {}",
            current.channels(),
            model.channels()
        )));
    }
    Ok(())
}

/// Aligns `reference` onto `current` along `flow`. Rows are processed in parallel.
pub fn align<T: Scalar>(
    current: &Grid<T>,
    reference: &Grid<T>,
    flow: &FlowField<T>,
    model: &AlignModel<T>,
) -> Result<(Grid<T>, EvalStats)> {
    check_align_shapes(current, reference, flow, model)?;
    let ctx = PixelContext::new(model);
    let (h, w, c) = (current.height(), current.width(), current.channels());
    let n = model.window_len();
    let mut data = vec![T::zero(); h * w * c];
    let row_evals: Vec<u64> = data
        .par_chunks_mut(w * c)
        .enumerate()
        .map(|(y, row)| -> Result<u64> {
            let mut trace = AttentionTrace::new(c, model.heads(), n);
            let mut evals = 0u64;
            for (x, out) in row.chunks_exact_mut(c).enumerate() {
                ctx.forward(current, reference, flow, x, y, &mut trace)?;
                out.copy_from_slice(&trace.output);
                evals += n as u64;
            }
            Ok(evals)
        })
        .collect::<Result<_>>()?;
    let stats = EvalStats {
        score_evals: row_evals.iter().sum(),
    };
    Ok((Grid::from_parts(h, w, c, data), stats))
}

/// Sequential [`align`] that hands every pixel's trace to `inspect(x, y, trace)`.
pub fn align_inspect<T: Scalar>(
    current: &Grid<T>,
    reference: &Grid<T>,
    flow: &FlowField<T>,
    model: &AlignModel<T>,
    mut inspect: impl FnMut(usize, usize, &AttentionTrace<T>),
) -> Result<(Grid<T>, EvalStats)> {
    check_align_shapes(current, reference, flow, model)?;
    let ctx = PixelContext::new(model);
    let (h, w, c) = (current.height(), current.width(), current.channels());
    let n = model.window_len();
    let mut trace = AttentionTrace::new(c, model.heads(), n);
    let mut data = Vec::with_capacity(h * w * c);
    let mut stats = EvalStats::default();
    for y in 0..h {
        for x in 0..w {
            ctx.forward(current, reference, flow, x, y, &mut trace)?;
            data.extend_from_slice(&trace.output);
            stats.score_evals += n as u64;
            inspect(x, y, &trace);
        }
    }
    Ok((Grid::from_parts(h, w, c, data), stats))
}
