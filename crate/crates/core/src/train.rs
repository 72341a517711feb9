//! Reverse-mode gradients of the implicit aligner under an L2 loss, a
//! central-difference gradient checker, Adam, and a deterministic fit loop.
//!
//! Positional encodings and flow are constants here; only the six encoder
//! tensors receive gradients. Per-row gradients are summed in `f64` in a fixed
//! row order, so results do not depend on thread scheduling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::align;
use crate::align::{check_align_shapes, AlignModel, AttentionTrace, ParamKind, ParamSet, PixelContext};
use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid};
use crate::scalar::{lit, Scalar};

/// Gradient tensors laid out exactly like [`AlignModel::params`].
pub type GradientSet<T> = ParamSet<T>;

/// One supervised alignment problem.
#[derive(Debug, Clone)]
pub struct AlignInstance<T> {
    pub current: Grid<T>,
    pub reference: Grid<T>,
    pub flow: FlowField<T>,
    pub target: Grid<T>,
}

impl<T: Scalar> AlignInstance<T> {
    pub fn cast<U: Scalar>(&self) -> AlignInstance<U> {
        AlignInstance {
            current: self.current.cast(),
            reference: self.reference.cast(),
            flow: self.flow.cast(),
            target: self.target.cast(),
        }
    }
}

/// Mean squared difference over all `H*W*C` elements.
pub fn l2_loss<T: Scalar>(aligned: &Grid<T>, target: &Grid<T>) -> Result<f64> {
    if !aligned.same_shape(target) {
        return Err(Error::ShapeMismatch("l2_loss operands differ in shape".into()));
    }
    let sum: f64 = aligned
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a.to_f64_lossy() - b.to_f64_lossy();
            d * d
        })
        .sum();
    Ok(sum / aligned.data().len() as f64)
}

/// Loss of `model` on `instance` using the forward pass only.
pub fn instance_loss<T: Scalar>(model: &AlignModel<T>, instance: &AlignInstance<T>) -> Result<f64> {
    let (aligned, _) = align::align(&instance.current, &instance.reference, &instance.flow, model)?;
    l2_loss(&aligned, &instance.target)
}

/// Gradient of one pixel's contribution, accumulated into `grad`.
fn backprop_pixel<T: Scalar>(
    model: &AlignModel<T>,
    trace: &AttentionTrace<T>,
    go: &[T],
    scratch: &mut Scratch<T>,
    grad: &mut [Vec<f64>; 6],
) {
    let c = model.channels();
    let n = trace.window_len();
    let hd = model.head_dim();
    let scale = T::one() / T::of_usize(hd).sqrt();
    scratch.reset();
    let Scratch { dq, dk, dv, da } = scratch;

    for h in 0..model.heads() {
        let cols = h * hd..(h + 1) * hd;
        let weights = &trace.weights[h * n..(h + 1) * n];
        for m in 0..n {
            let row = m * c;
            let mut dot = T::zero();
            for ci in cols.clone() {
                dv[row + ci] += weights[m] * go[ci];
                dot += go[ci] * trace.v[row + ci];
            }
            da[m] = dot;
        }
        let mean = weights
            .iter()
            .zip(da.iter())
            .fold(T::zero(), |acc, (&a, &d)| acc + a * d);
        for m in 0..n {
            let ds = weights[m] * (da[m] - mean) * scale;
            let row = m * c;
            for ci in cols.clone() {
                dq[ci] += ds * trace.k[row + ci];
                dk[row + ci] += ds * trace.q[ci];
            }
        }
    }

    outer_accumulate(&mut grad[ParamKind::QueryWeight as usize], dq, &trace.query_input);
    bias_accumulate(&mut grad[ParamKind::QueryBias as usize], dq);
    for m in 0..n {
        let input = &trace.window_input[m * c..(m + 1) * c];
        let dkm = &dk[m * c..(m + 1) * c];
        let dvm = &dv[m * c..(m + 1) * c];
        outer_accumulate(&mut grad[ParamKind::KeyWeight as usize], dkm, input);
        bias_accumulate(&mut grad[ParamKind::KeyBias as usize], dkm);
        outer_accumulate(&mut grad[ParamKind::ValueWeight as usize], dvm, input);
        bias_accumulate(&mut grad[ParamKind::ValueBias as usize], dvm);
    }
}

#[inline]
fn outer_accumulate<T: Scalar>(dst: &mut [f64], dout: &[T], input: &[T]) {
    let c = input.len();
    for (row, &g) in dst.chunks_exact_mut(c).zip(dout) {
        let g = g.to_f64_lossy();
        for (d, &x) in row.iter_mut().zip(input) {
            *d += g * x.to_f64_lossy();
        }
    }
}

#[inline]
fn bias_accumulate<T: Scalar>(dst: &mut [f64], dout: &[T]) {
    for (d, &g) in dst.iter_mut().zip(dout) {
        *d += g.to_f64_lossy();
    }
}

struct Scratch<T> {
    dq: Vec<T>,
    dk: Vec<T>,
    dv: Vec<T>,
    da: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    fn new(c: usize, n: usize) -> Self {
        Self {
            dq: vec![T::zero(); c],
            dk: vec![T::zero(); n * c],
            dv: vec![T::zero(); n * c],
            da: vec![T::zero(); n],
        }
    }

    fn reset(&mut self) {
        for buf in [&mut self.dq, &mut self.dk, &mut self.dv, &mut self.da] {
            buf.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

fn zero_accumulator(channels: usize) -> [Vec<f64>; 6] {
    ParamKind::ALL.map(|k| vec![0.0; k.len(channels)])
}

/// Loss and exact gradients for one instance.
pub fn backward<T: Scalar>(model: &AlignModel<T>, instance: &AlignInstance<T>) -> Result<(f64, GradientSet<T>)> {
    let (loss, acc) = backward_f64(model, instance)?;
    Ok((loss, to_gradient_set(acc)))
}

fn to_gradient_set<T: Scalar>(acc: [Vec<f64>; 6]) -> GradientSet<T> {
    ParamSet {
        tensors: acc.map(|t| t.into_iter().map(T::from_f64_lossy).collect()),
    }
}

fn backward_f64<T: Scalar>(model: &AlignModel<T>, instance: &AlignInstance<T>) -> Result<(f64, [Vec<f64>; 6])> {
    let AlignInstance {
        current,
        reference,
        flow,
        target,
    } = instance;
    check_align_shapes(current, reference, flow, model)?;
    if !target.same_shape(current) {
        return Err(Error::ShapeMismatch("target shape differs from current".into()));
    }
    let ctx = PixelContext::new(model);
    let (h, w, c) = (current.height(), current.width(), current.channels());
    let n = model.window_len();
    let count = (h * w * c) as f64;
    let go_scale: T = lit(2.0 / count);

    let rows: Vec<(f64, [Vec<f64>; 6])> = (0..h)
        .into_par_iter()
        .map(|y| -> Result<(f64, [Vec<f64>; 6])> {
            let mut trace = AttentionTrace::new(c, model.heads(), n);
            let mut scratch = Scratch::new(c, n);
            let mut acc = zero_accumulator(c);
            let mut go = vec![T::zero(); c];
            let mut sq = 0.0;
            for x in 0..w {
                ctx.forward(current, reference, flow, x, y, &mut trace)?;
                for ((g, &o), &t) in go.iter_mut().zip(&trace.output).zip(target.pixel(y, x)) {
                    let r = o - t;
                    sq += r.to_f64_lossy() * r.to_f64_lossy();
                    *g = go_scale * r;
                }
                backprop_pixel(model, &trace, &go, &mut scratch, &mut acc);
            }
            Ok((sq, acc))
        })
        .collect::<Result<_>>()?;

    let mut total = zero_accumulator(c);
    let mut sq = 0.0;
    for (row_sq, acc) in rows {
        sq += row_sq;
        for (dst, src) in total.iter_mut().zip(acc) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }
    for (kind, t) in ParamKind::ALL.iter().zip(&total) {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {kind}")));
        }
    }
    Ok((sq / count, total))
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst: (ParamKind, usize),
    pub coordinates: usize,
}

/// Minimum number of coordinates probed by [`grad_check`].
pub const GRAD_CHECK_COORDS: usize = 256;

/// Compares analytic gradients to central differences
/// `(L(p + eps) - L(p - eps)) / 2 eps` on a deterministic coordinate subset,
/// using `|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)`.
pub fn grad_check(model: &AlignModel<f64>, instance: &AlignInstance<f64>, eps: f64) -> Result<GradCheckReport> {
    if !(1e-6..=1e-2).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "eps must lie in [1e-6, 1e-2], got {eps}"
        )));
    }
    let (_, analytic) = backward(model, instance)?;
    let total = model.params.len();
    let coords: Vec<usize> = if total <= GRAD_CHECK_COORDS {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
        let mut picked = rand::seq::index::sample(&mut rng, total, GRAD_CHECK_COORDS).into_vec();
        picked.sort_unstable();
        picked
    };
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (ParamKind::QueryWeight, 0),
        coordinates: coords.len(),
    };
    for flat in coords {
        let (kind, idx) = model.params.flat_locate(flat);
        let orig = model.param(kind)[idx];
        probe.param_mut(kind)[idx] = orig + eps;
        let plus = instance_loss(&probe, instance)?;
        probe.param_mut(kind)[idx] = orig - eps;
        let minus = instance_loss(&probe, instance)?;
        probe.param_mut(kind)[idx] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let exact = analytic.get(kind)[idx];
        let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst = (kind, idx);
        }
    }
    Ok(report)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ParamSet<T>,
    v: ParamSet<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &AlignModel<T>, lr: f64) -> Self {
        Self::for_channels(model.channels(), lr)
    }

    pub fn for_channels(channels: usize, lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: ParamSet::zeros(channels),
            v: ParamSet::zeros(channels),
        }
    }

    pub fn first_moment(&self) -> &ParamSet<T> {
        &self.m
    }

    pub fn second_moment(&self) -> &ParamSet<T> {
        &self.v
    }
}

/// Applies one Adam update to `params` in place.
pub fn adam_update<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &GradientSet<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    let shapes_match = params
        .tensors
        .iter()
        .zip(&grads.tensors)
        .chain(params.tensors.iter().zip(&state.m.tensors))
        .all(|(a, b)| a.len() == b.len());
    if !shapes_match {
        return Err(Error::ShapeMismatch(
            "gradient or optimizer state shape differs from parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2): (T, T) = (lit(state.beta1), lit(state.beta2));
    let c1: T = lit(1.0 - state.beta1.powi(t));
    let c2: T = lit(1.0 - state.beta2.powi(t));
    let (lr, eps): (T, T) = (lit(state.lr), lit(state.eps));
    let one = T::one();
    for (((p, g), m), v) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(state.m.tensors.iter_mut())
        .zip(state.v.tensors.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

pub fn adam_step<T: Scalar>(model: &mut AlignModel<T>, grads: &GradientSet<T>, state: &mut AdamState<T>) -> Result<()> {
    adam_update(&mut model.params, grads, state)
}

/// Learning-rate schedule over a run of `iterations` steps.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay from the base rate to `1e-7`.
    Cosine,
}

impl LrSchedule {
    pub const COSINE_FLOOR: f64 = 1e-7;

    pub fn rate(self, base: f64, iteration: usize, iterations: usize) -> f64 {
        match self {
            Self::Constant => base,
            Self::Cosine => {
                let progress = iteration as f64 / iterations.max(1) as f64;
                let floor = Self::COSINE_FLOOR;
                floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    /// `None` trains full-batch; otherwise instances are visited in seeded
    /// per-epoch order in batches of this size.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            lr: 1e-2,
            schedule: LrSchedule::Constant,
            batch_size: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub model: AlignModel<T>,
    /// Loss of the batch used at each iteration, before its update.
    pub trace: Vec<f64>,
    /// Full-dataset loss of the returned model.
    pub final_loss: f64,
}

/// Mean loss and gradient over `batch`, reduced in batch order.
pub fn batch_gradient<T: Scalar>(model: &AlignModel<T>, batch: &[&AlignInstance<T>]) -> Result<(f64, GradientSet<T>)> {
    let per_instance: Vec<(f64, [Vec<f64>; 6])> = batch
        .par_iter()
        .map(|inst| backward_f64(model, inst))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = zero_accumulator(model.channels());
    let mut loss = 0.0;
    for (l, acc) in per_instance {
        loss += l * scale;
        for (dst, src) in total.iter_mut().zip(acc) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s * scale);
        }
    }
    Ok((loss, to_gradient_set(total)))
}

/// Fits the encoders to `dataset` with Adam. Deterministic for a fixed config.
pub fn fit<T: Scalar>(
    model: &AlignModel<T>,
    dataset: &[AlignInstance<T>],
    config: &FitConfig,
) -> Result<FitOutcome<T>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("fit needs at least one instance".into()));
    }
    if config.batch_size == Some(0) {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut model = model.clone();
    let mut state = AdamState::new(&model, config.lr);
    let mut trace = Vec::with_capacity(config.iterations);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = order.len();

    for it in 0..config.iterations {
        let batch: Vec<&AlignInstance<T>> = match config.batch_size {
            None => dataset.iter().collect(),
            Some(size) => {
                let mut picked = Vec::with_capacity(size);
                while picked.len() < size.min(dataset.len()) {
                    if cursor == order.len() {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    picked.push(&dataset[order[cursor]]);
                    cursor += 1;
                }
                picked
            }
        };
        let (loss, grads) = match batch_gradient(&model, &batch) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => {
                return Err(Error::Diverged {
                    iteration: it,
                    loss: f64::NAN,
                    trace,
                })
            }
            Err(e) => return Err(e),
        };
        trace.push(loss);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                loss,
                trace,
            });
        }
        state.lr = config.schedule.rate(config.lr, it, config.iterations);
        adam_step(&mut model, &grads, &mut state)?;
    }

    let mut final_loss = 0.0;
    for inst in dataset {
        final_loss += instance_loss(&model, inst)? / dataset.len() as f64;
    }
    if !final_loss.is_finite() || !model.is_finite() {
        return Err(Error::Diverged {
            iteration: config.iterations,
            loss: final_loss,
            trace,
        });
    }
    Ok(FitOutcome {
        model,
        trace,
        final_loss,
    })
}

/// `iteration,loss` CSV for a loss trace.
pub fn loss_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("iteration,loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{l:.12e}\n"));
    }
    out
}
