//! Study driver for `resalign`: runs classical and implicit alignment on
//! synthetic pairs, scores them, and writes CSV reports.

pub mod config;
pub mod metrics;
pub mod study;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resalign::{AlignInstance, AlignModel, FlowField, Grid, ParamKind};

/// Randomized `C = 8, w = 2, h = 2`, 6x6 gradient-check problem for `seed`.
/// Biases are drawn non-zero so every tensor carries gradient.
pub fn gradcheck_instance(seed: u64) -> (AlignModel<f64>, AlignInstance<f64>) {
    const C: usize = 8;
    const SIDE: usize = 6;
    let mut model = AlignModel::<f64>::init(C, 2, 2, seed).expect("valid model shape");
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    for kind in [ParamKind::QueryBias, ParamKind::KeyBias, ParamKind::ValueBias] {
        model
            .param_mut(kind)
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-0.2..0.2));
    }
    let mut grid = || Grid::from_fn(SIDE, SIDE, C, |_, _, _| rng.gen_range(-1.0..1.0)).expect("finite grid");
    let current = grid();
    let reference = grid();
    let target = grid();
    let u = (0..SIDE * SIDE).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let v = (0..SIDE * SIDE).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let instance = AlignInstance {
        current,
        reference,
        flow: FlowField::new(SIDE, SIDE, u, v).expect("finite flow"),
        target,
    };
    (model, instance)
}
