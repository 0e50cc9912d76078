//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod oracles;

use egmr::nn::{Builder, Init, ParamStore, Session};
use egmr_autograd::gradcheck::{check, GradCheck};
use egmr_autograd::{Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(lo..hi)))
}

/// Builds a component into a fresh store.
pub fn build<R>(seed: u64, f: impl FnOnce(&mut Builder<'_>) -> R) -> (ParamStore<f32>, R) {
    let mut store = ParamStore::new();
    let mut init = Init::new(seed);
    let out = {
        let mut b = Builder::new(&mut store, &mut init);
        f(&mut b)
    };
    (store, out)
}

/// Gives every parameter small random values so that zero-initialised
/// layers still carry gradient signal.
pub fn perturb(store: &mut ParamStore<f32>, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-scale..scale) as f32;
        }
    }
}

/// Central-difference check of the gradient of `loss` with respect to the
/// parameters in `store`, perturbing roughly `budget` scalar entries.
pub fn gradcheck_params(
    store: &ParamStore<f32>,
    budget: usize,
    loss: impl Fn(&Session<'_, f64>) -> Var,
) -> GradCheck {
    let params = store.cast::<f64>();
    let total = params.num_scalars().max(1);
    let stride = (total / budget.max(1)).max(1);
    let offsets: Vec<usize> = params
        .tensors()
        .iter()
        .scan(0usize, |acc, t| {
            let o = *acc;
            *acc += t.numel();
            Some(o)
        })
        .collect();
    check(
        params.tensors(),
        |tape: &Tape<f64>, vars: &[Var]| {
            let s = Session::from_vars(tape, vars.to_vec());
            loss(&s)
        },
        1e-6,
        |k, e| (offsets[k] + e) % stride == 0 || e == 0,
    )
}

/// Sum of `x` weighted by a fixed pseudo-random pattern.
pub fn weighted_sum(tape: &Tape<f64>, x: Var) -> Var {
    let shape = tape.shape(x);
    let w = Tensor::from_fn(&shape, |i| ((i * 7919 % 97) as f64 / 97.0) - 0.3);
    let wv = tape.constant(w);
    tape.sum(tape.mul(x, wv))
}
