//! Parameter storage and the small set of layers the networks are built from.
//!
//! Layers hold [`ParamId`]s rather than tensors so that one network
//! definition can run against an `f32` store for training and an `f64` copy of
//! it for gradient checking.

use egmr_autograd::{Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Slope of the leaky rectifier used throughout.
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Deterministic parameter initialiser.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-uniform values for a layer with `fan_in` inputs, scaled by `gain`.
    pub fn he_uniform(&mut self, shape: &[usize], fan_in: usize, gain: f64) -> Tensor<f32> {
        let bound = gain * (6.0 / fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| self.rng.random_range(-bound..=bound) as f32)
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor<f32> {
        Tensor::from_fn(shape, |_| self.rng.random_range(-bound..=bound) as f32)
    }
}

/// Builder that registers parameters under a name prefix.
pub struct Builder<'a> {
    store: &'a mut ParamStore<f32>,
    init: &'a mut Init,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, init: &'a mut Init) -> Self {
        Self {
            store,
            init,
            prefix: String::new(),
        }
    }

    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Builder<'_>) -> R) -> R {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        let mut inner = Builder {
            store: self.store,
            init: self.init,
            prefix,
        };
        f(&mut inner)
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn param(&mut self, name: &str, tensor: Tensor<f32>) -> ParamId {
        let full = self.full_name(name);
        self.store.add(full, tensor)
    }

    pub fn init(&mut self) -> &mut Init {
        self.init
    }

    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Conv {
        self.conv_with_gain(name, c_in, c_out, k, stride, 1.0)
    }

    /// A convolution whose weights start scaled by `gain`; 0 gives an all-zero layer.
    pub fn conv_with_gain(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, gain: f64) -> Conv {
        let w = if gain == 0.0 {
            Tensor::zeros(&[c_out, c_in, k, k])
        } else {
            self.init.he_uniform(&[c_out, c_in, k, k], c_in * k * k, gain)
        };
        self.scoped(name, |b| Conv {
            weight: b.param("weight", w),
            bias: b.param("bias", Tensor::zeros(&[c_out])),
            stride,
            pad: k / 2,
        })
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize, gain: f64) -> Linear {
        let w = if gain == 0.0 {
            Tensor::zeros(&[d_in, d_out])
        } else {
            self.init.he_uniform(&[d_in, d_out], d_in, gain)
        };
        self.scoped(name, |b| Linear {
            weight: b.param("weight", w),
            bias: b.param("bias", Tensor::zeros(&[d_out])),
        })
    }
}

/// A tape plus the variables standing for every parameter of a store.
pub struct Session<'t, T: Scalar> {
    pub tape: &'t Tape<T>,
    params: Vec<Var>,
}

impl<'t, T: Scalar> Session<'t, T> {
    /// Registers every parameter on `tape`; `trainable` decides whether
    /// gradients are collected for them.
    pub fn new(tape: &'t Tape<T>, store: &ParamStore<T>, trainable: bool) -> Self {
        let params = store
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    tape.variable(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Self { tape, params }
    }

    /// Wraps variables that already live on `tape`, one per parameter.
    pub fn from_vars(tape: &'t Tape<T>, params: Vec<Var>) -> Self {
        Self { tape, params }
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }

    pub fn lrelu(&self, x: Var) -> Var {
        self.tape.leaky_relu(x, T::of(LEAKY_SLOPE))
    }

    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.tape.constant(t)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: Var) -> Var {
        s.tape
            .conv2d(x, s.param(self.weight), Some(s.param(self.bias)), self.stride, self.pad)
    }

    /// Convolution followed by the leaky rectifier.
    pub fn forward_act<T: Scalar>(&self, s: &Session<'_, T>, x: Var) -> Var {
        let y = self.forward(s, x);
        s.lrelu(y)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: Var) -> Var {
        s.tape.linear(x, s.param(self.weight), Some(s.param(self.bias)))
    }
}

/// Two 3x3 convolutions with a skip connection, `x + conv(lrelu(conv(x)))`,
/// followed by the rectifier.
#[derive(Clone, Copy, Debug)]
pub struct ResBlock {
    pub a: Conv,
    pub b: Conv,
}

impl ResBlock {
    pub fn build(b: &mut Builder<'_>, name: &str, width: usize) -> Self {
        b.scoped(name, |b| ResBlock {
            a: b.conv("a", width, width, 3, 1),
            b: b.conv_with_gain("b", width, width, 3, 1, 0.5),
        })
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: Var) -> Var {
        let h = self.a.forward_act(s, x);
        let h = self.b.forward(s, h);
        let y = s.tape.add(x, h);
        s.lrelu(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_names_are_scoped_and_unique() {
        let mut store = ParamStore::new();
        let mut init = Init::new(1);
        let mut b = Builder::new(&mut store, &mut init);
        b.scoped("net", |b| b.conv("c0", 2, 4, 3, 1));
        assert_eq!(store.names(), ["net.c0.weight", "net.c0.bias"]);
        assert_eq!(store.num_scalars(), 4 * 2 * 9 + 4);
    }

    #[test]
    fn init_is_deterministic() {
        let a = Init::new(7).he_uniform(&[4, 4], 4, 1.0);
        let b = Init::new(7).he_uniform(&[4, 4], 4, 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn cast_round_trip_preserves_values() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::from_vec(&[3], vec![0.5f32, -1.25, 3.0]));
        assert_eq!(store.cast::<f64>().cast::<f32>(), store);
    }
}
