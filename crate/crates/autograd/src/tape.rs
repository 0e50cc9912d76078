//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its value and enough information to
//! push gradients back to its inputs. [`Tape::backward`] walks the tape in
//! reverse once.

use std::cell::RefCell;
use std::rc::Rc;

use crate::kernels;
use crate::scalar::gemm;
use crate::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Matmul { a: Var, b: Var, trans_a: bool, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Offset(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Softmax { x: Var, axis: usize },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Resize(Var),
    AvgPool { x: Var, k: usize },
    MaxPool2 { x: Var, arg: Vec<usize> },
    GlobalAvgPool(Var),
    Warp { img: Var, flow: Var },
    Patchify { x: Var, p: usize },
    Unpatchify { x: Var, p: usize },
    ReflectPad(Var),
    Crop(Var),
    Sum(Var),
    Mean(Var),
    L2NormPerSample(Var),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// A recording of tensor operations.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_or_broadcast(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(&x, &y)| x == y || y == 1)
}

/// Offset into `b` for every element of `a` when `b` broadcasts to `a`.
fn broadcast_offsets(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len();
    let mut bstride = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        bstride[d] = if b[d] == 1 { 0 } else { acc };
        acc *= b[d];
    }
    let total: usize = a.iter().product();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        out.push(off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += bstride[d];
            if idx[d] < a[d] {
                break;
            }
            off -= bstride[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

fn reduce_to<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let offs = broadcast_offsets(g.shape(), shape);
    let mut out = vec![T::zero(); shape.iter().product()];
    for (&o, &v) in offs.iter().zip(g.data()) {
        out[o] = out[o] + v;
    }
    Tensor::from_vec(shape, out)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    /// Shared handle to a node's value.
    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is collected by [`Tape::backward`].
    pub fn variable(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let y = {
            let xv = self.value(x);
            let wv = self.value(w);
            let bv = b.map(|b| self.value(b));
            kernels::conv2d(&xv, &wv, bv.as_deref(), stride, pad)
        };
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.needs(&deps);
        self.push(y, Op::Conv2d { x, w, b, stride, pad }, ng)
    }

    /// `x W + b` over the last axis. `W` is `d_in x d_out`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (din, dout) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(*xv.shape().last().unwrap(), din, "linear: input width mismatch");
        let rows = xv.numel() / din;
        let mut out = vec![T::zero(); rows * dout];
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.numel(), dout, "linear: bias width mismatch");
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(rows, din, dout, xv.data(), false, wv.data(), false, &mut out, b.is_some());
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.needs(&deps);
        self.push(Tensor::from_vec(&shape, out), Op::Linear { x, w, b }, ng)
    }

    /// Batched matrix product of rank-3 tensors `B x M x K` and `B x K x N`
    /// (before the optional transposes of the last two axes).
    pub fn matmul(&self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let (batch, ar, ac) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let (bb, br, bc) = (bv.shape()[0], bv.shape()[1], bv.shape()[2]);
        assert_eq!(batch, bb, "matmul: batch mismatch");
        let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul: inner dimension mismatch");
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &av.data()[i * m * k..(i + 1) * m * k],
                trans_a,
                &bv.data()[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let ng = self.needs(&[a, b]);
        self.push(
            Tensor::from_vec(&[batch, m, n], out),
            Op::Matmul { a, b, trans_a, trans_b },
            ng,
        )
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.value(a);
        let bv = self.value(b);
        assert!(
            same_or_broadcast(av.shape(), bv.shape()),
            "cannot broadcast {:?} onto {:?}",
            bv.shape(),
            av.shape()
        );
        if av.shape() == bv.shape() {
            return av.zip_map(&bv, f);
        }
        let offs = broadcast_offsets(av.shape(), bv.shape());
        let data = av
            .data()
            .iter()
            .zip(&offs)
            .map(|(&x, &o)| f(x, bv.data()[o]))
            .collect();
        Tensor::from_vec(av.shape(), data)
    }

    /// `a + b`, with `b` broadcast along its unit axes.
    pub fn add(&self, a: Var, b: Var) -> Var {
        let y = self.binary(a, b, |x, y| x + y);
        let ng = self.needs(&[a, b]);
        self.push(y, Op::Add(a, b), ng)
    }

    /// `a - b`, with `b` broadcast along its unit axes.
    pub fn sub(&self, a: Var, b: Var) -> Var {
        let y = self.binary(a, b, |x, y| x - y);
        let ng = self.needs(&[a, b]);
        self.push(y, Op::Sub(a, b), ng)
    }

    /// `a * b` elementwise, with `b` broadcast along its unit axes.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        let y = self.binary(a, b, |x, y| x * y);
        let ng = self.needs(&[a, b]);
        self.push(y, Op::Mul(a, b), ng)
    }

    pub fn scale(&self, a: Var, k: T) -> Var {
        let y = self.value(a).map(|v| v * k);
        let ng = self.needs(&[a]);
        self.push(y, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&self, a: Var, k: T) -> Var {
        let y = self.value(a).map(|v| v + k);
        let ng = self.needs(&[a]);
        self.push(y, Op::Offset(a), ng)
    }

    /// `1 - a`.
    pub fn one_minus(&self, a: Var) -> Var {
        let neg = self.scale(a, -T::one());
        self.add_scalar(neg, T::one())
    }

    pub fn leaky_relu(&self, a: Var, slope: T) -> Var {
        let y = self
            .value(a)
            .map(|v| if v > T::zero() { v } else { v * slope });
        let ng = self.needs(&[a]);
        self.push(y, Op::LeakyRelu(a, slope), ng)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.leaky_relu(a, T::zero())
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let y = self.value(a).map(|v| T::one() / (T::one() + (-v).exp()));
        let ng = self.needs(&[a]);
        self.push(y, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&self, a: Var) -> Var {
        let y = self.value(a).map(|v| v.tanh());
        let ng = self.needs(&[a]);
        self.push(y, Op::Tanh(a), ng)
    }

    pub fn abs(&self, a: Var) -> Var {
        let y = self.value(a).map(|v| v.abs());
        let ng = self.needs(&[a]);
        self.push(y, Op::Abs(a), ng)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, x: Var, axis: usize) -> Var {
        let xv = self.value(x);
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let mut out = xv.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut m = T::neg_infinity();
                for k in 0..len {
                    m = m.max(out[base + k * inner]);
                }
                let mut s = T::zero();
                for k in 0..len {
                    let e = (out[base + k * inner] - m).exp();
                    out[base + k * inner] = e;
                    s = s + e;
                }
                for k in 0..len {
                    out[base + k * inner] = out[base + k * inner] / s;
                }
            }
        }
        let ng = self.needs(&[x]);
        self.push(Tensor::from_vec(xv.shape(), out), Op::Softmax { x, axis }, ng)
    }

    /// Concatenation of rank-4 tensors along the channel axis.
    pub fn concat(&self, xs: &[Var]) -> Var {
        let vals: Vec<_> = xs.iter().map(|&v| self.value(v)).collect();
        let refs: Vec<&Tensor<T>> = vals.iter().map(|v| v.as_ref()).collect();
        let y = Tensor::cat_channels(&refs);
        let ng = self.needs(xs);
        self.push(y, Op::Concat(xs.to_vec()), ng)
    }

    /// Channels `[start, start + len)` of a rank-4 tensor.
    pub fn slice_channels(&self, x: Var, start: usize, len: usize) -> Var {
        let y = self.value(x).channels(start, len);
        let ng = self.needs(&[x]);
        self.push(y, Op::Slice { x, start }, ng)
    }

    /// Half-pixel-centred bilinear resize of a rank-4 tensor.
    pub fn resize(&self, x: Var, out_h: usize, out_w: usize) -> Var {
        let y = kernels::resize_bilinear(&self.value(x), out_h, out_w);
        let ng = self.needs(&[x]);
        self.push(y, Op::Resize(x), ng)
    }

    pub fn avg_pool(&self, x: Var, k: usize) -> Var {
        if k == 1 {
            return x;
        }
        let y = kernels::avg_pool(&self.value(x), k);
        let ng = self.needs(&[x]);
        self.push(y, Op::AvgPool { x, k }, ng)
    }

    pub fn max_pool2(&self, x: Var) -> Var {
        let (y, arg) = kernels::max_pool2(&self.value(x));
        let ng = self.needs(&[x]);
        self.push(y, Op::MaxPool2 { x, arg }, ng)
    }

    /// `N x C x H x W` to `N x C x 1 x 1` spatial mean.
    pub fn global_avg_pool(&self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let norm = T::of((h * w) as f64);
        let data = xv
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() / norm)
            .collect();
        let ng = self.needs(&[x]);
        self.push(
            Tensor::from_vec(&[n, c, 1, 1], data),
            Op::GlobalAvgPool(x),
            ng,
        )
    }

    /// Bilinear backward warp with zero padding, see [`kernels::warp`].
    pub fn warp(&self, img: Var, flow: Var) -> Var {
        let y = kernels::warp(&self.value(img), &self.value(flow));
        let ng = self.needs(&[img, flow]);
        self.push(y, Op::Warp { img, flow }, ng)
    }

    pub fn patchify(&self, x: Var, p: usize) -> Var {
        let y = kernels::patchify(&self.value(x), p);
        let ng = self.needs(&[x]);
        self.push(y, Op::Patchify { x, p }, ng)
    }

    pub fn unpatchify(&self, x: Var, p: usize, c: usize, h: usize, w: usize) -> Var {
        let y = kernels::unpatchify(&self.value(x), p, c, h, w);
        let ng = self.needs(&[x]);
        self.push(y, Op::Unpatchify { x, p }, ng)
    }

    pub fn reflect_pad(&self, x: Var, pad_h: usize, pad_w: usize) -> Var {
        if pad_h == 0 && pad_w == 0 {
            return x;
        }
        let y = kernels::reflect_pad(&self.value(x), pad_h, pad_w);
        let ng = self.needs(&[x]);
        self.push(y, Op::ReflectPad(x), ng)
    }

    pub fn crop(&self, x: Var, h: usize, w: usize) -> Var {
        let xv = self.value(x);
        if xv.dims4().2 == h && xv.dims4().3 == w {
            return x;
        }
        let y = kernels::crop(&xv, h, w);
        let ng = self.needs(&[x]);
        self.push(y, Op::Crop(x), ng)
    }

    pub fn sum(&self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(&[x]);
        self.push(y, Op::Sum(x), ng)
    }

    pub fn mean(&self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).mean());
        let ng = self.needs(&[x]);
        self.push(y, Op::Mean(x), ng)
    }

    /// Euclidean norm of each leading-axis item: `N x ...` to `N`.
    pub fn l2_norm_per_sample(&self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.shape()[0];
        let per = xv.numel() / n;
        let data = xv
            .data()
            .chunks(per)
            .map(|c| c.iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        let ng = self.needs(&[x]);
        self.push(Tensor::from_vec(&[n], data), Op::L2NormPerSample(x), ng)
    }

    /// Gradients of the scalar `loss` with respect to every node that needs them.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(nodes[loss.0].value.shape()));
        for i in (0..=loss.0).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            backprop(&nodes, i, &g, &mut grads);
        }
        Gradients { grads }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn backprop<T: Scalar>(
    nodes: &[Node<T>],
    i: usize,
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let val = |v: Var| nodes[v.0].value.as_ref();
    let need = |v: Var| nodes[v.0].needs_grad;
    let out = nodes[i].value.as_ref();
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::Conv2d { x, w, b, stride, pad } => {
            let (dx, dw, db) = kernels::conv2d_backward(val(x), val(w), stride, pad, g, need(x));
            if let Some(dx) = dx {
                accumulate(grads, x, dx);
            }
            if need(w) {
                accumulate(grads, w, dw);
            }
            if let Some(b) = b.filter(|&b| need(b)) {
                accumulate(grads, b, db);
            }
        }
        &Op::Linear { x, w, b } => {
            let (xv, wv) = (val(x), val(w));
            let (din, dout) = (wv.shape()[0], wv.shape()[1]);
            let rows = xv.numel() / din;
            if need(x) {
                let mut dx = vec![T::zero(); rows * din];
                gemm(rows, dout, din, g.data(), false, wv.data(), true, &mut dx, false);
                accumulate(grads, x, Tensor::from_vec(xv.shape(), dx));
            }
            if need(w) {
                let mut dw = vec![T::zero(); din * dout];
                gemm(din, rows, dout, xv.data(), true, g.data(), false, &mut dw, false);
                accumulate(grads, w, Tensor::from_vec(wv.shape(), dw));
            }
            if let Some(b) = b.filter(|&b| need(b)) {
                let mut db = vec![T::zero(); dout];
                for row in g.data().chunks(dout) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d = *d + v;
                    }
                }
                accumulate(grads, b, Tensor::from_vec(&[dout], db));
            }
        }
        &Op::Matmul { a, b, trans_a, trans_b } => {
            let (av, bv) = (val(a), val(b));
            let batch = av.shape()[0];
            let (m, n) = (out.shape()[1], out.shape()[2]);
            let k = av.numel() / batch / m;
            if need(a) {
                // dA = dC B^T (stored transposed when trans_a).
                let mut da = vec![T::zero(); av.numel()];
                for bi in 0..batch {
                    let gc = &g.data()[bi * m * n..(bi + 1) * m * n];
                    let bs = &bv.data()[bi * k * n..(bi + 1) * k * n];
                    let dst = &mut da[bi * m * k..(bi + 1) * m * k];
                    if trans_a {
                        gemm(k, n, m, bs, trans_b, gc, true, dst, false);
                    } else {
                        gemm(m, n, k, gc, false, bs, !trans_b, dst, false);
                    }
                }
                accumulate(grads, a, Tensor::from_vec(av.shape(), da));
            }
            if need(b) {
                let mut db = vec![T::zero(); bv.numel()];
                for bi in 0..batch {
                    let gc = &g.data()[bi * m * n..(bi + 1) * m * n];
                    let as_ = &av.data()[bi * m * k..(bi + 1) * m * k];
                    let dst = &mut db[bi * k * n..(bi + 1) * k * n];
                    if trans_b {
                        gemm(n, m, k, gc, true, as_, trans_a, dst, false);
                    } else {
                        gemm(k, m, n, as_, !trans_a, gc, false, dst, false);
                    }
                }
                accumulate(grads, b, Tensor::from_vec(bv.shape(), db));
            }
        }
        &Op::Add(a, b) => {
            if need(a) {
                accumulate(grads, a, g.clone());
            }
            if need(b) {
                accumulate(grads, b, reduce_to(g, val(b).shape()));
            }
        }
        &Op::Sub(a, b) => {
            if need(a) {
                accumulate(grads, a, g.clone());
            }
            if need(b) {
                accumulate(grads, b, reduce_to(&g.map(|v| -v), val(b).shape()));
            }
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (val(a), val(b));
            if av.shape() == bv.shape() {
                if need(a) {
                    accumulate(grads, a, g.zip_map(bv, |x, y| x * y));
                }
                if need(b) {
                    accumulate(grads, b, g.zip_map(av, |x, y| x * y));
                }
            } else {
                let offs = broadcast_offsets(av.shape(), bv.shape());
                if need(a) {
                    let data = g
                        .data()
                        .iter()
                        .zip(&offs)
                        .map(|(&gv, &o)| gv * bv.data()[o])
                        .collect();
                    accumulate(grads, a, Tensor::from_vec(av.shape(), data));
                }
                if need(b) {
                    let mut db = vec![T::zero(); bv.numel()];
                    for ((&gv, &o), &x) in g.data().iter().zip(&offs).zip(av.data()) {
                        db[o] = db[o] + gv * x;
                    }
                    accumulate(grads, b, Tensor::from_vec(bv.shape(), db));
                }
            }
        }
        &Op::Scale(a, k) => accumulate(grads, a, g.map(|v| v * k)),
        &Op::Offset(a) => accumulate(grads, a, g.clone()),
        &Op::LeakyRelu(a, slope) => {
            accumulate(grads, a, g.zip_map(val(a), |gv, x| if x > T::zero() { gv } else { gv * slope }))
        }
        &Op::Sigmoid(a) => accumulate(grads, a, g.zip_map(out, |gv, y| gv * y * (T::one() - y))),
        &Op::Tanh(a) => accumulate(grads, a, g.zip_map(out, |gv, y| gv * (T::one() - y * y))),
        &Op::Abs(a) => accumulate(
            grads,
            a,
            g.zip_map(val(a), |gv, x| {
                if x > T::zero() {
                    gv
                } else if x < T::zero() {
                    -gv
                } else {
                    T::zero()
                }
            }),
        ),
        &Op::Softmax { x, axis } => {
            let (outer, len, inner) = split_axis(out.shape(), axis);
            let mut dx = vec![T::zero(); out.numel()];
            let (y, gd) = (out.data(), g.data());
            for o in 0..outer {
                for ii in 0..inner {
                    let base = o * len * inner + ii;
                    let mut dot = T::zero();
                    for k in 0..len {
                        dot = dot + y[base + k * inner] * gd[base + k * inner];
                    }
                    for k in 0..len {
                        let j = base + k * inner;
                        dx[j] = y[j] * (gd[j] - dot);
                    }
                }
            }
            accumulate(grads, x, Tensor::from_vec(out.shape(), dx));
        }
        Op::Concat(xs) => {
            let mut start = 0;
            for &x in xs {
                let c = val(x).dims4().1;
                if need(x) {
                    accumulate(grads, x, g.channels(start, c));
                }
                start += c;
            }
        }
        &Op::Slice { x, start } => {
            let xv = val(x);
            let (n, c, h, w) = xv.dims4();
            let len = out.dims4().1;
            let plane = h * w;
            let mut dx = vec![T::zero(); xv.numel()];
            for b in 0..n {
                let dst = (b * c + start) * plane;
                dx[dst..dst + len * plane]
                    .copy_from_slice(&g.data()[b * len * plane..(b + 1) * len * plane]);
            }
            accumulate(grads, x, Tensor::from_vec(xv.shape(), dx));
        }
        &Op::Resize(x) => accumulate(grads, x, kernels::resize_bilinear_backward(val(x).shape(), g)),
        &Op::AvgPool { x, k } => accumulate(grads, x, kernels::avg_pool_backward(val(x).shape(), k, g)),
        Op::MaxPool2 { x, arg } => {
            let mut dx = vec![T::zero(); val(*x).numel()];
            for (&a, &gv) in arg.iter().zip(g.data()) {
                dx[a] = dx[a] + gv;
            }
            accumulate(grads, *x, Tensor::from_vec(val(*x).shape(), dx));
        }
        &Op::GlobalAvgPool(x) => {
            let xv = val(x);
            let (_, _, h, w) = xv.dims4();
            let norm = T::of((h * w) as f64);
            let mut dx = Vec::with_capacity(xv.numel());
            for &gv in g.data() {
                dx.extend(std::iter::repeat_n(gv / norm, h * w));
            }
            accumulate(grads, x, Tensor::from_vec(xv.shape(), dx));
        }
        &Op::Warp { img, flow } => {
            let (di, df) = kernels::warp_backward(val(img), val(flow), g, need(img), need(flow));
            if let Some(di) = di {
                accumulate(grads, img, di);
            }
            if let Some(df) = df {
                accumulate(grads, flow, df);
            }
        }
        &Op::Patchify { x, p } => {
            let (_, c, h, w) = val(x).dims4();
            accumulate(grads, x, kernels::unpatchify(g, p, c, h, w));
        }
        &Op::Unpatchify { x, p } => accumulate(grads, x, kernels::patchify(g, p)),
        &Op::ReflectPad(x) => accumulate(grads, x, kernels::reflect_pad_backward(val(x).shape(), g)),
        &Op::Crop(x) => accumulate(grads, x, kernels::crop_backward(val(x).shape(), g)),
        &Op::Sum(x) => accumulate(grads, x, Tensor::full(val(x).shape(), g.data()[0])),
        &Op::Mean(x) => {
            let n = T::of(val(x).numel() as f64);
            accumulate(grads, x, Tensor::full(val(x).shape(), g.data()[0] / n));
        }
        &Op::L2NormPerSample(x) => {
            let xv = val(x);
            let n = xv.shape()[0];
            let per = xv.numel() / n;
            let mut dx = Vec::with_capacity(xv.numel());
            for (b, chunk) in xv.data().chunks(per).enumerate() {
                let norm = out.data()[b];
                let k = if norm > T::zero() { g.data()[b] / norm } else { T::zero() };
                dx.extend(chunk.iter().map(|&v| v * k));
            }
            accumulate(grads, x, Tensor::from_vec(xv.shape(), dx));
        }
    }
}
