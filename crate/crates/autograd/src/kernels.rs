//! Forward and backward kernels operating on raw tensors.
//!
//! The tape in [`crate::tape`] wires these together; they are public so that
//! tests and inference-only code can call them without building a graph.

use crate::scalar::gemm;
use crate::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(stride >= 1, "conv stride must be positive");
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "conv kernel larger than padded input");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Self { c, h, w, k, stride, pad, ho, wo }
    }

    /// Output columns `[lo, hi)` whose stride-1 input column `ox + kx - pad` is in range.
    fn valid_span(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).min(self.wo);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.wo).max(lo);
        (lo, hi)
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let out_plane = g.ho * g.wo;
    for c in 0..g.c {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * out_plane..(row + 1) * out_plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = g.valid_span(kx);
                        line[..lo].iter_mut().for_each(|v| *v = T::zero());
                        line[hi..].iter_mut().for_each(|v| *v = T::zero());
                        if lo < hi {
                            let s0 = lo + kx - g.pad;
                            line[lo..hi].copy_from_slice(&srow[s0..s0 + hi - lo]);
                        }
                        continue;
                    }
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let out_plane = g.ho * g.wo;
    for c in 0..g.c {
        let dst = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * out_plane..(row + 1) * out_plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        let (lo, hi) = g.valid_span(kx);
                        if lo < hi {
                            let s0 = lo + kx - g.pad;
                            for (d, &v) in drow[s0..s0 + hi - lo].iter_mut().zip(&line[lo..hi]) {
                                *d = *d + v;
                            }
                        }
                        continue;
                    }
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] = drow[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution. `x` is `N x C x H x W`, `w` is `O x C x k x k`, `b` is `O`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n, c, h, wd) = x.dims4();
    let (o, wc, k, k2) = w.dims4();
    assert_eq!(wc, c, "conv2d: weight expects {wc} input channels, got {c}");
    assert_eq!(k, k2, "conv2d: square kernels only");
    let g = ConvGeom::new(c, h, wd, k, stride, pad);
    let plane = g.ho * g.wo;
    let ckk = c * k * k;
    let mut out = vec![T::zero(); n * o * plane];
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); ckk * plane] };
    for bi in 0..n {
        let xs = &x.data()[bi * c * h * wd..(bi + 1) * c * h * wd];
        let ys = &mut out[bi * o * plane..(bi + 1) * o * plane];
        if let Some(b) = b {
            for (oc, chunk) in ys.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b.data()[oc]);
            }
        }
        let rhs: &[T] = if g.pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        gemm(o, ckk, plane, w.data(), false, rhs, false, ys, b.is_some());
    }
    Tensor::from_vec(&[n, o, g.ho, g.wo], out)
}

/// Gradients of [`conv2d`]: `(dx, dw, db)`. `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    dy: &Tensor<T>,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (n, c, h, wd) = x.dims4();
    let (o, _, k, _) = w.dims4();
    let g = ConvGeom::new(c, h, wd, k, stride, pad);
    let plane = g.ho * g.wo;
    let ckk = c * k * k;
    let mut dw = vec![T::zero(); o * ckk];
    let mut db = vec![T::zero(); o];
    let mut dx = if need_dx { vec![T::zero(); n * c * h * wd] } else { Vec::new() };
    let mut cols = vec![T::zero(); ckk * plane];
    for bi in 0..n {
        let xs = &x.data()[bi * c * h * wd..(bi + 1) * c * h * wd];
        let dys = &dy.data()[bi * o * plane..(bi + 1) * o * plane];
        for (oc, chunk) in dys.chunks(plane).enumerate() {
            db[oc] = db[oc] + chunk.iter().copied().sum::<T>();
        }
        if g.pointwise() {
            gemm(o, plane, ckk, dys, false, xs, true, &mut dw, true);
            if need_dx {
                let dxs = &mut dx[bi * c * h * wd..(bi + 1) * c * h * wd];
                gemm(ckk, o, plane, w.data(), true, dys, false, dxs, true);
            }
            continue;
        }
        im2col(xs, &g, &mut cols);
        gemm(o, plane, ckk, dys, false, &cols, true, &mut dw, true);
        if need_dx {
            gemm(ckk, o, plane, w.data(), true, dys, false, &mut cols, false);
            col2im_add(&cols, &g, &mut dx[bi * c * h * wd..(bi + 1) * c * h * wd]);
        }
    }
    (
        need_dx.then(|| Tensor::from_vec(x.shape(), dx)),
        Tensor::from_vec(w.shape(), dw),
        Tensor::from_vec(&[o], db),
    )
}

/// Source taps for one output coordinate of a half-pixel-centred bilinear resize.
#[derive(Clone, Copy, Debug)]
pub struct Tap<T> {
    pub i0: usize,
    pub i1: usize,
    pub w0: T,
    pub w1: T,
}

/// Bilinear taps along one axis (pixel centres at `i + 0.5`, edges clamped).
pub fn resize_taps<T: Scalar>(in_len: usize, out_len: usize) -> Vec<Tap<T>> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let l1 = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: T::of(1.0 - l1),
                w1: T::of(l1),
            }
        })
        .collect()
}

pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    let ty = resize_taps::<T>(h, out_h);
    let tx = resize_taps::<T>(w, out_w);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in x.data().chunks(h * w) {
        for a in &ty {
            let r0 = &plane[a.i0 * w..(a.i0 + 1) * w];
            let r1 = &plane[a.i1 * w..(a.i1 + 1) * w];
            for b in &tx {
                let top = r0[b.i0] * b.w0 + r0[b.i1] * b.w1;
                let bot = r1[b.i0] * b.w0 + r1[b.i1] * b.w1;
                out.push(top * a.w0 + bot * a.w1);
            }
        }
    }
    Tensor::from_vec(&[n, c, out_h, out_w], out)
}

pub fn resize_bilinear_backward<T: Scalar>(
    in_shape: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (_, _, out_h, out_w) = dy.dims4();
    if (h, w) == (out_h, out_w) {
        return dy.clone();
    }
    let ty = resize_taps::<T>(h, out_h);
    let tx = resize_taps::<T>(w, out_w);
    let mut dx = vec![T::zero(); n * c * h * w];
    for (plane, dplane) in dx.chunks_mut(h * w).zip(dy.data().chunks(out_h * out_w)) {
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let g = dplane[oy * out_w + ox];
                let gt = g * a.w0;
                let gb = g * a.w1;
                plane[a.i0 * w + b.i0] = plane[a.i0 * w + b.i0] + gt * b.w0;
                plane[a.i0 * w + b.i1] = plane[a.i0 * w + b.i1] + gt * b.w1;
                plane[a.i1 * w + b.i0] = plane[a.i1 * w + b.i0] + gb * b.w0;
                plane[a.i1 * w + b.i1] = plane[a.i1 * w + b.i1] + gb * b.w1;
            }
        }
    }
    Tensor::from_vec(in_shape, dx)
}

/// Non-overlapping `k x k` average pooling; H and W must be divisible by `k`.
pub fn avg_pool<T: Scalar>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert!(h % k == 0 && w % k == 0, "avg_pool: {h}x{w} not divisible by {k}");
    let (oh, ow) = (h / k, w / k);
    let norm = T::of(1.0 / (k * k) as f64);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for (plane, oplane) in x.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        for y in 0..h {
            let orow = &mut oplane[(y / k) * ow..(y / k + 1) * ow];
            for (xx, &v) in plane[y * w..(y + 1) * w].iter().enumerate() {
                orow[xx / k] = orow[xx / k] + v;
            }
        }
        oplane.iter_mut().for_each(|v| *v = *v * norm);
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

pub fn avg_pool_backward<T: Scalar>(in_shape: &[usize], k: usize, dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (oh, ow) = (h / k, w / k);
    let norm = T::of(1.0 / (k * k) as f64);
    let mut dx = vec![T::zero(); in_shape.iter().product()];
    for (plane, dplane) in dx.chunks_mut(h * w).zip(dy.data().chunks(oh * ow)) {
        for y in 0..h {
            for xx in 0..w {
                plane[y * w + xx] = dplane[(y / k) * ow + xx / k] * norm;
            }
        }
    }
    Tensor::from_vec(in_shape, dx)
}

/// `2 x 2` max pooling with stride 2. Returns the output and argmax offsets.
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for (p, plane) in x.data().chunks(h * w).enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (T::neg_infinity(), 0);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = (2 * oy + dy) * w + 2 * ox + dx;
                        if plane[i] > best.0 {
                            best = (plane[i], i);
                        }
                    }
                }
                out.push(best.0);
                arg.push(p * h * w + best.1);
            }
        }
    }
    (Tensor::from_vec(&[n, c, oh, ow], out), arg)
}

/// Bilinear backward warp: output `(y, x)` samples `img` at
/// `(x + flow_x, y + flow_y)` with zeros outside the image.
///
/// `flow` is `N x 2 x H x W` (channel 0 = x, channel 1 = y).
pub fn warp<T: Scalar>(img: &Tensor<T>, flow: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = img.dims4();
    let (fnb, fc, fh, fw) = flow.dims4();
    assert!(fnb == n && fc == 2 && fh == h && fw == w, "warp: flow shape mismatch");
    let plane = h * w;
    let mut out = vec![T::zero(); n * c * plane];
    for b in 0..n {
        let fx = &flow.data()[(b * 2) * plane..(b * 2 + 1) * plane];
        let fy = &flow.data()[(b * 2 + 1) * plane..(b * 2 + 2) * plane];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let s = Sample::new(x, y, fx[p], fy[p], w, h);
                for ch in 0..c {
                    let src = &img.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                    out[(b * c + ch) * plane + p] = s.gather(src, w);
                }
            }
        }
    }
    Tensor::from_vec(img.shape(), out)
}

/// Gradients of [`warp`] with respect to the image and the flow.
pub fn warp_backward<T: Scalar>(
    img: &Tensor<T>,
    flow: &Tensor<T>,
    dy: &Tensor<T>,
    need_dimg: bool,
    need_dflow: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (n, c, h, w) = img.dims4();
    let plane = h * w;
    let mut dimg = if need_dimg { vec![T::zero(); img.numel()] } else { Vec::new() };
    let mut dflow = if need_dflow { vec![T::zero(); flow.numel()] } else { Vec::new() };
    for b in 0..n {
        let fx = &flow.data()[(b * 2) * plane..(b * 2 + 1) * plane];
        let fy = &flow.data()[(b * 2 + 1) * plane..(b * 2 + 2) * plane];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let s = Sample::new(x, y, fx[p], fy[p], w, h);
                let (mut gx, mut gy) = (T::zero(), T::zero());
                for ch in 0..c {
                    let off = (b * c + ch) * plane;
                    let g = dy.data()[off + p];
                    if need_dimg {
                        s.scatter(&mut dimg[off..off + plane], w, g);
                    }
                    if need_dflow {
                        let (ddx, ddy) = s.spatial_grad(&img.data()[off..off + plane], w);
                        gx = gx + g * ddx;
                        gy = gy + g * ddy;
                    }
                }
                if need_dflow {
                    dflow[(b * 2) * plane + p] = gx;
                    dflow[(b * 2 + 1) * plane + p] = gy;
                }
            }
        }
    }
    (
        need_dimg.then(|| Tensor::from_vec(img.shape(), dimg)),
        need_dflow.then(|| Tensor::from_vec(flow.shape(), dflow)),
    )
}

/// One bilinear sample point with zero padding outside the image.
struct Sample<T> {
    x0: isize,
    y0: isize,
    ax: T,
    ay: T,
    w: usize,
    h: usize,
}

impl<T: Scalar> Sample<T> {
    fn new(x: usize, y: usize, fx: T, fy: T, w: usize, h: usize) -> Self {
        let locate = |base: usize, d: T| {
            let pos = base as f64 + d.as_f64();
            // Non-finite or absurdly distant samples fall fully outside.
            if pos.is_finite() && pos.abs() < 1e9 {
                let floor = pos.floor();
                (floor as isize, T::of(pos - floor))
            } else {
                (isize::MIN / 2, T::zero())
            }
        };
        let (x0, ax) = locate(x, fx);
        let (y0, ay) = locate(y, fy);
        Self { x0, y0, ax, ay, w, h }
    }

    #[inline]
    fn at(&self, src: &[T], stride: usize, yy: isize, xx: isize) -> T {
        if xx < 0 || yy < 0 || xx >= self.w as isize || yy >= self.h as isize {
            T::zero()
        } else {
            src[yy as usize * stride + xx as usize]
        }
    }

    #[inline]
    fn corners(&self, src: &[T], stride: usize) -> [T; 4] {
        [
            self.at(src, stride, self.y0, self.x0),
            self.at(src, stride, self.y0, self.x0 + 1),
            self.at(src, stride, self.y0 + 1, self.x0),
            self.at(src, stride, self.y0 + 1, self.x0 + 1),
        ]
    }

    fn gather(&self, src: &[T], stride: usize) -> T {
        let [a, b, c, d] = self.corners(src, stride);
        let one = T::one();
        (one - self.ay) * ((one - self.ax) * a + self.ax * b)
            + self.ay * ((one - self.ax) * c + self.ax * d)
    }

    fn scatter(&self, dst: &mut [T], stride: usize, g: T) {
        let one = T::one();
        let taps = [
            (self.y0, self.x0, (one - self.ay) * (one - self.ax)),
            (self.y0, self.x0 + 1, (one - self.ay) * self.ax),
            (self.y0 + 1, self.x0, self.ay * (one - self.ax)),
            (self.y0 + 1, self.x0 + 1, self.ay * self.ax),
        ];
        for (yy, xx, wt) in taps {
            if xx >= 0 && yy >= 0 && xx < self.w as isize && yy < self.h as isize {
                let i = yy as usize * stride + xx as usize;
                dst[i] = dst[i] + g * wt;
            }
        }
    }

    /// Partial derivatives of the sampled value with respect to the sample position.
    fn spatial_grad(&self, src: &[T], stride: usize) -> (T, T) {
        let [a, b, c, d] = self.corners(src, stride);
        let one = T::one();
        let dx = (one - self.ay) * (b - a) + self.ay * (d - c);
        let dy = (one - self.ax) * (c - a) + self.ax * (d - b);
        (dx, dy)
    }
}

/// Mirror index into `0..n` (edge sample not repeated), periodic for any offset.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reflect-pads the bottom and right edges of a rank-4 tensor.
pub fn reflect_pad<T: Scalar>(x: &Tensor<T>, pad_h: usize, pad_w: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h + pad_h, w + pad_w);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for y in 0..oh {
            let sy = reflect_index(y as isize, h);
            for xx in 0..ow {
                out.push(plane[sy * w + reflect_index(xx as isize, w)]);
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

pub fn reflect_pad_backward<T: Scalar>(in_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (_, _, oh, ow) = dy.dims4();
    let mut dx = vec![T::zero(); in_shape.iter().product()];
    for (plane, dplane) in dx.chunks_mut(h * w).zip(dy.data().chunks(oh * ow)) {
        for y in 0..oh {
            let sy = reflect_index(y as isize, h);
            for xx in 0..ow {
                let i = sy * w + reflect_index(xx as isize, w);
                plane[i] = plane[i] + dplane[y * ow + xx];
            }
        }
    }
    Tensor::from_vec(in_shape, dx)
}

/// Top-left `h x w` crop of a rank-4 tensor.
pub fn crop<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (n, c, ih, iw) = x.dims4();
    assert!(h <= ih && w <= iw, "crop larger than input");
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in x.data().chunks(ih * iw) {
        for y in 0..h {
            out.extend_from_slice(&plane[y * iw..y * iw + w]);
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}

pub fn crop_backward<T: Scalar>(in_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (ih, iw) = (in_shape[2], in_shape[3]);
    let (_, _, h, w) = dy.dims4();
    let mut dx = vec![T::zero(); in_shape.iter().product()];
    for (plane, dplane) in dx.chunks_mut(ih * iw).zip(dy.data().chunks(h * w)) {
        for y in 0..h {
            plane[y * iw..y * iw + w].copy_from_slice(&dplane[y * w..(y + 1) * w]);
        }
    }
    Tensor::from_vec(in_shape, dx)
}

/// `N x C x H x W` to `N x L x (C*p*p)` tokens, patches in row-major grid
/// order and features ordered `(c, py, px)`. H and W must be multiples of `p`.
pub fn patchify<T: Scalar>(x: &Tensor<T>, p: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert!(h % p == 0 && w % p == 0, "patchify: {h}x{w} not divisible by {p}");
    let (gh, gw) = (h / p, w / p);
    let dim = c * p * p;
    let mut out = vec![T::zero(); n * gh * gw * dim];
    for b in 0..n {
        for ch in 0..c {
            let plane = &x.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            for y in 0..h {
                for xx in 0..w {
                    let tok = (y / p) * gw + xx / p;
                    let f = (ch * p + y % p) * p + xx % p;
                    out[(b * gh * gw + tok) * dim + f] = plane[y * w + xx];
                }
            }
        }
    }
    Tensor::from_vec(&[n, gh * gw, dim], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(t: &Tensor<T>, p: usize, c: usize, h: usize, w: usize) -> Tensor<T> {
    let n = t.shape()[0];
    let (gh, gw) = (h / p, w / p);
    let dim = c * p * p;
    assert_eq!(t.shape(), &[n, gh * gw, dim], "unpatchify: token shape mismatch");
    let mut out = vec![T::zero(); n * c * h * w];
    for b in 0..n {
        for ch in 0..c {
            let plane = &mut out[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            for y in 0..h {
                for xx in 0..w {
                    let tok = (y / p) * gw + xx / p;
                    let f = (ch * p + y % p) * p + xx % p;
                    plane[y * w + xx] = t.data()[(b * gh * gw + tok) * dim + f];
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}
