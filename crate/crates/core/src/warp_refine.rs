//! Backward warping, the two visibility-weighted fusions, the cross-space
//! attention that blends them, and the residual refinement network.

use egmr_autograd::{kernels, Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, Session};

/// A backward-warped image and the in-bounds mass of its samples.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedFrame {
    /// `N x C x H x W`.
    pub image: Tensor<f32>,
    /// `N x 1 x H x W`; 1 where all bilinear taps fall inside the source.
    pub validity: Tensor<f32>,
}

fn check_flow(img: &[usize], flow: &[usize]) -> Result<()> {
    if img.len() != 4 || flow.len() != 4 || flow[1] != 2 || img[0] != flow[0] || img[2..] != flow[2..] {
        return Err(Error::Shape(format!("cannot warp image {img:?} with flow {flow:?}")));
    }
    Ok(())
}

/// Samples `img` at `(x + F_x, y + F_y)` with zero padding outside the frame.
pub fn backward_warp(img: &Tensor<f32>, flow: &Tensor<f32>) -> Result<WarpedFrame> {
    check_flow(img.shape(), flow.shape())?;
    let (n, _, h, w) = img.dims4();
    Ok(WarpedFrame {
        image: kernels::warp(img, flow),
        validity: kernels::warp(&Tensor::ones(&[n, 1, h, w]), flow),
    })
}

/// Tape version of [`backward_warp`]: returns `(image, validity)`.
pub fn warp_var<T: Scalar>(s: &Session<'_, T>, img: Var, flow: Var) -> Result<(Var, Var)> {
    let shape = s.tape.shape(img);
    check_flow(&shape, &s.tape.shape(flow))?;
    let ones = s.constant(Tensor::ones(&[shape[0], 1, shape[2], shape[3]]));
    Ok((s.tape.warp(img, flow), s.tape.warp(ones, flow)))
}

fn same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

fn check_map(image: &[usize], map: &[usize], channels: usize) -> Result<()> {
    let ok = map.len() == 4 && map[0] == image[0] && map[1] == channels && map[2..] == image[2..];
    if !ok {
        return Err(Error::Shape(format!("map {map:?} does not fit image {image:?}")));
    }
    Ok(())
}

/// `M * w0 + (1 - M) * w1` with `M` of shape `N x 1 x H x W`.
pub fn fuse_image_visibility(w0: &WarpedFrame, w1: &WarpedFrame, m: &Tensor<f32>) -> Result<Tensor<f32>> {
    same_shape(w0.image.shape(), w1.image.shape(), "warped frames")?;
    check_map(w0.image.shape(), m.shape(), 1)?;
    if let Some(v) = m.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Contract(format!("visibility value {v} outside [0, 1]")));
    }
    let tape = egmr_autograd::Tape::new();
    let s = Session::from_vars(&tape, Vec::new());
    let out = fuse_image_var(&s, tape.constant(w0.image.clone()), tape.constant(w1.image.clone()), tape.constant(m.clone()));
    Ok(tape.value(out).as_ref().clone())
}

pub fn fuse_image_var<T: Scalar>(s: &Session<'_, T>, w0: Var, w1: Var, m: Var) -> Var {
    let a = s.tape.mul(w0, m);
    let b = s.tape.mul(w1, s.tape.one_minus(m));
    s.tape.add(a, b)
}

/// `Me_0 * w0 + Me_1 * w1` with the pair packed as `N x 2 x H x W`.
pub fn fuse_event_visibility(w0: &WarpedFrame, w1: &WarpedFrame, me: &Tensor<f32>) -> Result<Tensor<f32>> {
    same_shape(w0.image.shape(), w1.image.shape(), "warped frames")?;
    check_map(w0.image.shape(), me.shape(), 2)?;
    let (n, _, h, w) = me.dims4();
    let plane = h * w;
    for b in 0..n {
        for p in 0..plane {
            let sum = me.data()[b * 2 * plane + p] + me.data()[b * 2 * plane + plane + p];
            if (sum - 1.0).abs() > 1e-4 {
                return Err(Error::Contract(format!("event visibility pair sums to {sum}")));
            }
        }
    }
    let tape = egmr_autograd::Tape::new();
    let s = Session::from_vars(&tape, Vec::new());
    let out = fuse_event_var(&s, tape.constant(w0.image.clone()), tape.constant(w1.image.clone()), tape.constant(me.clone()));
    Ok(tape.value(out).as_ref().clone())
}

pub fn fuse_event_var<T: Scalar>(s: &Session<'_, T>, w0: Var, w1: Var, me: Var) -> Var {
    let a = s.tape.mul(w0, s.tape.slice_channels(me, 0, 1));
    let b = s.tape.mul(w1, s.tape.slice_channels(me, 1, 1));
    s.tape.add(a, b)
}

/// Convolutional cross-space attention producing per-pixel blend weights.
#[derive(Clone, Debug)]
pub struct C2sa {
    pub width: usize,
    pub q_f: Conv,
    pub k_f: Conv,
    pub q_e: Conv,
    pub k_e: Conv,
    pub mix0: Conv,
    pub mix1: Conv,
}

impl C2sa {
    pub fn build(b: &mut Builder<'_>, width: usize) -> Self {
        Self {
            width,
            q_f: b.conv("q_f", 3, width, 3, 1),
            k_f: b.conv("k_f", 3, width, 3, 1),
            q_e: b.conv("q_e", 3, width, 3, 1),
            k_e: b.conv("k_e", 3, width, 3, 1),
            mix0: b.conv("mix0", 2 * width, 1, 3, 1),
            mix1: b.conv("mix1", 2 * width, 1, 3, 1),
        }
    }

    /// Returns `N x 2 x H x W` weights `(W0, W1)` summing to one per pixel.
    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, img_f: Var, img_e: Var) -> Result<Var> {
        let shape = s.tape.shape(img_f);
        same_shape(&shape, &s.tape.shape(img_e), "fused images")?;
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Shape(format!("fused images must be N x 3 x H x W, got {shape:?}")));
        }
        let qf = self.q_f.forward_act(s, img_f);
        let kf = self.k_f.forward_act(s, img_f);
        let qe = self.q_e.forward_act(s, img_e);
        let ke = self.k_e.forward_act(s, img_e);
        let l0 = self.mix0.forward(s, s.tape.concat(&[qe, kf]));
        let l1 = self.mix1.forward(s, s.tape.concat(&[qf, ke]));
        Ok(s.tape.softmax(s.tape.concat(&[l0, l1]), 1))
    }
}

/// Inputs to [`RefineNet::forward`], all `N x C x H x W` at full resolution.
#[derive(Clone, Copy, Debug)]
pub struct RefineInputs {
    pub i0: Var,
    pub i1: Var,
    pub warped0: Var,
    pub warped1: Var,
    pub valid0: Var,
    pub valid1: Var,
    pub flow: Var,
    /// Image visibility after the sigmoid.
    pub visibility: Var,
    pub event_visibility: Option<Var>,
}

impl RefineInputs {
    fn channels(with_events: bool) -> usize {
        3 * 4 + 2 + 4 + 1 + if with_events { 2 } else { 0 }
    }
}

/// Two-stage encoder-decoder predicting a bounded residual image.
#[derive(Clone, Debug)]
pub struct RefineNet {
    pub base: usize,
    pub with_events: bool,
    enc: [[Conv; 2]; 3],
    dec: [Conv; 2],
    head: Conv,
}

impl RefineNet {
    pub fn build(b: &mut Builder<'_>, base: usize, with_events: bool) -> Self {
        let w = [base, 2 * base, 4 * base];
        let c_in = RefineInputs::channels(with_events);
        let enc = [0, 1, 2].map(|i| {
            let (ci, stride) = if i == 0 { (c_in, 1) } else { (w[i - 1], 2) };
            b.scoped(&format!("enc{i}"), |b| [b.conv("a", ci, w[i], 3, stride), b.conv("b", w[i], w[i], 3, 1)])
        });
        let dec = [1, 0].map(|i| b.conv(&format!("dec{i}"), w[i + 1] + w[i], w[i], 3, 1));
        let head = b.conv_with_gain("head", base, 3, 3, 1, 0.0);
        Self {
            base,
            with_events,
            enc,
            dec,
            head,
        }
    }

    /// Residual in `[-1, 1]`, `N x 3 x H x W`.
    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, inp: &RefineInputs) -> Result<Var> {
        let mut parts = vec![
            inp.i0,
            inp.i1,
            inp.warped0,
            inp.warped1,
            inp.valid0,
            inp.valid1,
            inp.flow,
            inp.visibility,
        ];
        match (self.with_events, inp.event_visibility) {
            (true, Some(me)) => parts.push(me),
            (false, None) => {}
            _ => {
                return Err(Error::Shape(
                    "event visibility must be given exactly when the refiner expects it".into(),
                ))
            }
        }
        let base = s.tape.shape(inp.i0);
        for &p in &parts {
            let sh = s.tape.shape(p);
            if sh.len() != 4 || sh[0] != base[0] || sh[2..] != base[2..] {
                return Err(Error::Shape(format!("refiner input {sh:?} does not match {base:?}")));
            }
        }
        let mut x = s.tape.concat(&parts);
        let mut skips = Vec::with_capacity(3);
        for [a, b] in &self.enc {
            x = a.forward_act(s, x);
            x = b.forward_act(s, x);
            skips.push(x);
        }
        for (d, conv) in self.dec.iter().enumerate() {
            let skip = skips[1 - d];
            let sh = s.tape.shape(skip);
            let up = s.tape.resize(x, sh[2], sh[3]);
            x = conv.forward_act(s, s.tape.concat(&[up, skip]));
        }
        Ok(s.tape.tanh(self.head.forward(s, x)))
    }
}

/// `W0 * img_f + W1 * img_e + residual`, unclamped.
pub fn synthesize_var<T: Scalar>(s: &Session<'_, T>, img_f: Var, img_e: Var, weights: Var, residual: Var) -> Var {
    let a = s.tape.mul(img_f, s.tape.slice_channels(weights, 0, 1));
    let b = s.tape.mul(img_e, s.tape.slice_channels(weights, 1, 1));
    s.tape.add(s.tape.add(a, b), residual)
}

/// Tensor version of [`synthesize_var`]; `weights` is `N x 2 x H x W`.
pub fn synthesize(img_f: &Tensor<f32>, img_e: &Tensor<f32>, weights: &Tensor<f32>, residual: &Tensor<f32>) -> Result<Tensor<f32>> {
    same_shape(img_f.shape(), img_e.shape(), "fused images")?;
    same_shape(img_f.shape(), residual.shape(), "residual")?;
    check_map(img_f.shape(), weights.shape(), 2)?;
    let tape = egmr_autograd::Tape::new();
    let s = Session::from_vars(&tape, Vec::new());
    let out = synthesize_var(
        &s,
        tape.constant(img_f.clone()),
        tape.constant(img_e.clone()),
        tape.constant(weights.clone()),
        tape.constant(residual.clone()),
    );
    Ok(tape.value(out).as_ref().clone())
}

/// Clamps to the displayable range.
pub fn clamp_unit(img: &Tensor<f32>) -> Tensor<f32> {
    img.map(|v| v.clamp(0.0, 1.0))
}
