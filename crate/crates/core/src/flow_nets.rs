//! Motion-estimation backbones: the event U-Net that predicts event flow and
//! the event visibility pair, and the coarse-to-fine frame flow blocks.

use egmr_autograd::{Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, ResBlock, Session};

/// Downsampling factor of each frame-flow block.
pub const IF_SCALES: [usize; 3] = [4, 2, 1];

/// Bidirectional flow packed as `N x 4 x H x W`: channels `0..2` hold
/// F_{τ→0} (x, y) and `2..4` hold F_{τ→1} (x, y), in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowPair {
    pub packed: Tensor<f32>,
}

impl FlowPair {
    pub fn new(packed: Tensor<f32>) -> Result<Self> {
        if packed.rank() != 4 || packed.shape()[1] != 4 {
            return Err(Error::Shape(format!("flow pair must be N x 4 x H x W, got {:?}", packed.shape())));
        }
        Ok(Self { packed })
    }

    pub fn to_0(&self) -> Tensor<f32> {
        self.packed.channels(0, 2)
    }

    pub fn to_1(&self) -> Tensor<f32> {
        self.packed.channels(2, 2)
    }

    pub fn height(&self) -> usize {
        self.packed.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.packed.shape()[3]
    }
}

pub(crate) fn check_finite<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::Input(format!("{what} contains NaN or infinity")))
    }
}

/// Outputs of [`EventFlowNet::forward`].
#[derive(Clone, Copy, Debug)]
pub struct EventFlowOut {
    /// `N x 4 x H x W` event flow.
    pub flow: Var,
    /// `N x 2 x H x W` visibility pair, softmax-normalised across channels.
    pub visibility: Var,
}

/// Encoder-decoder with skip connections over both voxel grids.
#[derive(Clone, Debug)]
pub struct EventFlowNet {
    pub bins: usize,
    pub base: usize,
    enc: [[Conv; 2]; 4],
    dec: [[Conv; 2]; 3],
    head: Conv,
}

impl EventFlowNet {
    pub fn build(b: &mut Builder<'_>, bins: usize, base: usize) -> Self {
        let w = [base, 2 * base, 4 * base, 8 * base];
        let enc = [0, 1, 2, 3].map(|i| {
            let c_in = if i == 0 { 2 * bins } else { w[i - 1] };
            let stride = if i == 0 { 1 } else { 2 };
            b.scoped(&format!("enc{i}"), |b| [b.conv("a", c_in, w[i], 3, stride), b.conv("b", w[i], w[i], 3, 1)])
        });
        let dec = [2, 1, 0].map(|i| {
            b.scoped(&format!("dec{i}"), |b| {
                [b.conv("a", w[i + 1] + w[i], w[i], 3, 1), b.conv("b", w[i], w[i], 3, 1)]
            })
        });
        let head = b.conv_with_gain("head", base, 6, 3, 1, 0.1);
        Self {
            bins,
            base,
            enc,
            dec,
            head,
        }
    }

    /// `voxels` is `N x 2B x H x W`: the grid before τ followed by the grid after.
    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, voxels: Var) -> Result<EventFlowOut> {
        let shape = s.tape.shape(voxels);
        if shape.len() != 4 || shape[1] != 2 * self.bins {
            return Err(Error::Shape(format!(
                "event flow input must be N x {} x H x W, got {shape:?}",
                2 * self.bins
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Shape(format!("event flow input {h}x{w} not divisible by 8")));
        }
        check_finite(&s.tape.value(voxels), "voxel grid")?;

        let mut skips = Vec::with_capacity(4);
        let mut x = voxels;
        for [a, b] in &self.enc {
            x = a.forward_act(s, x);
            x = b.forward_act(s, x);
            skips.push(x);
        }
        for (d, [a, b]) in self.dec.iter().enumerate() {
            let skip = skips[2 - d];
            let (sh, sw) = (s.tape.shape(skip)[2], s.tape.shape(skip)[3]);
            let up = s.tape.resize(x, sh, sw);
            let cat = s.tape.concat(&[up, skip]);
            x = a.forward_act(s, cat);
            x = b.forward_act(s, x);
        }
        let out = self.head.forward(s, x);
        let flow = s.tape.slice_channels(out, 0, 4);
        let logits = s.tape.slice_channels(out, 4, 2);
        let visibility = s.tape.softmax(logits, 1);
        Ok(EventFlowOut { flow, visibility })
    }
}

/// Outputs of [`IfBlock::forward`].
#[derive(Clone, Copy, Debug)]
pub struct IfBlockOut {
    /// `N x 4 x H x W`, warm flow plus the predicted update.
    pub flow: Var,
    /// `N x 1 x H x W` visibility logit.
    pub logit: Var,
}

/// One coarse-to-fine frame-flow block working at `1 / K` of the input size.
#[derive(Clone, Debug)]
pub struct IfBlock {
    pub scale: usize,
    pub width: usize,
    stem: [Conv; 2],
    blocks: Vec<ResBlock>,
    head: Conv,
}

/// Input channels: both keyframes, both warped keyframes, the warm flow and τ.
const IF_IN: usize = 3 * 4 + 4 + 1;

impl IfBlock {
    pub fn build(b: &mut Builder<'_>, scale: usize, width: usize, n_blocks: usize) -> Result<Self> {
        if scale >= IF_SCALES.len() {
            return Err(Error::Parameter(format!("block scale {scale} not in 0..=2")));
        }
        let stem = [b.conv("stem0", IF_IN, width, 3, 2), b.conv("stem1", width, width, 3, 1)];
        let blocks = (0..n_blocks).map(|i| ResBlock::build(b, &format!("res{i}"), width)).collect();
        let head = b.conv_with_gain("head", width, 5, 3, 1, 0.1);
        Ok(Self {
            scale,
            width,
            stem,
            blocks,
            head,
        })
    }

    pub fn factor(&self) -> usize {
        IF_SCALES[self.scale]
    }

    /// `i0`, `i1` are `N x 3 x H x W`, `tau` is an `N x 1 x H x W` constant plane.
    /// A missing warm flow is the same as an all-zero one.
    pub fn forward<T: Scalar>(
        &self,
        s: &Session<'_, T>,
        i0: Var,
        i1: Var,
        tau: Var,
        warm: Option<Var>,
    ) -> Result<IfBlockOut> {
        let shape = s.tape.shape(i0);
        if shape != s.tape.shape(i1) || shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Shape(format!(
                "keyframes must both be N x 3 x H x W, got {shape:?} and {:?}",
                s.tape.shape(i1)
            )));
        }
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Shape(format!("frame flow input {h}x{w} not divisible by 4")));
        }
        let warm = match warm {
            Some(f) => {
                if s.tape.shape(f) != [n, 4, h, w] {
                    return Err(Error::Shape(format!("warm flow shape {:?}", s.tape.shape(f))));
                }
                f
            }
            None => s.constant(Tensor::zeros(&[n, 4, h, w])),
        };
        let k = self.factor();
        let w0 = s.tape.warp(i0, s.tape.slice_channels(warm, 0, 2));
        let w1 = s.tape.warp(i1, s.tape.slice_channels(warm, 2, 2));
        let images = s.tape.concat(&[i0, i1, w0, w1, tau]);
        let images = s.tape.avg_pool(images, k);
        let flow_small = s.tape.scale(s.tape.avg_pool(warm, k), T::of(1.0 / k as f64));
        let x = s.tape.concat(&[images, flow_small]);
        let (hk, wk) = (h / k, w / k);

        let mut x = self.stem[0].forward_act(s, x);
        x = self.stem[1].forward_act(s, x);
        for block in &self.blocks {
            x = block.forward(s, x);
        }
        let x = s.tape.resize(x, hk, wk);
        let out = self.head.forward(s, x);
        let out = s.tape.resize(out, h, w);
        let update = s.tape.scale(s.tape.slice_channels(out, 0, 4), T::of(k as f64));
        let flow = s.tape.add(warm, update);
        let logit = s.tape.slice_channels(out, 4, 1);
        Ok(IfBlockOut { flow, logit })
    }
}

/// Bilinearly resamples a packed flow to `target_h x target_w`, rescaling
/// displacements to target pixels. Same-size input is returned unchanged.
pub fn resample_event_flow<T: Scalar>(s: &Session<'_, T>, flow: Var, target_h: usize, target_w: usize) -> Result<Var> {
    let shape = s.tape.shape(flow);
    let (sh, sw) = (shape[2], shape[3]);
    if sh * target_w != sw * target_h {
        return Err(Error::Parameter(format!(
            "cannot resample {sh}x{sw} flow to {target_h}x{target_w}: aspect ratio differs"
        )));
    }
    if (sh, sw) == (target_h, target_w) {
        return Ok(flow);
    }
    let resized = s.tape.resize(flow, target_h, target_w);
    Ok(s.tape.scale(resized, T::of(target_w as f64 / sw as f64)))
}

/// Tensor-level convenience for [`resample_event_flow`].
pub fn resample_flow_tensor(flow: &FlowPair, target_h: usize, target_w: usize) -> Result<FlowPair> {
    let tape = egmr_autograd::Tape::new();
    let s = Session::from_vars(&tape, Vec::new());
    let v = tape.constant(flow.packed.clone());
    let out = resample_event_flow(&s, v, target_h, target_w)?;
    FlowPair::new(tape.value(out).as_ref().clone())
}
