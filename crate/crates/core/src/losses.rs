//! Training objective: event-branch reconstruction, final reconstruction and
//! a perceptual term, combined with fixed weights.

use std::path::Path;

use egmr_autograd::{Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, Init, ParamStore, Session};
use crate::warp_refine::fuse_event_var;

/// Intensity scale the L1 terms are measured in.
pub const PIXEL_SCALE: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_r_e: f64,
    pub lambda_r: f64,
    pub lambda_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_r_e: 1.0,
            lambda_r: 1.0,
            lambda_p: 0.1,
        }
    }
}

/// Scalar values of the three loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub event_recon: f64,
    pub recon: f64,
    pub perceptual: f64,
}

/// Weighted sum of the components, rejecting non-finite terms.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    for (component, value) in [
        ("event reconstruction", c.event_recon),
        ("reconstruction", c.recon),
        ("perceptual", c.perceptual),
    ] {
        if !value.is_finite() {
            return Err(Error::Numeric { component, value });
        }
    }
    Ok(w.lambda_r_e * c.event_recon + w.lambda_r * c.recon + w.lambda_p * c.perceptual)
}

/// Tape version of [`total_loss`].
pub fn total_loss_var<T: Scalar>(s: &Session<'_, T>, event_recon: Var, recon: Var, perceptual: Var, w: &LossWeights) -> Var {
    let a = s.tape.scale(event_recon, T::of(w.lambda_r_e));
    let b = s.tape.scale(recon, T::of(w.lambda_r));
    let c = s.tape.scale(perceptual, T::of(w.lambda_p));
    s.tape.add(s.tape.add(a, b), c)
}

fn same<T: Scalar>(s: &Session<'_, T>, a: Var, b: Var, what: &str) -> Result<()> {
    let (sa, sb) = (s.tape.shape(a), s.tape.shape(b));
    if sa != sb {
        return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
    }
    Ok(())
}

/// Mean absolute difference in 0..255 units.
pub fn recon_loss<T: Scalar>(s: &Session<'_, T>, gt: Var, pred: Var) -> Result<Var> {
    same(s, gt, pred, "reconstruction inputs")?;
    let d = s.tape.abs(s.tape.sub(gt, pred));
    Ok(s.tape.scale(s.tape.mean(d), T::of(PIXEL_SCALE)))
}

/// Reconstruction of the target frame from the event flow and event
/// visibility alone, scored like [`recon_loss`].
pub fn event_recon_loss<T: Scalar>(
    s: &Session<'_, T>,
    gt: Var,
    i0: Var,
    i1: Var,
    event_flow: Var,
    event_vis: Var,
) -> Result<Var> {
    same(s, gt, i0, "target and first keyframe")?;
    same(s, gt, i1, "target and second keyframe")?;
    let sh = s.tape.shape(gt);
    let (fs, ms) = (s.tape.shape(event_flow), s.tape.shape(event_vis));
    if fs != [sh[0], 4, sh[2], sh[3]] || ms != [sh[0], 2, sh[2], sh[3]] {
        return Err(Error::Shape(format!("event flow {fs:?} / visibility {ms:?} do not fit {sh:?}")));
    }
    let w0 = s.tape.warp(i0, s.tape.slice_channels(event_flow, 0, 2));
    let w1 = s.tape.warp(i1, s.tape.slice_channels(event_flow, 2, 2));
    let rec = fuse_event_var(s, w0, w1, event_vis);
    recon_loss(s, gt, rec)
}

#[derive(Clone, Debug)]
enum Layer {
    Conv(Conv),
    Relu,
    MaxPool,
}

/// Frozen convolutional feature map used by the perceptual term.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor {
    /// Human-readable origin of the weights.
    pub descriptor: String,
    params: ParamStore<f32>,
    layers: Vec<Layer>,
    /// Per-channel `(mean, std)` applied to inputs in `[0, 1]`.
    normalize: Option<([f32; 3], [f32; 3])>,
}

/// Channel widths of the default random stack.
pub const RANDOM_WIDTHS: [usize; 4] = [16, 32, 64, 128];

const VGG_BLOCKS: [(usize, usize); 4] = [(2, 64), (2, 128), (3, 256), (3, 512)];

impl PerceptualExtractor {
    /// Four convolution stages with stride 2 between them, fixed by `seed`.
    pub fn random(seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let mut b = Builder::new(&mut params, &mut init);
        let mut layers = Vec::new();
        let mut c_in = 3;
        for (i, &c) in RANDOM_WIDTHS.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            layers.push(Layer::Conv(b.conv(&format!("stage{i}"), c_in, c, 3, stride)));
            layers.push(Layer::Relu);
            c_in = c;
        }
        Self {
            descriptor: format!("random conv stack 16/32/64/128, seed {seed}"),
            params,
            layers,
            normalize: None,
        }
    }

    /// VGG16 up to `relu4_3` from a store with `convB_I.weight` / `convB_I.bias`
    /// entries in `C_out x C_in x 3 x 3` layout.
    pub fn vgg16_conv4_3(store: ParamStore<f32>) -> Result<Self> {
        let mut layers = Vec::new();
        let mut c_in = 3;
        for (block, &(n, c)) in VGG_BLOCKS.iter().enumerate() {
            if block > 0 {
                layers.push(Layer::MaxPool);
            }
            for i in 0..n {
                let name = format!("conv{}_{}", block + 1, i + 1);
                let find = |suffix: &str, shape: &[usize]| {
                    let full = format!("{name}.{suffix}");
                    let id = store
                        .find(&full)
                        .ok_or_else(|| Error::Checkpoint(format!("missing {full}")))?;
                    if store.get(id).shape() != shape {
                        return Err(Error::Checkpoint(format!(
                            "{full} has shape {:?}, expected {shape:?}",
                            store.get(id).shape()
                        )));
                    }
                    Ok(id)
                };
                let weight = find("weight", &[c, c_in, 3, 3])?;
                let bias = find("bias", &[c])?;
                layers.push(Layer::Conv(Conv {
                    weight,
                    bias,
                    stride: 1,
                    pad: 1,
                }));
                layers.push(Layer::Relu);
                c_in = c;
            }
        }
        Ok(Self {
            descriptor: "VGG16 relu4_3".into(),
            params: store,
            layers,
            normalize: Some(([0.485, 0.456, 0.406], [0.229, 0.224, 0.225])),
        })
    }

    /// Loads VGG16 weights from a parameter container file.
    pub fn load_vgg16(path: &Path) -> Result<Self> {
        let ckpt = checkpoint::read(path)?;
        Self::vgg16_conv4_3(ckpt.params)
    }

    pub fn features<T: Scalar>(&self, tape: &Tape<T>, img: Var) -> Var {
        let s = Session::new(tape, &self.params.cast(), false);
        let mut x = img;
        if let Some((mean, std)) = self.normalize {
            let m = Tensor::from_vec(&[1, 3, 1, 1], mean.iter().map(|&v| T::of(v as f64)).collect());
            let inv = Tensor::from_vec(&[1, 3, 1, 1], std.iter().map(|&v| T::of(1.0 / v as f64)).collect());
            x = tape.mul(tape.sub(x, tape.constant(m)), tape.constant(inv));
        }
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(c) => c.forward(&s, x),
                Layer::Relu => tape.relu(x),
                Layer::MaxPool => tape.max_pool2(x),
            };
        }
        x
    }
}

/// Sum over the batch of the Euclidean norm of the feature difference,
/// divided by the number of feature elements.
pub fn perceptual_loss<T: Scalar>(s: &Session<'_, T>, gt: Var, pred: Var, extractor: &PerceptualExtractor) -> Result<Var> {
    same(s, gt, pred, "perceptual inputs")?;
    let fg = extractor.features(s.tape, gt);
    let fp = extractor.features(s.tape, pred);
    let n = s.tape.value(fg).numel();
    let norms = s.tape.l2_norm_per_sample(s.tape.sub(fg, fp));
    Ok(s.tape.scale(s.tape.sum(norms), T::of(1.0 / n as f64)))
}
