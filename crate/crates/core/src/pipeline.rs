//! The full interpolation model: event flow, coarse-to-fine frame flow with
//! per-scale fusion, warping, visibility fusion, blending and refinement.

use egmr_autograd::{Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::ega::{Cla, Coa, ConcatFusion, FlowFusion, PATCH};
use crate::error::{Error, Result};
use crate::events::{voxelize, EventStream, DEFAULT_BINS};
use crate::flow_nets::{check_finite, resample_event_flow, EventFlowNet, IfBlock, IF_SCALES};
use crate::losses::{event_recon_loss, perceptual_loss, recon_loss, total_loss_var, LossWeights, PerceptualExtractor};
use crate::nn::{Builder, Init, ParamStore, Session};
use crate::warp_refine::{clamp_unit, fuse_event_var, fuse_image_var, synthesize_var, warp_var, C2sa, RefineInputs, RefineNet};

/// Which optional components are enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Concatenation fusion, no cross-space blending.
    A,
    /// Concatenation fusion with cross-space blending.
    B,
    /// Edge-guided fusion without cross-space blending.
    C,
    /// Edge-guided fusion and cross-space blending.
    D,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A, Variant::B, Variant::C, Variant::D];

    pub fn edge_guided(self) -> bool {
        matches!(self, Variant::C | Variant::D)
    }

    pub fn cross_space(self) -> bool {
        matches!(self, Variant::B | Variant::D)
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Some(Variant::A),
            "B" => Some(Variant::B),
            "C" => Some(Variant::C),
            "D" => Some(Variant::D),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
            Variant::D => "D",
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub bins: usize,
    pub event_base: usize,
    pub if_widths: [usize; 3],
    pub if_blocks: usize,
    pub embed_dim: usize,
    pub mask_size: usize,
    pub coa_width: usize,
    pub c2sa_width: usize,
    pub refine_base: usize,
    pub edge_guided: bool,
    pub cross_space: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Widths sized for single-core CPU training at 64x64.
    pub fn desk() -> Self {
        Self {
            bins: DEFAULT_BINS,
            event_base: 12,
            if_widths: [32, 32, 24],
            if_blocks: 2,
            embed_dim: 64,
            mask_size: 3,
            coa_width: 16,
            c2sa_width: 16,
            refine_base: 16,
            edge_guided: true,
            cross_space: true,
        }
    }

    /// The larger widths intended for accelerator-backed runs.
    pub fn full() -> Self {
        Self {
            event_base: 32,
            if_widths: [96, 64, 48],
            if_blocks: 4,
            coa_width: 32,
            refine_base: 32,
            ..Self::desk()
        }
    }

    /// Tiny widths for fast tests and gradient checks.
    pub fn tiny() -> Self {
        Self {
            event_base: 4,
            if_widths: [6, 6, 4],
            if_blocks: 1,
            embed_dim: 8,
            coa_width: 4,
            c2sa_width: 4,
            refine_base: 4,
            ..Self::desk()
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.edge_guided = v.edge_guided();
        self.cross_space = v.cross_space();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Parameter(format!("bin count {} below 2", self.bins)));
        }
        if self.mask_size % 2 == 0 {
            return Err(Error::Parameter(format!("mask size {} must be odd", self.mask_size)));
        }
        let widths = [self.event_base, self.embed_dim, self.coa_width, self.c2sa_width, self.refine_base];
        if widths.iter().chain(&self.if_widths).any(|&w| w == 0) {
            return Err(Error::Parameter("network widths must be positive".into()));
        }
        Ok(())
    }
}

/// Batched network input.
#[derive(Clone, Debug)]
pub struct ModelInput<T> {
    /// `N x 3 x H x W` keyframes in `[0, 1]`.
    pub i0: Tensor<T>,
    pub i1: Tensor<T>,
    /// `N x 2B x H x W`: grid of the events before τ, then after.
    pub voxels: Tensor<T>,
    pub tau: Vec<f64>,
}

impl<T: Scalar> ModelInput<T> {
    pub fn batch(&self) -> usize {
        self.i0.shape()[0]
    }

    pub fn tau_plane(&self) -> Tensor<T> {
        let (n, _, h, w) = self.i0.dims4();
        let plane = h * w;
        Tensor::from_fn(&[n, 1, h, w], |i| T::of(self.tau[i / plane]))
    }

    pub fn cast<U: Scalar>(&self) -> ModelInput<U> {
        ModelInput {
            i0: self.i0.cast(),
            i1: self.i1.cast(),
            voxels: self.voxels.cast(),
            tau: self.tau.clone(),
        }
    }
}

/// Splits the stream at τ and voxelizes both halves into a `1 x 2B x H x W` tensor.
pub fn event_tensor(events: &EventStream, tau: f64, bins: usize, h: usize, w: usize) -> Result<Tensor<f32>> {
    let (before, after) = events.split_at_tau(tau)?;
    let g0 = voxelize(&before, bins, h, w)?.to_tensor();
    let g1 = voxelize(&after, bins, h, w)?.to_tensor();
    Ok(Tensor::cat_channels(&[&g0, &g1]))
}

fn check_frame(img: &Tensor<f32>, what: &str) -> Result<(usize, usize)> {
    if img.rank() != 3 || img.shape()[0] != 3 {
        return Err(Error::Shape(format!("{what} must be 3 x H x W, got {:?}", img.shape())));
    }
    Ok((img.shape()[1], img.shape()[2]))
}

impl ModelInput<f32> {
    /// Single-sample input from frames `3 x H x W`.
    pub fn from_sample(i0: &Tensor<f32>, i1: &Tensor<f32>, events: &EventStream, tau: f64, bins: usize) -> Result<Self> {
        let (h, w) = check_frame(i0, "first keyframe")?;
        if check_frame(i1, "second keyframe")? != (h, w) {
            return Err(Error::Shape(format!("keyframes differ: {:?} vs {:?}", i0.shape(), i1.shape())));
        }
        if (events.height(), events.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "event sensor {}x{} does not match frames {h}x{w}",
                events.height(),
                events.width()
            )));
        }
        let voxels = event_tensor(events, tau, bins, h, w)?;
        Ok(Self {
            i0: i0.clone().reshape(&[1, 3, h, w]),
            i1: i1.clone().reshape(&[1, 3, h, w]),
            voxels,
            tau: vec![tau],
        })
    }

    /// Stacks single-sample inputs along the batch axis.
    pub fn concat(items: &[Self]) -> Self {
        let cat = |f: fn(&Self) -> &Tensor<f32>| {
            let parts: Vec<Tensor<f32>> = items.iter().map(|x| f(x).clone()).collect();
            Tensor::stack(&parts)
        };
        Self {
            i0: cat(|x| &x.i0),
            i1: cat(|x| &x.i1),
            voxels: cat(|x| &x.voxels),
            tau: items.iter().flat_map(|x| x.tau.iter().copied()).collect(),
        }
    }
}

/// Graph nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct TraceVars {
    pub event_flow: Var,
    pub event_vis: Var,
    pub frame_flows: Vec<Var>,
    pub refined_flows: Vec<Var>,
    pub vis_logits: Vec<Var>,
    pub warped0: Var,
    pub warped1: Var,
    pub valid0: Var,
    pub valid1: Var,
    pub img_f: Var,
    pub img_e: Var,
    pub weights: Option<Var>,
    pub residual: Var,
    pub output: Var,
}

/// Loss nodes of one training forward pass.
#[derive(Clone, Debug)]
pub struct LossVars {
    pub total: Var,
    pub event_recon: Var,
    pub recon: Var,
    pub perceptual: Var,
    pub trace: TraceVars,
}

/// All intermediate values of a single-sample forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `1 x 4 x H x W` frame flow per scale.
    pub frame_flows: Vec<Tensor<f32>>,
    /// `1 x 4 x H x W` fused flow per scale.
    pub refined_flows: Vec<Tensor<f32>>,
    /// `1 x 1 x H x W` visibility logits per scale.
    pub vis_logits: Vec<Tensor<f32>>,
    pub event_flow: Tensor<f32>,
    /// `1 x 2 x H x W`.
    pub event_vis: Tensor<f32>,
    pub warped0: Tensor<f32>,
    pub warped1: Tensor<f32>,
    pub img_f: Tensor<f32>,
    pub img_e: Tensor<f32>,
    /// `1 x 2 x H x W` blend weights; absent when cross-space blending is off.
    pub weights: Option<Tensor<f32>>,
    pub residual: Tensor<f32>,
    /// Before clamping.
    pub output_raw: Tensor<f32>,
    /// `3 x H x W` in `[0, 1]`.
    pub output: Tensor<f32>,
}

impl ForwardTrace {
    pub fn all_finite(&self) -> bool {
        let mut all: Vec<&Tensor<f32>> = vec![
            &self.event_flow,
            &self.event_vis,
            &self.warped0,
            &self.warped1,
            &self.img_f,
            &self.img_e,
            &self.residual,
            &self.output_raw,
            &self.output,
        ];
        all.extend(&self.frame_flows);
        all.extend(&self.refined_flows);
        all.extend(&self.vis_logits);
        all.extend(&self.weights);
        all.iter().all(|t| t.all_finite())
    }
}

#[derive(Clone, Debug)]
pub struct EgmrModel {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    event_net: EventFlowNet,
    if_blocks: Vec<IfBlock>,
    fusions: Vec<FlowFusion>,
    c2sa: Option<C2sa>,
    refine: RefineNet,
}

impl EgmrModel {
    /// Builds a model with parameters drawn deterministically from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let mut b = Builder::new(&mut params, &mut init);
        let event_net = b.scoped("event_flow", |b| EventFlowNet::build(b, config.bins, config.event_base));
        let mut if_blocks = Vec::with_capacity(3);
        let mut fusions = Vec::with_capacity(3);
        for s in 0..IF_SCALES.len() {
            if_blocks.push(b.scoped(&format!("ifblock{s}"), |b| {
                IfBlock::build(b, s, config.if_widths[s], config.if_blocks)
            })?);
            let fusion = if config.edge_guided {
                b.scoped(&format!("ega{s}"), |b| -> Result<FlowFusion> {
                    Ok(FlowFusion::EdgeGuided {
                        cla: b.scoped("cla", |b| Cla::build(b, config.embed_dim, config.mask_size))?,
                        coa: b.scoped("coa", |b| Coa::build(b, config.coa_width)),
                    })
                })?
            } else {
                FlowFusion::Concat(b.scoped(&format!("fusion{s}"), |b| ConcatFusion::build(b, config.coa_width)))
            };
            fusions.push(fusion);
        }
        let c2sa = config
            .cross_space
            .then(|| b.scoped("c2sa", |b| C2sa::build(b, config.c2sa_width)));
        let refine = b.scoped("refine", |b| RefineNet::build(b, config.refine_base, config.cross_space));
        Ok(Self {
            config,
            params,
            event_net,
            if_blocks,
            fusions,
            c2sa,
            refine,
        })
    }

    /// Builds the forward graph for a batch whose inputs already live on the tape.
    pub fn forward_graph<T: Scalar>(&self, s: &Session<'_, T>, i0: Var, i1: Var, voxels: Var, tau: Var) -> Result<TraceVars> {
        let shape = s.tape.shape(i0);
        let (h, w) = (shape[2], shape[3]);
        if h % PATCH != 0 || w % PATCH != 0 {
            return Err(Error::Shape(format!("frame size {h}x{w} not divisible by {PATCH}")));
        }
        check_finite(&s.tape.value(i0), "first keyframe")?;
        check_finite(&s.tape.value(i1), "second keyframe")?;
        let ev = self.event_net.forward(s, voxels)?;

        let mut frame_flows = Vec::with_capacity(3);
        let mut refined_flows = Vec::with_capacity(3);
        let mut vis_logits = Vec::with_capacity(3);
        let mut warm = None;
        for (block, fusion) in self.if_blocks.iter().zip(&self.fusions) {
            let out = block.forward(s, i0, i1, tau, warm)?;
            let fs_shape = s.tape.shape(out.flow);
            let fe = resample_event_flow(s, ev.flow, fs_shape[2], fs_shape[3])?;
            let fused = fusion.forward(s, fe, out.flow)?;
            frame_flows.push(out.flow);
            vis_logits.push(out.logit);
            refined_flows.push(fused.flow);
            warm = Some(fused.flow);
        }
        let flow = *refined_flows.last().unwrap();
        let (warped0, valid0) = warp_var(s, i0, s.tape.slice_channels(flow, 0, 2))?;
        let (warped1, valid1) = warp_var(s, i1, s.tape.slice_channels(flow, 2, 2))?;
        let visibility = s.tape.sigmoid(*vis_logits.last().unwrap());
        let img_f = fuse_image_var(s, warped0, warped1, visibility);
        let img_e = fuse_event_var(s, warped0, warped1, ev.visibility);

        let weights = match &self.c2sa {
            Some(c) => Some(c.forward(s, img_f, img_e)?),
            None => None,
        };
        let residual = self.refine.forward(
            s,
            &RefineInputs {
                i0,
                i1,
                warped0,
                warped1,
                valid0,
                valid1,
                flow,
                visibility,
                event_visibility: self.c2sa.as_ref().map(|_| ev.visibility),
            },
        )?;
        let output = match weights {
            Some(wts) => synthesize_var(s, img_f, img_e, wts, residual),
            None => s.tape.add(img_f, residual),
        };
        Ok(TraceVars {
            event_flow: ev.flow,
            event_vis: ev.visibility,
            frame_flows,
            refined_flows,
            vis_logits,
            warped0,
            warped1,
            valid0,
            valid1,
            img_f,
            img_e,
            weights,
            residual,
            output,
        })
    }

    /// Places `input` on the tape and builds the forward graph.
    pub fn forward_input<T: Scalar>(&self, s: &Session<'_, T>, input: &ModelInput<T>) -> Result<TraceVars> {
        let i0 = s.constant(input.i0.clone());
        let i1 = s.constant(input.i1.clone());
        let vox = s.constant(input.voxels.clone());
        let tau = s.constant(input.tau_plane());
        self.forward_graph(s, i0, i1, vox, tau)
    }

    /// Training objective for a batch with ground truth `gt` (`N x 3 x H x W`).
    pub fn loss_graph<T: Scalar>(
        &self,
        s: &Session<'_, T>,
        input: &ModelInput<T>,
        gt: &Tensor<T>,
        extractor: &PerceptualExtractor,
        weights: &LossWeights,
    ) -> Result<LossVars> {
        let i0 = s.constant(input.i0.clone());
        let i1 = s.constant(input.i1.clone());
        let vox = s.constant(input.voxels.clone());
        let tau = s.constant(input.tau_plane());
        let gt = s.constant(gt.clone());
        let trace = self.forward_graph(s, i0, i1, vox, tau)?;
        let event_recon = event_recon_loss(s, gt, i0, i1, trace.event_flow, trace.event_vis)?;
        let recon = recon_loss(s, gt, trace.output)?;
        let perceptual = perceptual_loss(s, gt, trace.output, extractor)?;
        let total = total_loss_var(s, event_recon, recon, perceptual, weights);
        Ok(LossVars {
            total,
            event_recon,
            recon,
            perceptual,
            trace,
        })
    }

    /// Frozen-parameter forward pass on a batched input.
    pub fn run(&self, input: &ModelInput<f32>) -> Result<(Tape<f32>, TraceVars)> {
        let tape = Tape::new();
        let trace = {
            let s = Session::new(&tape, &self.params, false);
            self.forward_input(&s, input)?
        };
        Ok((tape, trace))
    }

    /// Replaces all parameters, checking names and shapes.
    pub fn load_params(&mut self, params: ParamStore<f32>) -> Result<()> {
        if params.names() != self.params.names() {
            return Err(Error::Checkpoint("parameter names do not match the model".into()));
        }
        for (a, b) in params.tensors().iter().zip(self.params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!("parameter shape {:?} vs {:?}", a.shape(), b.shape())));
            }
        }
        self.params = params;
        Ok(())
    }
}

/// Single-sample forward pass exposing every intermediate.
pub fn forward(model: &EgmrModel, i0: &Tensor<f32>, i1: &Tensor<f32>, events: &EventStream, tau: f64) -> Result<ForwardTrace> {
    let (h, w) = check_frame(i0, "first keyframe")?;
    if h % PATCH != 0 || w % PATCH != 0 {
        return Err(Error::Shape(format!("frame size {h}x{w} not divisible by {PATCH}")));
    }
    let input = ModelInput::from_sample(i0, i1, events, tau, model.config.bins)?;
    let (tape, t) = model.run(&input)?;
    let get = |v: Var| tape.value(v).as_ref().clone();
    let output_raw = get(t.output);
    let output = clamp_unit(&output_raw).reshape(&[3, h, w]);
    Ok(ForwardTrace {
        frame_flows: t.frame_flows.iter().map(|&v| get(v)).collect(),
        refined_flows: t.refined_flows.iter().map(|&v| get(v)).collect(),
        vis_logits: t.vis_logits.iter().map(|&v| get(v)).collect(),
        event_flow: get(t.event_flow),
        event_vis: get(t.event_vis),
        warped0: get(t.warped0),
        warped1: get(t.warped1),
        img_f: get(t.img_f),
        img_e: get(t.img_e),
        weights: t.weights.map(get),
        residual: get(t.residual),
        output_raw,
        output,
    })
}

/// One independent forward pass per τ, in order.
pub fn interpolate_n(
    model: &EgmrModel,
    i0: &Tensor<f32>,
    i1: &Tensor<f32>,
    events: &EventStream,
    taus: &[f64],
) -> Result<Vec<Tensor<f32>>> {
    for (k, &tau) in taus.iter().enumerate() {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Parameter(format!("tau {tau} outside (0, 1)")));
        }
        if k > 0 && tau <= taus[k - 1] {
            return Err(Error::Parameter("taus must be strictly increasing".into()));
        }
    }
    taus.iter()
        .map(|&tau| forward(model, i0, i1, events, tau).map(|t| t.output))
        .collect()
}
