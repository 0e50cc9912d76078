//! Edge-guided flow fusion: patch-level cross-modal local attention between
//! event flow and frame flow, followed by channel-attentive fusion of the two
//! enhanced flows.

use egmr_autograd::{Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, Linear, Session};

/// Patch side length.
pub const PATCH: usize = 16;
/// Mask value for keys outside the local neighbourhood.
pub const FAR_LOGIT: f32 = -100.0;

/// Additive attention mask over a row-major `gh x gw` patch grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalAttentionMask {
    pub gh: usize,
    pub gw: usize,
    pub m: usize,
    /// `(gh*gw) x (gh*gw)`, row = query, column = key.
    pub data: Vec<f32>,
}

impl LocalAttentionMask {
    pub fn len(&self) -> usize {
        self.gh * self.gw
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, query: usize, key: usize) -> f32 {
        self.data[query * self.len() + key]
    }

    pub fn row(&self, query: usize) -> &[f32] {
        &self.data[query * self.len()..(query + 1) * self.len()]
    }

    /// `1 x L x L` tensor for broadcasting over a batch of logits.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let l = self.len();
        Tensor::from_vec(&[1, l, l], self.data.iter().map(|&v| T::of(v as f64)).collect())
    }
}

/// Zero where the key patch is within Chebyshev distance `(m - 1) / 2` of the
/// query patch, [`FAR_LOGIT`] elsewhere.
pub fn build_local_mask(gh: usize, gw: usize, m: usize) -> Result<LocalAttentionMask> {
    if m % 2 == 0 {
        return Err(Error::Parameter(format!("mask size {m} must be odd")));
    }
    let r = (m / 2) as isize;
    let l = gh * gw;
    let mut data = vec![FAR_LOGIT; l * l];
    for q in 0..l {
        let (qy, qx) = ((q / gw) as isize, (q % gw) as isize);
        for k in 0..l {
            let (ky, kx) = ((k / gw) as isize, (k % gw) as isize);
            if (qy - ky).abs() <= r && (qx - kx).abs() <= r {
                data[q * l + k] = 0.0;
            }
        }
    }
    Ok(LocalAttentionMask { gh, gw, m, data })
}

fn padded(n: usize) -> usize {
    n.div_ceil(PATCH) * PATCH
}

/// Outputs of [`Cla::forward`].
#[derive(Clone, Copy, Debug)]
pub struct ClaOut {
    /// Event flow plus the rectified frame-flow residual.
    pub fe_suppl: Var,
    /// Frame flow plus the event residual.
    pub fs_smooth: Var,
    /// `N x L x L` row-stochastic attention weights.
    pub attention: Var,
    /// `N x L x d` attention output before projection.
    pub v_rect: Var,
}

/// Cross-modal local attention between patch tokens of two flow fields.
#[derive(Clone, Debug)]
pub struct Cla {
    pub dim: usize,
    pub mask_size: usize,
    q_e: Linear,
    v_e: Linear,
    k_f: Linear,
    v_f: Linear,
    proj_rect: Linear,
    proj_e: Linear,
}

impl Cla {
    pub fn build(b: &mut Builder<'_>, dim: usize, mask_size: usize) -> Result<Self> {
        if mask_size % 2 == 0 {
            return Err(Error::Parameter(format!("mask size {mask_size} must be odd")));
        }
        let tok = 4 * PATCH * PATCH;
        Ok(Self {
            dim,
            mask_size,
            q_e: b.linear("q_e", tok, dim, 1.0),
            v_e: b.linear("v_e", tok, dim, 1.0),
            k_f: b.linear("k_f", tok, dim, 1.0),
            v_f: b.linear("v_f", tok, dim, 1.0),
            proj_rect: b.linear("proj_rect", dim, tok, 0.0),
            proj_e: b.linear("proj_e", dim, tok, 0.0),
        })
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, fe: Var, fs: Var) -> Result<ClaOut> {
        let shape = s.tape.shape(fe);
        if shape != s.tape.shape(fs) || shape.len() != 4 || shape[1] != 4 {
            return Err(Error::Shape(format!(
                "event flow {shape:?} and frame flow {:?} must match as N x 4 x H x W",
                s.tape.shape(fs)
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        let (hp, wp) = (padded(h), padded(w));
        let mask = build_local_mask(hp / PATCH, wp / PATCH, self.mask_size)?;

        let fe_p = s.tape.reflect_pad(fe, hp - h, wp - w);
        let fs_p = s.tape.reflect_pad(fs, hp - h, wp - w);
        let te = s.tape.patchify(fe_p, PATCH);
        let tf = s.tape.patchify(fs_p, PATCH);
        let q = self.q_e.forward(s, te);
        let ve = self.v_e.forward(s, te);
        let k = self.k_f.forward(s, tf);
        let vf = self.v_f.forward(s, tf);

        let logits = s.tape.matmul(q, k, false, true);
        let logits = s.tape.scale(logits, T::of(1.0 / (self.dim as f64).sqrt()));
        let logits = s.tape.add(logits, s.constant(mask.to_tensor()));
        let attention = s.tape.softmax(logits, 2);
        let v_rect = s.tape.matmul(attention, vf, false, false);

        let back = |tokens: Var, proj: &Linear| {
            let pix = proj.forward(s, tokens);
            let img = s.tape.unpatchify(pix, PATCH, 4, hp, wp);
            s.tape.crop(img, h, w)
        };
        let fe_suppl = s.tape.add(fe, back(v_rect, &self.proj_rect));
        let fs_smooth = s.tape.add(fs, back(ve, &self.proj_e));
        Ok(ClaOut {
            fe_suppl,
            fs_smooth,
            attention,
            v_rect,
        })
    }
}

/// Outputs of [`Coa::forward`].
#[derive(Clone, Copy, Debug)]
pub struct CoaOut {
    pub flow: Var,
    /// `N x C x 1 x 1` squeeze-and-excitation weights.
    pub channel_weights: Var,
}

/// Channel-attentive fusion of the two enhanced flows.
#[derive(Clone, Debug)]
pub struct Coa {
    pub width: usize,
    fuse: Conv,
    squeeze: Conv,
    excite: Conv,
    out: Conv,
}

impl Coa {
    pub fn build(b: &mut Builder<'_>, width: usize) -> Self {
        let reduced = (width / 4).max(1);
        Self {
            width,
            fuse: b.conv("fuse", 8, width, 3, 1),
            squeeze: b.conv("squeeze", width, reduced, 1, 1),
            excite: b.conv("excite", reduced, width, 1, 1),
            out: b.conv_with_gain("out", width, 4, 3, 1, 0.0),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, fe_suppl: Var, fs_smooth: Var) -> Result<CoaOut> {
        check_pair(s, fe_suppl, fs_smooth)?;
        let x = s.tape.concat(&[fe_suppl, fs_smooth]);
        let x = self.fuse.forward_act(s, x);
        let g = s.tape.global_avg_pool(x);
        let g = s.lrelu(self.squeeze.forward(s, g));
        let channel_weights = s.tape.sigmoid(self.excite.forward(s, g));
        let x = s.tape.mul(x, channel_weights);
        let delta = self.out.forward(s, x);
        let mean = s.tape.scale(s.tape.add(fe_suppl, fs_smooth), T::of(0.5));
        Ok(CoaOut {
            flow: s.tape.add(mean, delta),
            channel_weights,
        })
    }
}

fn check_pair<T: Scalar>(s: &Session<'_, T>, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (s.tape.shape(a), s.tape.shape(b));
    if sa != sb || sa.len() != 4 || sa[1] != 4 {
        return Err(Error::Shape(format!("flows {sa:?} and {sb:?} must match as N x 4 x H x W")));
    }
    Ok(())
}

/// Plain fusion used when edge guidance is disabled: concatenation followed
/// by two convolutions, added to the mean of both flows.
#[derive(Clone, Debug)]
pub struct ConcatFusion {
    fuse: Conv,
    out: Conv,
}

impl ConcatFusion {
    pub fn build(b: &mut Builder<'_>, width: usize) -> Self {
        Self {
            fuse: b.conv("fuse", 8, width, 3, 1),
            out: b.conv_with_gain("out", width, 4, 3, 1, 0.0),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, fe: Var, fs: Var) -> Result<Var> {
        check_pair(s, fe, fs)?;
        let x = s.tape.concat(&[fe, fs]);
        let x = self.fuse.forward_act(s, x);
        let delta = self.out.forward(s, x);
        let mean = s.tape.scale(s.tape.add(fe, fs), T::of(0.5));
        Ok(s.tape.add(mean, delta))
    }
}

/// Flow fusion at one scale.
#[derive(Clone, Debug)]
pub enum FlowFusion {
    EdgeGuided { cla: Cla, coa: Coa },
    Concat(ConcatFusion),
}

/// Fused flow plus the intermediate terms of the edge-guided path.
#[derive(Clone, Copy, Debug)]
pub struct FusionOut {
    pub flow: Var,
    pub cla: Option<ClaOut>,
}

impl FlowFusion {
    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, fe: Var, fs: Var) -> Result<FusionOut> {
        match self {
            FlowFusion::EdgeGuided { cla, coa } => {
                let c = cla.forward(s, fe, fs)?;
                let out = coa.forward(s, c.fe_suppl, c.fs_smooth)?;
                Ok(FusionOut {
                    flow: out.flow,
                    cla: Some(c),
                })
            }
            FlowFusion::Concat(f) => Ok(FusionOut {
                flow: f.forward(s, fe, fs)?,
                cla: None,
            }),
        }
    }
}
