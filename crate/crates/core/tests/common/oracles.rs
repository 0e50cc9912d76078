//! Independent scalar-loop reference implementations.

use egmr::events::{Event, EventStream};
use egmr::nn::ParamStore;
use egmr::ega::PATCH;
use egmr_autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_stream(n: usize, h: usize, w: usize, t_start: u64, t_end: u64, seed: u64) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<Event> = (0..n)
        .map(|_| {
            Event::new(
                rng.random_range(0..w as u16),
                rng.random_range(0..h as u16),
                if rng.random_bool(0.5) { 1 } else { -1 },
                rng.random_range(t_start..=t_end),
            )
        })
        .collect();
    events.sort_by_key(|e| e.t);
    EventStream::new(events, t_start, t_end, h, w).unwrap()
}

/// Direct per-event accumulation in f64.
pub fn voxel_oracle(stream: &EventStream, bins: usize) -> Vec<f64> {
    let (h, w) = (stream.height(), stream.width());
    let mut grid = vec![0.0f64; bins * h * w];
    let span = (stream.t_end() - stream.t_start()) as f64;
    for e in stream.events() {
        let pos = if span == 0.0 {
            0.0
        } else {
            (e.t - stream.t_start()) as f64 / span * (bins - 1) as f64
        };
        for k in 0..bins {
            let wgt = (1.0 - (k as f64 - pos).abs()).max(0.0);
            grid[k * h * w + e.y as usize * w + e.x as usize] += e.p as f64 * wgt;
        }
    }
    grid
}

/// Scalar embedding of every 16x16 patch of a `1 x 4 x H x W` flow through
/// the linear layer named `prefix`.
pub fn embed(store: &ParamStore<f32>, prefix: &str, flow: &Tensor<f32>) -> Vec<Vec<f64>> {
    let w = store.get(store.find(&format!("{prefix}.weight")).unwrap());
    let b = store.get(store.find(&format!("{prefix}.bias")).unwrap());
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let (h, wd) = (flow.shape()[2], flow.shape()[3]);
    let mut tokens = Vec::new();
    for gy in 0..h / PATCH {
        for gx in 0..wd / PATCH {
            let mut feat = Vec::with_capacity(din);
            for c in 0..4 {
                for py in 0..PATCH {
                    for px in 0..PATCH {
                        feat.push(flow.at4(0, c, gy * PATCH + py, gx * PATCH + px) as f64);
                    }
                }
            }
            let e: Vec<f64> = (0..dout)
                .map(|o| b.data()[o] as f64 + (0..din).map(|i| feat[i] * w.data()[i * dout + o] as f64).sum::<f64>())
                .collect();
            tokens.push(e);
        }
    }
    tokens
}

/// For each query, softmax over only the keys inside its m x m neighbourhood.
pub fn restricted_attention(store: &ParamStore<f32>, fe: &Tensor<f32>, fs: &Tensor<f32>, gw: usize, m: usize) -> Vec<Vec<f64>> {
    let q = embed(store, "q_e", fe);
    let k = embed(store, "k_f", fs);
    let v = embed(store, "v_f", fs);
    let d = q[0].len();
    let r = (m / 2) as isize;
    (0..q.len())
        .map(|qi| {
            let (qy, qx) = ((qi / gw) as isize, (qi % gw) as isize);
            let keys: Vec<usize> = (0..k.len())
                .filter(|&ki| {
                    let (ky, kx) = ((ki / gw) as isize, (ki % gw) as isize);
                    (qy - ky).abs() <= r && (qx - kx).abs() <= r
                })
                .collect();
            let logits: Vec<f64> = keys
                .iter()
                .map(|&ki| q[qi].iter().zip(&k[ki]).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            (0..d)
                .map(|j| keys.iter().zip(&exps).map(|(&ki, e)| e / z * v[ki][j]).sum())
                .collect()
        })
        .collect()
}

pub fn max_diff(lib: &Tensor<f32>, oracle: &[Vec<f64>]) -> f64 {
    let d = oracle[0].len();
    oracle
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, v)| (i * d + j, *v)))
        .map(|(idx, v)| (lib.data()[idx] as f64 - v).abs())
        .fold(0.0, f64::max)
}

/// Independent scalar-loop bilinear sampler with zero padding.
pub fn warp_oracle(img: &Tensor<f32>, flow: &Tensor<f32>) -> Vec<f64> {
    let (n, c, h, w) = img.dims4();
    let mut out = Vec::with_capacity(img.numel());
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sx = x as f64 + flow.at4(b, 0, y, x) as f64;
                    let sy = y as f64 + flow.at4(b, 1, y, x) as f64;
                    let (x0, y0) = (sx.floor(), sy.floor());
                    let (ax, ay) = (sx - x0, sy - y0);
                    let pix = |yy: f64, xx: f64| {
                        if xx < 0.0 || yy < 0.0 || xx >= w as f64 || yy >= h as f64 {
                            0.0
                        } else {
                            img.at4(b, ch, yy as usize, xx as usize) as f64
                        }
                    };
                    out.push(
                        (1.0 - ay) * ((1.0 - ax) * pix(y0, x0) + ax * pix(y0, x0 + 1.0))
                            + ay * ((1.0 - ax) * pix(y0 + 1.0, x0) + ax * pix(y0 + 1.0, x0 + 1.0)),
                    );
                }
            }
        }
    }
    out
}

pub fn psnr_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.numel() {
        let d = (a.data()[i] as f64 - b.data()[i] as f64) * 255.0;
        sum += d * d;
    }
    let mse = sum / a.numel() as f64;
    if mse == 0.0 {
        99.0
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

/// Direct 11x11 window sums at every valid position, without separability.
pub fn ssim_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let s = a.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let channels = a.numel() / (h * w);
    let mut kernel = [[0.0f64; 11]; 11];
    let mut norm = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, k) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *k = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            norm += *k;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let px = |t: &Tensor<f32>, c: usize, y: usize, x: usize| t.data()[c * h * w + y * w + x] as f64 * 255.0;
    let mut total = 0.0;
    for c in 0..channels {
        let mut acc = 0.0;
        let mut count = 0usize;
        for y in 0..=h - 11 {
            for x in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = kernel[i][j] / norm;
                        let (p, q) = (px(a, c, y + i, x + j), px(b, c, y + i, x + j));
                        ma += k * p;
                        mb += k * q;
                        saa += k * p * p;
                        sbb += k * q * q;
                        sab += k * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / channels as f64
}

