mod common;

use common::oracles::*;
use common::*;
use egmr::nn::{ParamStore, Session};
use egmr::warp_refine::*;
use egmr::Error;
use egmr_autograd::gradcheck::check;
use egmr_autograd::{Tape, Tensor, Var};
use proptest::prelude::*;

fn smooth_flow(n: usize, h: usize, w: usize, amp: f32) -> Tensor<f32> {
    Tensor::from_fn(&[n, 2, h, w], |i| {
        let p = i % (h * w);
        let c = (i / (h * w)) % 2;
        let (y, x) = ((p / w) as f32, (p % w) as f32);
        amp * ((0.21 * x + 0.13 * y + c as f32).sin() + 0.5 * (0.17 * y - 0.3 * x).cos())
    })
}

#[test]
fn zero_flow_is_identity() {
    let img: Tensor<f32> = rand_tensor(&mut rng(1), &[2, 3, 17, 23], 0.0, 1.0);
    let out = backward_warp(&img, &Tensor::zeros(&[2, 2, 17, 23])).unwrap();
    assert_eq!(out.image, img);
    assert!(out.validity.data().iter().all(|&v| v == 1.0));
}

#[test]
fn integer_shift_matches_shift_oracle() {
    let img = Tensor::from_fn(&[1, 3, 8, 8], |i| (i % 64) as f32 / 64.0 + (i / 64) as f32);
    let mut flow = Tensor::zeros(&[1, 2, 8, 8]);
    flow.data_mut()[..64].iter_mut().for_each(|v| *v = 2.0);
    let out = backward_warp(&img, &flow).unwrap();
    for c in 0..3 {
        for y in 0..8 {
            for x in 0..8 {
                let want = if x + 2 < 8 { img.at4(0, c, y, x + 2) } else { 0.0 };
                assert_eq!(out.image.at4(0, c, y, x), want);
                assert_eq!(out.validity.at4(0, 0, y, x), if x + 2 < 8 { 1.0 } else { 0.0 });
            }
        }
    }
}

#[test]
fn random_flow_matches_scalar_oracle() {
    let img: Tensor<f32> = rand_tensor(&mut rng(2), &[2, 3, 32, 40], 0.0, 1.0);
    let flow = smooth_flow(2, 32, 40, 4.0);
    let out = backward_warp(&img, &flow).unwrap();
    let oracle = warp_oracle(&img, &flow);
    let diff = out.image.data().iter().zip(&oracle).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-6, "{diff}");
}

#[test]
fn out_of_bounds_samples_are_zero_and_invalid() {
    let img = Tensor::ones(&[1, 3, 8, 8]);
    let flow = Tensor::full(&[1, 2, 8, 8], 100.0);
    let out = backward_warp(&img, &flow).unwrap();
    assert!(out.image.data().iter().all(|&v| v == 0.0));
    assert!(out.validity.data().iter().all(|&v| v == 0.0));
    assert!(matches!(backward_warp(&img, &Tensor::zeros(&[1, 2, 8, 9])), Err(Error::Shape(_))));
}

fn warped(seed: u64, h: usize, w: usize) -> (WarpedFrame, WarpedFrame) {
    let mut r = rng(seed);
    let a: Tensor<f32> = rand_tensor(&mut r, &[1, 3, h, w], 0.0, 1.0);
    let b: Tensor<f32> = rand_tensor(&mut r, &[1, 3, h, w], 0.0, 1.0);
    let flow = smooth_flow(1, h, w, 2.0);
    (backward_warp(&a, &flow).unwrap(), backward_warp(&b, &flow).unwrap())
}

#[test]
fn image_visibility_fusion_examples() {
    let (w0, w1) = warped(3, 16, 16);
    let ones = Tensor::ones(&[1, 1, 16, 16]);
    assert_eq!(fuse_image_visibility(&w0, &w1, &ones).unwrap(), w0.image);
    let half = Tensor::full(&[1, 1, 16, 16], 0.5);
    assert!(fuse_image_visibility(&w0, &w0, &half).unwrap().max_abs_diff(&w0.image) < 1e-7);
    let m: Tensor<f32> = rand_tensor(&mut rng(4), &[1, 1, 16, 16], 0.0, 1.0);
    let out = fuse_image_visibility(&w0, &w1, &m).unwrap();
    for c in 0..3 {
        for y in 0..16 {
            for x in 0..16 {
                let mv = m.at4(0, 0, y, x) as f64;
                let want = mv * w0.image.at4(0, c, y, x) as f64 + (1.0 - mv) * w1.image.at4(0, c, y, x) as f64;
                assert!((out.at4(0, c, y, x) as f64 - want).abs() < 1e-7);
            }
        }
    }
    let bad = Tensor::full(&[1, 1, 16, 16], 1.5);
    assert!(matches!(fuse_image_visibility(&w0, &w1, &bad), Err(Error::Contract(_))));
}

fn pair(m0: &Tensor<f32>) -> Tensor<f32> {
    let (_, _, h, w) = m0.dims4();
    let mut data = m0.data().to_vec();
    data.extend(m0.data().iter().map(|v| 1.0 - v));
    Tensor::from_vec(&[1, 2, h, w], data)
}

#[test]
fn event_visibility_fusion_examples() {
    let (w0, w1) = warped(5, 16, 16);
    let first = pair(&Tensor::ones(&[1, 1, 16, 16]));
    assert_eq!(fuse_event_visibility(&w0, &w1, &first).unwrap(), w0.image);
    let me = pair(&rand_tensor(&mut rng(6), &[1, 1, 16, 16], 0.0, 1.0));
    assert!(fuse_event_visibility(&w1, &w1, &me).unwrap().max_abs_diff(&w1.image) < 1e-6);
    let out = fuse_event_visibility(&w0, &w1, &me).unwrap();
    for c in 0..3 {
        for y in 0..16 {
            for x in 0..16 {
                let want = me.at4(0, 0, y, x) as f64 * w0.image.at4(0, c, y, x) as f64
                    + me.at4(0, 1, y, x) as f64 * w1.image.at4(0, c, y, x) as f64;
                assert!((out.at4(0, c, y, x) as f64 - want).abs() < 1e-7);
            }
        }
    }
    let mut broken = me.clone();
    broken.data_mut()[0] += 0.01;
    assert!(matches!(fuse_event_visibility(&w0, &w1, &broken), Err(Error::Contract(_))));
}

fn c2sa(seed: u64) -> (ParamStore<f32>, C2sa) {
    build(seed, |b| C2sa::build(b, 16))
}

fn c2sa_weights(store: &ParamStore<f32>, net: &C2sa, f: &Tensor<f32>, e: &Tensor<f32>) -> Tensor<f32> {
    let tape = Tape::new();
    let s = Session::new(&tape, store, false);
    let w = net.forward(&s, tape.constant(f.clone()), tape.constant(e.clone())).unwrap();
    tape.value(w).as_ref().clone()
}

#[test]
fn c2sa_weights_sum_to_one_and_are_symmetric() {
    let (mut store, net) = c2sa(7);
    perturb(&mut store, 8, 0.2);
    let mut r = rng(9);
    let f: Tensor<f32> = rand_tensor(&mut r, &[2, 3, 24, 24], 0.0, 1.0);
    let e: Tensor<f32> = rand_tensor(&mut r, &[2, 3, 24, 24], 0.0, 1.0);
    let w = c2sa_weights(&store, &net, &f, &e);
    assert_eq!(w.shape(), &[2, 2, 24, 24]);
    let plane = 24 * 24;
    for b in 0..2 {
        for p in 0..plane {
            let (a, c) = (w.data()[b * 2 * plane + p], w.data()[b * 2 * plane + plane + p]);
            assert!(a >= 0.0 && c >= 0.0 && (a + c - 1.0).abs() <= 1e-6);
        }
    }

    for (dst, src) in [(net.q_f, net.q_e), (net.k_e, net.k_f), (net.mix1, net.mix0)] {
        for (d, s) in [(dst.weight, src.weight), (dst.bias, src.bias)] {
            let t = store.get(s).clone();
            *store.get_mut(d) = t;
        }
    }
    let w = c2sa_weights(&store, &net, &f, &f);
    assert!(w.data().iter().all(|&v| v == 0.5));
}

#[test]
fn c2sa_gradient_with_respect_to_images() {
    let (store, net) = c2sa(10);
    let params = store.cast::<f64>();
    let mut r = rng(11);
    let inputs: Vec<Tensor<f64>> = vec![
        rand_tensor(&mut r, &[1, 3, 12, 12], 0.0, 1.0),
        rand_tensor(&mut r, &[1, 3, 12, 12], 0.0, 1.0),
    ];
    let res = check(
        &inputs,
        |tape: &Tape<f64>, v: &[Var]| {
            let s = Session::new(tape, &params, false);
            let w = net.forward(&s, v[0], v[1]).unwrap();
            weighted_sum(tape, tape.slice_channels(w, 0, 1))
        },
        1e-6,
        |_, _| true,
    );
    assert!(res.rel_error < 1e-3, "{res:?}");
}

fn refine(seed: u64, with_events: bool) -> (ParamStore<f32>, RefineNet) {
    build(seed, |b| RefineNet::build(b, 4, with_events))
}

fn refine_inputs<T: egmr_autograd::Scalar>(s: &Session<'_, T>, seed: u64, h: usize, w: usize, events: bool) -> RefineInputs {
    let mut r = rng(seed);
    let mut c = |ch: usize, lo: f64, hi: f64| s.constant(rand_tensor(&mut r, &[1, ch, h, w], lo, hi));
    RefineInputs {
        i0: c(3, 0.0, 1.0),
        i1: c(3, 0.0, 1.0),
        warped0: c(3, 0.0, 1.0),
        warped1: c(3, 0.0, 1.0),
        valid0: c(1, 0.0, 1.0),
        valid1: c(1, 0.0, 1.0),
        flow: c(4, -3.0, 3.0),
        visibility: c(1, 0.0, 1.0),
        event_visibility: events.then(|| c(2, 0.0, 1.0)),
    }
}

#[test]
fn refinenet_zero_head_and_range() {
    let (mut store, net) = refine(12, true);
    let tape = Tape::new();
    let s = Session::new(&tape, &store, false);
    let out = net.forward(&s, &refine_inputs(&s, 13, 32, 32, true)).unwrap();
    let v = tape.value(out);
    assert_eq!(v.shape(), &[1, 3, 32, 32]);
    assert!(v.data().iter().all(|&x| x == 0.0));

    perturb(&mut store, 14, 3.0);
    let tape = Tape::new();
    let s = Session::new(&tape, &store, false);
    let out = net.forward(&s, &refine_inputs(&s, 13, 32, 32, true)).unwrap();
    assert!(tape.value(out).data().iter().all(|&x| (-1.0..=1.0).contains(&x)));

    let missing = refine_inputs(&s, 13, 32, 32, false);
    assert!(matches!(net.forward(&s, &missing), Err(Error::Shape(_))));
}

#[test]
fn refinenet_gradient_matches_finite_differences() {
    for events in [true, false] {
        let (mut store, net) = refine(15, events);
        perturb(&mut store, 16, 0.05);
        let res = gradcheck_params(&store, 300, |s| {
            let inp = refine_inputs(s, 17, 32, 32, events);
            weighted_sum(s.tape, net.forward(s, &inp).unwrap())
        });
        assert!(res.rel_error < 1e-3, "{res:?}");
    }
}

#[test]
fn synthesize_examples() {
    let mut r = rng(18);
    let f: Tensor<f32> = rand_tensor(&mut r, &[1, 3, 8, 8], 0.0, 1.0);
    let e: Tensor<f32> = rand_tensor(&mut r, &[1, 3, 8, 8], 0.0, 1.0);
    let zero = Tensor::zeros(&[1, 3, 8, 8]);
    let w = pair(&rand_tensor(&mut r, &[1, 1, 8, 8], 0.0, 1.0));
    assert!(synthesize(&f, &f, &w, &zero).unwrap().max_abs_diff(&f) < 1e-6);
    let first = pair(&Tensor::ones(&[1, 1, 8, 8]));
    assert_eq!(synthesize(&f, &e, &first, &zero).unwrap(), f);
    let res: Tensor<f32> = rand_tensor(&mut r, &[1, 3, 8, 8], -1.0, 1.0);
    let out = synthesize(&f, &e, &w, &res).unwrap();
    for c in 0..3 {
        for y in 0..8 {
            for x in 0..8 {
                let want = w.at4(0, 0, y, x) * f.at4(0, c, y, x) + w.at4(0, 1, y, x) * e.at4(0, c, y, x)
                    + res.at4(0, c, y, x);
                assert!((out.at4(0, c, y, x) - want).abs() < 1e-7);
            }
        }
    }
    let clamped = clamp_unit(&out);
    assert!(clamped.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn composite_synthesis_is_differentiable() {
    let (store, net) = c2sa(19);
    let params = store.cast::<f64>();
    let mut r = rng(20);
    let (h, w) = (12, 12);
    let inputs: Vec<Tensor<f64>> = vec![
        rand_tensor(&mut r, &[1, 3, h, w], 0.0, 1.0),
        rand_tensor(&mut r, &[1, 3, h, w], 0.0, 1.0),
        rand_tensor(&mut r, &[1, 4, h, w], -2.5, 2.5),
        rand_tensor(&mut r, &[1, 1, h, w], -2.0, 2.0),
        rand_tensor(&mut r, &[1, 2, h, w], -2.0, 2.0),
    ];
    let res = check(
        &inputs,
        |tape: &Tape<f64>, v: &[Var]| {
            let s = Session::new(tape, &params, false);
            let (w0, _) = warp_var(&s, v[0], tape.slice_channels(v[2], 0, 2)).unwrap();
            let (w1, _) = warp_var(&s, v[1], tape.slice_channels(v[2], 2, 2)).unwrap();
            let img_f = fuse_image_var(&s, w0, w1, tape.sigmoid(v[3]));
            let img_e = fuse_event_var(&s, w0, w1, tape.softmax(v[4], 1));
            let weights = net.forward(&s, img_f, img_e).unwrap();
            let zero = s.constant(Tensor::zeros(&[1, 3, h, w]));
            weighted_sum(tape, synthesize_var(&s, img_f, img_e, weights, zero))
        },
        1e-6,
        |_, _| true,
    );
    assert!(res.rel_error < 1e-3, "{res:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn warp_is_linear_in_image(seed in any::<u64>(), a in -2.0f32..2.0, b in -2.0f32..2.0, amp in 0.0f32..6.0) {
        let mut r = rng(seed);
        let i: Tensor<f32> = rand_tensor(&mut r, &[1, 3, 12, 12], 0.0, 1.0);
        let j: Tensor<f32> = rand_tensor(&mut r, &[1, 3, 12, 12], 0.0, 1.0);
        let flow: Tensor<f32> = rand_tensor(&mut r, &[1, 2, 12, 12], -(amp as f64) - 1e-3, amp as f64 + 1e-3);
        let mix = i.zip_map(&j, |x, y| a * x + b * y);
        let lhs = backward_warp(&mix, &flow).unwrap().image;
        let wi = backward_warp(&i, &flow).unwrap().image;
        let wj = backward_warp(&j, &flow).unwrap().image;
        let rhs = wi.zip_map(&wj, |x, y| a * x + b * y);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-6);
    }

    #[test]
    fn fusions_are_convex(seed in any::<u64>()) {
        let (w0, w1) = warped(seed, 8, 8);
        let mut r = rng(seed ^ 7);
        let m: Tensor<f32> = rand_tensor(&mut r, &[1, 1, 8, 8], 0.0, 1.0);
        let me = pair(&rand_tensor(&mut r, &[1, 1, 8, 8], 0.0, 1.0));
        for out in [fuse_image_visibility(&w0, &w1, &m).unwrap(), fuse_event_visibility(&w0, &w1, &me).unwrap()] {
            for (k, v) in out.data().iter().enumerate() {
                let (a, b) = (w0.image.data()[k], w1.image.data()[k]);
                prop_assert!(*v >= a.min(b) - 1e-6 && *v <= a.max(b) + 1e-6);
            }
        }
    }
}
