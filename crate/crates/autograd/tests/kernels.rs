use egmr_autograd::kernels::{self, reflect_index};
use egmr_autograd::{Tape, Tensor};
use proptest::prelude::*;

#[test]
fn reflect_index_mirrors_without_repeating_edge() {
    let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 4)).collect();
    assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    assert_eq!(reflect_index(5, 1), 0);
}

#[test]
fn conv_matches_direct_sum() {
    let x = Tensor::<f64>::from_fn(&[1, 2, 5, 5], |i| (i as f64 * 0.37).sin());
    let w = Tensor::<f64>::from_fn(&[3, 2, 3, 3], |i| (i as f64 * 0.11).cos());
    let b = Tensor::<f64>::from_vec(&[3], vec![0.1, -0.2, 0.3]);
    for stride in [1, 2] {
        let y = kernels::conv2d(&x, &w, Some(&b), stride, 1);
        let (_, _, ho, wo) = y.dims4();
        for o in 0..3 {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = b.data()[o];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - 1;
                                let ix = (ox * stride + kx) as isize - 1;
                                if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                    s += w.at4(o, c, ky, kx) * x.at4(0, c, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    assert!((y.at4(0, o, oy, ox) - s).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn resize_by_half_is_box_average() {
    let x = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64);
    let y = kernels::resize_bilinear(&x, 2, 2);
    assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
}

#[test]
fn backward_of_unused_branch_is_absent() {
    let t = Tape::<f64>::new();
    let a = t.variable(Tensor::ones(&[1, 1, 2, 2]));
    let b = t.variable(Tensor::ones(&[1, 1, 2, 2]));
    let y = t.sum(a);
    let g = t.backward(y);
    assert!(g.get(a).is_some());
    assert!(g.get(b).is_none());
}

proptest! {
    #[test]
    fn patchify_roundtrip(c in 1usize..4, gh in 1usize..4, gw in 1usize..4, p in 1usize..5) {
        let (h, w) = (gh * p, gw * p);
        let x = Tensor::<f32>::from_fn(&[2, c, h, w], |i| i as f32);
        let tokens = kernels::patchify(&x, p);
        prop_assert_eq!(tokens.shape(), &[2, gh * gw, c * p * p][..]);
        prop_assert_eq!(kernels::unpatchify(&tokens, p, c, h, w), x);
    }

    #[test]
    fn reflect_pad_then_crop_is_identity(h in 1usize..6, w in 1usize..6, ph in 0usize..9, pw in 0usize..9) {
        let x = Tensor::<f32>::from_fn(&[1, 2, h, w], |i| i as f32);
        let padded = kernels::reflect_pad(&x, ph, pw);
        prop_assert_eq!(kernels::crop(&padded, h, w), x);
    }
}
