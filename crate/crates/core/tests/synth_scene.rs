use std::time::Instant;

use egmr::synth::*;
use egmr::warp_refine::backward_warp;
use egmr_autograd::Tensor;
use proptest::prelude::*;

fn rect(half: f64, intensity: f32, trajectory: Trajectory) -> ShapeSpec {
    ShapeSpec {
        kind: ShapeKind::Rectangle,
        size: [half, half],
        intensity,
        trajectory,
        depth: 0,
    }
}

fn scene(shapes: Vec<ShapeSpec>) -> SceneSpec {
    SceneSpec {
        height: 32,
        width: 32,
        background: 0.2,
        shapes,
        seed: 0,
    }
}

fn sim() -> EventSimConfig {
    EventSimConfig::default()
}

#[test]
fn static_scene_has_identical_frames_and_zero_flow() {
    let spec = scene(vec![rect(4.0, 0.8, Trajectory::fixed(10.0, 12.0))]);
    let seq = render_sequence(&spec, 8, 0.5, &sim()).unwrap();
    let s = &seq.sample;
    assert_eq!(s.i0, s.i1);
    assert_eq!(s.i0, s.igt);
    assert!(s.flow.data().iter().all(|&v| v == 0.0));
    assert!(s.events.is_empty());
}

#[test]
fn translating_rectangle_flow() {
    let spec = scene(vec![rect(5.0, 0.9, Trajectory::linear(12.0, 16.0, 8.0, 0.0))]);
    let seq = render_sequence(&spec, 16, 0.5, &sim()).unwrap();
    let (flow, plane) = (&seq.sample.flow, 32 * 32);
    // Pixel centres inside the rectangle at τ (centre x = 16, y = 16).
    for y in 12..20 {
        for x in 12..20 {
            let p = y * 32 + x;
            assert!((flow.data()[p] + 4.0).abs() < 1e-6);
            assert_eq!(flow.data()[plane + p], 0.0);
            assert!((flow.data()[2 * plane + p] - 4.0).abs() < 1e-6);
        }
    }
}

fn centroid(frame: &GrayFrame, background: f32) -> (f64, f64) {
    let (mut sx, mut sy, mut m) = (0.0, 0.0, 0.0);
    for y in 0..frame.height {
        for x in 0..frame.width {
            let w = (frame.data[y * frame.width + x] - background).abs() as f64;
            sx += w * (x as f64 + 0.5);
            sy += w * (y as f64 + 0.5);
            m += w;
        }
    }
    (sx / m, sy / m)
}

#[test]
fn quadratic_trajectory_centroids() {
    let traj = Trajectory {
        x: vec![10.0, 6.0, 5.0],
        y: vec![12.0, -3.0, 4.0],
    };
    let spec = SceneSpec {
        shapes: vec![ShapeSpec {
            kind: ShapeKind::Disk,
            size: [4.5, 0.0],
            intensity: 1.0,
            trajectory: traj.clone(),
            depth: 0,
        }],
        background: 0.0,
        ..scene(vec![])
    };
    for t in [0.0, 0.4, 1.0] {
        let (cx, cy) = centroid(&spec.render(t), 0.0);
        let (px, py) = traj.at(t);
        assert!((cx - px).abs() < 0.5 && (cy - py).abs() < 0.5, "t={t}: ({cx}, {cy}) vs ({px}, {py})");
    }
}

#[test]
fn offscreen_shape_warns_but_succeeds() {
    let spec = scene(vec![
        rect(3.0, 0.9, Trajectory::fixed(-50.0, -50.0)),
        rect(3.0, 0.9, Trajectory::fixed(10.0, 10.0)),
    ]);
    let seq = render_sequence(&spec, 8, 0.5, &sim()).unwrap();
    assert_eq!(seq.warnings.len(), 1);
}

#[test]
fn render_sequence_rejects_bad_parameters() {
    let spec = scene(vec![]);
    assert!(matches!(render_sequence(&spec, 7, 0.5, &sim()), Err(egmr::Error::Parameter(_))));
    assert!(matches!(render_sequence(&spec, 8, 1.0, &sim()), Err(egmr::Error::Parameter(_))));
}

fn flat(h: usize, w: usize, v: f32) -> GrayFrame {
    GrayFrame {
        height: h,
        width: w,
        data: vec![v; h * w],
    }
}

#[test]
fn constant_sequence_is_silent() {
    let frames = vec![flat(4, 4, 0.3); 10];
    assert!(simulate_events(&frames, &sim()).unwrap().is_empty());
}

#[test]
fn step_of_two_thresholds_gives_two_events() {
    let c = 0.2f64;
    let a = 0.3f64;
    let b = ((a + 1e-4).ln() + 2.0 * c + 1e-6).exp() - 1e-4;
    let mut f1 = flat(2, 2, a as f32);
    f1.data[3] = b as f32;
    let frames = vec![flat(2, 2, a as f32), f1];
    let ev = simulate_events(&frames, &sim()).unwrap();
    assert_eq!(ev.len(), 2);
    assert!(ev.events().iter().all(|e| e.p == 1 && e.x == 1 && e.y == 1));
}

#[test]
fn simulate_rejects_bad_threshold() {
    let frames = vec![flat(2, 2, 0.1); 2];
    let cfg = EventSimConfig {
        threshold: 0.0,
        ..sim()
    };
    assert!(matches!(simulate_events(&frames, &cfg), Err(egmr::Error::Parameter(_))));
    assert!(simulate_events(&frames[..1], &sim()).is_err());
}

/// Level-index formulation of ideal crossings: the reference sits on
/// `L0 + k*C` and each frame moves `k` toward the new log intensity.
fn crossing_counts(frames: &[GrayFrame], c: f64) -> Vec<usize> {
    let n = frames[0].data.len();
    (0..n)
        .map(|p| {
            let l0 = (frames[0].data[p] as f64 + LOG_EPS).ln();
            let mut k: i64 = 0;
            let mut count = 0;
            for f in &frames[1..] {
                let l = (f.data[p] as f64 + LOG_EPS).ln();
                let target = (l - l0) / c;
                while target - (k + 1) as f64 >= -1e-9 / c {
                    k += 1;
                    count += 1;
                }
                while (k - 1) as f64 - target >= -1e-9 / c {
                    k -= 1;
                    count += 1;
                }
            }
            count
        })
        .collect()
}

#[test]
fn moving_disk_event_count_matches_crossing_oracle() {
    let spec = SceneSpec {
        shapes: vec![ShapeSpec {
            kind: ShapeKind::Disk,
            size: [6.0, 0.0],
            intensity: 0.95,
            trajectory: Trajectory::linear(10.0, 14.0, 12.0, 3.0),
            depth: 0,
        }],
        background: 0.05,
        ..scene(vec![])
    };
    let seq = render_sequence(&spec, 16, 0.5, &sim()).unwrap();
    let counts = crossing_counts(&seq.frames, DEFAULT_THRESHOLD);
    let mut per_pixel = vec![0usize; 32 * 32];
    for e in seq.sample.events.events() {
        per_pixel[e.y as usize * 32 + e.x as usize] += 1;
    }
    assert!(seq.sample.events.len() > 100);
    assert_eq!(per_pixel, counts);
}

#[test]
fn flow_consistency_on_random_scenes() {
    let dist = SceneDistribution::default();
    for seed in 0..6 {
        let s = dist.generate(seed).unwrap().sample;
        let (h, w) = (s.height(), s.width());
        let flow0 = s.flow.clone().reshape(&[1, 4, h, w]).channels(0, 2);
        let warped = backward_warp(&s.i0.clone().reshape(&[1, 3, h, w]), &flow0).unwrap().image;
        let (mut err, mut n) = (0.0f64, 0usize);
        for c in 0..3 {
            for p in 0..h * w {
                if s.occlusion[p] == 0 {
                    err += (warped.data()[c * h * w + p] - s.igt.data()[c * h * w + p]).abs() as f64;
                    n += 1;
                }
            }
        }
        let mae = err / n as f64;
        assert!(mae < 2.0 / 255.0, "seed {seed}: mean abs error {mae}");
    }
}

#[test]
fn make_dataset_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let empty = make_dataset(0, &SceneDistribution::default(), 1, &dir.path().join("empty")).unwrap();
    assert!(empty.samples.is_empty());

    let dist = SceneDistribution::default();
    let start = Instant::now();
    let a = make_dataset(8, &dist, 42, &dir.path().join("a")).unwrap();
    assert!(start.elapsed().as_secs_f64() < 60.0);
    make_dataset(8, &dist, 42, &dir.path().join("b")).unwrap();
    for name in &a.samples {
        let ea = std::fs::read(dir.path().join("a").join(name).join("events.evt1")).unwrap();
        let eb = std::fs::read(dir.path().join("b").join(name).join("events.evt1")).unwrap();
        assert_eq!(ea, eb);
    }
    let loaded = Dataset::load(&dir.path().join("a")).unwrap();
    assert_eq!(loaded.len(), 8);
    let fresh = dist.generate(loaded_seed(&dir.path().join("a").join(&a.samples[0]))).unwrap().sample;
    assert_eq!(loaded.samples[0].events, fresh.events);
    assert_eq!(loaded.samples[0].flow, fresh.flow);
    assert_eq!(loaded.samples[0].occlusion, fresh.occlusion);
}

fn loaded_seed(dir: &std::path::Path) -> u64 {
    let meta: SampleMeta = serde_json::from_slice(&std::fs::read(dir.join("meta.json")).unwrap()).unwrap();
    meta.seed
}

#[test]
fn missing_ground_truth_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let m = make_dataset(2, &SceneDistribution::default(), 3, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join(&m.samples[1]).join("Igt.png")).unwrap();
    let d = Dataset::load(dir.path()).unwrap();
    assert_eq!(d.len(), 1);
    assert_eq!(d.missing_gt, vec![m.samples[1].clone()]);
}

#[test]
fn io_error_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, b"x").unwrap();
    let err = make_dataset(1, &SceneDistribution::default(), 0, &file.join("sub")).unwrap_err();
    assert!(err.to_string().contains("occupied"), "{err}");
}

#[test]
fn flow_file_round_trip() {
    let t = Tensor::from_fn(&[4, 3, 5], |i| i as f32 * 0.25 - 3.0);
    let bytes = encode_flow(&t).unwrap();
    assert_eq!(bytes.len(), 8 + 4 * 60);
    assert_eq!(decode_flow(&bytes).unwrap(), t);
    assert!(decode_flow(&bytes[..20]).is_err());
}

fn two_level(seed: u64, a: f32, max: f32) -> Vec<GrayFrame> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..6)
        .map(|_| GrayFrame {
            height: 3,
            width: 3,
            data: (0..9).map(|_| if rng.random_bool(0.5) { a } else { max - a }).collect(),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inverting_two_level_frames_flips_polarity(seed in any::<u64>(), a in 0.05f32..0.4) {
        let frames = two_level(seed, a, 1.0);
        let inv: Vec<GrayFrame> = frames.iter().map(|f| f.inverted(1.0)).collect();
        let e = simulate_events(&frames, &sim()).unwrap();
        let ei = simulate_events(&inv, &sim()).unwrap();
        prop_assert_eq!(e.len(), ei.len());
        let mut x: Vec<_> = e.events().iter().map(|v| (v.t, v.y, v.x, v.p)).collect();
        let mut y: Vec<_> = ei.events().iter().map(|v| (v.t, v.y, v.x, -v.p)).collect();
        x.sort();
        y.sort();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn doubling_threshold_never_adds_events(seed in 0u64..1000, c in 0.05f64..0.5) {
        let seq = SceneDistribution { height: 16, width: 16, min_size: 3.0, max_size: 6.0, ..Default::default() }
            .generate(seed)
            .unwrap();
        let count = |thr: f64| {
            let e = simulate_events(&seq.frames, &EventSimConfig { threshold: thr, ..sim() }).unwrap();
            let mut n = vec![0usize; 256];
            for ev in e.events() {
                n[ev.y as usize * 16 + ev.x as usize] += 1;
            }
            n
        };
        let (lo, hi) = (count(c), count(2.0 * c));
        for p in 0..256 {
            prop_assert!(hi[p] <= lo[p]);
        }
    }

    #[test]
    fn same_seed_same_sample(seed in any::<u64>()) {
        let dist = SceneDistribution { height: 16, width: 16, min_size: 3.0, max_size: 6.0, ..Default::default() };
        let a = dist.generate(seed).unwrap().sample;
        let b = dist.generate(seed).unwrap().sample;
        prop_assert_eq!(a.events, b.events);
        prop_assert_eq!(a.igt, b.igt);
    }
}
