mod common;

use common::oracles::*;
use egmr::events::{decode_events, encode_events, read_events, voxelize, write_events, Event, EventStream};
use proptest::prelude::*;

#[test]
fn voxelize_matches_per_event_oracle() {
    let stream = random_stream(10_000, 64, 64, 100, 50_100, 3);
    let grid = voxelize(&stream, 5, 64, 64).unwrap();
    let want = voxel_oracle(&stream, 5);
    let worst = grid
        .data()
        .iter()
        .zip(&want)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "max cell error {worst}");
    assert!((grid.total() - stream.polarity_sum() as f64).abs() < 1e-4);
}

#[test]
fn split_concatenation_reproduces_stream() {
    let stream = random_stream(1000, 16, 16, 0, 10_000, 9);
    for tau in [0.01, 0.3, 0.5, 0.77, 0.99] {
        let (a, b) = stream.split_at_tau(tau).unwrap();
        let joined: Vec<Event> = a.events().iter().chain(b.events()).copied().collect();
        assert_eq!(joined, stream.events());
        assert_eq!(a.t_end(), b.t_start());
        assert!(a.events().iter().all(|e| e.t <= a.t_end()));
        assert!(b.events().iter().all(|e| e.t > a.t_end()));
    }
}

#[test]
fn file_round_trip_large() {
    let stream = random_stream(100_000, 64, 64, 0, 1_000_000, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.evt1");
    write_events(&stream, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 13 * 100_000);
    let back = read_events(&path).unwrap();
    assert_eq!(back, stream);
}

#[test]
fn empty_stream_is_header_only() {
    let s = EventStream::empty(0, 10, 4, 4);
    let bytes = encode_events(&s).unwrap();
    assert_eq!(bytes.len(), 16);
    assert_eq!(decode_events(&bytes).unwrap(), s);
}

fn stream_strategy() -> impl Strategy<Value = EventStream> {
    (0usize..200, any::<u64>()).prop_map(|(n, seed)| random_stream(n, 8, 8, 1000, 2000, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn voxel_linearity(a in stream_strategy(), b in stream_strategy()) {
        let mut all: Vec<Event> = a.events().iter().chain(b.events()).copied().collect();
        all.sort_by_key(|e| e.t);
        let union = EventStream::new(all, 1000, 2000, 8, 8).unwrap();
        let gu = voxelize(&union, 5, 8, 8).unwrap();
        let ga = voxelize(&a, 5, 8, 8).unwrap();
        let gb = voxelize(&b, 5, 8, 8).unwrap();
        for i in 0..gu.data().len() {
            prop_assert!((gu.data()[i] - ga.data()[i] - gb.data()[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn polarity_antisymmetry(s in stream_strategy()) {
        let neg: Vec<Event> = s.events().iter().map(|e| Event::new(e.x, e.y, -e.p, e.t)).collect();
        let ns = EventStream::new(neg, s.t_start(), s.t_end(), 8, 8).unwrap();
        let g = voxelize(&s, 5, 8, 8).unwrap();
        let gn = voxelize(&ns, 5, 8, 8).unwrap();
        for i in 0..g.data().len() {
            prop_assert_eq!(g.data()[i], -gn.data()[i]);
        }
    }

    #[test]
    fn signed_mass_is_preserved(s in stream_strategy(), bins in 2usize..9) {
        let g = voxelize(&s, bins, 8, 8).unwrap();
        prop_assert!((g.total() - s.polarity_sum() as f64).abs() < 1e-4);
    }

    #[test]
    fn split_partition(s in stream_strategy(), tau in 0.001f64..0.999) {
        let (a, b) = s.split_at_tau(tau).unwrap();
        prop_assert_eq!(a.len() + b.len(), s.len());
        let t_split = s.split_time(tau);
        prop_assert!(a.events().iter().all(|e| e.t <= t_split));
        prop_assert!(b.events().iter().all(|e| e.t > t_split));
        let total = voxelize(&a, 5, 8, 8).unwrap().total() + voxelize(&b, 5, 8, 8).unwrap().total();
        prop_assert!((total - s.polarity_sum() as f64).abs() < 1e-4);
    }

    #[test]
    fn encode_decode_round_trip(s in stream_strategy()) {
        let bytes = encode_events(&s).unwrap();
        prop_assert_eq!(bytes.len(), 16 + 13 * s.len());
        prop_assert_eq!(decode_events(&bytes).unwrap(), s);
    }
}
