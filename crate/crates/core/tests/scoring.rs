mod common;

use case_diar::scoring::{compute_der, emit_rttm, parse_rttm, RttmRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random non-degenerate records on a 10 ms grid inside `[0, 60)` s.
fn random_stream(rng: &mut ChaCha8Rng, meeting: &str, speakers: usize, prefix: &str) -> Vec<RttmRecord> {
    let n = rng.random_range(3..15);
    (0..n)
        .map(|_| {
            let start = rng.random_range(0..5900u32);
            let len = rng.random_range(10..(6000 - start).min(1500));
            let spk = rng.random_range(0..speakers);
            RttmRecord::new(meeting, start as f64 / 100.0, len as f64 / 100.0, format!("{prefix}{spk}")).unwrap()
        })
        .collect()
}

#[test]
fn interval_scorer_matches_frame_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let meeting = format!("m{case}");
        let (nr, nh) = (rng.random_range(2..5), rng.random_range(1..5));
        let reference = random_stream(&mut rng, &meeting, nr, "ref");
        let hypothesis = random_stream(&mut rng, &meeting, nh, "hyp");
        let fast = compute_der(&reference, &hypothesis, 0.0).unwrap();
        let (ms, fa, ser, der) = common::frame_der(&reference, &hypothesis, 0.01);
        for (a, b) in [(fast.ms, ms), (fast.fa, fa), (fast.ser, ser), (fast.der, der)] {
            worst = worst.max((a - b).abs());
        }
        assert_eq!(fast.der, fast.ms + fast.fa + fast.ser);
    }
    assert!(worst < 0.05, "largest difference {worst}");
}

#[test]
fn hand_computed_ten_percent_ser() {
    let r = |s: &str, o: f64, d: f64| RttmRecord::new("m", o, d, s).unwrap();
    let reference = [r("spk1", 0.0, 10.0), r("spk2", 10.0, 10.0)];
    let hypothesis = [r("A", 0.0, 12.0), r("B", 12.0, 8.0)];
    let d = compute_der(&reference, &hypothesis, 0.0).unwrap();
    assert_eq!((d.ms, d.fa, d.ser, d.der), (0.0, 0.0, 10.0, 10.0));
    let pairs: Vec<(&str, &str)> = d.mapping.iter().map(|p| (p.hypothesis.as_str(), p.reference.as_str())).collect();
    assert_eq!(pairs, vec![("A", "spk1"), ("B", "spk2")]);

    let nothing = compute_der(&reference, &[], 0.0).unwrap();
    assert_eq!((nothing.ms, nothing.fa, nothing.ser, nothing.der), (100.0, 0.0, 0.0, 100.0));
    assert!(compute_der(&[], &hypothesis, 0.0).is_err());
}

#[test]
fn rttm_round_trip_and_errors() {
    let text = "SPEAKER m1 1 0.000 10.000 <NA> <NA> spk1 <NA> <NA>\n\
                SPEAKER m1 1 10.000 2.500 <NA> <NA> spk2 <NA> <NA>\n\
                SPEAKER m2 1 1.250 3.000 <NA> <NA> spk1 <NA> <NA>\n";
    let records = parse_rttm(text).unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(parse_rttm(&emit_rttm(&records)).unwrap(), records);
    let err = parse_rttm("SPEAKER m1 1 0.0 -1.0 <NA> <NA> s <NA> <NA>\n").unwrap_err();
    assert!(err.to_string().contains('1'));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn der_is_invariant_to_hypothesis_relabelling(seed in any::<u64>(), shift in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = random_stream(&mut rng, "m", 3, "r");
        let hypothesis = random_stream(&mut rng, "m", 4, "h");
        let renamed: Vec<RttmRecord> = hypothesis
            .iter()
            .map(|r| {
                let k: usize = r.speaker[1..].parse().unwrap();
                RttmRecord::new("m", r.onset, r.duration, format!("x{}", (k + shift) % 4)).unwrap()
            })
            .collect();
        let a = compute_der(&reference, &hypothesis, 0.0).unwrap();
        let b = compute_der(&reference, &renamed, 0.0).unwrap();
        prop_assert_eq!(a.counts, b.counts);
        prop_assert!(a.ms >= 0.0 && a.fa >= 0.0 && a.ser >= 0.0);
    }

    #[test]
    fn reference_scores_zero_against_itself(seed in any::<u64>(), collar in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = random_stream(&mut rng, "m", 3, "r");
        let d = compute_der(&reference, &reference, collar).unwrap();
        prop_assert_eq!(d.der, 0.0);
    }
}
