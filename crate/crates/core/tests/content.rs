use case_diar::content::{
    emit_ctm, expand_alignment, inject_errors, parse_ctm, AlignmentEntry, AlignmentTrack, ContentLevels, CtmTrack, Level,
    Source, UnitInventory,
};
use case_diar::synthdata::{CorpusModel, SynthSpec};
use proptest::prelude::*;

/// A gap-free track of `units` entries, each 2 + (i mod 5) frames long.
fn track(units: &[usize]) -> AlignmentTrack {
    let mut start = 0;
    let entries = units
        .iter()
        .enumerate()
        .map(|(i, &unit)| {
            let end = start + 2 + i % 5;
            let e = AlignmentEntry { unit, start, end };
            start = end;
            e
        })
        .collect();
    AlignmentTrack::new(Level::Phone, entries, Source::Reference).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn errors_nest_across_rates(units in prop::collection::vec(0usize..48, 1..200), seed in any::<u64>(), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let inv = UnitInventory::phones();
        let t = track(&units);
        let a = inject_errors(&t, lo, &inv, seed).unwrap();
        let b = inject_errors(&t, hi, &inv, seed).unwrap();
        prop_assert_eq!(a.source(), Source::Hypothesis);
        for ((orig, x), y) in t.entries().iter().zip(a.entries()).zip(b.entries()) {
            prop_assert_eq!((x.start, x.end), (orig.start, orig.end));
            if x.unit != orig.unit {
                prop_assert_eq!(y.unit, x.unit);
            }
        }
    }

    #[test]
    fn substituted_units_always_differ(units in prop::collection::vec(0usize..48, 1..100), seed in any::<u64>()) {
        let inv = UnitInventory::phones();
        let t = track(&units);
        let all = inject_errors(&t, 1.0, &inv, seed).unwrap();
        for (x, y) in t.entries().iter().zip(all.entries()) {
            prop_assert!(x.unit != y.unit && y.unit < inv.len());
        }
        let none = inject_errors(&t, 0.0, &inv, seed).unwrap();
        prop_assert_eq!(none.entries(), t.entries());
    }

    #[test]
    fn ctm_round_trip(units in prop::collection::vec(0usize..48, 1..50)) {
        let inv = UnitInventory::phones();
        let tracks = vec![CtmTrack { recording: "m".into(), channel: "1".into(), track: track(&units) }];
        let text = emit_ctm(&tracks, &inv, 0.01).unwrap();
        prop_assert_eq!(parse_ctm(&text, &inv, 0.01, Source::Reference).unwrap(), tracks);
    }
}

#[test]
fn expansion_rows_are_one_hot_or_silent() {
    let inv = UnitInventory::phones();
    let t = AlignmentTrack::new(
        Level::Phone,
        vec![AlignmentEntry { unit: 3, start: 1, end: 3 }, AlignmentEntry { unit: 7, start: 5, end: 6 }],
        Source::Reference,
    )
    .unwrap();
    let levels: ContentLevels = "p".parse().unwrap();
    assert_eq!(levels.levels(), vec![Level::Phone]);
    let tables = CorpusModel::new(&SynthSpec::default()).unwrap().tables().unwrap();
    assert_eq!(tables.phones, inv);
    let rows = expand_alignment(&[&t], levels, 7, &tables).unwrap();
    let hot: Vec<Option<usize>> = (0..7).map(|r| rows.row(r).iter().position(|&v| v == 1.0)).collect();
    assert_eq!(hot, vec![None, Some(3), Some(3), None, None, Some(7), None]);
    assert!((0..7).all(|r| rows.row(r).iter().sum::<f64>() <= 1.0));
}
