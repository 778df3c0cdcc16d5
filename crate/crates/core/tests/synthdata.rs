use case_diar::content::Level;
use case_diar::synthdata::{is_open_set, read_corpus, split_corpus, write_corpus, Corpus, Role, SynthSpec};

fn small() -> SynthSpec {
    SynthSpec {
        n_speakers: 8,
        n_eval_speakers: 3,
        n_meetings: 4,
        n_dev_meetings: 1,
        n_eval_meetings: 1,
        meeting_duration: 60.0,
        feature_dim: 4,
        lexicon_size: 30,
        seed: 11,
        ..SynthSpec::default()
    }
}

#[test]
fn generation_is_seeded_and_round_trips_through_disk() {
    let a = Corpus::generate(&small()).unwrap();
    let b = Corpus::generate(&small()).unwrap();
    for (x, y) in a.meetings.iter().zip(&b.meetings) {
        assert_eq!(x.features, y.features);
        assert_eq!(x.segments, y.segments);
        assert_eq!(x.words, y.words);
    }
    let other = Corpus::generate(&SynthSpec { seed: 12, ..small() }).unwrap();
    assert_ne!(a.meetings[0].features, other.meetings[0].features);

    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &a).unwrap();
    let back = read_corpus(dir.path()).unwrap();
    assert_eq!(back.meetings.len(), a.meetings.len());
    for (x, y) in a.meetings.iter().zip(&back.meetings) {
        assert_eq!(x.segments, y.segments);
        assert_eq!(x.phones, y.phones);
        assert_eq!(x.reference_rttm(), y.reference_rttm());
    }
}

#[test]
fn ground_truth_is_consistent() {
    let corpus = Corpus::generate(&small()).unwrap();
    assert!(is_open_set(&corpus.meetings));
    for m in &corpus.meetings {
        let n = m.features.num_frames();
        for w in m.segments.windows(2) {
            assert!(w[0].span.end <= w[1].span.start, "segments overlap in {}", m.id);
        }
        for level in [Level::Phone, Level::Character, Level::Word] {
            let t = m.track(level);
            assert!(t.end_frame() <= n);
            // Every aligned unit lies inside some speech segment.
            for e in t.entries() {
                assert!(m.segments.iter().any(|s| s.span.start <= e.start && e.end <= s.span.end));
            }
        }
    }
    let split = split_corpus(&corpus.meetings, 0.1, 11).unwrap();
    assert!(split.dev.iter().all(|&i| corpus.meetings[i].role == Role::Dev));
    assert!(split.eval.iter().all(|&i| corpus.meetings[i].role == Role::Eval));
    assert!(!split.held_out.is_empty() && !split.train.is_empty());
}

#[test]
fn silence_is_noise_only() {
    let spec = SynthSpec {
        noise_sigma: 0.0,
        content_influence: 0.0,
        ..small()
    };
    let corpus = Corpus::generate(&spec).unwrap();
    let m = &corpus.meetings[0];
    let speech: Vec<bool> = (0..m.features.num_frames())
        .map(|t| m.segments.iter().any(|s| s.span.start <= t && t < s.span.end))
        .collect();
    let x = m.features.frames();
    for (t, &is_speech) in speech.iter().enumerate() {
        if !is_speech {
            assert!(x.row(t).iter().all(|&v| v == 0.0));
        }
    }
    // With no content and no noise, every frame of a segment equals the speaker mean.
    let s = &m.segments[0];
    assert!((s.span.start..s.span.end).all(|t| x.row(t) == x.row(s.span.start)));
}
