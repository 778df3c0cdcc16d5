//! Brute-force oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use case_diar::scoring::RttmRecord;

/// Frame-level DER components (MS, FA, SER, DER in percent) for one
/// meeting at `step` seconds per frame, with the speaker mapping found by
/// exhaustive search over injective hypothesis-to-reference assignments.
pub fn frame_der(reference: &[RttmRecord], hypothesis: &[RttmRecord], step: f64) -> (f64, f64, f64, f64) {
    let names = |rs: &[RttmRecord]| -> Vec<String> {
        rs.iter().map(|r| r.speaker.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    };
    let rn = names(reference);
    let hn = names(hypothesis);
    let end = reference.iter().chain(hypothesis).map(|r| r.end()).fold(0.0, f64::max);
    let n = (end / step).ceil() as usize + 1;
    let active = |rs: &[RttmRecord], names: &[String]| -> Vec<Vec<usize>> {
        let mut frames = vec![Vec::new(); n];
        for r in rs {
            let s = names.iter().position(|x| *x == r.speaker).unwrap();
            // Frame t covers [t*step, (t+1)*step); it is active when its
            // midpoint lies inside the record.
            for (t, f) in frames.iter_mut().enumerate() {
                let mid = (t as f64 + 0.5) * step;
                if mid >= r.onset && mid < r.end() && !f.contains(&s) {
                    f.push(s);
                }
            }
        }
        frames
    };
    let rf = active(reference, &rn);
    let hf = active(hypothesis, &hn);

    let mut best_correct = 0usize;
    for map in injections(hn.len(), rn.len()) {
        let correct: usize = (0..n)
            .map(|t| hf[t].iter().filter(|&&h| map[h].is_some_and(|r| rf[t].contains(&r))).count())
            .sum();
        best_correct = best_correct.max(correct);
    }
    let (mut scored, mut ms, mut fa, mut both) = (0usize, 0usize, 0usize, 0usize);
    for t in 0..n {
        let (nr, nh) = (rf[t].len(), hf[t].len());
        scored += nr;
        ms += nr.saturating_sub(nh);
        fa += nh.saturating_sub(nr);
        both += nr.min(nh);
    }
    let pct = |x: usize| 100.0 * x as f64 / scored as f64;
    let ser = pct(both - best_correct);
    (pct(ms), pct(fa), ser, pct(ms) + pct(fa) + ser)
}

/// Every partial injective map from `0..h` into `0..r`.
pub fn injections(h: usize, r: usize) -> Vec<Vec<Option<usize>>> {
    fn go(i: usize, h: usize, r: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if i == h {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        go(i + 1, h, r, used, cur, out);
        cur.pop();
        for j in 0..r {
            if !used[j] {
                used[j] = true;
                cur.push(Some(j));
                go(i + 1, h, r, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(0, h, r, &mut vec![false; r], &mut Vec::new(), &mut out);
    out
}

/// All set partitions of `0..n` as restricted-growth label strings.
pub fn partitions(n: usize) -> Vec<Vec<usize>> {
    fn go(i: usize, n: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for l in 0..=max {
            cur.push(l);
            go(i + 1, n, max.max(l + 1), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, 0, &mut Vec::new(), &mut out);
    out
}

/// Fraction of items labelled correctly under the best one-to-one mapping
/// of predicted to true labels, found by exhaustive search.
pub fn mapped_accuracy(truth: &[usize], predicted: &[usize]) -> f64 {
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let kp = predicted.iter().max().map_or(0, |m| m + 1);
    let best = injections(kp, kt)
        .into_iter()
        .map(|map| truth.iter().zip(predicted).filter(|(t, p)| map[**p] == Some(**t)).count())
        .max()
        .unwrap_or(0);
    best as f64 / truth.len() as f64
}

/// True when two labelings describe the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

use case_diar::models::{
    adversarial_gradient_check, Batch, BatchItem, Cpd, CpdConfig, CpdGraph, CpdSample, Embedder, EmbedderConfig,
    EmbedderGraph, TrainingMode, Vad, VadConfig, VadGraph,
};
use case_diar::features::FrameMatrix;
use case_diar::ndiff::{finite_diff_check, ModelGraph, Tensor2};
use case_diar::pipeline::System;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_EPSILON: f64 = 1e-5;

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2 {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor2::from_vec(rows, cols, data).unwrap()
}

/// A small embedder configuration shaped like the real one.
pub fn tiny_embedder(base: &EmbedderConfig) -> EmbedderConfig {
    EmbedderConfig {
        acoustic_dim: 3,
        phone_units: 4,
        char_units: 3,
        word_dim: 5,
        word_projection: 2,
        context_left: 1,
        context_right: 1,
        hidden: vec![5, 4],
        dvector_dim: 4,
        heads: 2,
        attention_dim: 3,
        ..base.clone()
    }
}

/// Replaces every zero-initialised bias with small random values, so that
/// no ReLU unit sits exactly on its kink when a whole layer below is silent.
pub fn jitter_biases(store: &mut case_diar::ndiff::ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.name(id).ends_with(".b") {
            for v in store.value_mut(id).data_mut() {
                *v = 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            }
        }
    }
}

/// A random two-window batch for `cfg` with one-hot phone and character
/// rows, dense word vectors and partially missing phone targets.
pub fn random_batch(cfg: &EmbedderConfig, n_speakers: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..2)
        .map(|i| {
            let t = 7 + 2 * i;
            let content = (!cfg.content.is_empty()).then(|| {
                let mut rows = Vec::new();
                for _ in 0..t {
                    let mut row = Vec::new();
                    if cfg.content.phone {
                        let p = rng.random_range(0..cfg.phone_units);
                        row.extend((0..cfg.phone_units).map(|u| f64::from(u8::from(u == p))));
                    }
                    if cfg.content.character {
                        let c = rng.random_range(0..cfg.char_units);
                        row.extend((0..cfg.char_units).map(|u| f64::from(u8::from(u == c))));
                    }
                    if cfg.content.word {
                        row.extend((0..cfg.word_dim).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
                    }
                    rows.push(row);
                }
                Tensor2::from_rows(&rows).unwrap()
            });
            BatchItem {
                features: gaussian(&mut rng, t, cfg.acoustic_dim),
                content,
                speaker: i % n_speakers,
                phones: (0..t)
                    .map(|f| (f % 3 != 0).then(|| rng.random_range(0..cfg.phone_units)))
                    .collect(),
            }
        })
        .collect();
    Batch { items }
}

/// Worst finite-difference relative error of every embedder variant, the
/// adversarial sign check, and the VAD and change detector. Each entry is
/// (name, worst error, passed).
pub fn gradient_suite() -> Vec<(String, f64, bool)> {
    let mut out = Vec::new();
    for (i, system) in System::STANDARD.iter().enumerate() {
        let system: System = system.parse().unwrap();
        let cfg = tiny_embedder(&system.embedder_config(&EmbedderConfig::default()));
        let mut model = Embedder::new(cfg.clone(), 3, 40 + i as u64).unwrap();
        jitter_biases(model.params_mut(), i as u64);
        let batch = random_batch(&cfg, 3, 90 + i as u64);
        if cfg.mode == TrainingMode::Adversarial {
            // The training gradient of the adversarial model is, by design,
            // not the gradient of its loss; it is checked against the
            // reversed surrogate and must disagree with the plain loss.
            let check = adversarial_gradient_check(model, &batch, GRAD_EPSILON).unwrap();
            out.push((
                format!("{} (sign reversal; unreversed error {:.2})", system.name, check.unreversed_error),
                check.reversed_error,
                check.sign_reversal_verified(GRAD_TOLERANCE),
            ));
        } else {
            let err = finite_diff_check(&mut EmbedderGraph::new(model), &batch, GRAD_EPSILON).unwrap();
            out.push((system.name.clone(), err, err < GRAD_TOLERANCE));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vcfg = VadConfig {
        context_left: 1,
        context_right: 1,
        hidden: vec![5, 4],
        ..VadConfig::default()
    };
    let mut vad = Vad::new(vcfg, 3, 8).unwrap();
    jitter_biases(VadGraph { model: &mut vad }.params_mut(), 8);
    let labels: Vec<usize> = (0..6).map(|i| i % 2).collect();
    let input = (gaussian(&mut rng, 6, 9), labels);
    let err = finite_diff_check(&mut VadGraph { model: &mut vad }, &input, GRAD_EPSILON).unwrap();
    out.push(("vad".to_string(), err, err < GRAD_TOLERANCE));

    let ccfg = CpdConfig {
        context_left: 1,
        context_right: 1,
        hidden: vec![4],
        frame_dim: 3,
        state_dim: 3,
        lookaround: 3,
        ..CpdConfig::default()
    };
    let mut cpd = Cpd::new(ccfg, 2, 9).unwrap();
    jitter_biases(CpdGraph { model: &mut cpd }.params_mut(), 9);
    let frames = FrameMatrix::new(gaussian(&mut rng, 20, 2), 0.01).unwrap();
    let samples = [(5, true), (9, false), (14, true)].map(|(frame, change)| CpdSample { meeting: 0, frame, change });
    let input = cpd.graph_input(&[&frames], &samples).unwrap();
    let err = finite_diff_check(&mut CpdGraph { model: &mut cpd }, &input, GRAD_EPSILON).unwrap();
    out.push(("cpd".to_string(), err, err < GRAD_TOLERANCE));
    out
}

/// A run configuration small enough for a full synth/train/diarise/score
/// cycle in a few seconds.
pub fn tiny_config(out: &std::path::Path) -> String {
    format!(
        r#"
out = "{}"
systems = ["baseline", "case-p+c"]
seeds = [1]
error_rates = [0.0, 0.4]
percentile_grid = [80.0, 90.0]

[synth]
n_speakers = 10
n_eval_speakers = 4
n_meetings = 10
n_dev_meetings = 1
n_eval_meetings = 2
meeting_duration = 60.0
feature_dim = 6
lexicon_size = 40
seed = 3

[embedder]
acoustic_dim = 6
word_projection = 4
context_left = 1
context_right = 1
hidden = [12]
dvector_dim = 8
heads = 2
attention_dim = 6

[embedder.train]
epochs = 2
batch_size = 16

[vad]
context_left = 3
context_right = 3
hidden = [8]

[vad.train]
epochs = 1
max_steps_per_epoch = 20

[cpd]
context_left = 1
context_right = 1
hidden = [8]
frame_dim = 6
state_dim = 6
lookaround = 10

[cpd.train]
epochs = 1
max_steps_per_epoch = 20
"#,
        out.display()
    )
}
