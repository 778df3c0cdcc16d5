//! End-to-end acceptance checks. Every check prints one `PASS`/`FAIL` line
//! to stdout (bypassing the test harness capture) before asserting.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use case_diar::cluster::{cosine_affinity, eigengap_count, refine_affinity, spectral_cluster, ClusterConfig};
use case_diar::pipeline::{
    diarise_meeting, split_of, train_all, AuditedMeeting, DiariseOptions, ExperimentResult, Regime, RunConfig, Split,
};
use case_diar::scoring::{compute_der, RttmRecord};
use case_diar::synthdata::Corpus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn report(name: &str, pass: bool, detail: &str) {
    let line = format!("[{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn gradient_suite() {
    let start = Instant::now();
    let results = common::gradient_suite();
    let elapsed = start.elapsed();
    let failed: Vec<&(String, f64, bool)> = results.iter().filter(|r| !r.2).collect();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let pass = failed.is_empty() && elapsed < Duration::from_secs(120);
    report(
        "gradient suite",
        pass,
        &format!(
            "{} checks, worst relative error {worst:.2e}, {:.1}s{}",
            results.len(),
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!(", failing: {failed:?}") }
        ),
    );
    assert!(pass);
}

#[test]
fn clustering_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    // The row threshold has to land between cross- and within-group values.
    // From the 75th percentile up, rows of N < 20 can keep too few entries to
    // hold a jittered group together. Exact duplicates at N <= 8 tie every
    // cross-group entry, and those ties survive unless the percentile exceeds
    // the cross-group share of a row (up to 75%).
    let cfg = ClusterConfig {
        percentile: 70.0,
        ..ClusterConfig::default()
    };
    let small_cfg = ClusterConfig {
        percentile: 80.0,
        ..cfg.clone()
    };
    let mut failures = Vec::new();
    for case in 0..200u64 {
        let k = rng.random_range(2..=4usize);
        let n = rng.random_range(6 * k..=60);
        let (points, truth) = separable(&mut rng, n, k, 0.03);
        let a = refine_affinity(&cosine_affinity(&points).unwrap(), cfg.percentile).unwrap();
        let counted = eigengap_count(&a, cfg.k_max).unwrap();
        let r = spectral_cluster(&points, &cfg, case).unwrap();
        if counted != k || r.k != k || common::mapped_accuracy(&truth, &r.labels) != 1.0 {
            failures.push(format!("large case {case}"));
        }
    }
    for case in 0..60u64 {
        let n = rng.random_range(4..=8usize);
        let k = rng.random_range(2..=(n / 2).min(3));
        let (points, _) = separable(&mut rng, n, k, 0.0);
        let cos = |i: usize, j: usize| {
            let dot: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| a * b).sum();
            let ni: f64 = points[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            let nj: f64 = points[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (ni * nj)
        };
        let oracle: Vec<Vec<usize>> = common::partitions(n)
            .into_iter()
            .filter(|p| (0..n).all(|i| (0..n).all(|j| if p[i] == p[j] { cos(i, j) > 0.999 } else { cos(i, j) <= 0.0 })))
            .collect();
        let r = spectral_cluster(&points, &small_cfg, case).unwrap();
        let ok = oracle.len() == 1 && r.k == oracle[0].iter().max().unwrap() + 1 && common::same_partition(&oracle[0], &r.labels);
        if !ok {
            failures.push(format!("small case {case}"));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(300);
    report(
        "clustering oracle",
        pass,
        &format!("200 separable instances and 60 enumerated instances, {:.1}s, failures {failures:?}", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

fn separable(rng: &mut ChaCha8Rng, n: usize, k: usize, jitter: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    for i in (1..n).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    let points = labels
        .iter()
        .map(|&l| {
            (0..16)
                .map(|d| {
                    let noise: f64 = StandardNormal.sample(rng);
                    f64::from(d == l) + jitter * noise
                })
                .collect()
        })
        .collect();
    (points, labels)
}

#[test]
fn scorer_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    let mut identity = true;
    for case in 0..100 {
        let meeting = format!("m{case}");
        let mut stream = |speakers: usize, prefix: &str| -> Vec<RttmRecord> {
            (0..rng.random_range(3..15))
                .map(|_| {
                    let start = rng.random_range(0..5900u32);
                    let len = rng.random_range(10..(6000 - start).min(1500));
                    let spk = rng.random_range(0..speakers);
                    RttmRecord::new(&meeting, start as f64 / 100.0, len as f64 / 100.0, format!("{prefix}{spk}")).unwrap()
                })
                .collect()
        };
        let reference = stream(4, "r");
        let hypothesis = stream(4, "h");
        let fast = compute_der(&reference, &hypothesis, 0.0).unwrap();
        let (ms, fa, ser, der) = common::frame_der(&reference, &hypothesis, 0.01);
        worst = [(fast.ms, ms), (fast.fa, fa), (fast.ser, ser), (fast.der, der)]
            .iter()
            .fold(worst, |w, (a, b)| w.max((a - b).abs()));
        identity &= fast.der == fast.ms + fast.fa + fast.ser;
    }
    let r = |s: &str, o: f64, d: f64| RttmRecord::new("hand", o, d, s).unwrap();
    let hand = compute_der(&[r("spk1", 0.0, 10.0), r("spk2", 10.0, 10.0)], &[r("A", 0.0, 12.0), r("B", 12.0, 8.0)], 0.0).unwrap();
    let hand_ok = (hand.ms, hand.fa, hand.ser, hand.der) == (0.0, 0.0, 10.0, 10.0);
    let pass = worst < 0.05 && identity && hand_ok;
    report(
        "scorer oracle",
        pass,
        &format!("largest |DER difference| vs frame scorer {worst:.4}% over 100 meetings; hand case SER {}; identity {identity}", hand.ser),
    );
    assert!(pass);
}

#[test]
fn pipeline_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::from_toml(&common::tiny_config(dir.path())).unwrap();
    cfg.regimes = vec![Regime::AutomaticHypothesis];
    let corpus = Corpus::generate(&cfg.synth).unwrap();
    let models = train_all(&cfg, &corpus, cfg.seed).unwrap();
    let split = split_of(&corpus).unwrap();
    let mut max_diff: f64 = 0.0;
    let mut clean = true;
    let mut asr_reads = 0;
    for system in &models.systems {
        for rate in [0.0, 0.4] {
            let opts = DiariseOptions {
                regime: Regime::AutomaticHypothesis,
                error_rate: rate,
                seed: cfg.seed,
                cluster: &cfg.cluster,
                tables: &corpus.tables,
            };
            for &i in split.dev.iter().chain(&split.eval) {
                let m = &corpus.meetings[i];
                let audited = AuditedMeeting::new(m);
                let out = diarise_meeting(&audited, &models, system, &opts).unwrap();
                clean &= !audited.touched_ground_truth();
                asr_reads += audited.accesses().iter().filter(|a| !a.is_ground_truth()).count();
                let reference = m.reference_rttm();
                let p1 = compute_der(&reference, out.pass1.as_ref().unwrap(), cfg.collar).unwrap();
                let p2 = compute_der(&reference, &out.hypothesis, cfg.collar).unwrap();
                max_diff = max_diff.max((p1.ms - p2.ms).abs()).max((p1.fa - p2.fa).abs());
            }
        }
    }
    let pass = max_diff == 0.0 && clean && asr_reads > 0;
    report(
        "pipeline invariants",
        pass,
        &format!("largest MS/FA difference between passes {max_diff}; ground truth untouched {clean}; {asr_reads} recognised-transcript reads"),
    );
    assert!(pass);
}

/// The acceptance-scale experiment, run once and shared by the two checks
/// that read it.
fn experiment() -> &'static (ExperimentResult, Duration) {
    static RESULT: OnceLock<(ExperimentResult, Duration)> = OnceLock::new();
    RESULT.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::load(&workspace_root().join("configs/acceptance.toml")).unwrap();
        cfg.out = dir.path().to_path_buf();
        let start = Instant::now();
        let result = case_diar::pipeline::cmd_experiment(&cfg, |_| {}).unwrap();
        let elapsed = start.elapsed();
        let mut out = std::io::stdout().lock();
        let _ = out.write_all(result.report().as_bytes());
        (result, elapsed)
    })
}

#[test]
fn case_directional_claim() {
    let (result, elapsed) = experiment();
    let regime = Regime::AutomaticHypothesis;
    let base = result.mean_ser("baseline", regime, 0.4, Split::Eval).unwrap();
    let case = result.mean_ser("case-p+c", regime, 0.4, Split::Eval).unwrap();
    let reduction = result.relative_reduction("case-p+c", regime, 0.0, Split::Eval).unwrap();
    let pass = result.seeds.len() >= 5 && case < base && reduction >= 10.0 && *elapsed < Duration::from_secs(1800);
    report(
        "CASE directional claim",
        pass,
        &format!(
            "eval SER at error rate 0.4: CASE(p+c) {case:.2} vs baseline {base:.2}; relative reduction at 0.0: {reduction:.1}%; {} seeds; {:.0}s",
            result.seeds.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn robustness_trend() {
    let (result, _) = experiment();
    let regime = Regime::AutomaticHypothesis;
    let mut means = Vec::new();
    let mut notes = Vec::new();
    let mut averaged_violations = 0;
    for split in [Split::Dev, Split::Eval] {
        let (avg, single) = result.trend_violations("case-p+c", regime, split);
        // The trend is judged on held-out speakers; dev is informational.
        if split == Split::Eval {
            averaged_violations += avg.len();
        } else {
            notes.extend(avg.iter().map(|(a, b)| format!("dev mean: {a}->{b}")));
        }
        for r in &result.error_rates {
            means.push(format!("{}@{r}={:.2}", split.name(), result.mean_ser("case-p+c", regime, *r, split).unwrap()));
        }
        notes.extend(single.iter().map(|(s, a, b)| format!("{} seed {s}: {a}->{b}", split.name())));
    }
    let pass = averaged_violations == 0;
    report(
        "robustness trend",
        pass,
        &format!("CASE(p+c) mean SER {}; eval averaged violations {averaged_violations}; logged: {notes:?}", means.join(" ")),
    );
    assert!(pass);
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn run_cli(config: &Path, command: &str, extra: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_case-diar"))
        .arg(command)
        .arg("--config")
        .arg(config)
        .args(extra)
        .output()
        .unwrap();
    assert!(status.status.success(), "{command} failed: {}", String::from_utf8_lossy(&status.stderr));
}

#[test]
fn determinism() {
    let runs: Vec<BTreeMap<PathBuf, Vec<u8>>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let config = dir.path().join("run.toml");
            std::fs::write(&config, common::tiny_config(&dir.path().join("out"))).unwrap();
            run_cli(&config, "synth", &[]);
            run_cli(&config, "train", &[]);
            for (regime, rate) in [("reference", "0"), ("manual-hypothesis", "0.4"), ("automatic-hypothesis", "0.4")] {
                let args = ["--regime", regime, "--error-rate", rate];
                run_cli(&config, "diarise", &args);
                run_cli(&config, "score", &args);
            }
            run_cli(&config, "experiment", &["--out", dir.path().join("out/exp").to_str().unwrap()]);
            snapshot(&dir.path().join("out"))
        })
        .collect();
    let rttm = runs[0].keys().filter(|p| p.extension().is_some_and(|e| e == "rttm")).count();
    let reports = runs[0].keys().filter(|p| p.extension().is_some_and(|e| e == "txt" || e == "tsv")).count();
    let differing: Vec<&PathBuf> = runs[0]
        .iter()
        .filter(|(p, bytes)| runs[1].get(*p) != Some(*bytes))
        .map(|(p, _)| p)
        .collect();
    let pass = differing.is_empty() && runs[0].len() == runs[1].len() && rttm > 0 && reports > 0;
    report(
        "determinism",
        pass,
        &format!(
            "{} files ({rttm} RTTM, {reports} reports) compared across two runs; differing: {differing:?}",
            runs[0].len()
        ),
    );
    assert!(pass);
}
