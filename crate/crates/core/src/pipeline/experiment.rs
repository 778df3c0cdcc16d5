//! The comparison experiment: every system, regime and error rate, on a
//! fresh corpus and fresh models per seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::features::Span;
use crate::scoring::{compute_der, DerReport, RttmRecord};
use crate::synthdata::{Corpus, SynthSpec};

use super::audit::AuditedMeeting;
use super::config::{Regime, RunConfig};
use super::diarise::{first_pass, label_segments, DiariseOptions, TrainedModels};
use super::train::{split_of, train_all};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Dev,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }
}

/// Scores of one system under one condition for one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub seed: u64,
    pub system: String,
    pub regime: Regime,
    pub error_rate: f64,
    pub split: Split,
    pub ms: f64,
    pub fa: f64,
    pub ser: f64,
    pub der: f64,
}

/// First- and second-pass missed speech and false alarm for one automatic
/// run, per seed, system, error rate and split.
#[derive(Clone, Debug, PartialEq)]
pub struct PassCheck {
    pub seed: u64,
    pub system: String,
    pub error_rate: f64,
    pub split: Split,
    pub pass1: (f64, f64),
    pub pass2: (f64, f64),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentResult {
    pub seeds: Vec<u64>,
    pub systems: Vec<String>,
    pub regimes: Vec<Regime>,
    pub error_rates: Vec<f64>,
    pub cells: Vec<Cell>,
    pub passes: Vec<PassCheck>,
    /// Tuned clustering percentile per (seed, system).
    pub percentiles: Vec<(u64, String, f64)>,
    /// Final held-out speaker accuracy per (seed, system).
    pub accuracies: Vec<(u64, String, Option<f64>)>,
}

fn rate_key(r: f64) -> u64 {
    r.to_bits()
}

impl ExperimentResult {
    /// SER of each seed, in seed order.
    pub fn per_seed_ser(&self, system: &str, regime: Regime, rate: f64, split: Split) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.system == system && c.regime == regime && rate_key(c.error_rate) == rate_key(rate) && c.split == split)
            .map(|c| c.ser)
            .collect()
    }

    pub fn mean_ser(&self, system: &str, regime: Regime, rate: f64, split: Split) -> Option<f64> {
        let v = self.per_seed_ser(system, regime, rate, split);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    fn mean_of(&self, system: &str, regime: Regime, rate: f64, split: Split, f: impl Fn(&Cell) -> f64) -> Option<f64> {
        let v: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.system == system && c.regime == regime && rate_key(c.error_rate) == rate_key(rate) && c.split == split)
            .map(f)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Relative SER reduction of `system` over the baseline, in percent.
    pub fn relative_reduction(&self, system: &str, regime: Regime, rate: f64, split: Split) -> Option<f64> {
        let base = self.mean_ser("baseline", regime, rate, split)?;
        let s = self.mean_ser(system, regime, rate, split)?;
        (base > 0.0).then(|| 100.0 * (base - s) / base)
    }

    /// Seeds and rate pairs where SER falls as the error rate rises.
    pub fn trend_violations(&self, system: &str, regime: Regime, split: Split) -> (Vec<(f64, f64)>, Vec<(u64, f64, f64)>) {
        let mut rates = self.error_rates.clone();
        rates.sort_by(f64::total_cmp);
        let mut averaged = Vec::new();
        let mut single = Vec::new();
        for w in rates.windows(2) {
            if let (Some(a), Some(b)) = (self.mean_ser(system, regime, w[0], split), self.mean_ser(system, regime, w[1], split)) {
                if b < a {
                    averaged.push((w[0], w[1]));
                }
            }
            let lo = self.per_seed_ser(system, regime, w[0], split);
            let hi = self.per_seed_ser(system, regime, w[1], split);
            for ((seed, a), b) in self.seeds.iter().zip(lo).zip(hi) {
                if b < a {
                    single.push((*seed, w[0], w[1]));
                }
            }
        }
        (averaged, single)
    }

    /// Tab-separated per-seed results.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("seed\tsystem\tregime\terror_rate\tsplit\tms\tfa\tser\tder\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{:.2}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                c.seed,
                c.system,
                c.regime,
                c.error_rate,
                c.split.name(),
                c.ms,
                c.fa,
                c.ser,
                c.der
            );
        }
        s
    }

    /// Human-readable comparison report with seed-averaged tables.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "Speaker error rate (SER, %) averaged over {} seeds: {}", self.seeds.len(), seeds.join(" "));
        let splits = [Split::Dev, Split::Eval];
        for &regime in &self.regimes {
            let _ = writeln!(s, "\n== {regime} ==");
            let mut header = format!("{:<14}", "system");
            for &r in &self.error_rates {
                for sp in splits {
                    header.push_str(&format!(" {:>10}", format!("{}@{:.1}", sp.name(), r)));
                }
            }
            let _ = writeln!(s, "{header}");
            for sys in &self.systems {
                let mut line = format!("{sys:<14}");
                for &r in &self.error_rates {
                    for sp in splits {
                        let v = self.mean_ser(sys, regime, r, sp).map_or("-".into(), |v| format!("{v:.2}"));
                        line.push_str(&format!(" {v:>10}"));
                    }
                }
                let _ = writeln!(s, "{line}");
            }
            let mut line = format!("{:<14}", "MS+FA");
            for &r in &self.error_rates {
                for sp in splits {
                    let v = self.systems.first().and_then(|sys| {
                        Some(self.mean_of(sys, regime, r, sp, |c| c.ms)? + self.mean_of(sys, regime, r, sp, |c| c.fa)?)
                    });
                    line.push_str(&format!(" {:>10}", v.map_or("-".into(), |v| format!("{v:.2}"))));
                }
            }
            let _ = writeln!(s, "{line}");
            if self.systems.iter().any(|x| x == "baseline") {
                let _ = writeln!(s, "relative SER reduction over baseline (%), per split:");
                for sys in self.systems.iter().filter(|x| *x != "baseline") {
                    let mut line = format!("{sys:<14}");
                    for &r in &self.error_rates {
                        for sp in splits {
                            let v = self.relative_reduction(sys, regime, r, sp).map_or("-".into(), |v| format!("{v:.1}"));
                            line.push_str(&format!(" {v:>10}"));
                        }
                    }
                    let _ = writeln!(s, "{line}");
                }
            }
        }
        let _ = writeln!(s, "\n== error-rate trend (SER non-decreasing in error rate) ==");
        for &regime in self.regimes.iter().filter(|r| **r != Regime::Reference) {
            for sys in &self.systems {
                for sp in splits {
                    let (avg, single) = self.trend_violations(sys, regime, sp);
                    for (a, b) in avg {
                        let _ = writeln!(s, "VIOLATION {sys} {regime} {}: mean SER at {a:.1} exceeds {b:.1}", sp.name());
                    }
                    for (seed, a, b) in single {
                        let _ = writeln!(s, "note: {sys} {regime} {} seed {seed}: SER at {a:.1} exceeds {b:.1}", sp.name());
                    }
                }
            }
        }
        let worst = self
            .passes
            .iter()
            .map(|p| (p.pass1.0 - p.pass2.0).abs().max((p.pass1.1 - p.pass2.1).abs()))
            .fold(0.0, f64::max);
        let _ = writeln!(s, "\n== two-pass check ==\nlargest MS/FA difference between passes: {worst:.6}");
        let _ = writeln!(s, "\n== tuned clustering percentile / held-out speaker accuracy ==");
        for ((seed, sys, p), (_, _, acc)) in self.percentiles.iter().zip(&self.accuracies) {
            let acc = acc.map_or("-".into(), |a| format!("{a:.3}"));
            let _ = writeln!(s, "seed {seed} {sys:<14} p={p:<5} accuracy={acc}");
        }
        s
    }
}

fn score(refs: &[RttmRecord], hyps: &[RttmRecord], collar: f64) -> Result<DerReport> {
    compute_der(refs, hyps, collar)
}

/// Runs every configured condition for one seed.
pub fn run_seed(cfg: &RunConfig, seed: u64, out: &mut ExperimentResult) -> Result<()> {
    let spec = SynthSpec {
        seed,
        ..cfg.synth.clone()
    };
    let corpus = Corpus::generate(&spec)?;
    let models = train_all(cfg, &corpus, seed)?;
    for ts in &models.systems {
        out.percentiles.push((seed, ts.system.name.clone(), ts.percentile));
        out.accuracies.push((seed, ts.system.name.clone(), ts.report.final_accuracy()));
    }
    let split = split_of(&corpus)?;
    run_conditions(cfg, seed, &corpus, &models, &[(Split::Dev, split.dev), (Split::Eval, split.eval)], out)
}

/// Hypotheses for every system, regime and rate on the given meetings.
pub fn run_conditions(
    cfg: &RunConfig,
    seed: u64,
    corpus: &Corpus,
    models: &TrainedModels,
    splits: &[(Split, Vec<usize>)],
    out: &mut ExperimentResult,
) -> Result<()> {
    type Key = (String, Regime, u64);
    for (split, meetings) in splits {
        if meetings.is_empty() {
            continue;
        }
        let mut refs: Vec<RttmRecord> = Vec::new();
        let mut hyps: BTreeMap<Key, Vec<RttmRecord>> = BTreeMap::new();
        let mut pass1_all: Vec<RttmRecord> = Vec::new();
        for &mi in meetings {
            let m = &corpus.meetings[mi];
            refs.extend(m.reference_rttm());
            let reference_segments: Vec<Span> = m.segments.iter().map(|s| s.span).collect();
            let auto = if cfg.regimes.contains(&Regime::AutomaticHypothesis) {
                let opts = options(cfg, Regime::AutomaticHypothesis, 0.0, seed, corpus);
                let fp = first_pass(&AuditedMeeting::new(m), models, &opts)?;
                pass1_all.extend(fp.rttm.clone());
                Some(fp)
            } else {
                None
            };
            for ts in &models.systems {
                for &regime in &cfg.regimes {
                    // Systems without content give the same result at every
                    // error rate, as does the reference regime.
                    let mut cached: Option<Vec<RttmRecord>> = None;
                    for &rate in &cfg.error_rates {
                        let recs = match &cached {
                            Some(r) => r.clone(),
                            None => {
                                let eff = cfg.effective_error_rate(regime, rate);
                                let opts = options(cfg, regime, eff, seed, corpus);
                                let audited = AuditedMeeting::new(m);
                                let r = match (regime, &auto) {
                                    (Regime::AutomaticHypothesis, Some(fp)) if ts.system.is_baseline() => fp.rttm.clone(),
                                    (Regime::AutomaticHypothesis, Some(fp)) => {
                                        label_segments(&audited, ts, &fp.segments, &opts)?
                                    }
                                    (Regime::AutomaticHypothesis, None) => unreachable!("first pass computed"),
                                    _ => label_segments(&audited, ts, &reference_segments, &opts)?,
                                };
                                if !ts.system.uses_content() || regime == Regime::Reference {
                                    cached = Some(r.clone());
                                }
                                r
                            }
                        };
                        hyps.entry((ts.system.name.clone(), regime, rate_key(rate))).or_default().extend(recs);
                    }
                }
            }
        }
        let pass1 = if pass1_all.is_empty() && !cfg.regimes.contains(&Regime::AutomaticHypothesis) {
            None
        } else {
            Some(score(&refs, &pass1_all, cfg.collar)?)
        };
        for ts in &models.systems {
            for &regime in &cfg.regimes {
                for &rate in &cfg.error_rates {
                    let h = hyps
                        .get(&(ts.system.name.clone(), regime, rate_key(rate)))
                        .ok_or_else(|| Error::invalid("missing hypothesis"))?;
                    let r = score(&refs, h, cfg.collar)?;
                    if let (Regime::AutomaticHypothesis, Some(p1)) = (regime, &pass1) {
                        out.passes.push(PassCheck {
                            seed,
                            system: ts.system.name.clone(),
                            error_rate: rate,
                            split: *split,
                            pass1: (p1.ms, p1.fa),
                            pass2: (r.ms, r.fa),
                        });
                    }
                    out.cells.push(Cell {
                        seed,
                        system: ts.system.name.clone(),
                        regime,
                        error_rate: rate,
                        split: *split,
                        ms: r.ms,
                        fa: r.fa,
                        ser: r.ser,
                        der: r.der,
                    });
                }
            }
        }
    }
    Ok(())
}

fn options<'a>(cfg: &'a RunConfig, regime: Regime, rate: f64, seed: u64, corpus: &'a Corpus) -> DiariseOptions<'a> {
    DiariseOptions {
        regime,
        error_rate: rate,
        seed,
        cluster: &cfg.cluster,
        tables: &corpus.tables,
    }
}

/// Runs the whole experiment, one seed after another.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentResult> {
    run_experiment_with(cfg, |_| {})
}

/// As [`run_experiment`], calling `progress` after each seed.
pub fn run_experiment_with(cfg: &RunConfig, mut progress: impl FnMut(u64)) -> Result<ExperimentResult> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("experiment needs at least one seed".into()));
    }
    let mut out = ExperimentResult {
        seeds: cfg.seeds.clone(),
        systems: cfg.system_list()?.into_iter().map(|s| s.name).collect(),
        regimes: cfg.regimes.clone(),
        error_rates: cfg.error_rates.clone(),
        ..ExperimentResult::default()
    };
    for &seed in &cfg.seeds {
        run_seed(cfg, seed, &mut out)?;
        progress(seed);
    }
    Ok(out)
}
