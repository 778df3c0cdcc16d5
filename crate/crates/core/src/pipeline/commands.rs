//! The CLI commands. Each reads a [`RunConfig`] and writes its artifacts
//! below `cfg.out`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::{Cpd, Embedder, EmbedderTrainer, Vad};
use crate::ndiff::Checkpoint;
use crate::scoring::{compute_der_per_meeting, emit_rttm, format_key_values, format_table, parse_rttm, DerReport, RttmRecord};
use crate::synthdata::{read_corpus, write_corpus, Corpus};

use super::audit::AuditedMeeting;
use super::config::{Regime, RunConfig, System};
use super::diarise::{diarise_meeting, DiariseOptions, TrainedModels, TrainedSystem};
use super::experiment::{run_experiment_with, ExperimentResult};
use super::train::{split_of, train_cpd, train_system, train_vad, tune_percentile};

const PERCENTILE_KEY: &str = "cluster.percentile";

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let dir = cfg.corpus_dir();
    if !dir.join("manifest.txt").exists() {
        return Err(Error::Config(format!(
            "no corpus at {} (run `case-diar synth` first or set `corpus`)",
            dir.display()
        )));
    }
    read_corpus(&dir)
}

/// Generates the corpus. Returns its directory and any warnings, which are
/// also written to `<out>/synth_warnings.txt`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<(PathBuf, Vec<String>)> {
    let corpus = Corpus::generate(&cfg.synth)?;
    let dir = cfg.corpus_dir();
    write_corpus(&dir, &corpus)?;
    let mut warnings = Vec::new();
    let n_train = cfg.synth.train_speakers().len();
    if n_train < 2 {
        warnings.push(format!(
            "corpus has {n_train} training speaker(s); embedder training needs at least 2"
        ));
    }
    if let Err(e) = split_of(&corpus) {
        warnings.push(format!("training split unusable: {e}"));
    }
    let path = cfg.out.join("synth_warnings.txt");
    if warnings.is_empty() {
        if path.exists() {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    } else {
        write(&path, &(warnings.join("\n") + "\n"))?;
    }
    Ok((dir, warnings))
}

fn checkpoint_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.models_dir().join(format!("{name}.ckpt"))
}

/// Trains VAD, change detector and every configured system, resuming an
/// embedder whose checkpoint has fewer epochs than configured. Returns the
/// checkpoint paths.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(cfg)?;
    let split = split_of(&corpus)?;
    let mut written = Vec::new();

    let vad_path = checkpoint_path(cfg, "vad");
    if !vad_path.exists() {
        let (vad, report) = train_vad(cfg, &corpus, cfg.seed)?;
        vad.to_checkpoint().save(&vad_path)?;
        write(&cfg.models_dir().join("vad.report.txt"), &report)?;
    }
    written.push(vad_path);
    let cpd_path = checkpoint_path(cfg, "cpd");
    if !cpd_path.exists() {
        let (cpd, report) = train_cpd(cfg, &corpus, cfg.seed)?;
        cpd.to_checkpoint().save(&cpd_path)?;
        write(&cfg.models_dir().join("cpd.report.txt"), &report)?;
    }
    written.push(cpd_path);

    for system in cfg.system_list()? {
        let path = checkpoint_path(cfg, &system.name);
        let existing = if path.exists() { Some(Checkpoint::load(&path)?) } else { None };
        let trainer = train_system(cfg, &system, &corpus, &split, cfg.seed, existing.as_ref())?;
        let mut ck = trainer.to_checkpoint();
        let ts = TrainedSystem {
            system: system.clone(),
            embedder: trainer.model.clone(),
            percentile: cfg.cluster.percentile,
            report: trainer.report.clone(),
        };
        let (p, table) = tune_percentile(cfg, &ts, &corpus, &split.dev, cfg.seed)?;
        ck.meta.insert(PERCENTILE_KEY.into(), format!("{p:?}"));
        ck.save(&path)?;
        let mut report = trainer.report.to_text();
        for (cand, ser) in table {
            report.push_str(&format!("dev_ser percentile={cand:?} ser={ser:.4}\n"));
        }
        report.push_str(&format!("percentile {p:?}\n"));
        write(&cfg.models_dir().join(format!("{}.report.txt", system.name)), &report)?;
        written.push(path);
    }
    Ok(written)
}

fn missing(cfg: &RunConfig, path: &Path, what: &str) -> Error {
    Error::MissingDependency {
        what: format!("{what} checkpoint {}", path.display()),
        regime: cfg.regime.to_string(),
    }
}

/// Loads the checkpoints a diarisation run needs.
pub fn load_models(cfg: &RunConfig, systems: &[System]) -> Result<TrainedModels> {
    let mut wanted: Vec<System> = systems.to_vec();
    let automatic = cfg.regime == Regime::AutomaticHypothesis;
    if automatic && !wanted.iter().any(System::is_baseline) {
        wanted.insert(0, System::baseline());
    }
    let mut loaded = Vec::new();
    for system in wanted {
        let path = checkpoint_path(cfg, &system.name);
        if !path.exists() {
            let what = if system.is_baseline() && automatic { "first-pass baseline embedder" } else { "embedder" };
            return Err(missing(cfg, &path, what));
        }
        let ck = Checkpoint::load(&path)?;
        let embedder = Embedder::from_checkpoint(system.embedder_config(&cfg.embedder), &ck)?;
        let percentile = match ck.meta.get(PERCENTILE_KEY) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::invalid(format!("bad {PERCENTILE_KEY} {v:?} in {}", path.display())))?,
            None => cfg.cluster.percentile,
        };
        let report = EmbedderTrainer::from_checkpoint(system.embedder_config(&cfg.embedder), &ck)
            .map(|t| t.report)
            .unwrap_or_default();
        loaded.push(TrainedSystem {
            system,
            embedder,
            percentile,
            report,
        });
    }
    let (vad, cpd) = if automatic {
        let vp = checkpoint_path(cfg, "vad");
        let cp = checkpoint_path(cfg, "cpd");
        if !vp.exists() {
            return Err(missing(cfg, &vp, "VAD"));
        }
        if !cp.exists() {
            return Err(missing(cfg, &cp, "change-point detector"));
        }
        (
            Some(Vad::from_checkpoint(cfg.vad.clone(), &Checkpoint::load(&vp)?)?),
            Some(Cpd::from_checkpoint(cfg.cpd.clone(), &Checkpoint::load(&cp)?)?),
        )
    } else {
        (None, None)
    };
    Ok(TrainedModels {
        vad,
        cpd,
        systems: loaded,
    })
}

/// Directory holding hypotheses of one regime and error rate.
pub fn hypothesis_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("hyp").join(cfg.regime.name()).join(format!("err{:.2}", cfg.error_rate))
}

/// Diarises the dev and eval meetings with every configured system under
/// the configured regime and error rate. Writes one RTTM per meeting and
/// system (plus first-pass RTTMs in the automatic regime) and returns the
/// paths written.
pub fn cmd_diarise(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus(cfg)?;
    let systems = cfg.system_list()?;
    let models = load_models(cfg, &systems)?;
    let split = split_of(&corpus)?;
    let rate = cfg.effective_error_rate(cfg.regime, cfg.error_rate);
    let opts = DiariseOptions {
        regime: cfg.regime,
        error_rate: rate,
        seed: cfg.seed,
        cluster: &cfg.cluster,
        tables: &corpus.tables,
    };
    let dir = hypothesis_dir(cfg);
    let mut written = Vec::new();
    for &mi in split.dev.iter().chain(&split.eval) {
        let m = &corpus.meetings[mi];
        for system in &systems {
            let ts = models.system(&system.name).expect("loaded above");
            let audited = AuditedMeeting::new(m);
            let out = diarise_meeting(&audited, &models, ts, &opts)?;
            if cfg.regime == Regime::AutomaticHypothesis && audited.touched_ground_truth() {
                return Err(Error::invalid(format!(
                    "automatic regime read ground truth of {}: {:?}",
                    m.id,
                    audited.accesses()
                )));
            }
            let path = dir.join(&system.name).join(format!("{}.rttm", m.id));
            write(&path, &emit_rttm(&out.hypothesis))?;
            written.push(path);
            if let Some(p1) = out.pass1 {
                let path = dir.join("pass1").join(format!("{}.rttm", m.id));
                write(&path, &emit_rttm(&p1))?;
                if !written.contains(&path) {
                    written.push(path);
                }
            }
        }
    }
    Ok(written)
}

/// Reads an RTTM file, or every `.rttm` file of a directory in name order.
pub fn read_rttm_path(path: &Path) -> Result<Vec<RttmRecord>> {
    let read = |p: &Path| -> Result<Vec<RttmRecord>> {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        parse_rttm(&text)
    };
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "rttm"))
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(read(&f)?);
        }
        Ok(out)
    } else {
        read(path)
    }
}

/// Per-meeting and aggregate scores; the meeting sets must match.
pub fn score_records(reference: &[RttmRecord], hypothesis: &[RttmRecord], collar: f64) -> Result<(Vec<(String, DerReport)>, DerReport)> {
    let refs: BTreeSet<&str> = reference.iter().map(|r| r.meeting.as_str()).collect();
    let hyps: BTreeSet<&str> = hypothesis.iter().map(|r| r.meeting.as_str()).collect();
    if let Some(m) = hyps.difference(&refs).next() {
        return Err(Error::invalid(format!("hypothesis meeting {m} has no reference")));
    }
    let rows = compute_der_per_meeting(reference, hypothesis, collar)?;
    let mut counts = crate::scoring::DerCounts::default();
    for (_, r) in &rows {
        counts.add(&r.counts);
    }
    let total = DerReport::from_counts(counts, Vec::new());
    Ok((rows, total))
}

fn score_block(title: &str, reference: &[RttmRecord], hypothesis: &[RttmRecord], collar: f64) -> Result<String> {
    let (rows, total) = score_records(reference, hypothesis, collar)?;
    Ok(format!(
        "## {title}\n{}\n{}",
        format_table(&rows, &total),
        format_key_values(&rows, &total)
    ))
}

/// Scores hypotheses against references and writes the report. With
/// `[score]` paths set, scores exactly those; otherwise scores every
/// system's output for the configured regime and error rate against the
/// corpus references.
pub fn cmd_score(cfg: &RunConfig) -> Result<(PathBuf, String)> {
    let (text, path) = match (&cfg.score.reference, &cfg.score.hypothesis) {
        (Some(r), Some(h)) => {
            let text = score_block(&h.display().to_string(), &read_rttm_path(r)?, &read_rttm_path(h)?, cfg.collar)?;
            (text, cfg.out.join("score").join("report.txt"))
        }
        (None, None) => {
            let dir = hypothesis_dir(cfg);
            let corpus_dir = cfg.corpus_dir();
            let mut text = String::new();
            let mut systems: Vec<String> = cfg.system_list()?.into_iter().map(|s| s.name).collect();
            if cfg.regime == Regime::AutomaticHypothesis {
                systems.push("pass1".into());
            }
            let mut found = false;
            for name in systems {
                let sys_dir = dir.join(&name);
                if !sys_dir.is_dir() {
                    continue;
                }
                let hyp = read_rttm_path(&sys_dir)?;
                let meetings: BTreeSet<String> = hyp.iter().map(|r| r.meeting.clone()).collect();
                let mut reference = Vec::new();
                for m in &meetings {
                    reference.extend(read_rttm_path(&corpus_dir.join(format!("{m}.rttm")))?);
                }
                if reference.is_empty() {
                    continue;
                }
                text.push_str(&score_block(&name, &reference, &hyp, cfg.collar)?);
                text.push('\n');
                found = true;
            }
            if !found {
                return Err(Error::Config(format!(
                    "no hypotheses under {} (run `case-diar diarise` first)",
                    dir.display()
                )));
            }
            let name = format!("{}-err{:.2}.txt", cfg.regime.name(), cfg.error_rate);
            (text, cfg.out.join("score").join(name))
        }
        _ => return Err(Error::Config("set both score.reference and score.hypothesis, or neither".into())),
    };
    write(&path, &text)?;
    Ok((path, text))
}

/// Runs the comparison experiment and writes `report.txt` and
/// `results.tsv` under `<out>/experiment`.
pub fn cmd_experiment(cfg: &RunConfig, progress: impl FnMut(u64)) -> Result<ExperimentResult> {
    let result = run_experiment_with(cfg, progress)?;
    let dir = cfg.out.join("experiment");
    write(&dir.join("report.txt"), &result.report())?;
    write(&dir.join("results.tsv"), &result.to_tsv())?;
    Ok(result)
}
