//! Training of every model a run needs, from a corpus.

use crate::content::fnv1a;
use crate::error::Result;
use crate::features::{FrameMatrix, Span};
use crate::models::{speech_labels, Cpd, EmbedderData, EmbedderTrainer, Vad};
use crate::ndiff::Checkpoint;
use crate::scoring::compute_der;
use crate::synthdata::{derive_seed, split_corpus, Corpus, CorpusSplit, SynthMeeting};

use super::audit::AuditedMeeting;
use super::config::{Regime, RunConfig, System};
use super::diarise::{diarise_meeting, DiariseOptions, TrainedModels, TrainedSystem};

pub fn split_of(corpus: &Corpus) -> Result<CorpusSplit> {
    split_corpus(&corpus.meetings, corpus.spec.held_out_fraction, corpus.spec.seed)
}

fn vad_data<'a>(meetings: &[&'a SynthMeeting]) -> Vec<(&'a FrameMatrix, Vec<bool>)> {
    meetings
        .iter()
        .map(|m| {
            let spans: Vec<Span> = m.segments.iter().map(|s| s.span).collect();
            (&m.features, speech_labels(m.features.num_frames(), &spans))
        })
        .collect()
}

/// Trains the VAD on training meetings and, if enabled, tunes its threshold
/// on dev meetings. Returns the model and a short report.
pub fn train_vad(cfg: &RunConfig, corpus: &Corpus, seed: u64) -> Result<(Vad, String)> {
    let mut vad = Vad::new(cfg.vad.clone(), corpus.spec.feature_dim, derive_seed(seed, &[701]))?;
    let train: Vec<&SynthMeeting> = corpus.with_role(crate::synthdata::Role::Train);
    let losses = vad.train(&vad_data(&train), derive_seed(seed, &[711]))?;
    let mut report = String::from("epoch loss\n");
    for (i, l) in losses.iter().enumerate() {
        report.push_str(&format!("{i} {l:.6}\n"));
    }
    let dev = corpus.with_role(crate::synthdata::Role::Dev);
    if cfg.vad.tune_threshold && !dev.is_empty() {
        let th = vad.tune_threshold(&vad_data(&dev))?;
        report.push_str(&format!("threshold {th:?}\n"));
    }
    Ok((vad, report))
}

/// Frames where one speaker's segment ends exactly where another's begins.
pub fn change_frames(m: &SynthMeeting) -> Vec<usize> {
    m.segments
        .windows(2)
        .filter(|w| w[0].span.end == w[1].span.start && w[0].speaker != w[1].speaker)
        .map(|w| w[1].span.start)
        .collect()
}

pub fn train_cpd(cfg: &RunConfig, corpus: &Corpus, seed: u64) -> Result<(Cpd, String)> {
    let mut cpd = Cpd::new(cfg.cpd.clone(), corpus.spec.feature_dim, derive_seed(seed, &[702]))?;
    let train = corpus.with_role(crate::synthdata::Role::Train);
    let feats: Vec<&FrameMatrix> = train.iter().map(|m| &m.features).collect();
    let changes: Vec<Vec<usize>> = train.iter().map(|m| change_frames(m)).collect();
    let speech: Vec<Vec<Span>> = train.iter().map(|m| m.segments.iter().map(|s| s.span).collect()).collect();
    let losses = cpd.train(&feats, &changes, &speech, derive_seed(seed, &[712]))?;
    let mut report = String::from("epoch loss\n");
    for (i, l) in losses.iter().enumerate() {
        report.push_str(&format!("{i} {l:.6}\n"));
    }
    Ok((cpd, report))
}

pub fn system_seed(seed: u64, system: &System) -> u64 {
    derive_seed(seed, &[700, fnv1a(system.name.as_bytes())])
}

/// Trains (or, given a checkpoint, resumes) one embedder variant up to the
/// configured number of epochs.
pub fn train_system(
    cfg: &RunConfig,
    system: &System,
    corpus: &Corpus,
    split: &CorpusSplit,
    seed: u64,
    resume: Option<&Checkpoint>,
) -> Result<EmbedderTrainer> {
    let ecfg = system.embedder_config(&cfg.embedder);
    let data = EmbedderData::from_corpus(corpus, split, ecfg.window_len, ecfg.hop)?;
    let mut trainer = match resume {
        Some(ck) => EmbedderTrainer::from_checkpoint(ecfg.clone(), ck)?,
        None => EmbedderTrainer::new(ecfg.clone(), data.n_speakers, system_seed(seed, system))?,
    };
    let remaining = ecfg.train.epochs.saturating_sub(trainer.epochs_done());
    trainer.run(&data, remaining)?;
    Ok(trainer)
}

/// Picks the clustering percentile with the lowest dev speaker error on
/// reference segments and alignments; ties go to the earlier grid entry.
/// Returns the choice and the SER of every candidate.
pub fn tune_percentile(
    cfg: &RunConfig,
    system: &TrainedSystem,
    corpus: &Corpus,
    dev: &[usize],
    seed: u64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    if cfg.percentile_grid.is_empty() || dev.is_empty() {
        return Ok((cfg.cluster.percentile, Vec::new()));
    }
    let models = TrainedModels {
        vad: None,
        cpd: None,
        systems: Vec::new(),
    };
    let mut table = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for &p in &cfg.percentile_grid {
        let candidate = TrainedSystem {
            percentile: p,
            ..system.clone()
        };
        let opts = DiariseOptions {
            regime: Regime::Reference,
            error_rate: 0.0,
            seed,
            cluster: &cfg.cluster,
            tables: &corpus.tables,
        };
        let mut refs = Vec::new();
        let mut hyps = Vec::new();
        for &i in dev {
            let m = &corpus.meetings[i];
            let out = diarise_meeting(&AuditedMeeting::new(m), &models, &candidate, &opts)?;
            refs.extend(m.reference_rttm());
            hyps.extend(out.hypothesis);
        }
        let ser = compute_der(&refs, &hyps, cfg.collar)?.ser;
        table.push((p, ser));
        if best.is_none_or(|(_, b)| ser < b) {
            best = Some((p, ser));
        }
    }
    Ok((best.map(|(p, _)| p).unwrap_or(cfg.cluster.percentile), table))
}

/// Trains VAD, change detector and every configured system, tuning each
/// system's clustering percentile on dev.
pub fn train_all(cfg: &RunConfig, corpus: &Corpus, seed: u64) -> Result<TrainedModels> {
    let split = split_of(corpus)?;
    let needs_segmenter = cfg.regimes.contains(&Regime::AutomaticHypothesis);
    let (vad, cpd) = if needs_segmenter {
        (Some(train_vad(cfg, corpus, seed)?.0), Some(train_cpd(cfg, corpus, seed)?.0))
    } else {
        (None, None)
    };
    let mut systems = Vec::new();
    for system in cfg.system_list()? {
        let trainer = train_system(cfg, &system, corpus, &split, seed, None)?;
        let mut ts = TrainedSystem {
            system,
            embedder: trainer.model,
            percentile: cfg.cluster.percentile,
            report: trainer.report,
        };
        ts.percentile = tune_percentile(cfg, &ts, corpus, &split.dev, seed)?.0;
        systems.push(ts);
    }
    Ok(TrainedModels { vad, cpd, systems })
}
