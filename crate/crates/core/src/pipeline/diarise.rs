//! Segmentation, embedding clustering and the three alignment regimes.

use crate::cluster::{assign_segments, spectral_cluster, ClusterConfig};
use crate::content::{AlignmentTrack, ContentTables};
use crate::error::{Error, Result};
use crate::features::{frames_to_seconds, FrameMatrix, Span};
use crate::models::{Cpd, Embedder, TrainingReport, Vad};
use crate::scoring::RttmRecord;
use crate::synthdata::derive_seed;

use super::audit::{AuditedMeeting, OracleAsr};
use super::config::{Regime, System};

/// A trained embedder variant with its tuned clustering percentile.
#[derive(Clone, Debug)]
pub struct TrainedSystem {
    pub system: System,
    pub embedder: Embedder,
    pub percentile: f64,
    pub report: TrainingReport,
}

/// Everything diarisation needs.
#[derive(Clone, Debug)]
pub struct TrainedModels {
    pub vad: Option<Vad>,
    pub cpd: Option<Cpd>,
    pub systems: Vec<TrainedSystem>,
}

impl TrainedModels {
    pub fn system(&self, name: &str) -> Option<&TrainedSystem> {
        self.systems.iter().find(|s| s.system.name == name)
    }

    /// The models the automatic regime needs for its first pass.
    pub fn first_pass(&self, regime: Regime) -> Result<(&Vad, &Cpd, &TrainedSystem)> {
        let missing = |what: &str| Error::MissingDependency {
            what: what.to_string(),
            regime: regime.to_string(),
        };
        let vad = self.vad.as_ref().ok_or_else(|| missing("VAD checkpoint"))?;
        let cpd = self.cpd.as_ref().ok_or_else(|| missing("change-point detector checkpoint"))?;
        let base = self
            .systems
            .iter()
            .find(|s| s.system.is_baseline())
            .ok_or_else(|| missing("baseline embedder checkpoint"))?;
        Ok((vad, cpd, base))
    }
}

/// Speech segments from the VAD, split at detected speaker changes.
pub fn automatic_segments(features: &FrameMatrix, vad: &Vad, cpd: &Cpd) -> Result<Vec<Span>> {
    let speech = vad.segments(features)?;
    if speech.is_empty() {
        return Ok(Vec::new());
    }
    let scores = cpd.scores(features)?;
    let mut out = Vec::new();
    for s in speech {
        let mut start = s.start;
        for c in cpd.changes_in(&scores, s)? {
            out.push(Span::new(start, c));
            start = c;
        }
        out.push(Span::new(start, s.end));
    }
    Ok(out)
}

/// Cluster label for every segment.
///
/// Meetings yielding fewer than two windows are given a single speaker.
#[allow(clippy::too_many_arguments)]
pub fn cluster_segments(
    embedder: &Embedder,
    meeting_id: &str,
    features: &FrameMatrix,
    segments: &[Span],
    alignments: Option<(&[&AlignmentTrack], &ContentTables)>,
    cluster: &ClusterConfig,
    seed: u64,
    regime: Regime,
) -> Result<Vec<usize>> {
    if segments.is_empty() {
        return Ok(Vec::new());
    }
    let windows = embedder.extract_window_dvectors(meeting_id, features, segments, alignments, regime.name())?;
    if windows.len() < 2 {
        return Ok(vec![0; segments.len()]);
    }
    let owners: Vec<usize> = windows.iter().map(|w| w.segment_id).collect();
    let vectors: Vec<Vec<f64>> = windows.into_iter().map(|w| w.vector).collect();
    let result = spectral_cluster(&vectors, cluster, seed)?;
    assign_segments(segments.len(), &owners, &vectors, &result)
}

/// RTTM records for labelled segments, merging touching segments that
/// share a label.
pub fn labels_to_rttm(meeting_id: &str, segments: &[Span], labels: &[usize], period: f64) -> Result<Vec<RttmRecord>> {
    if segments.len() != labels.len() {
        return Err(Error::invalid(format!("{} labels for {} segments", labels.len(), segments.len())));
    }
    let mut pairs: Vec<(Span, usize)> = segments.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by_key(|(s, _)| *s);
    let mut merged: Vec<(Span, usize)> = Vec::new();
    for (s, l) in pairs {
        if let Some(last) = merged.last() {
            if s.start < last.0.end {
                return Err(Error::invalid(format!("segments {:?} and {s:?} overlap", last.0)));
            }
        }
        match merged.last_mut() {
            Some((prev, pl)) if *pl == l && prev.end == s.start => prev.end = s.end,
            _ => merged.push((s, l)),
        }
    }
    merged
        .into_iter()
        .map(|(s, l)| {
            RttmRecord::new(
                meeting_id,
                frames_to_seconds(s.start, period),
                frames_to_seconds(s.len(), period),
                format!("S{l:02}"),
            )
        })
        .collect()
}

/// Per-meeting settings for one diarisation run.
#[derive(Clone, Copy, Debug)]
pub struct DiariseOptions<'a> {
    pub regime: Regime,
    /// Error rate for hypothesis alignments (already adjusted for the regime).
    pub error_rate: f64,
    pub seed: u64,
    pub cluster: &'a ClusterConfig,
    pub tables: &'a ContentTables,
}

impl DiariseOptions<'_> {
    fn cluster_seed(&self, meeting: &AuditedMeeting) -> u64 {
        derive_seed(self.seed, &[600, meeting.index() as u64])
    }

    fn asr(&self) -> OracleAsr {
        OracleAsr {
            error_rate: self.error_rate,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeetingOutput {
    /// First-pass (baseline) result of the automatic regime.
    pub pass1: Option<Vec<RttmRecord>>,
    pub hypothesis: Vec<RttmRecord>,
}

/// Labels for `segments` from `system`, with the regime's alignments.
fn label_with(
    meeting: &AuditedMeeting,
    system: &TrainedSystem,
    segments: &[Span],
    tracks: Option<&[AlignmentTrack]>,
    opts: &DiariseOptions,
) -> Result<Vec<usize>> {
    let refs: Option<Vec<&AlignmentTrack>> = tracks.map(|t| t.iter().collect());
    let alignments = refs.as_deref().map(|r| (r, opts.tables));
    let cluster = ClusterConfig {
        percentile: system.percentile,
        ..opts.cluster.clone()
    };
    cluster_segments(
        &system.embedder,
        meeting.id(),
        meeting.features(),
        segments,
        alignments,
        &cluster,
        opts.cluster_seed(meeting),
        opts.regime,
    )
}

/// Alignment tracks the regime provides on `segments`.
pub fn regime_alignments(
    meeting: &AuditedMeeting,
    segments: &[Span],
    opts: &DiariseOptions,
) -> Result<Vec<AlignmentTrack>> {
    use crate::content::Level;
    match opts.regime {
        Regime::Reference => Ok([Level::Phone, Level::Character, Level::Word]
            .into_iter()
            .map(|l| meeting.reference_track(l).clone())
            .collect()),
        Regime::ManualHypothesis | Regime::AutomaticHypothesis => opts.asr().transcribe(meeting, segments, opts.tables),
    }
}

/// Result of the automatic regime's first pass.
#[derive(Clone, Debug, PartialEq)]
pub struct FirstPass {
    pub segments: Vec<Span>,
    pub labels: Vec<usize>,
    pub rttm: Vec<RttmRecord>,
}

/// VAD, change detection and baseline clustering.
pub fn first_pass(meeting: &AuditedMeeting, models: &TrainedModels, opts: &DiariseOptions) -> Result<FirstPass> {
    let (vad, cpd, base) = models.first_pass(opts.regime)?;
    let segments = automatic_segments(meeting.features(), vad, cpd)?;
    let labels = label_with(meeting, base, &segments, None, opts)?;
    let rttm = labels_to_rttm(meeting.id(), &segments, &labels, meeting.features().frame_period())?;
    Ok(FirstPass { segments, labels, rttm })
}

/// Labels `segments` with `system`, fetching the regime's alignments when
/// the system is content-aware.
pub fn label_segments(
    meeting: &AuditedMeeting,
    system: &TrainedSystem,
    segments: &[Span],
    opts: &DiariseOptions,
) -> Result<Vec<RttmRecord>> {
    let tracks = if system.system.uses_content() {
        Some(regime_alignments(meeting, segments, opts)?)
    } else {
        None
    };
    let labels = label_with(meeting, system, segments, tracks.as_deref(), opts)?;
    labels_to_rttm(meeting.id(), segments, &labels, meeting.features().frame_period())
}

/// Diarises one meeting with one system.
///
/// The reference and manual-hypothesis regimes cluster the reference
/// segments. The automatic regime runs VAD, change detection and baseline
/// clustering first; the system then re-extracts embeddings on those
/// segments (with recognised alignments if content-aware) and re-clusters.
pub fn diarise_meeting(
    meeting: &AuditedMeeting,
    models: &TrainedModels,
    system: &TrainedSystem,
    opts: &DiariseOptions,
) -> Result<MeetingOutput> {
    match opts.regime {
        Regime::Reference | Regime::ManualHypothesis => {
            let segments: Vec<Span> = meeting.reference_segments().iter().map(|s| s.span).collect();
            Ok(MeetingOutput {
                pass1: None,
                hypothesis: label_segments(meeting, system, &segments, opts)?,
            })
        }
        Regime::AutomaticHypothesis => {
            let first = first_pass(meeting, models, opts)?;
            let hypothesis = if system.system.is_baseline() {
                first.rttm.clone()
            } else {
                label_segments(meeting, system, &first.segments, opts)?
            };
            Ok(MeetingOutput {
                pass1: Some(first.rttm),
                hypothesis,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merging_touching_segments() {
        let segs = [Span::new(0, 100), Span::new(100, 250), Span::new(300, 400), Span::new(400, 450)];
        let r = labels_to_rttm("m", &segs, &[0, 0, 0, 1], 0.01).unwrap();
        let got: Vec<(f64, f64, &str)> = r.iter().map(|x| (x.onset, x.duration, x.speaker.as_str())).collect();
        assert_eq!(got, vec![(0.0, 2.5, "S00"), (3.0, 1.0, "S00"), (4.0, 0.5, "S01")]);
        assert!(labels_to_rttm("m", &[Span::new(0, 10), Span::new(5, 20)], &[0, 1], 0.01).is_err());
    }
}
