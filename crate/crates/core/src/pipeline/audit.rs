//! Access-audited view of a meeting.
//!
//! Diarisation code receives meetings only through [`AuditedMeeting`], which
//! records every read of ground truth. The recognition stand-in,
//! [`OracleAsr`], is the one component allowed to read reference alignments
//! in the hypothesis regimes; its reads are logged under a separate kind so
//! an audit can tell them apart from the diariser peeking at the truth.

use std::cell::RefCell;

use crate::content::{inject_errors, AlignmentTrack, ContentTables, Level};
use crate::error::Result;
use crate::features::{FrameMatrix, Span};
use crate::synthdata::{derive_seed, RefSegment, SynthMeeting};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Access {
    ReferenceSegments,
    ReferenceAlignment(Level),
    /// Transcript read by the recognition simulator.
    AsrTranscript(Level),
}

impl Access {
    /// Whether this read exposes ground truth to the diariser itself.
    pub fn is_ground_truth(self) -> bool {
        !matches!(self, Access::AsrTranscript(_))
    }
}

pub struct AuditedMeeting<'a> {
    meeting: &'a SynthMeeting,
    log: RefCell<Vec<Access>>,
}

impl<'a> AuditedMeeting<'a> {
    pub fn new(meeting: &'a SynthMeeting) -> Self {
        Self {
            meeting,
            log: RefCell::new(Vec::new()),
        }
    }

    pub fn id(&self) -> &str {
        &self.meeting.id
    }

    pub fn index(&self) -> usize {
        self.meeting.index
    }

    pub fn features(&self) -> &'a FrameMatrix {
        &self.meeting.features
    }

    pub fn reference_segments(&self) -> &'a [RefSegment] {
        self.log.borrow_mut().push(Access::ReferenceSegments);
        &self.meeting.segments
    }

    pub fn reference_track(&self, level: Level) -> &'a AlignmentTrack {
        self.log.borrow_mut().push(Access::ReferenceAlignment(level));
        self.meeting.track(level)
    }

    fn transcript(&self, level: Level) -> &'a AlignmentTrack {
        self.log.borrow_mut().push(Access::AsrTranscript(level));
        self.meeting.track(level)
    }

    /// Every recorded access, in order.
    pub fn accesses(&self) -> Vec<Access> {
        self.log.borrow().clone()
    }

    pub fn touched_ground_truth(&self) -> bool {
        self.log.borrow().iter().any(|a| a.is_ground_truth())
    }
}

/// Stand-in for a recogniser: the reference transcript with substitution
/// errors at a fixed rate, restricted to given speech segments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleAsr {
    pub error_rate: f64,
    pub seed: u64,
}

impl OracleAsr {
    /// Hypothesis tracks for phone, character and word levels, in that order.
    ///
    /// Errors are drawn over the whole meeting with a seed depending on the
    /// meeting and level only, so the same units are corrupted whatever the
    /// segmentation, and a lower rate corrupts a subset of a higher one.
    pub fn transcribe(&self, meeting: &AuditedMeeting, segments: &[Span], tables: &ContentTables) -> Result<Vec<AlignmentTrack>> {
        [Level::Phone, Level::Character, Level::Word]
            .into_iter()
            .map(|level| {
                let seed = derive_seed(self.seed, &[500, meeting.index() as u64, level as u64]);
                let noisy = inject_errors(meeting.transcript(level), self.error_rate, tables.inventory(level), seed)?;
                Ok(noisy.clip_to_spans(segments))
            })
            .collect()
    }
}
