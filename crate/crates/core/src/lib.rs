//! Speaker diarisation with content-aware speaker embeddings.
//!
//! The crate is organised as a small pipeline:
//!
//! ```text
//! FrameMatrix -> [VAD] -> [CPD] -> segments -> [TDNN + attentive pooling] -> window d-vectors
//!                                                 ^ per-frame content vectors (phone/char/word)
//!             -> [spectral clustering] -> segment labels -> RTTM -> [DER scorer]
//! ```
//!
//! * [`ndiff`] - a deterministic reverse-mode differentiation core used by every model.
//! * [`features`] - frame containers, context splicing and window planning.
//! * [`content`] - unit inventories, alignments, CTM I/O and hypothesis error injection.
//! * [`models`] - speaker embedder, VAD and change-point detector.
//! * [`cluster`] - cosine affinity spectral clustering.
//! * [`scoring`] - RTTM I/O and DER computation.
//! * [`synthdata`] - seeded synthetic meeting corpus.
//! * [`pipeline`] - configuration, diarisation regimes, experiments and the CLI commands.

pub mod cluster;
pub mod content;
pub mod error;
pub mod features;
pub mod models;
pub mod ndiff;
pub mod pipeline;
pub mod scoring;
pub mod synthdata;

pub use error::{Error, Result};
