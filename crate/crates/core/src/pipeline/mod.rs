//! Orchestration: configuration, the alignment regimes and two-pass
//! diarisation, the comparison experiment, and the CLI commands.

mod audit;
mod commands;
mod config;
mod diarise;
mod experiment;
mod train;

pub use audit::{Access, AuditedMeeting, OracleAsr};
pub use commands::{
    cmd_diarise, cmd_experiment, cmd_score, cmd_synth, cmd_train, hypothesis_dir, load_models, read_rttm_path,
    score_records,
};
pub use config::{Overrides, Regime, RunConfig, ScoreConfig, System};
pub use diarise::{
    automatic_segments, cluster_segments, diarise_meeting, first_pass, label_segments, labels_to_rttm,
    regime_alignments, DiariseOptions, FirstPass, MeetingOutput, TrainedModels, TrainedSystem,
};
pub use experiment::{run_conditions, run_experiment, run_experiment_with, run_seed, Cell, ExperimentResult, PassCheck, Split};
pub use train::{change_frames, split_of, system_seed, train_all, train_cpd, train_system, train_vad, tune_percentile};
