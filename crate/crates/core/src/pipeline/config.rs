//! Run configuration, read from a TOML file.
//!
//! Top-level keys select the run; `[synth]`, `[embedder]`, `[vad]`, `[cpd]`,
//! `[cluster]` and `[score]` configure the stages. Every key has a default,
//! so an empty file is a valid configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterConfig;
use crate::content::ContentLevels;
use crate::error::{Error, Result};
use crate::models::{CpdConfig, EmbedderConfig, TrainingMode, VadConfig};
use crate::synthdata::SynthSpec;

/// Where segments and alignments come from at diarisation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Regime {
    /// Reference segments with reference alignments.
    Reference,
    /// Reference segments with error-injected alignments.
    ManualHypothesis,
    /// Segments from VAD and change detection, then error-injected
    /// alignments on those segments and a second clustering pass.
    AutomaticHypothesis,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Reference, Regime::ManualHypothesis, Regime::AutomaticHypothesis];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Reference => "reference",
            Regime::ManualHypothesis => "manual-hypothesis",
            Regime::AutomaticHypothesis => "automatic-hypothesis",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown regime {s:?} (expected reference, manual-hypothesis or automatic-hypothesis)"
                ))
            })
    }
}

impl TryFrom<String> for Regime {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Regime> for String {
    fn from(r: Regime) -> String {
        r.name().to_string()
    }
}

/// A named embedder variant: training mode plus content levels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct System {
    pub name: String,
    pub mode: TrainingMode,
    pub content: ContentLevels,
}

impl System {
    pub const STANDARD: [&'static str; 8] = [
        "baseline",
        "multitask",
        "adversarial",
        "case-p",
        "case-c",
        "case-p+c",
        "case-w",
        "case-w+p+c",
    ];

    pub fn baseline() -> Self {
        "baseline".parse().expect("baseline parses")
    }

    pub fn is_baseline(&self) -> bool {
        self.mode == TrainingMode::Plain && self.content.is_empty()
    }

    pub fn uses_content(&self) -> bool {
        !self.content.is_empty()
    }

    /// The embedder configuration for this system on top of `base`.
    pub fn embedder_config(&self, base: &EmbedderConfig) -> EmbedderConfig {
        EmbedderConfig {
            mode: self.mode,
            content: self.content,
            ..base.clone()
        }
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mode, content) = match s {
            "baseline" => (TrainingMode::Plain, ContentLevels::NONE),
            "multitask" => (TrainingMode::Multitask, ContentLevels::NONE),
            "adversarial" => (TrainingMode::Adversarial, ContentLevels::NONE),
            _ => match s.strip_prefix("case-") {
                Some(levels) => {
                    let c: ContentLevels = levels.parse()?;
                    if c.is_empty() {
                        return Err(Error::Config(format!("system {s:?} names no content level")));
                    }
                    (TrainingMode::Plain, c)
                }
                None => {
                    return Err(Error::Config(format!(
                        "unknown system {s:?} (expected baseline, multitask, adversarial or case-<levels>)"
                    )))
                }
            },
        };
        Ok(Self {
            name: s.to_string(),
            mode,
            content,
        })
    }
}

/// Explicit inputs for the `score` command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    /// Reference RTTM file or directory of `.rttm` files.
    pub reference: Option<PathBuf>,
    /// Hypothesis RTTM file or directory of `.rttm` files.
    pub hypothesis: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for training, clustering and error injection.
    pub seed: u64,
    /// Output directory; every artifact is written below it.
    pub out: PathBuf,
    /// Corpus directory; defaults to `<out>/corpus`.
    pub corpus: Option<PathBuf>,
    pub regime: Regime,
    /// Substitution rate applied to hypothesis alignments.
    pub error_rate: f64,
    /// Added to the error rate in the automatic regime (capped at 1), to
    /// model recognition on automatic segments being worse.
    pub automatic_error_offset: f64,
    /// Scoring collar in seconds around reference boundaries.
    pub collar: f64,
    pub systems: Vec<String>,
    /// Experiment seeds; each drives a fresh corpus and fresh models.
    pub seeds: Vec<u64>,
    pub error_rates: Vec<f64>,
    pub regimes: Vec<Regime>,
    /// Candidate clustering percentiles tuned on dev per system; empty
    /// keeps `cluster.percentile`.
    pub percentile_grid: Vec<f64>,
    pub synth: SynthSpec,
    pub embedder: EmbedderConfig,
    pub vad: VadConfig,
    pub cpd: CpdConfig,
    pub cluster: ClusterConfig,
    pub score: ScoreConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            corpus: None,
            regime: Regime::AutomaticHypothesis,
            error_rate: 0.0,
            automatic_error_offset: 0.0,
            collar: 0.0,
            systems: System::STANDARD.iter().map(|s| s.to_string()).collect(),
            seeds: vec![1, 2, 3, 4, 5],
            error_rates: vec![0.0, 0.2, 0.4],
            regimes: Regime::ALL.to_vec(),
            percentile_grid: vec![70.0, 80.0, 90.0, 95.0],
            synth: SynthSpec::default(),
            embedder: EmbedderConfig::default(),
            vad: VadConfig::default(),
            cpd: CpdConfig::default(),
            cluster: ClusterConfig::default(),
            score: ScoreConfig::default(),
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub regime: Option<Regime>,
    pub error_rate: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies overrides; `--seed` sets both the master and the corpus seed.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
            self.synth.seed = s;
        }
        if let Some(r) = o.regime {
            self.regime = r;
        }
        if let Some(e) = o.error_rate {
            self.error_rate = e;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("error_rate", self.error_rate), ("automatic_error_offset", self.automatic_error_offset)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} {r} must lie in [0, 1]")));
            }
        }
        if let Some(r) = self.error_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("error rate {r} must lie in [0, 1]")));
        }
        if !(self.collar >= 0.0) {
            return Err(Error::Config("collar must be >= 0".into()));
        }
        if let Some(p) = self.percentile_grid.iter().find(|p| !(0.0..100.0).contains(*p)) {
            return Err(Error::Config(format!("percentile {p} must lie in [0, 100)")));
        }
        if !(0.0..100.0).contains(&self.cluster.percentile) {
            return Err(Error::Config("cluster.percentile must lie in [0, 100)".into()));
        }
        if self.embedder.acoustic_dim != self.synth.feature_dim {
            return Err(Error::Config(format!(
                "embedder.acoustic_dim {} differs from synth.feature_dim {}",
                self.embedder.acoustic_dim, self.synth.feature_dim
            )));
        }
        self.system_list()?;
        self.synth.validate()?;
        self.embedder.validate()?;
        self.vad.validate()?;
        self.cpd.validate()
    }

    pub fn system_list(&self) -> Result<Vec<System>> {
        let systems: Vec<System> = self.systems.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        for (i, s) in systems.iter().enumerate() {
            if systems[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::Config(format!("system {} listed twice", s.name)));
            }
        }
        Ok(systems)
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus.clone().unwrap_or_else(|| self.out.join("corpus"))
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out.join("models")
    }

    /// Error rate actually applied in `regime`.
    pub fn effective_error_rate(&self, regime: Regime, rate: f64) -> f64 {
        match regime {
            Regime::Reference => 0.0,
            Regime::ManualHypothesis => rate,
            Regime::AutomaticHypothesis => (rate + self.automatic_error_offset).min(1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn systems_parse() {
        let s: System = "case-w+p+c".parse().unwrap();
        assert!(s.content.word && s.content.phone && s.content.character);
        assert!("baseline".parse::<System>().unwrap().is_baseline());
        assert!("case-".parse::<System>().is_err());
        assert!("fancy".parse::<System>().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("colour = 1").is_err());
        assert!(RunConfig::from_toml("regime = \"sideways\"").is_err());
        assert!(RunConfig::from_toml("[embedder]\nheads = 2\n").is_ok());
    }
}
