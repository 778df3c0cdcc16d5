//! Trainable networks: the speaker embedder (baseline and content-aware),
//! the VAD frame classifier and the change-point detector.

mod cpd;
mod embedder;
mod vad;

pub use cpd::{pick_changes, Cpd, CpdConfig, CpdGraph, CpdSample};
pub use vad::{smooth_decisions, speech_labels};
pub use embedder::{
    adversarial_gradient_check, AdversarialCheck, Batch, BatchItem, Embedder, EmbedderConfig,
    EmbedderData, EmbedderGraph, EmbedderTrainer, EpochStats, MeetingInput, PenaltyForm, TrainingMode,
    TrainingReport, WindowEmbedding, WindowRef,
};
pub use vad::{Vad, VadConfig, VadGraph};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::splice_indices;
use crate::ndiff::{ParamId, ParamStore, Tape, Tensor2, Var};

/// Optimisation settings shared by all trainers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Examples (windows or frames) per update.
    pub batch_size: usize,
    /// Upper bound on updates per epoch; 0 means one full pass.
    pub max_steps_per_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 16,
            max_steps_per_epoch: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// How parameters enter a tape: as trainable nodes, or as constants taken
/// from a snapshot (used to hold one part of a model fixed).
#[derive(Clone, Copy)]
pub(crate) struct Binder<'a> {
    pub store: &'a ParamStore,
    pub constant: bool,
}

impl<'a> Binder<'a> {
    pub fn live(store: &'a ParamStore) -> Self {
        Self { store, constant: false }
    }

    pub fn frozen(store: &'a ParamStore) -> Self {
        Self { store, constant: true }
    }

    pub fn bind(&self, tape: &mut Tape, id: ParamId) -> Result<Var> {
        if self.constant {
            tape.input(self.store.value(id).clone())
        } else {
            tape.param(self.store, id)
        }
    }
}

/// Weight/bias pair of one affine layer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layer {
    pub w: ParamId,
    pub b: ParamId,
}

impl Layer {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            w: store.add_weight(&format!("{name}.w"), fan_in, fan_out)?,
            b: store.add_zeros(&format!("{name}.b"), 1, fan_out)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, b: Binder, x: Var) -> Result<Var> {
        let w = b.bind(tape, self.w)?;
        let bias = b.bind(tape, self.b)?;
        tape.affine(x, w, bias)
    }
}

/// A stack of affine+ReLU layers.
pub(crate) fn relu_stack(tape: &mut Tape, b: Binder, layers: &[Layer], mut x: Var) -> Result<Var> {
    for l in layers {
        let h = l.apply(tape, b, x)?;
        x = tape.relu(h)?;
    }
    Ok(x)
}

pub(crate) fn build_layers(store: &mut ParamStore, prefix: &str, input: usize, widths: &[usize]) -> Result<Vec<Layer>> {
    let mut layers = Vec::with_capacity(widths.len());
    let mut fan_in = input;
    for (i, &w) in widths.iter().enumerate() {
        if w == 0 {
            return Err(Error::Config(format!("{prefix} layer {i} has zero width")));
        }
        layers.push(Layer::new(store, &format!("{prefix}.{i}"), fan_in, w)?);
        fan_in = w;
    }
    Ok(layers)
}

/// Spliced rows for the given frame indices of `x`, with context taken from
/// `x` itself and clamped at its edges.
pub(crate) fn splice_rows(x: &Tensor2, frames: &[usize], left: usize, right: usize) -> Tensor2 {
    let f = x.cols();
    let width = left + right + 1;
    let mut out = Tensor2::zeros(frames.len(), f * width);
    let last = x.rows() as isize - 1;
    for (r, &t) in frames.iter().enumerate() {
        let dst = out.row_mut(r);
        for k in 0..width {
            let src = (t as isize + k as isize - left as isize).clamp(0, last) as usize;
            dst[k * f..(k + 1) * f].copy_from_slice(x.row(src));
        }
    }
    out
}

/// Gather indices splicing each of several stacked blocks independently.
pub(crate) fn blockwise_splice_indices(lens: &[usize], left: usize, right: usize) -> Vec<usize> {
    let mut idx = Vec::new();
    let mut base = 0;
    for &n in lens {
        idx.extend(splice_indices(base, n, left, right));
        base += n;
    }
    idx
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Two-class softmax probability of class 1 for each row of a 2-column logit matrix.
pub(crate) fn positive_posteriors(logits: &Tensor2) -> Vec<f64> {
    (0..logits.rows())
        .map(|r| {
            let (a, b) = (logits.get(r, 0), logits.get(r, 1));
            1.0 / (1.0 + (a - b).exp())
        })
        .collect()
}
