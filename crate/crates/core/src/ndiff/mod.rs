//! Minimal deterministic differentiable-computation core.
//!
//! [`Tape`] records eager tensor operations and replays them backwards;
//! [`ParamStore`] owns named parameters and their gradient accumulators;
//! [`Adam`] updates them; [`finite_diff_check`] verifies gradients against
//! central differences.

mod checkpoint;
mod exact;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use exact::{exact_sum, ExactSum};
pub use gradcheck::{
    compare_gradients, finite_diff_check, loss_and_gradients, relative_error, GradCheckReport,
    ModelGraph,
};
pub use optim::Adam;
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor2;

use crate::error::Result;

/// Loss functions available to classifier heads.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    AngularSoftmax,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Angular margin factor; only 1 is supported.
    pub margin: u32,
    /// Cosine logit scale.
    pub scale: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::AngularSoftmax,
            margin: 1,
            scale: 10.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == LossKind::AngularSoftmax && self.margin != 1 {
            return Err(crate::Error::invalid(format!(
                "angular softmax margin must be 1, got {}",
                self.margin
            )));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(crate::Error::invalid(format!(
                "loss scale must be positive and finite, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// Cosine logits `s * cos(e_i, w_j)` between embedding rows and class weight rows.
///
/// Both sides are renormalised to unit length on the tape, so gradients flow
/// through the normalisation. A zero-norm embedding row is rejected.
pub fn angular_softmax_logits(
    tape: &mut Tape,
    embeddings: Var,
    class_weights: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let e = tape.normalize_rows(embeddings)?;
    let w = tape.normalize_rows(class_weights)?;
    let cos = tape.matmul_t(e, w, false, true)?;
    tape.scale(cos, cfg.scale)
}

/// Saves parameters (and optionally optimizer state) into a checkpoint.
pub fn checkpoint_from(store: &ParamStore, opt: Option<&Adam>) -> Checkpoint {
    let mut ck = Checkpoint::default();
    ck.meta.insert("init_seed".into(), store.seed().to_string());
    for (name, t) in store.named_values() {
        ck.tensors.push((format!("param/{name}"), t));
    }
    if let Some(opt) = opt {
        let (step, m, v) = opt.state();
        ck.meta.insert("adam.step".into(), step.to_string());
        ck.meta.insert("adam.lr".into(), format!("{:?}", opt.lr));
        for id in store.ids() {
            if let (Some(mt), Some(vt)) = (m.get(id.index()), v.get(id.index())) {
                ck.tensors.push((format!("adam.m/{}", store.name(id)), mt.clone()));
                ck.tensors.push((format!("adam.v/{}", store.name(id)), vt.clone()));
            }
        }
    }
    ck
}

/// Restores parameter values (and optimizer state when present) from a checkpoint.
pub fn restore_from(ck: &Checkpoint, store: &mut ParamStore, opt: Option<&mut Adam>) -> Result<()> {
    store.load_values(&ck.with_prefix("param/"))?;
    if let Some(opt) = opt {
        if ck.meta.contains_key("adam.step") {
            let step = ck.meta_u64("adam.step")?;
            let mut m = Vec::new();
            let mut v = Vec::new();
            for id in store.ids() {
                let name = store.name(id);
                match (ck.tensor(&format!("adam.m/{name}")), ck.tensor(&format!("adam.v/{name}"))) {
                    (Some(mt), Some(vt)) => {
                        m.push(mt.clone());
                        v.push(vt.clone());
                    }
                    _ => {
                        m.clear();
                        v.clear();
                        break;
                    }
                }
            }
            opt.restore(step, m, v)?;
        }
    }
    Ok(())
}
