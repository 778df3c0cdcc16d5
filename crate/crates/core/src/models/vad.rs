//! Frame-level speech/non-speech classifier.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_layers, positive_posteriors, relu_stack, splice_rows, Binder, Layer, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{FrameMatrix, Span};
use crate::ndiff::{checkpoint_from, restore_from, Adam, Checkpoint, ModelGraph, ParamStore, Tape, Tensor2, Var};
use crate::synthdata::derive_seed;

const CHUNK: usize = 2048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VadConfig {
    pub context_left: usize,
    pub context_right: usize,
    pub hidden: Vec<usize>,
    /// Posterior above which a frame counts as speech; replaced by the
    /// tuned value when `tune_threshold` is set and dev data is available.
    pub threshold: f64,
    pub tune_threshold: bool,
    /// Speech runs shorter than this are dropped.
    pub min_speech_frames: usize,
    /// Non-speech gaps shorter than this are filled.
    pub min_gap_frames: usize,
    pub train: TrainConfig,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            context_left: 27,
            context_right: 27,
            hidden: vec![256; 7],
            threshold: 0.5,
            tune_threshold: true,
            min_speech_frames: 20,
            min_gap_frames: 20,
            train: TrainConfig {
                batch_size: 256,
                ..TrainConfig::default()
            },
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("VAD threshold {} must lie in (0, 1)", self.threshold)));
        }
        self.train.validate()
    }
}

#[derive(Clone, Debug)]
pub struct Vad {
    cfg: VadConfig,
    input_dim: usize,
    store: ParamStore,
    hidden: Vec<Layer>,
    out: Layer,
}

/// Speech labels (true = speech) for `n` frames covered by `spans`.
pub fn speech_labels(n: usize, spans: &[Span]) -> Vec<bool> {
    let mut out = vec![false; n];
    for s in spans {
        for v in &mut out[s.start.min(n)..s.end.min(n)] {
            *v = true;
        }
    }
    out
}

/// Speech spans from frame decisions, after filling gaps shorter than
/// `min_gap` between speech runs and dropping runs shorter than `min_speech`.
pub fn smooth_decisions(decisions: &[bool], min_speech: usize, min_gap: usize) -> Vec<Span> {
    let mut runs: Vec<Span> = Vec::new();
    let mut t = 0;
    while t < decisions.len() {
        if decisions[t] {
            let start = t;
            while t < decisions.len() && decisions[t] {
                t += 1;
            }
            match runs.last_mut() {
                Some(prev) if start - prev.end < min_gap => prev.end = t,
                _ => runs.push(Span::new(start, t)),
            }
        } else {
            t += 1;
        }
    }
    runs.retain(|s| s.len() >= min_speech);
    runs
}

impl Vad {
    pub fn new(cfg: VadConfig, input_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::invalid("VAD input dimension must be >= 1"));
        }
        let mut store = ParamStore::new(seed);
        let width = input_dim * (cfg.context_left + cfg.context_right + 1);
        let hidden = build_layers(&mut store, "vad", width, &cfg.hidden)?;
        let last = cfg.hidden.last().copied().unwrap_or(width);
        let out = Layer::new(&mut store, "vad.out", last, 2)?;
        Ok(Self {
            cfg,
            input_dim,
            store,
            hidden,
            out,
        })
    }

    pub fn config(&self) -> &VadConfig {
        &self.cfg
    }

    pub fn threshold(&self) -> f64 {
        self.cfg.threshold
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    fn logits(&self, tape: &mut Tape, spliced: Var) -> Result<Var> {
        let b = Binder::live(&self.store);
        let h = relu_stack(tape, b, &self.hidden, spliced)?;
        self.out.apply(tape, b, h)
    }

    fn spliced(&self, features: &FrameMatrix, frames: &[usize]) -> Result<Tensor2> {
        if features.dim() != self.input_dim {
            return Err(Error::shape(
                "vad",
                format!("feature width {}, expected {}", features.dim(), self.input_dim),
            ));
        }
        Ok(splice_rows(features.frames(), frames, self.cfg.context_left, self.cfg.context_right))
    }

    /// Speech posterior of every frame.
    pub fn posteriors(&self, features: &FrameMatrix) -> Result<Vec<f64>> {
        let n = features.num_frames();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let frames: Vec<usize> = (start..end).collect();
            let mut tape = Tape::new();
            let x = tape.input(self.spliced(features, &frames)?)?;
            let l = self.logits(&mut tape, x)?;
            out.extend(positive_posteriors(tape.value(l)));
            start = end;
        }
        Ok(out)
    }

    fn spans_from(&self, post: &[f64], threshold: f64) -> Vec<Span> {
        let d: Vec<bool> = post.iter().map(|p| *p > threshold).collect();
        smooth_decisions(&d, self.cfg.min_speech_frames, self.cfg.min_gap_frames)
    }

    /// Speech segments of a meeting.
    pub fn segments(&self, features: &FrameMatrix) -> Result<Vec<Span>> {
        Ok(self.spans_from(&self.posteriors(features)?, self.cfg.threshold))
    }

    /// Trains on all frames of the given meetings. Returns the mean loss of
    /// each epoch.
    pub fn train(&mut self, data: &[(&FrameMatrix, Vec<bool>)], seed: u64) -> Result<Vec<f64>> {
        let mut pool: Vec<(usize, usize)> = Vec::new();
        for (m, (f, labels)) in data.iter().enumerate() {
            if labels.len() != f.num_frames() {
                return Err(Error::invalid(format!(
                    "meeting {m}: {} labels for {} frames",
                    labels.len(),
                    f.num_frames()
                )));
            }
            pool.extend((0..f.num_frames()).map(|t| (m, t)));
        }
        if pool.is_empty() {
            return Err(Error::invalid("no VAD training frames"));
        }
        let tc = self.cfg.train.clone();
        let mut adam = Adam::new(tc.learning_rate);
        let mut losses = Vec::with_capacity(tc.epochs);
        for epoch in 0..tc.epochs {
            let mut order = pool.clone();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[200, epoch as u64])));
            let mut chunks: Vec<&[(usize, usize)]> = order.chunks(tc.batch_size).collect();
            if tc.max_steps_per_epoch > 0 {
                chunks.truncate(tc.max_steps_per_epoch);
            }
            let mut total = 0.0;
            for chunk in &chunks {
                let mut rows = Vec::with_capacity(chunk.len());
                let mut targets = Vec::with_capacity(chunk.len());
                for &(m, t) in chunk.iter() {
                    let (f, labels) = &data[m];
                    rows.push(self.spliced(f, &[t])?);
                    targets.push(labels[t] as usize);
                }
                let refs: Vec<&Tensor2> = rows.iter().collect();
                let x = Tensor2::concat_rows(&refs)?;
                let graph = VadGraph { model: self };
                let mut tape = Tape::new();
                let loss = graph.build_loss(&mut tape, &(x, targets))?;
                total += tape.value(loss).item();
                let grads = tape.backward(loss)?;
                self.store.zero_grads();
                grads.accumulate_into(&mut self.store)?;
                adam.step(&mut self.store)?;
            }
            losses.push(total / chunks.len().max(1) as f64);
        }
        Ok(losses)
    }

    /// Picks the threshold on a 0.05 grid that minimises missed plus false
    /// alarm frames on `dev` after smoothing; ties go to the value nearest 0.5.
    pub fn tune_threshold(&mut self, dev: &[(&FrameMatrix, Vec<bool>)]) -> Result<f64> {
        let posts: Vec<Vec<f64>> = dev.iter().map(|(f, _)| self.posteriors(f)).collect::<Result<_>>()?;
        let mut best: Option<(usize, f64)> = None;
        for k in 1..20 {
            let th = k as f64 * 0.05;
            let mut errors = 0usize;
            for (post, (_, labels)) in posts.iter().zip(dev) {
                let hyp = speech_labels(post.len(), &self.spans_from(post, th));
                errors += hyp.iter().zip(labels).filter(|(a, b)| a != b).count();
            }
            let better = match best {
                None => true,
                Some((e, b)) => errors < e || (errors == e && (th - 0.5).abs() < (b - 0.5).abs()),
            };
            if better {
                best = Some((errors, th));
            }
        }
        let th = best.map(|(_, t)| t).unwrap_or(self.cfg.threshold);
        self.cfg.threshold = th;
        Ok(th)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = checkpoint_from(&self.store, None);
        ck.meta.insert("vad.input_dim".into(), self.input_dim.to_string());
        ck.meta.insert("vad.threshold".into(), format!("{:?}", self.cfg.threshold));
        ck
    }

    pub fn from_checkpoint(cfg: VadConfig, ck: &Checkpoint) -> Result<Self> {
        let dim = ck.meta_u64("vad.input_dim")? as usize;
        let seed = ck.meta_u64("init_seed")?;
        let mut cfg = cfg;
        if let Some(t) = ck.meta.get("vad.threshold") {
            cfg.threshold = t
                .parse()
                .map_err(|_| Error::invalid(format!("bad VAD threshold {t:?} in checkpoint")))?;
        }
        let mut vad = Self::new(cfg, dim, seed)?;
        restore_from(ck, &mut vad.store, None)?;
        Ok(vad)
    }
}

/// VAD cross-entropy over pre-spliced frames and their labels.
pub struct VadGraph<'a> {
    pub model: &'a mut Vad,
}

impl ModelGraph for VadGraph<'_> {
    type Input = (Tensor2, Vec<usize>);

    fn params(&self) -> &ParamStore {
        &self.model.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }

    fn build_loss(&self, tape: &mut Tape, input: &Self::Input) -> Result<Var> {
        let x = tape.input(input.0.clone())?;
        let l = self.model.logits(tape, x)?;
        tape.softmax_cross_entropy(l, &input.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_fills_gaps_and_drops_blips() {
        let d: Vec<bool> = "1111001111000000001000"
            .chars()
            .map(|c| c == '1')
            .collect();
        let s = smooth_decisions(&d, 3, 3);
        assert_eq!(s, vec![Span::new(0, 10)]);
        let s = smooth_decisions(&d, 1, 2);
        assert_eq!(s, vec![Span::new(0, 4), Span::new(6, 10), Span::new(18, 19)]);
    }

    #[test]
    fn labels_cover_spans() {
        let l = speech_labels(6, &[Span::new(1, 3), Span::new(5, 9)]);
        assert_eq!(l, vec![false, true, true, false, false, true]);
    }

    #[test]
    fn learns_energy_split() {
        let cfg = VadConfig {
            context_left: 1,
            context_right: 1,
            hidden: vec![8],
            train: TrainConfig {
                epochs: 30,
                learning_rate: 1e-2,
                batch_size: 32,
                max_steps_per_epoch: 0,
            },
            min_speech_frames: 1,
            min_gap_frames: 1,
            ..VadConfig::default()
        };
        let rows: Vec<Vec<f64>> = (0..200).map(|t| vec![if (t / 20) % 2 == 0 { 2.0 } else { -2.0 }]).collect();
        let labels: Vec<bool> = (0..200).map(|t| (t / 20) % 2 == 0).collect();
        let f = FrameMatrix::new(Tensor2::from_rows(&rows).unwrap(), 0.01).unwrap();
        let mut vad = Vad::new(cfg, 1, 3).unwrap();
        vad.train(&[(&f, labels.clone())], 4).unwrap();
        let hyp = speech_labels(200, &vad.segments(&f).unwrap());
        let acc = hyp.iter().zip(&labels).filter(|(a, b)| a == b).count();
        assert!(acc >= 180, "accuracy {acc}/200");
    }
}
