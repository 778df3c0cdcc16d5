//! Speaker change-point detector.
//!
//! A small TDNN turns each frame into a frame vector. For a candidate frame
//! `t`, one ReLU recurrence reads the frame vectors of `[t - L, t)` forwards
//! and a second reads `[t, t + L)` backwards; the product of their final
//! states feeds a two-way classifier (change / no change). Frame indices
//! outside the meeting are clamped to its edges.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_layers, positive_posteriors, relu_stack, splice_rows, Binder, Layer, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{FrameMatrix, Span};
use crate::ndiff::{
    checkpoint_from, restore_from, Adam, Checkpoint, ModelGraph, ParamId, ParamStore, Tape, Tensor2, Var,
};
use crate::synthdata::derive_seed;

const TARGETS_PER_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpdConfig {
    pub context_left: usize,
    pub context_right: usize,
    pub hidden: Vec<usize>,
    pub frame_dim: usize,
    pub state_dim: usize,
    /// Frames read on each side of a candidate.
    pub lookaround: usize,
    pub threshold: f64,
    /// Minimum distance between two reported changes, in frames.
    pub min_gap: usize,
    /// Frames within this distance of a true change are positives.
    pub positive_radius: usize,
    pub train: TrainConfig,
}

impl Default for CpdConfig {
    fn default() -> Self {
        Self {
            context_left: 3,
            context_right: 3,
            hidden: vec![128, 128],
            frame_dim: 64,
            state_dim: 64,
            lookaround: 50,
            threshold: 0.5,
            min_gap: 100,
            positive_radius: 2,
            train: TrainConfig {
                batch_size: 32,
                max_steps_per_epoch: 200,
                ..TrainConfig::default()
            },
        }
    }
}

impl CpdConfig {
    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold)?;
        if self.lookaround == 0 || self.frame_dim == 0 || self.state_dim == 0 {
            return Err(Error::Config("lookaround, frame_dim and state_dim must be >= 1".into()));
        }
        self.train.validate()
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("change threshold {threshold} must lie in (0, 1)")))
    }
}

/// Change frames from per-frame change scores.
///
/// Candidates are local maxima (strictly above the left neighbour, at least
/// the right one) scoring above `threshold`. They are accepted greedily from
/// the highest score down, ties to the lower index, skipping any closer than
/// `min_gap` to one already accepted. The result is in time order.
pub fn pick_changes(scores: &[f64], threshold: f64, min_gap: usize) -> Result<Vec<usize>> {
    check_threshold(threshold)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("change scores".into()));
    }
    let n = scores.len();
    let mut cand: Vec<usize> = (0..n)
        .filter(|&t| {
            let left = if t == 0 { f64::NEG_INFINITY } else { scores[t - 1] };
            let right = if t + 1 == n { f64::NEG_INFINITY } else { scores[t + 1] };
            scores[t] > threshold && scores[t] > left && scores[t] >= right
        })
        .collect();
    cand.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut picked: Vec<usize> = Vec::new();
    for t in cand {
        if picked.iter().all(|&p| p.abs_diff(t) >= min_gap) {
            picked.push(t);
        }
    }
    picked.sort_unstable();
    Ok(picked)
}

/// One training target: a frame of a meeting and whether a change is there.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CpdSample {
    pub meeting: usize,
    pub frame: usize,
    pub change: bool,
}

#[derive(Clone, Debug)]
pub struct Cpd {
    cfg: CpdConfig,
    input_dim: usize,
    store: ParamStore,
    tdnn: Vec<Layer>,
    frame: Layer,
    fwd_x: Layer,
    fwd_h: ParamId,
    bwd_x: Layer,
    bwd_h: ParamId,
    out: Layer,
}

impl Cpd {
    pub fn new(cfg: CpdConfig, input_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::invalid("CPD input dimension must be >= 1"));
        }
        let mut store = ParamStore::new(seed);
        let width = input_dim * (cfg.context_left + cfg.context_right + 1);
        let tdnn = build_layers(&mut store, "cpd.tdnn", width, &cfg.hidden)?;
        let last = cfg.hidden.last().copied().unwrap_or(width);
        let frame = Layer::new(&mut store, "cpd.frame", last, cfg.frame_dim)?;
        let fwd_x = Layer::new(&mut store, "cpd.fwd_x", cfg.frame_dim, cfg.state_dim)?;
        let fwd_h = store.add_weight("cpd.fwd_h.w", cfg.state_dim, cfg.state_dim)?;
        let bwd_x = Layer::new(&mut store, "cpd.bwd_x", cfg.frame_dim, cfg.state_dim)?;
        let bwd_h = store.add_weight("cpd.bwd_h.w", cfg.state_dim, cfg.state_dim)?;
        let out = Layer::new(&mut store, "cpd.out", cfg.state_dim, 2)?;
        Ok(Self {
            cfg,
            input_dim,
            store,
            tdnn,
            frame,
            fwd_x,
            fwd_h,
            bwd_x,
            bwd_h,
            out,
        })
    }

    pub fn config(&self) -> &CpdConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    fn check_dim(&self, features: &FrameMatrix) -> Result<()> {
        if features.dim() != self.input_dim {
            return Err(Error::shape(
                "cpd",
                format!("feature width {}, expected {}", features.dim(), self.input_dim),
            ));
        }
        Ok(())
    }

    fn frame_vectors(&self, tape: &mut Tape, spliced: Var) -> Result<Var> {
        let b = Binder::live(&self.store);
        let h = relu_stack(tape, b, &self.tdnn, spliced)?;
        self.frame.apply(tape, b, h)
    }

    /// Logits (B x 2) from step-major frame vectors: rows `k*B..(k+1)*B`
    /// hold offset `k - L` for all B targets, for `k` in `0..2L`.
    fn classify(&self, tape: &mut Tape, frames: Var, batch: usize) -> Result<Var> {
        let b = Binder::live(&self.store);
        let l = self.cfg.lookaround;
        let run = |tape: &mut Tape, x_layer: Layer, h_id: ParamId, steps: &mut dyn Iterator<Item = usize>| -> Result<Var> {
            let wh = b.bind(tape, h_id)?;
            let mut h: Option<Var> = None;
            for k in steps {
                let x = tape.slice_rows(frames, k * batch, (k + 1) * batch)?;
                let mut pre = x_layer.apply(tape, b, x)?;
                if let Some(prev) = h {
                    let r = tape.matmul(prev, wh)?;
                    pre = tape.add(pre, r)?;
                }
                h = Some(tape.relu(pre)?);
            }
            Ok(h.expect("lookaround >= 1"))
        };
        let fwd = run(tape, self.fwd_x, self.fwd_h, &mut (0..l))?;
        let bwd = run(tape, self.bwd_x, self.bwd_h, &mut (l..2 * l).rev())?;
        let joint = tape.hadamard(fwd, bwd)?;
        self.out.apply(tape, b, joint)
    }

    fn window_indices(&self, n: usize, targets: &[usize]) -> Vec<usize> {
        let l = self.cfg.lookaround as isize;
        let mut idx = Vec::with_capacity(targets.len() * 2 * l as usize);
        for k in -l..l {
            for &t in targets {
                idx.push((t as isize + k).clamp(0, n as isize - 1) as usize);
            }
        }
        idx
    }

    /// Change posterior for every frame of a meeting.
    pub fn scores(&self, features: &FrameMatrix) -> Result<Vec<f64>> {
        self.check_dim(features)?;
        let n = features.num_frames();
        if n == 0 {
            return Ok(Vec::new());
        }
        // Frame vectors are computed once and then gathered per target.
        let all: Vec<usize> = (0..n).collect();
        let mut vectors = Vec::new();
        for chunk in all.chunks(4096) {
            let mut tape = Tape::new();
            let x = tape.input(splice_rows(features.frames(), chunk, self.cfg.context_left, self.cfg.context_right))?;
            let f = self.frame_vectors(&mut tape, x)?;
            vectors.push(tape.value(f).clone());
        }
        let refs: Vec<&Tensor2> = vectors.iter().collect();
        let vectors = Tensor2::concat_rows(&refs)?;
        let mut out = Vec::with_capacity(n);
        for chunk in all.chunks(TARGETS_PER_CHUNK) {
            let idx = self.window_indices(n, chunk);
            let mut tape = Tape::new();
            let v = tape.input(vectors.clone())?;
            let g = tape.gather(v, idx, 1)?;
            let logits = self.classify(&mut tape, g, chunk.len())?;
            out.extend(positive_posteriors(tape.value(logits)));
        }
        Ok(out)
    }

    /// Change frames strictly inside `span`.
    pub fn changes_in(&self, scores: &[f64], span: Span) -> Result<Vec<usize>> {
        if span.end > scores.len() {
            return Err(Error::invalid(format!("span {span:?} beyond {} scores", scores.len())));
        }
        let local = pick_changes(&scores[span.start..span.end], self.cfg.threshold, self.cfg.min_gap)?;
        Ok(local
            .into_iter()
            .filter(|&t| t > 0)
            .map(|t| span.start + t)
            .collect())
    }

    /// Spliced, step-major input rows for a batch of samples.
    fn batch_input(&self, meetings: &[&FrameMatrix], samples: &[CpdSample]) -> Result<(Tensor2, Vec<usize>)> {
        let l = self.cfg.lookaround as isize;
        let mut parts = Vec::with_capacity(2 * l as usize);
        for k in -l..l {
            let mut rows = Vec::with_capacity(samples.len());
            for s in samples {
                let f = meetings
                    .get(s.meeting)
                    .ok_or_else(|| Error::invalid(format!("sample refers to missing meeting {}", s.meeting)))?;
                self.check_dim(f)?;
                let n = f.num_frames() as isize;
                let t = (s.frame as isize + k).clamp(0, n - 1) as usize;
                rows.push(splice_rows(f.frames(), &[t], self.cfg.context_left, self.cfg.context_right));
            }
            let refs: Vec<&Tensor2> = rows.iter().collect();
            parts.push(Tensor2::concat_rows(&refs)?);
        }
        let refs: Vec<&Tensor2> = parts.iter().collect();
        let labels = samples.iter().map(|s| s.change as usize).collect();
        Ok((Tensor2::concat_rows(&refs)?, labels))
    }

    /// Trains on class-balanced batches. `changes[m]` lists the change
    /// frames of meeting `m` and `speech[m]` its speech spans; negatives are
    /// speech frames farther than the positive radius from every change.
    /// Returns the mean loss of each epoch.
    pub fn train(
        &mut self,
        meetings: &[&FrameMatrix],
        changes: &[Vec<usize>],
        speech: &[Vec<Span>],
        seed: u64,
    ) -> Result<Vec<f64>> {
        if meetings.len() != changes.len() || meetings.len() != speech.len() {
            return Err(Error::invalid("meetings, changes and speech must have equal lengths"));
        }
        let r = self.cfg.positive_radius;
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (m, f) in meetings.iter().enumerate() {
            let n = f.num_frames();
            let mut near = vec![false; n];
            for &c in &changes[m] {
                for t in c.saturating_sub(r)..(c + r + 1).min(n) {
                    near[t] = true;
                }
            }
            for s in &speech[m] {
                for t in s.start..s.end.min(n) {
                    if !near[t] {
                        neg.push(CpdSample { meeting: m, frame: t, change: false });
                    }
                }
            }
            pos.extend((0..n).filter(|&t| near[t]).map(|t| CpdSample { meeting: m, frame: t, change: true }));
        }
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::invalid("CPD training needs both change and non-change frames"));
        }
        let tc = self.cfg.train.clone();
        let steps = if tc.max_steps_per_epoch > 0 {
            tc.max_steps_per_epoch
        } else {
            (2 * pos.len()).div_ceil(tc.batch_size)
        };
        let half = tc.batch_size.div_ceil(2);
        let mut adam = Adam::new(tc.learning_rate);
        let mut losses = Vec::with_capacity(tc.epochs);
        for epoch in 0..tc.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[300, epoch as u64]));
            let mut total = 0.0;
            for _ in 0..steps {
                let mut samples: Vec<CpdSample> = pos.choose_multiple(&mut rng, half.min(pos.len())).copied().collect();
                samples.extend(neg.choose_multiple(&mut rng, half.min(neg.len())).copied());
                let input = self.batch_input(meetings, &samples)?;
                let graph = CpdGraph { model: self };
                let mut tape = Tape::new();
                let loss = graph.build_loss(&mut tape, &input)?;
                total += tape.value(loss).item();
                let grads = tape.backward(loss)?;
                self.store.zero_grads();
                grads.accumulate_into(&mut self.store)?;
                adam.step(&mut self.store)?;
            }
            losses.push(total / steps.max(1) as f64);
        }
        Ok(losses)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = checkpoint_from(&self.store, None);
        ck.meta.insert("cpd.input_dim".into(), self.input_dim.to_string());
        ck
    }

    pub fn from_checkpoint(cfg: CpdConfig, ck: &Checkpoint) -> Result<Self> {
        let dim = ck.meta_u64("cpd.input_dim")? as usize;
        let seed = ck.meta_u64("init_seed")?;
        let mut cpd = Self::new(cfg, dim, seed)?;
        restore_from(ck, &mut cpd.store, None)?;
        Ok(cpd)
    }
}

/// CPD cross-entropy over a step-major spliced batch and its labels.
pub struct CpdGraph<'a> {
    pub model: &'a mut Cpd,
}

impl ModelGraph for CpdGraph<'_> {
    type Input = (Tensor2, Vec<usize>);

    fn params(&self) -> &ParamStore {
        &self.model.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }

    fn build_loss(&self, tape: &mut Tape, input: &Self::Input) -> Result<Var> {
        let batch = input.1.len();
        let x = tape.input(input.0.clone())?;
        let f = self.model.frame_vectors(tape, x)?;
        let logits = self.model.classify(tape, f, batch)?;
        tape.softmax_cross_entropy(logits, &input.1)
    }
}

impl Cpd {
    /// Builds a graph input from samples; exposed for gradient checks.
    pub fn graph_input(&self, meetings: &[&FrameMatrix], samples: &[CpdSample]) -> Result<(Tensor2, Vec<usize>)> {
        self.batch_input(meetings, samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_separated_peaks() {
        let s = [0.1, 0.9, 0.2, 0.8, 0.85, 0.1, 0.7, 0.1];
        assert_eq!(pick_changes(&s, 0.5, 1).unwrap(), vec![1, 4, 6]);
        assert_eq!(pick_changes(&s, 0.5, 3).unwrap(), vec![1, 4]);
        assert_eq!(pick_changes(&s, 0.95, 1).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn plateau_reports_first_frame() {
        let s = [0.1, 0.8, 0.8, 0.8, 0.1];
        assert_eq!(pick_changes(&s, 0.5, 1).unwrap(), vec![1]);
    }

    #[test]
    fn threshold_bounds() {
        for th in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(pick_changes(&[0.5], th, 1).is_err());
        }
    }

    #[test]
    fn scores_cover_every_frame() {
        let cfg = CpdConfig {
            context_left: 1,
            context_right: 1,
            hidden: vec![4],
            frame_dim: 3,
            state_dim: 3,
            lookaround: 4,
            ..CpdConfig::default()
        };
        let cpd = Cpd::new(cfg, 2, 5).unwrap();
        let rows: Vec<Vec<f64>> = (0..30).map(|t| vec![t as f64 * 0.1, 1.0]).collect();
        let f = FrameMatrix::new(Tensor2::from_rows(&rows).unwrap(), 0.01).unwrap();
        let s = cpd.scores(&f).unwrap();
        assert_eq!(s.len(), 30);
        assert!(s.iter().all(|p| (0.0..=1.0).contains(p)));
        // Batched scoring matches scoring a single target through the graph path.
        let mut tape = Tape::new();
        let (x, _) = cpd.batch_input(&[&f], &[CpdSample { meeting: 0, frame: 7, change: false }]).unwrap();
        let x = tape.input(x).unwrap();
        let v = cpd.frame_vectors(&mut tape, x).unwrap();
        let l = cpd.classify(&mut tape, v, 1).unwrap();
        let p = positive_posteriors(tape.value(l))[0];
        assert!((p - s[7]).abs() < 1e-12);
    }
}
