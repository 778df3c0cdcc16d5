//! TDNN speaker embedder with multi-head attentive pooling.
//!
//! Per frame, the acoustic vector is concatenated with the content vector
//! (phone and character codes as given, word vectors after a learned
//! projection), spliced over `[-left, +right]`, and passed through ReLU
//! layers and a linear layer to a frame-level d-vector. Attention heads pool
//! each window's frame d-vectors; the mean of the heads, after one more
//! affine layer, is the window embedding.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, blockwise_splice_indices, build_layers, relu_stack, Binder, Layer, TrainConfig};
use crate::content::{expand_alignment_range, AlignmentTrack, ContentLevels, ContentTables, Level};
use crate::error::{Error, Result};
use crate::features::{slide_windows, FrameMatrix, Span};
use crate::ndiff::{
    angular_softmax_logits, checkpoint_from, compare_gradients, loss_and_gradients, restore_from, Adam,
    Checkpoint, LossConfig, LossKind, ModelGraph, ParamId, ParamStore, Tape, Tensor2, Var,
};
use crate::synthdata::{derive_seed, Corpus, CorpusSplit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    Plain,
    /// Adds a frame-level phone classifier on the frame d-vectors.
    Multitask,
    /// Like multitask, with the phone gradient reversed before it reaches
    /// the d-vector layers.
    Adversarial,
}

/// Which attention penalty is added to the training loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyForm {
    /// `||A^T A - I||_F^2`: heads are pushed apart and each towards a
    /// single frame.
    Standard,
    /// Off-diagonal part of `A^T A` only: penalises overlap between heads
    /// without asking any head to be peaky.
    OffDiagonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub acoustic_dim: usize,
    pub content: ContentLevels,
    pub phone_units: usize,
    pub char_units: usize,
    pub word_dim: usize,
    pub word_projection: usize,
    pub context_left: usize,
    pub context_right: usize,
    pub hidden: Vec<usize>,
    pub dvector_dim: usize,
    pub heads: usize,
    pub attention_dim: usize,
    pub penalty_weight: f64,
    pub penalty_form: PenaltyForm,
    pub loss: LossConfig,
    pub mode: TrainingMode,
    pub adversarial_lambda: f64,
    pub phone_loss_weight: f64,
    /// Frames per embedding window.
    pub window_len: usize,
    pub hop: usize,
    pub train: TrainConfig,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            acoustic_dim: 40,
            content: ContentLevels::NONE,
            phone_units: 48,
            char_units: 27,
            word_dim: crate::content::WORD_TABLE_WIDTH,
            word_projection: 100,
            context_left: 7,
            context_right: 7,
            hidden: vec![256, 256, 256],
            dvector_dim: 128,
            heads: 4,
            attention_dim: 64,
            penalty_weight: 1.0,
            penalty_form: PenaltyForm::Standard,
            loss: LossConfig::default(),
            mode: TrainingMode::Plain,
            adversarial_lambda: 1.0,
            phone_loss_weight: 1.0,
            window_len: 200,
            hop: 100,
            train: TrainConfig::default(),
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.acoustic_dim == 0 || self.dvector_dim == 0 || self.heads == 0 || self.attention_dim == 0 {
            return Err(Error::Config(
                "acoustic_dim, dvector_dim, heads and attention_dim must be >= 1".into(),
            ));
        }
        if !(self.adversarial_lambda >= 0.0) || !(self.penalty_weight >= 0.0) || !(self.phone_loss_weight >= 0.0) {
            return Err(Error::Config("loss weights and adversarial_lambda must be >= 0".into()));
        }
        if self.hop == 0 || self.window_len < self.hop {
            return Err(Error::Config("need window_len >= hop >= 1".into()));
        }
        if self.content.word && (self.word_dim == 0 || self.word_projection == 0) {
            return Err(Error::Config("word_dim and word_projection must be >= 1".into()));
        }
        self.loss.validate()?;
        self.train.validate()
    }

    /// Width of the raw content rows this model consumes.
    pub fn content_width(&self) -> usize {
        let c = &self.content;
        c.phone as usize * self.phone_units + c.character as usize * self.char_units + c.word as usize * self.word_dim
    }

    /// Width of one frame after content concatenation and word projection.
    pub fn frame_width(&self) -> usize {
        let c = &self.content;
        self.acoustic_dim
            + c.phone as usize * self.phone_units
            + c.character as usize * self.char_units
            + c.word as usize * self.word_projection
    }

    pub fn spliced_width(&self) -> usize {
        self.frame_width() * (self.context_left + self.context_right + 1)
    }

    fn uses_phone_head(&self) -> bool {
        self.mode != TrainingMode::Plain
    }
}

#[derive(Clone, Debug)]
struct Ids {
    word_proj: Option<ParamId>,
    tdnn: Vec<Layer>,
    dvec: Layer,
    att1: Layer,
    att2: ParamId,
    pool: Layer,
    speaker: ParamId,
    phone: Option<Layer>,
}

#[derive(Clone, Debug)]
pub struct Embedder {
    cfg: EmbedderConfig,
    n_speakers: usize,
    store: ParamStore,
    ids: Ids,
}

/// One training or evaluation window.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    /// T x F acoustic frames.
    pub features: Tensor2,
    /// T x C content rows when the model is content-aware.
    pub content: Option<Tensor2>,
    pub speaker: usize,
    /// Per-frame phone targets (multitask and adversarial modes).
    pub phones: Vec<Option<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

/// Loss terms recorded on a tape.
struct LossParts {
    frames: Var,
    speaker: Var,
    penalty: Var,
}

impl Embedder {
    pub fn new(cfg: EmbedderConfig, n_speakers: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if n_speakers < 2 {
            return Err(Error::invalid(format!(
                "speaker classification needs at least 2 training speakers, got {n_speakers}"
            )));
        }
        let mut store = ParamStore::new(seed);
        let word_proj = if cfg.content.word {
            // No bias, so an all-zero word vector contributes nothing.
            Some(store.add_weight("word_proj.w", cfg.word_dim, cfg.word_projection)?)
        } else {
            None
        };
        let tdnn = build_layers(&mut store, "tdnn", cfg.spliced_width(), &cfg.hidden)?;
        let last = cfg.hidden.last().copied().unwrap_or(cfg.spliced_width());
        let dvec = Layer::new(&mut store, "dvec", last, cfg.dvector_dim)?;
        let att1 = Layer::new(&mut store, "att1", cfg.dvector_dim, cfg.attention_dim)?;
        let att2 = store.add_weight("att2.w", cfg.attention_dim, cfg.heads)?;
        let pool = Layer::new(&mut store, "pool", cfg.dvector_dim, cfg.dvector_dim)?;
        let speaker = store.add_weight("speaker.w", n_speakers, cfg.dvector_dim)?;
        let phone = if cfg.uses_phone_head() {
            Some(Layer::new(&mut store, "phone_head", cfg.dvector_dim, cfg.phone_units)?)
        } else {
            None
        };
        Ok(Self {
            ids: Ids {
                word_proj,
                tdnn,
                dvec,
                att1,
                att2,
                pool,
                speaker,
                phone,
            },
            cfg,
            n_speakers,
            store,
        })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    pub fn n_speakers(&self) -> usize {
        self.n_speakers
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn frame_dvectors_tape(
        &self,
        tape: &mut Tape,
        b: Binder,
        x: Var,
        content: Option<Var>,
        lens: &[usize],
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let mut parts = vec![x];
        match (content, cfg.content.is_empty()) {
            (_, true) => {}
            (None, false) => return Err(Error::invalid("content-aware embedder needs content rows")),
            (Some(c), false) => {
                let cw = tape.value(c).cols();
                if cw != cfg.content_width() {
                    return Err(Error::shape(
                        "frame_dvectors",
                        format!("content width {cw}, expected {}", cfg.content_width()),
                    ));
                }
                let pc = cw - cfg.content.word as usize * cfg.word_dim;
                if pc > 0 {
                    parts.push(tape.slice_cols(c, 0, pc)?);
                }
                if let Some(p) = self.ids.word_proj {
                    let words = tape.slice_cols(c, pc, cw)?;
                    let p = b.bind(tape, p)?;
                    parts.push(tape.matmul(words, p)?);
                }
            }
        }
        let input = if parts.len() == 1 { x } else { tape.concat_cols(&parts)? };
        let width = cfg.context_left + cfg.context_right + 1;
        let spliced = tape.gather(input, blockwise_splice_indices(lens, cfg.context_left, cfg.context_right), width)?;
        let h = relu_stack(tape, b, &self.ids.tdnn, spliced)?;
        self.ids.dvec.apply(tape, b, h)
    }

    /// Attention-pooled window vector (1 x D) and its penalty (1 x 1).
    fn pool_tape(&self, tape: &mut Tape, b: Binder, frames: Var) -> Result<(Var, Var)> {
        let s = self.ids.att1.apply(tape, b, frames)?;
        let s = tape.tanh(s)?;
        let w2 = b.bind(tape, self.ids.att2)?;
        let scores = tape.matmul(s, w2)?;
        let a = tape.softmax_over_rows(scores)?;
        let heads = tape.matmul_tn_exact(a, frames)?;
        let mean = tape.mean_rows(heads)?;
        let pooled = self.ids.pool.apply(tape, b, mean)?;
        let gram = tape.matmul_tn_exact(a, a)?;
        let h = self.cfg.heads;
        let diff = match self.cfg.penalty_form {
            PenaltyForm::Standard => {
                let eye = tape.input(Tensor2::identity(h))?;
                tape.sub(gram, eye)?
            }
            PenaltyForm::OffDiagonal => {
                let mask = Tensor2::from_vec(h, h, (0..h * h).map(|i| if i % (h + 1) == 0 { 0.0 } else { 1.0 }).collect())?;
                let mask = tape.input(mask)?;
                tape.hadamard(gram, mask)?
            }
        };
        let penalty = tape.sum_squares(diff)?;
        Ok((pooled, penalty))
    }

    fn stack_inputs(&self, tape: &mut Tape, items: &[(&Tensor2, Option<&Tensor2>)]) -> Result<(Var, Option<Var>, Vec<usize>)> {
        if items.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut lens = Vec::with_capacity(items.len());
        for (x, c) in items {
            if x.cols() != self.cfg.acoustic_dim {
                return Err(Error::shape(
                    "frame_dvectors",
                    format!("acoustic width {}, expected {}", x.cols(), self.cfg.acoustic_dim),
                ));
            }
            if x.rows() == 0 {
                return Err(Error::invalid("window has no frames"));
            }
            if let Some(c) = c {
                if c.rows() != x.rows() {
                    return Err(Error::shape(
                        "frame_dvectors",
                        format!("{} content rows for {} acoustic frames", c.rows(), x.rows()),
                    ));
                }
            }
            lens.push(x.rows());
        }
        let xs: Vec<&Tensor2> = items.iter().map(|(x, _)| *x).collect();
        let x = tape.input(Tensor2::concat_rows(&xs)?)?;
        let content = if self.cfg.content.is_empty() {
            None
        } else {
            let cs: Vec<&Tensor2> = items
                .iter()
                .map(|(_, c)| c.ok_or_else(|| Error::invalid("content-aware embedder needs content rows")))
                .collect::<Result<_>>()?;
            Some(tape.input(Tensor2::concat_rows(&cs)?)?)
        };
        Ok((x, content, lens))
    }

    /// Pooled embeddings (B x D) and mean penalty for stacked windows.
    fn pool_all(&self, tape: &mut Tape, b: Binder, frames: Var, lens: &[usize]) -> Result<(Var, Var)> {
        let mut pooled = Vec::with_capacity(lens.len());
        let mut penalties = Vec::with_capacity(lens.len());
        let mut off = 0;
        for &n in lens {
            let f = tape.slice_rows(frames, off, off + n)?;
            let (p, pen) = self.pool_tape(tape, b, f)?;
            pooled.push(p);
            penalties.push(pen);
            off += n;
        }
        let pooled = tape.concat_rows(&pooled)?;
        let pens = tape.concat_rows(&penalties)?;
        let pen = tape.mean_rows(pens)?;
        Ok((pooled, pen))
    }

    fn speaker_logits(&self, tape: &mut Tape, b: Binder, pooled: Var) -> Result<Var> {
        let w = b.bind(tape, self.ids.speaker)?;
        match self.cfg.loss.kind {
            LossKind::AngularSoftmax => angular_softmax_logits(tape, pooled, w, &self.cfg.loss),
            LossKind::SoftmaxCrossEntropy => tape.matmul_t(pooled, w, false, true),
        }
    }

    fn loss_parts(&self, tape: &mut Tape, ext: Binder, batch: &Batch) -> Result<LossParts> {
        let items: Vec<(&Tensor2, Option<&Tensor2>)> =
            batch.items.iter().map(|i| (&i.features, i.content.as_ref())).collect();
        let (x, c, lens) = self.stack_inputs(tape, &items)?;
        let frames = self.frame_dvectors_tape(tape, ext, x, c, &lens)?;
        let (pooled, penalty) = self.pool_all(tape, ext, frames, &lens)?;
        let logits = self.speaker_logits(tape, ext, pooled)?;
        let targets: Vec<usize> = batch.items.iter().map(|i| i.speaker).collect();
        let speaker = tape.softmax_cross_entropy(logits, &targets)?;
        Ok(LossParts { frames, speaker, penalty })
    }

    fn phone_loss(&self, tape: &mut Tape, head: Binder, frames: Var, batch: &Batch) -> Result<Var> {
        let layer = self
            .ids
            .phone
            .ok_or_else(|| Error::invalid("phone head requires multitask or adversarial mode"))?;
        let logits = layer.apply(tape, head, frames)?;
        let targets: Vec<Option<usize>> = batch.items.iter().flat_map(|i| {
            let n = i.features.rows();
            let mut p = i.phones.clone();
            p.resize(n, None);
            p
        }).collect();
        tape.softmax_cross_entropy_masked(logits, &targets)
    }

    fn base_total(&self, tape: &mut Tape, parts: &LossParts) -> Result<Var> {
        let pen = tape.scale(parts.penalty, self.cfg.penalty_weight)?;
        tape.add(parts.speaker, pen)
    }

    /// Training objective for the configured mode.
    fn training_loss(&self, tape: &mut Tape, batch: &Batch) -> Result<(Var, LossParts, Option<Var>)> {
        let live = Binder::live(&self.store);
        let parts = self.loss_parts(tape, live, batch)?;
        let mut total = self.base_total(tape, &parts)?;
        let mut phone = None;
        match self.cfg.mode {
            TrainingMode::Plain => {}
            TrainingMode::Multitask => {
                let l = self.phone_loss(tape, live, parts.frames, batch)?;
                let w = tape.scale(l, self.cfg.phone_loss_weight)?;
                total = tape.add(total, w)?;
                phone = Some(l);
            }
            TrainingMode::Adversarial => {
                let rev = tape.gradient_reverse(parts.frames, self.cfg.adversarial_lambda)?;
                let l = self.phone_loss(tape, live, rev, batch)?;
                let w = tape.scale(l, self.cfg.phone_loss_weight)?;
                total = tape.add(total, w)?;
                phone = Some(l);
            }
        }
        Ok((total, parts, phone))
    }

    /// Frame-level d-vectors (T x D) for one window.
    pub fn frame_dvectors(&self, x: &Tensor2, content: Option<&Tensor2>) -> Result<Tensor2> {
        let mut tape = Tape::new();
        let content = if self.cfg.content.is_empty() { None } else { content };
        let (xv, cv, lens) = self.stack_inputs(&mut tape, &[(x, content)])?;
        let f = self.frame_dvectors_tape(&mut tape, Binder::live(&self.store), xv, cv, &lens)?;
        Ok(tape.value(f).clone())
    }

    /// Pooled window vector and attention penalty for given frame d-vectors.
    pub fn attentive_pool(&self, frames: &Tensor2) -> Result<(Vec<f64>, f64)> {
        if frames.rows() == 0 {
            return Err(Error::invalid("attentive pooling needs at least one frame"));
        }
        let mut tape = Tape::new();
        let f = tape.input(frames.clone())?;
        let (p, pen) = self.pool_tape(&mut tape, Binder::live(&self.store), f)?;
        Ok((tape.value(p).data().to_vec(), tape.value(pen).item()))
    }

    /// Attention weights (T x H) for given frame d-vectors.
    pub fn attention(&self, frames: &Tensor2) -> Result<Tensor2> {
        let mut tape = Tape::new();
        let b = Binder::live(&self.store);
        let f = tape.input(frames.clone())?;
        let s = self.ids.att1.apply(&mut tape, b, f)?;
        let s = tape.tanh(s)?;
        let w2 = b.bind(&mut tape, self.ids.att2)?;
        let scores = tape.matmul(s, w2)?;
        let a = tape.softmax_over_rows(scores)?;
        Ok(tape.value(a).clone())
    }

    /// Embeddings of several windows, in order.
    pub fn embed_windows(&self, items: &[(&Tensor2, Option<&Tensor2>)]) -> Result<Vec<Vec<f64>>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let items: Vec<(&Tensor2, Option<&Tensor2>)> = if self.cfg.content.is_empty() {
            items.iter().map(|(x, _)| (*x, None)).collect()
        } else {
            items.to_vec()
        };
        let mut tape = Tape::new();
        let b = Binder::live(&self.store);
        let (x, c, lens) = self.stack_inputs(&mut tape, &items)?;
        let frames = self.frame_dvectors_tape(&mut tape, b, x, c, &lens)?;
        let (pooled, _) = self.pool_all(&mut tape, b, frames, &lens)?;
        let p = tape.value(pooled);
        (0..p.rows())
            .map(|r| {
                let v = p.row(r).to_vec();
                if v.iter().all(|x| *x == 0.0) {
                    return Err(Error::NonFinite("window embedding has zero norm".into()));
                }
                Ok(v)
            })
            .collect()
    }

    /// Index of the most likely training speaker for each embedding.
    pub fn classify(&self, embeddings: &[Vec<f64>]) -> Result<Vec<usize>> {
        if embeddings.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let e = tape.input(Tensor2::from_rows(embeddings)?)?;
        let logits = self.speaker_logits(&mut tape, Binder::live(&self.store), e)?;
        let l = tape.value(logits);
        Ok((0..l.rows()).map(|r| argmax(l.row(r))).collect())
    }

    /// One embedding per sliding window of every segment.
    ///
    /// `alignments` must be supplied when the model is content-aware;
    /// `regime` names the alignment source in the error otherwise. Baseline
    /// models ignore alignments.
    pub fn extract_window_dvectors(
        &self,
        meeting_id: &str,
        features: &FrameMatrix,
        segments: &[Span],
        alignments: Option<(&[&AlignmentTrack], &ContentTables)>,
        regime: &str,
    ) -> Result<Vec<WindowEmbedding>> {
        let mut sorted: Vec<Span> = segments.to_vec();
        sorted.sort();
        for w in sorted.windows(2) {
            if w[1].start < w[0].end {
                return Err(Error::invalid(format!("segments {:?} and {:?} overlap", w[0], w[1])));
            }
        }
        let needs_content = !self.cfg.content.is_empty();
        let alignments = match (needs_content, alignments) {
            (false, _) => None,
            (true, Some(a)) => Some(a),
            (true, None) => {
                return Err(Error::MissingDependency {
                    what: format!("{} alignments for the content-aware embedder", self.cfg.content),
                    regime: regime.to_string(),
                })
            }
        };
        let mut out = Vec::new();
        for (segment_id, seg) in segments.iter().enumerate() {
            if seg.is_empty() || seg.end > features.num_frames() {
                return Err(Error::invalid(format!("segment {segment_id} {seg:?} is empty or out of range")));
            }
            let plan = slide_windows(seg.len(), self.cfg.window_len, self.cfg.hop)?;
            let spans: Vec<Span> = plan.spans.iter().map(|s| Span::new(seg.start + s.start, seg.start + s.end)).collect();
            let xs: Vec<Tensor2> = spans.iter().map(|s| features.frames().slice_rows(s.start, s.end)).collect();
            let cs: Vec<Option<Tensor2>> = spans
                .iter()
                .map(|s| {
                    alignments
                        .map(|(tracks, tables)| expand_alignment_range(tracks, self.cfg.content, *s, tables))
                        .transpose()
                })
                .collect::<Result<_>>()?;
            let items: Vec<(&Tensor2, Option<&Tensor2>)> = xs.iter().zip(&cs).map(|(x, c)| (x, c.as_ref())).collect();
            for (span, vector) in spans.into_iter().zip(self.embed_windows(&items)?) {
                out.push(WindowEmbedding {
                    vector,
                    span,
                    segment_id,
                    meeting_id: meeting_id.to_string(),
                });
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, adam: Option<&Adam>) -> Checkpoint {
        let mut ck = checkpoint_from(&self.store, adam);
        ck.meta.insert("embedder.n_speakers".into(), self.n_speakers.to_string());
        ck
    }

    /// Rebuilds a model from `cfg` and loads parameters from `ck`.
    pub fn from_checkpoint(cfg: EmbedderConfig, ck: &Checkpoint) -> Result<Self> {
        let n = ck.meta_u64("embedder.n_speakers")? as usize;
        let seed = ck.meta_u64("init_seed")?;
        let mut m = Self::new(cfg, n, seed)?;
        restore_from(ck, &mut m.store, None)?;
        Ok(m)
    }
}

/// One window-level d-vector.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowEmbedding {
    pub vector: Vec<f64>,
    pub span: Span,
    pub segment_id: usize,
    pub meeting_id: String,
}

/// Which objective an [`EmbedderGraph`] evaluates.
#[derive(Clone, Debug)]
enum GraphLoss {
    Training,
    /// Speaker loss plus phone loss with no reversal anywhere.
    Unreversed,
    /// A function whose ordinary gradient equals the adversarial update:
    /// the phone head sees frozen features and the extractor sees a frozen
    /// head through a `-lambda` weighted phone loss.
    ReversedSurrogate(ParamStore),
}

/// An embedder viewed as a differentiable graph over a fixed batch.
pub struct EmbedderGraph {
    pub model: Embedder,
    loss: GraphLoss,
}

impl EmbedderGraph {
    pub fn new(model: Embedder) -> Self {
        Self {
            model,
            loss: GraphLoss::Training,
        }
    }
}

impl ModelGraph for EmbedderGraph {
    type Input = Batch;

    fn params(&self) -> &ParamStore {
        &self.model.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }

    fn build_loss(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        let m = &self.model;
        match &self.loss {
            GraphLoss::Training => Ok(m.training_loss(tape, batch)?.0),
            GraphLoss::Unreversed => {
                let live = Binder::live(&m.store);
                let parts = m.loss_parts(tape, live, batch)?;
                let total = m.base_total(tape, &parts)?;
                let l = m.phone_loss(tape, live, parts.frames, batch)?;
                let l = tape.scale(l, m.cfg.phone_loss_weight)?;
                tape.add(total, l)
            }
            GraphLoss::ReversedSurrogate(frozen) => {
                let live = Binder::live(&m.store);
                let parts = m.loss_parts(tape, live, batch)?;
                let total = m.base_total(tape, &parts)?;
                // Head term: live head on features from the frozen extractor.
                let items: Vec<(&Tensor2, Option<&Tensor2>)> =
                    batch.items.iter().map(|i| (&i.features, i.content.as_ref())).collect();
                let (x, c, lens) = m.stack_inputs(tape, &items)?;
                let fixed = m.frame_dvectors_tape(tape, Binder::frozen(frozen), x, c, &lens)?;
                let head = m.phone_loss(tape, live, fixed, batch)?;
                // Extractor term: frozen head on live features, weighted by -lambda.
                let ext = m.phone_loss(tape, Binder::frozen(frozen), parts.frames, batch)?;
                let w = m.cfg.phone_loss_weight;
                let head = tape.scale(head, w)?;
                let ext = tape.scale(ext, -w * m.cfg.adversarial_lambda)?;
                let t = tape.add(total, head)?;
                tape.add(t, ext)
            }
        }
    }
}

/// Outcome of checking the adversarial gradient against finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialCheck {
    /// Worst relative error against the reversed-sign surrogate.
    pub reversed_error: f64,
    /// Worst relative error against the loss with no reversal.
    pub unreversed_error: f64,
}

impl AdversarialCheck {
    /// The analytic gradient matches the reversed objective and not the plain one.
    pub fn sign_reversal_verified(&self, tol: f64) -> bool {
        self.reversed_error < tol && self.unreversed_error > 100.0 * tol
    }
}

/// Compares the adversarial training gradient with central differences of
/// the reversed surrogate and of the unreversed loss.
pub fn adversarial_gradient_check(model: Embedder, batch: &Batch, epsilon: f64) -> Result<AdversarialCheck> {
    if model.cfg.mode != TrainingMode::Adversarial {
        return Err(Error::invalid("adversarial_gradient_check needs an adversarial model"));
    }
    let mut graph = EmbedderGraph::new(model);
    let (_, analytic) = loss_and_gradients(&graph, batch)?;
    graph.loss = GraphLoss::ReversedSurrogate(graph.model.store.clone());
    let reversed = compare_gradients(&mut graph, batch, epsilon, &analytic, None)?.max_rel_error;
    graph.loss = GraphLoss::Unreversed;
    let unreversed = compare_gradients(&mut graph, batch, epsilon, &analytic, None)?.max_rel_error;
    Ok(AdversarialCheck {
        reversed_error: reversed,
        unreversed_error: unreversed,
    })
}

/// A meeting's frames and the alignment tracks used as content.
#[derive(Clone, Debug)]
pub struct MeetingInput<'a> {
    pub features: &'a FrameMatrix,
    pub tracks: Vec<&'a AlignmentTrack>,
}

/// A labelled training window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowRef {
    pub meeting: usize,
    pub span: Span,
    /// Class index among training speakers.
    pub speaker: usize,
}

/// Windows for speaker-classification training plus a held-out set.
#[derive(Clone, Debug)]
pub struct EmbedderData<'a> {
    pub meetings: Vec<MeetingInput<'a>>,
    pub tables: &'a ContentTables,
    pub train: Vec<WindowRef>,
    pub held_out: Vec<WindowRef>,
    pub n_speakers: usize,
    /// Corpus speaker id of each class index.
    pub speakers: Vec<usize>,
}

impl<'a> EmbedderData<'a> {
    /// Windows over the reference segments of the split's training and
    /// held-out parts, with reference alignments as content.
    pub fn from_corpus(corpus: &'a Corpus, split: &CorpusSplit, window_len: usize, hop: usize) -> Result<Self> {
        let mut speakers: Vec<usize> = split
            .train
            .iter()
            .chain(&split.held_out)
            .map(|s| corpus.meetings[s.meeting].segments[s.segment].speaker)
            .collect();
        speakers.sort_unstable();
        speakers.dedup();
        let class = |spk: usize| speakers.binary_search(&spk).expect("speaker listed");
        let windows = |refs: &[crate::synthdata::SegmentRef]| -> Result<Vec<WindowRef>> {
            let mut out = Vec::new();
            for s in refs {
                let seg = &corpus.meetings[s.meeting].segments[s.segment];
                for w in slide_windows(seg.span.len(), window_len, hop)?.spans {
                    out.push(WindowRef {
                        meeting: s.meeting,
                        span: Span::new(seg.span.start + w.start, seg.span.start + w.end),
                        speaker: class(seg.speaker),
                    });
                }
            }
            Ok(out)
        };
        let train = windows(&split.train)?;
        let held_out = windows(&split.held_out)?;
        let meetings = corpus
            .meetings
            .iter()
            .map(|m| MeetingInput {
                features: &m.features,
                tracks: vec![&m.phones, &m.characters, &m.words],
            })
            .collect();
        Ok(Self {
            meetings,
            tables: &corpus.tables,
            train,
            held_out,
            n_speakers: speakers.len(),
            speakers,
        })
    }

    pub fn item(&self, w: &WindowRef, cfg: &EmbedderConfig) -> Result<BatchItem> {
        let m = self
            .meetings
            .get(w.meeting)
            .ok_or_else(|| Error::invalid(format!("window refers to missing meeting {}", w.meeting)))?;
        let features = m.features.frames().slice_rows(w.span.start, w.span.end);
        let content = if cfg.content.is_empty() {
            None
        } else {
            Some(expand_alignment_range(&m.tracks, cfg.content, w.span, self.tables)?)
        };
        let mut phones = vec![None; w.span.len()];
        if cfg.mode != TrainingMode::Plain {
            if let Some(track) = m.tracks.iter().find(|t| t.level() == Level::Phone) {
                let entries = track.entries();
                let first = entries.partition_point(|e| e.end <= w.span.start);
                for e in entries[first..].iter().take_while(|e| e.start < w.span.end) {
                    for t in e.start.max(w.span.start)..e.end.min(w.span.end) {
                        phones[t - w.span.start] = Some(e.unit);
                    }
                }
            }
        }
        Ok(BatchItem {
            features,
            content,
            speaker: w.speaker,
            phones,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub speaker_loss: f64,
    pub penalty: f64,
    pub phone_loss: Option<f64>,
    pub held_out_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainingReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("epoch loss speaker_loss penalty phone_loss held_out_accuracy\n");
        for e in &self.epochs {
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
            s.push_str(&format!(
                "{} {:.6} {:.6} {:.6} {} {}\n",
                e.epoch,
                e.loss,
                e.speaker_loss,
                e.penalty,
                opt(e.phone_loss),
                opt(e.held_out_accuracy)
            ));
        }
        s
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.held_out_accuracy)
    }
}

/// Resumable training state.
pub struct EmbedderTrainer {
    pub model: Embedder,
    adam: Adam,
    seed: u64,
    pub report: TrainingReport,
}

impl EmbedderTrainer {
    pub fn new(cfg: EmbedderConfig, n_speakers: usize, seed: u64) -> Result<Self> {
        let lr = cfg.train.learning_rate;
        Ok(Self {
            model: Embedder::new(cfg, n_speakers, seed)?,
            adam: Adam::new(lr),
            seed,
            report: TrainingReport::default(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.report.epochs.len()
    }

    /// Runs `epochs` more epochs. Batch order depends only on the seed and
    /// the epoch number, so resumed training matches uninterrupted training.
    pub fn run(&mut self, data: &EmbedderData, epochs: usize) -> Result<()> {
        if data.n_speakers < 2 {
            return Err(Error::invalid(format!(
                "speaker classification needs at least 2 training speakers, got {}",
                data.n_speakers
            )));
        }
        if data.n_speakers != self.model.n_speakers {
            return Err(Error::invalid(format!(
                "model has {} speaker classes, data has {}",
                self.model.n_speakers, data.n_speakers
            )));
        }
        if data.train.is_empty() {
            return Err(Error::invalid("no training windows"));
        }
        let cfg = self.model.cfg.clone();
        for _ in 0..epochs {
            let epoch = self.epochs_done();
            let mut order: Vec<usize> = (0..data.train.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[100, epoch as u64])));
            let mut steps = order.chunks(cfg.train.batch_size).collect::<Vec<_>>();
            if cfg.train.max_steps_per_epoch > 0 {
                steps.truncate(cfg.train.max_steps_per_epoch);
            }
            let (mut loss, mut spk, mut pen, mut ph) = (0.0, 0.0, 0.0, 0.0);
            for chunk in &steps {
                let batch = Batch {
                    items: chunk
                        .iter()
                        .map(|&i| data.item(&data.train[i], &cfg))
                        .collect::<Result<_>>()?,
                };
                let mut tape = Tape::new();
                let (total, parts, phone) = self.model.training_loss(&mut tape, &batch)?;
                loss += tape.value(total).item();
                spk += tape.value(parts.speaker).item();
                pen += tape.value(parts.penalty).item();
                if let Some(p) = phone {
                    ph += tape.value(p).item();
                }
                let grads = tape.backward(total)?;
                self.model.store.zero_grads();
                grads.accumulate_into(&mut self.model.store)?;
                self.adam.step(&mut self.model.store)?;
            }
            let n = steps.len().max(1) as f64;
            let held_out_accuracy = self.held_out_accuracy(data)?;
            self.report.epochs.push(EpochStats {
                epoch,
                loss: loss / n,
                speaker_loss: spk / n,
                penalty: pen / n,
                phone_loss: (cfg.mode != TrainingMode::Plain).then_some(ph / n),
                held_out_accuracy,
            });
        }
        Ok(())
    }

    fn held_out_accuracy(&self, data: &EmbedderData) -> Result<Option<f64>> {
        if data.held_out.is_empty() {
            return Ok(None);
        }
        let cfg = &self.model.cfg;
        let mut correct = 0usize;
        for chunk in data.held_out.chunks(64) {
            let items: Vec<BatchItem> = chunk.iter().map(|w| data.item(w, cfg)).collect::<Result<_>>()?;
            let refs: Vec<(&Tensor2, Option<&Tensor2>)> = items.iter().map(|i| (&i.features, i.content.as_ref())).collect();
            let emb = self.model.embed_windows(&refs)?;
            let pred = self.model.classify(&emb)?;
            correct += pred.iter().zip(&items).filter(|(p, i)| **p == i.speaker).count();
        }
        Ok(Some(correct as f64 / data.held_out.len() as f64))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint(Some(&self.adam));
        ck.meta.insert("train.seed".into(), self.seed.to_string());
        ck.meta.insert("train.epochs".into(), self.epochs_done().to_string());
        for e in &self.report.epochs {
            ck.meta.insert(
                format!("report.{:04}", e.epoch),
                format!(
                    "{:?} {:?} {:?} {:?} {:?}",
                    e.loss,
                    e.speaker_loss,
                    e.penalty,
                    e.phone_loss.unwrap_or(f64::NAN),
                    e.held_out_accuracy.unwrap_or(f64::NAN)
                ),
            );
        }
        ck
    }

    /// Restores model, optimiser state and report from a checkpoint.
    pub fn from_checkpoint(cfg: EmbedderConfig, ck: &Checkpoint) -> Result<Self> {
        let lr = cfg.train.learning_rate;
        let mut model = Embedder::from_checkpoint(cfg, ck)?;
        let mut adam = Adam::new(lr);
        restore_from(ck, &mut model.store, Some(&mut adam))?;
        let seed = ck.meta_u64("train.seed")?;
        let epochs = ck.meta_u64("train.epochs")? as usize;
        let mut report = TrainingReport::default();
        for epoch in 0..epochs {
            let key = format!("report.{epoch:04}");
            let line = ck
                .meta
                .get(&key)
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks {key}")))?;
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| Error::invalid(format!("bad {key} value {s:?}"))))
                .collect::<Result<_>>()?;
            if v.len() != 5 {
                return Err(Error::invalid(format!("bad {key} entry")));
            }
            let opt = |x: f64| (!x.is_nan()).then_some(x);
            report.epochs.push(EpochStats {
                epoch,
                loss: v[0],
                speaker_loss: v[1],
                penalty: v[2],
                phone_loss: opt(v[3]),
                held_out_accuracy: opt(v[4]),
            });
        }
        Ok(Self {
            model,
            adam,
            seed,
            report,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(content: &str, mode: TrainingMode) -> EmbedderConfig {
        EmbedderConfig {
            acoustic_dim: 3,
            content: content.parse().unwrap(),
            phone_units: 4,
            char_units: 3,
            word_dim: 5,
            word_projection: 2,
            context_left: 1,
            context_right: 1,
            hidden: vec![6],
            dvector_dim: 4,
            heads: 2,
            attention_dim: 3,
            mode,
            ..EmbedderConfig::default()
        }
    }

    #[test]
    fn default_widths() {
        let base = EmbedderConfig::default();
        assert_eq!(base.spliced_width(), 600);
        let pc = EmbedderConfig {
            content: "p+c".parse().unwrap(),
            ..EmbedderConfig::default()
        };
        assert_eq!(pc.frame_width(), 115);
        assert_eq!(pc.spliced_width(), 1725);
    }

    #[test]
    fn single_head_uniform_penalty() {
        let mut cfg = tiny("", TrainingMode::Plain);
        cfg.heads = 1;
        let mut m = Embedder::new(cfg, 2, 1).unwrap();
        // Zero attention scores give uniform weights.
        let id = m.params().expect_id("att2.w").unwrap();
        m.params_mut().value_mut(id).fill(0.0);
        let frames = Tensor2::from_rows(&[[1.0, 2.0, 3.0, 4.0]; 4]).unwrap();
        let (_, pen) = m.attentive_pool(&frames).unwrap();
        assert_eq!(pen, 0.5625);
    }

    #[test]
    fn off_diagonal_penalty_ignores_single_head() {
        let mut cfg = tiny("", TrainingMode::Plain);
        cfg.heads = 1;
        cfg.penalty_form = PenaltyForm::OffDiagonal;
        let m = Embedder::new(cfg, 2, 1).unwrap();
        let frames = Tensor2::from_rows(&[[1.0, 2.0, 3.0, 4.0]; 4]).unwrap();
        assert_eq!(m.attentive_pool(&frames).unwrap().1, 0.0);
    }

    #[test]
    fn zero_weights_give_zero_frame_dvectors() {
        let mut m = Embedder::new(tiny("p", TrainingMode::Plain), 2, 1).unwrap();
        let ids: Vec<_> = m.params().ids().collect();
        for id in ids {
            m.params_mut().value_mut(id).fill(0.0);
        }
        let x = Tensor2::filled(5, 3, 0.7);
        let c = Tensor2::filled(5, 4, 1.0);
        let f = m.frame_dvectors(&x, Some(&c)).unwrap();
        assert_eq!(f.shape(), (5, 4));
        assert!(f.data().iter().all(|v| *v == 0.0));
        assert!(m.frame_dvectors(&x, Some(&Tensor2::zeros(4, 4))).is_err());
    }

    #[test]
    fn too_few_speakers_rejected() {
        assert!(Embedder::new(tiny("", TrainingMode::Plain), 1, 0).is_err());
    }
}
