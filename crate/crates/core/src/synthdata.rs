//! Seeded synthetic meetings with full ground truth.
//!
//! Every speech frame is `speaker_mean + content_influence * phone_offset +
//! noise_sigma * n` with `n ~ N(0, I)`; silence frames are noise only. Speaker
//! means are drawn so that two speakers are `speaker_separation` apart on
//! average, and each phone owns a fixed unit-norm offset shared by all
//! speakers. Raising the content influence relative to the separation makes
//! within-speaker variation depend on what is being said, which is the case
//! content-aware embeddings are designed for.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::content::{
    derive_character_track, emit_ctm, parse_ctm, AlignmentEntry, AlignmentTrack, ContentTables,
    CtmTrack, Level, Source, UnitInventory, WordTable, CHARACTERS_27,
};
use crate::error::{Error, Result};
use crate::features::{
    frames_to_seconds, read_features, seconds_to_frames, write_features, FrameMatrix, Span,
};
use crate::ndiff::Tensor2;
use crate::scoring::{emit_rttm, parse_rttm, RttmRecord};

/// SplitMix64 finaliser over a running state; derives independent seeds.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for p in std::iter::once(&0x5eed_u64).chain(parts) {
        z = z.wrapping_add(p.wrapping_add(0x9e37_79b9_7f4a_7c15));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// How character alignments are timed inside a word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CharTiming {
    /// Each word span is divided evenly among its letters.
    UniformWord,
    /// Each phone span is divided evenly among the letters that spell it.
    PhoneAligned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Size of the speaker pool.
    pub n_speakers: usize,
    /// Speakers reserved for dev/eval meetings when `open_set` is set.
    pub n_eval_speakers: usize,
    pub open_set: bool,
    pub speakers_per_meeting: usize,
    /// Training meetings.
    pub n_meetings: usize,
    pub n_dev_meetings: usize,
    pub n_eval_meetings: usize,
    /// Seconds.
    pub meeting_duration: f64,
    pub lexicon_size: usize,
    pub min_phones_per_word: usize,
    pub max_phones_per_word: usize,
    /// Frames per phone before fitting words into turns.
    pub min_phone_frames: usize,
    pub max_phone_frames: usize,
    /// Seconds.
    pub min_turn: f64,
    pub max_turn: f64,
    pub silence_ratio: f64,
    pub speaker_separation: f64,
    pub content_influence: f64,
    pub noise_sigma: f64,
    pub feature_dim: usize,
    pub frame_period: f64,
    pub char_timing: CharTiming,
    /// Fraction of each training speaker's segments held out for validation.
    pub held_out_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 12,
            n_eval_speakers: 4,
            open_set: true,
            speakers_per_meeting: 3,
            n_meetings: 16,
            n_dev_meetings: 3,
            n_eval_meetings: 3,
            meeting_duration: 120.0,
            lexicon_size: 200,
            min_phones_per_word: 2,
            max_phones_per_word: 6,
            min_phone_frames: 5,
            max_phone_frames: 15,
            min_turn: 2.0,
            max_turn: 8.0,
            silence_ratio: 0.15,
            speaker_separation: 1.0,
            content_influence: 1.0,
            noise_sigma: 0.5,
            feature_dim: 40,
            frame_period: crate::features::DEFAULT_FRAME_PERIOD,
            char_timing: CharTiming::UniformWord,
            held_out_fraction: 0.1,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_speakers == 0 || self.lexicon_size == 0 || self.feature_dim == 0 {
            return bad("n_speakers, lexicon_size and feature_dim must be >= 1".into());
        }
        if self.n_meetings + self.n_dev_meetings + self.n_eval_meetings == 0 {
            return bad("at least one meeting is required".into());
        }
        if self.speakers_per_meeting == 0 {
            return bad("speakers_per_meeting must be >= 1".into());
        }
        let (train_pool, eval_pool) = self.pool_sizes();
        if self.open_set && (self.n_eval_speakers == 0 || self.n_eval_speakers >= self.n_speakers) {
            return bad(format!(
                "open-set evaluation needs 1 <= n_eval_speakers < n_speakers, got {} of {}",
                self.n_eval_speakers, self.n_speakers
            ));
        }
        if self.n_meetings > 0 && self.speakers_per_meeting > train_pool {
            return bad(format!(
                "speakers_per_meeting {} exceeds the {train_pool} training speakers",
                self.speakers_per_meeting
            ));
        }
        if self.n_dev_meetings + self.n_eval_meetings > 0 && self.speakers_per_meeting > eval_pool {
            return bad(format!(
                "speakers_per_meeting {} exceeds the {eval_pool} evaluation speakers",
                self.speakers_per_meeting
            ));
        }
        if self.min_phones_per_word == 0 || self.min_phones_per_word > self.max_phones_per_word {
            return bad("need 1 <= min_phones_per_word <= max_phones_per_word".into());
        }
        if self.min_phone_frames < 2 || self.min_phone_frames > self.max_phone_frames {
            return bad("need 2 <= min_phone_frames <= max_phone_frames".into());
        }
        if !(self.min_turn > 0.0 && self.min_turn <= self.max_turn) {
            return bad("need 0 < min_turn <= max_turn".into());
        }
        if !(0.0..=1.0).contains(&self.silence_ratio) || !(0.0..1.0).contains(&self.held_out_fraction) {
            return bad("silence_ratio must be in [0, 1] and held_out_fraction in [0, 1)".into());
        }
        for (name, v) in [
            ("speaker_separation", self.speaker_separation),
            ("content_influence", self.content_influence),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        if !(self.frame_period > 0.0 && self.meeting_duration > 0.0) {
            return bad("frame_period and meeting_duration must be > 0".into());
        }
        Ok(())
    }

    fn pool_sizes(&self) -> (usize, usize) {
        if self.open_set {
            let e = self.n_eval_speakers.min(self.n_speakers);
            (self.n_speakers - e, e)
        } else {
            (self.n_speakers, self.n_speakers)
        }
    }

    /// Speaker ids available to training meetings.
    pub fn train_speakers(&self) -> Vec<usize> {
        (0..self.pool_sizes().0).collect()
    }

    /// Speaker ids available to dev and eval meetings.
    pub fn eval_speakers(&self) -> Vec<usize> {
        let (t, e) = self.pool_sizes();
        if self.open_set {
            (t..t + e).collect()
        } else {
            (0..e).collect()
        }
    }

    pub fn total_meetings(&self) -> usize {
        self.n_meetings + self.n_dev_meetings + self.n_eval_meetings
    }

    pub fn role(&self, meeting_index: usize) -> Role {
        if meeting_index < self.n_meetings {
            Role::Train
        } else if meeting_index < self.n_meetings + self.n_dev_meetings {
            Role::Dev
        } else {
            Role::Eval
        }
    }
}

pub fn speaker_name(id: usize) -> String {
    format!("spk{id:03}")
}

pub fn meeting_name(index: usize) -> String {
    format!("m{index:03}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Train,
    Dev,
    Eval,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Dev => "dev",
            Role::Eval => "eval",
        }
    }

    fn parse(s: &str) -> Option<Role> {
        match s {
            "train" => Some(Role::Train),
            "dev" => Some(Role::Dev),
            "eval" => Some(Role::Eval),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexiconEntry {
    pub word: String,
    pub phones: Vec<usize>,
    /// Letters contributed by each phone; their concatenation is `word`.
    pub letters_per_phone: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    pub entries: Vec<LexiconEntry>,
}

impl Lexicon {
    pub fn words(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.word.clone()).collect()
    }
}

/// Phones used for words; the silence symbol is excluded.
fn speech_phones() -> usize {
    crate::content::PHONES_48.len() - 1
}

/// Seeded random lexicon. Each phone spells as a fixed one- or two-letter
/// string, so every word's character sequence is a function of its phones.
pub fn make_lexicon(spec: &SynthSpec) -> Result<Lexicon> {
    if spec.lexicon_size == 0 {
        return Err(Error::Config("lexicon_size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1]));
    let letters = &CHARACTERS_27[..26];
    let spelling: Vec<String> = (0..speech_phones())
        .map(|_| {
            let n = rng.random_range(1..=2);
            (0..n).map(|_| letters[rng.random_range(0..letters.len())]).collect()
        })
        .collect();
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(spec.lexicon_size);
    let mut attempts = 0usize;
    while entries.len() < spec.lexicon_size {
        attempts += 1;
        if attempts > spec.lexicon_size * 1000 {
            return Err(Error::Config(format!(
                "could not draw {} distinct words; widen the phones-per-word range",
                spec.lexicon_size
            )));
        }
        let n = rng.random_range(spec.min_phones_per_word..=spec.max_phones_per_word);
        let phones: Vec<usize> = (0..n).map(|_| rng.random_range(0..speech_phones())).collect();
        let letters_per_phone: Vec<String> = phones.iter().map(|&p| spelling[p].clone()).collect();
        let word: String = letters_per_phone.concat();
        if seen.insert(word.clone()) {
            entries.push(LexiconEntry {
                word,
                phones,
                letters_per_phone,
            });
        }
    }
    Ok(Lexicon { entries })
}

/// A reference speech segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefSegment {
    pub span: Span,
    pub speaker: usize,
}

#[derive(Clone, Debug)]
pub struct SynthMeeting {
    pub id: String,
    pub index: usize,
    pub role: Role,
    pub features: FrameMatrix,
    pub segments: Vec<RefSegment>,
    pub phones: AlignmentTrack,
    pub characters: AlignmentTrack,
    pub words: AlignmentTrack,
}

impl SynthMeeting {
    pub fn reference_rttm(&self) -> Vec<RttmRecord> {
        let p = self.features.frame_period();
        self.segments
            .iter()
            .map(|s| RttmRecord {
                meeting: self.id.clone(),
                onset: frames_to_seconds(s.span.start, p),
                duration: frames_to_seconds(s.span.len(), p),
                speaker: speaker_name(s.speaker),
            })
            .collect()
    }

    pub fn track(&self, level: Level) -> &AlignmentTrack {
        match level {
            Level::Phone => &self.phones,
            Level::Character => &self.characters,
            Level::Word => &self.words,
        }
    }

    pub fn speech_frames(&self) -> usize {
        self.segments.iter().map(|s| s.span.len()).sum()
    }
}

/// Everything shared by all meetings of a corpus.
#[derive(Clone, Debug)]
pub struct CorpusModel {
    pub spec: SynthSpec,
    pub lexicon: Lexicon,
    pub speaker_means: Vec<Vec<f64>>,
    pub phone_offsets: Vec<Vec<f64>>,
}

impl CorpusModel {
    pub fn new(spec: &SynthSpec) -> Result<Self> {
        spec.validate()?;
        let lexicon = make_lexicon(spec)?;
        let f = spec.feature_dim;
        let sd = spec.speaker_separation / (2.0 * f as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[2]));
        let speaker_means = (0..spec.n_speakers)
            .map(|_| (0..f).map(|_| sd * normal(&mut rng)).collect())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[3]));
        let phone_offsets = (0..crate::content::PHONES_48.len())
            .map(|_| {
                let v: Vec<f64> = (0..f).map(|_| normal(&mut rng)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            lexicon,
            speaker_means,
            phone_offsets,
        })
    }

    pub fn tables(&self) -> Result<ContentTables> {
        let words = UnitInventory::new(Level::Word, self.lexicon.words())?;
        Ok(ContentTables {
            word_table: WordTable::new(words.units(), word_table_seed(self.spec.seed)),
            phones: UnitInventory::phones(),
            characters: UnitInventory::characters(),
            words,
        })
    }
}

pub fn word_table_seed(seed: u64) -> u64 {
    derive_seed(seed, &[4])
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Splits `total` into `parts` non-negative integers by random cut points.
fn random_partition(total: usize, parts: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if parts == 0 {
        return Vec::new();
    }
    let mut cuts: Vec<usize> = (0..parts - 1).map(|_| rng.random_range(0..=total)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(total - prev);
    out
}

pub fn generate_meeting(model: &CorpusModel, meeting_index: usize) -> Result<SynthMeeting> {
    let spec = &model.spec;
    let period = spec.frame_period;
    let total = seconds_to_frames(spec.meeting_duration, period)?;
    let min_turn = seconds_to_frames(spec.min_turn, period)?.max(1);
    let max_turn = seconds_to_frames(spec.max_turn, period)?.max(min_turn);
    let min_word = 2 * spec.max_phones_per_word;
    if total < min_turn.max(min_word) {
        return Err(Error::Config(format!(
            "meeting of {} s is too short for one {} s turn",
            spec.meeting_duration, spec.min_turn
        )));
    }
    let role = spec.role(meeting_index);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[10, meeting_index as u64]));

    let mut pool = match role {
        Role::Train => spec.train_speakers(),
        _ => spec.eval_speakers(),
    };
    pool.shuffle(&mut rng);
    pool.truncate(spec.speakers_per_meeting);
    pool.sort_unstable();

    // Turn lengths fill the speech budget exactly; a remainder shorter than a
    // turn is merged into the previous turn.
    let speech = ((1.0 - spec.silence_ratio) * total as f64).round() as usize;
    let speech = speech.clamp(min_word.min(total), total);
    let mut turns: Vec<usize> = Vec::new();
    let mut used = 0;
    while used < speech {
        let len = rng.random_range(min_turn..=max_turn).min(speech - used);
        if len < min_turn.max(min_word) && !turns.is_empty() {
            *turns.last_mut().unwrap() += len;
        } else {
            turns.push(len);
        }
        used += len;
    }

    // Silence goes into a random subset of the gaps (leading, between turns,
    // trailing); unchosen inner gaps give direct speaker changes.
    let gaps = turns.len() + 1;
    let silence = total - speech;
    let mut gap_len = vec![0usize; gaps];
    if silence > 0 {
        let mut chosen: Vec<usize> = (0..gaps).filter(|_| rng.random_bool(0.5)).collect();
        if chosen.is_empty() {
            chosen.push(rng.random_range(0..gaps));
        }
        for (g, len) in chosen.iter().zip(random_partition(silence, chosen.len(), &mut rng)) {
            gap_len[*g] = len;
        }
    }

    let mut segments = Vec::with_capacity(turns.len());
    let mut t = gap_len[0];
    let mut last: Option<usize> = None;
    for (i, len) in turns.iter().enumerate() {
        let speaker = loop {
            let s = pool[rng.random_range(0..pool.len())];
            if pool.len() == 1 || Some(s) != last {
                break s;
            }
        };
        last = Some(speaker);
        segments.push(RefSegment {
            span: Span::new(t, t + len),
            speaker,
        });
        t += len + gap_len[i + 1];
    }
    debug_assert_eq!(t, total);

    // Words tile each turn.
    let mut phone_entries = Vec::new();
    let mut word_entries: Vec<AlignmentEntry> = Vec::new();
    let mut word_phones: Vec<Vec<AlignmentEntry>> = Vec::new();
    for seg in &segments {
        let first_word = word_entries.len();
        let mut pos = seg.span.start;
        while pos < seg.span.end {
            let remaining = seg.span.end - pos;
            let w = rng.random_range(0..model.lexicon.entries.len());
            let entry = &model.lexicon.entries[w];
            let mut durs: Vec<usize> = entry
                .phones
                .iter()
                .map(|_| rng.random_range(spec.min_phone_frames..=spec.max_phone_frames))
                .collect();
            let need: usize = durs.iter().sum();
            if need > remaining {
                let n = durs.len();
                if remaining >= 2 * n {
                    // Compress the last word to fit, spreading frames evenly.
                    durs = (0..n).map(|i| (i + 1) * remaining / n - i * remaining / n).collect();
                } else if word_entries.len() > first_word {
                    // Too short for another word: lengthen the previous one.
                    let wl = word_entries.last_mut().unwrap();
                    wl.end += remaining;
                    word_phones.last_mut().unwrap().last_mut().unwrap().end += remaining;
                    break;
                } else {
                    return Err(Error::Config("turn too short for a single word".into()));
                }
            }
            let mut phones = Vec::with_capacity(durs.len());
            let mut p = pos;
            for (&ph, &d) in entry.phones.iter().zip(&durs) {
                phones.push(AlignmentEntry { unit: ph, start: p, end: p + d });
                p += d;
            }
            word_entries.push(AlignmentEntry { unit: w, start: pos, end: p });
            word_phones.push(phones);
            pos = p;
        }
    }
    for ps in &word_phones {
        phone_entries.extend_from_slice(ps);
    }
    let words = AlignmentTrack::new(Level::Word, word_entries, Source::Reference)?;
    let phones = AlignmentTrack::new(Level::Phone, phone_entries, Source::Reference)?;
    let word_inv = UnitInventory::new(Level::Word, model.lexicon.words())?;
    let char_inv = UnitInventory::characters();
    let characters = match spec.char_timing {
        CharTiming::UniformWord => derive_character_track(&words, &word_inv, &char_inv)?,
        CharTiming::PhoneAligned => {
            let mut entries = Vec::new();
            for (we, ps) in words.entries().iter().zip(&word_phones) {
                let lex = &model.lexicon.entries[we.unit];
                for (pe, letters) in ps.iter().zip(&lex.letters_per_phone) {
                    let n = letters.chars().count();
                    let len = pe.end - pe.start;
                    for (i, c) in letters.chars().enumerate() {
                        entries.push(AlignmentEntry {
                            unit: char_inv.id(&c.to_string()).expect("letters are in the inventory"),
                            start: pe.start + i * len / n,
                            end: pe.start + (i + 1) * len / n,
                        });
                    }
                }
            }
            AlignmentTrack::new(Level::Character, entries, Source::Reference)?
        }
    };

    // Acoustic frames.
    let f = spec.feature_dim;
    let mut frames = Tensor2::zeros(total, f);
    let mut speaker_at = vec![usize::MAX; total];
    for s in &segments {
        for t in s.span.start..s.span.end {
            speaker_at[t] = s.speaker;
        }
    }
    let mut phone_at = vec![usize::MAX; total];
    for e in phones.entries() {
        for t in e.start..e.end {
            phone_at[t] = e.unit;
        }
    }
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[11, meeting_index as u64]));
    for t in 0..total {
        let row = frames.row_mut(t);
        for v in row.iter_mut() {
            *v = spec.noise_sigma * normal(&mut noise_rng);
        }
        if speaker_at[t] != usize::MAX {
            let mean = &model.speaker_means[speaker_at[t]];
            let off = &model.phone_offsets[phone_at[t]];
            for k in 0..f {
                row[k] += mean[k] + spec.content_influence * off[k];
            }
        }
    }

    Ok(SynthMeeting {
        id: meeting_name(meeting_index),
        index: meeting_index,
        role,
        features: FrameMatrix::new(frames, period)?,
        segments,
        phones,
        characters,
        words,
    })
}

/// A generated or loaded corpus.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub spec: SynthSpec,
    pub lexicon: Lexicon,
    pub tables: ContentTables,
    pub meetings: Vec<SynthMeeting>,
}

impl Corpus {
    pub fn generate(spec: &SynthSpec) -> Result<Self> {
        let model = CorpusModel::new(spec)?;
        let meetings = (0..spec.total_meetings())
            .map(|i| generate_meeting(&model, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            tables: model.tables()?,
            lexicon: model.lexicon,
            meetings,
        })
    }

    pub fn with_role(&self, role: Role) -> Vec<&SynthMeeting> {
        self.meetings.iter().filter(|m| m.role == role).collect()
    }

    pub fn meeting(&self, id: &str) -> Option<&SynthMeeting> {
        self.meetings.iter().find(|m| m.id == id)
    }
}

/// A segment addressed by meeting index and position in that meeting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentRef {
    pub meeting: usize,
    pub segment: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<SegmentRef>,
    pub held_out: Vec<SegmentRef>,
    pub dev: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Per-speaker stratified hold-out of `(item, speaker)` pairs: for each
/// speaker with `n` items, `ceil(fraction * n)` are held out.
pub fn stratified_holdout<T: Clone + Ord>(
    items: &[(T, usize)],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("held-out fraction must be in (0, 1), got {fraction}")));
    }
    let mut by_speaker: BTreeMap<usize, Vec<T>> = BTreeMap::new();
    for (item, spk) in items {
        by_speaker.entry(*spk).or_default().push(item.clone());
    }
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (spk, mut list) in by_speaker {
        let n = list.len();
        let n_hold = (fraction * n as f64 - 1e-9).ceil() as usize;
        if n_hold == 0 || n_hold >= n {
            return Err(Error::invalid(format!(
                "held-out fraction {fraction} leaves speaker {} with {} of {n} items on one side",
                speaker_name(spk),
                n_hold
            )));
        }
        list.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[20, spk as u64]));
        list.shuffle(&mut rng);
        held.extend_from_slice(&list[..n_hold]);
        train.extend_from_slice(&list[n_hold..]);
    }
    train.sort();
    held.sort();
    Ok((train, held))
}

/// Training segments split per speaker into train and held-out parts; dev
/// and eval meetings are listed by index. With open-set evaluation, dev and
/// eval speakers must be disjoint from training speakers.
pub fn split_corpus(meetings: &[SynthMeeting], fraction: f64, seed: u64) -> Result<CorpusSplit> {
    let mut items = Vec::new();
    let mut dev = Vec::new();
    let mut eval = Vec::new();
    for (mi, m) in meetings.iter().enumerate() {
        match m.role {
            Role::Train => {
                for (si, s) in m.segments.iter().enumerate() {
                    items.push((SegmentRef { meeting: mi, segment: si }, s.speaker));
                }
            }
            Role::Dev => dev.push(mi),
            Role::Eval => eval.push(mi),
        }
    }
    let (train, held_out) = stratified_holdout(&items, fraction, seed)?;
    Ok(CorpusSplit {
        train,
        held_out,
        dev,
        eval,
    })
}

/// Whether the speakers of dev/eval meetings are disjoint from training speakers.
pub fn is_open_set(meetings: &[SynthMeeting]) -> bool {
    let train: HashSet<usize> = meetings
        .iter()
        .filter(|m| m.role == Role::Train)
        .flat_map(|m| m.segments.iter().map(|s| s.speaker))
        .collect();
    meetings
        .iter()
        .filter(|m| m.role != Role::Train)
        .flat_map(|m| m.segments.iter())
        .all(|s| !train.contains(&s.speaker))
}

const MANIFEST: &str = "manifest.txt";
const SPEC_FILE: &str = "spec.toml";
const LEXICON_FILE: &str = "lexicon.txt";

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes the corpus under `dir`: per-meeting feature, RTTM and CTM files,
/// unit inventories, the lexicon, the spec and a manifest of splits.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spec_text = toml::to_string(&corpus.spec).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&dir.join(SPEC_FILE), &spec_text)?;
    write_file(&dir.join("phones.txt"), &corpus.tables.phones.to_text())?;
    write_file(&dir.join("chars.txt"), &corpus.tables.characters.to_text())?;
    write_file(&dir.join("words.txt"), &corpus.tables.words.to_text())?;
    let mut lex = String::new();
    for e in &corpus.lexicon.entries {
        let phones: Vec<&str> = e.phones.iter().map(|&p| crate::content::PHONES_48[p]).collect();
        lex.push_str(&format!("{} {} {}\n", e.word, phones.join(","), e.letters_per_phone.join(",")));
    }
    write_file(&dir.join(LEXICON_FILE), &lex)?;

    let split = split_corpus(&corpus.meetings, corpus.spec.held_out_fraction, corpus.spec.seed).ok();
    let mut manifest = String::new();
    manifest.push_str(&format!("word_table_seed {}\n", corpus.tables.word_table.seed()));
    for m in &corpus.meetings {
        manifest.push_str(&format!("meeting {} {}\n", m.id, m.role.name()));
    }
    if let Some(split) = &split {
        for s in &split.held_out {
            manifest.push_str(&format!("held-out {} {}\n", corpus.meetings[s.meeting].id, s.segment));
        }
    }
    write_file(&dir.join(MANIFEST), &manifest)?;

    let period = corpus.spec.frame_period;
    for m in &corpus.meetings {
        write_features(&dir.join(format!("{}.feat", m.id)), &m.features)?;
        write_file(&dir.join(format!("{}.rttm", m.id)), &emit_rttm(&m.reference_rttm()))?;
        for (level, ext) in [(Level::Phone, "phone"), (Level::Character, "char"), (Level::Word, "word")] {
            let ctm = CtmTrack {
                recording: m.id.clone(),
                channel: "1".into(),
                track: m.track(level).clone(),
            };
            let text = emit_ctm(&[ctm], corpus.tables.inventory(level), period)?;
            write_file(&dir.join(format!("{}.{ext}.ctm", m.id)), &text)?;
        }
    }
    Ok(())
}

/// Loads a corpus written by [`write_corpus`].
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let spec: SynthSpec =
        toml::from_str(&read_file(&dir.join(SPEC_FILE))?).map_err(|e| Error::Config(e.to_string()))?;
    let phones = UnitInventory::from_text(Level::Phone, &read_file(&dir.join("phones.txt"))?)?;
    let characters = UnitInventory::from_text(Level::Character, &read_file(&dir.join("chars.txt"))?)?;
    let words = UnitInventory::from_text(Level::Word, &read_file(&dir.join("words.txt"))?)?;

    let mut entries = Vec::new();
    for (i, line) in read_file(&dir.join(LEXICON_FILE))?.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: &str| Error::Parse { line: i + 1, msg: format!("lexicon: {msg}") };
        if f.len() != 3 {
            return Err(err("expected word, phones and spelling"));
        }
        let ph = f[1]
            .split(',')
            .map(|p| phones.id(p).ok_or_else(|| err("unknown phone")))
            .collect::<Result<Vec<_>>>()?;
        entries.push(LexiconEntry {
            word: f[0].to_string(),
            phones: ph,
            letters_per_phone: f[2].split(',').map(str::to_string).collect(),
        });
    }

    let mut table_seed = None;
    let mut listed = Vec::new();
    for (i, line) in read_file(&dir.join(MANIFEST))?.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: String| Error::Parse { line: i + 1, msg: format!("manifest: {msg}") };
        match f.as_slice() {
            ["word_table_seed", s] => table_seed = Some(s.parse::<u64>().map_err(|_| err("bad seed".into()))?),
            ["meeting", id, role] => {
                let role = Role::parse(role).ok_or_else(|| err(format!("unknown role {role}")))?;
                listed.push((id.to_string(), role));
            }
            ["held-out", _, _] => {}
            _ => return Err(err(format!("unrecognised line {line:?}"))),
        }
    }
    let table_seed = table_seed.ok_or_else(|| Error::Config("manifest lacks word_table_seed".into()))?;
    let tables = ContentTables {
        word_table: WordTable::new(words.units(), table_seed),
        phones,
        characters,
        words,
    };

    let period = spec.frame_period;
    let mut meetings = Vec::with_capacity(listed.len());
    for (index, (id, role)) in listed.into_iter().enumerate() {
        let features = read_features(&dir.join(format!("{id}.feat")))?;
        let rttm = parse_rttm(&read_file(&dir.join(format!("{id}.rttm")))?)?;
        let segments = rttm
            .iter()
            .map(|r| {
                let speaker = r
                    .speaker
                    .strip_prefix("spk")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Config(format!("unexpected speaker label {}", r.speaker)))?;
                let start = seconds_to_frames(r.onset, period)?;
                let end = seconds_to_frames(r.onset + r.duration, period)?;
                Ok(RefSegment { span: Span::new(start, end), speaker })
            })
            .collect::<Result<Vec<_>>>()?;
        let track = |level: Level, ext: &str| -> Result<AlignmentTrack> {
            let text = read_file(&dir.join(format!("{id}.{ext}.ctm")))?;
            let parsed = parse_ctm(&text, tables.inventory(level), period, Source::Reference)?;
            Ok(parsed
                .into_iter()
                .next()
                .map(|c| c.track)
                .unwrap_or_else(|| AlignmentTrack::empty(level, Source::Reference)))
        };
        let phones = track(Level::Phone, "phone")?;
        let characters = track(Level::Character, "char")?;
        let words = track(Level::Word, "word")?;
        meetings.push(SynthMeeting {
            id,
            index,
            role,
            features,
            segments,
            phones,
            characters,
            words,
        });
    }
    Ok(Corpus {
        spec,
        lexicon: Lexicon { entries },
        tables,
        meetings,
    })
}
