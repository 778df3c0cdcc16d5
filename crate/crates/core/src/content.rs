//! Content units and their per-frame vector representations.
//!
//! An [`AlignmentTrack`] maps phone, character or word units onto frame
//! ranges. [`expand_alignment`] turns one or more tracks into a T x D matrix
//! whose row `t` is the content vector appended to acoustic frame `t` by the
//! content-aware embedder: 1-of-k codes for phones and characters and a
//! fixed word-table row for words.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{frames_to_seconds, seconds_to_frames, Span};
use crate::ndiff::Tensor2;

/// The 48-phone inventory (TIMIT folding).
pub const PHONES_48: [&str; 48] = [
    "aa", "ae", "ah", "ao", "aw", "ax", "er", "ay", "b", "ch", "cl", "d", "dh", "dx", "eh", "el",
    "en", "epi", "ey", "f", "g", "hh", "ih", "ix", "iy", "jh", "k", "l", "m", "n", "ng", "ow",
    "oy", "p", "r", "s", "sh", "t", "th", "uh", "uw", "v", "vcl", "w", "y", "z", "zh", "sil",
];

/// Lower-case letters plus apostrophe.
pub const CHARACTERS_27: [&str; 27] = [
    "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p", "q", "r", "s",
    "t", "u", "v", "w", "x", "y", "z", "'",
];

pub const WORD_TABLE_WIDTH: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    Phone,
    Character,
    Word,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Phone, Level::Character, Level::Word];

    pub fn name(self) -> &'static str {
        match self {
            Level::Phone => "phone",
            Level::Character => "char",
            Level::Word => "word",
        }
    }
}

/// Which content levels feed the embedder, always concatenated in the order
/// phone, character, word.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ContentLevels {
    pub phone: bool,
    pub character: bool,
    pub word: bool,
}

impl ContentLevels {
    pub const NONE: ContentLevels = ContentLevels {
        phone: false,
        character: false,
        word: false,
    };

    pub fn is_empty(&self) -> bool {
        !(self.phone || self.character || self.word)
    }

    pub fn contains(&self, level: Level) -> bool {
        match level {
            Level::Phone => self.phone,
            Level::Character => self.character,
            Level::Word => self.word,
        }
    }

    pub fn levels(&self) -> Vec<Level> {
        Level::ALL.into_iter().filter(|l| self.contains(*l)).collect()
    }
}

impl FromStr for ContentLevels {
    type Err = Error;

    /// Parses `""`/`"none"`, or `+`-joined `p`, `c`, `w` (e.g. `w+p+c`).
    fn from_str(s: &str) -> Result<Self> {
        let mut out = ContentLevels::NONE;
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(out);
        }
        for part in s.split('+') {
            match part.trim() {
                "p" | "phone" => out.phone = true,
                "c" | "char" | "character" => out.character = true,
                "w" | "word" => out.word = true,
                other => return Err(Error::invalid(format!("unknown content level {other:?}"))),
            }
        }
        Ok(out)
    }
}

impl TryFrom<String> for ContentLevels {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ContentLevels> for String {
    fn from(l: ContentLevels) -> String {
        l.to_string()
    }
}

impl fmt::Display for ContentLevels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.word {
            parts.push("w");
        }
        if self.phone {
            parts.push("p");
        }
        if self.character {
            parts.push("c");
        }
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

/// Ordered, unique unit symbols for one level.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitInventory {
    level: Level,
    units: Vec<String>,
    index: HashMap<String, usize>,
    dimension: usize,
}

impl UnitInventory {
    pub fn new(level: Level, units: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(units.len());
        for (i, u) in units.iter().enumerate() {
            if u.is_empty() || u.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("invalid unit symbol {u:?}")));
            }
            if index.insert(u.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate unit symbol {u:?}")));
            }
        }
        let dimension = match level {
            Level::Word => WORD_TABLE_WIDTH,
            _ => units.len(),
        };
        Ok(Self {
            level,
            units,
            index,
            dimension,
        })
    }

    pub fn phones() -> Self {
        Self::new(Level::Phone, PHONES_48.iter().map(|s| s.to_string()).collect())
            .expect("static phone inventory")
    }

    pub fn characters() -> Self {
        Self::new(Level::Character, CHARACTERS_27.iter().map(|s| s.to_string()).collect())
            .expect("static character inventory")
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Width of the vector representing one unit.
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.units.get(id).map(String::as_str)
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    /// One symbol per line; the line number is the index.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for u in &self.units {
            s.push_str(u);
            s.push('\n');
        }
        s
    }

    pub fn from_text(level: Level, text: &str) -> Result<Self> {
        Self::new(level, text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
    }
}

/// 1-of-k code for `unit`.
pub fn one_hot(unit: usize, inv: &UnitInventory) -> Result<Vec<f64>> {
    if unit >= inv.len() {
        return Err(Error::invalid(format!(
            "unit id {unit} out of range for {} {} units",
            inv.len(),
            inv.level().name()
        )));
    }
    let mut v = vec![0.0; inv.dimension()];
    v[unit] = 1.0;
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Reference,
    Hypothesis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AlignmentEntry {
    pub unit: usize,
    /// Inclusive.
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

impl AlignmentEntry {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

/// Timed units of one level, sorted and non-overlapping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentTrack {
    level: Level,
    entries: Vec<AlignmentEntry>,
    source: Source,
}

impl AlignmentTrack {
    pub fn new(level: Level, mut entries: Vec<AlignmentEntry>, source: Source) -> Result<Self> {
        entries.sort_by_key(|e| (e.start, e.end));
        for (i, e) in entries.iter().enumerate() {
            if e.end <= e.start {
                return Err(Error::invalid(format!(
                    "{} entry {i} has empty extent {}..{}",
                    level.name(),
                    e.start,
                    e.end
                )));
            }
        }
        for pair in entries.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(Error::invalid(format!(
                    "overlapping {} entries at frames {}..{} and {}..{}",
                    level.name(),
                    pair[0].start,
                    pair[0].end,
                    pair[1].start,
                    pair[1].end
                )));
            }
        }
        Ok(Self {
            level,
            entries,
            source,
        })
    }

    pub fn empty(level: Level, source: Source) -> Self {
        Self {
            level,
            entries: Vec::new(),
            source,
        }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn entries(&self) -> &[AlignmentEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Last covered frame (exclusive), or 0 for an empty track.
    pub fn end_frame(&self) -> usize {
        self.entries.last().map_or(0, |e| e.end)
    }

    /// Restricts the track to `spans`, clipping entries that straddle a span
    /// edge and dropping those that fall outside every span.
    pub fn clip_to_spans(&self, spans: &[Span]) -> AlignmentTrack {
        let mut sorted: Vec<Span> = spans.to_vec();
        sorted.sort();
        let mut out = Vec::new();
        for e in &self.entries {
            for s in &sorted {
                let start = e.start.max(s.start);
                let end = e.end.min(s.end);
                if start < end {
                    out.push(AlignmentEntry { unit: e.unit, start, end });
                }
            }
        }
        out.sort_by_key(|e| (e.start, e.end));
        // Overlapping spans could duplicate frames; keep the first claim.
        let mut dedup: Vec<AlignmentEntry> = Vec::with_capacity(out.len());
        for mut e in out {
            if let Some(last) = dedup.last() {
                e.start = e.start.max(last.end);
            }
            if e.start < e.end {
                dedup.push(e);
            }
        }
        AlignmentTrack {
            level: self.level,
            entries: dedup,
            source: self.source,
        }
    }
}

/// Seeded stand-in for pretrained word vectors.
///
/// Each word's vector is drawn from a generator keyed by the table seed and
/// the word itself, so it does not depend on vocabulary order. Unknown words
/// map to zeros.
#[derive(Clone, Debug)]
pub struct WordTable {
    seed: u64,
    width: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordTable {
    pub fn new<S: AsRef<str>>(vocabulary: &[S], seed: u64) -> Self {
        Self::with_width(vocabulary, seed, WORD_TABLE_WIDTH)
    }

    pub fn with_width<S: AsRef<str>>(vocabulary: &[S], seed: u64, width: usize) -> Self {
        let vectors = vocabulary
            .iter()
            .map(|w| {
                let w = w.as_ref();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(w.as_bytes()));
                let v: Vec<f64> = (0..width)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * 0.5
                    })
                    .collect();
                (w.to_string(), v)
            })
            .collect();
        Self {
            seed,
            width,
            vectors,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }
}

/// 64-bit FNV-1a, used for stable seeds derived from strings.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Inventories and word table needed to vectorise every level.
#[derive(Clone, Debug)]
pub struct ContentTables {
    pub phones: UnitInventory,
    pub characters: UnitInventory,
    pub words: UnitInventory,
    pub word_table: WordTable,
}

impl ContentTables {
    pub fn inventory(&self, level: Level) -> &UnitInventory {
        match level {
            Level::Phone => &self.phones,
            Level::Character => &self.characters,
            Level::Word => &self.words,
        }
    }

    pub fn level_width(&self, level: Level) -> usize {
        match level {
            Level::Word => self.word_table.width(),
            l => self.inventory(l).dimension(),
        }
    }

    /// Per-frame content width for the requested levels.
    pub fn width(&self, levels: ContentLevels) -> usize {
        levels.levels().into_iter().map(|l| self.level_width(l)).sum()
    }
}

/// Per-frame content vectors for the requested levels, concatenated in
/// phone, character, word order. Frames covered by no entry of a level get
/// zeros for that level.
pub fn expand_alignment(
    tracks: &[&AlignmentTrack],
    levels: ContentLevels,
    frames: usize,
    tables: &ContentTables,
) -> Result<Tensor2> {
    for t in tracks {
        if let Some(e) = t.entries().iter().find(|e| e.end > frames) {
            return Err(Error::invalid(format!(
                "{} entry ends at frame {} beyond {frames} frames",
                t.level().name(),
                e.end
            )));
        }
    }
    expand_alignment_range(tracks, levels, Span::new(0, frames), tables)
}

/// Content rows for frames `span.start..span.end` only; entries outside the
/// range are ignored and straddling entries are cut at its edges.
pub fn expand_alignment_range(
    tracks: &[&AlignmentTrack],
    levels: ContentLevels,
    span: Span,
    tables: &ContentTables,
) -> Result<Tensor2> {
    let width = tables.width(levels);
    let mut out = Tensor2::zeros(span.len(), width);
    let mut offset = 0;
    for level in levels.levels() {
        let track = tracks
            .iter()
            .find(|t| t.level() == level)
            .ok_or_else(|| Error::invalid(format!("no {} alignment supplied", level.name())))?;
        // Tracks built through `AlignmentTrack::new` are already checked, but
        // they may be assembled by hand elsewhere; re-check overlap here.
        for pair in track.entries().windows(2) {
            if pair[1].start < pair[0].end {
                return Err(Error::invalid(format!(
                    "overlapping {} entries at frame {}",
                    level.name(),
                    pair[1].start
                )));
            }
        }
        let inv = tables.inventory(level);
        let w = tables.level_width(level);
        let entries = track.entries();
        let first = entries.partition_point(|e| e.end <= span.start);
        for e in entries[first..].iter().take_while(|e| e.start < span.end) {
            let symbol = inv.symbol(e.unit).ok_or_else(|| {
                Error::invalid(format!("{} unit id {} not in inventory", level.name(), e.unit))
            })?;
            let (s, t_end) = (e.start.max(span.start), e.end.min(span.end));
            match level {
                Level::Word => {
                    if let Some(v) = tables.word_table.vector(symbol) {
                        for t in s..t_end {
                            out.row_mut(t - span.start)[offset..offset + w].copy_from_slice(v);
                        }
                    }
                }
                _ => {
                    for t in s..t_end {
                        out.row_mut(t - span.start)[offset + e.unit] = 1.0;
                    }
                }
            }
        }
        offset += w;
    }
    Ok(out)
}

/// Character timing derived by splitting each word's span uniformly across
/// its letters. Words must be spelled with symbols of `characters`.
pub fn derive_character_track(
    words: &AlignmentTrack,
    word_inv: &UnitInventory,
    characters: &UnitInventory,
) -> Result<AlignmentTrack> {
    let mut entries = Vec::new();
    for e in words.entries() {
        let word = word_inv
            .symbol(e.unit)
            .ok_or_else(|| Error::invalid(format!("word id {} not in inventory", e.unit)))?;
        let letters: Vec<usize> = word
            .chars()
            .map(|c| {
                characters
                    .id(&c.to_string())
                    .ok_or_else(|| Error::invalid(format!("character {c:?} of {word:?} not in inventory")))
            })
            .collect::<Result<_>>()?;
        let n = letters.len();
        let len = e.end - e.start;
        if n == 0 || len < n {
            return Err(Error::invalid(format!(
                "word {word:?} spans {len} frames, too short for {n} characters"
            )));
        }
        for (i, c) in letters.into_iter().enumerate() {
            entries.push(AlignmentEntry {
                unit: c,
                start: e.start + i * len / n,
                end: e.start + (i + 1) * len / n,
            });
        }
    }
    AlignmentTrack::new(Level::Character, entries, words.source())
}

/// Substitutes each entry, independently with probability `rate`, by a
/// uniformly chosen different unit. Timing is preserved.
///
/// Decisions and replacement units come from separate streams, so with a
/// fixed seed the errors made at one rate are a subset of those made at any
/// higher rate, with the same replacements.
pub fn inject_errors(
    track: &AlignmentTrack,
    rate: f64,
    inv: &UnitInventory,
    seed: u64,
) -> Result<AlignmentTrack> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("error rate must be in [0, 1], got {rate}")));
    }
    let k = inv.len();
    if rate > 0.0 && k < 2 {
        return Err(Error::invalid("substitution needs at least two units"));
    }
    let mut decide = ChaCha8Rng::seed_from_u64(seed);
    let mut replace = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995_9e37_79b9);
    let entries = track
        .entries()
        .iter()
        .map(|e| {
            let mut e = *e;
            let u = decide.random::<f64>();
            let shift = if k > 1 { 1 + replace.random_range(0..k - 1) } else { 0 };
            if u < rate {
                e.unit = (e.unit + shift) % k;
            }
            e
        })
        .collect();
    Ok(AlignmentTrack {
        level: track.level(),
        entries,
        source: Source::Hypothesis,
    })
}

/// One CTM recording/channel with its parsed track.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CtmTrack {
    pub recording: String,
    pub channel: String,
    pub track: AlignmentTrack,
}

/// Parses `<recording> <channel> <start_s> <dur_s> <unit>` lines.
pub fn parse_ctm(text: &str, inv: &UnitInventory, period: f64, source: Source) -> Result<Vec<CtmTrack>> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut entries: HashMap<(String, String), Vec<AlignmentEntry>> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with(";;") {
            continue;
        }
        let f: Vec<&str> = l.split_whitespace().collect();
        let err = |msg: String| Error::Parse { line, msg };
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        let start: f64 = f[2].parse().map_err(|_| err(format!("bad start time {:?}", f[2])))?;
        let dur: f64 = f[3].parse().map_err(|_| err(format!("bad duration {:?}", f[3])))?;
        if !(dur > 0.0) {
            return Err(err(format!("duration must be positive, got {dur}")));
        }
        if !(start >= 0.0) {
            return Err(err(format!("start must be non-negative, got {start}")));
        }
        let unit = inv
            .id(f[4])
            .ok_or_else(|| err(format!("unknown {} unit {:?}", inv.level().name(), f[4])))?;
        let s = seconds_to_frames(start, period).map_err(|e| err(e.to_string()))?;
        let e = seconds_to_frames(start + dur, period).map_err(|e| err(e.to_string()))?;
        if e <= s {
            return Err(err(format!("duration {dur} is shorter than one frame")));
        }
        let key = (f[0].to_string(), f[1].to_string());
        if !entries.contains_key(&key) {
            order.push(key.clone());
        }
        entries.entry(key).or_default().push(AlignmentEntry { unit, start: s, end: e });
    }
    order
        .into_iter()
        .map(|key| {
            let list = entries.remove(&key).unwrap_or_default();
            Ok(CtmTrack {
                track: AlignmentTrack::new(inv.level(), list, source)?,
                recording: key.0,
                channel: key.1,
            })
        })
        .collect()
}

/// Number of decimals that represent multiples of `period` exactly.
fn decimals_for(period: f64) -> usize {
    (0..=9)
        .find(|&d| {
            let scaled = period * 10f64.powi(d as i32);
            (scaled - scaled.round()).abs() < 1e-9
        })
        .unwrap_or(6)
}

pub fn emit_ctm(tracks: &[CtmTrack], inv: &UnitInventory, period: f64) -> Result<String> {
    let d = decimals_for(period);
    let mut out = String::new();
    for t in tracks {
        for e in t.track.entries() {
            let sym = inv
                .symbol(e.unit)
                .ok_or_else(|| Error::invalid(format!("unit id {} not in inventory", e.unit)))?;
            let _ = writeln!(
                out,
                "{} {} {:.d$} {:.d$} {}",
                t.recording,
                t.channel,
                frames_to_seconds(e.start, period),
                frames_to_seconds(e.end - e.start, period),
                sym
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv(k: usize) -> UnitInventory {
        UnitInventory::new(Level::Phone, (0..k).map(|i| format!("u{i}")).collect()).unwrap()
    }

    fn tables() -> ContentTables {
        let words = UnitInventory::new(Level::Word, vec!["cat".into(), "dog".into()]).unwrap();
        ContentTables {
            word_table: WordTable::new(words.units(), 11),
            phones: UnitInventory::phones(),
            characters: UnitInventory::characters(),
            words,
        }
    }

    #[test]
    fn default_inventory_sizes() {
        assert_eq!(UnitInventory::phones().dimension(), 48);
        assert_eq!(UnitInventory::characters().dimension(), 27);
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(0, &inv(3)).unwrap(), vec![1.0, 0.0, 0.0]);
        let v = one_hot(47, &UnitInventory::phones()).unwrap();
        assert_eq!(v.len(), 48);
        assert_eq!(v[47], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
        assert!(one_hot(3, &inv(3)).is_err());
    }

    #[test]
    fn expansion_follows_entries() {
        let mut t = tables();
        t.phones = inv(2);
        let track = AlignmentTrack::new(
            Level::Phone,
            vec![
                AlignmentEntry { unit: 0, start: 0, end: 2 },
                AlignmentEntry { unit: 1, start: 2, end: 5 },
            ],
            Source::Reference,
        )
        .unwrap();
        let levels: ContentLevels = "p".parse().unwrap();
        let x = expand_alignment(&[&track], levels, 5, &t).unwrap();
        for r in 0..2 {
            assert_eq!(x.row(r), &[1.0, 0.0]);
        }
        for r in 2..5 {
            assert_eq!(x.row(r), &[0.0, 1.0]);
        }

        let empty = AlignmentTrack::empty(Level::Phone, Source::Reference);
        let z = expand_alignment(&[&empty], levels, 3, &t).unwrap();
        assert!(z.data().iter().all(|v| *v == 0.0));
        assert_eq!(z.rows(), 3);
    }

    #[test]
    fn phone_plus_char_width() {
        let t = tables();
        let p = AlignmentTrack::empty(Level::Phone, Source::Reference);
        let c = AlignmentTrack::empty(Level::Character, Source::Reference);
        let x = expand_alignment(&[&p, &c], "p+c".parse().unwrap(), 4, &t).unwrap();
        assert_eq!(x.cols(), 75);
    }

    #[test]
    fn word_rows_come_from_table_and_oov_is_zero() {
        let t = tables();
        let w = AlignmentTrack::new(
            Level::Word,
            vec![AlignmentEntry { unit: 1, start: 1, end: 3 }],
            Source::Reference,
        )
        .unwrap();
        let x = expand_alignment(&[&w], "w".parse().unwrap(), 4, &t).unwrap();
        assert_eq!(x.row(1), t.word_table.vector("dog").unwrap());
        assert!(x.row(0).iter().all(|v| *v == 0.0));
        assert!(t.word_table.vector("zebra").is_none());
        // same seed, different vocabulary order -> same vector
        let other = WordTable::new(&["dog"], 11);
        assert_eq!(other.vector("dog"), t.word_table.vector("dog"));
    }

    #[test]
    fn overlapping_entries_are_rejected() {
        let r = AlignmentTrack::new(
            Level::Phone,
            vec![
                AlignmentEntry { unit: 0, start: 0, end: 3 },
                AlignmentEntry { unit: 1, start: 2, end: 5 },
            ],
            Source::Reference,
        );
        assert!(r.is_err());
    }

    #[test]
    fn ctm_examples() {
        let mut phones = UnitInventory::phones();
        phones = UnitInventory::new(Level::Phone, {
            let mut u = phones.units().to_vec();
            u.push("AH".into());
            u
        })
        .unwrap();
        let parsed = parse_ctm("m1 1 0.00 0.50 AH\n", &phones, 0.01, Source::Reference).unwrap();
        assert_eq!(parsed.len(), 1);
        let e = parsed[0].track.entries()[0];
        assert_eq!((phones.symbol(e.unit).unwrap(), e.start, e.end), ("AH", 0, 50));

        let text = emit_ctm(&parsed, &phones, 0.01).unwrap();
        assert_eq!(text, "m1 1 0.00 0.50 AH\n");
        assert_eq!(parse_ctm(&text, &phones, 0.01, Source::Reference).unwrap(), parsed);

        match parse_ctm("m1 1 0.00 0.50\n", &phones, 0.01, Source::Reference) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("expected line-1 parse error, got {other:?}"),
        }
        assert!(parse_ctm("m1 1 0.00 -0.50 AH\n", &phones, 0.01, Source::Reference).is_err());
    }

    #[test]
    fn injection_rates() {
        let k = inv(5);
        let entries: Vec<_> = (0..10_000)
            .map(|i| AlignmentEntry { unit: i % 5, start: 2 * i, end: 2 * i + 2 })
            .collect();
        let track = AlignmentTrack::new(Level::Phone, entries, Source::Reference).unwrap();

        let same = inject_errors(&track, 0.0, &k, 1).unwrap();
        assert_eq!(same.entries(), track.entries());
        assert_eq!(same.source(), Source::Hypothesis);

        let all = inject_errors(&track, 1.0, &k, 1).unwrap();
        assert!(all.entries().iter().zip(track.entries()).all(|(a, b)| a.unit != b.unit && a.span() == b.span()));

        let some = inject_errors(&track, 0.4, &k, 1).unwrap();
        let changed = some.entries().iter().zip(track.entries()).filter(|(a, b)| a.unit != b.unit).count();
        let frac = changed as f64 / 10_000.0;
        assert!((frac - 0.4).abs() <= 0.02, "{frac}");
        assert_eq!(some, inject_errors(&track, 0.4, &k, 1).unwrap());
        assert!(inject_errors(&track, 1.5, &k, 1).is_err());

        let low = inject_errors(&track, 0.2, &k, 1).unwrap();
        for ((l, h), r) in low.entries().iter().zip(some.entries()).zip(track.entries()) {
            if l.unit != r.unit {
                assert_eq!(l.unit, h.unit);
            }
        }
    }

    #[test]
    fn character_timing_is_uniform_subdivision() {
        let words = UnitInventory::new(Level::Word, vec!["abc".into()]).unwrap();
        let track = AlignmentTrack::new(
            Level::Word,
            vec![AlignmentEntry { unit: 0, start: 10, end: 20 }],
            Source::Reference,
        )
        .unwrap();
        let chars = derive_character_track(&track, &words, &UnitInventory::characters()).unwrap();
        let spans: Vec<_> = chars.entries().iter().map(|e| (e.start, e.end)).collect();
        assert_eq!(spans, vec![(10, 13), (13, 16), (16, 20)]);
    }

    #[test]
    fn clipping_to_spans() {
        let track = AlignmentTrack::new(
            Level::Phone,
            vec![
                AlignmentEntry { unit: 0, start: 0, end: 10 },
                AlignmentEntry { unit: 1, start: 10, end: 20 },
                AlignmentEntry { unit: 2, start: 30, end: 40 },
            ],
            Source::Hypothesis,
        )
        .unwrap();
        let clipped = track.clip_to_spans(&[Span::new(5, 15), Span::new(15, 25)]);
        let got: Vec<_> = clipped.entries().iter().map(|e| (e.unit, e.start, e.end)).collect();
        assert_eq!(got, vec![(0, 5, 10), (1, 10, 15), (1, 15, 20)]);
    }

    #[test]
    fn level_strings() {
        let l: ContentLevels = "w+p+c".parse().unwrap();
        assert!(l.phone && l.character && l.word);
        assert_eq!(l.to_string(), "w+p+c");
        assert_eq!("".parse::<ContentLevels>().unwrap(), ContentLevels::NONE);
        assert!("x".parse::<ContentLevels>().is_err());
    }
}
