//! RTTM interchange and diarisation error rate.
//!
//! Scoring works on integer milliseconds. Each elementary interval between
//! consecutive boundaries (reference, hypothesis or collar edges) carries a
//! fixed number of active reference and hypothesis speakers, from which
//! missed speech, false alarm and speaker error accumulate exactly. The
//! hypothesis-to-reference mapping maximises total overlap and is solved with
//! the Hungarian algorithm.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RttmRecord {
    pub meeting: String,
    pub onset: f64,
    pub duration: f64,
    pub speaker: String,
}

impl RttmRecord {
    pub fn new(meeting: impl Into<String>, onset: f64, duration: f64, speaker: impl Into<String>) -> Result<Self> {
        if !(onset >= 0.0 && onset.is_finite()) {
            return Err(Error::invalid(format!("RTTM onset must be >= 0, got {onset}")));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::invalid(format!("RTTM duration must be > 0, got {duration}")));
        }
        Ok(Self {
            meeting: meeting.into(),
            onset,
            duration,
            speaker: speaker.into(),
        })
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    fn ms_span(&self) -> (i64, i64) {
        (to_ms(self.onset), to_ms(self.onset + self.duration))
    }
}

fn to_ms(seconds: f64) -> i64 {
    (seconds * 1000.0).round() as i64
}

fn sort_records(records: &mut [RttmRecord]) {
    records.sort_by(|a, b| {
        a.meeting
            .cmp(&b.meeting)
            .then(a.onset.total_cmp(&b.onset))
            .then(a.duration.total_cmp(&b.duration))
            .then(a.speaker.cmp(&b.speaker))
    });
}

/// Parses `SPEAKER <meeting> 1 <onset> <dur> <NA> <NA> <speaker> <NA> <NA>`
/// lines; blank lines and `;;` comments are skipped. Output is sorted by
/// meeting then onset.
pub fn parse_rttm(text: &str) -> Result<Vec<RttmRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with(";;") {
            continue;
        }
        let f: Vec<&str> = l.split_whitespace().collect();
        let err = |msg: String| Error::Parse { line, msg };
        if f.len() != 10 {
            return Err(err(format!("expected 10 fields, found {}", f.len())));
        }
        if f[0] != "SPEAKER" {
            return Err(err(format!("unsupported record type {:?}", f[0])));
        }
        let onset: f64 = f[3].parse().map_err(|_| err(format!("bad onset {:?}", f[3])))?;
        let dur: f64 = f[4].parse().map_err(|_| err(format!("bad duration {:?}", f[4])))?;
        let rec = RttmRecord::new(f[1], onset, dur, f[7]).map_err(|e| err(e.to_string()))?;
        out.push(rec);
    }
    sort_records(&mut out);
    Ok(out)
}

/// Emits records sorted by meeting then onset, with millisecond precision.
pub fn emit_rttm(records: &[RttmRecord]) -> String {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut s = String::new();
    for r in &sorted {
        let _ = writeln!(
            s,
            "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            r.meeting, r.onset, r.duration, r.speaker
        );
    }
    s
}

/// Maximum-weight assignment of rows to columns.
///
/// Returns, for each row, the assigned column (or `None` when there are more
/// rows than columns). Rectangular inputs are padded with zero weights.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.iter().map(Vec::len).max().unwrap_or(0);
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let max = weights.iter().flatten().copied().max().unwrap_or(0).max(0);
    let w = |i: usize, j: usize| -> i64 { weights.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0) };
    // Minimise max - w with the potentials formulation (1-indexed).
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = (max - w(i0 - 1, j - 1)) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// Mapping of one hypothesis speaker onto a reference speaker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpeakerPair {
    pub meeting: String,
    pub hypothesis: String,
    pub reference: String,
}

/// Error durations in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DerCounts {
    /// Scored reference speech (speaker-weighted).
    pub scored: u64,
    pub missed: u64,
    pub false_alarm: u64,
    pub speaker_error: u64,
}

impl DerCounts {
    pub fn add(&mut self, o: &DerCounts) {
        self.scored += o.scored;
        self.missed += o.missed;
        self.false_alarm += o.false_alarm;
        self.speaker_error += o.speaker_error;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerReport {
    pub ms: f64,
    pub fa: f64,
    pub ser: f64,
    pub der: f64,
    /// Seconds of scored reference speech.
    pub scored_time: f64,
    pub counts: DerCounts,
    pub mapping: Vec<SpeakerPair>,
}

impl DerReport {
    pub fn from_counts(counts: DerCounts, mapping: Vec<SpeakerPair>) -> Self {
        let pct = |x: u64| {
            if counts.scored == 0 {
                0.0
            } else {
                100.0 * x as f64 / counts.scored as f64
            }
        };
        let ms = pct(counts.missed);
        let fa = pct(counts.false_alarm);
        let ser = pct(counts.speaker_error);
        Self {
            ms,
            fa,
            ser,
            der: ms + fa + ser,
            scored_time: counts.scored as f64 / 1000.0,
            counts,
            mapping,
        }
    }
}

/// Interval index of the speakers in one meeting.
struct Timeline {
    /// (time, speaker, +1/-1) events.
    events: Vec<(i64, usize, i32)>,
    speakers: Vec<String>,
}

fn timeline<'a>(records: impl Iterator<Item = &'a RttmRecord>) -> Timeline {
    let mut speakers: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut events = Vec::new();
    for r in records {
        let id = *index.entry(r.speaker.as_str()).or_insert_with(|| {
            speakers.push(r.speaker.clone());
            speakers.len() - 1
        });
        let (s, e) = r.ms_span();
        if e > s {
            events.push((s, id, 1));
            events.push((e, id, -1));
        }
    }
    events.sort();
    Timeline { events, speakers }
}

/// Elementary intervals as (start, end, active reference ids, active hypothesis ids),
/// restricted to regions outside the collar.
fn elementary(
    reference: &Timeline,
    hypothesis: &Timeline,
    collars: &[(i64, i64)],
) -> Vec<(i64, i64, Vec<usize>, Vec<usize>)> {
    let mut cuts: Vec<i64> = reference
        .events
        .iter()
        .chain(hypothesis.events.iter())
        .map(|e| e.0)
        .chain(collars.iter().flat_map(|c| [c.0, c.1]))
        .collect();
    cuts.sort_unstable();
    cuts.dedup();

    let mut ref_count = vec![0i32; reference.speakers.len()];
    let mut hyp_count = vec![0i32; hypothesis.speakers.len()];
    let mut collar_events: Vec<(i64, i32)> = collars.iter().flat_map(|c| [(c.0, 1), (c.1, -1)]).collect();
    collar_events.sort();
    let (mut ri, mut hi, mut ci) = (0, 0, 0);
    let mut in_collar = 0i32;
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        while ri < reference.events.len() && reference.events[ri].0 <= a {
            ref_count[reference.events[ri].1] += reference.events[ri].2;
            ri += 1;
        }
        while hi < hypothesis.events.len() && hypothesis.events[hi].0 <= a {
            hyp_count[hypothesis.events[hi].1] += hypothesis.events[hi].2;
            hi += 1;
        }
        while ci < collar_events.len() && collar_events[ci].0 <= a {
            in_collar += collar_events[ci].1;
            ci += 1;
        }
        if in_collar > 0 {
            continue;
        }
        let r: Vec<usize> = (0..ref_count.len()).filter(|&i| ref_count[i] > 0).collect();
        let h: Vec<usize> = (0..hyp_count.len()).filter(|&i| hyp_count[i] > 0).collect();
        if !r.is_empty() || !h.is_empty() {
            out.push((a, b, r, h));
        }
    }
    out
}

/// Scores one meeting (records of other meetings are ignored).
fn score_meeting(
    meeting: &str,
    reference: &[&RttmRecord],
    hypothesis: &[&RttmRecord],
    collar_ms: i64,
) -> (DerCounts, Vec<SpeakerPair>) {
    let rt = timeline(reference.iter().copied());
    let ht = timeline(hypothesis.iter().copied());
    let collars: Vec<(i64, i64)> = if collar_ms > 0 {
        reference
            .iter()
            .flat_map(|r| {
                let (s, e) = r.ms_span();
                [(s - collar_ms, s + collar_ms), (e - collar_ms, e + collar_ms)]
            })
            .collect()
    } else {
        Vec::new()
    };
    let pieces = elementary(&rt, &ht, &collars);

    let mut overlap = vec![vec![0i64; rt.speakers.len()]; ht.speakers.len()];
    for (a, b, r, h) in &pieces {
        for &hs in h {
            for &rs in r {
                overlap[hs][rs] += b - a;
            }
        }
    }
    let assignment = max_weight_assignment(&overlap);

    let mut counts = DerCounts::default();
    for (a, b, r, h) in &pieces {
        let d = (b - a) as u64;
        let (nr, nh) = (r.len() as u64, h.len() as u64);
        let correct = h
            .iter()
            .filter(|&&hs| assignment[hs].is_some_and(|rs| r.contains(&rs)))
            .count() as u64;
        counts.scored += d * nr;
        counts.missed += d * nr.saturating_sub(nh);
        counts.false_alarm += d * nh.saturating_sub(nr);
        counts.speaker_error += d * (nr.min(nh) - correct);
    }

    let mapping = assignment
        .iter()
        .enumerate()
        .filter_map(|(hs, rs)| {
            let rs = (*rs)?;
            (overlap[hs][rs] > 0).then(|| SpeakerPair {
                meeting: meeting.to_string(),
                hypothesis: ht.speakers[hs].clone(),
                reference: rt.speakers[rs].clone(),
            })
        })
        .collect();
    (counts, mapping)
}

fn by_meeting(records: &[RttmRecord]) -> BTreeMap<&str, Vec<&RttmRecord>> {
    let mut m: BTreeMap<&str, Vec<&RttmRecord>> = BTreeMap::new();
    for r in records {
        m.entry(r.meeting.as_str()).or_default().push(r);
    }
    m
}

/// DER over all meetings of `reference`, each mapped independently.
/// Hypothesis records of meetings absent from the reference are ignored.
pub fn compute_der(reference: &[RttmRecord], hypothesis: &[RttmRecord], collar: f64) -> Result<DerReport> {
    let per = compute_der_per_meeting(reference, hypothesis, collar)?;
    let mut counts = DerCounts::default();
    let mut mapping = Vec::new();
    for (_, r) in per {
        counts.add(&r.counts);
        mapping.extend(r.mapping);
    }
    Ok(DerReport::from_counts(counts, mapping))
}

/// Per-meeting reports, in meeting-id order.
pub fn compute_der_per_meeting(
    reference: &[RttmRecord],
    hypothesis: &[RttmRecord],
    collar: f64,
) -> Result<Vec<(String, DerReport)>> {
    if reference.is_empty() {
        return Err(Error::invalid("empty reference"));
    }
    if !(collar >= 0.0 && collar.is_finite()) {
        return Err(Error::invalid(format!("collar must be >= 0, got {collar}")));
    }
    let collar_ms = to_ms(collar);
    let refs = by_meeting(reference);
    let hyps = by_meeting(hypothesis);
    let empty = Vec::new();
    Ok(refs
        .iter()
        .map(|(m, r)| {
            let h = hyps.get(m).unwrap_or(&empty);
            let (counts, mapping) = score_meeting(m, r, h, collar_ms);
            (m.to_string(), DerReport::from_counts(counts, mapping))
        })
        .collect())
}

/// Fixed-order text table with one row per meeting plus the aggregate.
pub fn format_table(rows: &[(String, DerReport)], total: &DerReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:>8} {:>8} {:>8} {:>8} {:>10}", "meeting", "MS", "FA", "SER", "DER", "scored_s");
    for (name, r) in rows.iter().map(|(n, r)| (n.as_str(), r)).chain([("ALL", total)]) {
        let _ = writeln!(
            s,
            "{:<16} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>10.3}",
            name, r.ms, r.fa, r.ser, r.der, r.scored_time
        );
    }
    s
}

/// Machine-readable `key = value` lines.
pub fn format_key_values(rows: &[(String, DerReport)], total: &DerReport) -> String {
    let mut s = String::new();
    for (name, r) in rows.iter().map(|(n, r)| (n.as_str(), r)).chain([("all", total)]) {
        for (k, v) in [("ms", r.ms), ("fa", r.fa), ("ser", r.ser), ("der", r.der), ("scored_s", r.scored_time)] {
            let _ = writeln!(s, "{name}.{k} = {v:?}");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(m: &str, on: f64, dur: f64, spk: &str) -> RttmRecord {
        RttmRecord::new(m, on, dur, spk).unwrap()
    }

    #[test]
    fn parse_example_line() {
        let r = parse_rttm("SPEAKER m1 1 0.00 10.00 <NA> <NA> spk1 <NA> <NA>\n").unwrap();
        assert_eq!(r, vec![rec("m1", 0.0, 10.0, "spk1")]);
        assert!(parse_rttm("SPEAKER m1 1 0.00 -1.00 <NA> <NA> spk1 <NA> <NA>\n").is_err());
        match parse_rttm("\nSPEAKER m1 1 0.00\n") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn emit_parse_identity() {
        let text = "SPEAKER m1 1 0.000 1.500 <NA> <NA> a <NA> <NA>\n\
                    SPEAKER m1 1 1.500 2.250 <NA> <NA> b <NA> <NA>\n\
                    SPEAKER m2 1 0.125 3.000 <NA> <NA> a <NA> <NA>\n";
        assert_eq!(emit_rttm(&parse_rttm(text).unwrap()), text);
    }

    #[test]
    fn hand_computed_ten_percent() {
        let r = vec![rec("m", 0.0, 10.0, "spk1"), rec("m", 10.0, 10.0, "spk2")];
        let h = vec![rec("m", 0.0, 12.0, "A"), rec("m", 12.0, 8.0, "B")];
        let d = compute_der(&r, &h, 0.0).unwrap();
        assert_eq!((d.ms, d.fa, d.ser, d.der), (0.0, 0.0, 10.0, 10.0));
        let mut pairs: Vec<_> = d.mapping.iter().map(|p| (p.hypothesis.as_str(), p.reference.as_str())).collect();
        pairs.sort();
        assert_eq!(pairs, vec![("A", "spk1"), ("B", "spk2")]);
    }

    #[test]
    fn identity_and_empty_hypothesis() {
        let r = vec![rec("m", 0.0, 10.0, "spk1"), rec("m", 10.0, 10.0, "spk2")];
        for c in [0.0, 0.25, 1.0] {
            assert_eq!(compute_der(&r, &r, c).unwrap().der, 0.0);
        }
        let d = compute_der(&r, &[], 0.0).unwrap();
        assert_eq!((d.ms, d.fa, d.ser, d.der), (100.0, 0.0, 0.0, 100.0));
        assert!(compute_der(&[], &r, 0.0).is_err());
    }

    #[test]
    fn assignment_matches_exhaustive_search() {
        let w = vec![vec![3, 1, 4], vec![1, 5, 9], vec![2, 6, 5]];
        let a = max_weight_assignment(&w);
        let got: i64 = a.iter().enumerate().map(|(i, j)| w[i][j.unwrap()]).sum();
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms.iter().map(|p| (0..3).map(|i| w[i][p[i]]).sum::<i64>()).max().unwrap();
        assert_eq!(got, best);
        // rectangular: more rows than columns
        let a = max_weight_assignment(&[vec![1], vec![7]]);
        assert_eq!(a, vec![None, Some(0)]);
    }
}
