//! Acoustic frame containers, context splicing and sliding-window planning.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndiff::Tensor2;

pub const DEFAULT_FRAME_PERIOD: f64 = 0.010;
pub const DEFAULT_FRAME_SIZE: f64 = 0.025;

/// T x F feature frames plus timing metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatrix {
    frames: Tensor2,
    frame_period: f64,
    frame_size: f64,
}

impl FrameMatrix {
    pub fn new(frames: Tensor2, frame_period: f64) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::invalid("frame matrix needs at least one frame"));
        }
        if !(frame_period > 0.0) {
            return Err(Error::invalid(format!("frame period must be > 0, got {frame_period}")));
        }
        Ok(Self {
            frames,
            frame_period,
            frame_size: DEFAULT_FRAME_SIZE,
        })
    }

    pub fn with_frame_size(mut self, frame_size: f64) -> Self {
        self.frame_size = frame_size;
        self
    }

    pub fn frames(&self) -> &Tensor2 {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frame_period(&self) -> f64 {
        self.frame_period
    }

    pub fn frame_size(&self) -> f64 {
        self.frame_size
    }

    pub fn duration(&self) -> f64 {
        frames_to_seconds(self.num_frames(), self.frame_period)
    }

    /// Frames `start..end` as a new matrix with the same timing metadata.
    pub fn slice(&self, start: usize, end: usize) -> Result<FrameMatrix> {
        if start >= end || end > self.num_frames() {
            return Err(Error::invalid(format!(
                "frame range {start}..{end} outside 0..{}",
                self.num_frames()
            )));
        }
        Ok(FrameMatrix {
            frames: self.frames.slice_rows(start, end),
            frame_period: self.frame_period,
            frame_size: self.frame_size,
        })
    }
}

/// Row indices for splicing `rows` frames with `left`/`right` context, edge-replicated.
///
/// Row `t` of the result lists `t - left ..= t + right`, each clamped into
/// `0..rows`, offset by `base`.
pub fn splice_indices(base: usize, rows: usize, left: usize, right: usize) -> Vec<usize> {
    let width = left + right + 1;
    let mut idx = Vec::with_capacity(rows * width);
    for t in 0..rows {
        for k in 0..width {
            let src = (t + k).saturating_sub(left).min(rows - 1);
            idx.push(base + src);
        }
    }
    idx
}

/// Concatenates each frame with its `left` predecessors and `right` successors.
///
/// Out-of-range neighbours replicate the nearest edge frame, so the output has
/// as many rows as the input and `F * (left + right + 1)` columns.
pub fn splice_context(x: &Tensor2, left: usize, right: usize) -> Result<Tensor2> {
    if x.rows() == 0 {
        return Err(Error::invalid("splice_context: empty input"));
    }
    let width = left + right + 1;
    let f = x.cols();
    let idx = splice_indices(0, x.rows(), left, right);
    let mut out = Tensor2::zeros(x.rows(), f * width);
    for t in 0..x.rows() {
        let dst = out.row_mut(t);
        for k in 0..width {
            dst[k * f..(k + 1) * f].copy_from_slice(x.row(idx[t * width + k]));
        }
    }
    Ok(out)
}

/// Half-open frame range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlap(&self, other: &Span) -> usize {
        self.end.min(other.end).saturating_sub(self.start.max(other.start))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowPlan {
    pub window_len: usize,
    pub hop: usize,
    pub spans: Vec<Span>,
}

/// Fixed-length windows over `total` frames.
///
/// Windows start at multiples of `hop` while they fit; if the last one does
/// not end at `total`, a final window anchored at `total - window_len` is
/// added. Inputs shorter than one window produce a single `[0, total)` span.
pub fn slide_windows(total: usize, window_len: usize, hop: usize) -> Result<WindowPlan> {
    if total == 0 {
        return Err(Error::invalid("slide_windows: no frames"));
    }
    if hop == 0 || window_len < hop {
        return Err(Error::invalid(format!(
            "slide_windows: need window_len >= hop >= 1, got {window_len} and {hop}"
        )));
    }
    let mut spans = Vec::new();
    if total < window_len {
        spans.push(Span::new(0, total));
    } else {
        let mut start = 0;
        while start + window_len <= total {
            spans.push(Span::new(start, start + window_len));
            start += hop;
        }
        if spans.last().map(|s| s.end) != Some(total) {
            spans.push(Span::new(total - window_len, total));
        }
    }
    Ok(WindowPlan {
        window_len,
        hop,
        spans,
    })
}

pub fn frames_to_seconds(frames: usize, period: f64) -> f64 {
    frames as f64 * period
}

/// Nearest frame index for a time; exact halves round toward the later frame.
pub fn seconds_to_frames(seconds: f64, period: f64) -> Result<usize> {
    if !(period > 0.0) {
        return Err(Error::invalid(format!("frame period must be > 0, got {period}")));
    }
    if seconds < 0.0 || !seconds.is_finite() {
        return Err(Error::invalid(format!("time must be finite and >= 0, got {seconds}")));
    }
    // The tolerance absorbs representation error, e.g. 0.015 / 0.010 = 1.4999999999999998.
    Ok((seconds / period + 0.5 + 1e-9).floor() as usize)
}

const FEAT_MAGIC: &[u8; 8] = b"CDFEAT\0\0";
const FEAT_VERSION: u32 = 1;

/// Writes `magic, version, T, F, frame_period` followed by little-endian frames.
pub fn write_features(path: &Path, x: &FrameMatrix) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + x.frames.len() * 8);
    buf.extend_from_slice(FEAT_MAGIC);
    buf.extend_from_slice(&FEAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(x.num_frames() as u64).to_le_bytes());
    buf.extend_from_slice(&(x.dim() as u64).to_le_bytes());
    buf.extend_from_slice(&x.frame_period.to_le_bytes());
    for v in x.frames.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FrameMatrix> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::invalid(format!("{}: {msg}", path.display()));
    if buf.len() < 36 || &buf[..8] != FEAT_MAGIC {
        return Err(bad("not a feature file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    if u32_at(8) != FEAT_VERSION {
        return Err(bad("unsupported feature file version"));
    }
    let t = u64_at(12) as usize;
    let f = u64_at(20) as usize;
    let period = f64::from_bits(u64_at(28));
    if buf.len() != 36 + t * f * 8 {
        return Err(bad("truncated frame data"));
    }
    let data = buf[36..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FrameMatrix::new(Tensor2::from_vec(t, f, data)?, period)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> Tensor2 {
        Tensor2::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn splice_single_frame_replicates() {
        let x = Tensor2::row_vector(&[1.0, 2.0]);
        let s = splice_context(&x, 1, 1).unwrap();
        assert_eq!(s.row(0), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn splice_left_only_enumeration() {
        let s = splice_context(&column(&[10.0, 11.0, 12.0]), 1, 0).unwrap();
        assert_eq!(s.row(0), &[10.0, 10.0]);
        assert_eq!(s.row(1), &[10.0, 11.0]);
        assert_eq!(s.row(2), &[11.0, 12.0]);
    }

    #[test]
    fn splice_width_for_tdnn_context() {
        let s = splice_context(&Tensor2::zeros(5, 40), 7, 7).unwrap();
        assert_eq!(s.shape(), (5, 600));
        assert!(splice_context(&Tensor2::zeros(0, 40), 7, 7).is_err());
    }

    #[test]
    fn window_enumeration() {
        let starts = |t, w, h| -> Vec<usize> {
            slide_windows(t, w, h).unwrap().spans.iter().map(|s| s.start).collect()
        };
        assert_eq!(starts(500, 200, 100), vec![0, 100, 200, 300]);
        assert_eq!(starts(450, 200, 100), vec![0, 100, 200, 250]);
        assert_eq!(slide_windows(150, 200, 100).unwrap().spans, vec![Span::new(0, 150)]);
        assert!(slide_windows(0, 200, 100).is_err());
        assert!(slide_windows(10, 50, 100).is_err());
    }

    #[test]
    fn time_conversions() {
        assert!((frames_to_seconds(200, 0.010) - 2.0).abs() < 1e-12);
        assert_eq!(frames_to_seconds(0, 0.010), 0.0);
        assert_eq!(seconds_to_frames(0.015, 0.010).unwrap(), 2);
        assert_eq!(seconds_to_frames(0.014, 0.010).unwrap(), 1);
        assert!(seconds_to_frames(-0.1, 0.010).is_err());
    }

    #[test]
    fn feature_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.feat");
        let x = FrameMatrix::new(
            Tensor2::from_vec(2, 3, vec![0.1, -2.0, 3.5, 1e-300, 7.0, -0.0]).unwrap(),
            0.01,
        )
        .unwrap();
        write_features(&p, &x).unwrap();
        let y = read_features(&p).unwrap();
        assert_eq!(x.frames().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   y.frames().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(y.frame_period(), 0.01);
    }

    proptest! {
        #[test]
        fn splice_keeps_rows_and_centre(t in 1usize..20, f in 1usize..4, left in 0usize..5, right in 0usize..5) {
            let x = Tensor2::from_vec(t, f, (0..t * f).map(|v| v as f64).collect()).unwrap();
            let s = splice_context(&x, left, right).unwrap();
            prop_assert_eq!(s.rows(), t);
            for r in 0..t {
                prop_assert_eq!(&s.row(r)[left * f..(left + 1) * f], x.row(r));
            }
        }

        #[test]
        fn windows_cover_everything(t in 1usize..2000, hop in 1usize..150, extra in 0usize..150) {
            let w = hop + extra;
            let plan = slide_windows(t, w, hop).unwrap();
            let mut covered = vec![false; t];
            for s in &plan.spans {
                for c in &mut covered[s.start..s.end] { *c = true; }
            }
            prop_assert!(covered.iter().all(|&c| c));
            for pair in plan.spans.windows(2) {
                prop_assert!(pair[0].start < pair[1].start);
            }
            let n = plan.spans.len();
            for (i, pair) in plan.spans.windows(2).enumerate() {
                if i + 2 < n {
                    prop_assert_eq!(pair[0].end - pair[1].start, w - hop);
                }
            }
        }

        #[test]
        fn seconds_round_trip_within_half_period(s in 0.0f64..1000.0) {
            let back = frames_to_seconds(seconds_to_frames(s, 0.01).unwrap(), 0.01);
            prop_assert!((back - s).abs() <= 0.005 + 1e-12);
        }
    }
}
