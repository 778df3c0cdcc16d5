//! Versioned text checkpoints.
//!
//! ```text
//! ndiff-checkpoint 1
//! meta <key> <value...>
//! tensor <name> <rows> <cols>
//! <row-major values separated by spaces>
//! ```
//!
//! Values are written with the shortest representation that parses back to
//! the same `f64`, so a save/load round trip is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::Tensor2;
use crate::error::{Error, Result};

const MAGIC: &str = "ndiff-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor2)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor2> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Tensors whose name starts with `prefix`, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, Tensor2)> {
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::invalid(format!("checkpoint lacks meta key {key}")))?;
        v.parse()
            .map_err(|_| Error::invalid(format!("checkpoint meta {key}={v} is not an integer")))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in &self.tensors {
            let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
            let mut first = true;
            for v in t.data() {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "empty checkpoint".into() })?;
        let mut h = header.split_whitespace();
        if h.next() != Some(MAGIC) {
            return Err(Error::Parse { line: 1, msg: format!("expected {MAGIC} header") });
        }
        match h.next().and_then(|v| v.parse::<u32>().ok()) {
            Some(VERSION) => {}
            other => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("unsupported checkpoint version {other:?}"),
                })
            }
        }
        let mut ck = Checkpoint::default();
        while let Some((n, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, ' ');
            match parts.next() {
                Some("meta") => {
                    let rest = parts.next().unwrap_or("");
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ck.meta.insert(k.to_string(), v.to_string());
                }
                Some("tensor") => {
                    let f: Vec<&str> = parts.next().unwrap_or("").split_whitespace().collect();
                    let bad = || Error::Parse { line: n, msg: "malformed tensor header".into() };
                    if f.len() != 3 {
                        return Err(bad());
                    }
                    let rows: usize = f[1].parse().map_err(|_| bad())?;
                    let cols: usize = f[2].parse().map_err(|_| bad())?;
                    let (vn, values) = lines.next().ok_or(Error::Parse {
                        line: n + 1,
                        msg: "missing tensor values".into(),
                    })?;
                    let data = values
                        .split_whitespace()
                        .map(|v| v.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::Parse { line: vn, msg: e.to_string() })?;
                    let t = Tensor2::from_vec(rows, cols, data)
                        .map_err(|e| Error::Parse { line: vn, msg: e.to_string() })?;
                    ck.tensors.push((f[0].to_string(), t));
                }
                _ => {
                    return Err(Error::Parse { line: n, msg: format!("unexpected record {line:?}") })
                }
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
