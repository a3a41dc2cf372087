//! Append-only record of everything that crossed the wire.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::wire::{Frame, TigMessage, WireMessage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dir {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptEntry {
    pub time: f64,
    pub dir: Dir,
    pub variant: &'static str,
    pub party: u32,
    pub sample: u32,
    pub seq: u32,
    /// Length of each vector carried by the frame.
    #[serde(skip)]
    pub width: usize,
    pub payload: Vec<f64>,
    pub bytes: usize,
}

/// Byte counters plus, optionally, every entry.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
    keep: bool,
    bytes_up: u64,
    bytes_down: u64,
    frames: u64,
}

impl Transcript {
    /// A transcript that keeps every entry.
    pub fn recording() -> Self {
        Self { keep: true, ..Self::default() }
    }

    /// A transcript that only counts bytes.
    pub fn counting() -> Self {
        Self::default()
    }

    pub fn is_recording(&self) -> bool {
        self.keep
    }

    fn push_frame(&mut self, time: f64, dir: Dir, variant: &'static str, frame: Frame) -> Result<usize> {
        let bytes = frame.encode()?.len();
        match dir {
            Dir::Up => self.bytes_up += bytes as u64,
            Dir::Down => self.bytes_down += bytes as u64,
        }
        self.frames += 1;
        if self.keep {
            self.entries.push(TranscriptEntry {
                time,
                dir,
                variant,
                party: frame.party,
                sample: frame.sample,
                seq: frame.seq,
                width: frame.width as usize,
                payload: frame.payload,
                bytes,
            });
        }
        Ok(bytes)
    }

    /// Records a message and returns its encoded size.
    pub fn log(&mut self, time: f64, dir: Dir, msg: &WireMessage) -> Result<usize> {
        self.push_frame(time, dir, msg.name(), msg.to_frame()?)
    }

    pub fn log_tig(&mut self, time: f64, dir: Dir, msg: &TigMessage) -> Result<usize> {
        self.push_frame(time, dir, msg.name(), msg.to_frame()?)
    }

    /// Appends an arbitrary entry; used to build adversarial transcripts.
    pub fn push_raw(&mut self, entry: TranscriptEntry) {
        match entry.dir {
            Dir::Up => self.bytes_up += entry.bytes as u64,
            Dir::Down => self.bytes_down += entry.bytes as u64,
        }
        self.frames += 1;
        if self.keep {
            self.entries.push(entry);
        }
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.frames as usize
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn bytes_up(&self) -> u64 {
        self.bytes_up
    }

    pub fn bytes_down(&self) -> u64 {
        self.bytes_down
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_up + self.bytes_down
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads what `write_jsonl` wrote. Widths are recovered from each
    /// variant's layout.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut t = Self::recording();
        for (k, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Usage(format!("transcript line {}: {e}", k + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawEntry =
                serde_json::from_str(&line).map_err(|e| Error::Usage(format!("transcript line {}: {e}", k + 1)))?;
            let len = raw.payload.len();
            let (variant, width) = match raw.variant.as_str() {
                "upload" if len.is_multiple_of(2) => ("upload", len / 2),
                "reply" => ("reply", 1),
                "query" => ("query", 0),
                "refresh" => ("refresh", len),
                "tig_upload" => ("tig_upload", len),
                "tig_reply" if len >= 1 => ("tig_reply", len - 1),
                other => {
                    return Err(Error::Usage(format!(
                        "transcript line {}: variant `{other}` with {len} values is not a known layout",
                        k + 1
                    )))
                }
            };
            t.push_raw(TranscriptEntry {
                time: raw.time,
                dir: raw.dir,
                variant,
                party: raw.party,
                sample: raw.sample,
                seq: raw.seq,
                width,
                payload: raw.payload,
                bytes: raw.bytes,
            });
        }
        Ok(t)
    }
}

#[derive(Deserialize)]
struct RawEntry {
    time: f64,
    dir: Dir,
    variant: String,
    party: u32,
    sample: u32,
    seq: u32,
    payload: Vec<f64>,
    bytes: usize,
}

/// Shapes the audit compares payloads against.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditDims {
    /// Output width of each party's local model.
    pub output_dims: Vec<usize>,
    /// Parameter count of each party's local model.
    pub param_dims: Vec<usize>,
    /// Parameter count of the server head.
    pub d0: usize,
}

impl AuditDims {
    pub fn of(models: &crate::models::Composite) -> Self {
        Self { output_dims: models.output_dims(), param_dims: models.param_dims(), d0: models.d0() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditViolation {
    pub entry: usize,
    pub reason: String,
}

impl std::fmt::Display for AuditViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "entry {}: {}", self.entry, self.reason)
    }
}

/// Checks that only function values crossed the wire.
///
/// An entry is flagged when a payload vector is wider than every local
/// output, or when it has the length of a parameter block without being the
/// function-value width expected for that entry.
pub fn audit_transcript(t: &Transcript, dims: &AuditDims) -> std::result::Result<(), AuditViolation> {
    let max_out = dims.output_dims.iter().copied().max().unwrap_or(0);
    for (k, e) in t.entries().iter().enumerate() {
        let expected = match e.variant {
            "reply" => Some(1),
            "query" => Some(0),
            _ => dims.output_dims.get(e.party as usize).copied(),
        };
        if e.width > max_out {
            return Err(AuditViolation {
                entry: k,
                reason: format!("{} payload of length {} exceeds the largest output width {max_out}", e.variant, e.width),
            });
        }
        let param_shaped = dims.param_dims.contains(&e.width) || (dims.d0 > 0 && e.width == dims.d0);
        if param_shaped && expected != Some(e.width) {
            return Err(AuditViolation {
                entry: k,
                reason: format!("{} payload of length {} matches a parameter block", e.variant, e.width),
            });
        }
    }
    Ok(())
}
