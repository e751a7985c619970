//! Time-tag file format, little-endian throughout:
//!
//! ```text
//! "TTAG" | version u16 | repetition_rate_hz f64 | n_channels u8 |
//! metadata_len u32 | metadata (UTF-8 JSON) |
//! records: { pulse_index u64, channel u8, time_offset_ps i64 } ...
//! ```
//!
//! Records are packed (17 bytes) in nondecreasing pulse-index order. The
//! metadata carries `n_pulses`, since pulses without tags leave no record.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TTAG";
pub const VERSION: u16 = 1;
const RECORD_LEN: usize = 17;
const MAX_METADATA: u32 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Channel {
    Signal = 0,
    Idler = 1,
}

impl Channel {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeTagRecord {
    pub pulse_index: u64,
    pub channel: Channel,
    /// Arrival time relative to the pulse trigger (ps).
    pub time_offset_ps: i64,
}

impl TimeTagRecord {
    pub fn time(&self) -> f64 {
        self.time_offset_ps as f64 * 1e-12
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut b = [0u8; RECORD_LEN];
        b[..8].copy_from_slice(&self.pulse_index.to_le_bytes());
        b[8] = self.channel as u8;
        b[9..].copy_from_slice(&self.time_offset_ps.to_le_bytes());
        w.write_all(&b)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagHeader {
    pub version: u16,
    pub repetition_rate: f64,
    pub n_channels: u8,
    pub metadata: serde_json::Value,
}

impl TagHeader {
    /// Number of pulses in the run, from the metadata.
    pub fn n_pulses(&self) -> Option<u64> {
        self.metadata.get("n_pulses").and_then(|v| v.as_u64())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&self.repetition_rate.to_le_bytes())?;
        w.write_all(&[self.n_channels])?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        fill(r, &mut magic, "header")?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, not a time-tag file".into()));
        }
        let mut b2 = [0u8; 2];
        fill(r, &mut b2, "header")?;
        let version = u16::from_le_bytes(b2);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported time-tag version {version}")));
        }
        let mut b8 = [0u8; 8];
        fill(r, &mut b8, "header")?;
        let repetition_rate = f64::from_le_bytes(b8);
        let mut b1 = [0u8; 1];
        fill(r, &mut b1, "header")?;
        let mut b4 = [0u8; 4];
        fill(r, &mut b4, "header")?;
        let len = u32::from_le_bytes(b4);
        if len > MAX_METADATA {
            return Err(Error::Format(format!("metadata length {len} is implausible")));
        }
        let mut meta = vec![0u8; len as usize];
        fill(r, &mut meta, "metadata")?;
        let metadata = if meta.is_empty() {
            serde_json::Value::Null
        } else {
            serde_json::from_slice(&meta).map_err(|e| Error::Format(format!("metadata: {e}")))?
        };
        Ok(Self {
            version,
            repetition_rate,
            n_channels: b1[0],
            metadata,
        })
    }
}

/// Fills `buf` completely; an early end of input is a truncation error.
fn fill<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated(format!("input ends inside the {what}")),
        _ => Error::Io(e),
    })
}

/// In-memory run.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTagStream {
    pub header: TagHeader,
    pub records: Vec<TimeTagRecord>,
}

impl TimeTagStream {
    pub fn n_pulses(&self) -> u64 {
        self.header
            .n_pulses()
            .unwrap_or_else(|| self.records.last().map_or(0, |r| r.pulse_index + 1))
    }

    /// Records grouped by pulse, in order.
    pub fn pulses(&self) -> impl Iterator<Item = &[TimeTagRecord]> {
        self.records.chunk_by(|a, b| a.pulse_index == b.pulse_index)
    }
}

pub fn write_stream<W: Write>(stream: &TimeTagStream, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    stream.header.write_to(&mut w)?;
    for r in &stream.records {
        r.write_to(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stream<R: Read>(r: R) -> Result<TimeTagStream> {
    let reader = TagReader::new(r)?;
    let header = reader.header().clone();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok(TimeTagStream { header, records })
}

/// Single-pass streaming reader that validates record order.
pub struct TagReader<R: Read> {
    inner: R,
    header: TagHeader,
    index: u64,
    previous: Option<u64>,
    failed: bool,
}

impl TagReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::with_capacity(1 << 16, File::open(path)?))
    }
}

impl<R: Read> TagReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let header = TagHeader::read_from(&mut inner)?;
        Ok(Self {
            inner,
            header,
            index: 0,
            previous: None,
            failed: false,
        })
    }

    pub fn header(&self) -> &TagHeader {
        &self.header
    }

    /// Groups consecutive records of the same pulse.
    pub fn pulses(self) -> PulseGroups<Self> {
        PulseGroups {
            inner: self,
            pending: None,
        }
    }

    fn next_record(&mut self) -> Result<Option<TimeTagRecord>> {
        let mut b = [0u8; RECORD_LEN];
        let mut got = 0;
        while got < RECORD_LEN {
            match self.inner.read(&mut b[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        if got == 0 {
            return Ok(None);
        }
        if got < RECORD_LEN {
            return Err(Error::Truncated(format!(
                "record {} has {got} of {RECORD_LEN} bytes",
                self.index
            )));
        }
        let pulse_index = u64::from_le_bytes(b[..8].try_into().expect("8 bytes"));
        let channel = match b[8] {
            0 => Channel::Signal,
            1 => Channel::Idler,
            c => {
                return Err(Error::Format(format!("record {} has unknown channel {c}", self.index)))
            }
        };
        if b[8] >= self.header.n_channels {
            return Err(Error::Format(format!(
                "record {} uses channel {} but the header declares {}",
                self.index, b[8], self.header.n_channels
            )));
        }
        let time_offset_ps = i64::from_le_bytes(b[9..].try_into().expect("8 bytes"));
        if let Some(prev) = self.previous {
            if pulse_index < prev {
                return Err(Error::Ordering {
                    index: self.index,
                    pulse: pulse_index,
                    previous: prev,
                });
            }
        }
        self.previous = Some(pulse_index);
        self.index += 1;
        Ok(Some(TimeTagRecord {
            pulse_index,
            channel,
            time_offset_ps,
        }))
    }
}

impl<R: Read> Iterator for TagReader<R> {
    type Item = Result<TimeTagRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.next_record() {
            Ok(r) => r.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Iterator adapter yielding `(pulse_index, records)` per pulse.
pub struct PulseGroups<I> {
    inner: I,
    pending: Option<TimeTagRecord>,
}

impl<I> PulseGroups<I> {
    pub fn new(inner: I) -> Self {
        Self { inner, pending: None }
    }
}

impl<I: Iterator<Item = Result<TimeTagRecord>>> Iterator for PulseGroups<I> {
    type Item = Result<(u64, Vec<TimeTagRecord>)>;

    fn next(&mut self) -> Option<Self::Item> {
        let first = match self.pending.take() {
            Some(r) => r,
            None => match self.inner.next()? {
                Ok(r) => r,
                Err(e) => return Some(Err(e)),
            },
        };
        let mut group = vec![first];
        loop {
            match self.inner.next() {
                None => break,
                Some(Err(e)) => return Some(Err(e)),
                Some(Ok(r)) if r.pulse_index == first.pulse_index => group.push(r),
                Some(Ok(r)) => {
                    self.pending = Some(r);
                    break;
                }
            }
        }
        Some(Ok((first.pulse_index, group)))
    }
}
