//! Trace files.
//!
//! ```text
//! magic "HWGN2TRC", version u8, n_traces u32, n_samples u32,
//! population u8, n_traces x n_samples f32          (little-endian)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::{LeakageError, Population, TraceSet};

pub const TRACE_MAGIC: &[u8; 8] = b"HWGN2TRC";
pub const TRACE_VERSION: u8 = 1;
const HEADER: u64 = 18;

/// Streams rows to a trace file; the trace count is patched on finish.
pub struct TraceWriter {
    out: BufWriter<File>,
    n_samples: usize,
    n_traces: u32,
}

impl TraceWriter {
    pub fn create(path: &Path, population: Population, n_samples: usize) -> Result<TraceWriter, LeakageError> {
        let n = u32::try_from(n_samples).map_err(|_| LeakageError::Shape(format!("{n_samples} samples")))?;
        let mut out = BufWriter::with_capacity(1 << 20, File::create(path)?);
        out.write_all(TRACE_MAGIC)?;
        out.write_all(&[TRACE_VERSION])?;
        out.write_all(&0u32.to_le_bytes())?;
        out.write_all(&n.to_le_bytes())?;
        out.write_all(&[population.tag()])?;
        Ok(TraceWriter {
            out,
            n_samples,
            n_traces: 0,
        })
    }

    pub fn push(&mut self, row: &[f32]) -> Result<(), LeakageError> {
        if row.len() != self.n_samples {
            return Err(LeakageError::Shape(format!("row of {} samples, file has {}", row.len(), self.n_samples)));
        }
        self.n_traces = self
            .n_traces
            .checked_add(1)
            .ok_or_else(|| LeakageError::Shape("more than 2^32 traces".into()))?;
        let mut buf = Vec::with_capacity(4 * row.len());
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out.write_all(&buf)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u32, LeakageError> {
        self.out.flush()?;
        let f = self.out.get_mut();
        f.seek(SeekFrom::Start(9))?;
        f.write_all(&self.n_traces.to_le_bytes())?;
        f.flush()?;
        Ok(self.n_traces)
    }
}

pub fn export_traces(set: &TraceSet, path: &Path) -> Result<(), LeakageError> {
    let mut w = TraceWriter::create(path, set.population, set.n_samples)?;
    for row in set.traces() {
        w.push(row)?;
    }
    w.finish()?;
    Ok(())
}

pub fn import_traces(path: &Path) -> Result<TraceSet, LeakageError> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    let mut r = BufReader::with_capacity(1 << 20, file);
    let header_err = |offset, message: &str| LeakageError::Header {
        offset,
        message: message.into(),
    };
    if len < HEADER {
        return Err(LeakageError::Truncated { offset: len, expected: HEADER });
    }
    let mut h = [0u8; HEADER as usize];
    r.read_exact(&mut h)?;
    if &h[..8] != TRACE_MAGIC {
        return Err(header_err(0, "bad magic"));
    }
    if h[8] != TRACE_VERSION {
        return Err(header_err(8, &format!("version {}, expected {TRACE_VERSION}", h[8])));
    }
    let n_traces = u32::from_le_bytes(h[9..13].try_into().unwrap()) as u64;
    let n_samples = u32::from_le_bytes(h[13..17].try_into().unwrap()) as u64;
    let population = Population::from_tag(h[17]).ok_or_else(|| header_err(17, &format!("population tag {}", h[17])))?;
    let expected = HEADER + 4 * n_traces * n_samples;
    if len < expected {
        return Err(LeakageError::Truncated { offset: len, expected });
    }
    if len > expected {
        return Err(header_err(9, &format!("{len} bytes on disk, header describes {expected}")));
    }
    let mut raw = vec![0u8; (expected - HEADER) as usize];
    r.read_exact(&mut raw)?;
    let mut set = TraceSet::new(population, n_samples as usize);
    set.data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if let Some(i) = set.data.iter().position(|v| !v.is_finite()) {
        return Err(LeakageError::Shape(format!("value at byte {} is not finite", HEADER + 4 * i as u64)));
    }
    Ok(set)
}
