//! Payload layouts. All integers little-endian.
//!
//! ```text
//! HELLO      version u8, mode u8, k u32, security u8, s u32, profile u8, hiding u8
//! PHI_META   T u64, dmem u32, mult u8, inputs u32, outputs u32, gates u32,
//!            nonfree u32, input (base u32, count u32), output (base u32, count u32)
//! COMMIT     s u32, s x digest[32]
//! CHALLENGE  s u32, s x u8 (1 = opened)
//! OPEN_SEED  c u32, c x (copy u32, seed[32])
//! INIT       e u32, n u32, e x n x label[16]
//! BATCH      step u64, e u32, e x (nonfree x rows[48], 32 x label[16])
//! YBACK      batch u32
//! DECODE     e u32, bits u32, e x bits x (h0[16], h1[16])
//! OUTPUT     n u32, n x u32
//! VERDICT    code u8 (0 ok, 1 cheat), copy u32
//! ```

use super::channel::{PayloadReader, PayloadWriter, Tag, PROTOCOL_VERSION};
use super::engine::{INSTR_BITS, ROW_BYTES};
use super::{Mode, SessionError, Security, SideInfo, Verdict};
use crate::ot::OtProfile;

pub type Entry = ([u8; 16], [u8; 16]);

pub const HELLO_LEN: usize = 13;
pub const PHI_LEN: usize = 45;
pub const YBACK_LEN: usize = 4;
pub const VERDICT_LEN: usize = 5;

pub fn commit_len(s: usize) -> usize {
    4 + 32 * s
}
pub fn challenge_len(s: usize) -> usize {
    4 + s
}
pub fn open_len(c: usize) -> usize {
    4 + 36 * c
}
pub fn init_len(e: usize, n: usize) -> usize {
    8 + 16 * e * n
}
pub fn batch_len(e: usize, nonfree: usize) -> usize {
    12 + e * (nonfree * ROW_BYTES + 16 * INSTR_BITS)
}
pub fn decode_len(e: usize, bits: usize) -> usize {
    8 + 32 * e * bits
}
pub fn output_len(n: usize) -> usize {
    4 + 4 * n
}

fn malformed(tag: Tag, frame: u64, message: impl Into<String>) -> SessionError {
    SessionError::Protocol {
        frame,
        message: format!("{tag}: {}", message.into()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hello {
    pub version: u8,
    pub mode: Mode,
    pub security: Security,
    pub profile: OtProfile,
    pub hiding: bool,
}

impl Hello {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = PayloadWriter::with_capacity(HELLO_LEN);
        w.u8(self.version);
        match self.mode {
            Mode::Stream(k) => w.u8(0).u32(k),
            Mode::Full => w.u8(1).u32(0),
        };
        match self.security {
            Security::Hbc => w.u8(0).u32(1),
            Security::Malicious(s) => w.u8(1).u32(s),
        };
        w.u8(self.profile.code()).u8(self.hiding as u8);
        w.buf
    }

    pub fn decode(b: &[u8], frame: u64) -> Result<Hello, SessionError> {
        let mut r = PayloadReader::new(b, Tag::Hello, frame);
        let version = r.u8()?;
        if version != PROTOCOL_VERSION {
            return Err(SessionError::Mismatch(format!(
                "protocol version {version}, expected {PROTOCOL_VERSION}"
            )));
        }
        let mode = match (r.u8()?, r.u32()?) {
            (0, k) if k >= 1 => Mode::Stream(k),
            (1, _) => Mode::Full,
            (m, k) => return Err(malformed(Tag::Hello, frame, format!("bad mode {m}/{k}"))),
        };
        let security = match (r.u8()?, r.u32()?) {
            (0, _) => Security::Hbc,
            (1, s) if s >= 1 => Security::Malicious(s),
            (m, s) => return Err(malformed(Tag::Hello, frame, format!("bad security {m}/{s}"))),
        };
        let p = r.u8()?;
        let profile = OtProfile::from_code(p).ok_or_else(|| malformed(Tag::Hello, frame, format!("bad profile {p}")))?;
        let hiding = match r.u8()? {
            0 => false,
            1 => true,
            h => return Err(malformed(Tag::Hello, frame, format!("bad hiding flag {h}"))),
        };
        r.finish()?;
        Ok(Hello {
            version,
            mode,
            security,
            profile,
            hiding,
        })
    }
}

pub fn encode_phi(s: &SideInfo) -> Vec<u8> {
    let mut w = PayloadWriter::with_capacity(PHI_LEN);
    w.u64(s.step_count)
        .u32(s.dmem_words)
        .u8(s.include_mult as u8)
        .u32(s.netlist_inputs as u32)
        .u32(s.netlist_outputs as u32)
        .u32(s.netlist_gates as u32)
        .u32(s.netlist_nonfree as u32)
        .u32(s.input_region.0)
        .u32(s.input_region.1)
        .u32(s.output_region.0)
        .u32(s.output_region.1);
    w.buf
}

pub fn decode_phi(b: &[u8], frame: u64) -> Result<SideInfo, SessionError> {
    let mut r = PayloadReader::new(b, Tag::PhiMeta, frame);
    let s = SideInfo {
        step_count: r.u64()?,
        dmem_words: r.u32()?,
        include_mult: r.u8()? != 0,
        netlist_inputs: r.u32()? as u64,
        netlist_outputs: r.u32()? as u64,
        netlist_gates: r.u32()? as u64,
        netlist_nonfree: r.u32()? as u64,
        input_region: (r.u32()?, r.u32()?),
        output_region: (r.u32()?, r.u32()?),
    };
    r.finish()?;
    Ok(s)
}

pub fn encode_commit(d: &[[u8; 32]]) -> Vec<u8> {
    let mut w = PayloadWriter::with_capacity(commit_len(d.len()));
    w.u32(d.len() as u32);
    for x in d {
        w.bytes(x);
    }
    w.buf
}

pub fn decode_commit(b: &[u8], s: u32, frame: u64) -> Result<Vec<[u8; 32]>, SessionError> {
    let mut r = PayloadReader::new(b, Tag::Commit, frame);
    let n = r.u32()?;
    if n != s {
        return Err(malformed(Tag::Commit, frame, format!("{n} commitments for {s} copies")));
    }
    let d = (0..n)
        .map(|_| Ok(r.take(32)?.try_into().unwrap()))
        .collect::<Result<_, SessionError>>()?;
    r.finish()?;
    Ok(d)
}

pub fn encode_challenge(check: &[bool]) -> Vec<u8> {
    let mut w = PayloadWriter::with_capacity(challenge_len(check.len()));
    w.u32(check.len() as u32);
    for &c in check {
        w.u8(c as u8);
    }
    w.buf
}

pub fn decode_challenge(b: &[u8], s: u32, checked: u32, frame: u64) -> Result<Vec<bool>, SessionError> {
    let mut r = PayloadReader::new(b, Tag::Challenge, frame);
    if r.u32()? != s {
        return Err(malformed(Tag::Challenge, frame, "wrong copy count"));
    }
    let check = (0..s)
        .map(|_| match r.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(malformed(Tag::Challenge, frame, format!("bad flag {v}"))),
        })
        .collect::<Result<Vec<bool>, _>>()?;
    r.finish()?;
    let n = check.iter().filter(|&&c| c).count() as u32;
    if n != checked {
        return Err(malformed(Tag::Challenge, frame, format!("{n} copies opened, {checked} expected")));
    }
    Ok(check)
}

pub fn encode_open(seeds: &[(u32, [u8; 32])]) -> Vec<u8> {
    let mut w = PayloadWriter::with_capacity(open_len(seeds.len()));
    w.u32(seeds.len() as u32);
    for (i, s) in seeds {
        w.u32(*i).bytes(s);
    }
    w.buf
}

pub fn decode_open(b: &[u8], frame: u64) -> Result<Vec<(u32, [u8; 32])>, SessionError> {
    let mut r = PayloadReader::new(b, Tag::OpenSeed, frame);
    let n = r.u32()?;
    let v = (0..n)
        .map(|_| Ok((r.u32()?, r.take(32)?.try_into().unwrap())))
        .collect::<Result<_, SessionError>>()?;
    r.finish()?;
    Ok(v)
}

pub fn encode_init(copies: &[Vec<u128>]) -> Vec<u8> {
    let n = copies.first().map_or(0, Vec::len);
    let mut w = PayloadWriter::with_capacity(init_len(copies.len(), n));
    w.u32(copies.len() as u32).u32(n as u32);
    for c in copies {
        for &l in c {
            w.u128(l);
        }
    }
    w.buf
}

pub fn decode_init(b: &[u8], e: usize, n: usize, frame: u64) -> Result<Vec<Vec<u128>>, SessionError> {
    let mut r = PayloadReader::new(b, Tag::Init, frame);
    let (ge, gn) = (r.u32()? as usize, r.u32()? as usize);
    if (ge, gn) != (e, n) {
        return Err(malformed(Tag::Init, frame, format!("{ge}x{gn} labels, expected {e}x{n}")));
    }
    let v = (0..e)
        .map(|_| (0..n).map(|_| r.u128()).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(v)
}

pub fn batch_header(out: &mut Vec<u8>, step: u64, e: usize) {
    out.extend_from_slice(&step.to_le_bytes());
    out.extend_from_slice(&(e as u32).to_le_bytes());
}

/// Splits a BATCH payload into per-copy `(rows, labels)`.
pub fn split_batch(
    b: &[u8],
    step: u64,
    e: usize,
    nonfree: usize,
    frame: u64,
) -> Result<Vec<(&[u8], [u128; INSTR_BITS])>, SessionError> {
    if b.len() != batch_len(e, nonfree) {
        return Err(malformed(
            Tag::Batch,
            frame,
            format!("{} bytes, expected {}", b.len(), batch_len(e, nonfree)),
        ));
    }
    let mut r = PayloadReader::new(b, Tag::Batch, frame);
    let (got_step, got_e) = (r.u64()?, r.u32()? as usize);
    if got_step != step || got_e != e {
        return Err(malformed(
            Tag::Batch,
            frame,
            format!("step {got_step} with {got_e} copies, expected step {step} with {e}"),
        ));
    }
    (0..e)
        .map(|_| {
            let rows = r.take(nonfree * ROW_BYTES)?;
            let mut labels = [0u128; INSTR_BITS];
            for l in labels.iter_mut() {
                *l = r.u128()?;
            }
            Ok((rows, labels))
        })
        .collect()
}

pub fn encode_u32(v: u32) -> Vec<u8> {
    v.to_le_bytes().to_vec()
}

pub fn decode_u32(b: &[u8], tag: Tag, frame: u64) -> Result<u32, SessionError> {
    let mut r = PayloadReader::new(b, tag, frame);
    let v = r.u32()?;
    r.finish()?;
    Ok(v)
}

pub fn encode_decode(copies: &[Vec<Entry>]) -> Vec<u8> {
    let bits = copies.first().map_or(0, Vec::len);
    let mut w = PayloadWriter::with_capacity(decode_len(copies.len(), bits));
    w.u32(copies.len() as u32).u32(bits as u32);
    for c in copies {
        for (a, b) in c {
            w.bytes(a).bytes(b);
        }
    }
    w.buf
}

pub fn decode_decode(b: &[u8], e: usize, bits: usize, frame: u64) -> Result<Vec<Vec<Entry>>, SessionError> {
    let mut r = PayloadReader::new(b, Tag::Decode, frame);
    let (ge, gb) = (r.u32()? as usize, r.u32()? as usize);
    if (ge, gb) != (e, bits) {
        return Err(malformed(Tag::Decode, frame, format!("{ge}x{gb} entries, expected {e}x{bits}")));
    }
    let v = (0..e)
        .map(|_| {
            (0..bits)
                .map(|_| Ok((r.take(16)?.try_into().unwrap(), r.take(16)?.try_into().unwrap())))
                .collect::<Result<Vec<Entry>, SessionError>>()
        })
        .collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(v)
}

pub fn encode_words(words: &[u32]) -> Vec<u8> {
    let mut w = PayloadWriter::with_capacity(output_len(words.len()));
    w.u32(words.len() as u32);
    for &x in words {
        w.u32(x);
    }
    w.buf
}

pub fn decode_words(b: &[u8], frame: u64) -> Result<Vec<u32>, SessionError> {
    let mut r = PayloadReader::new(b, Tag::Output, frame);
    let n = r.u32()?;
    let v = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(v)
}

pub fn encode_verdict(v: Verdict) -> Vec<u8> {
    let mut w = PayloadWriter::with_capacity(VERDICT_LEN);
    match v {
        Verdict::Ok => w.u8(0).u32(0),
        Verdict::Cheat { copy } => w.u8(1).u32(copy),
    };
    w.buf
}

pub fn decode_verdict(b: &[u8], frame: u64) -> Result<Verdict, SessionError> {
    let mut r = PayloadReader::new(b, Tag::Verdict, frame);
    let v = match (r.u8()?, r.u32()?) {
        (0, _) => Verdict::Ok,
        (1, copy) => Verdict::Cheat { copy },
        (c, _) => return Err(malformed(Tag::Verdict, frame, format!("bad code {c}"))),
    };
    r.finish()?;
    Ok(v)
}
