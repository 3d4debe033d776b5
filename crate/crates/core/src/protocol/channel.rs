//! Framed, ordered, reliable message channel.
//!
//! A frame is a one-byte tag, a four-byte little-endian payload length and
//! the payload. Two bindings: an in-process loopback pair and TCP.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{channel, Receiver, Sender};

pub const FRAME_HEADER: usize = 5;
pub const PROTOCOL_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Tag {
    Hello = 1,
    PhiMeta = 2,
    Ot1 = 3,
    Ot2 = 4,
    Ot3 = 5,
    Batch = 6,
    Yback = 7,
    Decode = 8,
    Output = 9,
    OpenSeed = 10,
    Verdict = 11,
    Err = 12,
    Commit = 13,
    Challenge = 14,
    Init = 15,
}

impl Tag {
    pub fn from_u8(b: u8) -> Option<Tag> {
        use Tag::*;
        Some(match b {
            1 => Hello,
            2 => PhiMeta,
            3 => Ot1,
            4 => Ot2,
            5 => Ot3,
            6 => Batch,
            7 => Yback,
            8 => Decode,
            9 => Output,
            10 => OpenSeed,
            11 => Verdict,
            12 => Err,
            13 => Commit,
            14 => Challenge,
            15 => Init,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        use Tag::*;
        match self {
            Hello => "HELLO",
            PhiMeta => "PHI_META",
            Ot1 => "OT1",
            Ot2 => "OT2",
            Ot3 => "OT3",
            Batch => "BATCH",
            Yback => "YBACK",
            Decode => "DECODE",
            Output => "OUTPUT",
            OpenSeed => "OPEN_SEED",
            Verdict => "VERDICT",
            Err => "ERR",
            Commit => "COMMIT",
            Challenge => "CHALLENGE",
            Init => "INIT",
        }
    }
}

impl std::fmt::Display for Tag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("peer closed the channel")]
    Closed,
    #[error("unknown frame tag {tag} at frame {frame}")]
    UnknownTag { tag: u8, frame: u64 },
    #[error("expected {expected} at frame {frame}, got {got}")]
    Unexpected { expected: Tag, got: Tag, frame: u64 },
    #[error("malformed {tag} payload at frame {frame}: {message}")]
    Malformed { tag: Tag, frame: u64, message: String },
    #[error("peer aborted: {0}")]
    Remote(String),
    #[error("frame of {0} bytes exceeds the 4 GiB limit")]
    TooLarge(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameRecord {
    pub direction: Direction,
    pub tag: Tag,
    pub len: u32,
    pub digest: [u8; 32],
}

/// Ordered frame log of one endpoint.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SessionTranscript {
    pub frames: Vec<FrameRecord>,
}

impl SessionTranscript {
    /// Tags and lengths only, what an observer of the wire can see.
    pub fn shape(&self) -> Vec<(Direction, Tag, u32)> {
        self.frames.iter().map(|f| (f.direction, f.tag, f.len)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChannelCounters {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
}

/// In-process byte pipe; one end of a loopback pair.
pub struct PipeEnd {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    buf: Vec<u8>,
    pos: usize,
}

impl Read for PipeEnd {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        while self.pos == self.buf.len() {
            match self.rx.recv() {
                Ok(b) => {
                    self.buf = b;
                    self.pos = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

impl Write for PipeEnd {
    fn write(&mut self, b: &[u8]) -> io::Result<usize> {
        self.tx
            .send(b.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "loopback peer dropped"))?;
        Ok(b.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

enum Binding {
    Loopback(PipeEnd),
    Tcp {
        reader: BufReader<TcpStream>,
        writer: BufWriter<TcpStream>,
    },
}

pub struct Channel {
    binding: Binding,
    counters: ChannelCounters,
    transcript: Option<SessionTranscript>,
}

impl Channel {
    pub fn loopback_pair() -> (Channel, Channel) {
        let (ta, rb) = channel();
        let (tb, ra) = channel();
        let end = |tx, rx| Channel::new(Binding::Loopback(PipeEnd { tx, rx, buf: Vec::new(), pos: 0 }));
        (end(ta, ra), end(tb, rb))
    }

    pub fn tcp(stream: TcpStream) -> io::Result<Channel> {
        stream.set_nodelay(true)?;
        let reader = BufReader::with_capacity(1 << 20, stream.try_clone()?);
        let writer = BufWriter::with_capacity(1 << 20, stream);
        Ok(Channel::new(Binding::Tcp { reader, writer }))
    }

    fn new(binding: Binding) -> Channel {
        Channel {
            binding,
            counters: ChannelCounters::default(),
            transcript: None,
        }
    }

    /// Starts logging every frame with a digest of its payload.
    pub fn record_transcript(&mut self) {
        self.transcript.get_or_insert_with(SessionTranscript::default);
    }

    pub fn take_transcript(&mut self) -> Option<SessionTranscript> {
        self.transcript.take()
    }

    pub fn counters(&self) -> ChannelCounters {
        self.counters
    }

    /// Index of the next frame either way, for error positions.
    pub fn position(&self) -> u64 {
        self.counters.frames_sent + self.counters.frames_received
    }

    fn log(&mut self, direction: Direction, tag: Tag, payload: &[u8]) {
        if let Some(t) = &mut self.transcript {
            t.frames.push(FrameRecord {
                direction,
                tag,
                len: payload.len() as u32,
                digest: *blake3::hash(payload).as_bytes(),
            });
        }
    }

    pub fn send(&mut self, tag: Tag, payload: &[u8]) -> Result<(), ChannelError> {
        let len = u32::try_from(payload.len()).map_err(|_| ChannelError::TooLarge(payload.len()))?;
        let mut header = [0u8; FRAME_HEADER];
        header[0] = tag as u8;
        header[1..].copy_from_slice(&len.to_le_bytes());
        match &mut self.binding {
            Binding::Loopback(p) => {
                let mut frame = Vec::with_capacity(FRAME_HEADER + payload.len());
                frame.extend_from_slice(&header);
                frame.extend_from_slice(payload);
                p.write_all(&frame)?;
            }
            Binding::Tcp { writer, .. } => {
                writer.write_all(&header)?;
                writer.write_all(payload)?;
            }
        }
        self.counters.bytes_sent += (FRAME_HEADER + payload.len()) as u64;
        self.counters.frames_sent += 1;
        self.log(Direction::Sent, tag, payload);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), ChannelError> {
        if let Binding::Tcp { writer, .. } = &mut self.binding {
            writer.flush()?;
        }
        Ok(())
    }

    /// Next frame of any tag. Pending output is flushed first so a
    /// request/response exchange cannot deadlock.
    pub fn recv_any(&mut self) -> Result<(Tag, Vec<u8>), ChannelError> {
        self.flush()?;
        let frame = self.position();
        let reader: &mut dyn Read = match &mut self.binding {
            Binding::Loopback(p) => p,
            Binding::Tcp { reader, .. } => reader,
        };
        let mut header = [0u8; FRAME_HEADER];
        match reader.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(ChannelError::Closed),
            Err(e) => return Err(e.into()),
        }
        let tag = Tag::from_u8(header[0]).ok_or(ChannelError::UnknownTag { tag: header[0], frame })?;
        let len = u32::from_le_bytes(header[1..].try_into().unwrap()) as usize;
        let mut payload = vec![0u8; len];
        reader.read_exact(&mut payload).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => ChannelError::Closed,
            _ => e.into(),
        })?;
        self.counters.bytes_received += (FRAME_HEADER + len) as u64;
        self.counters.frames_received += 1;
        self.log(Direction::Received, tag, &payload);
        Ok((tag, payload))
    }

    /// Next frame, which must carry `tag`; an `ERR` frame becomes
    /// [`ChannelError::Remote`].
    pub fn recv(&mut self, tag: Tag) -> Result<Vec<u8>, ChannelError> {
        let frame = self.position();
        let (got, payload) = self.recv_any()?;
        if got == tag {
            Ok(payload)
        } else if got == Tag::Err {
            Err(ChannelError::Remote(String::from_utf8_lossy(&payload).into_owned()))
        } else {
            Err(ChannelError::Unexpected { expected: tag, got, frame })
        }
    }

    /// Best-effort abort notice to the peer.
    pub fn send_error(&mut self, message: &str) {
        let _ = self.send(Tag::Err, message.as_bytes());
        let _ = self.flush();
    }
}

/// Little-endian payload writer.
#[derive(Default)]
pub struct PayloadWriter {
    pub buf: Vec<u8>,
}

impl PayloadWriter {
    pub fn with_capacity(n: usize) -> PayloadWriter {
        PayloadWriter { buf: Vec::with_capacity(n) }
    }
    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }
    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn u128(&mut self, v: u128) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }
}

/// Bounds-checked reader over a received payload.
pub struct PayloadReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    tag: Tag,
    frame: u64,
}

impl<'a> PayloadReader<'a> {
    pub fn new(bytes: &'a [u8], tag: Tag, frame: u64) -> PayloadReader<'a> {
        PayloadReader { bytes, pos: 0, tag, frame }
    }

    pub fn error(&self, message: impl Into<String>) -> ChannelError {
        ChannelError::Malformed {
            tag: self.tag,
            frame: self.frame,
            message: message.into(),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], ChannelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(self.error(format!("truncated at byte {}", self.pos))),
        }
    }

    pub fn u8(&mut self) -> Result<u8, ChannelError> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32, ChannelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64, ChannelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn u128(&mut self) -> Result<u128, ChannelError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub fn finish(&self) -> Result<(), ChannelError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(self.error(format!("{} trailing bytes", self.bytes.len() - self.pos)))
        }
    }
}
