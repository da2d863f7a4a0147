use std::io::{self, Read, Write};

use super::CommError;

/// Frame header: length u32, tag u8, sequence u32, all little-endian.
pub const FRAME_HEADER_LEN: usize = 9;

/// Largest payload accepted from the wire.
pub const MAX_PAYLOAD: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Tag {
    Hello = 1,
    Barrier = 2,
    Broadcast = 3,
    Allgather = 4,
    Reduce = 5,
    Allreduce = 6,
    Bye = 7,
}

impl TryFrom<u8> for Tag {
    type Error = CommError;

    fn try_from(v: u8) -> Result<Self, CommError> {
        Ok(match v {
            1 => Tag::Hello,
            2 => Tag::Barrier,
            3 => Tag::Broadcast,
            4 => Tag::Allgather,
            5 => Tag::Reduce,
            6 => Tag::Allreduce,
            7 => Tag::Bye,
            other => return Err(CommError::Protocol(format!("unknown frame tag {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub tag: Tag,
    pub sequence: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(tag: Tag, sequence: u32, payload: Vec<u8>) -> Self {
        Frame { tag, sequence, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.push(self.tag as u8);
        out.extend_from_slice(&self.sequence.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame payload too large"));
        }
        let mut header = [0u8; FRAME_HEADER_LEN];
        header[..4].copy_from_slice(&(self.payload.len() as u32).to_le_bytes());
        header[4] = self.tag as u8;
        header[5..].copy_from_slice(&self.sequence.to_le_bytes());
        w.write_all(&header)?;
        w.write_all(&self.payload)?;
        w.flush()
    }

    /// Reads one frame. I/O errors pass through untouched so callers can
    /// tell timeouts and disconnects apart.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Frame, FrameReadError> {
        let mut header = [0u8; FRAME_HEADER_LEN];
        r.read_exact(&mut header).map_err(FrameReadError::Io)?;
        let len = u32::from_le_bytes(header[..4].try_into().unwrap()) as usize;
        if len > MAX_PAYLOAD {
            return Err(FrameReadError::Bad(CommError::Protocol(format!("frame length {len} exceeds limit"))));
        }
        let tag = Tag::try_from(header[4]).map_err(FrameReadError::Bad)?;
        let sequence = u32::from_le_bytes(header[5..].try_into().unwrap());
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload).map_err(FrameReadError::Io)?;
        Ok(Frame { tag, sequence, payload })
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame, CommError> {
        let mut cursor = bytes;
        let frame = Frame::read_from(&mut cursor).map_err(|e| match e {
            FrameReadError::Io(_) => CommError::Protocol("truncated frame".into()),
            FrameReadError::Bad(e) => e,
        })?;
        if !cursor.is_empty() {
            return Err(CommError::Protocol(format!("{} bytes after frame", cursor.len())));
        }
        Ok(frame)
    }
}

#[derive(Debug)]
pub enum FrameReadError {
    Io(io::Error),
    Bad(CommError),
}
