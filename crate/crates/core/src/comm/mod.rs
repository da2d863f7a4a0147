//! SPMD communicator: rank identity and blocking collectives.
//!
//! Collectives run as a star through rank 0. Every rank sends a frame tagged
//! with the collective's opcode and sequence number to rank 0, which checks
//! that all ranks entered the same collective, computes the per-rank results
//! and sends them back. A mismatch makes rank 0 answer every peer with a
//! `Bye` frame carrying the reason, so all ranks fail with an error instead
//! of hanging.
//!
//! Two transports are provided: [`local`] runs a group as threads joined by
//! channels, [`socket`] joins separate processes over TCP. [`launch`] starts
//! a group of processes the way `mpirun` does.

mod frame;
pub mod launch;
pub mod local;
pub mod socket;

use std::io::{self, Write};
use std::time::Duration;

pub use frame::{Frame, FrameReadError, Tag, FRAME_HEADER_LEN, MAX_PAYLOAD};

/// Default limit on how long any blocking receive may wait.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, thiserror::Error)]
pub enum CommError {
    #[error("transport failure: {0}")]
    Io(#[from] io::Error),
    #[error("timed out after {after:?} waiting for rank {peer}")]
    Timeout { peer: usize, after: Duration },
    #[error("rank {peer} disconnected")]
    Disconnected { peer: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("collective aborted by rank 0: {0}")]
    Aborted(String),
    #[error("reduce operands disagree: {0}")]
    ShapeMismatch(String),
    #[error("integer overflow in reduction")]
    Overflow,
    #[error("communicator already finalized")]
    Finalized,
    #[error("communicator is unusable after an earlier failure")]
    Broken,
    #[error("bad group environment: {0}")]
    Env(String),
    #[error("rendezvous failed: {0}")]
    Rendezvous(String),
}

/// Point-to-point links of one rank in the star. Rank 0 talks to every
/// peer; every other rank talks only to rank 0.
pub(crate) trait Transport: Send {
    fn send(&mut self, peer: usize, frame: &Frame) -> Result<(), CommError>;
    fn recv(&mut self, peer: usize, timeout: Duration) -> Result<Frame, CommError>;
    fn close(&mut self);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Active,
    Broken,
    Finalized,
}

/// One participant's endpoint in an SPMD group.
pub struct Communicator {
    rank: usize,
    size: usize,
    transport: Option<Box<dyn Transport>>,
    sequence: u32,
    state: State,
    timeout: Duration,
}

impl std::fmt::Debug for Communicator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Communicator")
            .field("rank", &self.rank)
            .field("size", &self.size)
            .field("sequence", &self.sequence)
            .field("state", &self.state)
            .finish()
    }
}

/// Element types that `reduce_sum` and `allreduce_sum` can add.
pub trait ReduceElement: Copy + Send + 'static {
    const KIND: u8;
    const WIDTH: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn checked_sum(self, other: Self) -> Option<Self>;
}

macro_rules! int_element {
    ($t:ty, $kind:expr) => {
        impl ReduceElement for $t {
            const KIND: u8 = $kind;
            const WIDTH: usize = std::mem::size_of::<$t>();
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().unwrap())
            }
            fn checked_sum(self, other: Self) -> Option<Self> {
                self.checked_add(other)
            }
        }
    };
}

int_element!(i64, 1);
int_element!(u64, 2);

impl ReduceElement for f64 {
    const KIND: u8 = 3;
    const WIDTH: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().unwrap())
    }
    fn checked_sum(self, other: Self) -> Option<Self> {
        Some(self + other)
    }
}

fn encode_vector<T: ReduceElement>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + values.len() * T::WIDTH);
    out.push(T::KIND);
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for &v in values {
        v.write_le(&mut out);
    }
    out
}

fn decode_vector<T: ReduceElement>(bytes: &[u8]) -> Result<Vec<T>, CommError> {
    if bytes.len() < 5 {
        return Err(CommError::Protocol("short reduce payload".into()));
    }
    if bytes[0] != T::KIND {
        return Err(CommError::ShapeMismatch(format!("element kind {} vs {}", bytes[0], T::KIND)));
    }
    let len = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
    let body = &bytes[5..];
    if body.len() != len * T::WIDTH {
        return Err(CommError::Protocol("reduce payload length does not match its header".into()));
    }
    Ok(body.chunks_exact(T::WIDTH).map(T::read_le).collect())
}

/// Sums per-rank vectors in rank order.
fn sum_vectors<T: ReduceElement>(inputs: &[Vec<u8>]) -> Result<Vec<T>, CommError> {
    let mut acc = decode_vector::<T>(&inputs[0])?;
    for (rank, bytes) in inputs.iter().enumerate().skip(1) {
        let v = decode_vector::<T>(bytes)?;
        if v.len() != acc.len() {
            return Err(CommError::ShapeMismatch(format!(
                "rank 0 has {} elements, rank {rank} has {}",
                acc.len(),
                v.len()
            )));
        }
        for (a, b) in acc.iter_mut().zip(v) {
            *a = a.checked_sum(b).ok_or(CommError::Overflow)?;
        }
    }
    Ok(acc)
}

/// `count u32 | (len u32 | bytes)*`
fn encode_list(items: &[Vec<u8>]) -> Vec<u8> {
    let total: usize = items.iter().map(|i| 4 + i.len()).sum();
    let mut out = Vec::with_capacity(4 + total);
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for item in items {
        out.extend_from_slice(&(item.len() as u32).to_le_bytes());
        out.extend_from_slice(item);
    }
    out
}

fn decode_list(bytes: &[u8]) -> Result<Vec<Vec<u8>>, CommError> {
    let bad = || CommError::Protocol("malformed allgather payload".into());
    let mut rest = bytes;
    let mut take = |n: usize| -> Result<&[u8], CommError> {
        if rest.len() < n {
            return Err(bad());
        }
        let (head, tail) = rest.split_at(n);
        rest = tail;
        Ok(head)
    };
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut items = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        items.push(take(len)?.to_vec());
    }
    if !rest.is_empty() {
        return Err(bad());
    }
    Ok(items)
}

impl Communicator {
    /// A group of one; every collective returns immediately.
    pub fn single() -> Self {
        Communicator { rank: 0, size: 1, transport: None, sequence: 0, state: State::Active, timeout: DEFAULT_TIMEOUT }
    }

    pub(crate) fn with_transport(rank: usize, size: usize, transport: Box<dyn Transport>) -> Self {
        let transport = if size > 1 { Some(transport) } else { None };
        Communicator { rank, size, transport, sequence: 0, state: State::Active, timeout: DEFAULT_TIMEOUT }
    }

    /// Joins the group described by the launcher's environment variables, or
    /// returns a single-rank group when none are set.
    pub fn from_env() -> Result<Self, CommError> {
        socket::connect_from_env()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_root(&self) -> bool {
        self.rank == 0
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    /// Number of collectives started so far.
    pub fn sequence(&self) -> u32 {
        self.sequence
    }

    fn check_active(&self) -> Result<(), CommError> {
        match self.state {
            State::Active => Ok(()),
            State::Broken => Err(CommError::Broken),
            State::Finalized => Err(CommError::Finalized),
        }
    }

    fn abort(&mut self, reason: &str) {
        self.state = State::Broken;
        let frame = Frame::new(Tag::Bye, self.sequence, reason.as_bytes().to_vec());
        if let Some(t) = self.transport.as_mut() {
            for peer in 1..self.size {
                let _ = t.send(peer, &frame);
            }
        }
    }

    /// Runs one gather-to-root / fan-out round. On rank 0, `combine` maps
    /// the rank-ordered inputs to one reply per rank.
    fn collective<F>(&mut self, tag: Tag, payload: Vec<u8>, combine: F) -> Result<Vec<u8>, CommError>
    where
        F: FnOnce(Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>, CommError>,
    {
        self.check_active()?;
        self.sequence = self.sequence.wrapping_add(1);
        let seq = self.sequence;
        let timeout = self.timeout;
        let size = self.size;

        let Some(transport) = self.transport.as_mut() else {
            return combine(vec![payload]).map(|mut out| out.swap_remove(0));
        };

        if self.rank != 0 {
            let sent = transport.send(0, &Frame::new(tag, seq, payload));
            let reply = sent.and_then(|_| transport.recv(0, timeout));
            let reply = match reply {
                Ok(r) => r,
                Err(e) => {
                    self.state = State::Broken;
                    return Err(e);
                }
            };
            if reply.tag == Tag::Bye {
                self.state = State::Broken;
                return Err(CommError::Aborted(String::from_utf8_lossy(&reply.payload).into_owned()));
            }
            if reply.tag != tag || reply.sequence != seq {
                self.state = State::Broken;
                return Err(CommError::Protocol(format!(
                    "expected {tag:?} #{seq} from rank 0, got {:?} #{}",
                    reply.tag, reply.sequence
                )));
            }
            return Ok(reply.payload);
        }

        let mut inputs = Vec::with_capacity(size);
        inputs.push(payload);
        for peer in 1..size {
            let frame = match transport.recv(peer, timeout) {
                Ok(f) => f,
                Err(e) => {
                    let reason = e.to_string();
                    self.abort(&reason);
                    return Err(e);
                }
            };
            if frame.tag != tag || frame.sequence != seq {
                let reason =
                    format!("rank 0 entered {tag:?} #{seq} but rank {peer} sent {:?} #{}", frame.tag, frame.sequence);
                self.abort(&reason);
                return Err(CommError::Protocol(reason));
            }
            inputs.push(frame.payload);
        }
        let mut outputs = match combine(inputs) {
            Ok(o) => o,
            Err(e) => {
                self.abort(&e.to_string());
                return Err(e);
            }
        };
        debug_assert_eq!(outputs.len(), size);
        for (peer, out) in outputs.iter_mut().enumerate().skip(1) {
            let frame = Frame::new(tag, seq, std::mem::take(out));
            if let Err(e) = transport.send(peer, &frame) {
                let reason = e.to_string();
                self.abort(&reason);
                return Err(e);
            }
        }
        Ok(outputs.swap_remove(0))
    }

    /// Returns once every rank has entered the barrier.
    pub fn barrier(&mut self) -> Result<(), CommError> {
        let size = self.size;
        self.collective(Tag::Barrier, Vec::new(), |_| Ok(vec![Vec::new(); size])).map(drop)
    }

    /// Delivers `root`'s payload to every rank. Other ranks' payloads are ignored.
    pub fn broadcast(&mut self, payload: &[u8], root: usize) -> Result<Vec<u8>, CommError> {
        self.check_root(root)?;
        let size = self.size;
        let mine = if self.rank == root { payload.to_vec() } else { Vec::new() };
        self.collective(Tag::Broadcast, mine, move |mut inputs| {
            let value = std::mem::take(&mut inputs[root]);
            Ok(vec![value; size])
        })
    }

    /// Every rank receives every rank's payload, ordered by rank.
    pub fn allgather(&mut self, payload: &[u8]) -> Result<Vec<Vec<u8>>, CommError> {
        let size = self.size;
        let bytes = self.collective(Tag::Allgather, payload.to_vec(), |inputs| Ok(vec![encode_list(&inputs); size]))?;
        let items = decode_list(&bytes)?;
        if items.len() != size {
            return Err(CommError::Protocol(format!("allgather returned {} items for {size} ranks", items.len())));
        }
        Ok(items)
    }

    /// Elementwise sum delivered to `root`; other ranks get `None`.
    pub fn reduce_sum<T: ReduceElement>(&mut self, values: &[T], root: usize) -> Result<Option<Vec<T>>, CommError> {
        self.check_root(root)?;
        let size = self.size;
        let bytes = self.collective(Tag::Reduce, encode_vector(values), |inputs| {
            let sum = encode_vector(&sum_vectors::<T>(&inputs)?);
            Ok((0..size).map(|r| if r == root { sum.clone() } else { Vec::new() }).collect())
        })?;
        if self.rank == root {
            decode_vector(&bytes).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Elementwise sum delivered to every rank.
    pub fn allreduce_sum<T: ReduceElement>(&mut self, values: &[T]) -> Result<Vec<T>, CommError> {
        let size = self.size;
        let bytes = self.collective(Tag::Allreduce, encode_vector(values), |inputs| {
            Ok(vec![encode_vector(&sum_vectors::<T>(&inputs)?); size])
        })?;
        decode_vector(&bytes)
    }

    fn check_root(&self, root: usize) -> Result<(), CommError> {
        if root >= self.size {
            return Err(CommError::Protocol(format!("root {root} outside group of size {}", self.size)));
        }
        Ok(())
    }

    /// Writes `text` and a newline to stdout on rank 0 only. Returns whether
    /// this rank printed.
    pub fn root_print(&self, text: &str) -> io::Result<bool> {
        self.root_write(&mut io::stdout().lock(), text)
    }

    pub fn root_write<W: Write>(&self, w: &mut W, text: &str) -> io::Result<bool> {
        if self.rank != 0 {
            return Ok(false);
        }
        writeln!(w, "{text}")?;
        w.flush()?;
        Ok(true)
    }

    /// Shuts the group down. Non-root ranks say goodbye to rank 0; rank 0
    /// waits for every goodbye, then all connections close.
    pub fn finalize(&mut self) -> Result<(), CommError> {
        match self.state {
            State::Finalized => return Err(CommError::Finalized),
            State::Broken => {
                self.state = State::Finalized;
                if let Some(t) = self.transport.as_mut() {
                    t.close();
                }
                return Err(CommError::Broken);
            }
            State::Active => {}
        }
        self.state = State::Finalized;
        self.sequence = self.sequence.wrapping_add(1);
        let seq = self.sequence;
        let timeout = self.timeout;
        let Some(transport) = self.transport.as_mut() else {
            return Ok(());
        };
        let mut result = Ok(());
        if self.rank != 0 {
            result = transport.send(0, &Frame::new(Tag::Bye, seq, Vec::new()));
        } else {
            for peer in 1..self.size {
                match transport.recv(peer, timeout) {
                    Ok(f) if f.tag == Tag::Bye && f.sequence == seq => {}
                    Ok(f) => {
                        result = Err(CommError::Protocol(format!(
                            "rank {peer} sent {:?} #{} while rank 0 was finalizing",
                            f.tag, f.sequence
                        )));
                        break;
                    }
                    Err(e) => {
                        result = Err(e);
                        break;
                    }
                }
            }
        }
        transport.close();
        result
    }
}

impl Drop for Communicator {
    fn drop(&mut self) {
        if let Some(t) = self.transport.as_mut() {
            t.close();
        }
    }
}
