//! TCP transport and rendezvous.
//!
//! Joining a group takes two steps. Every rank first connects to the
//! rendezvous address (normally served by the launcher) and sends a `Hello`
//! frame holding its rank; rank 0 also includes the address of a listener it
//! has just opened. Once all ranks have checked in, the rendezvous answers
//! each of them with rank 0's address. Ranks 1..n then connect to rank 0 and
//! introduce themselves with another `Hello`, forming the star.

use std::env;
use std::io::{self, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use super::{CommError, Communicator, Frame, FrameReadError, Tag, Transport, DEFAULT_TIMEOUT};

/// Group size passed to each child by the launcher.
pub const ENV_SIZE: &str = "RF_GROUP_SIZE";
/// The child's own rank.
pub const ENV_RANK: &str = "RF_RANK";
/// `host:port` of the rendezvous listener.
pub const ENV_RENDEZVOUS: &str = "RF_RENDEZVOUS";
/// Optional connect and receive timeout in seconds (default 30).
pub const ENV_TIMEOUT: &str = "RF_TIMEOUT_SECS";

const POLL_INTERVAL: Duration = Duration::from_millis(5);

struct SocketTransport {
    rank: usize,
    peers: Vec<Option<TcpStream>>,
}

impl SocketTransport {
    fn stream(&mut self, peer: usize) -> Result<&mut TcpStream, CommError> {
        let rank = self.rank;
        self.peers
            .get_mut(peer)
            .and_then(Option::as_mut)
            .ok_or_else(|| CommError::Protocol(format!("rank {rank} has no connection to rank {peer}")))
    }
}

fn map_io(peer: usize, timeout: Duration, e: io::Error) -> CommError {
    match e.kind() {
        ErrorKind::WouldBlock | ErrorKind::TimedOut => CommError::Timeout { peer, after: timeout },
        ErrorKind::UnexpectedEof
        | ErrorKind::ConnectionReset
        | ErrorKind::ConnectionAborted
        | ErrorKind::BrokenPipe => CommError::Disconnected { peer },
        _ => CommError::Io(e),
    }
}

fn read_frame(stream: &mut TcpStream, peer: usize, timeout: Duration) -> Result<Frame, CommError> {
    stream.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
    Frame::read_from(stream).map_err(|e| match e {
        FrameReadError::Io(e) => map_io(peer, timeout, e),
        FrameReadError::Bad(e) => e,
    })
}

impl Transport for SocketTransport {
    fn send(&mut self, peer: usize, frame: &Frame) -> Result<(), CommError> {
        let stream = self.stream(peer)?;
        stream.write_all(&frame.encode()).map_err(|e| map_io(peer, Duration::ZERO, e))
    }

    fn recv(&mut self, peer: usize, timeout: Duration) -> Result<Frame, CommError> {
        read_frame(self.stream(peer)?, peer, timeout)
    }

    fn close(&mut self) {
        for s in self.peers.iter_mut().filter_map(Option::take) {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

fn hello_payload(rank: usize, addr: Option<&str>) -> Vec<u8> {
    let mut p = (rank as u32).to_le_bytes().to_vec();
    if let Some(a) = addr {
        p.extend_from_slice(a.as_bytes());
    }
    p
}

fn parse_hello(frame: &Frame) -> Result<(usize, String), CommError> {
    if frame.tag != Tag::Hello || frame.payload.len() < 4 {
        return Err(CommError::Rendezvous(format!("expected a hello frame, got {:?}", frame.tag)));
    }
    let rank = u32::from_le_bytes(frame.payload[..4].try_into().unwrap()) as usize;
    let addr = String::from_utf8(frame.payload[4..].to_vec())
        .map_err(|_| CommError::Rendezvous("hello address is not UTF-8".into()))?;
    Ok((rank, addr))
}

fn remaining(deadline: Instant) -> Result<Duration, CommError> {
    deadline
        .checked_duration_since(Instant::now())
        .filter(|d| !d.is_zero())
        .ok_or_else(|| CommError::Rendezvous("deadline passed".into()))
}

/// Accepts one connection before `deadline`, calling `poll` while waiting.
fn accept_before(
    listener: &TcpListener,
    deadline: Instant,
    poll: &mut dyn FnMut() -> Result<(), CommError>,
) -> Result<TcpStream, CommError> {
    listener.set_nonblocking(true)?;
    loop {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                stream.set_nodelay(true)?;
                return Ok(stream);
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                poll()?;
                if Instant::now() >= deadline {
                    return Err(CommError::Rendezvous("timed out waiting for ranks to connect".into()));
                }
                thread::sleep(POLL_INTERVAL);
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn connect_before(addr: &str, deadline: Instant) -> Result<TcpStream, CommError> {
    let target: SocketAddr = addr
        .to_socket_addrs()
        .map_err(|e| CommError::Rendezvous(format!("cannot resolve {addr}: {e}")))?
        .next()
        .ok_or_else(|| CommError::Rendezvous(format!("{addr} resolves to nothing")))?;
    loop {
        let wait = remaining(deadline).map_err(|_| CommError::Rendezvous(format!("cannot reach {addr}")))?;
        match TcpStream::connect_timeout(&target, wait) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) if e.kind() == ErrorKind::ConnectionRefused => thread::sleep(POLL_INTERVAL),
            Err(e) => return Err(CommError::Rendezvous(format!("cannot reach {addr}: {e}"))),
        }
    }
}

/// The rendezvous listener a group checks in with.
pub struct Rendezvous {
    listener: TcpListener,
    addr: SocketAddr,
}

impl Rendezvous {
    /// Listens on an ephemeral loopback port.
    pub fn bind() -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        Ok(Rendezvous { listener, addr })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Waits for `size` distinct ranks to check in, then tells each of them
    /// where rank 0 listens. `poll` runs while waiting and may abort.
    pub fn serve(
        self,
        size: usize,
        timeout: Duration,
        mut poll: impl FnMut() -> Result<(), CommError>,
    ) -> Result<(), CommError> {
        let deadline = Instant::now() + timeout;
        let mut joined: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();
        let mut root_addr = None;
        let mut count = 0;
        while count < size {
            let mut stream = accept_before(&self.listener, deadline, &mut poll)?;
            let frame = read_frame(&mut stream, usize::MAX, remaining(deadline)?)?;
            let (rank, addr) = parse_hello(&frame)?;
            if rank >= size {
                return Err(CommError::Rendezvous(format!("rank {rank} outside group of size {size}")));
            }
            if joined[rank].is_some() {
                return Err(CommError::Rendezvous(format!("rank {rank} checked in twice")));
            }
            if rank == 0 {
                root_addr = Some(addr);
            }
            joined[rank] = Some(stream);
            count += 1;
        }
        let root_addr = root_addr.expect("rank 0 joined");
        for (rank, stream) in joined.iter_mut().enumerate() {
            let stream = stream.as_mut().expect("all ranks joined");
            Frame::new(Tag::Hello, 0, hello_payload(rank, Some(&root_addr)))
                .write_to(stream)
                .map_err(|e| map_io(rank, timeout, e))?;
        }
        Ok(())
    }
}

/// Joins a socket group through the rendezvous at `rendezvous`.
pub fn connect(rank: usize, size: usize, rendezvous: &str, timeout: Duration) -> Result<Communicator, CommError> {
    if size == 0 || rank >= size {
        return Err(CommError::Env(format!("rank {rank} invalid for group size {size}")));
    }
    let deadline = Instant::now() + timeout;

    let listener = if rank == 0 && size > 1 {
        let host = rendezvous.rsplit_once(':').map_or("127.0.0.1", |(h, _)| h);
        Some(TcpListener::bind((host, 0))?)
    } else {
        None
    };
    let own_addr = listener.as_ref().map(|l| l.local_addr()).transpose()?.map(|a| a.to_string());

    let mut rv = connect_before(rendezvous, deadline)?;
    Frame::new(Tag::Hello, 0, hello_payload(rank, own_addr.as_deref())).write_to(&mut rv)?;
    let reply = read_frame(&mut rv, usize::MAX, remaining(deadline)?)?;
    let (_, root_addr) = parse_hello(&reply)?;
    drop(rv);

    if size == 1 {
        return Ok(Communicator::single());
    }

    let mut peers: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();
    if let Some(listener) = listener {
        for _ in 1..size {
            let mut stream = accept_before(&listener, deadline, &mut || Ok(()))?;
            let frame = read_frame(&mut stream, usize::MAX, remaining(deadline)?)?;
            let (peer, _) = parse_hello(&frame)?;
            if peer == 0 || peer >= size || peers[peer].is_some() {
                return Err(CommError::Rendezvous(format!("unexpected hello from rank {peer}")));
            }
            peers[peer] = Some(stream);
        }
    } else {
        let mut stream = connect_before(&root_addr, deadline)?;
        Frame::new(Tag::Hello, 0, hello_payload(rank, None)).write_to(&mut stream)?;
        peers[0] = Some(stream);
    }
    let mut comm = Communicator::with_transport(rank, size, Box::new(SocketTransport { rank, peers }));
    comm.set_timeout(timeout);
    Ok(comm)
}

/// Reads the launcher's environment variables. Without them the process is
/// a group of one.
pub fn connect_from_env() -> Result<Communicator, CommError> {
    let vars = [ENV_SIZE, ENV_RANK, ENV_RENDEZVOUS].map(|k| env::var(k).ok());
    match vars {
        [None, None, None] => Ok(Communicator::single()),
        [Some(size), Some(rank), Some(addr)] => {
            let parse = |name: &str, v: &str| {
                v.trim().parse::<usize>().map_err(|_| CommError::Env(format!("{name}={v:?} is not a count")))
            };
            let timeout = match env::var(ENV_TIMEOUT) {
                Ok(v) => match v.trim().parse::<f64>() {
                    Ok(secs) if secs > 0.0 && secs.is_finite() => Duration::from_secs_f64(secs),
                    _ => {
                        return Err(CommError::Env(format!("{ENV_TIMEOUT}={v:?} is not a positive number of seconds")))
                    }
                },
                Err(_) => DEFAULT_TIMEOUT,
            };
            connect(parse(ENV_RANK, &rank)?, parse(ENV_SIZE, &size)?, &addr, timeout)
        }
        _ => Err(CommError::Env(format!("{ENV_SIZE}, {ENV_RANK} and {ENV_RENDEZVOUS} must be set together"))),
    }
}

/// Runs `body` on `size` threads joined by real TCP connections on the
/// loopback interface. Results come back in rank order.
pub fn run_socket_group<T, F>(size: usize, body: F) -> Result<Vec<T>, CommError>
where
    T: Send,
    F: Fn(Communicator) -> T + Sync,
{
    let rv = Rendezvous::bind()?;
    let addr = rv.addr().to_string();
    thread::scope(|s| {
        let handles: Vec<_> = (0..size)
            .map(|rank| {
                let (addr, body) = (&addr, &body);
                s.spawn(move || connect(rank, size, addr, DEFAULT_TIMEOUT).map(body))
            })
            .collect();
        let served = rv.serve(size, DEFAULT_TIMEOUT, || Ok(()));
        let results: Vec<Result<T, CommError>> =
            handles.into_iter().map(|h| h.join().expect("rank thread panicked")).collect();
        served?;
        results.into_iter().collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn socket_group_collectives() {
        let out = run_socket_group(3, |mut c| {
            let g = c.allgather(&[c.rank() as u8 * 10]).unwrap();
            let s = c.allreduce_sum(&[c.rank() as i64 + 1]).unwrap();
            let b = c.broadcast(b"root says hi", 0).unwrap();
            c.finalize().unwrap();
            (c.rank(), c.size(), g, s, b)
        })
        .unwrap();
        for (r, (rank, size, g, s, b)) in out.into_iter().enumerate() {
            assert_eq!((rank, size), (r, 3));
            assert_eq!(g, vec![vec![0], vec![10], vec![20]]);
            assert_eq!(s, vec![6]);
            assert_eq!(b, b"root says hi");
        }
    }

    #[test]
    fn single_rank_socket_group() {
        let out = run_socket_group(1, |mut c| c.allgather(b"me").unwrap()).unwrap();
        assert_eq!(out, vec![vec![b"me".to_vec()]]);
    }

    #[test]
    fn mismatched_tag_detected_over_tcp() {
        let out = run_socket_group(3, |mut c| {
            c.set_timeout(Duration::from_secs(5));
            if c.rank() == 1 {
                c.barrier()
            } else {
                c.allgather(b"").map(drop)
            }
        })
        .unwrap();
        assert!(matches!(out[0], Err(CommError::Protocol(_))));
        assert!(matches!(out[1], Err(CommError::Aborted(_))));
    }

    #[test]
    fn megabyte_broadcast() {
        let data: Vec<u8> = (0..1 << 20).map(|i: u32| (i.wrapping_mul(2654435761) >> 24) as u8).collect();
        let out = run_socket_group(4, |mut c| {
            let mine = if c.rank() == 0 { data.clone() } else { Vec::new() };
            c.broadcast(&mine, 0).unwrap()
        })
        .unwrap();
        assert!(out.iter().all(|b| *b == data));
    }

    #[test]
    fn dead_peer_is_reported() {
        let out = run_socket_group(2, |mut c| {
            if c.rank() == 1 {
                drop(c);
                return None;
            }
            Some(c.barrier())
        })
        .unwrap();
        assert!(matches!(out[0], Some(Err(CommError::Disconnected { peer: 1 }))), "{:?}", out[0]);
    }
}
