//! In-process transport: every rank is a thread, links are channels.

use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::{CommError, Communicator, Frame, Transport};

struct Link {
    tx: Sender<Frame>,
    rx: Receiver<Frame>,
}

struct LocalTransport {
    rank: usize,
    // Indexed by peer rank. Rank 0 has a link to every peer; others only to 0.
    links: Vec<Option<Link>>,
}

impl LocalTransport {
    fn link(&mut self, peer: usize) -> Result<&mut Link, CommError> {
        self.links
            .get_mut(peer)
            .and_then(Option::as_mut)
            .ok_or_else(|| CommError::Protocol(format!("rank {} has no link to rank {peer}", self.rank)))
    }
}

impl Transport for LocalTransport {
    fn send(&mut self, peer: usize, frame: &Frame) -> Result<(), CommError> {
        self.link(peer)?.tx.send(frame.clone()).map_err(|_| CommError::Disconnected { peer })
    }

    fn recv(&mut self, peer: usize, timeout: Duration) -> Result<Frame, CommError> {
        match self.link(peer)?.rx.recv_timeout(timeout) {
            Ok(f) => Ok(f),
            Err(RecvTimeoutError::Timeout) => Err(CommError::Timeout { peer, after: timeout }),
            Err(RecvTimeoutError::Disconnected) => Err(CommError::Disconnected { peer }),
        }
    }

    fn close(&mut self) {
        self.links.iter_mut().for_each(|l| *l = None);
    }
}

/// Creates the endpoints of an in-process group, indexed by rank.
pub fn local_group(size: usize) -> Vec<Communicator> {
    assert!(size >= 1, "group size must be at least 1");
    let mut root_links: Vec<Option<Link>> = (0..size).map(|_| None).collect();
    let mut others = Vec::with_capacity(size.saturating_sub(1));
    for (rank, root_link) in root_links.iter_mut().enumerate().skip(1) {
        let (to_root, from_peer) = channel();
        let (to_peer, from_root) = channel();
        *root_link = Some(Link { tx: to_peer, rx: from_peer });
        let mut links: Vec<Option<Link>> = (0..size).map(|_| None).collect();
        links[0] = Some(Link { tx: to_root, rx: from_root });
        others.push(Communicator::with_transport(rank, size, Box::new(LocalTransport { rank, links })));
    }
    let mut group =
        vec![Communicator::with_transport(0, size, Box::new(LocalTransport { rank: 0, links: root_links }))];
    group.extend(others);
    group
}

/// Runs `body` once per rank on its own thread and returns the results in
/// rank order.
pub fn run_local<T, F>(size: usize, body: F) -> Vec<T>
where
    T: Send,
    F: Fn(Communicator) -> T + Sync,
{
    let group = local_group(size);
    std::thread::scope(|s| {
        let handles: Vec<_> = group.into_iter().map(|comm| s.spawn(|| body(comm))).collect();
        handles.into_iter().map(|h| h.join().expect("rank thread panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    #[test]
    fn ranks_and_sizes() {
        let ids = run_local(4, |c| (c.rank(), c.size()));
        assert_eq!(ids, vec![(0, 4), (1, 4), (2, 4), (3, 4)]);
    }

    #[test]
    fn collectives_on_four_ranks() {
        let out = run_local(4, |mut c| {
            let r = c.rank();
            let gathered = c.allgather(&[r as u8]).unwrap();
            let reduced = c.reduce_sum(&[[3i64, 5, 7, 9][r]], 0).unwrap();
            let all = c.allreduce_sum(&[1u64]).unwrap();
            let b = c.broadcast(if r == 2 { b"abc" } else { b"" }, 2).unwrap();
            c.barrier().unwrap();
            c.finalize().unwrap();
            (gathered, reduced, all, b)
        });
        for (r, (gathered, reduced, all, b)) in out.into_iter().enumerate() {
            assert_eq!(gathered, vec![vec![0], vec![1], vec![2], vec![3]]);
            assert_eq!(reduced, if r == 0 { Some(vec![24]) } else { None });
            assert_eq!(all, vec![4]);
            assert_eq!(b, b"abc");
        }
    }

    #[test]
    fn root_print_once() {
        let sink = Mutex::new(Vec::new());
        run_local(4, |c| {
            let mut buf = Vec::new();
            c.root_write(&mut buf, "accuracy 0.9").unwrap();
            sink.lock().unwrap().extend(buf);
        });
        assert_eq!(String::from_utf8(sink.into_inner().unwrap()).unwrap(), "accuracy 0.9\n");
    }

    #[test]
    fn mismatched_collective_is_a_protocol_error() {
        let out = run_local(4, |mut c| {
            c.set_timeout(Duration::from_secs(5));
            if c.rank() == 2 {
                c.allgather(b"x").map(drop)
            } else {
                c.reduce_sum(&[1i64], 0).map(drop)
            }
        });
        assert!(matches!(out[0], Err(CommError::Protocol(_))), "{:?}", out[0]);
        for r in out[1..].iter() {
            assert!(matches!(r, Err(CommError::Aborted(_))), "{r:?}");
        }
    }

    #[test]
    fn reduce_shape_mismatch_aborts_everyone() {
        let out = run_local(3, |mut c| {
            let v = vec![1i64; if c.rank() == 1 { 2 } else { 3 }];
            c.allreduce_sum(&v)
        });
        assert!(matches!(out[0], Err(CommError::ShapeMismatch(_))));
        assert!(out[1..].iter().all(|r| matches!(r, Err(CommError::Aborted(_)))));
    }

    #[test]
    fn lifecycle_errors() {
        let out = run_local(2, |mut c| {
            c.finalize().unwrap();
            (matches!(c.barrier(), Err(CommError::Finalized)), matches!(c.finalize(), Err(CommError::Finalized)))
        });
        assert!(out.iter().all(|&(a, b)| a && b));
    }

    #[test]
    fn missing_peer_times_out() {
        let mut group = local_group(2);
        let straggler = group.pop().unwrap();
        let mut root = group.pop().unwrap();
        root.set_timeout(Duration::from_millis(50));
        assert!(matches!(root.barrier(), Err(CommError::Timeout { peer: 1, .. })));
        drop(straggler);
    }
}
