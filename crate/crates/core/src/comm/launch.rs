//! Starts an SPMD group of processes, the role `mpirun -np N` plays.
//!
//! Each child gets its rank, the group size, the rendezvous address and the
//! group timeout in [`ENV_RANK`], [`ENV_SIZE`], [`ENV_RENDEZVOUS`] and
//! [`ENV_TIMEOUT`].

use std::ffi::OsStr;
use std::fmt;
use std::io;
use std::process::{Child, Command};
use std::time::Duration;

use super::socket::{Rendezvous, ENV_RANK, ENV_RENDEZVOUS, ENV_SIZE, ENV_TIMEOUT};
use super::CommError;

#[derive(Debug, thiserror::Error)]
pub enum LaunchError {
    #[error("group size must be at least 1")]
    NoRanks,
    #[error("cannot spawn rank {rank}: {source}")]
    Spawn { rank: usize, source: io::Error },
    #[error("rank {rank} exited ({status}) before the group formed")]
    EarlyExit { rank: usize, status: ExitCode },
    #[error("rendezvous failed: {0}")]
    Rendezvous(CommError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// How one rank's process ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Code(i32),
    Signal,
}

impl fmt::Display for ExitCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExitCode::Code(c) => write!(f, "exit code {c}"),
            ExitCode::Signal => write!(f, "terminated by a signal"),
        }
    }
}

impl From<std::process::ExitStatus> for ExitCode {
    fn from(s: std::process::ExitStatus) -> Self {
        s.code().map_or(ExitCode::Signal, ExitCode::Code)
    }
}

/// Per-rank outcome of a launch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaunchReport {
    pub exit_codes: Vec<ExitCode>,
}

impl LaunchReport {
    pub fn success(&self) -> bool {
        self.exit_codes.iter().all(|c| *c == ExitCode::Code(0))
    }

    /// Ranks that did not exit cleanly.
    pub fn failures(&self) -> Vec<(usize, ExitCode)> {
        self.exit_codes.iter().copied().enumerate().filter(|(_, c)| *c != ExitCode::Code(0)).collect()
    }

    /// 0 on success, else the first failing rank's code (2 for a signal).
    pub fn overall_code(&self) -> i32 {
        match self.failures().first() {
            None => 0,
            Some((_, ExitCode::Code(c))) => *c,
            Some((_, ExitCode::Signal)) => 2,
        }
    }
}

fn kill_all(children: &mut [Child]) {
    for c in children.iter_mut() {
        let _ = c.kill();
    }
    for c in children.iter_mut() {
        let _ = c.wait();
    }
}

/// Spawns `n` copies of `program args…`, serves their rendezvous, and waits
/// for all of them.
pub fn launch<S: AsRef<OsStr>>(
    n: usize,
    program: impl AsRef<OsStr>,
    args: &[S],
    timeout: Duration,
) -> Result<LaunchReport, LaunchError> {
    launch_with(n, program, args, timeout, |_, _| {})
}

/// [`launch`] with a hook that can adjust each rank's command (stdio,
/// extra environment) before it is spawned.
pub fn launch_with<S: AsRef<OsStr>>(
    n: usize,
    program: impl AsRef<OsStr>,
    args: &[S],
    timeout: Duration,
    mut configure: impl FnMut(usize, &mut Command),
) -> Result<LaunchReport, LaunchError> {
    if n == 0 {
        return Err(LaunchError::NoRanks);
    }
    let rendezvous = Rendezvous::bind()?;
    let addr = rendezvous.addr().to_string();

    let mut children = Vec::with_capacity(n);
    for rank in 0..n {
        let mut cmd = Command::new(program.as_ref());
        cmd.args(args)
            .env(ENV_SIZE, n.to_string())
            .env(ENV_RANK, rank.to_string())
            .env(ENV_RENDEZVOUS, &addr)
            .env(ENV_TIMEOUT, timeout.as_secs_f64().to_string());
        configure(rank, &mut cmd);
        let spawned = cmd.spawn();
        match spawned {
            Ok(c) => children.push(c),
            Err(source) => {
                kill_all(&mut children);
                return Err(LaunchError::Spawn { rank, source });
            }
        }
    }

    let mut early_exit = None;
    let served = rendezvous.serve(n, timeout, || {
        for (rank, child) in children.iter_mut().enumerate() {
            if let Some(status) = child.try_wait()? {
                early_exit = Some((rank, ExitCode::from(status)));
                return Err(CommError::Rendezvous(format!("rank {rank} exited early")));
            }
        }
        Ok(())
    });
    if let Err(e) = served {
        kill_all(&mut children);
        return Err(match early_exit {
            Some((rank, status)) => LaunchError::EarlyExit { rank, status },
            None => LaunchError::Rendezvous(e),
        });
    }

    let mut exit_codes = Vec::with_capacity(n);
    for child in children.iter_mut() {
        exit_codes.push(ExitCode::from(child.wait()?));
    }
    Ok(LaunchReport { exit_codes })
}
