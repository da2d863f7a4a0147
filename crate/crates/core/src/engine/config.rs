use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::forest::ForestParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Serial,
    Mc,
    Spmd,
    Hybrid,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Serial, Mode::Mc, Mode::Spmd, Mode::Hybrid];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Serial => "serial",
            Mode::Mc => "mc",
            Mode::Spmd => "spmd",
            Mode::Hybrid => "hybrid",
        }
    }

    pub fn is_distributed(&self) -> bool {
        matches!(self, Mode::Spmd | Mode::Hybrid)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| format!("unknown mode {s:?}; expected serial, mc, spmd or hybrid"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A labeled CSV in the letter-recognition layout.
    Csv(PathBuf),
    Synth {
        n: usize,
        p: usize,
        classes: usize,
    },
}

impl FromStr for DataSource {
    type Err = String;

    /// Parses the `n,p,c` form of a synthetic data source.
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [n, p, c] = parts[..] else {
            return Err(format!("synthetic data {s:?} must be given as n,p,c"));
        };
        let num = |v: &str| v.parse::<usize>().map_err(|_| format!("{v:?} in {s:?} is not a count"));
        Ok(DataSource::Synth { n: num(n)?, p: num(p)?, classes: num(c)? })
    }
}

/// Everything one engine run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    /// Threads per process in `mc` and `hybrid` modes.
    pub workers: usize,
    /// Process count in `spmd` and `hybrid` modes.
    pub ranks: usize,
    pub seed: u64,
    pub data: DataSource,
    pub test_frac: f64,
    pub params: ForestParams,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(mode: Mode, data: DataSource) -> Self {
        RunConfig {
            mode,
            workers: 1,
            ranks: 1,
            seed: 1,
            data,
            test_frac: 0.2,
            params: ForestParams::default(),
            out: None,
        }
    }

    pub fn n_trees(&self) -> usize {
        self.params.n_trees
    }

    pub fn with_trees(mut self, n_trees: usize) -> Self {
        self.params.n_trees = n_trees;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_ranks(mut self, ranks: usize) -> Self {
        self.ranks = ranks;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.workers == 0 {
            return Err("workers must be at least 1".into());
        }
        if self.ranks == 0 {
            return Err("ranks must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.test_frac) {
            return Err(format!("test fraction {} is outside [0, 1]", self.test_frac));
        }
        if self.params.n_trees == 0 {
            return Err("need at least one tree".into());
        }
        Ok(())
    }

    /// Hash of every field that must agree across ranks. The output path and
    /// the expected rank count are excluded.
    pub fn digest(&self) -> u64 {
        let canonical = format!(
            "{}|{}|{}|{:?}|{:016x}|{:?}",
            self.mode,
            self.workers,
            self.seed,
            self.data,
            self.test_frac.to_bits(),
            self.params
        );
        fnv1a(canonical.as_bytes())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// One benchmark observation; the CSV columns follow field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub mode: Mode,
    pub workers: usize,
    pub ranks: usize,
    pub trees: usize,
    pub seed: u64,
    pub train_time_s: f64,
    pub predict_time_s: f64,
    pub total_time_s: f64,
    pub accuracy: f64,
}

pub const CSV_HEADER: &str = "mode,workers,ranks,trees,seed,train_time_s,predict_time_s,total_time_s,accuracy";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_mode_and_synth() {
        assert_eq!("hybrid".parse::<Mode>().unwrap(), Mode::Hybrid);
        assert!("fork".parse::<Mode>().is_err());
        assert_eq!("500,8,4".parse::<DataSource>().unwrap(), DataSource::Synth { n: 500, p: 8, classes: 4 });
        assert!("500,8".parse::<DataSource>().is_err());
    }

    #[test]
    fn digest_ignores_output_path_only() {
        let a = RunConfig::new(Mode::Spmd, DataSource::Synth { n: 10, p: 2, classes: 2 });
        let mut b = a.clone();
        b.out = Some("x.csv".into());
        b.ranks = 4;
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), a.clone().with_seed(2).digest());
        assert_ne!(a.digest(), a.clone().with_trees(3).digest());
    }
}
