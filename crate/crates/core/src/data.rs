//! Datasets, the labeled CSV layout, synthetic data and the train/test split.
//!
//! Row and label indices are 0-based everywhere. On disk, labels are capital
//! letters: `A` is class 0, `B` class 1 and so on.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::rng::{RngStream, SampleError};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Open { path: PathBuf, source: io::Error },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: expected {expected} fields, found {found}")]
    Arity { line: usize, expected: usize, found: usize },
    #[error("line {line}, field {field}: {message}")]
    Field { line: usize, field: usize, message: String },
    #[error("line {line}: label {label:?} is outside A..{last}")]
    Label { line: usize, label: String, last: char },
    #[error("no data rows")]
    Empty,
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Shape of a labeled CSV file: one label letter then `n_features` integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvFormat {
    pub n_features: usize,
    pub n_classes: usize,
}

impl CsvFormat {
    /// The UCI letter-recognition layout: 16 features, classes A..Z.
    pub const LETTER: CsvFormat = CsvFormat { n_features: 16, n_classes: 26 };
}

/// A dense row-major feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u32>,
    n_features: usize,
    n_classes: usize,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<u32>, n_features: usize, n_classes: usize) -> Result<Self, DataError> {
        if n_features == 0 {
            return Err(DataError::Invalid("dataset needs at least one feature".into()));
        }
        if n_classes < 2 {
            return Err(DataError::Invalid("dataset needs at least two classes".into()));
        }
        if labels.is_empty() {
            return Err(DataError::Empty);
        }
        if features.len() != labels.len() * n_features {
            return Err(DataError::Invalid(format!(
                "{} feature values do not fill {} rows of {} columns",
                features.len(),
                labels.len(),
                n_features
            )));
        }
        if let Some(row) = labels.iter().position(|&l| l as usize >= n_classes) {
            return Err(DataError::Invalid(format!(
                "row {row} has label {} but there are {n_classes} classes",
                labels[row]
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Invalid(format!("non-finite value in row {}", i / n_features)));
        }
        Ok(Dataset { features, labels, n_features, n_classes, feature_names: None })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self, DataError> {
        if names.len() != self.n_features {
            return Err(DataError::Invalid(format!("{} names for {} features", names.len(), self.n_features)));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.n_features + feature]
    }

    /// Copies the listed rows into a row-major matrix.
    pub fn gather_rows(&self, rows: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * self.n_features);
        for &r in rows {
            out.extend_from_slice(self.row(r));
        }
        out
    }

    pub fn gather_labels(&self, rows: &[usize]) -> Vec<u32> {
        rows.iter().map(|&r| self.labels[r]).collect()
    }

    /// A new dataset holding only the listed rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.gather_rows(rows),
            labels: self.gather_labels(rows),
            n_features: self.n_features,
            n_classes: self.n_classes,
            feature_names: self.feature_names.clone(),
        }
    }

    /// The most frequent label (lowest class on ties).
    pub fn majority_class(&self) -> u32 {
        let mut counts = vec![0usize; self.n_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        argmax_lowest(&counts) as u32
    }
}

pub(crate) fn argmax_lowest<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn label_char(class: u32) -> char {
    char::from(b'A' + class as u8)
}

pub fn load_dataset(path: impl AsRef<Path>, format: CsvFormat) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Open { path: path.to_path_buf(), source })?;
    read_dataset(BufReader::new(file), format)
}

/// Parses the labeled CSV layout. Blank lines are skipped; CRLF is accepted.
pub fn read_dataset<R: Read>(reader: R, format: CsvFormat) -> Result<Dataset, DataError> {
    if format.n_classes > 26 {
        return Err(DataError::Invalid("letter labels support at most 26 classes".into()));
    }
    let last = label_char(format.n_classes as u32 - 1);
    let expected = format.n_features + 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(DataError::Arity { line: line_no, expected, found: fields.len() });
        }
        let label = fields[0].trim();
        let class = match label.as_bytes() {
            [b] if b.is_ascii_uppercase() && ((b - b'A') as usize) < format.n_classes => (b - b'A') as u32,
            _ => return Err(DataError::Label { line: line_no, label: label.to_string(), last }),
        };
        for (j, field) in fields[1..].iter().enumerate() {
            let v: i64 = field.trim().parse().map_err(|e| DataError::Field {
                line: line_no,
                field: j + 2,
                message: format!("{field:?} is not an integer ({e})"),
            })?;
            features.push(v as f64);
        }
        labels.push(class);
    }
    if labels.is_empty() {
        return Err(DataError::Empty);
    }
    Dataset::new(features, labels, format.n_features, format.n_classes)
}

/// Writes `ds` in the labeled CSV layout. Feature values must be integral.
pub fn write_dataset<W: Write>(ds: &Dataset, writer: W) -> Result<(), DataError> {
    if ds.n_classes() > 26 {
        return Err(DataError::Invalid("letter labels support at most 26 classes".into()));
    }
    let mut w = BufWriter::new(writer);
    for i in 0..ds.n_rows() {
        write!(w, "{}", label_char(ds.labels()[i]))?;
        for &v in ds.row(i) {
            if v.fract() != 0.0 {
                return Err(DataError::Invalid(format!("row {i} has non-integral value {v}")));
            }
            write!(w, ",{}", v as i64)?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// A labeled dataset with `n_classes` overlapping clusters of small integers.
///
/// Each class has its own mean vector; rows are the rounded sum of their
/// class mean and uniform noise. The first `n_classes` rows hold every class
/// once, in a random order.
pub fn synth_dataset(n: usize, p: usize, n_classes: usize, stream: &mut RngStream) -> Result<Dataset, DataError> {
    if n_classes < 2 || n < n_classes || p == 0 {
        return Err(DataError::Invalid(format!(
            "synthetic data needs n >= classes >= 2 and p >= 1 (got n={n}, p={p}, classes={n_classes})"
        )));
    }
    if n_classes > 26 {
        return Err(DataError::Invalid("synthetic data supports at most 26 classes".into()));
    }
    let mut means = vec![0.0; n_classes * p];
    for c in 0..n_classes {
        for j in 0..p {
            means[c * p + j] = 12.0 * stream.uniform();
        }
        // A class-specific offset on one coordinate keeps the means distinct.
        means[c * p + c % p] += 6.0 * (c / p + 1) as f64;
    }
    let order = stream.sample_without_replacement(n_classes, n_classes).expect("k == m");
    let mut labels = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * p);
    for i in 0..n {
        let class = order.get(i).copied().unwrap_or_else(|| stream.rand_below(n_classes as u64) as usize);
        for j in 0..p {
            let noise = 20.0 * stream.uniform() - 10.0;
            features.push((means[class * p + j] + noise).round());
        }
        labels.push(class as u32);
    }
    Dataset::new(features, labels, p, n_classes)
}

/// Sorted, disjoint row indices covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainTestSplit {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Draws `round(n * test_frac)` test rows without replacement from `stream`.
pub fn train_test_split(n: usize, test_frac: f64, stream: &mut RngStream) -> Result<TrainTestSplit, DataError> {
    if !(0.0..=1.0).contains(&test_frac) {
        return Err(DataError::Invalid(format!("test fraction {test_frac} is outside [0, 1]")));
    }
    let n_test = (n as f64 * test_frac).round() as usize;
    let mut test =
        stream.sample_without_replacement(n, n_test).map_err(|e: SampleError| DataError::Invalid(e.to_string()))?;
    test.sort_unstable();
    let mut in_test = vec![false; n];
    for &t in &test {
        in_test[t] = true;
    }
    let train = (0..n).filter(|&i| !in_test[i]).collect();
    Ok(TrainTestSplit { train_indices: train, test_indices: test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{make_stream, StreamKey};
    use proptest::prelude::*;

    fn row(label: char, v: i64) -> String {
        let mut s = label.to_string();
        for _ in 0..16 {
            s.push_str(&format!(",{v}"));
        }
        s
    }

    #[test]
    fn three_row_fixture() {
        let text = format!("{}\n{}\r\n{}\n", row('A', 1), row('B', 2), row('A', 3));
        let ds = read_dataset(text.as_bytes(), CsvFormat::LETTER).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.n_features(), 16);
        assert_eq!(ds.n_classes(), 26);
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.row(2), &[3.0; 16]);
    }

    #[test]
    fn short_row_names_line() {
        let short = format!("C{}", ",1".repeat(15));
        let text = format!("{}\n{}\n", row('A', 1), short);
        match read_dataset(text.as_bytes(), CsvFormat::LETTER) {
            Err(DataError::Arity { line: 2, expected: 17, found: 16 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_label_and_field() {
        let text = row('a', 1);
        assert!(matches!(read_dataset(text.as_bytes(), CsvFormat::LETTER), Err(DataError::Label { line: 1, .. })));
        let text = format!("{}\nB,1,2,x,4,5,6,7,8,9,10,11,12,13,14,15,16\n", row('A', 0));
        match read_dataset(text.as_bytes(), CsvFormat::LETTER) {
            Err(DataError::Field { line: 2, field: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(load_dataset("/definitely/not/here.data", CsvFormat::LETTER), Err(DataError::Open { .. })));
    }

    #[test]
    fn split_counts() {
        let mut s = make_stream(1, StreamKey::split());
        let split = train_test_split(20_000, 0.2, &mut s).unwrap();
        assert_eq!(split.test_indices.len(), 4000);
        assert_eq!(split.train_indices.len(), 16_000);

        let split = train_test_split(10, 0.2, &mut make_stream(1, StreamKey::split())).unwrap();
        assert_eq!((split.test_indices.len(), split.train_indices.len()), (2, 8));

        let split = train_test_split(10, 0.0, &mut make_stream(1, StreamKey::split())).unwrap();
        assert!(split.test_indices.is_empty());
        assert_eq!(split.train_indices, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_differs_across_seeds() {
        let mut differ = 0;
        for seed in 0..100u64 {
            let a = train_test_split(50, 0.2, &mut make_stream(seed, StreamKey::split())).unwrap();
            let b = train_test_split(50, 0.2, &mut make_stream(seed + 1000, StreamKey::split())).unwrap();
            if a != b {
                differ += 1;
            }
        }
        assert!(differ >= 1);
    }

    #[test]
    fn synth_determinism_and_coverage() {
        let a = synth_dataset(100, 4, 3, &mut make_stream(5, StreamKey::synth())).unwrap();
        let b = synth_dataset(100, 4, 3, &mut make_stream(5, StreamKey::synth())).unwrap();
        assert_eq!(a, b);

        let tiny = synth_dataset(3, 1, 3, &mut make_stream(5, StreamKey::synth())).unwrap();
        let mut l = tiny.labels().to_vec();
        l.sort_unstable();
        assert_eq!(l, vec![0, 1, 2]);

        assert!(synth_dataset(2, 1, 3, &mut make_stream(5, StreamKey::synth())).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = synth_dataset(60, 5, 4, &mut make_stream(9, StreamKey::synth())).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(&buf[..], CsvFormat { n_features: 5, n_classes: 4 }).unwrap();
        assert_eq!(back, ds);
    }

    proptest! {
        #[test]
        fn split_partitions_rows(n in 0usize..2000, frac in 0.0f64..=1.0, seed in any::<u64>()) {
            let s1 = train_test_split(n, frac, &mut make_stream(seed, StreamKey::split())).unwrap();
            let s2 = train_test_split(n, frac, &mut make_stream(seed, StreamKey::split())).unwrap();
            prop_assert_eq!(&s1, &s2);
            prop_assert_eq!(s1.test_indices.len(), (n as f64 * frac).round() as usize);
            let mut all: Vec<usize> = s1.train_indices.iter().chain(&s1.test_indices).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
