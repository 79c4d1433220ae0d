//! Labeled samples, file ingestion and deterministic resampling.
//!
//! Features are stored densely, row-major, in one buffer. Sparse LIBSVM input
//! is densified when the dataset is assembled.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed::{self, Stream};

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "-1")]
    Neg,
    #[serde(rename = "+1")]
    Pos,
}

impl Label {
    pub fn sign<T: Real>(self) -> T {
        match self {
            Label::Pos => T::one(),
            Label::Neg => -T::one(),
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Label::Pos => 1,
            Label::Neg => -1,
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Pos => Label::Neg,
            Label::Neg => Label::Pos,
        }
    }

    /// Interprets a label token. `remap_01` switches to the {0,1} scheme.
    pub fn parse(token: &str, remap_01: bool) -> std::result::Result<Label, String> {
        let v: f64 = token
            .trim_start_matches('+')
            .parse()
            .map_err(|_| format!("label {token:?} is not numeric"))?;
        match (v, remap_01) {
            (1.0, false) => Ok(Label::Pos),
            (-1.0, false) => Ok(Label::Neg),
            (0.0, false) => Err("label 0 found; pass the 0/1 remap flag for {0,1} labels".into()),
            (1.0, true) => Ok(Label::Pos),
            (0.0, true) => Ok(Label::Neg),
            _ => Err(format!("label {token:?} outside {{-1,+1}}{}", if remap_01 { " (0/1 remap active)" } else { "" })),
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Pos => "+1",
            Label::Neg => "-1",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub features: Vec<T>,
    pub label: Label,
}

/// Immutable, densely stored dataset. Index `i` always refers to the same sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Dataset<T> {
    dim: usize,
    features: Vec<T>,
    labels: Vec<Label>,
}

impl<T: Real> Dataset<T> {
    pub fn new(dim: usize) -> Self {
        Dataset {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Builds from a row-major feature buffer.
    pub fn from_parts(dim: usize, features: Vec<T>, labels: Vec<Label>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("dimension must be positive".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::Input(format!(
                "{} feature values do not fill {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite feature in row {}", pos / dim)));
        }
        Ok(Dataset {
            dim,
            features,
            labels,
        })
    }

    pub fn from_samples(dim: usize, samples: Vec<Sample<T>>) -> Result<Self> {
        let mut out = Dataset::new(dim);
        out.features.reserve(dim * samples.len());
        for s in samples {
            out.push(&s.features, s.label)?;
        }
        Ok(out)
    }

    pub fn push(&mut self, features: &[T], label: Label) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::Input(format!(
                "sample has {} features, dataset dimension is {}",
                features.len(),
                self.dim
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite feature value".into()));
        }
        self.features.extend_from_slice(features);
        self.labels.push(label);
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn y(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> Sample<T> {
        Sample {
            features: self.x(i).to_vec(),
            label: self.y(i),
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[T], Label)> + '_ {
        self.features
            .chunks_exact(self.dim)
            .zip(self.labels.iter().copied())
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset<T> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.x(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            dim: self.dim,
            features,
            labels,
        }
    }

    /// (negatives, positives)
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == Label::Pos).count();
        (self.len() - pos, pos)
    }

    /// Uniform sample of `n` rows without replacement.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Dataset<T>> {
        let picked = subsample_indices(self.len(), n, seed)?;
        Ok(self.select(&picked))
    }

    /// Random split into a training part of `n_train` rows and the remainder.
    pub fn split(&self, n_train: usize, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
        if n_train > self.len() {
            return Err(Error::Size(format!(
                "cannot take {n_train} training rows from {}",
                self.len()
            )));
        }
        let mut rng = seed::rng(seed, Stream::Split, &[]);
        let perm = index::sample(&mut rng, self.len(), self.len()).into_vec();
        Ok((self.select(&perm[..n_train]), self.select(&perm[n_train..])))
    }
}

/// Indices of a uniform sample without replacement, deterministic in `seed`.
pub fn subsample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::Size(format!("cannot draw {n} samples from {len}")));
    }
    let mut rng = seed::rng(seed, Stream::Subsample, &[len as u64, n as u64]);
    Ok(index::sample(&mut rng, len, n).into_vec())
}

/// Per-feature affine map onto [-1, 1], fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MinMaxScaling<T> {
    pub min: Vec<T>,
    pub max: Vec<T>,
}

impl<T: Real> MinMaxScaling<T> {
    pub fn fit(data: &Dataset<T>) -> Self {
        let mut min = vec![T::infinity(); data.dim()];
        let mut max = vec![T::neg_infinity(); data.dim()];
        for (x, _) in data.rows() {
            for k in 0..x.len() {
                min[k] = min[k].min(x[k]);
                max[k] = max[k].max(x[k]);
            }
        }
        MinMaxScaling { min, max }
    }

    pub fn apply_point(&self, x: &mut [T]) {
        let two = T::lit(2.0);
        for k in 0..x.len() {
            let span = self.max[k] - self.min[k];
            x[k] = if span > T::zero() {
                two * (x[k] - self.min[k]) / span - T::one()
            } else {
                T::zero()
            };
        }
    }

    pub fn apply(&self, data: &Dataset<T>) -> Result<Dataset<T>> {
        if data.dim() != self.min.len() {
            return Err(Error::Config(format!(
                "scaling fitted for dimension {}, data has {}",
                self.min.len(),
                data.dim()
            )));
        }
        let mut features = data.features.clone();
        for row in features.chunks_exact_mut(data.dim()) {
            self.apply_point(row);
        }
        Dataset::from_parts(data.dim(), features, data.labels.clone())
    }
}

// ---------------------------------------------------------------------------
// Text formats

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Libsvm,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    First,
    Last,
}

#[derive(Debug, Clone, Copy)]
pub struct ReadOptions {
    pub format: Format,
    pub label_column: LabelColumn,
    pub remap_01: bool,
    /// Fixes the dimension of sparse input instead of using the largest index seen.
    pub dim: Option<usize>,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            format: Format::Libsvm,
            label_column: LabelColumn::First,
            remap_01: false,
            dim: None,
        }
    }
}

/// Sparse form of one LIBSVM line: label plus strictly increasing 1-based entries.
pub fn parse_libsvm_sparse<T: Real>(
    line: &str,
    line_no: usize,
    remap_01: bool,
) -> Result<(Label, Vec<(usize, T)>)> {
    let mut tokens = line.split_whitespace();
    let label_tok = tokens
        .next()
        .ok_or_else(|| Error::parse(line_no, "empty line"))?;
    let label = Label::parse(label_tok, remap_01).map_err(|m| Error::parse(line_no, m))?;
    let mut entries = Vec::new();
    let mut last = 0usize;
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| Error::parse(line_no, format!("malformed token {tok:?}")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad index in {tok:?}")))?;
        if idx == 0 {
            return Err(Error::parse(line_no, "indices are 1-based"));
        }
        if idx <= last {
            return Err(Error::parse(
                line_no,
                format!("index {idx} not strictly increasing (after {last})"),
            ));
        }
        let val: T = val
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad value in {tok:?}")))?;
        if !val.is_finite() {
            return Err(Error::parse(line_no, format!("non-finite value in {tok:?}")));
        }
        last = idx;
        entries.push((idx, val));
    }
    Ok((label, entries))
}

fn densify<T: Real>(entries: &[(usize, T)], dim: usize, line_no: usize) -> Result<Vec<T>> {
    let mut x = vec![T::zero(); dim];
    for &(idx, v) in entries {
        if idx > dim {
            return Err(Error::parse(
                line_no,
                format!("index {idx} exceeds dimension {dim}"),
            ));
        }
        x[idx - 1] = v;
    }
    Ok(x)
}

/// Parses one LIBSVM line into a dense sample of dimension `dim_hint`
/// (or the largest index on the line when no hint is given).
pub fn parse_libsvm<T: Real>(
    line: &str,
    line_no: usize,
    dim_hint: Option<usize>,
    remap_01: bool,
) -> Result<Sample<T>> {
    let (label, entries) = parse_libsvm_sparse::<T>(line, line_no, remap_01)?;
    let dim = dim_hint.unwrap_or_else(|| entries.last().map_or(0, |e| e.0));
    Ok(Sample {
        features: densify(&entries, dim, line_no)?,
        label,
    })
}

/// Parses one headerless CSV line.
pub fn parse_csv<T: Real>(
    line: &str,
    line_no: usize,
    label_column: LabelColumn,
    remap_01: bool,
) -> Result<Sample<T>> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 2 {
        return Err(Error::parse(line_no, "need a label and at least one feature"));
    }
    let (label_tok, feats) = match label_column {
        LabelColumn::First => (fields[0], &fields[1..]),
        LabelColumn::Last => (fields[fields.len() - 1], &fields[..fields.len() - 1]),
    };
    let label = Label::parse(label_tok, remap_01).map_err(|m| Error::parse(line_no, m))?;
    let features = feats
        .iter()
        .map(|f| {
            let v: T = f
                .parse()
                .map_err(|_| Error::parse(line_no, format!("non-numeric field {f:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(line_no, format!("non-finite field {f:?}")))
            }
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(Sample { features, label })
}

/// LIBSVM line holding only the nonzero features.
pub fn format_libsvm<T: Real>(features: &[T], label: Label) -> String {
    let mut s = label.to_string();
    for (k, v) in features.iter().enumerate() {
        if *v != T::zero() {
            let _ = write!(s, " {}:{}", k + 1, v);
        }
    }
    s
}

pub fn format_csv<T: Real>(features: &[T], label: Label, label_column: LabelColumn) -> String {
    let feats = features
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",");
    match label_column {
        LabelColumn::First => format!("{},{feats}", label.as_i8()),
        LabelColumn::Last => format!("{feats},{}", label.as_i8()),
    }
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// Parses a whole text buffer. Blank lines and `#` comments are skipped.
pub fn parse_text<T: Real>(text: impl BufRead, opts: &ReadOptions) -> Result<Dataset<T>> {
    match opts.format {
        Format::Libsvm => {
            let mut rows = Vec::new();
            let mut max_idx = 0;
            for (i, line) in text.lines().enumerate() {
                let line = line?;
                if is_skippable(&line) {
                    continue;
                }
                let (label, entries) = parse_libsvm_sparse::<T>(&line, i + 1, opts.remap_01)?;
                max_idx = max_idx.max(entries.last().map_or(0, |e| e.0));
                rows.push((i + 1, label, entries));
            }
            let dim = opts.dim.unwrap_or(max_idx).max(1);
            let mut data = Dataset::new(dim);
            data.features.reserve(dim * rows.len());
            for (line_no, label, entries) in rows {
                let x = densify(&entries, dim, line_no)?;
                data.features.extend_from_slice(&x);
                data.labels.push(label);
            }
            Ok(data)
        }
        Format::Csv => {
            let mut data: Option<Dataset<T>> = None;
            for (i, line) in text.lines().enumerate() {
                let line = line?;
                if is_skippable(&line) {
                    continue;
                }
                let s = parse_csv::<T>(&line, i + 1, opts.label_column, opts.remap_01)?;
                let d = data.get_or_insert_with(|| Dataset::new(s.features.len()));
                if s.features.len() != d.dim {
                    return Err(Error::parse(
                        i + 1,
                        format!("{} features, expected {}", s.features.len(), d.dim),
                    ));
                }
                d.features.extend_from_slice(&s.features);
                d.labels.push(s.label);
            }
            Ok(data.unwrap_or_else(|| Dataset::new(opts.dim.unwrap_or(1))))
        }
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let f = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(f)))
    } else {
        Ok(Box::new(f))
    }
}

/// Reads a dataset file; `.gz` files are decompressed transparently.
pub fn read_dataset<T: Real>(path: &Path, opts: &ReadOptions) -> Result<Dataset<T>> {
    let reader = BufReader::new(open_maybe_gz(path)?);
    parse_text(reader, opts)
}

pub fn write_dataset<T: Real>(
    path: &Path,
    data: &Dataset<T>,
    format: Format,
    label_column: LabelColumn,
) -> Result<()> {
    let f = File::create(path)?;
    let mut w: Box<dyn Write> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzEncoder::new(f, flate2::Compression::default()))
    } else {
        Box::new(std::io::BufWriter::new(f))
    };
    for (x, y) in data.rows() {
        let line = match format {
            Format::Libsvm => format_libsvm(x, y),
            Format::Csv => format_csv(x, y, label_column),
        };
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}
