//! Datasets: MNIST ingestion, synthetic teachers and CSV/IDX serialization.

use super::idx::{read_idx_expecting, write_idx, IdxArray, IdxData, IdxError, MAGIC_IMAGES, MAGIC_LABELS, TYPE_F64};
use crate::network::Targets;
use crate::sampling::{Purpose, SeededRng};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

/// Pixel divisor applied to MNIST bytes.
pub const DEFAULT_PIXEL_SCALE: f64 = 126.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Shape(String),
    #[error("{path}, row {row}: {message}")]
    Parse { path: PathBuf, row: usize, message: String },
    #[error("invalid teacher: {0}")]
    Teacher(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[n × p]`.
    pub inputs: Tensor,
    pub targets: Targets,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Targets, split: Split) -> Result<Self, DatasetError> {
        if inputs.shape().len() != 2 {
            return Err(DatasetError::Shape(format!("inputs must be a matrix, found shape {:?}", inputs.shape())));
        }
        if inputs.rows() != targets.len() {
            return Err(DatasetError::Shape(format!(
                "{} input rows but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        if !inputs.all_finite() {
            return Err(DatasetError::Shape("inputs contain non-finite values".into()));
        }
        if let Targets::Classes { labels, num_classes } = &targets {
            if let Some(&bad) = labels.iter().find(|&&l| l >= *num_classes) {
                return Err(DatasetError::Shape(format!("label {bad} is not below {num_classes}")));
            }
        }
        Ok(Self { inputs, targets, split })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Number of network outputs the targets need.
    pub fn output_dim(&self) -> usize {
        match &self.targets {
            Targets::Values(t) => t.cols(),
            Targets::Classes { num_classes, .. } => *num_classes,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(idx),
            targets: self.targets.select(idx),
            split: self.split,
        }
    }

    /// The first `n` rows after a seeded shuffle.
    pub fn subsample(&self, n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        SeededRng::for_purpose(seed, Purpose::Data, 0, 0, 1).shuffle(&mut idx);
        idx.truncate(n.min(self.len()));
        self.select(&idx)
    }
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor, DatasetError> {
    Tensor::matrix(rows, cols, data).map_err(|e| DatasetError::Shape(e.to_string()))
}

/// Divides every input by `pixel_scale`.
pub fn preprocess_mnist(raw: Dataset, pixel_scale: f64) -> Dataset {
    Dataset {
        inputs: raw.inputs.map(|v| v / pixel_scale),
        ..raw
    }
}

/// Raw MNIST images and labels as `f64` bytes with ten classes.
pub fn load_mnist_raw(images: &Path, labels: &Path, split: Split) -> Result<Dataset, DatasetError> {
    let img = read_idx_expecting(images, MAGIC_IMAGES)?;
    let lab = read_idx_expecting(labels, MAGIC_LABELS)?;
    let (n, p) = img.rows_cols();
    let IdxData::U8(label_bytes) = lab.data else {
        unreachable!("label magic implies bytes")
    };
    if label_bytes.len() != n {
        return Err(DatasetError::Shape(format!("{n} images but {} labels", label_bytes.len())));
    }
    let inputs = Tensor::new(vec![n, p], img.data.to_f64()).map_err(|e| DatasetError::Shape(e.to_string()))?;
    let targets = Targets::Classes {
        labels: label_bytes.iter().map(|&b| b as usize).collect(),
        num_classes: 10,
    };
    Dataset::new(inputs, targets, split)
}

pub fn load_mnist(images: &Path, labels: &Path, split: Split, pixel_scale: f64) -> Result<Dataset, DatasetError> {
    Ok(preprocess_mnist(load_mnist_raw(images, labels, split)?, pixel_scale))
}

/// Regression function `η₀ : [0,1]^p → ℝ` used to generate synthetic data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Teacher {
    /// `η₀(x) = value`.
    Constant { dim: usize, value: f64 },
    /// `η₀(x) = amplitude · mean_j sin(2π · frequency · x_j)`.
    Sin { dim: usize, amplitude: f64, frequency: f64 },
    /// `η₀(x) = amplitude · Π_j sin(π x_j)`.
    Product { dim: usize, amplitude: f64 },
    /// Random ReLU network with `active[l]` live nodes in hidden layer `l`.
    ///
    /// Each live node's incoming weights and bias are drawn uniformly and rescaled to
    /// an L1 norm of `bound`.
    SparseMlp {
        widths: Vec<usize>,
        active: Vec<usize>,
        bound: f64,
        seed: u64,
    },
}

impl Teacher {
    pub fn sin(dim: usize) -> Self {
        Teacher::Sin { dim, amplitude: 1.0, frequency: 1.0 }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Teacher::Constant { dim, .. } | Teacher::Sin { dim, .. } | Teacher::Product { dim, .. } => *dim,
            Teacher::SparseMlp { widths, .. } => widths[0],
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let err = |m: &str| Err(DatasetError::Teacher(m.into()));
        if self.input_dim() == 0 {
            return err("input dimension must be positive");
        }
        if let Teacher::SparseMlp { widths, active, bound, .. } = self {
            if widths.len() < 2 || *widths.last().unwrap() != 1 {
                return err("sparse-mlp widths need at least an input and a single output");
            }
            if active.len() != widths.len() - 2 {
                return err("sparse-mlp needs one active count per hidden layer");
            }
            if active.iter().zip(&widths[1..]).any(|(&a, &w)| a == 0 || a > w) {
                return err("active counts must lie in 1..=width");
            }
            if !(*bound > 0.0) {
                return err("bound must be positive");
            }
        }
        Ok(())
    }

    fn sparse_weights(widths: &[usize], active: &[usize], bound: f64, seed: u64) -> Vec<Tensor> {
        let mut rng = SeededRng::for_purpose(seed, Purpose::Data, 0, 0, 2);
        let layers = widths.len() - 1;
        (0..layers)
            .map(|l| {
                let (i, o) = (widths[l], widths[l + 1]);
                let live = if l + 1 < layers { active[l] } else { o };
                let mut w = Tensor::zeros(&[o, i + 1]);
                for j in 0..live {
                    let row: Vec<f64> = (0..=i).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
                    let norm: f64 = row.iter().map(|v| v.abs()).sum();
                    let d = w.data_mut();
                    for (k, v) in row.iter().enumerate() {
                        d[j * (i + 1) + k] = v * bound / norm;
                    }
                }
                w
            })
            .collect()
    }

    /// `η₀` at every row of `x`.
    pub fn eval(&self, x: &Tensor) -> Vec<f64> {
        let rows = (0..x.rows()).map(|r| x.row(r));
        match self {
            Teacher::Constant { value, .. } => vec![*value; x.rows()],
            Teacher::Sin { amplitude, frequency, .. } => rows
                .map(|r| amplitude * r.iter().map(|&v| (2.0 * PI * frequency * v).sin()).sum::<f64>() / r.len() as f64)
                .collect(),
            Teacher::Product { amplitude, .. } => rows.map(|r| amplitude * r.iter().map(|&v| (PI * v).sin()).product::<f64>()).collect(),
            Teacher::SparseMlp { widths, active, bound, seed } => {
                let weights = Self::sparse_weights(widths, active, *bound, *seed);
                rows.map(|r| {
                    let mut h = r.to_vec();
                    for (l, w) in weights.iter().enumerate() {
                        let next: Vec<f64> = (0..w.rows())
                            .map(|j| {
                                let wr = w.row(j);
                                let z = wr[0] + wr[1..].iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
                                if l + 1 < weights.len() {
                                    z.max(0.0)
                                } else {
                                    z
                                }
                            })
                            .collect();
                        h = next;
                    }
                    h[0]
                })
                .collect()
            }
        }
    }
}

impl FromStr for Teacher {
    type Err = DatasetError;

    /// Short forms: `constant:<dim>:<value>`, `sin:<dim>[:amplitude[:frequency]]`,
    /// `product:<dim>[:amplitude]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || DatasetError::Teacher(format!("cannot parse teacher '{s}'"));
        let num = |i: usize, default: Option<f64>| -> Result<f64, DatasetError> {
            match parts.get(i) {
                Some(v) => v.parse().map_err(|_| bad()),
                None => default.ok_or_else(bad),
            }
        };
        let dim = parts.get(1).ok_or_else(bad)?.parse::<usize>().map_err(|_| bad())?;
        let t = match parts[0] {
            "constant" if parts.len() <= 3 => Teacher::Constant { dim, value: num(2, None)? },
            "sin" if parts.len() <= 4 => Teacher::Sin {
                dim,
                amplitude: num(2, Some(1.0))?,
                frequency: num(3, Some(1.0))?,
            },
            "product" if parts.len() <= 3 => Teacher::Product { dim, amplitude: num(2, Some(1.0))? },
            _ => return Err(bad()),
        };
        t.validate()?;
        Ok(t)
    }
}

/// `x ~ U[0,1]^p` and `y = η₀(x) + N(0, noise_sigma²)` for a train and a test split.
pub fn gen_synthetic(
    teacher: &Teacher,
    n_train: usize,
    n_test: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DatasetError> {
    teacher.validate()?;
    if n_train < 2 {
        return Err(DatasetError::Shape(format!("need at least 2 training points, found {n_train}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(DatasetError::Shape(format!("noise sigma must be nonnegative, found {noise_sigma}")));
    }
    let p = teacher.input_dim();
    let make = |n: usize, split: Split, stream: u64| {
        let mut rng = SeededRng::for_purpose(seed, Purpose::Data, stream, 0, 0);
        let x = Tensor::from_fn(&[n, p], |_| rng.uniform());
        let y: Vec<f64> = teacher.eval(&x).into_iter().map(|m| m + noise_sigma * rng.standard_normal()).collect();
        Dataset::new(x, Targets::Values(mat(n, 1, y)?), split)
    };
    Ok((make(n_train, Split::Train, 1)?, make(n_test, Split::Test, 2)?))
}

/// Writes `x0,…,x{p−1}` followed by `y0,…` (regression) or `label`.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<(), DatasetError> {
    let csv_err = |source| DatasetError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let p = data.input_dim();
    let mut header: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    match &data.targets {
        Targets::Values(t) => header.extend((0..t.cols()).map(|j| format!("y{j}"))),
        Targets::Classes { .. } => header.push("label".into()),
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in 0..data.len() {
        let mut rec: Vec<String> = data.inputs.row(r).iter().map(|v| v.to_string()).collect();
        match &data.targets {
            Targets::Values(t) => rec.extend(t.row(r).iter().map(|v| v.to_string())),
            Targets::Classes { labels, .. } => rec.push(labels[r].to_string()),
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

/// Reads a file written by [`write_csv`]. Label files need `num_classes`.
pub fn read_csv(path: &Path, split: Split, num_classes: Option<usize>) -> Result<Dataset, DatasetError> {
    let csv_err = |source| DatasetError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let p = header.iter().take_while(|h| h.starts_with('x')).count();
    let labelled = header.last().is_some_and(|h| h == "label");
    let q = header.len() - p;
    if p == 0 || q == 0 || (labelled && q != 1) || (!labelled && !header[p..].iter().all(|h| h.starts_with('y'))) {
        return Err(DatasetError::Parse {
            path: path.to_path_buf(),
            row: 0,
            message: format!("unexpected header {header:?}"),
        });
    }
    let (mut xs, mut ys, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parse_err = |message: String| DatasetError::Parse { path: path.to_path_buf(), row: i + 1, message };
        if rec.len() != header.len() {
            return Err(parse_err(format!("{} fields, expected {}", rec.len(), header.len())));
        }
        for (j, f) in rec.iter().enumerate() {
            if labelled && j == p {
                labels.push(f.trim().parse::<usize>().map_err(|_| parse_err(format!("bad label '{f}'")))?);
            } else {
                let v: f64 = f.trim().parse().map_err(|_| parse_err(format!("bad number '{f}'")))?;
                if j < p {
                    xs.push(v);
                } else {
                    ys.push(v);
                }
            }
        }
    }
    let n = xs.len() / p;
    let inputs = mat(n, p, xs)?;
    let targets = if labelled {
        let num_classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        Targets::Classes { labels, num_classes }
    } else {
        Targets::Values(mat(n, q, ys)?)
    };
    Dataset::new(inputs, targets, split)
}

/// Writes `<stem>-x.idx[.gz]` (f64 `[n × p]`) and `<stem>-y.idx[.gz]` (f64 targets or byte labels).
pub fn write_idx_pair(dir: &Path, stem: &str, gz: bool, data: &Dataset) -> Result<(PathBuf, PathBuf), DatasetError> {
    let ext = if gz { "idx.gz" } else { "idx" };
    let (xp, yp) = (dir.join(format!("{stem}-x.{ext}")), dir.join(format!("{stem}-y.{ext}")));
    let dims = |r: usize, c: usize| vec![r as u32, c as u32];
    let x = IdxArray::new(dims(data.len(), data.input_dim()), IdxData::F64(data.inputs.data().to_vec()))?;
    let y = match &data.targets {
        Targets::Values(t) => IdxArray::new(dims(t.rows(), t.cols()), IdxData::F64(t.data().to_vec()))?,
        Targets::Classes { labels, .. } => {
            let bytes = labels
                .iter()
                .map(|&l| u8::try_from(l).map_err(|_| DatasetError::Shape(format!("label {l} does not fit a byte"))))
                .collect::<Result<Vec<u8>, _>>()?;
            IdxArray::new(vec![labels.len() as u32], IdxData::U8(bytes))?
        }
    };
    write_idx(&xp, &x)?;
    write_idx(&yp, &y)?;
    Ok((xp, yp))
}

/// Reads a pair written by [`write_idx_pair`], or raw MNIST files.
///
/// Byte images are flattened and divided by `pixel_scale`; f64 inputs are used as stored.
pub fn read_idx_pair(x_path: &Path, y_path: &Path, split: Split, pixel_scale: f64) -> Result<Dataset, DatasetError> {
    let x = super::idx::read_idx(x_path)?;
    let y = super::idx::read_idx(y_path)?;
    let (n, p) = x.rows_cols();
    let scale = if x.data.type_code() == TYPE_F64 { 1.0 } else { pixel_scale };
    let inputs = mat(n, p, x.data.to_f64().into_iter().map(|v| v / scale).collect())?;
    let targets = match y.data {
        IdxData::U8(bytes) if y.dims.len() == 1 => Targets::Classes {
            num_classes: bytes.iter().max().map_or(1, |&m| m as usize + 1).max(10),
            labels: bytes.into_iter().map(|b| b as usize).collect(),
        },
        data => {
            let (r, c) = IdxArray { dims: y.dims.clone(), data: IdxData::U8(vec![]) }.rows_cols();
            Targets::Values(mat(r, c.max(1), data.to_f64())?)
        }
    };
    Dataset::new(inputs, targets, split)
}
