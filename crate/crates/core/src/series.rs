//! Multivariate series containers and file loaders.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npy;

/// A `D × T` real-valued series. Row `d` holds dimension `d` over time.
#[derive(Clone, Debug, PartialEq)]
pub struct MultivariateSeries {
    values: Array2<f64>,
    sampling_frequency: f64,
    name: String,
}

impl MultivariateSeries {
    /// Build a series from a `D × T` matrix, rejecting empty or non-finite input.
    pub fn new(values: Array2<f64>, name: impl Into<String>) -> Result<Self> {
        let (dims, len) = values.dim();
        if dims == 0 || len == 0 {
            return Err(Error::Degenerate(format!(
                "series must have D >= 1 and T >= 1 (got {dims} x {len})"
            )));
        }
        if let Some(((dim, step), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { dim, step });
        }
        Ok(Self {
            values,
            sampling_frequency: 1.0,
            name: name.into(),
        })
    }

    pub fn univariate(values: Vec<f64>, name: impl Into<String>) -> Result<Self> {
        let len = values.len();
        let arr = Array2::from_shape_vec((1, len), values)
            .map_err(|e| Error::Internal(e.to_string()))?;
        Self::new(arr, name)
    }

    pub fn with_sampling_frequency(mut self, hz: f64) -> Result<Self> {
        if !(hz.is_finite() && hz > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sampling frequency must be positive, got {hz}"
            )));
        }
        self.sampling_frequency = hz;
        Ok(self)
    }

    pub fn dims(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, dim: usize, step: usize) -> f64 {
        self.values[[dim, step]]
    }

    pub fn dimension(&self, dim: usize) -> ArrayView1<'_, f64> {
        self.values.row(dim)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn sampling_frequency(&self) -> f64 {
        self.sampling_frequency
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

/// Binary ground truth for a test series.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSeries {
    labels: Vec<u8>,
}

impl LabelSeries {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some((index, &v)) = labels.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::InvalidLabel {
                index,
                value: v as f64,
            });
        }
        Ok(Self { labels })
    }

    fn from_reals(values: &[f64]) -> Result<Self> {
        values
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                if v == 0.0 {
                    Ok(0)
                } else if v == 1.0 {
                    Ok(1)
                } else {
                    Err(Error::InvalidLabel { index, value: v })
                }
            })
            .collect::<Result<Vec<u8>>>()
            .map(|labels| Self { labels })
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Maximal runs of 1s as half-open `[start, end)` ranges.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (t, &l) in self.labels.iter().enumerate() {
            match (l, start) {
                (1, None) => start = Some(t),
                (0, Some(s)) => {
                    out.push((s, t));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, self.labels.len()));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub train: MultivariateSeries,
    pub test: MultivariateSeries,
    pub labels: LabelSeries,
    pub subdataset_id: String,
}

impl DatasetBundle {
    pub fn new(
        train: MultivariateSeries,
        test: MultivariateSeries,
        labels: LabelSeries,
        subdataset_id: impl Into<String>,
    ) -> Result<Self> {
        if train.dims() != test.dims() {
            return Err(Error::DimensionMismatch {
                context: "train and test series".into(),
                expected: train.dims(),
                found: test.dims(),
            });
        }
        if labels.len() != test.len() {
            return Err(Error::LengthMismatch {
                context: "labels vs test series".into(),
                expected: test.len(),
                found: labels.len(),
            });
        }
        Ok(Self {
            train,
            test,
            labels,
            subdataset_id: subdataset_id.into(),
        })
    }
}

/// File naming convention for a bundle directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleLayout {
    pub train: String,
    pub test: String,
    pub labels: String,
    /// Whether CSV files start with a header row.
    pub csv_header: bool,
}

impl Default for BundleLayout {
    fn default() -> Self {
        Self {
            train: "train".into(),
            test: "test".into(),
            labels: "labels".into(),
            csv_header: false,
        }
    }
}

fn read_csv_rows(path: &Path, has_header: bool) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut expected = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() == 1 && record.get(0) == Some("") {
            // blank line
            continue;
        }
        let fields = record.len();
        match expected {
            None => expected = Some(fields),
            Some(n) if n != fields => {
                return Err(Error::RaggedRow {
                    path: path.to_path_buf(),
                    row,
                    found: fields,
                    expected: n,
                })
            }
            _ => {}
        }
        let parsed = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.parse::<f64>().map_err(|_| Error::NonNumeric {
                    path: path.to_path_buf(),
                    row,
                    column: j + 1,
                    field: field.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Malformed {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("series")
        .to_string()
}

/// Load a CSV file whose rows are time steps and columns are dimensions.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<MultivariateSeries> {
    let path = path.as_ref();
    let rows = read_csv_rows(path, has_header)?;
    let len = rows.len();
    let dims = rows[0].len();
    let values = Array2::from_shape_fn((dims, len), |(d, t)| rows[t][d]);
    MultivariateSeries::new(values, file_stem(path))
}

/// Load an NPY array: 1-D is a univariate series, 2-D is `T × D` (row = time step).
pub fn load_npy(path: impl AsRef<Path>) -> Result<MultivariateSeries> {
    let path = path.as_ref();
    let arr = npy::read(path)?;
    if !arr.dtype.is_float() {
        return Err(Error::Npy(format!(
            "unsupported dtype {:?}: series must be float32 or float64",
            arr.dtype
        )));
    }
    let values = match arr.shape.as_slice() {
        [len] => Array2::from_shape_vec((1, *len), arr.data)
            .map_err(|e| Error::Internal(e.to_string()))?,
        [len, dims] => {
            let (len, dims) = (*len, *dims);
            Array2::from_shape_fn((dims, len), |(d, t)| arr.data[t * dims + d])
        }
        shape => {
            return Err(Error::Npy(format!(
                "expected a 1-D or 2-D array, found shape {shape:?}"
            )))
        }
    };
    MultivariateSeries::new(values, file_stem(path))
}

/// Load a series from `.csv` or `.npy`, chosen by extension.
pub fn load_series(path: impl AsRef<Path>, csv_header: bool) -> Result<MultivariateSeries> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("npy") => load_npy(path),
        _ => load_csv(path, csv_header),
    }
}

/// Load labels from a single-column CSV or a 1-D (or `T × 1`) NPY array.
pub fn load_labels(path: impl AsRef<Path>, csv_header: bool) -> Result<LabelSeries> {
    let path = path.as_ref();
    let values = match path.extension().and_then(|e| e.to_str()) {
        Some("npy") => {
            let arr = npy::read(path)?;
            match arr.shape.as_slice() {
                [_] | [_, 1] => arr.data,
                shape => {
                    return Err(Error::Npy(format!(
                        "labels must be 1-D, found shape {shape:?}"
                    )))
                }
            }
        }
        _ => {
            let rows = read_csv_rows(path, csv_header)?;
            if rows[0].len() != 1 {
                return Err(Error::DimensionMismatch {
                    context: format!("{}: label file columns", path.display()),
                    expected: 1,
                    found: rows[0].len(),
                });
            }
            rows.into_iter().map(|r| r[0]).collect()
        }
    };
    LabelSeries::from_reals(&values)
}

fn locate(dir: &Path, stem: &str, what: &'static str) -> Result<PathBuf> {
    ["csv", "npy"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::MissingFile {
            dir: dir.to_path_buf(),
            what,
        })
}

/// Load `<dir>/train.*`, `<dir>/test.*` and `<dir>/labels.*` and validate their shapes.
pub fn load_bundle(dir: impl AsRef<Path>, layout: &BundleLayout) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let train = load_series(locate(dir, &layout.train, "train")?, layout.csv_header)?;
    let test = load_series(locate(dir, &layout.test, "test")?, layout.csv_header)?;
    let labels = load_labels(locate(dir, &layout.labels, "labels")?, layout.csv_header)?;
    let id = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("bundle")
        .to_string();
    DatasetBundle::new(train, test, labels, id)
}

/// Write a series as CSV, one row per time step. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv(series: &MultivariateSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for t in 0..series.len() {
        for d in 0..series.dims() {
            if d > 0 {
                out.push(',');
            }
            out.push_str(&series.value(d, t).to_string());
        }
        out.push('\n');
    }
    npy::write_atomic(path.as_ref(), out.as_bytes())
}

pub fn write_labels_csv(labels: &LabelSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 2);
    for l in labels.as_slice() {
        out.push_str(if *l == 1 { "1\n" } else { "0\n" });
    }
    npy::write_atomic(path.as_ref(), out.as_bytes())
}
