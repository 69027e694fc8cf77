//! From per-patch scores to a per-time-step anomaly score.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::features::PatchGrid;
use crate::npy;

/// Patch scores of one tile together with the patch layout they refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct TileScores {
    pub grid_shape: (usize, usize),
    pub tile_size: usize,
    pub tile_offset: usize,
    pub scores: Vec<f64>,
}

impl TileScores {
    pub fn new(grid: &PatchGrid, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != grid.patch_count() {
            return Err(Error::LengthMismatch {
                context: "patch scores vs patch grid".into(),
                expected: grid.patch_count(),
                found: scores.len(),
            });
        }
        Ok(Self {
            grid_shape: grid.grid_shape,
            tile_size: grid.tile_size,
            tile_offset: grid.tile_offset,
            scores,
        })
    }

    /// Nearest-neighbour upsampling of the patch scores to `n × n` pixels
    /// (row 0 = lowest frequency).
    pub fn pixel_map(&self) -> Array2<f64> {
        let (h, w) = self.grid_shape;
        let n = self.tile_size;
        let mut map = Array2::zeros((n, n));
        for r in 0..h {
            for c in 0..w {
                let v = self.scores[r * w + c];
                map.slice_mut(s![r * n / h..(r + 1) * n / h, c * n / w..(c + 1) * n / w])
                    .fill(v);
            }
        }
        map
    }
}

/// Pixel-level anomaly map over the whole series, `rows × T`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyMap {
    pub values: Array2<f64>,
}

/// Places every tile's pixel map at its time offset and keeps the maximum
/// where tiles overlap. Only the first `data_rows` frequency rows are kept.
pub fn assemble(tiles: &[TileScores], len: usize, data_rows: usize) -> Result<AnomalyMap> {
    let mut values = Array2::from_elem((data_rows, len), f64::NEG_INFINITY);
    for tile in tiles {
        let n = tile.tile_size;
        if tile.tile_offset + n > len || data_rows > n {
            return Err(Error::Internal(format!(
                "tile at {} of size {n} does not fit a {data_rows} × {len} map",
                tile.tile_offset
            )));
        }
        let map = tile.pixel_map();
        let mut dst = values.slice_mut(s![.., tile.tile_offset..tile.tile_offset + n]);
        dst.zip_mut_with(&map.slice(s![..data_rows, ..]), |a, &b| *a = a.max(b));
    }
    if values.iter().any(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::Internal("tiles do not cover the whole series".into()));
    }
    Ok(AnomalyMap { values })
}

/// Per-time-step score and the frequency row that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTrace {
    pub scores: Vec<f64>,
    /// Row of the maximum (earliest row on ties).
    pub peak_row: Vec<usize>,
}

impl AnomalyMap {
    pub fn collapse(&self) -> ScoreTrace {
        let (rows, len) = self.values.dim();
        let mut scores = Vec::with_capacity(len);
        let mut peak_row = Vec::with_capacity(len);
        for t in 0..len {
            let mut best = 0;
            for r in 1..rows {
                if self.values[[r, t]] > self.values[[best, t]] {
                    best = r;
                }
            }
            scores.push(self.values[[best, t]]);
            peak_row.push(best);
        }
        ScoreTrace { scores, peak_row }
    }
}

/// Overwrites the first and last `window` scores with `floor`.
pub fn edge_correct(scores: &mut [f64], floor: f64, window: usize) -> Result<()> {
    let len = scores.len();
    if len <= 2 * window {
        return Err(Error::SeriesTooShort(format!(
            "edge correction needs more than {} test samples, got {len}",
            2 * window
        )));
    }
    scores[..window].fill(floor);
    scores[len - window..].fill(floor);
    Ok(())
}

/// Smallest value over the assembled train and test scores.
pub fn edge_floor(train: &[f64], test: &[f64]) -> f64 {
    train
        .iter()
        .chain(test)
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn threshold(scores: &[f64], delta: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= delta)).collect()
}

/// `t,score[,freq]` with shortest round-trip float formatting.
pub fn scores_csv(scores: &[f64], freq: Option<&[f64]>) -> String {
    let mut out = String::with_capacity(scores.len() * 24);
    out.push_str(if freq.is_some() { "t,score,freq\n" } else { "t,score\n" });
    for (t, s) in scores.iter().enumerate() {
        match freq {
            Some(f) => writeln!(out, "{t},{s},{}", f[t]),
            None => writeln!(out, "{t},{s}"),
        }
        .expect("write to String");
    }
    out
}

pub fn write_scores_csv(path: &Path, scores: &[f64], freq: Option<&[f64]>) -> Result<()> {
    npy::write_atomic(path, scores_csv(scores, freq).as_bytes())
}

/// Reads the `score` column of a file written by [`write_scores_csv`]. A
/// headerless file with one numeric column is also accepted.
pub fn read_scores_csv(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let first = match records.next() {
        Some(r) => r.map_err(|e| bad_csv(path, e))?,
        None => return Err(Error::EmptyFile(path.to_path_buf())),
    };
    let (column, mut scores) = match first.iter().position(|f| f == "score") {
        Some(c) => (c, Vec::new()),
        None if first.len() == 1 => (0, vec![parse_score(path, 1, 1, &first[0])?]),
        None => {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                message: "no `score` column in header".into(),
            })
        }
    };
    for (i, record) in records.enumerate() {
        let record = record.map_err(|e| bad_csv(path, e))?;
        let field = record.get(column).ok_or_else(|| Error::RaggedRow {
            path: path.to_path_buf(),
            row: i + 2,
            found: record.len(),
            expected: column + 1,
        })?;
        scores.push(parse_score(path, i + 2, column + 1, field)?);
    }
    if scores.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(scores)
}

fn parse_score(path: &Path, row: usize, column: usize, field: &str) -> Result<f64> {
    field.parse().map_err(|_| Error::NonNumeric {
        path: path.to_path_buf(),
        row,
        column,
        field: field.to_string(),
    })
}

fn bad_csv(path: &Path, e: csv::Error) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}
