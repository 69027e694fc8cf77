//! Coreset memory bank of nominal patch features and the reweighted
//! nearest-neighbour patch score.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npy;

pub const DEFAULT_CORESET_RATIO: f64 = 0.01;
pub const DEFAULT_NEIGHBORS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryBankParams {
    pub coreset_ratio: f64,
    pub neighbors: usize,
    /// When false the patch score is the plain nearest-neighbour distance.
    pub reweight: bool,
}

impl Default for MemoryBankParams {
    fn default() -> Self {
        Self {
            coreset_ratio: DEFAULT_CORESET_RATIO,
            neighbors: DEFAULT_NEIGHBORS,
            reweight: true,
        }
    }
}

impl MemoryBankParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.coreset_ratio > 0.0 && self.coreset_ratio <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "coreset ratio must lie in (0, 1], got {}",
                self.coreset_ratio
            )));
        }
        if self.neighbors == 0 {
            return Err(Error::InvalidParameter("neighbor count must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn coreset_size(pool: usize, ratio: f64) -> usize {
    ((ratio * pool as f64).round() as usize).clamp(1, pool.max(1))
}

#[inline]
pub fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy farthest-first traversal. Starts from the point nearest the pool
/// mean; every tie (start point or farthest point) goes to the lowest index.
/// Returns selected row indices in selection order.
pub fn greedy_coreset(pool: ArrayView2<'_, f64>, m: usize) -> Result<Vec<usize>> {
    let n = pool.nrows();
    if n == 0 {
        return Err(Error::Degenerate("empty feature pool".into()));
    }
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!(
            "coreset size {m} outside 1..={n}"
        )));
    }
    let mean = pool.mean_axis(ndarray::Axis(0)).expect("non-empty pool");
    let to_mean: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| sq_dist(pool.row(i), mean.view()))
        .collect();
    let start = argmin_first(&to_mean);

    let mut selected = Vec::with_capacity(m);
    selected.push(start);
    let mut min_dist: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| sq_dist(pool.row(i), pool.row(start)))
        .collect();
    while selected.len() < m {
        let next = argmax_first(&min_dist);
        selected.push(next);
        let centre = pool.row(next);
        min_dist.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = sq_dist(pool.row(i), centre);
            if nd < *d {
                *d = nd;
            }
        });
    }
    Ok(selected)
}

fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` rows of `bank` closest to `query`, nearest first,
/// ties broken by lower index. Exact brute force.
pub fn k_nearest(bank: ArrayView2<'_, f64>, query: ArrayView1<'_, f64>, k: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = (0..bank.nrows())
        .map(|j| (j, sq_dist(bank.row(j), query).sqrt()))
        .collect();
    let k = k.min(d.len());
    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if k < d.len() {
        d.select_nth_unstable_by(k, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d
}

/// Score of a single patch given its nearest bank entry `m*` at distance `s*`
/// and the distances from the query to the `b` bank entries closest to `m*`
/// (`m*` included). The weight `1 - exp(s*) / Σ exp(d)` shrinks the score of
/// patches whose nearest neighbour sits in a dense part of the bank.
pub fn reweight(s_star: f64, neighbour_dists: &[f64]) -> f64 {
    if neighbour_dists.len() <= 1 {
        return s_star;
    }
    let peak = neighbour_dists.iter().copied().fold(s_star, f64::max);
    let denom: f64 = neighbour_dists.iter().map(|&d| (d - peak).exp()).sum();
    let weight = 1.0 - (s_star - peak).exp() / denom;
    weight * s_star
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    features: Array2<f64>,
    params: MemoryBankParams,
    pool_size: usize,
    /// For each bank entry, its `b` nearest bank entries (itself included).
    neighbourhoods: Vec<Vec<usize>>,
}

fn neighbourhoods(features: &Array2<f64>, b: usize) -> Vec<Vec<usize>> {
    (0..features.nrows())
        .into_par_iter()
        .map(|j| {
            k_nearest(features.view(), features.row(j), b)
                .into_iter()
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct BankHeader {
    params: MemoryBankParams,
    pool_size: usize,
    rows: usize,
    channels: usize,
}

impl MemoryBank {
    /// Subsamples `pool` (`N × C`) to `max(1, round(ratio · N))` rows.
    pub fn build(pool: ArrayView2<'_, f64>, params: MemoryBankParams) -> Result<Self> {
        params.validate()?;
        let m = coreset_size(pool.nrows(), params.coreset_ratio);
        let idx = greedy_coreset(pool, m)?;
        let features = pool.select(ndarray::Axis(0), &idx);
        let hoods = neighbourhoods(&features, params.neighbors);
        Ok(Self {
            features,
            params,
            pool_size: pool.nrows(),
            neighbourhoods: hoods,
        })
    }

    pub fn from_parts(features: Array2<f64>, params: MemoryBankParams) -> Result<Self> {
        params.validate()?;
        if features.nrows() == 0 {
            return Err(Error::Degenerate("empty memory bank".into()));
        }
        let pool_size = features.nrows();
        let hoods = neighbourhoods(&features, params.neighbors);
        Ok(Self {
            features,
            params,
            pool_size,
            neighbourhoods: hoods,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn params(&self) -> &MemoryBankParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn channels(&self) -> usize {
        self.features.ncols()
    }

    /// Index of the nearest bank entry (lowest index on ties) and its distance.
    pub fn nearest(&self, query: ArrayView1<'_, f64>) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, row) in self.features.outer_iter().enumerate() {
            let d = sq_dist(row, query);
            if d < best.1 {
                best = (j, d);
            }
        }
        (best.0, best.1.sqrt())
    }

    /// Bank entries whose distances enter the weight of a patch matched to `m`.
    pub fn neighbourhood(&self, m: usize) -> &[usize] {
        &self.neighbourhoods[m]
    }

    pub fn score_patch(&self, query: ArrayView1<'_, f64>) -> f64 {
        let (m_star, s_star) = self.nearest(query);
        if !self.params.reweight {
            return s_star;
        }
        let dists: Vec<f64> = self.neighbourhoods[m_star]
            .iter()
            .map(|&j| sq_dist(self.features.row(j), query).sqrt())
            .collect();
        reweight(s_star, &dists)
    }

    pub fn score(&self, queries: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if queries.ncols() != self.channels() {
            return Err(Error::DimensionMismatch {
                context: "patch feature width vs memory bank".into(),
                expected: self.channels(),
                found: queries.ncols(),
            });
        }
        Ok((0..queries.nrows())
            .into_par_iter()
            .map(|i| self.score_patch(queries.row(i)))
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (rows, channels) = self.features.dim();
        npy::write_f64(
            dir.join("memory_bank.npy"),
            &[rows, channels],
            self.features.as_standard_layout().as_slice().expect("standard layout"),
        )?;
        let header = BankHeader {
            params: self.params,
            pool_size: self.pool_size,
            rows,
            channels,
        };
        npy::write_atomic(
            &dir.join("memory_bank.json"),
            serde_json::to_string_pretty(&header)?.as_bytes(),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let json_path = dir.join("memory_bank.json");
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let header: BankHeader = serde_json::from_str(&text)?;
        let arr = npy::read(dir.join("memory_bank.npy"))?;
        if arr.shape != [header.rows, header.channels] {
            return Err(Error::Npy(format!(
                "memory bank shape {:?} disagrees with header ({}, {})",
                arr.shape, header.rows, header.channels
            )));
        }
        let features = Array2::from_shape_vec((header.rows, header.channels), arr.data)
            .expect("shape checked");
        let mut bank = Self::from_parts(features, header.params)?;
        bank.pool_size = header.pool_size;
        Ok(bank)
    }
}
