//! Collapse the `D` normalized scalograms of each wavelet into one `T × Ω̂`
//! matrix, either by a component-wise PCA fitted on training data or by
//! averaging a Latin-hypercube-selected subset of dimensions per frequency.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cwt::ScalogramStack;
use crate::error::{Error, Result};
use crate::npy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingMethod {
    Pca,
    #[serde(alias = "rm")]
    Random,
}

/// One wavelet's aggregated scalogram, rows = time, columns = Ω̂.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedScalogram {
    pub data: Array2<f64>,
    pub method: MappingMethod,
}

impl AggregatedScalogram {
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }
}

fn require_normalized(stack: &ScalogramStack) -> Result<()> {
    if stack.is_normalized() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(
            "aggregation expects a normalized scalogram stack".into(),
        ))
    }
}

/// Concatenate the `D` slices of wavelet `i` along frequency: `T × (D·Ω)`.
fn concat_slices(stack: &ScalogramStack, i: usize) -> Array2<f64> {
    let (dims, len, freqs) = (stack.dims(), stack.len(), stack.frequency_count());
    let mut out = Array2::zeros((len, dims * freqs));
    for d in 0..dims {
        out.slice_mut(s![.., d * freqs..(d + 1) * freqs])
            .assign(&stack.slice(i, d));
    }
    out
}

/// Frequency points for the PCA path: `min(n, ⌊T/D⌋)`.
pub fn pca_frequency_points(window: usize, train_len: usize, dims: usize) -> Result<usize> {
    let per_dim = train_len / dims.max(1);
    if per_dim < 2 {
        return Err(Error::SeriesTooShort(format!(
            "PCA mapping needs at least 2 frequency points per dimension, but T/D = {train_len}/{dims} < 2"
        )));
    }
    Ok(window.min(per_dim))
}

/// Output width of the PCA path: `min(n, D·Ω, T)`.
pub fn pca_output_width(window: usize, dims: usize, freqs: usize, train_len: usize) -> usize {
    window.min(dims * freqs).min(train_len)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaMap {
    /// Per-feature training mean, length `D·Ω`.
    pub mean: Array1<f64>,
    /// `(D·Ω) × Ω̂`, columns ordered by descending eigenvalue.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
}

/// Fit a mean-centred PCA on the concatenated training scalograms of wavelet `i`.
///
/// Components are the leading eigenvectors of the sample covariance (denominator
/// `T - 1`); each column is signed so that its largest-magnitude entry is positive.
pub fn fit_pca_map(stack: &ScalogramStack, wavelet: usize, width: usize) -> Result<PcaMap> {
    require_normalized(stack)?;
    if wavelet >= stack.wavelet_count() {
        return Err(Error::InvalidParameter(format!(
            "wavelet index {wavelet} out of range"
        )));
    }
    let data = concat_slices(stack, wavelet);
    let (rows, features) = data.dim();
    if width == 0 || width > features.min(rows) {
        return Err(Error::InvalidParameter(format!(
            "PCA output width {width} must be in 1..={} (min of D*Omega = {features} and T = {rows})",
            features.min(rows)
        )));
    }
    if rows < 2 {
        return Err(Error::SeriesTooShort(
            "PCA needs at least two time steps".into(),
        ));
    }

    let mean = data.mean_axis(Axis(0)).expect("rows >= 2");
    let centred = &data - &mean;
    let cov = centred.t().dot(&centred) / (rows - 1) as f64;
    let trace: f64 = cov.diag().sum();
    if trace <= 0.0 {
        return Err(Error::Degenerate(
            "training scalograms are constant over time (zero covariance); PCA is undefined"
                .into(),
        ));
    }

    let (values, vectors) = symmetric_eigen(&cov);
    let mut order: Vec<usize> = (0..features).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut components = Array2::zeros((features, width));
    let mut explained_variance = Vec::with_capacity(width);
    for (col, &src) in order.iter().take(width).enumerate() {
        let mut v = vectors.column(src).to_owned();
        let pivot = v
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.abs().total_cmp(&b.abs()).then(ib.cmp(ia)))
            .map(|(_, &x)| x)
            .unwrap_or(1.0);
        if pivot < 0.0 {
            v.mapv_inplace(|x| -x);
        }
        components.column_mut(col).assign(&v);
        explained_variance.push(values[src].max(0.0));
    }

    Ok(PcaMap {
        mean,
        components,
        explained_variance,
    })
}

/// Eigen-decomposition of a symmetric matrix: (eigenvalues, eigenvectors as columns).
fn symmetric_eigen(cov: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = cov.nrows();
    let m = DMatrix::from_fn(n, n, |r, c| 0.5 * (cov[[r, c]] + cov[[c, r]]));
    let eig = SymmetricEigen::new(m);
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, c)]);
    (eig.eigenvalues.iter().copied().collect(), vectors)
}

impl PcaMap {
    pub fn input_width(&self) -> usize {
        self.mean.len()
    }

    pub fn output_width(&self) -> usize {
        self.components.ncols()
    }

    /// Project rows of a `T × (D·Ω)` matrix.
    pub fn project(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.input_width() {
            return Err(Error::DimensionMismatch {
                context: "PCA input feature width".into(),
                expected: self.input_width(),
                found: rows.ncols(),
            });
        }
        Ok((&rows - &self.mean).dot(&self.components))
    }

    pub fn save(&self, dir: &Path, prefix: &str) -> Result<()> {
        let mean = self.mean.to_vec();
        npy::write_f64(dir.join(format!("{prefix}_mean.npy")), &[mean.len()], &mean)?;
        let comps = self.components.as_standard_layout().to_owned();
        npy::write_f64(
            dir.join(format!("{prefix}_components.npy")),
            &[comps.nrows(), comps.ncols()],
            comps.as_slice().unwrap(),
        )?;
        npy::write_f64(
            dir.join(format!("{prefix}_explained_variance.npy")),
            &[self.explained_variance.len()],
            &self.explained_variance,
        )
    }

    pub fn load(dir: &Path, prefix: &str) -> Result<Self> {
        let mean = npy::read(dir.join(format!("{prefix}_mean.npy")))?;
        let comps = npy::read(dir.join(format!("{prefix}_components.npy")))?;
        let ev = npy::read(dir.join(format!("{prefix}_explained_variance.npy")))?;
        let [rows, cols] = comps.shape[..] else {
            return Err(Error::Npy("PCA components must be 2-D".into()));
        };
        if rows != mean.data.len() || cols != ev.data.len() {
            return Err(Error::DimensionMismatch {
                context: "saved PCA map arrays".into(),
                expected: rows,
                found: mean.data.len(),
            });
        }
        Ok(Self {
            mean: Array1::from(mean.data),
            components: Array2::from_shape_vec((rows, cols), comps.data)
                .map_err(|e| Error::Internal(e.to_string()))?,
            explained_variance: ev.data,
        })
    }
}

/// Project the test (or training) scalograms of wavelet `i` with a frozen map.
pub fn apply_pca_map(
    stack: &ScalogramStack,
    wavelet: usize,
    map: &PcaMap,
) -> Result<AggregatedScalogram> {
    require_normalized(stack)?;
    let data = concat_slices(stack, wavelet);
    Ok(AggregatedScalogram {
        data: map.project(data.view())?,
        method: MappingMethod::Pca,
    })
}

/// `max(2, ⌊D/p⌋)`: upper bound on dimensions averaged per frequency.
pub fn lhs_count(dims: usize, p: usize) -> usize {
    (dims / p.max(1)).max(2)
}

fn wavelet_rng(seed: u64, wavelet: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(wavelet as u64);
    rng
}

fn permutation(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    for k in (1..len).rev() {
        let j = rng.gen_range(0..=k);
        perm.swap(k, j);
    }
    perm
}

/// Latin-hypercube sample of `n_lhs·Ω` points in `[0, Ω] × [0, D]`.
///
/// Draw order (fixed, so traces are reproducible): a Fisher–Yates permutation
/// of the frequency strata, then one of the dimension strata, then for every
/// sample `k` a uniform offset along frequency followed by one along dimension.
pub fn lhs_points(
    dims: usize,
    freqs: usize,
    n_lhs: usize,
    seed: u64,
    wavelet: usize,
) -> Vec<(f64, f64)> {
    let total = n_lhs * freqs;
    let mut rng = wavelet_rng(seed, wavelet);
    let perm_freq = permutation(total, &mut rng);
    let perm_dim = permutation(total, &mut rng);
    let freq_width = freqs as f64 / total as f64;
    let dim_width = dims as f64 / total as f64;
    (0..total)
        .map(|k| {
            let u: f64 = rng.gen();
            let v: f64 = rng.gen();
            (
                (perm_freq[k] as f64 + u) * freq_width,
                (perm_dim[k] as f64 + v) * dim_width,
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RandomMatrix {
    /// Binary selection tensor, shape `I × D × Ω`.
    pub gamma: Array3<u8>,
    pub seed: u64,
    pub p: usize,
    pub n_lhs: usize,
}

#[derive(Serialize, Deserialize)]
struct RandomMatrixMeta {
    seed: u64,
    p: usize,
    n_lhs: usize,
    shape: [usize; 3],
}

/// Generate the binary selection tensor: `γ[i, d, ω] = 1` iff at least one LHS
/// sample of wavelet `i` falls in cell `(ω, d)`.
pub fn generate_random_matrix(
    wavelets: usize,
    dims: usize,
    freqs: usize,
    p: usize,
    seed: u64,
) -> Result<RandomMatrix> {
    if dims == 0 || freqs == 0 || p == 0 || wavelets == 0 {
        return Err(Error::InvalidParameter(format!(
            "random matrix needs I, D, Omega, p >= 1 (got {wavelets}, {dims}, {freqs}, {p})"
        )));
    }
    let n_lhs = lhs_count(dims, p);
    let mut gamma = Array3::<u8>::zeros((wavelets, dims, freqs));
    for i in 0..wavelets {
        for (w, d) in lhs_points(dims, freqs, n_lhs, seed, i) {
            let w = (w.floor() as usize).min(freqs - 1);
            let d = (d.floor() as usize).min(dims - 1);
            gamma[[i, d, w]] = 1;
        }
    }
    Ok(RandomMatrix {
        gamma,
        seed,
        p,
        n_lhs,
    })
}

impl RandomMatrix {
    pub fn column_sum(&self, wavelet: usize, freq: usize) -> usize {
        self.gamma
            .slice(s![wavelet, .., freq])
            .iter()
            .map(|&g| g as usize)
            .sum()
    }

    pub fn save(&self, dir: &Path, prefix: &str) -> Result<()> {
        let (i, d, w) = self.gamma.dim();
        let flat = self.gamma.as_standard_layout().to_owned();
        npy::write_u8(
            dir.join(format!("{prefix}_gamma.npy")),
            &[i, d, w],
            flat.as_slice().unwrap(),
        )?;
        let meta = RandomMatrixMeta {
            seed: self.seed,
            p: self.p,
            n_lhs: self.n_lhs,
            shape: [i, d, w],
        };
        npy::write_atomic(
            &dir.join(format!("{prefix}_gamma.json")),
            serde_json::to_string_pretty(&meta)?.as_bytes(),
        )
    }

    pub fn load(dir: &Path, prefix: &str) -> Result<Self> {
        let path = dir.join(format!("{prefix}_gamma.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: RandomMatrixMeta = serde_json::from_str(&text)?;
        let arr = npy::read(dir.join(format!("{prefix}_gamma.npy")))?;
        if arr.shape != meta.shape {
            return Err(Error::Npy(format!(
                "gamma shape {:?} disagrees with metadata {:?}",
                arr.shape, meta.shape
            )));
        }
        let gamma = Array3::from_shape_vec(
            (meta.shape[0], meta.shape[1], meta.shape[2]),
            arr.data.iter().map(|&v| v as u8).collect(),
        )
        .map_err(|e| Error::Internal(e.to_string()))?;
        Ok(Self {
            gamma,
            seed: meta.seed,
            p: meta.p,
            n_lhs: meta.n_lhs,
        })
    }
}

/// Per `(i, t, ω)`, average the normalized values of the dimensions selected by `γ`.
pub fn apply_random_map(
    stack: &ScalogramStack,
    matrix: &RandomMatrix,
) -> Result<Vec<AggregatedScalogram>> {
    require_normalized(stack)?;
    let (wavelets, dims, freqs) = matrix.gamma.dim();
    if wavelets != stack.wavelet_count() || dims != stack.dims() || freqs != stack.frequency_count()
    {
        return Err(Error::DimensionMismatch {
            context: format!(
                "random matrix {:?} vs scalogram stack ({}, {}, {})",
                matrix.gamma.dim(),
                stack.wavelet_count(),
                stack.dims(),
                stack.frequency_count()
            ),
            expected: wavelets * dims * freqs,
            found: stack.wavelet_count() * stack.dims() * stack.frequency_count(),
        });
    }

    (0..wavelets)
        .map(|i| {
            let counts: Vec<usize> = (0..freqs).map(|w| matrix.column_sum(i, w)).collect();
            if let Some(w) = counts.iter().position(|&c| c == 0) {
                return Err(Error::Internal(format!(
                    "random matrix column (wavelet {i}, frequency {w}) selects no dimension"
                )));
            }
            let mut sum = Array2::<f64>::zeros((stack.len(), freqs));
            for d in 0..dims {
                let slice = stack.slice(i, d);
                let mask = matrix.gamma.slice(s![i, d, ..]);
                for (mut row, src) in sum.outer_iter_mut().zip(slice.outer_iter()) {
                    for ((acc, &v), &g) in row.iter_mut().zip(src.iter()).zip(mask.iter()) {
                        if g == 1 {
                            *acc += v;
                        }
                    }
                }
            }
            for mut row in sum.outer_iter_mut() {
                for (acc, &c) in row.iter_mut().zip(&counts) {
                    *acc /= c as f64;
                }
            }
            Ok(AggregatedScalogram {
                data: sum,
                method: MappingMethod::Random,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cwt::{FrequencyGrid, WaveletSpec};
    use ndarray::Array4;

    fn stack_from(data: Array4<f64>) -> ScalogramStack {
        let (i, _, _, w) = data.dim();
        let wavelets = [WaveletSpec::morlet(), WaveletSpec::ricker()][..i].to_vec();
        ScalogramStack::from_parts(data, wavelets, FrequencyGrid::new(256, w).unwrap(), true)
            .unwrap()
    }

    #[test]
    fn lhs_count_formula() {
        assert_eq!(lhs_count(4, 5), 2);
        assert_eq!(lhs_count(20, 5), 4);
        assert_eq!(lhs_count(55, 5), 11);
        assert_eq!(lhs_count(1, 5), 2);
    }

    #[test]
    fn random_map_hand_example() {
        // two frequency columns with the same values; dims 0 and 2 selected
        let mut data = Array4::zeros((1, 3, 1, 2));
        for w in 0..2 {
            data[[0, 0, 0, w]] = 0.2;
            data[[0, 1, 0, w]] = -0.4;
            data[[0, 2, 0, w]] = 0.8;
        }
        let stack = stack_from(data);
        let mut gamma = Array3::zeros((1, 3, 2));
        gamma[[0, 0, 0]] = 1;
        gamma[[0, 2, 0]] = 1;
        gamma[[0, 1, 1]] = 1;
        let m = RandomMatrix {
            gamma,
            seed: 0,
            p: 5,
            n_lhs: 2,
        };
        let out = apply_random_map(&stack, &m).unwrap();
        assert!((out[0].data[[0, 0]] - 0.5).abs() < 1e-15);
        assert_eq!(out[0].data[[0, 1]], -0.4);
    }

    #[test]
    fn random_map_identical_slices() {
        let mut data = Array4::zeros((2, 4, 5, 3));
        for ((i, _, t, w), v) in data.indexed_iter_mut() {
            *v = ((i * 7 + t * 3 + w) % 5) as f64 / 5.0 - 0.4;
        }
        let stack = stack_from(data.clone());
        let m = generate_random_matrix(2, 4, 3, 5, 11).unwrap();
        let out = apply_random_map(&stack, &m).unwrap();
        for i in 0..2 {
            for t in 0..5 {
                for w in 0..3 {
                    assert!((out[i].data[[t, w]] - data[[i, 0, t, w]]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn single_dimension_selects_everything() {
        let m = generate_random_matrix(2, 1, 16, 5, 3).unwrap();
        assert!(m.gamma.iter().all(|&g| g == 1));
    }

    #[test]
    fn random_map_rejects_empty_column() {
        let stack = stack_from(Array4::zeros((1, 2, 3, 2)));
        let m = RandomMatrix {
            gamma: Array3::zeros((1, 2, 2)),
            seed: 0,
            p: 5,
            n_lhs: 2,
        };
        assert!(matches!(
            apply_random_map(&stack, &m).unwrap_err(),
            Error::Internal(_)
        ));
    }

    #[test]
    fn pca_rank_one() {
        let mut data = Array4::zeros((1, 2, 40, 4));
        let base = [0.3, -0.1, 0.5, 0.2, 0.9, -0.7, 0.05, 0.4];
        for t in 0..40 {
            let c = (t as f64 * 0.37).sin();
            for d in 0..2 {
                for w in 0..4 {
                    data[[0, d, t, w]] = c * base[d * 4 + w];
                }
            }
        }
        let stack = stack_from(data);
        let map = fit_pca_map(&stack, 0, 3).unwrap();
        assert!(map.explained_variance[0] > 0.0);
        assert!(map.explained_variance[1..].iter().all(|&v| v <= 1e-10));
    }

    #[test]
    fn pca_mean_row_projects_to_zero() {
        let mut data = Array4::zeros((1, 1, 30, 4));
        for ((_, _, t, w), v) in data.indexed_iter_mut() {
            *v = ((t * 13 + w * 7) % 11) as f64 / 11.0;
        }
        let stack = stack_from(data);
        let map = fit_pca_map(&stack, 0, 4).unwrap();
        let row = map.mean.clone().insert_axis(Axis(0));
        let out = map.project(row.view()).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn pca_sign_convention() {
        let mut data = Array4::zeros((1, 1, 50, 6));
        for ((_, _, t, w), v) in data.indexed_iter_mut() {
            *v = ((t as f64 + 1.0) * (w as f64 + 0.5)).sin();
        }
        let map = fit_pca_map(&stack_from(data), 0, 6).unwrap();
        for col in map.components.columns() {
            let pivot = col.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn pca_errors() {
        let stack = stack_from(Array4::zeros((1, 1, 10, 4)));
        assert!(matches!(fit_pca_map(&stack, 0, 2).unwrap_err(), Error::Degenerate(_)));
        let mut data = Array4::zeros((1, 1, 10, 4));
        data[[0, 0, 3, 1]] = 1.0;
        let stack = stack_from(data);
        assert!(matches!(fit_pca_map(&stack, 0, 5).unwrap_err(), Error::InvalidParameter(_)));
        let map = fit_pca_map(&stack, 0, 2).unwrap();
        let wrong = Array2::<f64>::zeros((3, 5));
        assert!(map.project(wrong.view()).is_err());
    }

    #[test]
    fn frequency_policy() {
        assert_eq!(pca_frequency_points(256, 4096, 1).unwrap(), 256);
        assert_eq!(pca_frequency_points(256, 1000, 25).unwrap(), 40);
        assert!(pca_frequency_points(256, 30, 25).is_err());
        assert_eq!(pca_output_width(256, 25, 40, 1000), 256);
        assert_eq!(pca_output_width(256, 2, 40, 1000), 80);
    }

    #[test]
    fn unnormalized_stack_rejected() {
        let g = FrequencyGrid::new(8, 2).unwrap();
        let s = ScalogramStack::from_parts(Array4::zeros((1, 1, 4, 2)), vec![WaveletSpec::ricker()], g, false)
            .unwrap();
        assert!(fit_pca_map(&s, 0, 1).is_err());
        let m = generate_random_matrix(1, 1, 2, 5, 0).unwrap();
        assert!(apply_random_map(&s, &m).is_err());
    }
}
