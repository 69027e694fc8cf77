//! Continuous wavelet transform with the complex Morlet and Ricker mother
//! wavelets, evaluated by FFT convolution against sampled, truncated kernels.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, Array4, ArrayView1, Axis};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npy;
use crate::series::MultivariateSeries;

/// Peak of the Ricker wavelet's Fourier magnitude, `|Ψ(ω)| ∝ ω² exp(-ω²/2)`,
/// attained at `ω = √2` rad/sample, i.e. `√2 / 2π` cycles/sample.
pub const RICKER_CENTRAL_FREQUENCY: f64 = SQRT_2 / (2.0 * PI);

/// Kernels extend this many envelope standard deviations either side of centre.
pub const SUPPORT_SIGMAS: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WaveletSpec {
    /// `ψ(u) = (πB)^{-1/2} exp(-u²/B) exp(2πiCu)`.
    ComplexMorlet { center_frequency: f64, bandwidth: f64 },
    /// `ψ(u) = 2 / (√3 π^{1/4}) (1 - u²) exp(-u²/2)`.
    Ricker,
}

impl WaveletSpec {
    /// Complex Morlet with centre frequency 1.0 and bandwidth 1.5.
    pub fn morlet() -> Self {
        WaveletSpec::ComplexMorlet {
            center_frequency: 1.0,
            bandwidth: 1.5,
        }
    }

    pub fn ricker() -> Self {
        WaveletSpec::Ricker
    }

    pub fn validate(&self) -> Result<()> {
        if let WaveletSpec::ComplexMorlet {
            center_frequency,
            bandwidth,
        } = *self
        {
            if !(center_frequency > 0.0 && bandwidth > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "Morlet parameters must be positive (center {center_frequency}, bandwidth {bandwidth})"
                )));
            }
        }
        Ok(())
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, WaveletSpec::ComplexMorlet { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            WaveletSpec::ComplexMorlet { .. } => "complex_morlet",
            WaveletSpec::Ricker => "ricker",
        }
    }

    /// Centre frequency in cycles per unit of the mother-wavelet argument.
    pub fn central_frequency(&self) -> f64 {
        match *self {
            WaveletSpec::ComplexMorlet {
                center_frequency, ..
            } => center_frequency,
            WaveletSpec::Ricker => RICKER_CENTRAL_FREQUENCY,
        }
    }

    /// Scale whose pseudo-frequency is `freq` cycles/sample.
    pub fn scale_for(&self, freq: f64) -> f64 {
        self.central_frequency() / freq
    }

    /// Standard deviation of the mother wavelet's Gaussian envelope.
    pub fn envelope_sigma(&self) -> f64 {
        match *self {
            WaveletSpec::ComplexMorlet { bandwidth, .. } => (bandwidth / 2.0).sqrt(),
            WaveletSpec::Ricker => 1.0,
        }
    }

    pub fn eval(&self, u: f64) -> Complex<f64> {
        match *self {
            WaveletSpec::ComplexMorlet {
                center_frequency,
                bandwidth,
            } => {
                let env = (-u * u / bandwidth).exp() / (PI * bandwidth).sqrt();
                Complex::from_polar(env, 2.0 * PI * center_frequency * u)
            }
            WaveletSpec::Ricker => {
                let norm = 2.0 / (3.0f64.sqrt() * PI.powf(0.25));
                Complex::new(norm * (1.0 - u * u) * (-u * u / 2.0).exp(), 0.0)
            }
        }
    }

    /// Kernel half-width in samples at scale `a`.
    pub fn half_support(&self, scale: f64) -> usize {
        (SUPPORT_SIGMAS * self.envelope_sigma() * scale).ceil() as usize
    }

    /// Sampled analysis kernel `g[j] = conj(ψ((j - L)/a)) / √a`, `j = 0..=2L`.
    pub fn kernel(&self, scale: f64) -> Vec<Complex<f64>> {
        let half = self.half_support(scale) as isize;
        let norm = scale.sqrt().recip();
        (-half..=half)
            .map(|k| self.eval(k as f64 / scale).conj() * norm)
            .collect()
    }
}

/// Log-uniform pseudo-frequencies from `1/n` to `0.5` cycles/sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    window: usize,
    frequencies: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(window: usize, points: usize) -> Result<Self> {
        if window < 4 {
            return Err(Error::InvalidParameter(format!(
                "window size must be at least 4, got {window}"
            )));
        }
        if points < 2 {
            return Err(Error::InvalidParameter(format!(
                "frequency grid needs at least 2 points, got {points}"
            )));
        }
        let lo = (1.0 / window as f64).ln();
        let hi = 0.5f64.ln();
        let step = (hi - lo) / (points - 1) as f64;
        let mut frequencies: Vec<f64> = (0..points).map(|j| (lo + j as f64 * step).exp()).collect();
        frequencies[0] = 1.0 / window as f64;
        frequencies[points - 1] = 0.5;
        Ok(Self {
            window,
            frequencies,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Index of the grid point closest to `freq` on a log scale.
    pub fn nearest_bin(&self, freq: f64) -> usize {
        let target = freq.ln();
        self.frequencies
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (a.ln() - target)
                    .abs()
                    .total_cmp(&(b.ln() - target).abs())
            })
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(size: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(size), p.plan_fft_inverse(size))
    })
}

fn padded_spectrum(signal: ArrayView1<'_, f64>, size: usize) -> Vec<Complex<f64>> {
    let mut buf = vec![Complex::new(0.0, 0.0); size];
    for (b, &v) in buf.iter_mut().zip(signal.iter()) {
        b.re = v;
    }
    plans(size).0.process(&mut buf);
    buf
}

fn fft_size(len: usize, half: usize) -> usize {
    (len + 2 * half).next_power_of_two()
}

/// Complex coefficients of one signal at one scale, via FFT convolution with
/// zero extension beyond the signal ends.
fn transform_at_scale(
    spectrum: &[Complex<f64>],
    len: usize,
    wavelet: &WaveletSpec,
    scale: f64,
) -> Vec<Complex<f64>> {
    let size = spectrum.len();
    let kernel = wavelet.kernel(scale);
    let half = (kernel.len() - 1) / 2;
    let (forward, inverse) = plans(size);

    // correlation with g == convolution with g reversed
    let mut buf = vec![Complex::new(0.0, 0.0); size];
    for (b, k) in buf.iter_mut().zip(kernel.iter().rev()) {
        *b = *k;
    }
    forward.process(&mut buf);
    for (b, x) in buf.iter_mut().zip(spectrum) {
        *b *= x;
    }
    inverse.process(&mut buf);
    let inv = 1.0 / size as f64;
    buf[half..half + len].iter().map(|c| c * inv).collect()
}

/// Real-valued coefficients of every series dimension on `grid`, shape `D × T × Ω`.
///
/// The complex Morlet slice holds coefficient moduli; the Ricker slice holds
/// signed values.
pub fn cwt(
    series: &MultivariateSeries,
    wavelet: &WaveletSpec,
    grid: &FrequencyGrid,
) -> Result<Array3<f64>> {
    wavelet.validate()?;
    let (dims, len) = (series.dims(), series.len());
    if len < 2 {
        return Err(Error::SeriesTooShort(format!(
            "wavelet transform needs at least 2 samples, got {len}"
        )));
    }
    let scales: Vec<f64> = grid
        .frequencies()
        .iter()
        .map(|&f| wavelet.scale_for(f))
        .collect();

    let mut out = Array3::<f64>::zeros((dims, len, grid.len()));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(d, mut slice)| {
            let signal = series.dimension(d);
            let mut spectra: HashMap<usize, Vec<Complex<f64>>> = HashMap::new();
            for &scale in &scales {
                let size = fft_size(len, wavelet.half_support(scale));
                spectra
                    .entry(size)
                    .or_insert_with(|| padded_spectrum(signal, size));
            }
            let columns: Vec<Vec<f64>> = scales
                .par_iter()
                .map(|&scale| {
                    let size = fft_size(len, wavelet.half_support(scale));
                    let coeffs = transform_at_scale(&spectra[&size], len, wavelet, scale);
                    if wavelet.is_complex() {
                        coeffs.iter().map(|c| c.norm()).collect()
                    } else {
                        coeffs.iter().map(|c| c.re).collect()
                    }
                })
                .collect();
            for (w, col) in columns.iter().enumerate() {
                slice.column_mut(w).assign(&ArrayView1::from(col.as_slice()));
            }
        });
    Ok(out)
}

/// Scalograms indexed `(wavelet i, dimension d, time t, frequency ω)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalogramStack {
    data: Array4<f64>,
    wavelets: Vec<WaveletSpec>,
    grid: FrequencyGrid,
    normalized: bool,
}

impl ScalogramStack {
    /// Transform `series` with each wavelet in turn. The result is not normalized.
    pub fn compute(
        series: &MultivariateSeries,
        wavelets: &[WaveletSpec],
        grid: &FrequencyGrid,
    ) -> Result<Self> {
        if wavelets.is_empty() {
            return Err(Error::InvalidParameter("no wavelets configured".into()));
        }
        let mut data = Array4::zeros((wavelets.len(), series.dims(), series.len(), grid.len()));
        for (i, w) in wavelets.iter().enumerate() {
            let slice = cwt(series, w, grid)?;
            data.slice_mut(s![i, .., .., ..]).assign(&slice);
        }
        Ok(Self {
            data,
            wavelets: wavelets.to_vec(),
            grid: grid.clone(),
            normalized: false,
        })
    }

    pub fn from_parts(
        data: Array4<f64>,
        wavelets: Vec<WaveletSpec>,
        grid: FrequencyGrid,
        normalized: bool,
    ) -> Result<Self> {
        let (i, _, _, w) = data.dim();
        if i != wavelets.len() || w != grid.len() {
            return Err(Error::DimensionMismatch {
                context: "scalogram data vs wavelet/grid metadata".into(),
                expected: wavelets.len() * grid.len(),
                found: i * w,
            });
        }
        Ok(Self {
            data,
            wavelets,
            grid,
            normalized,
        })
    }

    /// Divide every `(i, d)` slice by its maximum absolute value.
    /// All-zero slices stay zero.
    pub fn normalize(mut self) -> Self {
        for mut wavelet_block in self.data.outer_iter_mut() {
            for mut slice in wavelet_block.outer_iter_mut() {
                let peak = slice.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if peak > 0.0 {
                    slice.mapv_inplace(|v| v / peak);
                }
            }
        }
        self.normalized = true;
        self
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn wavelets(&self) -> &[WaveletSpec] {
        &self.wavelets
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn wavelet_count(&self) -> usize {
        self.data.dim().0
    }

    pub fn dims(&self) -> usize {
        self.data.dim().1
    }

    pub fn len(&self) -> usize {
        self.data.dim().2
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frequency_count(&self) -> usize {
        self.data.dim().3
    }

    /// The `T × Ω` scalogram for wavelet `i`, dimension `d`.
    pub fn slice(&self, i: usize, d: usize) -> ndarray::ArrayView2<'_, f64> {
        self.data.slice(s![i, d, .., ..])
    }

    /// Write one NPY file per `(i, d)` slice plus `grid.json` with the frequencies.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, w) in self.wavelets.iter().enumerate() {
            for d in 0..self.dims() {
                let slice: Array2<f64> = self.slice(i, d).to_owned();
                let path = dir.join(format!("scalogram_{}_{d}.npy", w.name()));
                npy::write_f64(path, &[self.len(), self.frequency_count()], slice.as_slice().unwrap())?;
            }
        }
        let sidecar = serde_json::json!({
            "window": self.grid.window(),
            "frequencies": self.grid.frequencies(),
            "wavelets": self.wavelets,
            "normalized": self.normalized,
        });
        npy::write_atomic(
            &dir.join("grid.json"),
            serde_json::to_string_pretty(&sidecar)?.as_bytes(),
        )
    }
}
