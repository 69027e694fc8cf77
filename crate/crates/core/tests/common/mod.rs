//! Independent reference implementations used by the integration and
//! acceptance tests. Everything here is deliberately naive.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavetile::series::MultivariateSeries;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- wavelets

/// Complex Morlet written out from its closed form.
pub fn morlet(u: f64, bandwidth: f64, center: f64) -> (f64, f64) {
    let env = (-u * u / bandwidth).exp() / (PI * bandwidth).sqrt();
    (env * (2.0 * PI * center * u).cos(), env * (2.0 * PI * center * u).sin())
}

pub fn ricker(u: f64) -> f64 {
    2.0 / (3.0f64.sqrt() * PI.powf(0.25)) * (1.0 - u * u) * (-u * u / 2.0).exp()
}

/// `Σ_τ y[τ] conj(ψ((τ − t)/a)) / √a` over the full series, no truncation,
/// no FFT. Returns (re, im).
pub fn direct_cwt_point(y: &[f64], t: usize, scale: f64, complex_morlet: bool) -> (f64, f64) {
    let norm = 1.0 / scale.sqrt();
    let mut re = 0.0;
    let mut im = 0.0;
    for (tau, &v) in y.iter().enumerate() {
        let u = (tau as f64 - t as f64) / scale;
        if complex_morlet {
            let (pr, pi) = morlet(u, 1.5, 1.0);
            // conj(ψ) = pr - i·pi
            re += v * pr * norm;
            im -= v * pi * norm;
        } else {
            re += v * ricker(u) * norm;
        }
    }
    (re, im)
}

pub fn random_series(rng: &mut impl Rng, dims: usize, len: usize) -> MultivariateSeries {
    let values = ndarray::Array2::from_shape_fn((dims, len), |_| rng.gen_range(-1.0..1.0));
    MultivariateSeries::new(values, "random").unwrap()
}

// ---------------------------------------------------------------- linear algebra

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major, n × n).
/// Returns eigenvalues and column eigenvectors, unsorted.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// Sample covariance (denominator rows − 1) of a row-major `rows × cols` matrix.
pub fn covariance(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            mean[c] += x[r * cols + c];
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut cov = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            let mut s = 0.0;
            for r in 0..rows {
                s += (x[r * cols + i] - mean[i]) * (x[r * cols + j] - mean[j]);
            }
            cov[i * cols + j] = s / (rows - 1) as f64;
        }
    }
    cov
}

// ---------------------------------------------------------------- nearest neighbours

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Reweighted score from scratch: nearest bank row (lowest index on ties),
/// its `b` nearest bank rows by full sort, then the plain softmax weight.
pub fn reweighted_score(bank: &[Vec<f64>], query: &[f64], b: usize) -> f64 {
    let d: Vec<f64> = bank.iter().map(|m| dist(m, query)).collect();
    let mut m_star = 0;
    for j in 0..d.len() {
        if d[j] < d[m_star] {
            m_star = j;
        }
    }
    let s_star = d[m_star];
    let to_m: Vec<f64> = bank.iter().map(|m| dist(m, &bank[m_star])).collect();
    let mut order: Vec<usize> = (0..bank.len()).collect();
    order.sort_by(|&i, &j| to_m[i].partial_cmp(&to_m[j]).unwrap().then(i.cmp(&j)));
    let hood = &order[..b.min(bank.len())];
    if hood.len() == 1 {
        return s_star;
    }
    let denom: f64 = hood.iter().map(|&j| d[j].exp()).sum();
    (1.0 - s_star.exp() / denom) * s_star
}

/// Smallest covering radius over all `k`-subsets (exhaustive).
pub fn optimal_k_center_radius(points: &[Vec<f64>], k: usize) -> f64 {
    fn search(points: &[Vec<f64>], k: usize, from: usize, chosen: &mut Vec<usize>) -> f64 {
        if chosen.len() == k {
            return covering_radius(points, chosen);
        }
        let mut best = f64::INFINITY;
        for c in from..points.len() {
            chosen.push(c);
            best = best.min(search(points, k, c + 1, chosen));
            chosen.pop();
        }
        best
    }
    search(points, k, 0, &mut Vec::new())
}

pub fn covering_radius(points: &[Vec<f64>], centres: &[usize]) -> f64 {
    points
        .iter()
        .map(|p| {
            centres
                .iter()
                .map(|&c| dist(p, &points[c]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- metrics

pub fn pa_oracle(scores: &[f64], labels: &[u8]) -> Vec<f64> {
    (0..scores.len())
        .map(|t| {
            if labels[t] == 0 {
                return scores[t];
            }
            let mut lo = t;
            while lo > 0 && labels[lo - 1] != 0 {
                lo -= 1;
            }
            let mut hi = t;
            while hi + 1 < labels.len() && labels[hi + 1] != 0 {
                hi += 1;
            }
            scores[lo..=hi].iter().copied().fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

pub fn sp_oracle(scores: &[f64], labels: &[u8], n_sp: usize) -> (Vec<f64>, Vec<u8>) {
    let sections = scores.len().div_ceil(n_sp);
    let mut reps = vec![f64::NEG_INFINITY; sections];
    let mut labs = vec![0u8; sections];
    for t in 0..scores.len() {
        let k = t / n_sp;
        reps[k] = reps[k].max(scores[t]);
        labs[k] |= labels[t];
    }
    (reps, labs)
}

/// Confusion counts at threshold δ (predict positive iff score ≥ δ).
pub fn confusion(scores: &[f64], labels: &[u8], delta: f64) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (s, &l) in scores.iter().zip(labels) {
        match (*s >= delta, l != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    (tp, fp, fn_)
}

fn distinct_desc(scores: &[f64]) -> Vec<f64> {
    let mut d = scores.to_vec();
    d.sort_by(|a, b| b.partial_cmp(a).unwrap());
    d.dedup();
    d
}

/// (F1, δ) maximizing F1 over every distinct score; lowest δ on ties.
pub fn best_f1_oracle(scores: &[f64], labels: &[u8]) -> (f64, f64) {
    let mut best = (-1.0, f64::INFINITY);
    for delta in distinct_desc(scores) {
        let (tp, fp, fn_) = confusion(scores, labels, delta);
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        if f1 > best.0 || (f1 == best.0 && delta < best.1) {
            best = (f1, delta);
        }
    }
    best
}

pub fn aucpr_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let pos = labels.iter().filter(|&&l| l != 0).count() as f64;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for delta in distinct_desc(scores) {
        let (tp, fp, _) = confusion(scores, labels, delta);
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / pos;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

/// Pairwise comparison over every (positive, negative) pair, ties ½.
pub fn auroc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        if labels[i] == 0 {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Random scores (some instances heavily tied) with random segment labels
/// that contain at least one positive and one negative.
pub fn random_metric_instance(rng: &mut impl Rng) -> (Vec<f64>, Vec<u8>) {
    let len = rng.gen_range(2..=500);
    let levels = if rng.gen_bool(0.3) { rng.gen_range(2..8) } else { 0 };
    let scores: Vec<f64> = (0..len)
        .map(|_| {
            let v: f64 = rng.gen();
            if levels > 0 {
                (v * levels as f64).floor() / levels as f64
            } else {
                v
            }
        })
        .collect();
    let mut labels = vec![0u8; len];
    let segments = rng.gen_range(1..=4);
    for _ in 0..segments {
        let start = rng.gen_range(0..len);
        let width = rng.gen_range(1..=(len / 4).max(1));
        for l in labels.iter_mut().skip(start).take(width) {
            *l = 1;
        }
    }
    if labels.iter().all(|&l| l == 1) {
        labels[0] = 0;
    }
    if labels.iter().all(|&l| l == 0) {
        labels[len - 1] = 1;
    }
    (scores, labels)
}

// ---------------------------------------------------------------- synthetic series

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Injection {
    FrequencyDoubling,
    AmplitudeStep,
    PhaseJump,
}

impl Injection {
    pub const ALL: [Injection; 3] = [
        Injection::FrequencyDoubling,
        Injection::AmplitudeStep,
        Injection::PhaseJump,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Injection::FrequencyDoubling => "frequency doubling",
            Injection::AmplitudeStep => "amplitude step",
            Injection::PhaseJump => "phase jump",
        }
    }
}

pub const SEGMENT_LEN: usize = 200;

pub struct SyntheticCase {
    pub train: MultivariateSeries,
    pub test: MultivariateSeries,
    pub labels: Vec<u8>,
    pub segment: std::ops::Range<usize>,
}

fn gauss(rng: &mut impl Rng) -> f64 {
    // Box–Muller, enough for test noise
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Noisy sine, period drawn per seed, with one injected anomalous segment
/// of `SEGMENT_LEN` samples placed away from the edges. Inside the segment
/// the frequency doubles, the amplitude halves, or the phase flips by π.
pub fn synthetic_case(kind: Injection, seed: u64, len: usize, window: usize) -> SyntheticCase {
    let mut rng = rng(0xa11ce ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let period: f64 = rng.gen_range(30.0..60.0);
    let noise = 0.05;
    let omega = 2.0 * PI / period;
    let train: Vec<f64> = (0..len)
        .map(|t| (omega * t as f64).sin() + noise * gauss(&mut rng))
        .collect();
    let start = rng.gen_range(window + 200..len - window - 200 - SEGMENT_LEN);
    let end = start + SEGMENT_LEN;
    let phase0: f64 = rng.gen_range(0.0..2.0 * PI);
    let mut phase = phase0;
    let test: Vec<f64> = (0..len)
        .map(|t| {
            let inside = (start..end).contains(&t);
            let step = match (kind, inside) {
                (Injection::FrequencyDoubling, true) => 2.0 * omega,
                _ => omega,
            };
            let value = match (kind, inside) {
                (Injection::AmplitudeStep, true) => 0.5 * phase.sin(),
                (Injection::PhaseJump, true) => (phase + PI).sin(),
                _ => phase.sin(),
            };
            phase += step;
            value + noise * gauss(&mut rng)
        })
        .collect();
    let mut labels = vec![0u8; len];
    labels[start..end].fill(1);
    SyntheticCase {
        train: MultivariateSeries::univariate(train, "train").unwrap(),
        test: MultivariateSeries::univariate(test, "test").unwrap(),
        labels,
        segment: start..end,
    }
}
