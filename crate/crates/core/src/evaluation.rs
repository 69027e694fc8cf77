//! Detection metrics: point adjustment, score partitioning, best-F1 search,
//! average precision, ROC area and the single-segment hit test.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npy;
use crate::series::LabelSeries;

pub const DEFAULT_SECTION: usize = 100;
pub const DEFAULT_UCR_TOLERANCE: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Adjustment {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "PA")]
    PointAdjust,
    /// Point adjustment followed by score partitioning.
    #[serde(rename = "SP")]
    Partition,
}

impl fmt::Display for Adjustment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Adjustment::None => "none",
            Adjustment::PointAdjust => "PA",
            Adjustment::Partition => "SP",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_sp: usize,
    pub adjustments: Vec<Adjustment>,
    pub ucr_tolerance: usize,
    /// Also run the single-segment hit test (labels must hold one segment).
    pub ucr: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_sp: DEFAULT_SECTION,
            adjustments: vec![Adjustment::None, Adjustment::PointAdjust, Adjustment::Partition],
            ucr_tolerance: DEFAULT_UCR_TOLERANCE,
            ucr: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sp == 0 {
            return Err(Error::InvalidParameter("n_sp must be >= 1".into()));
        }
        if self.adjustments.is_empty() {
            return Err(Error::InvalidParameter("no adjustment modes selected".into()));
        }
        Ok(())
    }
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            context: "scores vs labels".into(),
            expected: labels.len(),
            found: scores.len(),
        });
    }
    Ok(())
}

/// Every maximal run of label 1 takes the maximum score of that run.
pub fn point_adjust(scores: &[f64], labels: &[u8]) -> Result<Vec<f64>> {
    check_lengths(scores, labels)?;
    let mut out = scores.to_vec();
    let mut t = 0;
    while t < labels.len() {
        if labels[t] == 0 {
            t += 1;
            continue;
        }
        let start = t;
        while t < labels.len() && labels[t] != 0 {
            t += 1;
        }
        let peak = scores[start..t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out[start..t].fill(peak);
    }
    Ok(out)
}

/// Section maxima over `[k·n_sp, (k+1)·n_sp)`; a section is anomalous if any
/// label inside it is.
pub fn score_partition(scores: &[f64], labels: &[u8], n_sp: usize) -> Result<(Vec<f64>, Vec<u8>)> {
    check_lengths(scores, labels)?;
    if n_sp == 0 {
        return Err(Error::InvalidParameter("n_sp must be >= 1".into()));
    }
    let reps = scores
        .chunks(n_sp)
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let sec = labels
        .chunks(n_sp)
        .map(|c| u8::from(c.iter().any(|&l| l != 0)))
        .collect();
    Ok((reps, sec))
}

/// Precision/recall/F1 when predicting positive for scores `>= threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn positives(labels: &[u8]) -> usize {
    labels.iter().filter(|&&l| l != 0).count()
}

/// One point per distinct score, in decreasing threshold order.
pub fn threshold_sweep(scores: &[f64], labels: &[u8]) -> Result<Vec<SweepPoint>> {
    check_lengths(scores, labels)?;
    let total_pos = positives(labels);
    if total_pos == 0 {
        return Err(Error::Degenerate("no positive labels".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite { dim: 0, step: scores.iter().position(|s| s.is_nan()).unwrap() });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total_pos as f64;
        let f1 = if tp == 0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        points.push(SweepPoint {
            threshold,
            precision,
            recall,
            f1,
        });
    }
    Ok(points)
}

/// Best F1 over all attained thresholds; ties go to the lowest threshold.
pub fn best_f1(scores: &[f64], labels: &[u8]) -> Result<SweepPoint> {
    let sweep = threshold_sweep(scores, labels)?;
    // sweep runs from high to low threshold, so `>=` keeps the lowest on ties
    let mut best = sweep[0];
    for p in &sweep[1..] {
        if p.f1 >= best.f1 {
            best = *p;
        }
    }
    Ok(best)
}

/// Average precision: `Σ (R_k − R_{k−1}) · P_k` over decreasing thresholds.
pub fn aucpr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let sweep = threshold_sweep(scores, labels)?;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for p in sweep {
        area += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    Ok(area)
}

/// Probability that a random positive outscores a random negative, ties ½,
/// computed from midranks.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = positives(labels);
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(
            "ROC area needs at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share the midrank
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            if labels[k] != 0 {
                rank_sum += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Index of the maximum score, earliest on ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if s <= scores[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// True iff the score argmax lies in `[start − tolerance, last + tolerance]`
/// where `segment = start..end` is half-open and `last = end − 1`.
pub fn ucr_correct(scores: &[f64], segment: std::ops::Range<usize>, tolerance: usize) -> bool {
    let Some(peak) = argmax(scores) else {
        return false;
    };
    if segment.is_empty() {
        return false;
    }
    let lo = segment.start.saturating_sub(tolerance);
    let hi = segment.end - 1 + tolerance;
    (lo..=hi).contains(&peak)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeMetrics {
    pub adjustment: Adjustment,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
    pub aucpr: f64,
    /// Absent when the adjusted labels have no negatives.
    pub auroc: Option<f64>,
    #[serde(skip)]
    pub sweep: Vec<SweepPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UcrResult {
    pub segment_start: usize,
    pub segment_end: usize,
    pub argmax: usize,
    pub tolerance: usize,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub n_sp: usize,
    pub modes: Vec<ModeMetrics>,
    pub ucr: Option<UcrResult>,
}

/// Scores and labels after the given adjustment (SP always follows PA).
pub fn adjust(
    scores: &[f64],
    labels: &[u8],
    adjustment: Adjustment,
    n_sp: usize,
) -> Result<(Vec<f64>, Vec<u8>)> {
    match adjustment {
        Adjustment::None => {
            check_lengths(scores, labels)?;
            Ok((scores.to_vec(), labels.to_vec()))
        }
        Adjustment::PointAdjust => Ok((point_adjust(scores, labels)?, labels.to_vec())),
        Adjustment::Partition => score_partition(&point_adjust(scores, labels)?, labels, n_sp),
    }
}

pub fn evaluate(
    name: &str,
    scores: &[f64],
    labels: &LabelSeries,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let labels = labels.as_slice();
    check_lengths(scores, labels)?;
    let mut modes = Vec::with_capacity(config.adjustments.len());
    for &adjustment in &config.adjustments {
        let (s, l) = adjust(scores, labels, adjustment, config.n_sp)?;
        let sweep = threshold_sweep(&s, &l)?;
        let best = best_f1(&s, &l)?;
        let negatives = l.iter().any(|&v| v == 0);
        modes.push(ModeMetrics {
            adjustment,
            f1: best.f1,
            precision: best.precision,
            recall: best.recall,
            threshold: best.threshold,
            aucpr: aucpr(&s, &l)?,
            auroc: if negatives { Some(auroc(&s, &l)?) } else { None },
            sweep,
        });
    }
    let ucr = if config.ucr {
        let segments = LabelSeries::new(labels.to_vec())?.segments();
        let [(start, end)] = segments.as_slice() else {
            return Err(Error::Degenerate(format!(
                "single-segment evaluation needs exactly one anomaly segment, found {}",
                segments.len()
            )));
        };
        let peak = argmax(scores).expect("non-empty scores");
        Some(UcrResult {
            segment_start: *start,
            segment_end: *end,
            argmax: peak,
            tolerance: config.ucr_tolerance,
            correct: ucr_correct(scores, *start..*end, config.ucr_tolerance),
        })
    } else {
        None
    };
    Ok(EvalReport {
        name: name.to_owned(),
        n_sp: config.n_sp,
        modes,
        ucr,
    })
}

impl EvalReport {
    pub fn mode(&self, adjustment: Adjustment) -> Option<&ModeMetrics> {
        self.modes.iter().find(|m| m.adjustment == adjustment)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} (n_sp = {})", self.name, self.n_sp).unwrap();
        writeln!(
            out,
            "{:<6} {:>8} {:>10} {:>8} {:>12} {:>8} {:>8}",
            "mode", "F1*", "precision", "recall", "threshold", "AUCPR", "AUROC"
        )
        .unwrap();
        for m in &self.modes {
            let auroc = m.auroc.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"));
            writeln!(
                out,
                "{:<6} {:>8.4} {:>10.4} {:>8.4} {:>12.6} {:>8.4} {:>8}",
                m.adjustment.to_string(),
                m.f1,
                m.precision,
                m.recall,
                m.threshold,
                m.aucpr,
                auroc
            )
            .unwrap();
        }
        if let Some(u) = &self.ucr {
            writeln!(
                out,
                "argmax {} vs segment [{}, {}) ± {}: {}",
                u.argmax,
                u.segment_start,
                u.segment_end,
                u.tolerance,
                if u.correct { "correct" } else { "miss" }
            )
            .unwrap();
        }
        out
    }

    pub fn sweep_csv(&self) -> String {
        let mut out = String::from("mode,threshold,precision,recall,f1\n");
        for m in &self.modes {
            for p in &m.sweep {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    m.adjustment, p.threshold, p.precision, p.recall, p.f1
                )
                .unwrap();
            }
        }
        out
    }

    /// Writes `report.json`, `report.txt` and `sweep.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        npy::write_atomic(&dir.join("report.json"), self.to_json()?.as_bytes())?;
        npy::write_atomic(&dir.join("report.txt"), self.to_table().as_bytes())?;
        npy::write_atomic(&dir.join("sweep.csv"), self.sweep_csv().as_bytes())
    }
}

/// Unweighted mean of each metric over several subdataset reports.
pub fn mean_report(name: &str, reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Degenerate("no reports to aggregate".into()))?;
    let count = reports.len() as f64;
    let mut modes = Vec::new();
    for m0 in &first.modes {
        let all: Vec<&ModeMetrics> = reports
            .iter()
            .map(|r| {
                r.mode(m0.adjustment).ok_or_else(|| {
                    Error::Degenerate(format!("report {} lacks mode {}", r.name, m0.adjustment))
                })
            })
            .collect::<Result<_>>()?;
        let mean = |f: fn(&ModeMetrics) -> f64| all.iter().map(|m| f(m)).sum::<f64>() / count;
        let aurocs: Option<Vec<f64>> = all.iter().map(|m| m.auroc).collect();
        modes.push(ModeMetrics {
            adjustment: m0.adjustment,
            f1: mean(|m| m.f1),
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            threshold: f64::NAN,
            aucpr: mean(|m| m.aucpr),
            auroc: aurocs.map(|v| v.iter().sum::<f64>() / count),
            sweep: Vec::new(),
        });
    }
    Ok(EvalReport {
        name: name.to_owned(),
        n_sp: first.n_sp,
        modes,
        ucr: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_adjust_examples() {
        assert_eq!(
            point_adjust(&[0.1, 0.9, 0.2, 0.3], &[0, 1, 1, 0]).unwrap(),
            vec![0.1, 0.9, 0.9, 0.3]
        );
        assert_eq!(point_adjust(&[0.4, 0.2], &[0, 0]).unwrap(), vec![0.4, 0.2]);
        assert_eq!(point_adjust(&[0.4, 0.7, 0.2], &[1, 1, 1]).unwrap(), vec![0.7; 3]);
        assert!(point_adjust(&[0.1], &[0, 1]).is_err());
    }

    #[test]
    fn partition_examples() {
        let (r, l) = score_partition(&[1.0, 3.0, 2.0, 5.0], &[0, 0, 1, 0], 2).unwrap();
        assert_eq!(r, vec![3.0, 5.0]);
        assert_eq!(l, vec![0, 1]);
        let (r, l) = score_partition(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0, 0, 0, 0, 1], 2).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!((r[2], l[2]), (5.0, 1));
        let s = [0.3, 0.1, 0.2];
        let lab = [0, 1, 0];
        assert_eq!(score_partition(&s, &lab, 1).unwrap(), (s.to_vec(), lab.to_vec()));
        assert!(score_partition(&s, &lab, 0).is_err());
    }

    #[test]
    fn best_f1_examples() {
        let b = best_f1(&[0.9, 0.1], &[1, 0]).unwrap();
        assert_eq!((b.f1, b.threshold), (1.0, 0.9));
        let b = best_f1(&[0.5, 0.5], &[1, 0]).unwrap();
        assert!((b.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!(best_f1(&[0.5, 0.5], &[0, 0]).is_err());
    }

    #[test]
    fn best_f1_tie_takes_lowest_threshold() {
        // δ=0.8 → P=1, R=1/2, F1=2/3; δ=0.2 → P=1/2, R=1, F1=2/3
        let b = best_f1(&[0.8, 0.2, 0.2, 0.2], &[1, 1, 0, 0]).unwrap();
        assert!((b.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.threshold, 0.2);
    }

    #[test]
    fn area_examples() {
        assert_eq!(aucpr(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert!(auroc(&[0.3, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn ucr_boundaries() {
        let mut s = vec![0.0; 1000];
        s[400] = 1.0;
        assert!(ucr_correct(&s, 500..600, 100));
        assert!(!ucr_correct(&s, 501..600, 100));
        let mut s = vec![0.0; 1000];
        s[699] = 1.0;
        assert!(ucr_correct(&s, 500..600, 100));
        s[699] = 0.0;
        s[700] = 1.0;
        assert!(!ucr_correct(&s, 500..600, 100));
        let flat = vec![0.5; 1000];
        assert_eq!(argmax(&flat), Some(0));
        assert!(ucr_correct(&flat, 50..60, 100));
        assert!(!ucr_correct(&flat, 200..260, 100));
    }

    #[test]
    fn evaluate_report_and_ucr_rejects_multi_segment() {
        let scores = [0.1, 0.2, 0.9, 0.3, 0.1, 0.1];
        let labels = LabelSeries::new(vec![0, 0, 1, 1, 0, 0]).unwrap();
        let cfg = EvalConfig {
            n_sp: 2,
            ucr: true,
            ..Default::default()
        };
        let report = evaluate("toy", &scores, &labels, &cfg).unwrap();
        assert_eq!(report.modes.len(), 3);
        assert!(report.ucr.as_ref().unwrap().correct);
        assert_eq!(report.mode(Adjustment::PointAdjust).unwrap().f1, 1.0);
        assert!(report.to_table().contains("SP"));
        let two = LabelSeries::new(vec![1, 0, 1, 0, 0, 0]).unwrap();
        assert!(evaluate("toy", &scores, &two, &cfg).is_err());
    }
}
