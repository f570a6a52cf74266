//! Pixel confusion counts, DICE / JAC / BACC, threshold selection and split reports.
//!
//! Conventions for empty denominators: DICE and JAC are 1 when both masks are
//! empty; a rate whose class is absent (TPR with no positives, TNR with no
//! negatives) counts as 1. Binarization marks a pixel positive iff its
//! probability is `>=` the threshold. Split SD uses the population
//! denominator `n`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Pixelwise counts for two binary masks of equal size.
pub fn confusion(pred: &[bool], gt: &[bool]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::shape("confusion", format!("{} predicted vs {} ground-truth pixels", pred.len(), gt.len())));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Counts for two `{0,1}`-valued maps; any other value is an error.
pub fn confusion_maps(pred: &[f64], gt: &[f64]) -> Result<ConfusionCounts> {
    let binary = |v: &[f64], what: &str| -> Result<Vec<bool>> {
        v.iter()
            .enumerate()
            .map(|(i, &x)| match x {
                x if x == 0.0 => Ok(false),
                x if x == 1.0 => Ok(true),
                _ => Err(Error::InvalidArgument(format!("{what} mask is not binary: value {x} at index {i}"))),
            })
            .collect()
    };
    confusion(&binary(pred, "predicted")?, &binary(gt, "ground-truth")?)
}

pub fn dice(c: &ConfusionCounts) -> f64 {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / den as f64
    }
}

pub fn jac(c: &ConfusionCounts) -> f64 {
    let den = c.tp + c.fp + c.fn_;
    if den == 0 {
        1.0
    } else {
        c.tp as f64 / den as f64
    }
}

pub fn bacc(c: &ConfusionCounts) -> f64 {
    let rate = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let tpr = rate(c.tp, c.tp + c.fn_);
    let tnr = rate(c.tn, c.tn + c.fp);
    (tpr + tnr) / 2.0
}

pub fn binarize(prob: &[f64], threshold: f64) -> Vec<bool> {
    prob.iter().map(|&p| p >= threshold).collect()
}

/// The default sweep `{0.01, 0.02, ..., 0.99}`.
pub fn default_sweep() -> Vec<f64> {
    (1..100).map(|i| f64::from(i) / 100.0).collect()
}

/// Threshold from `sweep` maximizing mean Dice over the set; ties go to the smallest.
pub fn best_threshold(probs: &[&[f64]], gts: &[&[bool]], sweep: &[f64]) -> Result<f64> {
    Ok(best_threshold_with_score(probs, gts, sweep)?.0)
}

/// Like [`best_threshold`], also returning the mean Dice it attains.
pub fn best_threshold_with_score(probs: &[&[f64]], gts: &[&[bool]], sweep: &[f64]) -> Result<(f64, f64)> {
    if probs.is_empty() || sweep.is_empty() {
        return Err(Error::InvalidArgument("best_threshold: empty validation set or sweep".into()));
    }
    if probs.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "best_threshold: {} probability maps vs {} masks",
            probs.len(),
            gts.len()
        )));
    }
    let mut ordered: Vec<f64> = sweep.to_vec();
    ordered.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    for &t in &ordered {
        let mut total = 0.0;
        for (p, g) in probs.iter().zip(gts) {
            total += dice(&confusion(&binarize(p, t), g)?);
        }
        let mean = total / probs.len() as f64;
        if best.map_or(true, |(_, s)| mean > s) {
            best = Some((t, mean));
        }
    }
    Ok(best.expect("non-empty sweep"))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMetrics {
    pub dice: f64,
    pub jac: f64,
    pub bacc: f64,
}

impl SampleMetrics {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        SampleMetrics { dice: dice(c), jac: jac(c), bacc: bacc(c) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> MeanSd {
    if values.is_empty() {
        return MeanSd { mean: f64::NAN, sd: f64::NAN };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanSd { mean, sd: var.sqrt() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub samples: Vec<(String, SampleMetrics)>,
    pub dice: MeanSd,
    pub jac: MeanSd,
    pub bacc: MeanSd,
}

impl MetricReport {
    pub fn from_samples(samples: Vec<(String, SampleMetrics)>) -> Self {
        let col = |f: fn(&SampleMetrics) -> f64| mean_sd(&samples.iter().map(|(_, m)| f(m)).collect::<Vec<_>>());
        MetricReport { dice: col(|m| m.dice), jac: col(|m| m.jac), bacc: col(|m| m.bacc), samples }
    }

    /// `sample_id,dice,jac,bacc` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample_id,dice,jac,bacc\n");
        for (id, m) in &self.samples {
            writeln!(s, "{id},{:.10},{:.10},{:.10}", m.dice, m.jac, m.bacc).unwrap();
        }
        s
    }

    /// Aligned table in percent, ending with the `mean ± sd` summary row.
    pub fn to_text(&self) -> String {
        let width = self.samples.iter().map(|(id, _)| id.len()).max().unwrap_or(0).max(9);
        let mut s = format!("{:<width$}  {:>15}  {:>15}  {:>15}\n", "sample", "DICE (%)", "JAC (%)", "BACC (%)");
        for (id, m) in &self.samples {
            writeln!(s, "{id:<width$}  {:>15.2}  {:>15.2}  {:>15.2}", 100.0 * m.dice, 100.0 * m.jac, 100.0 * m.bacc)
                .unwrap();
        }
        let cell = |m: &MeanSd| format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.sd);
        writeln!(s, "{:<width$}  {:>15}  {:>15}  {:>15}", "mean ± sd", cell(&self.dice), cell(&self.jac), cell(&self.bacc))
            .unwrap();
        s
    }
}

/// Per-sample metrics of `probs >= threshold` against `gts`, plus split statistics.
pub fn evaluate_split(ids: &[String], probs: &[&[f64]], gts: &[&[bool]], threshold: f64) -> Result<MetricReport> {
    if ids.len() != probs.len() || probs.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "evaluate_split: {} ids, {} predictions, {} ground truths",
            ids.len(),
            probs.len(),
            gts.len()
        )));
    }
    let mut samples = Vec::with_capacity(ids.len());
    for ((id, p), g) in ids.iter().zip(probs).zip(gts) {
        let c = confusion(&binarize(p, threshold), g)?;
        samples.push((id.clone(), SampleMetrics::from_counts(&c)));
    }
    Ok(MetricReport::from_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_scores() {
        let c = ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 0 };
        assert_eq!(dice(&c), 2.0 / 3.0);
        assert_eq!(jac(&c), 0.5);
    }

    #[test]
    fn perfect_and_complement() {
        let gt = [true, false, true, false, false];
        let c = confusion(&gt, &gt).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!((dice(&c), jac(&c), bacc(&c)), (1.0, 1.0, 1.0));
        let inv: Vec<bool> = gt.iter().map(|b| !b).collect();
        let c = confusion(&inv, &gt).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn empty_masks_score_one() {
        let c = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 9 };
        assert_eq!((dice(&c), jac(&c), bacc(&c)), (1.0, 1.0, 1.0));
    }

    #[test]
    fn non_binary_map_is_rejected() {
        assert!(confusion_maps(&[0.0, 0.5], &[0.0, 1.0]).is_err());
        assert!(confusion_maps(&[0.0, 1.0], &[0.0, 1.0]).is_ok());
    }

    #[test]
    fn threshold_tie_rules() {
        let gt = [true, false, true, true];
        let prob = [1.0, 0.0, 1.0, 1.0];
        assert_eq!(best_threshold(&[&prob], &[&gt], &default_sweep()).unwrap(), 0.01);
        let ones = [true; 4];
        let half = [0.5; 4];
        assert_eq!(best_threshold(&[&half], &[&ones], &default_sweep()).unwrap(), 0.01);
        assert!(best_threshold(&[], &[], &default_sweep()).is_err());
    }

    #[test]
    fn split_statistics() {
        let m = |d| SampleMetrics { dice: d, jac: 0.5, bacc: 0.5 };
        let r = MetricReport::from_samples(vec![("a".into(), m(0.8)), ("b".into(), m(0.9))]);
        assert!((r.dice.mean - 0.85).abs() < 1e-15);
        assert!((r.dice.sd - 0.05).abs() < 1e-15);
        let one = MetricReport::from_samples(vec![("a".into(), m(0.7))]);
        assert_eq!(one.dice.sd, 0.0);
        assert_eq!(r.to_csv().lines().count(), 3);
    }

    #[test]
    fn evaluate_split_length_mismatch() {
        let p = [0.2, 0.9];
        let g = [false, true];
        assert!(evaluate_split(&["a".into(), "b".into()], &[&p], &[&g], 0.5).is_err());
        let r = evaluate_split(&["a".into()], &[&p], &[&g], 0.5).unwrap();
        assert_eq!(r.samples[0].1.dice, 1.0);
    }
}
