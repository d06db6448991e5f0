//! Hard-count evaluation: confusion matrices, OA / mIoU / SeK / F_scd,
//! from-to transition analysis and report files.

mod confusion;
pub mod report;
mod transition;

pub use confusion::{effective_label, ConfusionMatrix};
pub use transition::TransitionMatrix;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScdError};
use crate::loss::{binary_iou, sek_value, SekConvention, SekFlag, SekValue};

/// Fraction of pixels on the diagonal.
pub fn oa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(ScdError::EmptyMatrix);
    }
    let diag: u64 = (0..cm.n()).map(|k| cm.get(k, k)).sum();
    Ok(diag as f64 / total as f64)
}

/// Mean of no-change and change IoU on the binary collapse.
pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(ScdError::EmptyMatrix);
    }
    let b = cm.binary();
    let (i1, i2) = binary_iou(&b.map(|v| v as f64));
    Ok(0.5 * (i1 + i2))
}

pub fn sek(cm: &ConfusionMatrix, convention: SekConvention) -> Result<SekValue> {
    if cm.total() == 0 {
        return Err(ScdError::EmptyMatrix);
    }
    Ok(sek_value(&cm.as_f64(), cm.n(), convention))
}

/// `(P_scd, R_scd, F_scd)`; zero denominators give 0.
pub fn fscd(cm: &ConfusionMatrix) -> Result<(f64, f64, f64)> {
    if cm.total() == 0 {
        return Err(ScdError::EmptyMatrix);
    }
    let n = cm.n();
    let diag: u64 = (1..n).map(|k| cm.get(k, k)).sum();
    let pred_changed: u64 = (1..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| cm.get(i, j)).sum();
    let gt_changed: u64 = (0..n).flat_map(|i| (1..n).map(move |j| (i, j))).map(|(i, j)| cm.get(i, j)).sum();
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(diag, pred_changed);
    let r = ratio(diag, gt_changed);
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    Ok((p, r, f))
}

/// Correct / total semantic predictions over ground-truth changed pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangedAccuracy {
    pub correct: u64,
    pub total: u64,
}

impl ChangedAccuracy {
    pub fn accumulate(&mut self, pred_sem: &[u8], gt_sem: &[u8], gt_change: &[bool], void: &[bool]) {
        for p in 0..gt_sem.len() {
            if gt_change[p] && !void[p] {
                self.total += 1;
                self.correct += (pred_sem[p] == gt_sem[p]) as u64;
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.correct += other.correct;
        self.total += other.total;
    }

    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Accumulated evaluation state for a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub t1: ConfusionMatrix,
    pub t2: ConfusionMatrix,
    /// 2x2 matrix of the binary change head.
    pub bcd: ConfusionMatrix,
    pub changed_accuracy: ChangedAccuracy,
}

impl Evaluation {
    pub fn new(num_classes: usize) -> Self {
        Self {
            t1: ConfusionMatrix::new(num_classes),
            t2: ConfusionMatrix::new(num_classes),
            bcd: ConfusionMatrix::new(2),
            changed_accuracy: ChangedAccuracy::default(),
        }
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.t1.merge(&other.t1)?;
        self.t2.merge(&other.t2)?;
        self.bcd.merge(&other.bcd)?;
        self.changed_accuracy.merge(&other.changed_accuracy);
        Ok(())
    }

    pub fn summary(&self) -> MetricSummary {
        MetricSummary::from_evaluation(self)
    }
}

/// Headline numbers as fractions in `[0, 1]` (SeK may be negative).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricSummary {
    pub oa: f64,
    pub miou: f64,
    pub sek: f64,
    pub sek_t1: f64,
    pub sek_t2: f64,
    pub precision_scd: f64,
    pub recall_scd: f64,
    pub fscd: f64,
    pub bcd_miou: f64,
    pub changed_accuracy: f64,
    pub pixels: u64,
    pub sek_flags: Vec<String>,
}

impl MetricSummary {
    /// OA, mIoU and F_scd on the summed T1+T2 matrix; SeK averaged per timestamp.
    /// An empty evaluation gives all zeros.
    pub fn from_evaluation(ev: &Evaluation) -> Self {
        let mut sum = ev.t1.clone();
        if sum.merge(&ev.t2).is_err() || sum.total() == 0 {
            return Self::default();
        }
        let s1 = sek(&ev.t1, SekConvention::ZeroNoChange).ok();
        let s2 = sek(&ev.t2, SekConvention::ZeroNoChange).ok();
        let flag_name = |f: SekFlag| match f {
            SekFlag::NoChangedPixels => "no_changed_pixels",
            SekFlag::DegenerateChance => "degenerate_chance",
        };
        let mut sek_flags = Vec::new();
        for (name, s) in [("t1", s1), ("t2", s2)] {
            if let Some(f) = s.and_then(|s| s.flag) {
                sek_flags.push(format!("{name}:{}", flag_name(f)));
            }
        }
        let (sek_t1, sek_t2) = (s1.map_or(0.0, |s| s.sek), s2.map_or(0.0, |s| s.sek));
        let (p, r, f) = fscd(&sum).unwrap_or_default();
        Self {
            oa: oa(&sum).unwrap_or(0.0),
            miou: miou(&sum).unwrap_or(0.0),
            sek: 0.5 * (sek_t1 + sek_t2),
            sek_t1,
            sek_t2,
            precision_scd: p,
            recall_scd: r,
            fscd: f,
            bcd_miou: miou(&ev.bcd).unwrap_or(0.0),
            changed_accuracy: ev.changed_accuracy.value(),
            pixels: ev.t1.total(),
            sek_flags,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q3() -> ConfusionMatrix {
        ConfusionMatrix::from_counts(3, vec![10, 0, 0, 0, 4, 1, 0, 1, 4]).unwrap()
    }

    #[test]
    fn hand_example() {
        let cm = q3();
        assert!((oa(&cm).unwrap() - 0.9).abs() < 1e-15);
        let (p, r, f) = fscd(&cm).unwrap();
        assert!((p - 0.8).abs() < 1e-15 && (r - 0.8).abs() < 1e-15 && (f - 0.8).abs() < 1e-15);
        assert!((sek(&cm, SekConvention::ZeroNoChange).unwrap().sek - 0.6).abs() < 1e-12);
    }

    #[test]
    fn binary_and_diagonal_examples() {
        let b = ConfusionMatrix::from_counts(2, vec![4, 1, 1, 4]).unwrap();
        assert!((miou(&b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let d = ConfusionMatrix::from_counts(3, vec![3, 0, 0, 0, 5, 0, 0, 0, 2]).unwrap();
        assert_eq!(oa(&d).unwrap(), 1.0);
    }

    #[test]
    fn empty_matrix_is_an_error_but_empty_summary_is_zero() {
        let e = ConfusionMatrix::new(3);
        assert!(matches!(oa(&e), Err(ScdError::EmptyMatrix)));
        assert!(fscd(&e).is_err());
        let s = Evaluation::new(3).summary();
        assert_eq!(s, MetricSummary::default());
    }
}
