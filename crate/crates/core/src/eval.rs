//! Confusion matrices and IoU scores.

use std::fmt::Write as _;
use std::ops::Add;

use crate::error::{Error, Result};
use crate::geometry::{LabelArray, IGNORE_ID};
use crate::io::ClassMap;
use crate::projection::FovMask;
use crate::threshold::Reduction;

/// C×C counts, rows ground truth and columns prediction.
///
/// Ground-truth `IGNORE_ID` points are never counted, so row 0 stays empty.
/// A prediction of `IGNORE_ID` lands in column 0 and counts as a miss for
/// the ground-truth class without being a false positive of any class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds every point where `mask` (if any) is set and gt is labeled.
    pub fn accumulate(&mut self, gt: &LabelArray, pred: &LabelArray, mask: Option<&FovMask>) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::SizeMismatch {
                expected: gt.len(),
                found: pred.len(),
            });
        }
        if let Some(m) = mask {
            if m.len() != gt.len() {
                return Err(Error::SizeMismatch {
                    expected: gt.len(),
                    found: m.len(),
                });
            }
        }
        gt.validate(self.num_classes)?;
        pred.validate(self.num_classes)?;
        let c = self.num_classes;
        for (i, (&g, &p)) in gt.iter().zip(pred.iter()).enumerate() {
            if g == IGNORE_ID || mask.is_some_and(|m| !m.get(i)) {
                continue;
            }
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::DimMismatch(format!(
                "confusion matrices have {} and {} classes",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

impl Add for ConfusionMatrix {
    type Output = Result<ConfusionMatrix>;
    fn add(mut self, rhs: Self) -> Result<ConfusionMatrix> {
        self.merge(&rhs)?;
        Ok(self)
    }
}

/// Builds a fresh matrix for one scan.
pub fn accumulate(
    gt: &LabelArray,
    pred: &LabelArray,
    mask: Option<&FovMask>,
    num_classes: usize,
) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::new(num_classes);
    m.accumulate(gt, pred, mask)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    /// `None` for the ignore class and for classes absent from both gt and
    /// prediction.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

/// `IoU_c = TP / (TP + FP + FN)`; mIoU averages the classes that occur.
pub fn iou(m: &ConfusionMatrix) -> Result<IouReport> {
    if m.total() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let c = m.num_classes;
    let ignore = IGNORE_ID as usize;
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            if k == ignore {
                return None;
            }
            let tp = m.get(k, k);
            let fn_: u64 = (0..c).filter(|&p| p != k).map(|p| m.get(k, p)).sum();
            let fp: u64 = (0..c).filter(|&g| g != k).map(|g| m.get(g, k)).sum();
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let miou = present.iter().sum::<f64>() / present.len() as f64;
    Ok(IouReport { per_class, miou })
}

/// Dataset-level summary of many scans.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub matrix: ConfusionMatrix,
    pub iou: IouReport,
    pub reduction: Option<Reduction>,
}

/// Sums the scan matrices before scoring; reductions are pooled so each
/// scan weighs by its labeled point count.
pub fn summarize(matrices: &[ConfusionMatrix], reductions: &[Reduction]) -> Result<EvalSummary> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::EmptyInput("no confusion matrices".into()))?;
    let mut total = ConfusionMatrix::new(first.num_classes);
    for m in matrices {
        total.merge(m)?;
    }
    let iou = iou(&total)?;
    let reduction = (!reductions.is_empty()).then(|| reductions.iter().copied().sum());
    Ok(EvalSummary {
        matrix: total,
        iou,
        reduction,
    })
}

impl EvalSummary {
    /// `class_id,name,iou` rows, then `mIoU,<v>` and, when known,
    /// `point_reduction,<fraction>`.
    pub fn to_csv(&self, classes: Option<&ClassMap>) -> String {
        let mut s = String::from("class_id,name,iou\n");
        for (k, v) in self.iou.per_class.iter().enumerate() {
            if let Some(v) = v {
                let name = classes
                    .and_then(|m| m.name(k as u16))
                    .map_or_else(|| format!("class_{k}"), str::to_string);
                let _ = writeln!(s, "{k},{name},{v:.6}");
            }
        }
        let _ = writeln!(s, "mIoU,{:.6}", self.iou.miou);
        if let Some(r) = self.reduction {
            let _ = writeln!(s, "point_reduction,{:.6}", r.fraction());
        }
        s
    }

    pub fn to_text(&self, classes: Option<&ClassMap>) -> String {
        let mut s = String::new();
        for (k, v) in self.iou.per_class.iter().enumerate() {
            if let Some(v) = v {
                let name = classes.and_then(|m| m.name(k as u16)).unwrap_or("?");
                let _ = writeln!(s, "{k:>4} {name:<16} {:>7.2}", 100.0 * v);
            }
        }
        let _ = writeln!(s, "mIoU {:.2} ({} points)", 100.0 * self.iou.miou, self.matrix.total());
        if let Some(r) = self.reduction {
            let _ = writeln!(s, "point reduction {:.2}% ({} of {})", 100.0 * r.fraction(), r.removed, r.labeled);
        }
        s
    }
}
