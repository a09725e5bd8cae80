//! Confidence thresholding of pseudo-labels.
//!
//! In class-balanced mode each class gets its own cutoff, scaled between
//! `tau_min` (rare classes) and `tau_max` (the most frequent class) by how
//! often the class occurs relative to the majority class.

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ClassId, LabelArray, IGNORE_ID};
use crate::scalar::Scalar;

pub const DEFAULT_TAU_MIN: f64 = 0.8;
pub const DEFAULT_TAU_MAX: f64 = 0.95;

/// Per-class occurrence counts over a label corpus.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassHistogram {
    counts: Vec<u64>,
}

impl ClassHistogram {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            counts: vec![0; num_classes],
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// Adds one label array.
    pub fn accumulate(&mut self, labels: &LabelArray) -> Result<()> {
        labels.validate(self.counts.len())?;
        for &l in labels.iter() {
            self.counts[l as usize] += 1;
        }
        Ok(())
    }

    /// Largest count over non-ignored classes.
    pub fn max_count(&self) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != IGNORE_ID as usize)
            .map(|(_, &n)| n)
            .max()
            .unwrap_or(0)
    }

    pub fn merge(&mut self, other: &ClassHistogram) -> Result<()> {
        if other.counts.len() != self.counts.len() {
            return Err(Error::DimMismatch(format!(
                "histograms have {} and {} classes",
                self.counts.len(),
                other.counts.len()
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

impl Add for ClassHistogram {
    type Output = Result<ClassHistogram>;

    fn add(mut self, rhs: Self) -> Result<ClassHistogram> {
        self.merge(&rhs)?;
        Ok(self)
    }
}

/// Counts labels across a corpus of label arrays.
pub fn histogram<'a>(corpus: impl IntoIterator<Item = &'a LabelArray>, num_classes: usize) -> Result<ClassHistogram> {
    let mut h = ClassHistogram::zeros(num_classes);
    for labels in corpus {
        h.accumulate(labels)?;
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// One cutoff, `tau_max`, for every class.
    Static,
    #[default]
    ClassBalanced,
    /// Keep every label.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub mode: ThresholdMode,
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            mode: ThresholdMode::ClassBalanced,
            tau_min: DEFAULT_TAU_MIN,
            tau_max: DEFAULT_TAU_MAX,
        }
    }
}

impl ThresholdConfig {
    pub fn class_balanced(tau_min: f64, tau_max: f64) -> Result<Self> {
        let cfg = Self {
            mode: ThresholdMode::ClassBalanced,
            tau_min,
            tau_max,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Static cutoff `tau` (stored as `tau_max`, with `tau_min = tau`).
    pub fn fixed(tau: f64) -> Result<Self> {
        let cfg = Self {
            mode: ThresholdMode::Static,
            tau_min: tau,
            tau_max: tau,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `0 ≤ tau_min ≤ tau_max ≤ 1`.
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.tau_min) && (0.0..=1.0).contains(&self.tau_max) && self.tau_min <= self.tau_max;
        if !ok {
            return Err(Error::Config(format!(
                "thresholds must satisfy 0 <= tau_min ({}) <= tau_max ({}) <= 1",
                self.tau_min, self.tau_max
            )));
        }
        Ok(())
    }
}

/// Class-balanced cutoffs:
/// `tau(i) = count_i / max_count · (tau_max − tau_min) + tau_min`.
///
/// The majority class gets exactly `tau_max` and absent classes exactly
/// `tau_min`. The ignore class is left out of `max_count`.
pub fn class_thresholds<T: Scalar>(hist: &ClassHistogram, cfg: &ThresholdConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    let max = hist.max_count();
    if max == 0 {
        return Err(Error::EmptyHistogram);
    }
    let lo = T::lit(cfg.tau_min);
    let hi = T::lit(cfg.tau_max);
    let span = hi - lo;
    let max_t = T::from_u64(max).unwrap();
    Ok(hist
        .counts()
        .iter()
        .map(|&n| {
            if n >= max {
                hi
            } else {
                let ratio = T::from_u64(n).unwrap() / max_t;
                (ratio * span + lo).max(lo).min(hi)
            }
        })
        .collect())
}

/// Every class gets `tau_max`.
pub fn static_thresholds<T: Scalar>(cfg: &ThresholdConfig, num_classes: usize) -> Result<Vec<T>> {
    cfg.validate()?;
    Ok(vec![T::lit(cfg.tau_max); num_classes])
}

/// Cutoffs for whichever mode `cfg` selects. `Off` yields all zeros.
pub fn thresholds_for<T: Scalar>(cfg: &ThresholdConfig, hist: &ClassHistogram) -> Result<Vec<T>> {
    match cfg.mode {
        ThresholdMode::Static => static_thresholds(cfg, hist.num_classes()),
        ThresholdMode::ClassBalanced => class_thresholds(hist, cfg),
        ThresholdMode::Off => Ok(vec![T::zero(); hist.num_classes()]),
    }
}

/// Removed and eligible point counts of one thresholding pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Reduction {
    pub removed: u64,
    /// Points that carried a pseudo-label before thresholding.
    pub labeled: u64,
}

impl Reduction {
    pub fn fraction(&self) -> f64 {
        if self.labeled == 0 {
            0.0
        } else {
            self.removed as f64 / self.labeled as f64
        }
    }
}

impl Add for Reduction {
    type Output = Reduction;
    fn add(self, rhs: Self) -> Self {
        Reduction {
            removed: self.removed + rhs.removed,
            labeled: self.labeled + rhs.labeled,
        }
    }
}

impl std::iter::Sum for Reduction {
    fn sum<I: Iterator<Item = Reduction>>(iter: I) -> Self {
        iter.fold(Reduction::default(), Add::add)
    }
}

/// Sets labels whose confidence is strictly below their class cutoff to
/// `IGNORE_ID`. Ties are kept.
pub fn apply_threshold<T: Scalar>(
    labels: &LabelArray,
    confidences: &[T],
    thresholds: &[T],
) -> Result<(LabelArray, Reduction)> {
    if labels.len() != confidences.len() {
        return Err(Error::SizeMismatch {
            expected: labels.len(),
            found: confidences.len(),
        });
    }
    labels.validate(thresholds.len())?;
    let mut removed = 0u64;
    let out: Vec<ClassId> = labels
        .iter()
        .zip(confidences)
        .map(|(&l, &conf)| {
            if l != IGNORE_ID && conf < thresholds[l as usize] {
                removed += 1;
                IGNORE_ID
            } else {
                l
            }
        })
        .collect();
    let reduction = Reduction {
        removed,
        labeled: labels.labeled_count() as u64,
    };
    Ok((LabelArray::new(out), reduction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: ClassId = 1;
    const B: ClassId = 2;

    #[test]
    fn histogram_cases() {
        assert_eq!(histogram(std::iter::empty(), 3).unwrap().counts(), &[0, 0, 0]);
        let l = LabelArray::new(vec![1, 1, 2]);
        assert_eq!(histogram([&l], 3).unwrap().counts(), &[0, 2, 1]);
        let m = LabelArray::new(vec![2, 0]);
        let joined = LabelArray::new(vec![1, 1, 2, 2, 0]);
        let sum = (histogram([&l], 3).unwrap() + histogram([&m], 3).unwrap()).unwrap();
        assert_eq!(histogram([&joined], 3).unwrap(), sum);
        assert!(matches!(histogram([&l], 2), Err(Error::UnknownClass { .. })));
    }

    #[test]
    fn ignore_excluded_from_max() {
        let h = ClassHistogram::from_counts(vec![1000, 100, 50]);
        let cfg = ThresholdConfig::class_balanced(0.5, 0.95).unwrap();
        let t: Vec<f64> = class_thresholds(&h, &cfg).unwrap();
        assert_eq!(t[1], 0.95);
        assert!((t[2] - 0.725).abs() < 1e-15);
    }

    #[test]
    fn endpoints_exact() {
        let h = ClassHistogram::from_counts(vec![0, 7, 0, 3]);
        let cfg = ThresholdConfig::class_balanced(0.8, 0.95).unwrap();
        let t: Vec<f64> = class_thresholds(&h, &cfg).unwrap();
        assert_eq!(t[1], 0.95);
        assert_eq!(t[2], 0.8);
        assert!(matches!(
            class_thresholds::<f64>(&ClassHistogram::from_counts(vec![9, 0]), &cfg),
            Err(Error::EmptyHistogram)
        ));
    }

    #[test]
    fn apply_cases() {
        let (l, r) = apply_threshold(&LabelArray::new(vec![A, B]), &[0.9f64, 0.6], &[0.0, 0.95, 0.5]).unwrap();
        assert_eq!(l.as_slice(), &[IGNORE_ID, B]);
        assert_eq!(r.fraction(), 0.5);

        let (_, r) = apply_threshold(&LabelArray::new(vec![A, B]), &[1.0f64, 1.0], &[0.0, 0.95, 0.95]).unwrap();
        assert_eq!(r.removed, 0);

        // equal to the cutoff is kept
        let (l, _) = apply_threshold(&LabelArray::new(vec![A]), &[0.9f64], &[0.0, 0.9]).unwrap();
        assert_eq!(l.as_slice(), &[A]);

        assert!(matches!(
            apply_threshold(&LabelArray::new(vec![A]), &[0.9f64, 0.1], &[0.0, 0.9]),
            Err(Error::SizeMismatch { .. })
        ));
        let (_, r) = apply_threshold::<f64>(&LabelArray::ignored(3), &[0.0; 3], &[0.5]).unwrap();
        assert_eq!((r.labeled, r.fraction()), (0, 0.0));
    }

    #[test]
    fn static_mode() {
        let zero = ThresholdConfig::fixed(0.0).unwrap();
        let t: Vec<f64> = static_thresholds(&zero, 3).unwrap();
        let (_, r) = apply_threshold(&LabelArray::new(vec![1, 2, 1]), &[0.0, 0.1, 0.2], &t).unwrap();
        assert_eq!(r.removed, 0);

        let h = ClassHistogram::from_counts(vec![3, 10, 2, 0]);
        let s: Vec<f64> = static_thresholds(&ThresholdConfig::fixed(0.9).unwrap(), 4).unwrap();
        let cb: Vec<f64> = class_thresholds(&h, &ThresholdConfig::class_balanced(0.9, 0.9).unwrap()).unwrap();
        assert_eq!(s, cb);

        for tau in [0.80, 0.85, 0.90, 0.95] {
            assert!(ThresholdConfig::fixed(tau).is_ok());
        }
        assert!(ThresholdConfig::class_balanced(0.9, 0.8).is_err());
        assert!(ThresholdConfig::fixed(1.01).is_err());
    }

    fn arb_hist() -> impl Strategy<Value = ClassHistogram> {
        prop::collection::vec(0u64..10_000, 2..12)
            .prop_filter("needs a non-ignored count", |c| c[1..].iter().any(|&n| n > 0))
            .prop_map(ClassHistogram::from_counts)
    }

    fn arb_taus() -> impl Strategy<Value = (f64, f64)> {
        (0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
    }

    proptest! {
        #[test]
        fn thresholds_bounded_and_monotone(h in arb_hist(), (lo, hi) in arb_taus()) {
            let cfg = ThresholdConfig::class_balanced(lo, hi).unwrap();
            let t: Vec<f64> = class_thresholds(&h, &cfg).unwrap();
            for (i, &ti) in t.iter().enumerate() {
                prop_assert!(ti >= lo && ti <= hi);
                for (j, &tj) in t.iter().enumerate() {
                    if h.counts()[i] <= h.counts()[j] {
                        prop_assert!(ti <= tj);
                    }
                }
            }
        }

        #[test]
        fn raising_tau_min_never_removes_less(
            h in arb_hist(),
            tau_max in 0.5f64..=1.0,
            a in 0.0f64..=1.0,
            b in 0.0f64..=1.0,
            pts in prop::collection::vec((0usize..12, 0.0f64..=1.0), 0..200),
        ) {
            let c = h.num_classes();
            let labels: LabelArray = pts.iter().map(|&(l, _)| (l % c) as ClassId).collect();
            let conf: Vec<f64> = pts.iter().map(|&(_, p)| p).collect();
            let (lo1, lo2) = if a <= b { (a * tau_max, b * tau_max) } else { (b * tau_max, a * tau_max) };
            let t1: Vec<f64> = class_thresholds(&h, &ThresholdConfig::class_balanced(lo1, tau_max).unwrap()).unwrap();
            let t2: Vec<f64> = class_thresholds(&h, &ThresholdConfig::class_balanced(lo2, tau_max).unwrap()).unwrap();
            let (out1, r1) = apply_threshold(&labels, &conf, &t1).unwrap();
            let (_, r2) = apply_threshold(&labels, &conf, &t2).unwrap();
            prop_assert!(r1.fraction() <= r2.fraction());
            // idempotence
            let (again, r) = apply_threshold(&out1, &conf, &t1).unwrap();
            prop_assert_eq!(again, out1);
            prop_assert_eq!(r.removed, 0);
        }
    }
}
