use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};

/// Semantic class id. Only the low 16 bits of a label word carry the class.
pub type ClassId = u16;

/// Label used for points without a (pseudo-)label.
pub const IGNORE_ID: ClassId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub intensity: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T, z: T, intensity: T) -> Self {
        Self { x, y, z, intensity }
    }

    #[inline]
    pub fn xyz(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }

    /// Azimuth in `[0, 2π)`.
    pub fn azimuth(&self) -> T {
        let a = self.y.atan2(self.x);
        if a < T::zero() {
            let wrapped = a + T::TAU();
            // atan2 may return a tiny negative that rounds to exactly 2π
            if wrapped >= T::TAU() {
                T::zero()
            } else {
                wrapped
            }
        } else {
            a
        }
    }

    #[inline]
    pub fn planar_range(&self) -> T {
        self.x.hypot(self.y)
    }
}

/// An ordered set of LiDAR returns in the sensor frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T> {
    points: Vec<Point<T>>,
}

impl<T: Scalar> PointCloud<T> {
    /// Builds a cloud, rejecting non-finite coordinates or intensities.
    pub fn new(points: Vec<Point<T>>) -> Result<Self> {
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self { points: Vec::new() }
    }

    /// Skips validation; callers guarantee finiteness (outputs of finite maps).
    pub(crate) fn from_points_unchecked(points: Vec<Point<T>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point<T>> {
        self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point<T>> {
        self.points.iter()
    }

    /// Applies `f` to every point, keeping order.
    pub fn map_points(&self, f: impl Fn(&Point<T>) -> Point<T>) -> Self {
        Self::from_points_unchecked(self.points.iter().map(f).collect())
    }

    /// Converts to another scalar precision.
    pub fn cast<U: Scalar>(&self) -> PointCloud<U> {
        let conv = |v: T| U::from_f64(v.as_f64()).expect("finite value converts");
        PointCloud::from_points_unchecked(
            self.points
                .iter()
                .map(|p| Point::new(conv(p.x), conv(p.y), conv(p.z), conv(p.intensity)))
                .collect(),
        )
    }
}

impl<T: Scalar> FromIterator<Point<T>> for PointCloud<T> {
    /// Collects without validation; use [`PointCloud::new`] for untrusted data.
    fn from_iter<I: IntoIterator<Item = Point<T>>>(iter: I) -> Self {
        Self::from_points_unchecked(iter.into_iter().collect())
    }
}

/// Per-point semantic labels, `IGNORE_ID` for unlabeled points.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct LabelArray(Vec<ClassId>);

impl LabelArray {
    pub fn new(labels: Vec<ClassId>) -> Self {
        Self(labels)
    }

    pub fn ignored(n: usize) -> Self {
        Self(vec![IGNORE_ID; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[ClassId] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [ClassId] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<ClassId> {
        self.0
    }

    /// Checks every label against a class count `c`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.0.iter().position(|&l| l as usize >= num_classes) {
            Some(index) => Err(Error::UnknownClass {
                class: self.0[index] as u32,
                index,
            }),
            None => Ok(()),
        }
    }

    pub fn labeled_count(&self) -> usize {
        self.0.iter().filter(|&&l| l != IGNORE_ID).count()
    }
}

impl std::ops::Deref for LabelArray {
    type Target = [ClassId];
    fn deref(&self) -> &[ClassId] {
        &self.0
    }
}

impl FromIterator<ClassId> for LabelArray {
    fn from_iter<I: IntoIterator<Item = ClassId>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Tolerance on the row sum of a probability row.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// N×C matrix of per-point class probabilities.
///
/// Rows of points without a prediction (outside every camera view) are
/// flagged as masked and hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct PerPointProbs<T> {
    num_classes: usize,
    data: Vec<T>,
    masked: Vec<bool>,
}

impl<T: Scalar> PerPointProbs<T> {
    /// All rows masked.
    pub fn masked(num_points: usize, num_classes: usize) -> Self {
        Self {
            num_classes,
            data: vec![T::zero(); num_points * num_classes],
            masked: vec![true; num_points],
        }
    }

    /// Builds from row-major data, validating every unmasked row.
    pub fn from_rows(num_classes: usize, data: Vec<T>, masked: Vec<bool>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::DimMismatch("zero classes".into()));
        }
        if data.len() != masked.len() * num_classes {
            return Err(Error::SizeMismatch {
                expected: masked.len() * num_classes,
                found: data.len(),
            });
        }
        let probs = Self {
            num_classes,
            data,
            masked,
        };
        probs.validate()?;
        Ok(probs)
    }

    /// Builds from unmasked row-major data.
    pub fn from_dense(num_classes: usize, data: Vec<T>) -> Result<Self> {
        if num_classes == 0 || !data.len().is_multiple_of(num_classes) {
            return Err(Error::DimMismatch(format!(
                "{} values do not form rows of {num_classes}",
                data.len()
            )));
        }
        let n = data.len() / num_classes;
        Self::from_rows(num_classes, data, vec![false; n])
    }

    pub fn validate(&self) -> Result<()> {
        let tol = T::lit(ROW_SUM_TOLERANCE);
        for i in 0..self.len() {
            let row = self.row(i);
            if self.masked[i] {
                continue;
            }
            if row.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
                return Err(Error::InvalidProbs(format!("row {i} has entries outside [0,1]")));
            }
            let sum: T = row.iter().copied().sum();
            if (sum - T::one()).abs() > tol {
                return Err(Error::InvalidProbs(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.num_classes..(i + 1) * self.num_classes]
    }

    #[inline]
    pub fn is_masked(&self, i: usize) -> bool {
        self.masked[i]
    }

    pub fn mask(&self) -> &[bool] {
        &self.masked
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn set_row(&mut self, i: usize, row: &[T]) {
        let c = self.num_classes;
        self.data[i * c..(i + 1) * c].copy_from_slice(row);
        self.masked[i] = false;
    }

    /// Argmax label per row (lowest id on ties); masked rows get `IGNORE_ID`.
    pub fn argmax_labels(&self) -> LabelArray {
        (0..self.len())
            .map(|i| {
                if self.masked[i] {
                    IGNORE_ID
                } else {
                    argmax(self.row(i)).unwrap_or(0) as ClassId
                }
            })
            .collect()
    }

    /// Maximum probability per row; zero for masked rows.
    pub fn confidences(&self) -> Vec<T> {
        (0..self.len())
            .map(|i| {
                if self.masked[i] {
                    T::zero()
                } else {
                    self.row(i).iter().copied().fold(T::zero(), T::max)
                }
            })
            .collect()
    }

    /// Keeps only the rows whose indices are listed (in that order).
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.num_classes);
        let mut masked = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            masked.push(self.masked[i]);
        }
        Self {
            num_classes: self.num_classes,
            data,
            masked,
        }
    }

    /// Row-major values, with masked rows as zeros, as `f32`.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|v| v.as_f32()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> PerPointProbs<U> {
        PerPointProbs {
            num_classes: self.num_classes,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            masked: self.masked.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_points() {
        let pts = vec![Point::new(0.0f32, 0.0, 0.0, 0.0), Point::new(f32::NAN, 0.0, 0.0, 0.0)];
        assert!(matches!(PointCloud::new(pts), Err(Error::NonFinite { index: 1 })));
    }

    #[test]
    fn azimuth_range() {
        let p = Point::new(0.0f64, -1.0, 0.0, 0.0);
        assert!((p.azimuth() - 1.5 * std::f64::consts::PI).abs() < 1e-12);
        let q = Point::new(1.0f64, -0.0, 0.0, 0.0);
        assert_eq!(q.azimuth(), 0.0);
    }

    #[test]
    fn probs_validation() {
        assert!(PerPointProbs::from_dense(2, vec![0.5f64, 0.5, 0.9, 0.1]).is_ok());
        assert!(PerPointProbs::from_dense(2, vec![0.5f64, 0.6]).is_err());
        assert!(PerPointProbs::from_dense(2, vec![1.5f64, -0.5]).is_err());
        // masked rows are not checked
        let p = PerPointProbs::from_rows(2, vec![0.0f64, 0.0, 0.3, 0.7], vec![true, false]).unwrap();
        assert_eq!(p.argmax_labels().as_slice(), &[0, 1]);
        assert_eq!(p.confidences(), vec![0.0, 0.7]);
    }

    #[test]
    fn label_validation() {
        let l = LabelArray::new(vec![0, 1, 3]);
        assert!(l.validate(4).is_ok());
        assert!(matches!(l.validate(3), Err(Error::UnknownClass { class: 3, index: 2 })));
        assert_eq!(l.labeled_count(), 2);
    }
}
